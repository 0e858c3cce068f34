"""Symbolic and signal-processing core of a few-shot accented speech data pipeline.

Aligned phoneme/prosody sequences, constrained pronunciation edits (LLM-driven
and matched-rate random), pitch/energy extraction, evaluation metrics and
experiment planning.
"""
from .seqcore import (INVENTORY, AlignedUtterance, AlignmentError, InvariantViolation,
                      Phoneme, SequenceSyntaxError, UnknownPhoneme, parse_sequence,
                      serialize_sequence, validate_inventory)
from .editops import (Delete, EditScript, Insert, Merge, Split, Substitute, apply_script,
                      change_rate, diff_to_script, random_matched_rate)

__version__ = "0.1.0"
