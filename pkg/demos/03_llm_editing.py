"""
Accent editing through a chat model
===================================

The prompt carries ranked in-context pairs and the change rate they show.
Whatever comes back is checked against the source before it is used.
Everything below runs offline with the mock and scripted backends; set
EDITOR_BASE_URL and EDITOR_MODEL to try a real endpoint at the end.
"""
import os

from accentkit.llmedit import (ChatBackend, IclExample, PromptSpec, ScriptedBackend,
                               build_prompt, edit_with_llm, mock_backend,
                               select_icl_examples, validate_response)
from accentkit.seqcore import parse_sequence, serialize_sequence

pairs = [
    ("W IH1 L | d:10,7,7 | p:5.3,5.3,5.2 | e:0.8,3.6,3.1",
     "V IH1 L | d:10,7,7 | p:5.3,5.6,4.9 | e:0.8,3.6,3.1"),
    ("DH AH0 | d:4,6 | p:5.0,5.1 | e:1.2,2.0",
     "D AH0 | d:4,6 | p:5.0,5.1 | e:1.2,2.0"),
    ("TH IH1 NG K | d:6,8,5,4 | p:5.2,5.4,5.3,5.1 | e:1.0,3.0,2.0,1.0",
     "T IH1 NG K | d:6,8,5,4 | p:5.0,5.8,5.1,5.3 | e:1.0,3.0,2.0,1.0"),
]
cands = [IclExample(parse_sequence(s), parse_sequence(t)) for s, t in pairs]
for c in cands:
    print(f"ratio {c.pitch_ratio:.2f}  {c.source.symbols} -> {c.target.symbols}")

# targets with livelier pitch than their source rank first
chosen = select_icl_examples(cands, 2)
query = parse_sequence("W EH1 DH ER0 | d:9,8,6,10 | p:5.2,5.4,5.3,5.0 | e:0.9,3.2,1.8,2.2")
spec = PromptSpec(chosen, query, accent_label="Indian English")
print(f"target change rate {spec.target_change_rate:.3f}")
print(build_prompt(spec))

# a rule-based stand-in for the model
backend = mock_backend([("W", "V"), ("DH", "D"), ("TH", "T")], cap_rate=0.5)
resp = edit_with_llm(query, spec, backend)
print(serialize_sequence(resp.edited))
print("\n".join(resp.rationale_lines))

# what the validator says about bad answers
for answer in ["Sure! Here it is: V EH1 D ER0",
               "TARGET: V EH1 DH ER | d:9,8,6,10 | p:5.2,5.4,5.3,5.0 | e:0.9,3.2,1.8,2.2",
               "TARGET: V EH1 DH | d:9,8,6,10 | p:5.2,5.4,5.3,5.0 | e:0.9,3.2,1.8,2.2",
               "TARGET: V EH1 D ER0 | d:9,8,6,10 | p:5.2,5.9,5.3,5.0 | e:0.9,3.2,1.8,2.2",
               "TARGET: V EH1 D ER0 AH0 | d:9,8,6,10,1 | p:5.2,5.4,5.3,5.0,5.0 "
               "| e:0.9,3.2,1.8,2.2,2.2"]:
    print(validate_response(query, answer).describe())

# one bad answer, then a good one: the second attempt is kept
flaky = ScriptedBackend(["no idea",
                         "TARGET: V EH1 D ER0 | d:9,8,6,10 | p:5.2,5.4,5.3,5.0 "
                         "| e:0.9,3.2,1.8,2.2\n# W -> V\n# DH -> D"])
resp = edit_with_llm(query, spec, flaky)
print("attempts", resp.attempts_used, "fallback", resp.fallback)
print(flaky.prompts[1].splitlines()[-2])

# never a good answer: the source comes back unchanged
resp = edit_with_llm(query, spec, ScriptedBackend(["no idea"]), max_retries=2)
print("attempts", resp.attempts_used, "fallback", resp.fallback, resp.edited == query)

if os.environ.get("EDITOR_BASE_URL") and os.environ.get("EDITOR_MODEL"):
    chat = ChatBackend(os.environ["EDITOR_BASE_URL"], os.environ["EDITOR_MODEL"],
                       api_key_env="EDITOR_API_KEY")
    resp = edit_with_llm(query, spec, chat)
    print(serialize_sequence(resp.edited), "fallback" if resp.fallback else "")
