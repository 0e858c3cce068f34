"""
The accentkit command
=====================

Same steps as the other demos, driven through the CLI the way a batch
script would. Runs in a scratch directory.
"""
import json
import tempfile
from pathlib import Path

from accentkit.cli import main

work = Path(tempfile.mkdtemp())
(work / "src.txt").write_text(
    "will\tW IH1 L | d:10,7,7 | p:5.3,5.3,5.2 | e:0.8,3.6,3.1\n"
    "the\tDH AH0 | d:4,6 | p:5.0,5.1 | e:1.2,2.0\n")
(work / "cfg.json").write_text(json.dumps(
    {"backend": {"kind": "mock", "rules": [["W", "V"], ["DH", "D"]]}, "master_seed": 7}))

# LLM mode with the mock backend
main(["--config", str(work / "cfg.json"), "edit", "--input", str(work / "src.txt"),
      "--mode", "llm", "--out", str(work / "llm.txt")])
print((work / "llm.txt").read_text())
print((work / "llm.scripts").read_text())

# matched-rate random control, seeded
main(["--seed", "7", "edit", "--input", str(work / "src.txt"), "--mode", "random",
      "--rate", "0.35", "--out", str(work / "random.txt")])
print(json.loads((work / "random.stats.json").read_text())["per_utterance_change_rate"])

# oracle mode takes human-labelled phonemes
(work / "pcl.txt").write_text("will\tV IH1 L AH0\nthe\tD AH0\n")
main(["edit", "--input", str(work / "src.txt"), "--mode", "oracle",
      "--pcl", str(work / "pcl.txt"), "--out", str(work / "gt.txt")])
print((work / "gt.txt").read_text())

# WER from transcript files
(work / "ref.txt").write_text("u1\tThe cat sat\n")
(work / "hyp.txt").write_text("u1\tthe cat\n")
main(["eval", "wer", "--ref", str(work / "ref.txt"), "--hyp", str(work / "hyp.txt"),
      "--condition", "adapt_llm", "--speaker", "TNI", "--out", str(work / "wer.csv")])
print((work / "wer.csv").read_text())
