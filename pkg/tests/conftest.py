import random

import pytest

from accentkit.seqcore import AlignedUtterance, all_phonemes

PHONEMES = all_phonemes()
WILL = "W IH1 L | d:10,7,7 | p:5.3,5.3,5.2 | e:0.8,3.6,3.1"


def random_utterance(rng: random.Random, n: int, words: bool = False,
                     decimals: int = 4) -> AlignedUtterance:
    phon = [rng.choice(PHONEMES) for _ in range(n)]
    d = [rng.randint(1, 30) for _ in range(n)]
    p = [round(rng.uniform(4.0, 6.0), decimals) for _ in range(n)]
    e = [round(rng.uniform(0.0, 5.0), decimals) for _ in range(n)]
    wl = None
    if words:
        wl, left = [], n
        while left:
            k = rng.randint(1, left)
            wl.append(k)
            left -= k
    return AlignedUtterance(phon, d, p, e, wl)


@pytest.fixture
def will():
    from accentkit.seqcore import parse_sequence
    return parse_sequence(WILL)


def make_manifest(speaker="TNI", n_pool=15, n_train=120, n_synth=520, n_eval=20,
                  synth_conditions=(None,)):
    """Small clean manifest: distinct ids and texts everywhere."""
    from accentkit.harness import Manifest, ManifestEntry

    def entry(uid, role, **kw):
        return ManifestEntry(uid, speaker, "indian", role, text=f"sentence {uid}", **kw)

    entries = [entry(f"ref{i:02d}", "reference_pool", pool_rank=n_pool - i)
               for i in range(n_pool)]
    entries += [entry(f"tr{i:03d}", "adaptation_train") for i in range(n_train)]
    for cond in synth_conditions:
        tag = cond or "syn"
        entries += [entry(f"{tag}{i:03d}", "synthetic", condition=cond) for i in range(n_synth)]
    entries += [entry(f"ev{i:03d}", "eval") for i in range(n_eval)]
    return Manifest(entries)


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, note = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {title}{note}")
