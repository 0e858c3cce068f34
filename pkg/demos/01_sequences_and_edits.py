"""
Phoneme sequences with aligned prosody
======================================

An utterance is a row of ARPAbet phonemes with one duration (frames), one
log-F0 and one energy value per phoneme. Edits change the phonemes and
touch prosody only as much as needed to keep the rows aligned.
"""
from accentkit import (Delete, Insert, Merge, Split, Substitute, apply_script,
                       parse_sequence, serialize_sequence)
from accentkit.editops import change_rate, diff_to_script, format_script, random_matched_rate

# "will" as a Standard American source
will = parse_sequence("W IH1 L | d:10,7,7 | p:5.3,5.3,5.2 | e:0.8,3.6,3.1")
print(serialize_sequence(will))

# W -> V is a substitution, so d, p and e stay exactly as they were
vill = apply_script(will, [Substitute(0, "V")])
print(serialize_sequence(vill))
print("change rate", change_rate(will, vill))

# structural edits: each op sees the sequence left by the previous one
script = [Insert(3, "AH0"), Split(1, "IH1", "Y"), Merge(0, "V")]
edited = apply_script(will, script)
print(serialize_sequence(edited))

# the inserted AH0 copied its left neighbour's p/e; the split halved 7 into 3 + 4;
# the merge summed 10 + 3 frames and averaged p/e weighted by duration

# going the other way: recover a script from a target phoneme list
target = "V IH1 L AH0".split()
recovered = diff_to_script(will, target)
print(format_script(recovered), end="")
print(apply_script(will, recovered).symbols)

# deleting is also allowed, as long as something is left
print(apply_script(will, [Delete(2)]).symbols)

# the random control: substitute round(rate * L) positions, no other change
rate = 0.35
for seed in range(3):
    noisy, s = random_matched_rate(will, rate, seed)
    print(seed, noisy.symbols, f"rate {change_rate(will, noisy):.3f}")
