"""Reference sentence BLEU used to freeze test values (python3)."""
from collections import Counter
import math


def bleu(hyp, refs, max_n=4):
    if not hyp:
        return 0.0
    logs = []
    for n in range(1, max_n + 1):
        h = Counter(tuple(hyp[i:i + n]) for i in range(len(hyp) - n + 1))
        best = Counter()
        for r in refs:
            for g, c in Counter(tuple(r[i:i + n]) for i in range(len(r) - n + 1)).items():
                best[g] = max(best[g], c)
        total = sum(h.values())
        match = sum(min(c, best[g]) for g, c in h.items())
        if n == 1 and match == 0:
            return 0.0
        if total == 0:
            p = 1.0
        elif match == 0:
            p = 1.0 / (total + 1)
        else:
            p = match / total
        logs.append(math.log(p))
    r = min((abs(len(x) - len(hyp)), len(x)) for x in refs)[1]
    bp = 1.0 if len(hyp) > r else math.exp(1 - r / len(hyp))
    return 100 * bp * math.exp(sum(logs) / max_n)


if __name__ == "__main__":
    print("%.17g" % bleu("the the the".split(), ["the cat".split()]))
    print("%.17g" % bleu("the cat sat on a mat".split(), ["the cat sat on the mat".split()]))
    print("%.17g" % bleu("a cat".split(), ["the cat sat".split(), "a cat is here".split()]))
    print("%.17g" % bleu("a a a b".split(), ["a c a a b".split()]))
    print("%.17g" % bleu("a a b".split(), ["a c a a b".split()]))
