"""Reference interpolated Kneser-Ney trigram model used to freeze test values.

Run with python3; prints the perplexities and probabilities pinned in
eval_test.cpp.
"""
from collections import defaultdict
import math

BOS, EOS, UNK = "<s>", "</s>", "<unk>"


class KN:
    def __init__(self, corpus, order=3, d=0.75):
        self.n, self.d = order, d
        self.vocab = sorted({w for s in corpus for w in s} | {EOS, UNK})
        grams = defaultdict(int)
        for s in corpus:
            p = [BOS] * (order - 1) + s + [EOS]
            for i in range(len(p) - order + 1):
                grams[tuple(p[i:i + order])] += 1
        self.c = {order: dict(grams)}
        for k in range(order - 1, 0, -1):
            cont = defaultdict(int)
            for g in self.c[k + 1]:
                cont[g[1:]] += 1
            self.c[k] = dict(cont)

    def p(self, ctx, w, k=None):
        k = self.n if k is None else k
        if k == 0:
            return 1.0 / len(self.vocab)
        h = tuple(ctx[len(ctx) - (k - 1):]) if k > 1 else ()
        table = self.c[k]
        seen = {g: c for g, c in table.items() if g[:-1] == h}
        lower = self.p(ctx, w, k - 1)
        if not seen:
            return lower
        total = sum(seen.values())
        return (max(seen.get(h + (w,), 0) - self.d, 0) + self.d * len(seen) * lower) / total

    def ppl(self, sents):
        lp, t = 0.0, 0
        for s in sents:
            s = [w if w in self.vocab else UNK for w in s]
            p = [BOS] * (self.n - 1) + s + [EOS]
            for i in range(self.n - 1, len(p)):
                lp += math.log(self.p(p[i - self.n + 1:i], p[i]))
                t += 1
        return math.exp(-lp / t)


if __name__ == "__main__":
    a = KN([["a", "a", "a", "a"]])
    print("aaaa P(a|<s><s>) %.17g" % a.p([BOS, BOS], "a"))
    print("aaaa ppl(a a) %.17g" % a.ppl([["a", "a"]]))
    small = KN([s.split() for s in ["the cat sat", "the dog sat", "a cat ran"]])
    print("small ppl %.17g" % small.ppl([s.split() for s in ["the cat ran", "a dog sat", "the bird sat"]]))
    print("small P(sat|the cat) %.17g" % small.p(["the", "cat"], "sat"))
