"""Brute-force reference scorers used to validate the metrics module.

Deliberately naive: explicit n-gram dictionaries, direct cosine arithmetic,
no shared code with the package implementation.
"""

from __future__ import annotations

import math
from collections import Counter


def lcs_table(a: list[str], b: list[str]) -> int:
    rows = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                rows[i][j] = rows[i - 1][j - 1] + 1
            else:
                rows[i][j] = max(rows[i - 1][j], rows[i][j - 1])
    return rows[len(a)][len(b)]


def rouge_l_oracle(cand: list[str], refs: list[list[str]], beta: float = 1.2) -> float:
    best = 0.0
    for ref in refs:
        if not cand or not ref:
            continue
        ell = lcs_table(cand, ref)
        if ell == 0:
            continue
        p = ell / len(cand)
        r = ell / len(ref)
        f = (1 + beta * beta) * p * r / (r + beta * beta * p)
        best = max(best, f)
    return best


def ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def cider_oracle(
    candidates: dict[str, list[str]],
    references: dict[str, list[list[str]]],
    n_max: int = 4,
    sigma: float = 6.0,
) -> float:
    ids = sorted(candidates)
    num_ids = len(ids)
    per_id_totals = []
    for n in range(1, n_max + 1):
        # document frequency: ids whose reference set mentions the n-gram
        df: Counter = Counter()
        for vid in ids:
            seen = set()
            for ref in references[vid]:
                seen.update(ngrams(ref, n))
            for g in seen:
                df[g] += 1

        def idf(g) -> float:
            return math.log(num_ids / max(df.get(g, 0), 1))

        for idx, vid in enumerate(ids):
            cand = candidates[vid]
            hvec = {g: c * idf(g) for g, c in ngrams(cand, n).items()}
            hnorm = math.sqrt(sum(v * v for v in hvec.values()))
            total = 0.0
            for ref in references[vid]:
                rvec = {g: c * idf(g) for g, c in ngrams(ref, n).items()}
                rnorm = math.sqrt(sum(v * v for v in rvec.values()))
                if hnorm == 0.0 or rnorm == 0.0:
                    sim = 0.0
                else:
                    num = sum(min(hvec.get(g, 0.0), rv) * rv for g, rv in rvec.items())
                    sim = num / (hnorm * rnorm)
                penalty = math.exp(-((len(cand) - len(ref)) ** 2) / (2 * sigma * sigma))
                total += sim * penalty
            score_n = 10.0 * total / len(references[vid])
            if n == 1:
                per_id_totals.append(score_n)
            else:
                per_id_totals[idx] += score_n
    return sum(t / n_max for t in per_id_totals) / num_ids
