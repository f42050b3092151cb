"""Caption evaluation: tokenization, ROUGE-L, CIDEr-D, challenge aggregation.

Scale conventions: rouge_l() returns [0,1]; cider() returns the conventional
0-10 magnitude (the x10 factor is part of the definition). Reports scale both
by 100, which is where leaderboard-scale magnitudes (rouge ~42, cider ~152)
come from. SPICE is never computed here; precomputed values arrive already on
the 0-100 scale.
"""

from __future__ import annotations

import json
import math
import string
from collections import Counter
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

from .data import CaptionType, VideoRecord
from .errors import (EmptyCorpus, InvariantViolation, IoFailure,
                     MalformedAnnotation, MissingPrediction)

# Characters deleted before whitespace splitting.
PUNCTUATION = string.punctuation
_STRIP = str.maketrans("", "", PUNCTUATION)

ROUGE_BETA = 1.2
CIDER_N_MAX = 4
CIDER_SIGMA = 6.0


@dataclass(frozen=True)
class TokenizedCaption:
    tokens: tuple[str, ...]
    source: str


def tokenize(text: str) -> TokenizedCaption:
    """Lowercase, delete punctuation, split on whitespace."""
    cleaned = text.lower().translate(_STRIP)
    return TokenizedCaption(tuple(cleaned.split()), text)


def _tokens(cap: TokenizedCaption | list[str] | tuple[str, ...]) -> tuple[str, ...]:
    if isinstance(cap, TokenizedCaption):
        return cap.tokens
    return tuple(cap)


def _lcs_length(a: tuple[str, ...], b: tuple[str, ...]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for tok in a:
        cur = [0]
        for j, other in enumerate(b, start=1):
            if tok == other:
                cur.append(prev[j - 1] + 1)
            else:
                cur.append(max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate, references, beta: float = ROUGE_BETA) -> float:
    """Max over references of LCS-based F_beta; 0 for empty sides."""
    cand = _tokens(candidate)
    best = 0.0
    for reference in references:
        ref = _tokens(reference)
        if not cand or not ref:
            continue
        ell = _lcs_length(cand, ref)
        if ell == 0:
            continue
        precision = ell / len(cand)
        recall = ell / len(ref)
        score = (1 + beta**2) * precision * recall / (recall + beta**2 * precision)
        if score > best:
            best = score
    return best


def _ngram_counts(tokens: tuple[str, ...], n: int) -> Counter:
    return Counter(tokens[i:i + n] for i in range(len(tokens) - n + 1))


def _idf_table(references: dict[str, list[tuple[str, ...]]], n: int) -> dict:
    num_ids = len(references)
    df: Counter = Counter()
    for refs in references.values():
        in_any = set()
        for ref in refs:
            in_any.update(_ngram_counts(ref, n))
        df.update(in_any)
    return {g: math.log(num_ids / max(c, 1)) for g, c in df.items()}


def cider(candidates, references, n_max: int = CIDER_N_MAX,
          sigma: float = CIDER_SIGMA) -> float:
    """CIDEr-D corpus score on the conventional 0-10 scale.

    candidates: id -> caption; references: id -> list of captions. Captions
    may be TokenizedCaption or token sequences.
    """
    if not candidates:
        raise EmptyCorpus("cider needs at least one candidate")
    if set(candidates) != set(references):
        raise InvariantViolation("cider candidate and reference id sets differ")
    cand_tok = {i: _tokens(c) for i, c in candidates.items()}
    ref_tok: dict[str, list[tuple[str, ...]]] = {}
    for i, refs in references.items():
        if not refs:
            raise InvariantViolation(f"id {i!r} has no references")
        ref_tok[i] = [_tokens(r) for r in refs]

    per_id = {i: 0.0 for i in cand_tok}
    num_ids = len(cand_tok)
    for n in range(1, n_max + 1):
        idf = _idf_table(ref_tok, n)

        def weighted(counts: Counter) -> dict:
            # n-grams absent from every reference set have df 0, clipped to 1
            fallback = math.log(num_ids)
            return {g: c * idf.get(g, fallback) for g, c in counts.items()}

        for i, cand in cand_tok.items():
            hvec = weighted(_ngram_counts(cand, n))
            hnorm = math.sqrt(sum(v * v for v in hvec.values()))
            acc = 0.0
            for ref in ref_tok[i]:
                rvec = weighted(_ngram_counts(ref, n))
                rnorm = math.sqrt(sum(v * v for v in rvec.values()))
                if hnorm > 0.0 and rnorm > 0.0:
                    overlap = sum(
                        min(hvec.get(g, 0.0), rv) * rv for g, rv in rvec.items()
                    )
                    sim = overlap / (hnorm * rnorm)
                else:
                    sim = 0.0
                delta = len(cand) - len(ref)
                acc += sim * math.exp(-(delta * delta) / (2.0 * sigma * sigma))
            per_id[i] += 10.0 * acc / len(ref_tok[i])
    return sum(v / n_max for v in per_id.values()) / num_ids


def round2(value: float) -> float:
    """Two decimals, half-up (report convention)."""
    return float(Decimal(str(value)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class TypeScores:
    rouge_l: float
    cider: float
    spice: float | None = None

    @property
    def avg(self) -> float | None:
        if self.spice is None:
            return None
        return (self.spice + self.rouge_l + self.cider) / 3.0

    @property
    def avg_no_spice(self) -> float:
        return (self.rouge_l + self.cider) / 2.0


@dataclass(frozen=True)
class ScoreReport:
    per_type: dict[str, TypeScores]
    overall: TypeScores

    def to_dict(self) -> dict:
        def row(s: TypeScores) -> dict:
            out = {
                "rouge_l": round2(s.rouge_l),
                "cider": round2(s.cider),
                "spice": None if s.spice is None else round2(s.spice),
                "avg_no_spice": round2(s.avg_no_spice),
            }
            out["avg"] = None if s.avg is None else round2(s.avg)
            return out

        return {
            "per_type": {t: row(s) for t, s in sorted(self.per_type.items())},
            "overall": row(self.overall),
        }

    def to_text(self) -> str:
        cols = ["spice", "rouge_l", "cider", "avg", "avg_no_spice"]
        lines = ["{:<14}".format("caption_type") + "".join(f"{c:>14}" for c in cols)]

        def fmt(v: float | None) -> str:
            return "-" if v is None else f"{round2(v):.2f}"

        data = self.to_dict()
        for name in [*sorted(self.per_type), "overall"]:
            row = data["per_type"].get(name, data["overall"] if name == "overall" else None)
            if name == "overall":
                row = data["overall"]
            vals = [row["spice"], row["rouge_l"], row["cider"], row["avg"], row["avg_no_spice"]]
            lines.append("{:<14}".format(name) + "".join(f"{fmt(v):>14}" for v in vals))
        return "\n".join(lines) + "\n"


def aggregate(
    rouge_by_type: dict[CaptionType, float],
    cider_by_type: dict[CaptionType, float],
    spice_by_type: dict[CaptionType, float] | None = None,
) -> ScoreReport:
    """Scale to the report convention (x100) and average over caption types.

    rouge values arrive on [0,1], cider on its 0-10 scale; spice (optional)
    arrives already on the 0-100 scale, as supplied by external files.
    """
    per_type: dict[str, TypeScores] = {}
    for ct in CaptionType:
        spice = None if spice_by_type is None else spice_by_type[ct]
        per_type[ct.value] = TypeScores(
            rouge_l=100.0 * rouge_by_type[ct],
            cider=100.0 * cider_by_type[ct],
            spice=spice,
        )
    values = list(per_type.values())
    overall = TypeScores(
        rouge_l=sum(v.rouge_l for v in values) / len(values),
        cider=sum(v.cider for v in values) / len(values),
        spice=None if spice_by_type is None
        else sum(v.spice for v in values) / len(values),
    )
    return ScoreReport(per_type=per_type, overall=overall)


PREDICTION_KEYS = ("video_id", "boundary_id", "subject", "status_before", "status_after")


def load_predictions(path: str | Path) -> dict[tuple[str, str], dict[str, str]]:
    """JSON-lines prediction file -> {(video_id, boundary_id): captions}."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise IoFailure(f"cannot read predictions {path}: {e}") from e
    out: dict[tuple[str, str], dict[str, str]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise MalformedAnnotation(
                f"predictions {path}:{lineno}: invalid JSON: {e}"
            ) from e
        if not isinstance(obj, dict):
            raise MalformedAnnotation(
                f"predictions {path}:{lineno}: expected an object"
            )
        missing = [k for k in PREDICTION_KEYS if k not in obj]
        if missing:
            raise MalformedAnnotation(
                f"predictions {path}:{lineno}: missing keys {missing}"
            )
        key = (str(obj["video_id"]), str(obj["boundary_id"]))
        if key in out:
            raise InvariantViolation(
                f"predictions {path}:{lineno}: duplicate entry for {key}"
            )
        out[key] = {
            "subject": str(obj["subject"]),
            "status_before": str(obj["status_before"]),
            "status_after": str(obj["status_after"]),
        }
    return out


_FIELD_BY_TYPE = {
    CaptionType.SUBJECT: "subject",
    CaptionType.BEFORE: "status_before",
    CaptionType.AFTER: "status_after",
}


def evaluate(
    predictions: dict[tuple[str, str], dict[str, str]] | str | Path,
    records: list[VideoRecord],
    spice_by_type: dict[CaptionType, float] | None = None,
    breakdown_path: str | Path | None = None,
) -> ScoreReport:
    """Score predictions against annotated boundaries.

    Every annotated (video, boundary) needs a prediction with all three
    captions; missing ones are reported together in MissingPrediction.
    """
    if isinstance(predictions, (str, Path)):
        predictions = load_predictions(predictions)
    keys = [(r.video_id, b.boundary_id) for r in records for b in r.boundaries]
    if not keys:
        raise EmptyCorpus("no annotated boundaries to evaluate")
    absent = sorted(k for k in keys if k not in predictions)
    if absent:
        shown = ", ".join(f"{v}/{b}" for v, b in absent[:10])
        more = "" if len(absent) <= 10 else f" (+{len(absent) - 10} more)"
        raise MissingPrediction(f"no prediction for: {shown}{more}")

    rouge_by_type: dict[CaptionType, float] = {}
    cider_by_type: dict[CaptionType, float] = {}
    breakdown: dict[str, dict[str, float]] = {}
    for ct in CaptionType:
        field = _FIELD_BY_TYPE[ct]
        cands: dict[str, TokenizedCaption] = {}
        refs: dict[str, list[TokenizedCaption]] = {}
        for r in records:
            for b in r.boundaries:
                cid = f"{r.video_id}/{b.boundary_id}"
                cands[cid] = tokenize(predictions[(r.video_id, b.boundary_id)][field])
                refs[cid] = [tokenize(b.captions.get(ct))]
        rouge_scores = {cid: rouge_l(cands[cid], refs[cid]) for cid in cands}
        rouge_by_type[ct] = sum(rouge_scores.values()) / len(rouge_scores)
        cider_by_type[ct] = cider(cands, refs)
        for cid, score in rouge_scores.items():
            breakdown.setdefault(cid, {})[f"rouge_l_{ct.value}"] = round2(100.0 * score)

    report = aggregate(rouge_by_type, cider_by_type, spice_by_type)
    if breakdown_path is not None:
        lines = [
            json.dumps({"boundary": cid, **vals}, sort_keys=True)
            for cid, vals in sorted(breakdown.items())
        ]
        try:
            Path(breakdown_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
        except OSError as e:
            raise IoFailure(f"cannot write breakdown {breakdown_path}: {e}") from e
    return report
