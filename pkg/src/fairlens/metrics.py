"""Group fairness metrics for a binary sensitive attribute.

Counts are kept as integers and every rate is recomputed from them.  A
score ``r`` becomes the prediction ``1`` when ``r > threshold`` (strict).
Gaps are absolute; ``signed_gap`` is group 0 minus group 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import (
    BadParameter,
    DegenerateLabels,
    EmptyGroup,
    MissingColumn,
    NonBinaryColumn,
    NoPositivePredictions,
    ZeroDenominator,
)

GROUPS = (0, 1)
DEFAULT_BINS = 10
COMPATIBILITY_TOLERANCE = 1e-12


def _ratio(num, den):
    return num / den if den else float("nan")


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        for name in ("tp", "fp", "tn", "fn"):
            v = getattr(self, name)
            if int(v) != v or v < 0:
                raise BadParameter(f"{name} must be a non-negative integer, got {v}")
            object.__setattr__(self, name, int(v))

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def positives(self) -> int:
        return self.tp + self.fn

    @property
    def negatives(self) -> int:
        return self.fp + self.tn

    @property
    def predicted_positive(self) -> int:
        return self.tp + self.fp

    @property
    def base_rate(self) -> float:
        return _ratio(self.positives, self.n)

    @property
    def positive_rate(self) -> float:
        return _ratio(self.predicted_positive, self.n)

    @property
    def tpr(self) -> float:
        return _ratio(self.tp, self.positives)

    @property
    def fpr(self) -> float:
        return _ratio(self.fp, self.negatives)

    @property
    def fnr(self) -> float:
        return _ratio(self.fn, self.positives)

    @property
    def ppv(self) -> float:
        return _ratio(self.tp, self.predicted_positive)

    def to_dict(self):
        out = {"n": self.n, "tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}
        for k in ("base_rate", "positive_rate", "fpr", "fnr", "ppv"):
            v = getattr(self, k)
            out[k] = None if np.isnan(v) else v
        return out


@dataclass(frozen=True)
class GroupedCounts:
    groups: Mapping[int, Confusion]

    def __getitem__(self, g) -> Confusion:
        return self.groups[g]

    @classmethod
    def from_counts(cls, counts: Mapping) -> "GroupedCounts":
        groups = {}
        for g in GROUPS:
            c = counts[g] if g in counts else counts[str(g)]
            groups[g] = c if isinstance(c, Confusion) else Confusion(c["tp"], c["fp"], c["tn"], c["fn"])
        return cls(groups)

    def to_dict(self):
        return {str(g): self.groups[g].to_dict() for g in GROUPS}


def _binary(values, name):
    arr = np.asarray(values, dtype=float)
    bad = ~np.isin(arr, (0.0, 1.0))
    if bad.any():
        raise NonBinaryColumn(f"column {name!r} holds {arr[bad][0]!r}; expected 0 or 1")
    return arr.astype(int)


def _column(data, name):
    names = data.names if hasattr(data, "names") else list(data)
    if name not in names:
        raise MissingColumn(f"no column {name!r}")
    return data.column(name) if hasattr(data, "column") else np.asarray(data[name], dtype=float)


def threshold_scores(scores, threshold: float) -> np.ndarray:
    scores = np.asarray(scores, dtype=float)
    return (scores > threshold).astype(int)


def confusion(
    data,
    group: str,
    label: str,
    prediction: Optional[str] = None,
    score: Optional[str] = None,
    threshold: float = 0.5,
) -> GroupedCounts:
    """Per-group confusion counts from a dataset or a mapping of columns.

    Bind either a ``prediction`` column or a ``score`` column plus
    ``threshold``.
    """
    if (prediction is None) == (score is None):
        raise BadParameter("bind exactly one of prediction and score")
    a = _binary(_column(data, group), group)
    y = _binary(_column(data, label), label)
    if prediction is not None:
        yhat = _binary(_column(data, prediction), prediction)
    else:
        yhat = threshold_scores(_column(data, score), threshold)
    return counts_from_arrays(a, y, yhat)


def counts_from_arrays(a, y, yhat) -> GroupedCounts:
    a, y, yhat = (np.asarray(v, dtype=int) for v in (a, y, yhat))
    groups = {}
    for g in GROUPS:
        sel = a == g
        if not sel.any():
            raise EmptyGroup(f"group {g} has no records")
        ys, ps = y[sel], yhat[sel]
        groups[g] = Confusion(
            tp=int(np.sum((ys == 1) & (ps == 1))),
            fp=int(np.sum((ys == 0) & (ps == 1))),
            tn=int(np.sum((ys == 0) & (ps == 0))),
            fn=int(np.sum((ys == 1) & (ps == 0))),
        )
    return GroupedCounts(groups)


@dataclass(frozen=True)
class GapResult:
    """A rate per group with the absolute and signed cross-group gap."""

    name: str
    rates: Mapping[int, float]

    @property
    def signed_gap(self) -> float:
        return self.rates[0] - self.rates[1]

    @property
    def gap(self) -> float:
        return abs(self.signed_gap)

    def to_dict(self):
        return {"rates": {str(g): self.rates[g] for g in GROUPS}, "gap": self.gap, "signed_gap": self.signed_gap}


def _nonempty(c: GroupedCounts):
    for g in GROUPS:
        if c[g].n == 0:
            raise EmptyGroup(f"group {g} has no records")


def demographic_parity(c: GroupedCounts) -> GapResult:
    _nonempty(c)
    return GapResult("positive_rate", {g: c[g].positive_rate for g in GROUPS})


@dataclass(frozen=True)
class ErrorRateParity:
    fpr: GapResult
    fnr: GapResult

    def to_dict(self):
        return {"fpr": self.fpr.to_dict(), "fnr": self.fnr.to_dict()}


def error_rate_parity(c: GroupedCounts) -> ErrorRateParity:
    _nonempty(c)
    for g in GROUPS:
        if c[g].positives == 0 or c[g].negatives == 0:
            raise DegenerateLabels(f"group {g} needs both labels to define error rates")
    return ErrorRateParity(
        GapResult("fpr", {g: c[g].fpr for g in GROUPS}),
        GapResult("fnr", {g: c[g].fnr for g in GROUPS}),
    )


def predictive_parity(c: GroupedCounts) -> GapResult:
    _nonempty(c)
    for g in GROUPS:
        if c[g].predicted_positive == 0:
            raise NoPositivePredictions(f"group {g} has no positive predictions")
    return GapResult("ppv", {g: c[g].ppv for g in GROUPS})


def _split_scores(scores, groups):
    scores = np.asarray(scores, dtype=float)
    groups = _binary(groups, "group")
    if scores.shape != groups.shape:
        raise BadParameter("scores and groups must have the same length")
    parts = {g: scores[groups == g] for g in GROUPS}
    for g in GROUPS:
        if parts[g].size == 0:
            raise EmptyGroup(f"group {g} has no records")
    return parts


def dp_gap_curve(scores, groups, thresholds: Sequence[float]) -> np.ndarray:
    """Absolute demographic-parity gap of ``score > theta`` at each threshold."""
    thresholds = np.asarray(thresholds, dtype=float)
    if np.any(np.diff(thresholds) < 0):
        raise BadParameter("thresholds must be sorted")
    parts = _split_scores(scores, groups)
    rates = []
    for g in GROUPS:
        s = np.sort(parts[g])
        # count of scores strictly above each threshold
        rates.append((s.size - np.searchsorted(s, thresholds, side="right")) / s.size)
    return np.abs(rates[0] - rates[1])


@dataclass(frozen=True)
class CalibrationTable:
    edges: tuple
    rates: Mapping[int, tuple]  # per-bin p(Y=1 | bin, group); None when the bin is empty
    counts: Mapping[int, tuple]
    gap: Optional[float]
    gap_bin: Optional[int]
    excluded_bins: tuple

    def to_dict(self):
        return {
            "edges": list(self.edges),
            "rates": {str(g): list(self.rates[g]) for g in GROUPS},
            "counts": {str(g): list(self.counts[g]) for g in GROUPS},
            "max_gap": self.gap,
            "max_gap_bin": self.gap_bin,
            "excluded_bins": list(self.excluded_bins),
        }


def calibration_check(scores, labels, groups, bins: int = DEFAULT_BINS) -> CalibrationTable:
    """Per-bin positive rates on equal-width bins of [0, 1] and the largest cross-group gap.

    Bins are ``[k/B, (k+1)/B)`` with the last one closed.  Bins empty in
    either group are excluded from the gap and listed.
    """
    if int(bins) != bins or bins < 1:
        raise BadParameter("bins must be a positive integer")
    bins = int(bins)
    scores = np.asarray(scores, dtype=float)
    if np.any((scores < 0) | (scores > 1)) or np.any(np.isnan(scores)):
        raise BadParameter("scores must lie in [0, 1]")
    y = _binary(labels, "label")
    a = _binary(groups, "group")
    idx = np.minimum((scores * bins).astype(int), bins - 1)
    rates, counts = {}, {}
    for g in GROUPS:
        sel = a == g
        if not sel.any():
            raise EmptyGroup(f"group {g} has no records")
        n = np.bincount(idx[sel], minlength=bins)
        pos = np.bincount(idx[sel], weights=y[sel], minlength=bins)
        counts[g] = tuple(int(v) for v in n)
        rates[g] = tuple(float(p / k) if k else None for p, k in zip(pos, n))
    gap, gap_bin, excluded = None, None, []
    for b in range(bins):
        if rates[0][b] is None or rates[1][b] is None:
            excluded.append(b)
            continue
        d = abs(rates[0][b] - rates[1][b])
        if gap is None or d > gap:
            gap, gap_bin = d, b
    edges = tuple(float(e) for e in np.linspace(0.0, 1.0, bins + 1))
    return CalibrationTable(edges, rates, counts, gap, gap_bin, tuple(excluded))


def _unit(name, v):
    if not 0.0 <= v <= 1.0:
        raise BadParameter(f"{name}={v} must lie in [0, 1]")


def ppv_from_rates(tpr: float, fpr: float, base: float) -> float:
    """PPV implied by a true-positive rate, false-positive rate and base rate."""
    for name, v in (("tpr", tpr), ("fpr", fpr), ("base", base)):
        _unit(name, v)
    num = tpr * base
    den = num + fpr * (1.0 - base)
    if den == 0.0:
        raise ZeroDenominator("no positive predictions: tpr*base + fpr*(1-base) = 0")
    return num / den


@dataclass(frozen=True)
class IncompatibilityWitness:
    compatible: bool
    ppv0: float
    ppv1: float

    def to_dict(self):
        return {"compatible": self.compatible, "ppv0": self.ppv0, "ppv1": self.ppv1}


def incompatibility_witness(tpr: float, fpr: float, base0: float, base1: float) -> IncompatibilityWitness:
    """With shared error rates, can both groups also share their PPV?"""
    p0 = ppv_from_rates(tpr, fpr, base0)
    p1 = ppv_from_rates(tpr, fpr, base1)
    return IncompatibilityWitness(abs(p0 - p1) <= COMPATIBILITY_TOLERANCE, p0, p1)
