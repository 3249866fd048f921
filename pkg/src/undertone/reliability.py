"""Annotation-reliability metrics and a two-round labeling simulator.

A record holds one item's first-round labels (one per rater) and the
adjudicated second-round label. The reliability score combines mean
agreement with mean label-type randomness through a fixed exponential
squashing, so it stays comparable across corpora with very different
class prevalence; Fleiss kappa is provided as the baseline it is
contrasted against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_E = math.e
_SCALE = _E - 1.0 / _E


@dataclass(frozen=True)
class AnnotationRecord:
    first_round: tuple
    adjudicated: object

    def __post_init__(self):
        if len(self.first_round) < 1:
            raise ValueError("need at least one first-round label")
        object.__setattr__(self, "first_round", tuple(self.first_round))


@dataclass(frozen=True)
class CurvePoint:
    agreement_level: float
    pos_rate: float
    kappa: float
    accuracy: float
    tae: float

    def __post_init__(self):
        if not (0.0 <= self.accuracy <= 1.0 and 0.0 <= self.tae <= 1.0):
            raise ValueError("accuracy and tae must lie in [0, 1]")
        if not -1.0 <= self.kappa <= 1.0 + 1e-12:
            raise ValueError("kappa must lie in [-1, 1]")


@dataclass
class ReliabilityCurve:
    rows: list  # of CurvePoint

    CSV_HEADER = "agreement,pos_rate,kappa,accuracy,tae"

    def to_csv(self) -> str:
        lines = [self.CSV_HEADER]
        for p in self.rows:
            lines.append(
                f"{p.agreement_level:.6f},{p.pos_rate:.6f},"
                f"{p.kappa:.6f},{p.accuracy:.6f},{p.tae:.6f}"
            )
        return "\n".join(lines) + "\n"


def agreement(record: AnnotationRecord) -> float:
    """Fraction of first-round labels that match the adjudicated one."""
    hits = sum(1 for l in record.first_round if l == record.adjudicated)
    return hits / len(record.first_round)


def randomness(record: AnnotationRecord) -> float:
    """Share of first-round label *types* absent from the adjudication."""
    first = set(record.first_round)
    adjudicated = {record.adjudicated}
    return len(first - adjudicated) / len(first | adjudicated)


def tae_from_means(agr: float, rad: float) -> float:
    """(exp(agr - rad) - 1/e) / (e - 1/e); 1 at (1,0), 0 at (0,1)."""
    if not (0.0 <= agr <= 1.0 and 0.0 <= rad <= 1.0):
        raise ValueError(f"means must lie in [0, 1], got agr={agr}, rad={rad}")
    return (math.exp(agr - rad) - 1.0 / _E) / _SCALE


def tae_score(records) -> float:
    records = list(records)
    if not records:
        raise ValueError("tae_score: empty record list")
    agr = sum(agreement(r) for r in records) / len(records)
    rad = sum(randomness(r) for r in records) / len(records)
    return tae_from_means(agr, rad)


def fleiss_kappa(counts) -> float:
    """Fleiss kappa from an items x categories rating-count matrix."""
    counts = np.asarray(counts, dtype=np.float64)
    if counts.ndim != 2 or counts.shape[0] < 1:
        raise ValueError("counts must be a 2-d items x categories matrix")
    row_sums = counts.sum(axis=1)
    r = row_sums[0]
    if r < 2 or not (row_sums == r).all():
        raise ValueError("every item needs the same rater count r >= 2")
    p_item = (np.square(counts).sum(axis=1) - r) / (r * (r - 1.0))
    p_bar = p_item.mean()
    p_cat = counts.sum(axis=0) / counts.sum()
    p_e = float(np.square(p_cat).sum())
    if 1.0 - p_e < 1e-12:
        return 1.0  # a single category everywhere is perfect agreement
    return float((p_bar - p_e) / (1.0 - p_e))


def _class_probs(pos_rate: float, n_classes: int):
    """Class distribution with the stated positive rate.

    The non-positive mass is split unevenly (0.95 to the dominant
    negative class, the rest shared) so the prevalence effects kappa is
    known for actually show up in the simulation.
    """
    rem = 1.0 - pos_rate
    if n_classes == 2:
        return np.array([pos_rate, rem])
    minor = 0.05 * rem / (n_classes - 2)
    return np.array([pos_rate, 0.95 * rem] + [minor] * (n_classes - 2))


def simulate_reliability(pos_rate: float, agreement_levels, n_items: int = 10000,
                         n_raters: int = 3, n_classes: int = 3,
                         seed: int = 0) -> ReliabilityCurve:
    """Simulate two-round annotation at each agreement level.

    The adjudicated label is the true one; each first-round rater copies
    it with probability a, otherwise picks uniformly among the other
    classes. Per-level RNG state derives from (seed, level index) so grid
    points are independent of evaluation order.
    """
    levels = [float(a) for a in agreement_levels]
    if not levels or any(not 0.0 <= a <= 1.0 for a in levels):
        raise ValueError(f"agreement levels must lie in [0, 1], got {levels}")
    if not 0.0 <= pos_rate <= 1.0:
        raise ValueError(f"pos_rate {pos_rate} outside [0, 1]")
    if n_items < 100:
        raise ValueError("n_items must be >= 100")
    if n_raters < 1 or n_classes < 2:
        raise ValueError("need n_raters >= 1 and n_classes >= 2")
    probs = _class_probs(pos_rate, n_classes)

    rows = []
    for idx, level in enumerate(levels):
        rng = np.random.default_rng((seed, idx))
        true = rng.choice(n_classes, size=n_items, p=probs)
        copies = rng.random((n_items, n_raters)) < level
        # uniform over the other classes: shift by 1..n_classes-1 mod n
        offsets = rng.integers(1, n_classes, size=(n_items, n_raters))
        ratings = np.where(copies, true[:, None],
                           (true[:, None] + offsets) % n_classes)

        counts = np.zeros((n_items, n_classes))
        for j in range(n_classes):
            counts[:, j] = (ratings == j).sum(axis=1)
        records = [AnnotationRecord(tuple(ratings[i]), int(true[i]))
                   for i in range(n_items)]
        accuracy = float(np.mean(ratings == true[:, None]))
        rows.append(CurvePoint(
            agreement_level=level,
            pos_rate=pos_rate,
            kappa=fleiss_kappa(counts),
            accuracy=accuracy,
            tae=tae_score(records),
        ))
    return ReliabilityCurve(rows=rows)
