"""Average precision, weight tuning on a labelled set, and rating correlations."""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import stats

from .core import PositionError, parse_fen
from .features import FEATURE_NAMES, GRID_STEP, FeatureVector, WeightVector, score

TIE_SHUFFLES = 100
TRAIN, TEST = "TRAIN", "TEST"
POSITIVE, NEGATIVE = "positive", "negative"
GOLDEN_SET_PATH = Path(__file__).parent / "data" / "golden_set.csv"


def average_precision(labels: Sequence) -> float:
    """AP of a ranked list of booleans (True = positive), best first."""
    npos = sum(1 for x in labels if x)
    if npos == 0:
        raise ValueError("average precision needs at least one positive")
    hits = 0
    total = 0.0
    for k, positive in enumerate(labels, 1):
        if positive:
            hits += 1
            total += hits / k
    return total / npos


def _tie_groups(scores: Sequence[float]) -> list:
    """Index groups of equal score, highest score first."""
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    groups = []
    for _, grp in itertools.groupby(order, key=lambda i: scores[i]):
        groups.append(list(grp))
    return groups


def rank_and_ap(scores: Sequence[float], labels: Sequence, shuffles: int = TIE_SHUFFLES,
                seed: int = 0) -> float:
    """Mean AP after sorting by score, averaging over orderings of tied items.

    Each tie group of size ``g`` is handled in blocks of ``g`` shuffles: one
    random permutation is drawn per block and the block uses its ``g`` cyclic
    rotations. Every shuffle is still a uniform random order, but within a
    block each item visits every slot once, which keeps the average much
    closer to the exact expectation than independent draws.
    """
    if len(scores) != len(labels):
        raise ValueError("scores and labels differ in length")
    groups = _tie_groups(scores)
    if all(len(g) == 1 for g in groups):
        return average_precision([labels[g[0]] for g in groups])
    rng = np.random.default_rng(seed)
    perms = [None] * len(groups)
    total = 0.0
    for s in range(shuffles):
        ranked = []
        for gi, grp in enumerate(groups):
            g = len(grp)
            if g == 1:
                ranked.append(labels[grp[0]])
                continue
            if s % g == 0:
                perms[gi] = rng.permutation(g)
            order = np.roll(perms[gi], s % g)
            ranked.extend(labels[grp[j]] for j in order)
        total += average_precision(ranked)
    return total / shuffles


def expected_ap_exact(scores: Sequence[float], labels: Sequence) -> float:
    """Exact mean AP over every ordering of tied items (small sets only)."""
    groups = _tie_groups(scores)
    total = 0.0
    count = 0
    for orders in itertools.product(*(itertools.permutations(g) for g in groups)):
        ranked = [labels[i] for grp in orders for i in grp]
        total += average_precision(ranked)
        count += 1
    return total / count


# golden set


@dataclass(frozen=True)
class GoldenItem:
    fen: str
    positive: bool
    split: str
    flag: str = ""


class GoldenSet:
    def __init__(self, items: Iterable[GoldenItem]):
        self.items = list(items)
        for split in {i.split for i in self.items}:
            sub = self.split(split)
            if not any(i.positive for i in sub) or all(i.positive for i in sub):
                raise ValueError(f"split {split} needs both positive and negative items")

    def __len__(self) -> int:
        return len(self.items)

    def split(self, name: str) -> list:
        return [i for i in self.items if i.split == name]

    def usable(self, name: Optional[str] = None) -> list:
        return [i for i in self.items if not i.flag and (name is None or i.split == name)]

    @classmethod
    def load(cls, path=GOLDEN_SET_PATH) -> "GoldenSet":
        items = []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                label = row["label"].strip().lower()
                split = row["split"].strip().upper()
                if label not in (POSITIVE, NEGATIVE) or split not in (TRAIN, TEST):
                    raise ValueError(f"bad golden row {row}")
                fen = row["fen"].strip()
                flag = (row.get("flag") or "").strip()
                if not flag:
                    try:
                        parse_fen(fen)
                    except PositionError as err:
                        flag = f"invalid: {err.rule}"
                items.append(GoldenItem(fen, label == POSITIVE, split, flag))
        return cls(items)

    def save(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["fen", "label", "split", "flag"])
            for i in self.items:
                w.writerow([i.fen, POSITIVE if i.positive else NEGATIVE, i.split, i.flag])


def load_feature_cache(path) -> dict:
    out = {}
    with open(path) as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                out[rec["fen"]] = FeatureVector.from_dict(rec["features"])
    return out


def save_feature_cache(path, features: dict) -> None:
    with open(path, "w") as fh:
        for fen, fv in features.items():
            fh.write(json.dumps({"fen": fen, "features": fv.to_dict()}, sort_keys=True) + "\n")


# tuning


@dataclass(frozen=True)
class TuneResult:
    weights: WeightVector
    train_ap: float
    test_ap: Optional[float]
    all_ap: Optional[float]
    trials: int


def split_ap(items: Sequence[GoldenItem], features: dict, w: WeightVector, seed: int = 0) -> float:
    scores = [score(features[i.fen], w) for i in items]
    return rank_and_ap(scores, [i.positive for i in items], seed=seed)


def _candidates(names: Sequence[str], trials: int, rng: np.random.Generator) -> list:
    levels = round(1.0 / GRID_STEP) + 1
    grid_size = levels ** len(names)
    zero = (0,) * len(names)
    if trials >= grid_size:
        cands = list(itertools.product(range(levels), repeat=len(names)))
        cands.remove(zero)
        return [zero] + cands
    # sampling without replacement; the zero vector always goes first
    seen = {zero}
    out = [zero]
    if grid_size <= 1_000_000:
        flat = rng.choice(grid_size - 1, size=trials - 1, replace=False) + 1
        for idx in flat:
            digits = []
            idx = int(idx)
            for _ in names:
                idx, d = divmod(idx, levels)
                digits.append(d)
            out.append(tuple(reversed(digits)))
        return out
    while len(out) < trials:
        cand = tuple(int(x) for x in rng.integers(0, levels, size=len(names)))
        if cand not in seen:
            seen.add(cand)
            out.append(cand)
    return out


def tune_weights(train: Sequence[GoldenItem], features: dict, trials: int, seed: int = 0,
                 test: Sequence[GoldenItem] = (), names: Sequence[str] = FEATURE_NAMES) -> TuneResult:
    """Random search over the weight grid, keeping the best TRAIN AP.

    Only ``names`` are searched; other weights stay zero. The all-zero vector
    is always the first candidate and ties keep the earlier candidate.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    labels = [i.positive for i in train]
    mat = np.array([[getattr(features[i.fen], n) for n in names] for i in train], dtype=float)
    best = None
    best_ap = -math.inf
    for cand in _candidates(names, trials, rng):
        weights = np.array(cand, dtype=float) * GRID_STEP
        ap = rank_and_ap(list(mat @ weights), labels, seed=seed)
        if ap > best_ap + 1e-12:
            best, best_ap = cand, ap
    w = WeightVector({n: round(d * GRID_STEP, 1) for n, d in zip(names, best)})
    test_ap = split_ap(test, features, w, seed) if test else None
    all_ap = split_ap(list(train) + list(test), features, w, seed) if test else None
    return TuneResult(w, best_ap, test_ap, all_ap, trials)


def correlate(xs: Sequence[float], ys: Sequence[float]) -> tuple:
    """``(pearson, spearman)``; Spearman ranks ties by their average."""
    if len(xs) != len(ys):
        raise ValueError("correlate needs equal lengths")
    if len(xs) < 3:
        raise ValueError("correlate needs at least 3 points")
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise ValueError("correlate needs nonzero variance in both inputs")
    return float(stats.pearsonr(x, y)[0]), float(stats.spearmanr(x, y)[0])
