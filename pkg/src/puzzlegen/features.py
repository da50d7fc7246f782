"""Counter-intuitiveness features and the linear score built from them.

Through-time features come from an :class:`~puzzlegen.engine.EvalTrace`, one
per budget dimension (depth, nodes, movetime). Budgets are divided by the
last checkpoint so weights stay comparable across schedules.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Mapping, Optional

from .core import PIECE_VALUES, Move, Position, captured_piece, make_move
from .engine import AnalysisResult, EvalTrace
from .uniqueness import UniquenessVerdict, margin

DIMENSIONS = ("depth", "nodes", "time")
GRID_STEP = 0.1
DEFAULT_STABILITY_TAU = 0.05


@dataclass(frozen=True)
class FeatureVector:
    gap: float = 0.0
    depth_auc: float = 0.0
    nodes_auc: float = 0.0
    time_auc: float = 0.0
    depth_cp_value: float = 0.0
    nodes_cp_value: float = 0.0
    time_cp_value: float = 0.0
    depth_cp_move: float = 0.0
    nodes_cp_move: float = 0.0
    time_cp_move: float = 0.0
    top_move_gap: float = 0.0
    top_move_miseval_gap: float = 0.0
    neg_capture_material: float = 0.0
    neg_promote_material: float = 0.0
    giving_check: float = 0.0
    mate_in_one: float = 0.0
    in_check: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            if not math.isfinite(getattr(self, f.name)):
                raise ValueError(f"feature {f.name} is not finite")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "FeatureVector":
        unknown = set(data) - set(FEATURE_NAMES)
        if unknown:
            raise ValueError(f"unknown features {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in data.items()})

    def as_list(self) -> list:
        return [getattr(self, n) for n in FEATURE_NAMES]


FEATURE_NAMES = tuple(f.name for f in fields(FeatureVector))


def _on_grid(x: float) -> bool:
    return 0.0 <= x <= 1.0 and abs(x / GRID_STEP - round(x / GRID_STEP)) < 1e-9


class WeightVector:
    """Non-negative weights on the 0.0, 0.1, ..., 1.0 grid, keyed by feature name."""

    def __init__(self, weights: Optional[Mapping] = None):
        weights = dict(weights or {})
        unknown = set(weights) - set(FEATURE_NAMES)
        if unknown:
            raise ValueError(f"unknown features {sorted(unknown)}")
        for name, w in weights.items():
            if not _on_grid(float(w)):
                raise ValueError(f"weight {name}={w} is not on the {GRID_STEP} grid in [0, 1]")
        self.weights = {n: round(float(weights.get(n, 0.0)), 1) for n in FEATURE_NAMES}

    def __getitem__(self, name: str) -> float:
        return self.weights[name]

    def __eq__(self, other) -> bool:
        return isinstance(other, WeightVector) and self.weights == other.weights

    def __repr__(self) -> str:
        nz = {k: v for k, v in self.weights.items() if v}
        return f"WeightVector({nz})"

    def nonzero(self) -> dict:
        return {k: v for k, v in self.weights.items() if v}

    def as_list(self) -> list:
        return [self.weights[n] for n in FEATURE_NAMES]

    @classmethod
    def from_list(cls, values) -> "WeightVector":
        return cls(dict(zip(FEATURE_NAMES, (round(float(v), 1) for v in values))))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            for name in FEATURE_NAMES:
                fh.write(f"{name} = {self.weights[name]:.1f}\n")

    @classmethod
    def load(cls, path) -> "WeightVector":
        weights = {}
        with open(path) as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                key, sep, value = line.partition("=")
                if not sep:
                    raise ValueError(f"{path}:{lineno}: expected 'name = value'")
                weights[key.strip()] = float(value)
        return cls(weights)


# The tuned "search features + through-time" configuration
DEFAULT_WEIGHTS = WeightVector({"depth_cp_move": 0.8, "neg_capture_material": 0.1})


def _critical_index(flags) -> int:
    """First index from which every flag stays true (last index always holds)."""
    idx = len(flags) - 1
    while idx > 0 and flags[idx - 1]:
        idx -= 1
    return idx


def trace_features(trace: EvalTrace, tau: float = DEFAULT_STABILITY_TAU) -> tuple:
    """``(gap, auc, cp_value, cp_move)`` for one trace.

    ``auc`` is the trapezoid integral of ``|V_T - V_t|`` over the schedule
    divided by its span; ``cp_value`` and ``cp_move`` are the first budgets
    after which the solution's value stays within ``tau`` of ``V_T`` (resp.
    the engine's choice stays on the solution), divided by the last budget.
    If the engine never settles on the solution, ``cp_move`` is 1.0.
    """
    cps = trace.checkpoints
    if len(cps) < 2:
        raise ValueError("a trace needs at least two checkpoints")
    ts = [c.t for c in cps]
    final = cps[-1].value
    diffs = [abs(final - c.value) for c in cps]
    t_max = ts[-1]

    gap = abs(final - cps[0].value)
    area = sum((ts[i + 1] - ts[i]) * (diffs[i] + diffs[i + 1]) / 2.0 for i in range(len(ts) - 1))
    auc = area / (t_max - ts[0])
    cp_value = ts[_critical_index([d <= tau for d in diffs])] / t_max
    on_move = [c.best_move == trace.solution for c in cps]
    cp_move = ts[_critical_index(on_move)] / t_max if on_move[-1] else 1.0
    return gap, auc, cp_value, cp_move


def features_from_traces(traces: Mapping, tau: float = DEFAULT_STABILITY_TAU) -> dict:
    """Through-time feature fields for each trace keyed by dimension."""
    out = {}
    for dim, trace in traces.items():
        if dim == "movetime":
            dim = "time"
        if dim not in DIMENSIONS:
            raise ValueError(f"unknown trace dimension {dim!r}")
        gap, auc, cp_value, cp_move = trace_features(trace, tau)
        out[f"{dim}_auc"] = auc
        out[f"{dim}_cp_value"] = cp_value
        out[f"{dim}_cp_move"] = cp_move
        if dim == "depth" or "gap" not in out:
            out["gap"] = gap
    return out


def static_features(p: Position, move: Move, deep: Optional[AnalysisResult] = None,
                    shallow_value: Optional[float] = None) -> dict:
    """Features of the solution's first move that need no trace.

    Material uses pawn 1, knight 3, bishop 3, rook 5, queen 9, divided by 9;
    captures and promotions are penalties and so carry a negative sign.
    """
    out = {}
    captured = captured_piece(p, move)
    out["neg_capture_material"] = -PIECE_VALUES[captured.lower()] / 9.0 if captured else 0.0
    out["neg_promote_material"] = -PIECE_VALUES[move.promotion] / 9.0 if move.promotion else 0.0
    after = make_move(p, move)
    out["giving_check"] = 1.0 if after.is_check() else 0.0
    out["mate_in_one"] = 1.0 if after.is_check() and not after.legal_moves() else 0.0
    out["in_check"] = 1.0 if p.is_check() else 0.0
    if deep is not None and deep.entries:
        out["top_move_gap"] = 1.0 if len(p.legal_moves()) == 1 else margin(deep)
        entry = deep.find(move)
        if entry is not None and shallow_value is not None:
            out["top_move_miseval_gap"] = abs(entry.winrate - shallow_value)
    return out


def solution_move(verdict: UniquenessVerdict) -> Optional[Move]:
    if verdict.solution_pv:
        return verdict.solution_pv[0]
    if verdict.transcript:
        return verdict.transcript[0].played
    return None


def build_features(p: Position, verdict: UniquenessVerdict, traces: Mapping,
                   tau: float = DEFAULT_STABILITY_TAU) -> FeatureVector:
    move = solution_move(verdict)
    if move is None:
        raise ValueError("verdict has no solution move")
    values = features_from_traces(traces, tau)
    deep = verdict.transcript[0].analysis if verdict.transcript else None
    primary = traces.get("depth") or next(iter(traces.values()), None)
    shallow = primary.checkpoints[0].value if primary is not None else None
    values.update(static_features(p, move, deep, shallow))
    return FeatureVector(**values)


def score(f: FeatureVector, w: WeightVector) -> float:
    return sum(w.weights[n] * getattr(f, n) for n in FEATURE_NAMES if w.weights[n])


def qualify(r_cnt: float, tau_cnt: float = 0.1) -> bool:
    return r_cnt > tau_cnt
