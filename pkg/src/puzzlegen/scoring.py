"""Turn a candidate position into a full verdict.

:class:`EngineScorer` runs the real checks against an engine session.
:class:`SyntheticScorer` derives stable pseudo-verdicts from a hash of the
position; it stands in for an engine in property tests and demos where
thousands of unscripted positions are scored.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional

from .core import Position, PositionError, legality_violation, parse_fen, piece_census
from .engine import EngineError, EngineSession, analyze_trace
from .features import DEFAULT_STABILITY_TAU, DEFAULT_WEIGHTS, FeatureVector, WeightVector, build_features, qualify, score
from .novelty import ILLEGAL_REWARD, outcome_reward
from .uniqueness import UniquenessConfig, UniquenessVerdict, check_uniqueness


@dataclass
class Evaluation:
    fen: str
    legal: bool
    illegal_rule: str = ""
    unique: bool = False
    r_uni: Optional[float] = None
    solution_pv: tuple = ()
    features: Optional[FeatureVector] = None
    r_cnt: Optional[float] = None
    i_cnt: bool = False
    census_ok: bool = True
    reward: int = ILLEGAL_REWARD
    evals: tuple = ()
    mode: str = ""
    error: str = ""
    verdict: Optional[UniquenessVerdict] = field(default=None, repr=False)
    position: Optional[Position] = field(default=None, repr=False)


def _parse(candidate):
    """``(position, rule)``; position is None when the candidate is illegal."""
    if isinstance(candidate, Position):
        bad = legality_violation(candidate)
        return (None, bad.rule) if bad else (candidate, "")
    try:
        return parse_fen(candidate), ""
    except PositionError as err:
        return None, err.rule


def _finish(ev: Evaluation, p: Position, tau_cnt: float) -> Evaluation:
    ev.census_ok = not piece_census(p).exceeds_initial
    if ev.r_cnt is not None:
        ev.i_cnt = qualify(ev.r_cnt, tau_cnt)
    ev.reward = outcome_reward(p, ev.unique, ev.i_cnt, piece_census(p))
    return ev


@dataclass
class EngineScorer:
    session: EngineSession
    uniqueness: UniquenessConfig = field(default_factory=UniquenessConfig)
    weights: WeightVector = DEFAULT_WEIGHTS
    schedule: tuple = tuple(range(1, 21))
    trace_kind: str = "depth"
    stability_tau: float = DEFAULT_STABILITY_TAU
    tau_cnt: float = 0.1
    fingerprint: str = ""

    def __post_init__(self):
        if not self.fingerprint:
            self.fingerprint = self.session.identity

    def evaluate(self, candidate) -> Evaluation:
        p, rule = _parse(candidate)
        fen = candidate if isinstance(candidate, str) else candidate.fen()
        if p is None:
            return Evaluation(fen, False, rule)
        ev = Evaluation(p.fen(), True, position=p)
        if not p.legal_moves():
            ev.error = "no legal moves"
            return _finish(ev, p, self.tau_cnt)
        try:
            verdict = check_uniqueness(p, self.session, self.uniqueness)
            ev.verdict = verdict
            ev.unique = verdict.is_unique
            ev.r_uni = verdict.r_uni
            ev.mode = verdict.mode
            ev.solution_pv = verdict.solution_pv
            ev.evals = tuple(verdict.solver_values())
            first = verdict.transcript[0].played
            trace = analyze_trace(self.session, p, first, self.schedule, self.trace_kind)
            ev.features = build_features(p, verdict, {self.trace_kind: trace}, self.stability_tau)
            ev.r_cnt = score(ev.features, self.weights)
        except (EngineError, ValueError) as err:
            ev.error = f"{type(err).__name__}: {err}"
        return _finish(ev, p, self.tau_cnt)


def _unit(*parts) -> float:
    h = hashlib.sha256("|".join(str(x) for x in parts).encode()).digest()
    return int.from_bytes(h[:8], "big") / 2 ** 64


@dataclass
class SyntheticScorer:
    """Hash-derived verdicts: stable per position, no engine.

    A legal position with moves is unique with probability ``p_unique`` and
    gets ``r_cnt`` uniform in [0, 1). The solution is a single legal move
    picked by hash, so PV and board distances are meaningful.
    """

    p_unique: float = 0.5
    salt: str = "synthetic"
    tau_cnt: float = 0.1
    fingerprint: str = "synthetic"

    def evaluate(self, candidate) -> Evaluation:
        p, rule = _parse(candidate)
        fen = candidate if isinstance(candidate, str) else candidate.fen()
        if p is None:
            return Evaluation(fen, False, rule)
        key = p.fen()
        ev = Evaluation(key, True, position=p)
        moves = sorted(p.legal_moves(), key=lambda m: m.uci())
        if moves:
            move = moves[int(_unit(self.salt, key, "move") * len(moves))]
            u = _unit(self.salt, key, "uni")
            ev.unique = u < self.p_unique
            # margins above 0.5 for unique positions, below otherwise
            if ev.unique:
                ev.r_uni = 1.0 - 0.5 * u / self.p_unique
            else:
                ev.r_uni = 0.5 * (1.0 - u) / (1.0 - self.p_unique)
            ev.solution_pv = (move,)
            ev.r_cnt = _unit(self.salt, key, "cnt")
            ev.mode = "winrate"
        return _finish(ev, p, self.tau_cnt)
