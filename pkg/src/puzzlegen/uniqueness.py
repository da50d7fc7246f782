"""Single-solution check by recursively following the principal variation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .core import Move, Position, make_move
from .engine import AnalysisResult, Budget, EngineSession, analyze

MATE = "mate"
WINRATE = "winrate"


@dataclass(frozen=True)
class UniquenessConfig:
    tau_uni: float = 0.5
    mate_horizon: int = 15
    max_recursion_plies: int = 30
    budget: Budget = field(default_factory=lambda: Budget("depth", 20))
    # the winrate branch stops once the solver is this close to a certain win
    winning_stop: float = 0.99

    def __post_init__(self):
        if not 0 < self.tau_uni <= 1:
            raise ValueError("tau_uni must lie in (0, 1]")
        if self.mate_horizon < 1:
            raise ValueError("mate_horizon must be >= 1")
        if self.max_recursion_plies < 1:
            raise ValueError("max_recursion_plies must be >= 1")


@dataclass(frozen=True)
class PlyRecord:
    ply: int
    solver_turn: bool
    analysis: AnalysisResult
    played: Move
    margin: Optional[float] = None
    passed: Optional[bool] = None

    def to_dict(self) -> dict:
        return {
            "ply": self.ply,
            "solver": self.solver_turn,
            "fen": self.analysis.fen,
            "played": self.played.uci(),
            "moves": [e.move.uci() for e in self.analysis.entries],
            "scores": [str(e.score) for e in self.analysis.entries],
            "winrates": [e.winrate for e in self.analysis.entries],
            "margin": self.margin,
            "passed": self.passed,
        }


@dataclass(frozen=True)
class UniquenessVerdict:
    is_unique: bool
    r_uni: float
    solution_pv: tuple
    failure_ply: Optional[int]
    mode: str
    transcript: tuple = ()
    reason: str = ""

    def solver_values(self) -> list:
        """Solver-perspective winning chance before each ply of the solution."""
        out = []
        for rec in self.transcript[: len(self.solution_pv)]:
            w = rec.analysis.best.winrate
            out.append(w if rec.solver_turn else 1.0 - w)
        return out

    def to_dict(self) -> dict:
        return {
            "is_unique": self.is_unique,
            "r_uni": self.r_uni,
            "solution_pv": [m.uci() for m in self.solution_pv],
            "failure_ply": self.failure_ply,
            "mode": self.mode,
            "reason": self.reason,
            "transcript": [r.to_dict() for r in self.transcript],
        }


def margin(result: AnalysisResult) -> float:
    """Best minus second-best winning chance; 1.0 when only one move is listed."""
    if not result.entries:
        raise ValueError("margin of an empty analysis")
    if len(result.entries) == 1:
        return 1.0
    return result.entries[0].winrate - result.entries[1].winrate


def _ply_margin(pos: Position, result: AnalysisResult) -> float:
    # a forced move has nothing to compete with
    if len(pos.legal_moves()) == 1:
        return 1.0
    return margin(result)


def check_uniqueness(p: Position, session: EngineSession, cfg: UniquenessConfig = UniquenessConfig()) -> UniquenessVerdict:
    """Decide whether ``p`` has a single solution for the side to move.

    If the engine's main line mates within ``cfg.mate_horizon`` moves, every
    solver move must be the only mating move. Otherwise every solver move must
    beat the runner-up by at least ``cfg.tau_uni`` in winning chance; a miss
    after the first move ends the line instead of rejecting the puzzle.
    Opponent replies always follow the engine's top move.
    """
    if not p.legal_moves():
        raise ValueError(f"no legal moves in {p.fen()}")

    first = analyze(session, p, 2, cfg.budget)
    if not first.entries:
        raise ValueError(f"engine returned no moves for {p.fen()}")
    top = first.best.score
    mode = MATE if top.mates_for_mover() and top.mate <= cfg.mate_horizon else WINRATE
    r_uni = _ply_margin(p, first)

    pos = p
    pv: list = []
    transcript: list = []
    reason = ""
    ply = 0
    result: Optional[AnalysisResult] = first
    while ply < cfg.max_recursion_plies:
        if not pos.legal_moves():
            reason = "checkmate" if pos.is_check() else "stalemate"
            break
        solver_turn = ply % 2 == 0
        if solver_turn:
            res = result if ply == 0 else analyze(session, pos, 2, cfg.budget)
            m = _ply_margin(pos, res)
            if mode == MATE:
                if not res.best.score.mates_for_mover():
                    passed, why = False, "mating line lost"
                elif len(pos.legal_moves()) > 1 and len(res.entries) > 1 and res.entries[1].score.mates_for_mover():
                    passed, why = False, f"alternative mate {res.entries[1].move.uci()}"
                else:
                    passed, why = True, ""
            else:
                passed = m >= cfg.tau_uni
                why = f"margin {m:.4f} below {cfg.tau_uni}"
            transcript.append(PlyRecord(ply, True, res, res.best.move, m, passed))
            if not passed:
                if mode == MATE or ply == 0:
                    return UniquenessVerdict(False, r_uni, tuple(pv), ply, mode, tuple(transcript), why)
                reason = f"line ends: {why} at ply {ply}"
                break
            pv.append(res.best.move)
            pos = make_move(pos, res.best.move)
            if mode == WINRATE and res.best.winrate >= cfg.winning_stop:
                reason = "decisive advantage"
                ply += 1
                break
        else:
            res = analyze(session, pos, 1, cfg.budget)
            transcript.append(PlyRecord(ply, False, res, res.best.move))
            pv.append(res.best.move)
            pos = make_move(pos, res.best.move)
        ply += 1
    else:
        reason = "recursion limit"

    # solutions end on a solver move
    if len(pv) % 2 == 0 and pv:
        pv.pop()
    return UniquenessVerdict(True, r_uni, tuple(pv), None, mode, tuple(transcript), reason)
