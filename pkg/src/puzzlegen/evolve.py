"""Evolutionary search for puzzles.

Each worker keeps a small elite buffer. Per iteration it draws parents with
probability ``softmax(fitness / T)``, mutates them by adding or removing
pieces and playing a few random moves, scores the children and keeps the
best ``buffer_size`` entries. Workers share nothing.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .core import (
    Position,
    color_of,
    is_legal,
    make_move,
    parse_fen,
    square_name,
    with_board,
)
from .engine import EngineError, PoolExhausted

MAX_RETRIES = 100
MAX_SIDE_PIECES = 16


class MutationFailed(RuntimeError):
    pass


@dataclass(frozen=True)
class EvoConfig:
    workers: int = 1
    iterations: int = 200
    buffer_size: int = 16
    parents_per_iter: int = 4
    mutations_per_parent: int = 1
    edit_budget: int = 2
    random_move_budget: int = 2
    t_start: float = 1.0
    t_end: float = 0.01
    seed: int = 0
    fitness_weights: tuple = (0.3, 0.6, 0.1)
    schedule: str = "geometric"
    p_add: float = 0.5

    def __post_init__(self):
        if not self.t_start >= self.t_end > 0:
            raise ValueError("need t_start >= t_end > 0")
        if self.buffer_size < self.parents_per_iter:
            raise ValueError("buffer_size must be >= parents_per_iter")
        if self.edit_budget < 0 or self.random_move_budget < 0:
            raise ValueError("budgets must be >= 0")
        if self.edit_budget == 0 and self.random_move_budget == 0:
            raise ValueError("edit and random-move budgets cannot both be zero")
        if self.schedule not in ("geometric", "linear"):
            raise ValueError(f"unknown anneal schedule {self.schedule!r}")
        if self.workers < 1 or self.iterations < 0 or self.parents_per_iter < 1:
            raise ValueError("workers and parents_per_iter must be >= 1, iterations >= 0")


@dataclass
class EvoEntry:
    fen: str
    fitness: float
    generation: int
    r_uni: Optional[float] = None
    r_cnt: Optional[float] = None
    census_ok: bool = True
    reward: int = 0
    solution_pv: tuple = ()

    def to_dict(self) -> dict:
        return {
            "fen": self.fen,
            "fitness": self.fitness,
            "generation": self.generation,
            "r_uni": self.r_uni,
            "r_cnt": self.r_cnt,
            "census_ok": self.census_ok,
            "reward": self.reward,
            "solution_pv": [m if isinstance(m, str) else m.uci() for m in self.solution_pv],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvoEntry":
        return cls(d["fen"], d["fitness"], d["generation"], d.get("r_uni"), d.get("r_cnt"),
                   d.get("census_ok", True), d.get("reward", 0), tuple(d.get("solution_pv", ())))


def fitness(r_uni: Optional[float], r_cnt: Optional[float], census_ok: bool,
            weights: Sequence[float] = (0.3, 0.6, 0.1)) -> float:
    wu, wc, wk = weights
    u = min(max(r_uni or 0.0, 0.0), 1.0)
    return wu * u + wc * (r_cnt or 0.0) + wk * (1.0 if census_ok else 0.0)


def entry_from_evaluation(ev, generation: int, weights=(0.3, 0.6, 0.1)) -> EvoEntry:
    return EvoEntry(ev.fen, fitness(ev.r_uni, ev.r_cnt, ev.census_ok, weights), generation,
                    ev.r_uni, ev.r_cnt, ev.census_ok, ev.reward, tuple(ev.solution_pv))


def anneal(it: int, total: int, t_start: float, t_end: float, schedule: str = "geometric") -> float:
    if not 0 <= it <= max(total, 0):
        raise ValueError("iteration out of range")
    if total == 0:
        return t_start
    frac = it / total
    if schedule == "linear":
        return t_start + (t_end - t_start) * frac
    return t_start * (t_end / t_start) ** frac


def selection_probs(fitnesses: Sequence[float], temperature: float) -> np.ndarray:
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    z = np.asarray(fitnesses, dtype=float) / temperature
    z -= z.max()
    w = np.exp(z)
    return w / w.sum()


def select_parents(buffer: Sequence[EvoEntry], temperature: float, k: int, rng: np.random.Generator) -> list:
    if not buffer:
        raise ValueError("cannot select from an empty buffer")
    probs = selection_probs([e.fitness for e in buffer], temperature)
    idx = rng.choice(len(buffer), size=k, replace=True, p=probs)
    return [buffer[i] for i in idx]


# mutation


def _repair_rights(board, castling: str) -> str:
    need = {"K": (4, "K", 7, "R"), "Q": (4, "K", 0, "R"), "k": (60, "k", 63, "r"), "q": (60, "k", 56, "r")}
    return "".join(c for c in castling if board[need[c][0]] == need[c][1] and board[need[c][2]] == need[c][3])


def _edit(p: Position, rng: np.random.Generator, cfg: EvoConfig) -> tuple:
    """One add or remove; returns (board, description)."""
    board = list(p.board)
    occupied = [sq for sq, pc in enumerate(board) if pc and pc.lower() != "k"]
    empty = [sq for sq, pc in enumerate(board) if pc is None]
    add = rng.random() < cfg.p_add
    if not add:
        if not occupied:
            return board, ""
        sq = occupied[int(rng.integers(len(occupied)))]
        desc = f"-{board[sq]}{square_name(sq)}"
        board[sq] = None
        return board, desc
    if not empty:
        return board, ""
    pc = "PNBRQpnbrq"[int(rng.integers(10))]
    side_count = sum(1 for x in board if x and color_of(x) == color_of(pc))
    if side_count >= MAX_SIDE_PIECES:
        return board, ""
    choices = [sq for sq in empty if pc.lower() != "p" or 1 <= sq >> 3 <= 6]
    sq = choices[int(rng.integers(len(choices)))]
    board[sq] = pc
    return board, f"+{pc}{square_name(sq)}"


def _try_mutate(p: Position, rng: np.random.Generator, cfg: EvoConfig) -> Optional[Position]:
    n_edits = int(rng.integers(cfg.edit_budget + 1))
    n_moves = int(rng.integers(cfg.random_move_budget + 1))
    if n_edits + n_moves == 0:
        if cfg.random_move_budget:
            n_moves = 1
        else:
            n_edits = 1
    board = p.board
    q = p
    for _ in range(n_edits):
        board, _ = _edit(with_board(q, board), rng, cfg)
        q = with_board(q, board)
    if n_edits:
        q = with_board(q, board, castling=_repair_rights(board, q.castling), en_passant=None)
        if not is_legal(q):
            return None
    for _ in range(n_moves):
        moves = q.legal_moves()
        if not moves:
            break
        q = make_move(q, moves[int(rng.integers(len(moves)))])
    if q == p or not is_legal(q):
        return None
    return q


def mutate(p: Position, rng: np.random.Generator, cfg: EvoConfig) -> Position:
    """Random piece edits followed by random legal plies; retried until legal."""
    for _ in range(MAX_RETRIES):
        q = _try_mutate(p, rng, cfg)
        if q is not None:
            return q
    raise MutationFailed(f"no legal mutation of {p.fen()} in {MAX_RETRIES} tries")


# workers


@dataclass
class WorkerResult:
    entries: list
    best_history: list = field(default_factory=list)
    aborted: bool = False
    error: str = ""
    worker: int = 0


def _insert(buffer: list, children: list, size: int) -> list:
    seen = {e.fen for e in buffer}
    merged = list(buffer)
    for c in children:
        if c.fen not in seen:
            seen.add(c.fen)
            merged.append(c)
    # stable: among equal fitness the older entry stays ahead
    merged.sort(key=lambda e: -e.fitness)
    return merged[:size]


def run_worker(cfg: EvoConfig, seeds: Sequence, scorer, worker: int = 0,
               final_scorer=None) -> WorkerResult:
    """One independent evolution run; returns the buffer sorted by fitness."""
    if not seeds:
        raise ValueError("seed corpus is empty")
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, worker]))
    buffer: list = []
    result = WorkerResult([], worker=worker)
    try:
        for s in seeds:
            p = s if isinstance(s, Position) else parse_fen(s)
            buffer = _insert(buffer, [entry_from_evaluation(scorer.evaluate(p), 0, cfg.fitness_weights)],
                             cfg.buffer_size)
        result.best_history.append(buffer[0].fitness)
        for it in range(1, cfg.iterations + 1):
            temp = anneal(it - 1, cfg.iterations, cfg.t_start, cfg.t_end, cfg.schedule)
            children = []
            for parent in select_parents(buffer, temp, cfg.parents_per_iter, rng):
                pos = parse_fen(parent.fen)
                for _ in range(cfg.mutations_per_parent):
                    try:
                        child = mutate(pos, rng, cfg)
                    except MutationFailed:
                        continue
                    children.append(entry_from_evaluation(scorer.evaluate(child), it, cfg.fitness_weights))
            buffer = _insert(buffer, children, cfg.buffer_size)
            result.best_history.append(buffer[0].fitness)
        if final_scorer is not None:
            buffer = [entry_from_evaluation(final_scorer.evaluate(parse_fen(e.fen)), e.generation, cfg.fitness_weights)
                      for e in buffer]
            buffer.sort(key=lambda e: -e.fitness)
    except (PoolExhausted, EngineError) as err:
        result.aborted = True
        result.error = f"{type(err).__name__}: {err}"
    result.entries = buffer
    return result


def run_workers(cfg: EvoConfig, seeds: Sequence, scorer_factory: Callable[[int], object],
                final_scorer_factory: Optional[Callable[[int], object]] = None) -> tuple:
    """Run ``cfg.workers`` independent workers in parallel.

    Returns ``(entries, results)`` where entries are all workers' buffers
    merged and sorted by fitness.
    """
    def job(w):
        fs = final_scorer_factory(w) if final_scorer_factory else None
        return run_worker(cfg, seeds, scorer_factory(w), w, fs)

    with ThreadPoolExecutor(max_workers=cfg.workers) as ex:
        results = list(ex.map(job, range(cfg.workers)))
    merged = [e for r in results for e in r.entries]
    merged.sort(key=lambda e: -e.fitness)
    return merged, results
