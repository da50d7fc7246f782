"""Rule-based detectors for aesthetic themes along a solution line.

Each detector looks at a position, its solution PV, and optionally the
solver-perspective winning chances recorded while checking the solution.
``evals[i]`` is the solver's chance before PV ply ``i``; ``evals[len(pv)]``
(if present) is the chance after the last ply. Detectors never search.

When no evaluation is available, "winning" means the line ends with the
solver delivering mate.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

from .core import (
    BISHOP_DIRECTIONS,
    KING_TARGETS,
    PIECE_VALUES,
    ROOK_DIRECTIONS,
    Move,
    Position,
    apply_move,
    attacks_from,
    attackers,
    chebyshev,
    color_of,
    is_attacked,
    is_capture,
    is_castling,
    is_en_passant,
    material_balance,
    opponent,
    square_name,
)


class Theme(str, Enum):
    UNDERPROMOTION = "underpromotion"
    SACRIFICE = "sacrifice"
    SMOTHERED_MATE = "smothered_mate"
    BACK_RANK_MATE = "back_rank_mate"
    DOUBLE_CHECK = "double_check"
    EN_PASSANT = "en_passant"
    CASTLING = "castling"
    QUIET_MOVE = "quiet_move"
    SWITCHBACK = "switchback"
    KNIGHT_ON_RIM = "knight_on_rim"
    ATTACKING_WITHDRAWAL = "attacking_withdrawal"
    FORK = "fork"
    PIN = "pin"


@dataclass(frozen=True, order=True)
class ThemeHit:
    theme: Theme
    trigger_ply: int
    detail: str = ""

    def to_dict(self) -> dict:
        return {"theme": self.theme.value, "ply": self.trigger_ply, "detail": self.detail}


@dataclass(frozen=True)
class ThemeConfig:
    sacrifice_points: int = 3
    winning: float = 0.7


class Line:
    """A position and its PV replayed once, shared by all detectors."""

    def __init__(self, p: Position, pv: Sequence[Move], evals: Optional[Sequence[float]] = None,
                 cfg: ThemeConfig = ThemeConfig()):
        self.start = p
        self.pv = list(pv)
        self.solver = p.side_to_move
        self.cfg = cfg
        self.positions = [p]
        for m in self.pv:
            # raises on an illegal PV
            self.positions.append(apply_move(self.positions[-1], m))
        self.evals = list(evals) if evals is not None else None
        final = self.positions[-1]
        self.ends_in_solver_mate = bool(self.pv) and final.is_checkmate() and final.side_to_move != self.solver

    def before(self, i: int) -> Position:
        return self.positions[i]

    def after(self, i: int) -> Position:
        return self.positions[i + 1]

    def solver_plies(self):
        return range(0, len(self.pv), 2)

    def _eval(self, i: int) -> Optional[float]:
        if self.evals is not None and 0 <= i < len(self.evals):
            return self.evals[i]
        return None

    def winning_at(self, i: int) -> bool:
        v = self._eval(i)
        if v is None:
            return self.ends_in_solver_mate
        return v >= self.cfg.winning

    def winning_at_end(self) -> bool:
        v = self._eval(len(self.pv))
        if v is None and self.evals:
            v = self.evals[-1]
        if v is None:
            return self.ends_in_solver_mate
        return v >= self.cfg.winning or self.ends_in_solver_mate

    def not_worse_after(self, i: int) -> bool:
        before, after = self._eval(i), self._eval(i + 1)
        if before is None or after is None:
            return self.winning_at_end()
        return after >= before


def underpromotion(line: Line) -> list:
    return [ThemeHit(Theme.UNDERPROMOTION, i, line.pv[i].uci())
            for i in line.solver_plies() if line.pv[i].promotion in ("n", "r", "b")]


def sacrifice(line: Line) -> list:
    if not line.winning_at_end():
        return []
    base = material_balance(line.start, line.solver)
    for i in range(1, len(line.pv), 2):
        drop = base - material_balance(line.after(i), line.solver)
        if drop >= line.cfg.sacrifice_points:
            return [ThemeHit(Theme.SACRIFICE, i - 1, f"{line.pv[i - 1].uci()} -{drop}")]
    return []


def _final_mate(line: Line) -> Optional[tuple]:
    if not line.pv:
        return None
    final = line.positions[-1]
    if not final.is_checkmate():
        return None
    return final, final.king_square(final.side_to_move)


def smothered_mate(line: Line) -> list:
    found = _final_mate(line)
    if found is None:
        return []
    final, ksq = found
    last = line.pv[-1]
    if final.board[last.to_square].lower() != "n":
        return []
    mated = final.side_to_move
    if all(final.board[t] is not None and color_of(final.board[t]) == mated and final.board[t].lower() != "k"
           for t in KING_TARGETS[ksq]):
        return [ThemeHit(Theme.SMOTHERED_MATE, len(line.pv) - 1, square_name(ksq))]
    return []


def back_rank_mate(line: Line) -> list:
    found = _final_mate(line)
    if found is None:
        return []
    final, ksq = found
    mated = final.side_to_move
    home, step, pawn = (0, 8, "P") if mated == "w" else (7, -8, "p")
    if ksq >> 3 != home:
        return []
    f = ksq & 7
    forward = [ksq + step + df for df in (-1, 0, 1) if 0 <= f + df < 8]
    if all(final.board[t] == pawn for t in forward):
        return [ThemeHit(Theme.BACK_RANK_MATE, len(line.pv) - 1, square_name(ksq))]
    return []


def double_check(line: Line) -> list:
    out = []
    for i, m in enumerate(line.pv):
        after = line.after(i)
        side = after.side_to_move
        ksq = after.king_square(side)
        if len(attackers(after.board, ksq, opponent(side))) >= 2:
            out.append(ThemeHit(Theme.DOUBLE_CHECK, i, m.uci()))
    return out


def en_passant(line: Line) -> list:
    return [ThemeHit(Theme.EN_PASSANT, i, m.uci()) for i, m in enumerate(line.pv) if is_en_passant(line.before(i), m)]


def castling(line: Line) -> list:
    return [ThemeHit(Theme.CASTLING, i, m.uci()) for i, m in enumerate(line.pv) if is_castling(line.before(i), m)]


def quiet_move(line: Line) -> list:
    out = []
    for i in line.solver_plies():
        m = line.pv[i]
        p = line.before(i)
        if is_capture(p, m) or m.promotion or line.after(i).is_check():
            continue
        if line.winning_at(i):
            out.append(ThemeHit(Theme.QUIET_MOVE, i, m.uci()))
    return out


def switchback(line: Line) -> list:
    # follow each piece by identity through the line
    where = {sq: sq for sq, pc in enumerate(line.start.board) if pc}
    history = {pid: [sq] for pid, sq in where.items()}
    at = {sq: pid for pid, sq in where.items()}
    out = []
    for i, m in enumerate(line.pv):
        p = line.before(i)
        moves = [(m.from_square, m.to_square)]
        if is_castling(p, m):
            rank = m.from_square & ~7
            if m.to_square > m.from_square:
                moves.append((rank + 7, rank + 5))
            else:
                moves.append((rank, rank + 3))
        captured_sq = m.to_square
        if is_en_passant(p, m):
            captured_sq = m.to_square + (-8 if p.side_to_move == "w" else 8)
        at.pop(captured_sq, None)
        for frm, to in moves:
            pid = at.pop(frm)
            if i % 2 == 0 and frm == m.from_square and to in history[pid][:-1]:
                out.append(ThemeHit(Theme.SWITCHBACK, i, f"{m.uci()} back to {square_name(to)}"))
            history[pid].append(to)
            at[to] = pid
    return out


def _on_rim(sq: int) -> bool:
    return (sq & 7) in (0, 7) or (sq >> 3) in (0, 7)


def knight_on_rim(line: Line) -> list:
    out = []
    for i in line.solver_plies():
        m = line.pv[i]
        pc = line.after(i).board[m.to_square]
        if pc.lower() == "n" and _on_rim(m.to_square) and line.winning_at_end():
            out.append(ThemeHit(Theme.KNIGHT_ON_RIM, i, m.uci()))
    return out


def attacking_withdrawal(line: Line) -> list:
    out = []
    for i in line.solver_plies():
        m = line.pv[i]
        p = line.before(i)
        pc = p.board[m.from_square]
        if pc.lower() == "k" or is_capture(p, m):
            continue
        ksq = p.king_square(opponent(line.solver))
        if chebyshev(m.to_square, ksq) > chebyshev(m.from_square, ksq) and line.not_worse_after(i):
            out.append(ThemeHit(Theme.ATTACKING_WITHDRAWAL, i, m.uci()))
    return out


def fork(line: Line) -> list:
    out = []
    for i in line.solver_plies():
        m = line.pv[i]
        after = line.after(i)
        mover = after.board[m.to_square]
        enemy = opponent(line.solver)
        targets = []
        for sq in attacks_from(after.board, m.to_square):
            pc = after.board[sq]
            if pc is None or color_of(pc) != enemy:
                continue
            if pc.lower() == "k" or PIECE_VALUES[pc.lower()] > PIECE_VALUES[mover.lower()] \
                    or not is_attacked(after.board, sq, enemy):
                targets.append(sq)
        if len(targets) >= 2:
            out.append(ThemeHit(Theme.FORK, i, ",".join(square_name(s) for s in targets)))
    return out


def _step(sq: int, d) -> Optional[int]:
    f, r = (sq & 7) + d[0], (sq >> 3) + d[1]
    if 0 <= f < 8 and 0 <= r < 8:
        return r * 8 + f
    return None


def pin(line: Line) -> list:
    out = []
    for i in line.solver_plies():
        m = line.pv[i]
        after = line.after(i)
        mover = after.board[m.to_square]
        kind = mover.lower()
        dirs = {"b": BISHOP_DIRECTIONS, "r": ROOK_DIRECTIONS, "q": ROOK_DIRECTIONS + BISHOP_DIRECTIONS}.get(kind)
        if dirs is None:
            continue
        enemy = opponent(line.solver)
        for d in dirs:
            sq = _step(m.to_square, d)
            pinned = None
            while sq is not None:
                pc = after.board[sq]
                if pc is not None:
                    if pinned is None:
                        if color_of(pc) != enemy or pc.lower() == "k":
                            break
                        pinned = sq
                    else:
                        if pc == ("K" if enemy == "w" else "k"):
                            out.append(ThemeHit(Theme.PIN, i, f"{square_name(pinned)} to {square_name(sq)}"))
                        break
                sq = _step(sq, d)
    return out


DETECTORS = {
    Theme.UNDERPROMOTION: underpromotion,
    Theme.SACRIFICE: sacrifice,
    Theme.SMOTHERED_MATE: smothered_mate,
    Theme.BACK_RANK_MATE: back_rank_mate,
    Theme.DOUBLE_CHECK: double_check,
    Theme.EN_PASSANT: en_passant,
    Theme.CASTLING: castling,
    Theme.QUIET_MOVE: quiet_move,
    Theme.SWITCHBACK: switchback,
    Theme.KNIGHT_ON_RIM: knight_on_rim,
    Theme.ATTACKING_WITHDRAWAL: attacking_withdrawal,
    Theme.FORK: fork,
    Theme.PIN: pin,
}


def detect(p: Position, pv: Sequence[Move], evals: Optional[Sequence[float]] = None,
           cfg: ThemeConfig = ThemeConfig()) -> set:
    """All theme hits along ``pv``; raises IllegalMoveError for an illegal PV."""
    line = Line(p, pv, evals, cfg)
    hits = set()
    for fn in DETECTORS.values():
        hits.update(fn(line))
    return hits


def theme_names(hits) -> list:
    return sorted({h.theme.value for h in hits})


def histogram(theme_sets: Sequence) -> list:
    """``[(theme, count, share)]`` for every theme; share is over records."""
    n = len(theme_sets)
    rows = []
    for t in Theme:
        count = sum(1 for names in theme_sets if t.value in names)
        rows.append((t.value, count, count / n if n else 0.0))
    return rows
