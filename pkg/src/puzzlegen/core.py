"""Board representation, FEN I/O, legal move generation and legality checks.

Squares are integers 0..63 with a1 = 0, h1 = 7, a8 = 56. Pieces are single
characters, uppercase for white (``"PNBRQK"``) and lowercase for black. Empty
cells are ``None``.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

WHITE = "w"
BLACK = "b"
FILES = "abcdefgh"
PIECE_CHARS = "PNBRQKpnbrqk"
PROMOTION_KINDS = ("q", "r", "b", "n")
PIECE_VALUES = {"p": 1, "n": 3, "b": 3, "r": 5, "q": 9, "k": 0}
INITIAL_COUNTS = {"p": 8, "n": 2, "b": 2, "r": 2, "q": 1, "k": 1}
STARTING_FEN = "rnbqkbnr/pppppppp/8/8/8/8/PPPPPPPP/RNBQKBNR w KQkq - 0 1"

_CASTLING_ORDER = "KQkq"


class PositionError(ValueError):
    """A FEN could not be parsed or describes an illegal position.

    ``rule`` names the failed check, e.g. ``"king_count"`` or
    ``"opponent_in_check"``.
    """

    def __init__(self, rule: str, message: str):
        super().__init__(f"{rule}: {message}")
        self.rule = rule


class IllegalMoveError(ValueError):
    pass


def opponent(color: str) -> str:
    return BLACK if color == WHITE else WHITE


def color_of(piece: str) -> str:
    return WHITE if piece.isupper() else BLACK


def square_file(sq: int) -> int:
    return sq & 7


def square_rank(sq: int) -> int:
    return sq >> 3


def square_name(sq: int) -> str:
    return FILES[sq & 7] + str((sq >> 3) + 1)


def parse_square(name: str) -> int:
    if len(name) != 2 or name[0] not in FILES or name[1] not in "12345678":
        raise ValueError(f"bad square {name!r}")
    return FILES.index(name[0]) + 8 * (int(name[1]) - 1)


def chebyshev(a: int, b: int) -> int:
    return max(abs((a & 7) - (b & 7)), abs((a >> 3) - (b >> 3)))


# Precomputed geometry ------------------------------------------------------

def _offsets_targets(deltas):
    table = []
    for sq in range(64):
        f, r = sq & 7, sq >> 3
        out = []
        for df, dr in deltas:
            nf, nr = f + df, r + dr
            if 0 <= nf < 8 and 0 <= nr < 8:
                out.append(nr * 8 + nf)
        table.append(tuple(out))
    return tuple(table)


def _rays(directions):
    table = []
    for sq in range(64):
        f, r = sq & 7, sq >> 3
        rays = []
        for df, dr in directions:
            ray = []
            nf, nr = f + df, r + dr
            while 0 <= nf < 8 and 0 <= nr < 8:
                ray.append(nr * 8 + nf)
                nf += df
                nr += dr
            if ray:
                rays.append(tuple(ray))
        table.append(tuple(rays))
    return tuple(table)


KNIGHT_TARGETS = _offsets_targets(
    [(1, 2), (2, 1), (2, -1), (1, -2), (-1, -2), (-2, -1), (-2, 1), (-1, 2)]
)
KING_TARGETS = _offsets_targets(
    [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)]
)
ROOK_DIRECTIONS = ((1, 0), (-1, 0), (0, 1), (0, -1))
BISHOP_DIRECTIONS = ((1, 1), (1, -1), (-1, 1), (-1, -1))
ROOK_RAYS = _rays(ROOK_DIRECTIONS)
BISHOP_RAYS = _rays(BISHOP_DIRECTIONS)
QUEEN_RAYS = tuple(r + b for r, b in zip(ROOK_RAYS, BISHOP_RAYS))


@dataclass(frozen=True)
class Move:
    from_square: int
    to_square: int
    promotion: Optional[str] = None

    def uci(self) -> str:
        return square_name(self.from_square) + square_name(self.to_square) + (self.promotion or "")

    @classmethod
    def from_uci(cls, text: str) -> "Move":
        text = text.strip()
        if len(text) not in (4, 5):
            raise ValueError(f"bad UCI move {text!r}")
        promo = text[4] if len(text) == 5 else None
        if promo is not None and promo not in PROMOTION_KINDS:
            raise ValueError(f"bad promotion in {text!r}")
        return cls(parse_square(text[:2]), parse_square(text[2:4]), promo)

    def __str__(self) -> str:
        return self.uci()


@dataclass(frozen=True)
class Position:
    board: tuple
    side_to_move: str = WHITE
    castling: str = ""
    en_passant: Optional[int] = None
    halfmove_clock: int = 0
    fullmove_number: int = 1
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False, hash=False)

    def piece_at(self, sq: int) -> Optional[str]:
        return self.board[sq]

    def king_square(self, color: str) -> Optional[int]:
        king = "K" if color == WHITE else "k"
        for sq, pc in enumerate(self.board):
            if pc == king:
                return sq
        return None

    def fen(self) -> str:
        return serialize_fen(self)

    def board_fen(self) -> str:
        return serialize_fen(self).split(" ")[0]

    def key(self) -> str:
        """FEN without the move clocks; identifies the position for lookups."""
        return " ".join(serialize_fen(self).split(" ")[:4])

    def legal_moves(self) -> list:
        moves = self._cache.get("legal")
        if moves is None:
            moves = _legal_moves(self)
            self._cache["legal"] = moves
        return list(moves)

    def is_check(self) -> bool:
        ksq = self.king_square(self.side_to_move)
        return ksq is not None and is_attacked(self.board, ksq, opponent(self.side_to_move))

    def is_checkmate(self) -> bool:
        return self.is_check() and not self.legal_moves()

    def is_stalemate(self) -> bool:
        return not self.is_check() and not self.legal_moves()

    def apply(self, move: Move) -> "Position":
        return apply_move(self, move)

    def __str__(self) -> str:
        rows = []
        for rank in range(7, -1, -1):
            rows.append(" ".join(self.board[rank * 8 + f] or "." for f in range(8)))
        return "\n".join(rows)


# FEN ------------------------------------------------------------------------

def parse_fen(text: str, validate: bool = True) -> Position:
    """Parse a 6-field FEN. With ``validate`` the position must also be legal."""
    fields = text.split()
    if len(fields) == 4:
        fields += ["0", "1"]
    if len(fields) != 6:
        raise PositionError("fields", f"expected 6 fields, got {len(fields)}")
    placement, side, castling, ep, half, full = fields

    ranks = placement.split("/")
    if len(ranks) != 8:
        raise PositionError("board", f"expected 8 ranks, got {len(ranks)}")
    board = [None] * 64
    for i, row in enumerate(ranks):
        rank = 7 - i
        f = 0
        for ch in row:
            if ch.isdigit():
                if ch == "0":
                    raise PositionError("board", "zero run length")
                f += int(ch)
            elif ch in PIECE_CHARS:
                if f >= 8:
                    raise PositionError("board", f"rank {rank + 1} overflows")
                board[rank * 8 + f] = ch
                f += 1
            else:
                raise PositionError("piece", f"illegal piece character {ch!r}")
            if f > 8:
                raise PositionError("board", f"rank {rank + 1} overflows")
        if f != 8:
            raise PositionError("board", f"rank {rank + 1} has {f} squares")

    if side not in (WHITE, BLACK):
        raise PositionError("side", f"bad side to move {side!r}")

    if castling == "-":
        rights = ""
    else:
        if any(c not in _CASTLING_ORDER for c in castling) or len(set(castling)) != len(castling):
            raise PositionError("castling", f"bad castling field {castling!r}")
        rights = "".join(c for c in _CASTLING_ORDER if c in castling)

    if ep == "-":
        ep_sq = None
    else:
        try:
            ep_sq = parse_square(ep)
        except ValueError:
            raise PositionError("en_passant", f"bad en passant square {ep!r}") from None

    try:
        halfmove = int(half)
        fullmove = int(full)
    except ValueError:
        raise PositionError("clock", "non-integer move clocks") from None
    if halfmove < 0 or fullmove < 1:
        raise PositionError("clock", "halfmove must be >= 0 and fullmove >= 1")

    pos = Position(tuple(board), side, rights, ep_sq, halfmove, fullmove)
    if validate:
        check_legal(pos)
    return pos


def serialize_fen(p: Position) -> str:
    rows = []
    for rank in range(7, -1, -1):
        row = ""
        empty = 0
        for f in range(8):
            pc = p.board[rank * 8 + f]
            if pc is None:
                empty += 1
            else:
                if empty:
                    row += str(empty)
                    empty = 0
                row += pc
        if empty:
            row += str(empty)
        rows.append(row)
    ep = square_name(p.en_passant) if p.en_passant is not None else "-"
    return f"{'/'.join(rows)} {p.side_to_move} {p.castling or '-'} {ep} {p.halfmove_clock} {p.fullmove_number}"


def starting_position() -> Position:
    return parse_fen(STARTING_FEN)


# Legality --------------------------------------------------------------------

def legality_violation(p: Position) -> Optional[PositionError]:
    """Return the first violated legality rule, or None for a legal position."""
    counts = Counter(pc for pc in p.board if pc)
    if counts["K"] != 1 or counts["k"] != 1:
        return PositionError("king_count", f"white kings={counts['K']}, black kings={counts['k']}")
    for sq in list(range(8)) + list(range(56, 64)):
        if p.board[sq] in ("P", "p"):
            return PositionError("back_rank_pawn", f"pawn on {square_name(sq)}")
    if p.en_passant is not None:
        ep = p.en_passant
        if p.side_to_move == WHITE:
            ok = square_rank(ep) == 5 and p.board[ep - 8] == "p" and p.board[ep] is None and p.board[ep + 8] is None
        else:
            ok = square_rank(ep) == 2 and p.board[ep + 8] == "P" and p.board[ep] is None and p.board[ep - 8] is None
        if not ok:
            return PositionError("en_passant", f"en passant square {square_name(ep)} inconsistent")
    waiting = opponent(p.side_to_move)
    ksq = p.king_square(waiting)
    if is_attacked(p.board, ksq, p.side_to_move):
        return PositionError("opponent_in_check", "side not to move is in check")
    return None


def check_legal(p: Position) -> None:
    err = legality_violation(p)
    if err is not None:
        raise err


def is_legal(p: Position) -> bool:
    return legality_violation(p) is None


# Attacks ---------------------------------------------------------------------

def is_attacked(board, sq: int, by: str) -> bool:
    """True if any piece of color ``by`` attacks ``sq``."""
    if by == WHITE:
        pawn, knight, bishop, rook, queen, king = "PNBRQK"
        f = sq & 7
        if f > 0 and sq >= 9 and board[sq - 9] == pawn:
            return True
        if f < 7 and sq >= 7 and board[sq - 7] == pawn:
            return True
    else:
        pawn, knight, bishop, rook, queen, king = "pnbrqk"
        f = sq & 7
        if f < 7 and sq <= 54 and board[sq + 9] == pawn:
            return True
        if f > 0 and sq <= 56 and board[sq + 7] == pawn:
            return True
    for t in KNIGHT_TARGETS[sq]:
        if board[t] == knight:
            return True
    for t in KING_TARGETS[sq]:
        if board[t] == king:
            return True
    for ray in ROOK_RAYS[sq]:
        for t in ray:
            pc = board[t]
            if pc is not None:
                if pc == rook or pc == queen:
                    return True
                break
    for ray in BISHOP_RAYS[sq]:
        for t in ray:
            pc = board[t]
            if pc is not None:
                if pc == bishop or pc == queen:
                    return True
                break
    return False


def attacks_from(board, sq: int) -> list:
    """Squares attacked by the piece standing on ``sq``."""
    pc = board[sq]
    if pc is None:
        return []
    kind = pc.lower()
    if kind == "p":
        f = sq & 7
        step = 8 if pc == "P" else -8
        out = []
        for df in (-1, 1):
            t = sq + step + df
            if 0 <= f + df < 8 and 0 <= t < 64:
                out.append(t)
        return out
    if kind == "n":
        return list(KNIGHT_TARGETS[sq])
    if kind == "k":
        return list(KING_TARGETS[sq])
    rays = {"b": BISHOP_RAYS, "r": ROOK_RAYS, "q": QUEEN_RAYS}[kind][sq]
    out = []
    for ray in rays:
        for t in ray:
            out.append(t)
            if board[t] is not None:
                break
    return out


def attackers(board, sq: int, by: str) -> list:
    """Squares of pieces of color ``by`` attacking ``sq``."""
    return [s for s, pc in enumerate(board) if pc is not None and color_of(pc) == by and sq in attacks_from(board, s)]


# Move generation ------------------------------------------------------------

def _pseudo_moves(p: Position):
    board = p.board
    white = p.side_to_move == WHITE
    moves = []
    for sq in range(64):
        pc = board[sq]
        if pc is None or pc.isupper() != white:
            continue
        kind = pc.lower()
        if kind == "p":
            step = 8 if white else -8
            start_rank = 1 if white else 6
            promo_rank = 7 if white else 0
            t = sq + step
            if 0 <= t < 64 and board[t] is None:
                if t >> 3 == promo_rank:
                    for k in PROMOTION_KINDS:
                        moves.append(Move(sq, t, k))
                else:
                    moves.append(Move(sq, t))
                    t2 = t + step
                    if sq >> 3 == start_rank and board[t2] is None:
                        moves.append(Move(sq, t2))
            f = sq & 7
            for df in (-1, 1):
                if not 0 <= f + df < 8:
                    continue
                t = sq + step + df
                if not 0 <= t < 64:
                    continue
                target = board[t]
                if target is not None and target.isupper() != white:
                    if t >> 3 == promo_rank:
                        for k in PROMOTION_KINDS:
                            moves.append(Move(sq, t, k))
                    else:
                        moves.append(Move(sq, t))
                elif target is None and t == p.en_passant:
                    moves.append(Move(sq, t))
        elif kind == "n" or kind == "k":
            for t in (KNIGHT_TARGETS if kind == "n" else KING_TARGETS)[sq]:
                target = board[t]
                if target is None or target.isupper() != white:
                    moves.append(Move(sq, t))
        else:
            rays = BISHOP_RAYS if kind == "b" else ROOK_RAYS if kind == "r" else QUEEN_RAYS
            for ray in rays[sq]:
                for t in ray:
                    target = board[t]
                    if target is None:
                        moves.append(Move(sq, t))
                    else:
                        if target.isupper() != white:
                            moves.append(Move(sq, t))
                        break
    moves.extend(_castling_moves(p))
    return moves


def _castling_moves(p: Position):
    board = p.board
    out = []
    if p.side_to_move == WHITE:
        if not p.castling or board[4] != "K":
            return out
        enemy = BLACK
        if "K" in p.castling and board[7] == "R" and board[5] is None and board[6] is None:
            if not any(is_attacked(board, s, enemy) for s in (4, 5, 6)):
                out.append(Move(4, 6))
        if "Q" in p.castling and board[0] == "R" and board[1] is None and board[2] is None and board[3] is None:
            if not any(is_attacked(board, s, enemy) for s in (4, 3, 2)):
                out.append(Move(4, 2))
    else:
        if not p.castling or board[60] != "k":
            return out
        enemy = WHITE
        if "k" in p.castling and board[63] == "r" and board[61] is None and board[62] is None:
            if not any(is_attacked(board, s, enemy) for s in (60, 61, 62)):
                out.append(Move(60, 62))
        if "q" in p.castling and board[56] == "r" and board[57] is None and board[58] is None and board[59] is None:
            if not any(is_attacked(board, s, enemy) for s in (60, 59, 58)):
                out.append(Move(60, 58))
    return out


def _board_after(board, move: Move, ep_square):
    b = list(board)
    pc = b[move.from_square]
    kind = pc.lower()
    if kind == "p" and move.to_square == ep_square and b[move.to_square] is None and (move.from_square & 7) != (move.to_square & 7):
        b[move.to_square - 8 if pc == "P" else move.to_square + 8] = None
    b[move.from_square] = None
    if move.promotion:
        pc = move.promotion.upper() if pc.isupper() else move.promotion
    b[move.to_square] = pc
    if kind == "k" and abs(move.to_square - move.from_square) == 2:
        if move.to_square > move.from_square:
            b[move.from_square + 1], b[move.from_square + 3] = b[move.from_square + 3], None
        else:
            b[move.from_square - 1], b[move.from_square - 4] = b[move.from_square - 4], None
    return b


def _legal_moves(p: Position) -> tuple:
    us = p.side_to_move
    them = opponent(us)
    king = "K" if us == WHITE else "k"
    ksq = p.king_square(us)
    out = []
    for m in _pseudo_moves(p):
        b = _board_after(p.board, m, p.en_passant)
        k = m.to_square if m.from_square == ksq else ksq
        if k is None or b[k] != king:
            k = next((s for s, pc in enumerate(b) if pc == king), None)
            if k is None:
                out.append(m)
                continue
        if not is_attacked(b, k, them):
            out.append(m)
    return tuple(out)


def legal_moves(p: Position) -> list:
    """All legal moves under FIDE rules (castling, en passant, 4 promotions)."""
    return p.legal_moves()


_CORNER_RIGHTS = {0: "Q", 7: "K", 56: "q", 63: "k"}


def make_move(p: Position, m: Move) -> Position:
    """Apply ``m`` without checking it is legal."""
    pc = p.board[m.from_square]
    if pc is None:
        raise IllegalMoveError(f"no piece on {square_name(m.from_square)}")
    captured = p.board[m.to_square]
    kind = pc.lower()
    board = _board_after(p.board, m, p.en_passant)
    is_ep = kind == "p" and m.to_square == p.en_passant and captured is None and (m.from_square & 7) != (m.to_square & 7)

    rights = p.castling
    if rights:
        if kind == "k":
            rights = "".join(c for c in rights if c.isupper() != pc.isupper())
        for sq in (m.from_square, m.to_square):
            if sq in _CORNER_RIGHTS:
                rights = rights.replace(_CORNER_RIGHTS[sq], "")

    ep = None
    if kind == "p" and abs(m.to_square - m.from_square) == 16:
        ep = (m.from_square + m.to_square) // 2

    halfmove = 0 if kind == "p" or captured is not None or is_ep else p.halfmove_clock + 1
    fullmove = p.fullmove_number + (1 if p.side_to_move == BLACK else 0)
    return Position(tuple(board), opponent(p.side_to_move), rights, ep, halfmove, fullmove)


def apply_move(p: Position, m: Move) -> Position:
    """Apply a legal move; raises IllegalMoveError otherwise."""
    if m not in p.legal_moves():
        pc = p.board[m.from_square]
        if pc is None:
            reason = f"no piece on {square_name(m.from_square)}"
        elif color_of(pc) != p.side_to_move:
            reason = f"piece on {square_name(m.from_square)} belongs to the side not to move"
        else:
            reason = "move is not legal in this position"
        raise IllegalMoveError(f"{m.uci()}: {reason}")
    return make_move(p, m)


def play_line(p: Position, moves: Iterable) -> list:
    """Positions before each move and after the last (len(moves) + 1 entries)."""
    out = [p]
    for m in moves:
        if isinstance(m, str):
            m = Move.from_uci(m)
        p = apply_move(p, m)
        out.append(p)
    return out


def perft(p: Position, depth: int) -> int:
    if depth == 0:
        return 1
    moves = _legal_moves(p)
    if depth == 1:
        return len(moves)
    return sum(perft(make_move(p, m), depth - 1) for m in moves)


# Move classification ---------------------------------------------------------

def is_capture(p: Position, m: Move) -> bool:
    return p.board[m.to_square] is not None or is_en_passant(p, m)


def is_en_passant(p: Position, m: Move) -> bool:
    pc = p.board[m.from_square]
    return (
        pc is not None and pc.lower() == "p" and m.to_square == p.en_passant
        and p.board[m.to_square] is None and (m.from_square & 7) != (m.to_square & 7)
    )


def is_castling(p: Position, m: Move) -> bool:
    pc = p.board[m.from_square]
    return pc is not None and pc.lower() == "k" and abs(m.to_square - m.from_square) == 2


def captured_piece(p: Position, m: Move) -> Optional[str]:
    if is_en_passant(p, m):
        return "p" if p.side_to_move == WHITE else "P"
    return p.board[m.to_square]


def gives_check(p: Position, m: Move) -> bool:
    return make_move(p, m).is_check()


# SAN -------------------------------------------------------------------------

def san(p: Position, m: Move) -> str:
    pc = p.board[m.from_square]
    if pc is None:
        raise IllegalMoveError(f"no piece on {square_name(m.from_square)}")
    kind = pc.lower()
    if is_castling(p, m):
        text = "O-O" if m.to_square > m.from_square else "O-O-O"
    else:
        capture = is_capture(p, m)
        if kind == "p":
            text = (FILES[m.from_square & 7] + "x" if capture else "") + square_name(m.to_square)
            if m.promotion:
                text += "=" + m.promotion.upper()
        else:
            text = kind.upper()
            rivals = [
                o for o in p.legal_moves()
                if o.to_square == m.to_square and o.from_square != m.from_square and p.board[o.from_square] == pc
            ]
            if rivals:
                same_file = any((o.from_square & 7) == (m.from_square & 7) for o in rivals)
                same_rank = any((o.from_square >> 3) == (m.from_square >> 3) for o in rivals)
                if not same_file:
                    text += FILES[m.from_square & 7]
                elif not same_rank:
                    text += str((m.from_square >> 3) + 1)
                else:
                    text += square_name(m.from_square)
            text += ("x" if capture else "") + square_name(m.to_square)
    after = make_move(p, m)
    if after.is_check():
        text += "#" if not after.legal_moves() else "+"
    return text


def parse_san(p: Position, text: str) -> Move:
    wanted = text.strip().rstrip("+#!?").replace("0-0-0", "O-O-O").replace("0-0", "O-O")
    for m in p.legal_moves():
        if san(p, m).rstrip("+#") == wanted:
            return m
    raise IllegalMoveError(f"{text!r} is not a legal move in {p.fen()}")


def parse_move(p: Position, text: str) -> Move:
    """Accept either UCI or SAN notation."""
    try:
        m = Move.from_uci(text)
    except ValueError:
        return parse_san(p, text)
    if m in p.legal_moves():
        return m
    try:
        return parse_san(p, text)
    except IllegalMoveError:
        raise IllegalMoveError(f"{text}: move is not legal in {p.fen()}") from None


# Piece census ----------------------------------------------------------------

@dataclass(frozen=True)
class PieceCensus:
    counts: dict

    @property
    def exceeds_initial(self) -> bool:
        return any(n > INITIAL_COUNTS[pc.lower()] for pc, n in self.counts.items())

    def count(self, piece: str) -> int:
        return self.counts.get(piece, 0)


def piece_census(p: Position) -> PieceCensus:
    counts = Counter(pc for pc in p.board if pc)
    return PieceCensus({pc: counts.get(pc, 0) for pc in PIECE_CHARS})


def material(p: Position, color: str) -> int:
    return sum(PIECE_VALUES[pc.lower()] for pc in p.board if pc and color_of(pc) == color)


def material_balance(p: Position, color: str) -> int:
    return material(p, color) - material(p, opponent(color))


def with_board(p: Position, board, **changes) -> Position:
    return replace(p, board=tuple(board), **changes)
