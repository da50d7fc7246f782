"""Fixed-length 77-token encoding of a position.

Layout (one character per token)::

    [0:64]   board cells a8..h8, a7..h7, ..., a1..h1; '.' for empty
    [64]     side to move, 'w' or 'b'
    [65:69]  castling rights K, Q, k, q, each the letter or '.'
    [69:71]  en passant square ('e3') or '..'
    [71:74]  halfmove clock, zero padded to 3 digits
    [74:77]  fullmove number, zero padded to 3 digits

Unlike FEN there is no run-length compression, so two positions that differ
by one quiet move differ in exactly two board cells.
"""

from __future__ import annotations

from .core import FILES, PIECE_CHARS, Position, PositionError, check_legal, parse_square, square_name

SEQ_LEN = 77
BOARD_TOKENS = 64
# board cells plus side to move; the part compared by board distances
BOARD_SIDE_TOKENS = 65

# 12 pieces, '.', 'w', files other than 'b' (already a piece), digits
ALPHABET = tuple(sorted(set(PIECE_CHARS) | {".", "w"} | set(FILES) | set("0123456789")))
TOKEN_INDEX = {tok: i for i, tok in enumerate(ALPHABET)}

assert len(ALPHABET) == 31


def _board_order():
    return [rank * 8 + f for rank in range(7, -1, -1) for f in range(8)]


_ORDER = _board_order()


def encode77(p: Position) -> str:
    if p.halfmove_clock > 999 or p.fullmove_number > 999:
        raise ValueError("move clocks above 999 cannot be encoded")
    cells = "".join(p.board[sq] or "." for sq in _ORDER)
    castling = "".join(c if c in p.castling else "." for c in "KQkq")
    ep = square_name(p.en_passant) if p.en_passant is not None else ".."
    return f"{cells}{p.side_to_move}{castling}{ep}{p.halfmove_clock:03d}{p.fullmove_number:03d}"


def decode77(tokens: str, validate: bool = True) -> Position:
    if len(tokens) != SEQ_LEN:
        raise PositionError("tokens", f"expected {SEQ_LEN} tokens, got {len(tokens)}")
    bad = [t for t in tokens if t not in TOKEN_INDEX]
    if bad:
        raise PositionError("tokens", f"unknown tokens {sorted(set(bad))}")
    board = [None] * 64
    for tok, sq in zip(tokens[:64], _ORDER):
        if tok == ".":
            continue
        if tok not in PIECE_CHARS:
            raise PositionError("piece", f"{tok!r} is not a piece")
        board[sq] = tok
    side = tokens[64]
    if side not in "wb":
        raise PositionError("side", f"bad side token {side!r}")
    castling = tokens[65:69]
    for want, got in zip("KQkq", castling):
        if got not in (want, "."):
            raise PositionError("castling", f"bad castling tokens {castling!r}")
    ep_tok = tokens[69:71]
    try:
        ep = None if ep_tok == ".." else parse_square(ep_tok)
    except ValueError:
        raise PositionError("en_passant", f"bad en passant tokens {ep_tok!r}") from None
    clocks = tokens[71:77]
    if not clocks.isdigit():
        raise PositionError("clock", f"bad clock tokens {clocks!r}")
    fullmove = int(clocks[3:])
    if fullmove < 1:
        raise PositionError("clock", "fullmove must be >= 1")
    pos = Position(tuple(board), side, castling.replace(".", ""), ep, int(clocks[:3]), fullmove)
    if validate:
        check_legal(pos)
    return pos


def board_side_tokens(p: Position) -> str:
    return encode77(p)[:BOARD_SIDE_TOKENS]
