import pathlib

import pytest

from puzzlegen.core import parse_fen

FIXTURES = pathlib.Path(__file__).parent / "fixtures"


def line(fen, *ucis):
    """Position plus a list of Move objects, checked for legality."""
    from puzzlegen.core import Move, apply_move

    p = parse_fen(fen)
    moves = []
    q = p
    for u in ucis:
        m = Move.from_uci(u)
        q = apply_move(q, m)
        moves.append(m)
    return p, moves


@pytest.fixture
def fixtures():
    return FIXTURES
