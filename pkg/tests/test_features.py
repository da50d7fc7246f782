import pytest
from hypothesis import given, settings, strategies as st

from puzzlegen.core import Move, parse_fen
from puzzlegen.engine import Checkpoint, EvalTrace
from puzzlegen.features import (
    FEATURE_NAMES,
    DEFAULT_WEIGHTS,
    FeatureVector,
    WeightVector,
    features_from_traces,
    qualify,
    score,
    static_features,
    trace_features,
)

A = Move.from_uci("f5f7")
B = Move.from_uci("f5e5")


def make_trace(values, best=None, ts=None):
    ts = ts or list(range(1, len(values) + 1))
    best = best or [A] * len(values)
    return EvalTrace(A, "depth", tuple(Checkpoint(t, v, m) for t, v, m in zip(ts, values, best)))


def riemann_auc(ts, values, pieces=1000):
    """Midpoint sums over the interpolated distances |V_T - V_t|, segment by segment."""
    d = [abs(values[-1] - v) for v in values]
    total = 0.0
    for i in range(len(ts) - 1):
        h = (ts[i + 1] - ts[i]) / pieces
        for k in range(pieces):
            x = (k + 0.5) / pieces
            total += (d[i] + (d[i + 1] - d[i]) * x) * h
    return total / (ts[-1] - ts[0])


def test_constant_trace():
    gap, auc, cp_value, cp_move = trace_features(make_trace([0.8] * 5, ts=[2, 4, 6, 8, 10]))
    assert (gap, auc) == (0.0, 0.0)
    assert cp_value == pytest.approx(2 / 10)
    assert cp_move == pytest.approx(2 / 10)


def test_step_trace_hand_integrated():
    values = [0.3] * 10 + [0.9] * 10
    best = [B] * 14 + [A] * 6
    gap, auc, cp_value, cp_move = trace_features(make_trace(values, best), tau=0.05)
    assert gap == pytest.approx(0.6, abs=1e-9)
    # nine full intervals at 0.6 plus the half-interval ramp from t=10 to t=11
    assert auc == pytest.approx((9 * 0.6 + 0.3) / 19, abs=1e-9)
    assert cp_value == pytest.approx(11 / 20, abs=1e-9)
    assert cp_move == pytest.approx(15 / 20, abs=1e-9)


def test_critical_point_needs_stability():
    # touches the final value at t=2 but drifts away again
    values = [0.2, 0.9, 0.2, 0.9, 0.9]
    _, _, cp_value, _ = trace_features(make_trace(values))
    assert cp_value == pytest.approx(4 / 5)


def test_move_never_settles():
    _, _, _, cp_move = trace_features(make_trace([0.5, 0.5, 0.5], [A, A, B]))
    assert cp_move == 1.0


def test_short_trace_rejected():
    with pytest.raises(ValueError):
        trace_features(make_trace([0.5]))


steps = st.lists(st.tuples(st.integers(1, 4), st.floats(0, 1)), min_size=1, max_size=6)


def piecewise(blocks):
    values = []
    for width, v in blocks:
        values.extend([v] * width)
    if len(values) < 2:
        values = values * 2
    return values


@settings(max_examples=60, deadline=None)
@given(steps, st.lists(st.integers(1, 3), min_size=40, max_size=40))
def test_auc_matches_riemann_refinement(blocks, gaps):
    values = piecewise(blocks)
    ts = [1]
    for g in gaps[: len(values) - 1]:
        ts.append(ts[-1] + g)
    _, auc, _, _ = trace_features(make_trace(values, ts=ts))
    assert auc == pytest.approx(riemann_auc(ts, values), abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(steps, st.lists(st.booleans(), min_size=24, max_size=24), st.floats(0, 1), st.floats(0, 1))
def test_critical_points_monotone_in_tau(blocks, on_move, t1, t2):
    values = piecewise(blocks)
    best = [A if f else B for f in on_move[: len(values)]]
    lo, hi = sorted((t1, t2))
    _, _, v_lo, m_lo = trace_features(make_trace(values, best), lo)
    _, _, v_hi, m_hi = trace_features(make_trace(values, best), hi)
    assert v_hi <= v_lo
    assert m_hi <= m_lo


def test_features_by_dimension():
    out = features_from_traces({"depth": make_trace([0.3, 0.9]), "movetime": make_trace([0.5, 0.5])})
    assert out["depth_auc"] > 0 and out["time_auc"] == 0
    assert out["gap"] == pytest.approx(0.6)
    with pytest.raises(ValueError):
        features_from_traces({"hash": make_trace([0.3, 0.9])})


def test_static_quiet_move():
    p = parse_fen("7k/8/6K1/8/8/8/8/5Q2 w - - 0 1")
    f = static_features(p, Move.from_uci("f1e2"))
    assert f["neg_capture_material"] == 0 and f["giving_check"] == 0 and f["in_check"] == 0


def test_static_queen_capture():
    p = parse_fen("4k3/8/8/3q4/8/8/8/3RK3 w - - 0 1")
    f = static_features(p, Move.from_uci("d1d5"))
    assert f["neg_capture_material"] == -1.0


def test_static_check_flags():
    p = parse_fen("7k/8/6K1/8/8/8/8/5Q2 w - - 0 1")
    f = static_features(p, Move.from_uci("f1f8"))
    assert f["giving_check"] == 1.0 and f["mate_in_one"] == 1.0
    in_check = parse_fen("4k3/8/8/8/8/8/4r3/4K3 w - - 0 1")
    assert static_features(in_check, Move.from_uci("e1d1"))["in_check"] == 1.0


def test_underpromotion_material():
    p = parse_fen("7k/2P5/8/8/8/8/8/K7 w - - 0 1")
    f = static_features(p, Move.from_uci("c7c8n"))
    assert f["neg_promote_material"] == pytest.approx(-3 / 9)


def test_score_examples():
    f = FeatureVector(depth_cp_move=1.0)
    assert score(f, DEFAULT_WEIGHTS) == pytest.approx(0.8)
    assert qualify(score(f, DEFAULT_WEIGHTS))
    assert score(f, WeightVector()) == 0 and not qualify(0.0)
    queen = FeatureVector(neg_capture_material=-1.0)
    r = score(queen, WeightVector({"neg_capture_material": 0.1}))
    assert r == pytest.approx(-0.1) and not qualify(r)
    assert not qualify(0.1)


def test_weight_grid():
    with pytest.raises(ValueError):
        WeightVector({"gap": 0.15})
    with pytest.raises(ValueError):
        WeightVector({"gap": 1.1})
    with pytest.raises(ValueError):
        WeightVector({"nope": 0.1})


def test_weights_file_round_trip(tmp_path):
    path = tmp_path / "w.txt"
    DEFAULT_WEIGHTS.save(path)
    assert WeightVector.load(path) == DEFAULT_WEIGHTS


grid = st.lists(st.integers(0, 5), min_size=len(FEATURE_NAMES), max_size=len(FEATURE_NAMES))
feats = st.lists(st.floats(-2, 2), min_size=len(FEATURE_NAMES), max_size=len(FEATURE_NAMES))


@given(grid, grid, feats)
def test_score_is_linear(w1, w2, values):
    f = FeatureVector(**dict(zip(FEATURE_NAMES, values)))
    a = WeightVector.from_list([x / 10 for x in w1])
    b = WeightVector.from_list([x / 10 for x in w2])
    both = WeightVector.from_list([(x + y) / 10 for x, y in zip(w1, w2)])
    assert score(f, both) == pytest.approx(score(f, a) + score(f, b), abs=1e-9)


def test_feature_vector_rejects_nan():
    with pytest.raises(ValueError):
        FeatureVector(gap=float("nan"))
