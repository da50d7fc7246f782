"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL ...`` line before it
asserts, so ``pytest -v -s`` (or the tee'd log) shows the verdict table.
"""

import itertools
import json
import math
import os
import shutil
import time
import warnings

import chess
import numpy as np
import pytest
from sklearn.metrics import average_precision_score

from conftest import FIXTURES, line
from puzzlegen.config import PipelineConfig, load_config
from puzzlegen.core import Move, apply_move, parse_fen, parse_san, perft, starting_position
from puzzlegen.engine import ScriptedEngine, analyze_trace
from puzzlegen.evolve import EvoConfig, run_worker, select_parents, EvoEntry
from puzzlegen.features import GRID_STEP, trace_features
from puzzlegen.novelty import diversity_reward, outcome_reward, reward_table
from puzzlegen.pipeline import mine, random_legal_candidates
from puzzlegen.ranking import average_precision, rank_and_ap
from puzzlegen.scoring import SyntheticScorer
from puzzlegen.themes import detect
from puzzlegen.uniqueness import check_uniqueness

from test_themes import CASES as THEME_CASES
from test_uniqueness import EXPECTED as UNIQUENESS_EXPECTED


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} {detail}")
        assert ok, f"criterion {n}: {detail}"
    return emit


def test_criterion_1_perft(verdict):
    expected = [20, 400, 8902, 197281]
    start = time.perf_counter()
    got = [perft(starting_position(), d) for d in (1, 2, 3, 4)]
    elapsed = time.perf_counter() - start
    board = chess.Board()

    def oracle(depth):
        if depth == 0:
            return 1
        total = 0
        for m in list(board.legal_moves):
            board.push(m)
            total += oracle(depth - 1)
            board.pop()
        return total

    ok = got == expected and [oracle(d) for d in (1, 2, 3)] == expected[:3] and elapsed < 10
    verdict(1, ok, f"perft 1-4 = {got} in {elapsed:.2f}s")


def test_criterion_2_uniqueness_golden(verdict):
    script = FIXTURES / "uniqueness.script"
    fens = [row[0] for row in UNIQUENESS_EXPECTED]
    runs = []
    mismatches = []
    for _ in range(2):
        engine = ScriptedEngine.from_file(script)
        out = {}
        for fen, unique, r_uni, pv, failure, mode in UNIQUENESS_EXPECTED:
            v = check_uniqueness(parse_fen(fen), engine)
            if (v.is_unique, v.failure_ply, v.mode, [m.uci() for m in v.solution_pv]) != (unique, failure, mode, pv) \
                    or abs(v.r_uni - r_uni) > 1e-12:
                mismatches.append(fen)
            out[fen] = v.to_dict()
        runs.append(json.dumps(out, sort_keys=True, indent=1))
    golden = (FIXTURES / "uniqueness_golden.json").read_text()
    has_two_mates = any(row[0].startswith("7k/6pp/") and not row[1] for row in UNIQUENESS_EXPECTED)
    has_forced = any(len(parse_fen(f).legal_moves()) == 1 for f in fens)
    ok = len(fens) >= 6 and not mismatches and runs[0] == runs[1] == golden and has_two_mates and has_forced
    verdict(2, ok, f"{len(fens)} scripted positions, mismatches={mismatches}, byte-stable={runs[0] == runs[1] == golden}")


STEP_SCRIPT = """
position 7k/8/8/5QK1/8/8/8/8 w - - 0 1
budget depth 1-10
f5e5 wr 0.35
f5f7 wr 0.3
budget depth 11-14
f5e5 wr 0.95
f5f7 wr 0.9
budget depth 15-20
f5f7 wr 0.9
f5e5 wr 0.2
"""

DRIFT_SCRIPT = "position 7k/8/8/5QK1/8/8/8/8 w - - 0 1\n" + "".join(
    f"budget depth {t}\nf5f7 wr {v}\nf5e5 wr 0.1\n"
    for t, v in enumerate([0.1, 0.5, 0.7, 0.95, 0.8, 0.86, 0.93, 0.88, 0.91, 0.9], 1))


def test_criterion_3_trace_features(verdict):
    p = parse_fen("7k/8/8/5QK1/8/8/8/8 w - - 0 1")
    sol = Move.from_uci("f5f7")
    trace = analyze_trace(ScriptedEngine.from_text(STEP_SCRIPT), p, sol, range(1, 21))
    gap, auc, cp_value, cp_move = trace_features(trace, tau=0.05)
    # hand integration: |V_T - V_t| is 0.6 on t=1..10 and 0 from t=11, trapezoids over 19 unit steps
    want = (0.6, (9 * 0.6 + 0.3) / 19, 11 / 20, 15 / 20)
    err = max(abs(a - b) for a, b in zip((gap, auc, cp_value, cp_move), want))
    drift = analyze_trace(ScriptedEngine.from_text(DRIFT_SCRIPT), p, sol, range(1, 11))
    taus = np.linspace(0.0, 0.9, 91)
    cps = [trace_features(drift, tau=float(t))[2] for t in taus]
    monotone = all(b <= a + 1e-12 for a, b in zip(cps, cps[1:]))
    verdict(3, err < 1e-9 and monotone, f"max error {err:.2e}, v_cp non-increasing in tau: {monotone}")


def _all_tied_expected(n, m):
    return sum((1 + (m - 1) * (i - 1) / (n - 1)) / i for i in range(1, n + 1)) / n


def test_criterion_4_average_precision(verdict):
    checked = 0
    worst = 0.0
    for n in range(1, 7):
        for labels in itertools.product([0, 1], repeat=n):
            if not any(labels):
                continue
            hits, precs = 0, []
            for k, lab in enumerate(labels, 1):
                if lab:
                    hits += 1
                    precs.append(hits / k)
            brute = sum(precs) / len(precs)
            sk = average_precision_score(list(labels), [n - i for i in range(n)])
            worst = max(worst, abs(average_precision(list(labels)) - brute), abs(brute - sk))
            checked += 1
    tie_err = 0.0
    for n in range(2, 9):
        for m in range(1, n + 1):
            labels = [True] * m + [False] * (n - m)
            got = rank_and_ap([0.5] * n, labels, seed=n * 10 + m)
            tie_err = max(tie_err, abs(got - _all_tied_expected(n, m)))
    ok = worst < 1e-12 and tie_err <= 0.02 and checked == sum(2 ** n - 1 for n in range(1, 7))
    verdict(4, ok, f"{checked} sequences exact (max err {worst:.1e}), tied AP max deviation {tie_err:.4f}")


def test_criterion_5_reward_truth_table(verdict):
    legal_ok = "7k/8/8/5QK1/8/8/8/8 w - - 0 1"
    legal_bad_census = "4k3/8/8/8/8/8/8/NNN1K3 w - - 0 1"
    illegal = "8/8/8/8/8/8/8/8 w - - 0 1"
    wrong = []
    for legal, unique, i_cnt, census_ok, gate in itertools.product([False, True], repeat=5):
        fen = illegal if not legal else (legal_ok if census_ok else legal_bad_census)
        outcome = outcome_reward(fen, unique, i_cnt)
        div = diversity_reward(outcome, gate)
        if not legal:
            want = (-2, -2)
        elif unique and i_cnt and census_ok:
            want = (1, 1 if gate else 0)
        else:
            want = (0, 0)
        if (outcome, div) != want or reward_table(legal, unique, i_cnt, census_ok, gate) != want:
            wrong.append((legal, unique, i_cnt, census_ok, gate))
    verdict(5, not wrong, f"32 combinations, {len(wrong)} wrong")


def test_criterion_6_constants(verdict):
    cfg = load_config(environ={})
    got = dict(tau_uni=cfg.tau_uni, tau_cnt=cfg.tau_cnt, tau_board=cfg.tau_board, tau_pv=cfg.tau_pv,
               pv_truncation_filter=cfg.pv_truncation_filter, pv_truncation_eval=cfg.pv_truncation_eval,
               replay_k=cfg.replay_k, subsample=cfg.subsample, mate_horizon=cfg.mate_horizon,
               grid_step=GRID_STEP, weights=cfg.weights().nonzero())
    want = dict(tau_uni=0.5, tau_cnt=0.1, tau_board=6, tau_pv=1, pv_truncation_filter=1, pv_truncation_eval=6,
                replay_k=16, subsample=2000, mate_horizon=15, grid_step=0.1,
                weights={"depth_cp_move": 0.8, "neg_capture_material": 0.1})
    bad = {k: got[k] for k in want if got[k] != want[k]}
    verdict(6, not bad, f"defaults {'match' if not bad else 'differ: ' + str(bad)}")


def test_criterion_7_diversity_decay(verdict):
    start = time.perf_counter()
    windows, window_steps, batch = 11, 100, 8
    cfg = PipelineConfig(engine="synthetic", exact_gate=True, batch_size=batch, seed=0)
    res = mine(cfg, random_legal_candidates(windows * window_steps * batch, seed=0, min_pieces=0, max_pieces=1),
               SyntheticScorer())
    per_window = window_steps * batch
    counts = [sum(1 for r in res.records[w * per_window:(w + 1) * per_window]
                  if r["gate"] and r["gate"]["passed"]) for w in range(windows)]
    steady = sum(1 for a, b in zip(counts, counts[1:]) if b <= a)
    elapsed = time.perf_counter() - start
    verdict(7, steady >= 8 and elapsed < 60,
            f"gate acceptances per 100 steps {counts}, non-increasing {steady}/10, {elapsed:.1f}s")


def test_criterion_8_evolution(verdict):
    seeds = ["6k1/5ppp/8/8/8/8/5PPP/3R2K1 w - - 0 1", "8/8/4k3/8/8/8/4K3/2Q5 w - - 0 1"]
    res = run_worker(EvoConfig(iterations=200, seed=1), seeds, SyntheticScorer())
    elitist = len(res.best_history) == 201 and all(b >= a for a, b in zip(res.best_history, res.best_history[1:]))
    buf = [EvoEntry(str(i), f, 0) for i, f in enumerate([0.1, 0.4, 0.9, 0.6])]
    n = 10_000
    cold = select_parents(buf, 1e-4, n, np.random.default_rng(0))
    cold_share = sum(1 for e in cold if e.fen == "2") / n
    hot = select_parents(buf, 1e6, n, np.random.default_rng(1))
    sigma = math.sqrt(n * 0.25 * 0.75)
    hot_dev = max(abs(sum(1 for e in hot if e.fen == str(i)) - n / 4) / sigma for i in range(4))
    ok = elitist and cold_share > 0.99 and hot_dev < 3
    verdict(8, ok, f"elitist over 200 iterations: {elitist}, T->0 argmax share {cold_share:.4f}, "
                   f"T->inf max deviation {hot_dev:.2f} sigma")


def test_criterion_9_themes(verdict):
    failures = []
    for theme, fen, pv, evals, ply in THEME_CASES:
        p, moves = line(fen, *pv.split())
        plies = [h.trigger_ply for h in detect(p, moves, evals) if h.theme.value == theme]
        if (ply is None and plies) or (ply is not None and ply not in plies):
            failures.append((theme, fen, pv))
    start = parse_fen("QR3nk1/p4pp1/7p/6q1/8/2PB3P/r4p1K/5R2 b - - 0 1")
    q, pv = start, []
    for text in "Qg1+ Rxg1 f1=N+ Kh1 Rh2#".split():
        m = parse_san(q, text)
        pv.append(m)
        q = apply_move(q, m)
    under = [h.trigger_ply for h in detect(start, pv) if h.theme.value == "underpromotion"]
    ok = not failures and under == [2]
    verdict(9, ok, f"{len(THEME_CASES)} fixtures, {len(failures)} failing; f1=N line underpromotion at plies {under}")


LICHESS_ENV = "LICHESS_PUZZLES_CSV"
ENGINE_ENV = "UCI_ENGINE"


def test_criterion_10_lichess_conformance(capsys):
    engine = os.environ.get(ENGINE_ENV) or shutil.which("stockfish")
    csv_path = os.environ.get(LICHESS_ENV)
    if not engine or not csv_path:
        msg = (f"criterion 10 skipped: needs a UCI engine (${ENGINE_ENV} or stockfish on PATH) "
               f"and a Lichess puzzle CSV (${LICHESS_ENV})")
        warnings.warn(msg)
        with capsys.disabled():
            print(f"\ncriterion 10: SKIP {msg}")
        pytest.skip(msg)
    from puzzlegen.engine import EngineConfig, open_engine
    from puzzlegen.pipeline import ingest_lichess_csv

    start = time.perf_counter()
    cfg = PipelineConfig(engine=engine)
    session = open_engine(EngineConfig.from_spec(engine))
    passed = total = 0
    try:
        for rec in itertools.islice(ingest_lichess_csv(csv_path), 100):
            total += 1
            passed += check_uniqueness(parse_fen(rec.fen), session, cfg.uniqueness()).is_unique
    finally:
        session.close()
    elapsed = time.perf_counter() - start
    rate = passed / total if total else 0.0
    if rate < 0.8 or elapsed > 1800:
        warnings.warn(f"criterion 10 below target: {rate:.0%} unique in {elapsed:.0f}s")
    with capsys.disabled():
        print(f"\ncriterion 10: {'PASS' if rate >= 0.8 else 'WARN'} {passed}/{total} unique in {elapsed:.0f}s")
