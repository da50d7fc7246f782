import csv
import json
import logging

import pytest

from conftest import FIXTURES
from puzzlegen.config import PipelineConfig
from puzzlegen.core import apply_move, Move, parse_fen, starting_position
from puzzlegen.features import FeatureVector
from puzzlegen.novelty import CorpusIndex, ReplayBuffer
from puzzlegen.pipeline import (
    Candidate,
    IngestReport,
    close_scorer,
    corpus_candidates,
    ingest_lichess_csv,
    make_scorer,
    mine,
    random_legal_candidates,
    read_records,
    report,
    seed_buffer,
    stats,
    tune,
)
from puzzlegen.ranking import GoldenItem, GoldenSet
from puzzlegen.scoring import SyntheticScorer
from puzzlegen.themes import Theme

START = "rnbqkbnr/pppppppp/8/8/8/8/PPPPPPPP/RNBQKBNR w KQkq - 0 1"

FIXTURE = [
    ("C1", "7k/8/8/8/8/8/R7/1R4K1 w - - 0 1"),
    ("C2", "6k1/5ppp/8/8/8/8/5PPP/3R2K1 w - - 0 1"),
    ("C3", "P3k3/8/8/8/8/8/8/4K3 w - - 0 1"),
    ("C4", "7k/6pp/8/8/8/8/8/RR4K1 w - - 0 1"),
    ("C5", "4k3/8/8/3q4/8/8/8/3RK3 w - - 0 1"),
    ("C6", "4k3/8/8/8/8/8/8/NNN1K3 w - - 0 1"),
]

# hand walk of mine.script: the engine's final choice settles at depth t of
# a 1..20 schedule, so depth_cp_move = t / 20 and r_cnt = 0.8 t/20 - 0.1 * captured/9
EXPECTED = {
    "C1": dict(reward=1, div_reward=1, unique=True, r_cnt=0.8 * 11 / 20, pv=["a2a7", "h8g8", "b1b8"]),
    "C2": dict(reward=1, div_reward=1, unique=True, r_cnt=0.8 * 15 / 20, pv=["d1d8"]),
    "C3": dict(reward=-2, div_reward=-2, unique=False, r_cnt=None, pv=[]),
    "C4": dict(reward=0, div_reward=0, unique=False, r_cnt=None, pv=[]),
    "C5": dict(reward=0, div_reward=0, unique=True, r_cnt=0.8 * 2 / 20 - 0.1, pv=["d1d5"]),
    "C6": dict(reward=0, div_reward=0, unique=True, r_cnt=0.8 * 11 / 20, pv=["c1d3"]),
}


def scripted_cfg(**kw):
    return PipelineConfig(engine=f"scripted:{FIXTURES / 'mine.script'}", exact_gate=True, **kw)


def run_fixture(out=None, cfg=None):
    cfg = cfg or scripted_cfg()
    scorer = make_scorer(cfg)
    try:
        return mine(cfg, [Candidate(i, f, "fixture") for i, f in FIXTURE], scorer, out=out)
    finally:
        close_scorer(scorer)


# ingestion


def write_csv(path, rows, header=("PuzzleId", "FEN", "Moves", "Rating", "Popularity", "Themes", "GameUrl")):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def test_ingest_applies_first_move(tmp_path):
    path = tmp_path / "p.csv"
    write_csv(path, [
        ("a1", START, "e2e4 e7e5 g1f3", "1500", "90", "opening short", "https://x/1"),
        ("a2", START, "e2e5 e7e5", "1500", "90", "", ""),
        ("a3", START, "", "1500", "90", "", ""),
        ("a4", START, "e2e4", "1500", "90", "", ""),
        ("a5", "8/8/8/8/8/8/8/8 w - - 0 1", "e2e4 e7e5", "1", "1", "", ""),
        ("a6", START, "d2d4 d7d5", "", "", "", ""),
    ])
    rep = IngestReport()
    recs = list(ingest_lichess_csv(path, rep))
    assert [r.id for r in recs] == ["a1", "a6"]
    expected = apply_move(starting_position(), Move.from_uci("e2e4")).fen()
    assert recs[0].fen == expected
    assert recs[0].solution == ("e7e5", "g1f3")
    assert recs[0].themes == ("opening", "short")
    assert recs[0].rating == 1500
    assert recs[1].rating is None
    assert rep.rows_in == rep.records_out + rep.skipped == 6
    assert rep.skipped == 4


def test_ingest_missing_columns(tmp_path):
    path = tmp_path / "bad.csv"
    write_csv(path, [("a", START)], header=("PuzzleId", "FEN"))
    with pytest.raises(ValueError, match="missing columns"):
        list(ingest_lichess_csv(path))


def test_corpus_candidates_both_formats(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text(f"# comment\n{START}\n" + json.dumps({"id": "x", "fen": FIXTURE[0][1], "rating": 1800}) + "\n")
    cands = list(corpus_candidates(path))
    assert [c.id for c in cands] == ["2", "x"]
    assert dict(cands[1].meta) == {"rating": 1800}


def test_random_candidates_legal_and_seeded():
    a = list(random_legal_candidates(50, seed=3))
    b = list(random_legal_candidates(50, seed=3))
    assert a == b
    for c in a:
        p = parse_fen(c.fen)
        assert p.legal_moves()
        assert 3 <= sum(1 for x in p.board if x) <= 8


# mining


def test_mine_fixture_golden():
    res = run_fixture()
    got = {r["id"]: r for r in res.records}
    assert [r["id"] for r in res.records] == [i for i, _ in FIXTURE]
    for cid, exp in EXPECTED.items():
        rec = got[cid]
        assert rec["reward"] == exp["reward"], cid
        assert rec["div_reward"] == exp["div_reward"], cid
        assert rec["unique"] == exp["unique"], cid
        assert rec["solution_pv"] == exp["pv"], cid
        if exp["r_cnt"] is None:
            assert rec["r_cnt"] is None or rec["r_cnt"] <= 0.1
        else:
            assert rec["r_cnt"] == pytest.approx(exp["r_cnt"], abs=1e-9), cid
    assert got["C3"]["legal"] is False and got["C3"]["illegal_rule"] == "back_rank_pawn"
    assert got["C6"]["census_ok"] is False
    assert res.accepted == 2
    assert {e.fen for e in res.buffer.snapshot()} == {got["C1"]["fen"], got["C2"]["fen"]}
    assert got["C2"]["gate"]["min_board_dist"] >= 6


def test_mine_records_stamped():
    res = run_fixture()
    for rec in res.records:
        assert rec["schema"] == 1
        assert rec["engine"].startswith("scripted:")
        assert "depth:20" in rec["engine"]


def test_mine_is_byte_identical(tmp_path):
    run_fixture(out=tmp_path / "a.jsonl")
    run_fixture(out=tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert len(read_records(tmp_path / "a.jsonl")) == 6


def test_mine_empty_source(tmp_path):
    cfg = PipelineConfig(engine="synthetic")
    res = mine(cfg, [], SyntheticScorer(), out=tmp_path / "e.jsonl")
    assert res.records == [] and res.accepted == 0
    assert (tmp_path / "e.jsonl").read_text() == ""


def test_prior_buffer_blocks_repeat():
    first = run_fixture()
    cfg = scripted_cfg()
    scorer = make_scorer(cfg)
    try:
        again = mine(cfg, [Candidate(i, f, "fixture") for i, f in FIXTURE[:2]], scorer, buffer=first.buffer)
    finally:
        close_scorer(scorer)
    assert [r["div_reward"] for r in again.records] == [0, 0]
    assert again.accepted == 0


def test_batches_do_not_change_gate_peers():
    # C1 and C2 are far apart, so batch size cannot change who passes
    a = run_fixture(cfg=scripted_cfg(batch_size=1))
    b = run_fixture(cfg=scripted_cfg(batch_size=64))
    assert [r["div_reward"] for r in a.records] == [r["div_reward"] for r in b.records]


def test_seed_buffer_from_mined_and_buffer_files(tmp_path):
    run_fixture(out=tmp_path / "m.jsonl")
    buf = seed_buffer(tmp_path / "m.jsonl", scripted_cfg())
    assert len(buf) == 2
    assert len(seed_buffer(tmp_path / "m.jsonl", scripted_cfg(), limit=1)) == 1
    buf.save(tmp_path / "buf.jsonl")
    again = seed_buffer(tmp_path / "buf.jsonl", scripted_cfg())
    assert [e.fen for e in again.snapshot()] == [e.fen for e in buf.snapshot()]


def test_read_records_rejects_schema(tmp_path):
    path = tmp_path / "x.jsonl"
    path.write_text(json.dumps({"schema": 99}) + "\n")
    with pytest.raises(ValueError, match="schema"):
        read_records(path)


# stats


def test_stats_four_records():
    got = {r["id"]: r for r in run_fixture().records}
    c4b = dict(got["C4"], id="C4b")
    s = stats([got["C1"], got["C4"], got["C5"], c4b])
    assert (s["legal_pct"], s["unique_pct"], s["counter_intuitive_pct"], s["puzzle_pct"]) == (100, 50, 25, 25)


def test_stats_all_illegal_and_identical():
    got = {r["id"]: r for r in run_fixture().records}
    s = stats([got["C3"], dict(got["C3"], id="x")])
    assert (s["legal_pct"], s["unique_pct"], s["counter_intuitive_pct"], s["puzzle_pct"]) == (0, 0, 0, 0)
    same = stats([got["C1"], dict(got["C1"], id="y"), dict(got["C1"], id="z")])
    assert same["mean_min_board_dist"] == 0 and same["mean_min_pv_dist"] == 0
    with pytest.raises(ValueError):
        stats([])


def test_stats_rate_ordering():
    cfg = PipelineConfig(engine="synthetic", exact_gate=True)
    res = mine(cfg, random_legal_candidates(200, seed=1), SyntheticScorer())
    s = stats(res.records)
    assert s["unique_pct"] <= s["legal_pct"]
    assert s["puzzle_pct"] <= min(s["unique_pct"], s["counter_intuitive_pct"])


# report


def test_report_one_puzzle(tmp_path):
    rec = next(r for r in run_fixture().records if r["id"] == "C1")
    corpus = tmp_path / "corpus.txt"
    corpus.write_text("\n".join([START, FIXTURE[3][1], rec["fen"], FIXTURE[1][1]]) + "\n")
    out = report([rec], tmp_path / "rep", CorpusIndex.from_file(corpus))
    assert out == {"puzzles": 1, "neighbors": 3}
    md = (tmp_path / "rep" / "booklet.md").read_text()
    assert md.count("```text") == 1
    assert "White to move." in md
    assert "1. Ra7 Kg8 2. Rb8#" in md
    with open(tmp_path / "rep" / "neighbors.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3
    assert rows[0]["fen"] == rec["fen"] and rows[0]["distance"] == "0"
    with open(tmp_path / "rep" / "themes.csv") as fh:
        assert len(list(csv.DictReader(fh))) == len(Theme) == 13
    with open(tmp_path / "rep" / "correlation.csv") as fh:
        assert next(csv.reader(fh)) == ["metric", "pearson", "spearman", "n"]


def test_report_without_index_warns(tmp_path, caplog):
    rec = next(r for r in run_fixture().records if r["id"] == "C1")
    with caplog.at_level(logging.WARNING):
        out = report([rec], tmp_path / "rep", None)
    assert out["neighbors"] == 0
    assert "nearest-neighbor" in caplog.text
    assert not (tmp_path / "rep" / "neighbors.csv").exists()
    assert "Nearest corpus" not in (tmp_path / "rep" / "booklet.md").read_text()


# tuning


def separable():
    items, feats = [], {}
    fens = [f"{k}7/8/8/8/8/8/8/7K w - - 0 1" for k in ("k", "1k", "2k", "3k", "4k", "5k")]
    fens += [f"7K/8/8/8/8/8/8/{k}7 w - - 0 1" for k in ("k", "1k", "2k", "3k", "4k", "5k")]
    for n, fen in enumerate(fens):
        positive = n % 2 == 0
        split = "TRAIN" if n < 8 else "TEST"
        items.append(GoldenItem(fen, positive, split))
        feats[fen] = FeatureVector(depth_cp_move=0.9 if positive else 0.1, gap=0.5)
    return GoldenSet(items), feats


def test_tune_separable():
    golden, feats = separable()
    result, table = tune(golden, feats, trials=50, seed=0, names=("depth_cp_move", "gap"))
    assert list(table) == ["TRAIN", "TRAIN+TEST", "TEST"]
    assert table["TRAIN"] == 1.0
    assert table["TEST"] == 1.0
    assert result.weights["depth_cp_move"] > 0


def test_tune_zero_trials():
    golden, feats = separable()
    with pytest.raises(ValueError):
        tune(golden, feats, trials=0)


def test_replay_buffer_type():
    assert isinstance(run_fixture().buffer, ReplayBuffer)
