"""Ingestion, mining, statistics, reports and tuning built on the library."""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .config import PipelineConfig
from .core import (
    IllegalMoveError,
    Move,
    PositionError,
    apply_move,
    parse_fen,
    san,
)
from .engine import EnginePool, analyze_trace, engine_fingerprint
from .features import FEATURE_NAMES, FeatureVector, build_features
from .novelty import (
    QUALIFIED_REWARD,
    CorpusIndex,
    EntropyModel,
    ReplayBuffer,
    ScoredPosition,
    diversity_gate,
    diversity_reward,
    min_self_distances,
    nearest_neighbors,
    sequence_entropy,
)
from .ranking import GoldenSet, TRAIN, TEST, correlate, tune_weights
from .scoring import EngineScorer, Evaluation, SyntheticScorer
from .themes import detect, histogram
from .uniqueness import check_uniqueness

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
LICHESS_COLUMNS = ("PuzzleId", "FEN", "Moves", "Rating", "Popularity", "Themes")


# ingestion


@dataclass
class PuzzleRecord:
    id: str
    raw_fen: str
    fen: str
    solution: tuple
    rating: Optional[int] = None
    popularity: Optional[int] = None
    themes: tuple = ()
    url: str = ""

    def to_dict(self) -> dict:
        return {"id": self.id, "raw_fen": self.raw_fen, "fen": self.fen, "solution": list(self.solution),
                "rating": self.rating, "popularity": self.popularity, "themes": list(self.themes),
                "url": self.url}


@dataclass
class IngestReport:
    rows_in: int = 0
    records_out: int = 0
    skipped: int = 0
    reasons: dict = field(default_factory=dict)

    def skip(self, reason: str) -> None:
        self.skipped += 1
        self.reasons[reason] = self.reasons.get(reason, 0) + 1


def _opt_int(text: str) -> Optional[int]:
    text = (text or "").strip()
    return int(text) if text else None


def ingest_lichess_csv(path, report: Optional[IngestReport] = None) -> Iterator[PuzzleRecord]:
    """Yield puzzle records with the opponent's first move already played."""
    report = report if report is not None else IngestReport()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in LICHESS_COLUMNS if c not in (reader.fieldnames or ())]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        for row in reader:
            report.rows_in += 1
            moves = (row.get("Moves") or "").split()
            if len(moves) < 2:
                report.skip("too few moves")
                continue
            try:
                raw = parse_fen(row["FEN"])
                first = Move.from_uci(moves[0])
                puzzle = apply_move(raw, first)
                rating = _opt_int(row["Rating"])
                popularity = _opt_int(row["Popularity"])
            except (PositionError, IllegalMoveError, ValueError) as err:
                report.skip(type(err).__name__)
                continue
            report.records_out += 1
            yield PuzzleRecord(row["PuzzleId"], raw.fen(), puzzle.fen(), tuple(moves[1:]), rating, popularity,
                               tuple((row.get("Themes") or "").split()), row.get("GameUrl", "") or "")


# candidate sources


@dataclass(frozen=True)
class Candidate:
    id: str
    fen: str
    source: str
    meta: tuple = ()


def corpus_candidates(path) -> Iterator[Candidate]:
    """FEN-per-line text or JSONL with a ``fen`` key (ingested records work)."""
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("{"):
                rec = json.loads(line)
                meta = tuple((k, rec[k]) for k in ("rating", "popularity") if rec.get(k) is not None)
                yield Candidate(str(rec.get("id", n)), rec["fen"], "corpus", meta)
            else:
                yield Candidate(str(n), line, "corpus")


def random_placement(rng: np.random.Generator, min_pieces: int = 1, max_pieces: int = 6) -> str:
    """Two kings plus a few random pieces on random squares, either side to move.

    The FEN is not checked; pawns may land on back ranks and the side not to
    move may be in check.
    """
    board = [None] * 64
    squares = rng.permutation(64)
    board[squares[0]] = "K"
    board[squares[1]] = "k"
    n = int(rng.integers(min_pieces, max_pieces + 1))
    for i in range(n):
        board[squares[2 + i]] = "PNBRQpnbrq"[int(rng.integers(10))]
    side = "w" if rng.random() < 0.5 else "b"
    rows = []
    for rank in range(7, -1, -1):
        row, empty = "", 0
        for f in range(8):
            pc = board[rank * 8 + f]
            if pc is None:
                empty += 1
            else:
                row += (str(empty) if empty else "") + pc
                empty = 0
        rows.append(row + (str(empty) if empty else ""))
    return f"{'/'.join(rows)} {side} - - 0 1"


def random_legal_candidates(n: int, seed: int = 0, min_pieces: int = 1, max_pieces: int = 6,
                            legal_only: bool = True) -> Iterator[Candidate]:
    """Seeded random placements; with ``legal_only`` illegal draws are redrawn."""
    rng = np.random.default_rng(seed)
    made = 0
    while made < n:
        fen = random_placement(rng, min_pieces, max_pieces)
        if legal_only:
            try:
                p = parse_fen(fen)
            except PositionError:
                continue
            if not p.legal_moves():
                continue
        made += 1
        yield Candidate(f"rand-{made}", fen, "random")


# scorers


class PooledScorer:
    """Engine scorer that leases a session from a pool for each evaluation."""

    def __init__(self, pool: EnginePool, fingerprint: str, **kw):
        self.pool = pool
        self.fingerprint = fingerprint
        self.kw = kw

    def evaluate(self, candidate) -> Evaluation:
        with self.pool.lease() as session:
            return EngineScorer(session, fingerprint=self.fingerprint, **self.kw).evaluate(candidate)


def make_scorer(cfg: PipelineConfig, budget_value: Optional[int] = None):
    """Scorer for ``cfg.engine``; ``synthetic`` needs no engine at all."""
    if cfg.engine == "synthetic":
        return SyntheticScorer(tau_cnt=cfg.tau_cnt)
    ecfg = cfg.engine_config()
    if budget_value:
        ecfg.budget_value = budget_value
    pool = EnginePool.open(ecfg, cfg.pool_size)
    identity = pool.sessions[0].identity
    return PooledScorer(pool, engine_fingerprint(ecfg, identity), uniqueness=cfg.uniqueness(budget_value),
                        weights=cfg.weights(), schedule=ecfg.schedule, trace_kind=ecfg.budget_kind,
                        stability_tau=cfg.stability_tau, tau_cnt=cfg.tau_cnt)


def close_scorer(scorer) -> None:
    pool = getattr(scorer, "pool", None)
    if pool is not None:
        pool.close()


# mining


def _uci_list(pv) -> list:
    return [m if isinstance(m, str) else m.uci() for m in pv]


def evaluation_record(cand: Candidate, ev: Evaluation, fingerprint: str) -> dict:
    themes = []
    if ev.position is not None and ev.solution_pv:
        themes = [h.to_dict() for h in sorted(detect(ev.position, ev.solution_pv, ev.evals or None))]
    return {
        "schema": SCHEMA_VERSION,
        "id": cand.id,
        "source": cand.source,
        "fen": ev.fen,
        "legal": ev.legal,
        "illegal_rule": ev.illegal_rule,
        "unique": ev.unique,
        "r_uni": ev.r_uni,
        "mode": ev.mode,
        "solution_pv": _uci_list(ev.solution_pv),
        "r_cnt": ev.r_cnt,
        "i_cnt": ev.i_cnt,
        "census_ok": ev.census_ok,
        "reward": ev.reward,
        "gate": None,
        "div_reward": ev.reward if ev.reward != QUALIFIED_REWARD else None,
        "entropy": None,
        "features": ev.features.to_dict() if ev.features else None,
        "themes": themes,
        "error": ev.error,
        "engine": fingerprint,
        "meta": dict(cand.meta),
    }


def _scored(rec: dict) -> ScoredPosition:
    return ScoredPosition(rec["fen"], tuple(rec["solution_pv"]), rec["r_uni"], rec["r_cnt"], rec["reward"],
                          rec["entropy"], source=rec["source"], fingerprint=rec["engine"])


@dataclass
class MineResult:
    records: list
    buffer: ReplayBuffer
    accepted: int = 0


def mine(cfg: PipelineConfig, candidates: Iterable[Candidate], scorer, buffer: Optional[ReplayBuffer] = None,
         entropy: Optional[EntropyModel] = None, out=None) -> MineResult:
    """Score every candidate, gate the qualified ones, keep the novel ones.

    Candidates are scored in batches; within a batch a qualified candidate is
    compared with the qualified candidates submitted before it and with the
    replay buffer as it stood before the batch. Records keep submission order.
    """
    buffer = buffer if buffer is not None else ReplayBuffer(cfg.buffer_capacity, cfg.seed)
    dcfg = cfg.distance()
    tau_ent = cfg.tau_ent
    if tau_ent is None and entropy is not None:
        tau_ent = entropy.tau_ent
    fingerprint = getattr(scorer, "fingerprint", "")
    records = []
    accepted = 0
    fh = open(out, "w") if out else None
    try:
        it = iter(candidates)
        with ThreadPoolExecutor(max_workers=cfg.pool_size) as ex:
            while True:
                batch = [c for _, c in zip(range(cfg.batch_size), it)]
                if not batch:
                    break
                evals = list(ex.map(scorer.evaluate, [c.fen for c in batch]))
                if cfg.exact_gate or len(buffer) <= cfg.subsample:
                    reference = buffer.snapshot()
                else:
                    reference = buffer.subsample(cfg.subsample)
                peers: list = []
                novel: list = []
                for cand, ev in zip(batch, evals):
                    rec = evaluation_record(cand, ev, fingerprint)
                    if ev.reward == QUALIFIED_REWARD:
                        if entropy is not None:
                            rec["entropy"] = sequence_entropy(entropy, ev.position)
                        sp = _scored(rec)
                        gate = diversity_gate(sp, peers, reference, dcfg, tau_ent)
                        rec["gate"] = {"passed": gate.passed, "failed": list(gate.failed),
                                       "min_board_dist": gate.min_board_dist, "min_pv_dist": gate.min_pv_dist}
                        rec["div_reward"] = diversity_reward(ev.reward, gate.passed)
                        sp.min_board_dist = gate.min_board_dist
                        sp.min_pv_dist = gate.min_pv_dist
                        peers.append(sp)
                        if gate.passed:
                            novel.append(sp)
                    records.append(rec)
                    if fh:
                        fh.write(json.dumps(rec, sort_keys=True) + "\n")
                for sp in novel:
                    buffer.push(sp)
                accepted += len(novel)
    finally:
        if fh:
            fh.close()
    return MineResult(records, buffer, accepted)


def seed_buffer(path, cfg: PipelineConfig, limit: Optional[int] = None) -> ReplayBuffer:
    """Buffer preloaded with the first ``limit`` qualified entries of a file.

    Accepts a saved buffer or mined JSONL; mined records count only if they
    are qualified and did not fail the gate.
    """
    buf = ReplayBuffer(cfg.buffer_capacity, cfg.seed)
    with open(path) as fh:
        for line in fh:
            if limit is not None and len(buf) >= limit:
                break
            if not line.strip():
                continue
            rec = json.loads(line)
            if "schema" in rec:
                if rec["reward"] != QUALIFIED_REWARD or (rec["gate"] and not rec["gate"]["passed"]):
                    continue
                buf.push(_scored(rec))
            elif rec.get("reward") == QUALIFIED_REWARD:
                buf.push(ScoredPosition.from_dict(rec))
    return buf


def read_records(path) -> list:
    out = []
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec.get("schema") != SCHEMA_VERSION:
                raise ValueError(f"{path}:{n}: unsupported schema {rec.get('schema')!r}")
            out.append(rec)
    return out


# statistics


def stats(records: Sequence[dict], truncation: int = 6) -> dict:
    """Rates over all records (percent) and mean nearest-other distances over unique ones."""
    n = len(records)
    if n == 0:
        raise ValueError("no records")

    def pct(k):
        return 100.0 * k / n

    unique = [r for r in records if r["legal"] and r["unique"]]
    board, pv = min_self_distances([_scored(r) for r in unique], truncation)
    return {
        "records": n,
        "legal_pct": pct(sum(1 for r in records if r["legal"])),
        "unique_pct": pct(len(unique)),
        "counter_intuitive_pct": pct(sum(1 for r in records if r["legal"] and r["i_cnt"])),
        "puzzle_pct": pct(sum(1 for r in records if r["reward"] == QUALIFIED_REWARD)),
        "mean_min_board_dist": board,
        "mean_min_pv_dist": pv,
    }


# report


def _san_line(fen: str, pv: Sequence[str]) -> str:
    p = parse_fen(fen)
    out = []
    for i, u in enumerate(pv):
        m = Move.from_uci(u)
        text = san(p, m)
        if p.side_to_move == "w":
            text = f"{p.fullmove_number}. {text}"
        elif i == 0:
            text = f"{p.fullmove_number}... {text}"
        out.append(text)
        p = apply_move(p, m)
    return " ".join(out)


def _diagram(fen: str) -> str:
    p = parse_fen(fen, validate=False)
    rows = str(p).splitlines()
    lines = [f"{8 - i} {row}" for i, row in enumerate(rows)]
    lines.append("  a b c d e f g h")
    return "\n".join(lines)


def select_puzzles(records: Sequence[dict], top: int = 20) -> list:
    chosen = [r for r in records if r["reward"] == QUALIFIED_REWARD]
    # gate-passing puzzles first, then by counter-intuitiveness
    chosen.sort(key=lambda r: (-(r["div_reward"] == QUALIFIED_REWARD), -(r["r_cnt"] or 0.0)))
    return chosen[:top]


def correlation_rows(records: Sequence[dict]) -> list:
    """``(metric, pearson, spearman, n)`` of rating against r_cnt and each feature."""
    rated = [r for r in records if r.get("meta", {}).get("rating") is not None and r.get("features")]
    ratings = [r["meta"]["rating"] for r in rated]
    rows = []
    for metric in ("r_cnt",) + FEATURE_NAMES:
        xs = [r["r_cnt"] if metric == "r_cnt" else r["features"][metric] for r in rated]
        try:
            pearson, spearman = correlate(xs, ratings)
        except ValueError:
            pearson = spearman = None
        rows.append((metric, pearson, spearman, len(rated)))
    return rows


def report(records: Sequence[dict], out_dir, index: Optional[CorpusIndex] = None, top: int = 20,
           k: int = 3) -> dict:
    """Write ``booklet.md`` plus theme, correlation and neighbor CSVs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    chosen = select_puzzles(records, top)
    if index is None:
        log.warning("no corpus index given; the nearest-neighbor section is omitted")
    lines = ["# Puzzle booklet", ""]
    neighbor_rows = []
    for n, r in enumerate(chosen, 1):
        side = "White" if r["fen"].split()[1] == "w" else "Black"
        lines += [f"## {n}. {r['id']}", "", f"FEN: `{r['fen']}`", "", f"{side} to move.", "",
                  "```text", _diagram(r["fen"]), "```", "",
                  f"Solution: {_san_line(r['fen'], r['solution_pv'])}", "",
                  f"r_uni = {r['r_uni']:.3f}, r_cnt = {r['r_cnt']:.3f}", ""]
        names = sorted({t["theme"] for t in r["themes"]})
        lines += [f"Themes: {', '.join(names) if names else 'none'}", ""]
        if index is not None and len(index):
            lines += ["Nearest corpus positions:", ""]
            for rank, (fen, dist) in enumerate(nearest_neighbors(parse_fen(r["fen"]), index, k), 1):
                lines.append(f"{rank}. `{fen}` (distance {dist})")
                neighbor_rows.append((r["id"], rank, fen, dist))
            lines.append("")
    (out_dir / "booklet.md").write_text("\n".join(lines))

    qualified = [r for r in records if r["reward"] == QUALIFIED_REWARD]
    theme_sets = [{t["theme"] for t in r["themes"]} for r in qualified]
    with open(out_dir / "themes.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["theme", "count", "share"])
        for name, count, share in histogram(theme_sets):
            w.writerow([name, count, f"{share:.6f}"])
    with open(out_dir / "correlation.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "pearson", "spearman", "n"])
        for metric, pr, sr, n in correlation_rows(records):
            w.writerow([metric, "" if pr is None else f"{pr:.6f}", "" if sr is None else f"{sr:.6f}", n])
    if index is not None:
        with open(out_dir / "neighbors.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["puzzle_id", "rank", "fen", "distance"])
            w.writerows(neighbor_rows)
    return {"puzzles": len(chosen), "neighbors": len(neighbor_rows)}


# tuning


def compute_features(fen: str, session, cfg: PipelineConfig) -> FeatureVector:
    p = parse_fen(fen)
    verdict = check_uniqueness(p, session, cfg.uniqueness())
    ecfg = cfg.engine_config()
    trace = analyze_trace(session, p, verdict.transcript[0].played, ecfg.schedule, ecfg.budget_kind)
    return build_features(p, verdict, {ecfg.budget_kind: trace}, cfg.stability_tau)


def tune(golden: GoldenSet, features: dict, trials: int, seed: int = 0, names: Sequence[str] = FEATURE_NAMES):
    """Tune on TRAIN; report AP for TRAIN, TRAIN+TEST and TEST."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    train = [i for i in golden.usable(TRAIN) if i.fen in features]
    test = [i for i in golden.usable(TEST) if i.fen in features]
    result = tune_weights(train, features, trials, seed, test, names)
    table = {"TRAIN": result.train_ap, "TRAIN+TEST": result.all_ap, "TEST": result.test_ap}
    return result, table


def write_ap_report(path, table: dict) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(table))
        w.writerow(["" if v is None else f"{v:.6f}" for v in table.values()])
