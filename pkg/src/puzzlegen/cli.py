"""Command line entry point: ``puzzlegen <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import dump_config, load_config
from .core import PositionError, parse_fen, parse_move
from .engine import EngineError, open_engine
from .evolve import run_workers
from .novelty import CorpusIndex, EntropyModel, nearest_neighbors
from .pipeline import (
    Candidate,
    IngestReport,
    close_scorer,
    compute_features,
    corpus_candidates,
    evaluation_record,
    ingest_lichess_csv,
    make_scorer,
    mine,
    random_legal_candidates,
    read_records,
    report,
    seed_buffer,
    stats,
    tune,
    write_ap_report,
)
from .ranking import GoldenSet, load_feature_cache, save_feature_cache
from .themes import detect, histogram

log = logging.getLogger("puzzlegen")


def _out_dir(cfg) -> Path:
    path = Path(cfg.out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _print_json(obj) -> None:
    print(json.dumps(obj, sort_keys=True, indent=2))


def cmd_ingest(args, cfg) -> int:
    rep = IngestReport()
    out = _out_dir(cfg) / "puzzles.jsonl"
    fens = []
    with open(out, "w") as fh:
        for rec in ingest_lichess_csv(args.csv, rep):
            fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")
            fens.append(rec.fen)
    summary = {"rows_in": rep.rows_in, "records_out": rep.records_out, "skipped": rep.skipped,
               "reasons": rep.reasons, "output": str(out)}
    if args.entropy_model:
        model = EntropyModel.train((parse_fen(f) for f in fens), cfg.ngram_order, cfg.ent_percentile)
        model.save(args.entropy_model)
        summary["entropy_model"] = {"path": args.entropy_model, "tau_ent": model.tau_ent,
                                    "fingerprint": model.fingerprint}
    _print_json(summary)
    return 0


def _evolve(cfg, seeds_path: str):
    seeds = [c.fen for c in corpus_candidates(seeds_path)]
    scorers = []

    def factory(worker):
        s = make_scorer(cfg, cfg.evo_budget_value)
        scorers.append(s)
        return s

    try:
        return run_workers(cfg.evo(), seeds, factory)
    finally:
        for s in scorers:
            close_scorer(s)


def _candidates(cfg, source: str):
    kind, _, arg = source.partition(":")
    if kind == "corpus":
        return corpus_candidates(arg)
    if kind == "random":
        n, _, pieces = arg.partition(":")
        lo, hi = (int(x) for x in pieces.split("-")) if pieces else (1, 6)
        return random_legal_candidates(int(n or 100), cfg.seed, lo, hi)
    if kind == "evolve":
        entries, _ = _evolve(cfg, arg)
        return [Candidate(f"evo-{i + 1}", e.fen, "evolve") for i, e in enumerate(entries)]
    raise ValueError(f"unknown candidate source {source!r}; use corpus:<file>, random:<n>[:<lo>-<hi>] "
                     "or evolve:<seeds>")


def cmd_mine(args, cfg) -> int:
    entropy = EntropyModel.load(cfg.entropy_model) if cfg.entropy_model else None
    scorer = make_scorer(cfg)
    try:
        out = _out_dir(cfg) / "mined.jsonl"
        buffer = seed_buffer(args.buffer, cfg, args.buffer_limit) if args.buffer else None
        res = mine(cfg, _candidates(cfg, args.source), scorer, buffer, entropy=entropy, out=out)
        res.buffer.save(_out_dir(cfg) / "buffer.jsonl")
    finally:
        close_scorer(scorer)
    summary = stats(res.records) if res.records else {"records": 0}
    summary["accepted"] = res.accepted
    summary["output"] = str(out)
    _print_json(summary)
    return 0


def cmd_evolve(args, cfg) -> int:
    entries, results = _evolve(cfg, args.seeds)
    out = _out_dir(cfg) / "elite.jsonl"
    with open(out, "w") as fh:
        for e in entries:
            fh.write(json.dumps(e.to_dict(), sort_keys=True) + "\n")
    (_out_dir(cfg) / "evolve_manifest.txt").write_text(dump_config(cfg))
    aborted = [r.worker for r in results if r.aborted]
    _print_json({"entries": len(entries), "best": entries[0].fitness if entries else None,
                 "aborted_workers": aborted, "output": str(out)})
    return 1 if aborted else 0


def cmd_tune(args, cfg) -> int:
    golden = GoldenSet.load(args.golden) if args.golden else GoldenSet.load()
    cache_path = Path(args.features)
    features = load_feature_cache(cache_path) if cache_path.exists() else {}
    missing = [i.fen for i in golden.usable() if i.fen not in features]
    if missing:
        if cfg.engine == "synthetic":
            raise ValueError(f"{len(missing)} golden positions lack cached features and no engine is set")
        session = open_engine(cfg.engine_config())
        try:
            for fen in missing:
                try:
                    features[fen] = compute_features(fen, session, cfg)
                except (EngineError, ValueError) as err:
                    log.warning("no features for %s: %s", fen, err)
        finally:
            session.close()
        save_feature_cache(cache_path, features)
    result, table = tune(golden, features, args.trials, cfg.seed)
    out = _out_dir(cfg)
    result.weights.save(out / "weights.txt")
    write_ap_report(out / "ap_report.csv", table)
    _print_json({"weights": result.weights.nonzero(), "ap": table, "trials": result.trials})
    return 0


def cmd_score(args, cfg) -> int:
    scorer = make_scorer(cfg)
    try:
        ev = scorer.evaluate(args.fen)
    finally:
        close_scorer(scorer)
    rec = evaluation_record(Candidate("cli", args.fen, "cli"), ev, getattr(scorer, "fingerprint", ""))
    _print_json(rec)
    return 0


def cmd_themes(args, cfg) -> int:
    if args.fen:
        p = parse_fen(args.fen)
        pv = []
        q = p
        for text in args.pv:
            m = parse_move(q, text)
            pv.append(m)
            q = q.apply(m)
        for hit in sorted(detect(p, pv)):
            print(f"{hit.theme.value}\tply {hit.trigger_ply}\t{hit.detail}")
        return 0
    records = read_records(args.input)
    sets = [{t["theme"] for t in r["themes"]} for r in records if r["reward"] == 1]
    out = _out_dir(cfg) / "themes.csv"
    with open(out, "w") as fh:
        fh.write("theme,count,share\n")
        for name, count, share in histogram(sets):
            fh.write(f"{name},{count},{share:.6f}\n")
    print(out)
    return 0


def cmd_stats(args, cfg) -> int:
    _print_json(stats(read_records(args.input), cfg.pv_truncation_eval))
    return 0


def cmd_report(args, cfg) -> int:
    records = read_records(args.input)
    index = None
    if args.index:
        try:
            index = CorpusIndex.from_file(args.index)
        except OSError as err:
            log.warning("cannot read corpus index %s: %s", args.index, err)
    _print_json(report(records, _out_dir(cfg), index, args.top))
    return 0


def cmd_neighbors(args, cfg) -> int:
    index = CorpusIndex.from_file(args.corpus)
    for fen, dist in nearest_neighbors(parse_fen(args.fen), index, args.k):
        print(f"{dist}\t{fen}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="puzzlegen", description="Mine, score and generate chess puzzles.")
    ap.add_argument("--config", help="flat key = value config file")
    ap.add_argument("--engine", help="UCI engine path, scripted:<file>, or 'synthetic'")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out", help="output directory")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="convert a Lichess puzzle CSV to JSONL")
    p.add_argument("csv")
    p.add_argument("--entropy-model", help="also train an n-gram entropy model on the puzzles and save it here")
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("mine", help="score candidates and keep novel puzzles")
    p.add_argument("source", help="corpus:<file> | random:<n>[:<lo>-<hi> pieces] | evolve:<seeds file>")
    p.add_argument("--buffer", help="preload the replay buffer from a buffer or mined JSONL file")
    p.add_argument("--buffer-limit", type=int, help="take at most this many entries, in file order")
    p.set_defaults(fn=cmd_mine)

    p = sub.add_parser("evolve", help="evolutionary search from seed positions")
    p.add_argument("seeds", help="FEN-per-line or JSONL seed corpus")
    p.set_defaults(fn=cmd_evolve)

    p = sub.add_parser("tune", help="tune feature weights on the labelled set")
    p.add_argument("--golden", help="golden CSV (fen,label,split); defaults to the bundled set")
    p.add_argument("--features", required=True, help="feature cache JSONL (created if missing)")
    p.add_argument("--trials", type=int, default=1000)
    p.set_defaults(fn=cmd_tune)

    p = sub.add_parser("score", help="score one position")
    p.add_argument("fen")
    p.set_defaults(fn=cmd_score)

    p = sub.add_parser("themes", help="theme histogram of mined puzzles, or themes of one line")
    p.add_argument("input", nargs="?", help="mined JSONL")
    p.add_argument("--fen")
    p.add_argument("--pv", nargs="*", default=[])
    p.set_defaults(fn=cmd_themes)

    p = sub.add_parser("stats", help="summary rates of a mined JSONL file")
    p.add_argument("input")
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("report", help="markdown booklet with CSV sidecars")
    p.add_argument("input")
    p.add_argument("--index", help="corpus file for nearest neighbors")
    p.add_argument("--top", type=int, default=20)
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("neighbors", help="closest corpus positions to a FEN")
    p.add_argument("fen")
    p.add_argument("--corpus", required=True)
    p.add_argument("-k", type=int, default=3)
    p.set_defaults(fn=cmd_neighbors)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, engine=args.engine, seed=args.seed, out=args.out)
        if args.command == "themes" and not args.fen and not args.input:
            raise ValueError("themes needs a mined JSONL file or --fen")
        return args.fn(args, cfg)
    except (ValueError, OSError, EngineError, PositionError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
