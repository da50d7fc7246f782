"""Engine access over UCI, plus a deterministic scripted engine for tests.

Scores are always from the point of view of the side to move in the analysed
position. Winning probabilities come from a fixed logistic over centipawns.
"""

from __future__ import annotations

import hashlib
import logging
import math
import os
import queue
import re
import shlex
import subprocess
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .core import IllegalMoveError, Move, Position, PositionError, parse_fen

log = logging.getLogger(__name__)

WINRATE_SLOPE = 0.00368
BUDGET_KINDS = ("depth", "nodes", "movetime")


class EngineError(RuntimeError):
    pass


class EngineSpawnError(EngineError):
    pass


class EngineTimeout(EngineError):
    pass


class EngineCrashed(EngineError):
    """The engine process died; the session cannot be used any more."""


class ScriptError(EngineError):
    """A scripted engine was asked about a position/budget it has no answer for."""


class PartialTraceError(EngineError):
    def __init__(self, message: str, checkpoints: list):
        super().__init__(message)
        self.checkpoints = checkpoints


class PoolExhausted(EngineError):
    pass


@dataclass(frozen=True)
class Score:
    """Centipawns or mate distance (in moves, UCI convention), mover's view.

    ``wr`` carries a direct win probability; only scripted engines emit it.
    """

    cp: Optional[float] = None
    mate: Optional[int] = None
    wr: Optional[float] = None

    def __post_init__(self):
        if sum(x is not None for x in (self.cp, self.mate, self.wr)) != 1:
            raise ValueError("a score is exactly one of cp, mate or wr")

    @property
    def is_mate(self) -> bool:
        return self.mate is not None

    def mates_for_mover(self) -> bool:
        return self.mate is not None and self.mate > 0

    def __str__(self) -> str:
        if self.mate is not None:
            return f"mate {self.mate}"
        if self.wr is not None:
            return f"wr {self.wr:g}"
        return f"cp {self.cp:g}"


def cp_to_winrate(score, slope: float = WINRATE_SLOPE) -> float:
    """Map a score to the mover's winning probability.

    Mate for the mover is 1.0, mate against (including ``mate 0``) is 0.0, and
    centipawns go through ``1 / (1 + exp(-slope * cp))``.
    """
    if not isinstance(score, Score):
        score = Score(cp=score)
    if score.mate is not None:
        return 1.0 if score.mate > 0 else 0.0
    if score.wr is not None:
        return float(score.wr)
    x = slope * score.cp
    # symmetric form keeps w(cp) + w(-cp) == 1 to rounding
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


@dataclass(frozen=True)
class Budget:
    kind: str
    value: int

    def __post_init__(self):
        if self.kind not in BUDGET_KINDS:
            raise ValueError(f"unknown budget kind {self.kind!r}")
        if self.value <= 0:
            raise ValueError("budget value must be positive")

    def uci(self) -> str:
        return f"{self.kind} {self.value}"

    def __str__(self) -> str:
        return f"{self.kind}:{self.value}"


@dataclass(frozen=True)
class MoveEval:
    move: Move
    score: Score
    pv: tuple
    winrate: float

    def __post_init__(self):
        if self.pv and self.pv[0] != self.move:
            raise ValueError("pv must start with the evaluated move")


@dataclass(frozen=True)
class AnalysisResult:
    fen: str
    budget: Budget
    entries: tuple
    engine: str

    @property
    def best(self) -> MoveEval:
        return self.entries[0]

    def winrates(self) -> list:
        return [e.winrate for e in self.entries]

    def find(self, move: Move) -> Optional[MoveEval]:
        return next((e for e in self.entries if e.move == move), None)


@dataclass(frozen=True)
class Checkpoint:
    t: int
    value: float
    best_move: Move


@dataclass(frozen=True)
class EvalTrace:
    solution: Move
    kind: str
    checkpoints: tuple

    @property
    def final_value(self) -> float:
        return self.checkpoints[-1].value

    @property
    def budgets(self) -> list:
        return [c.t for c in self.checkpoints]

    @property
    def values(self) -> list:
        return [c.value for c in self.checkpoints]


def parse_schedule(text) -> tuple:
    """``"1-20"`` or ``"1,2,4,8"`` (or an iterable of ints) to a tuple."""
    if not isinstance(text, str):
        out = [int(x) for x in text]
    else:
        out = []
        for part in text.split(","):
            part = part.strip()
            if not part:
                continue
            if "-" in part:
                lo, hi = part.split("-", 1)
                out.extend(range(int(lo), int(hi) + 1))
            else:
                out.append(int(part))
    if not out or out[0] < 1 or any(b <= a for a, b in zip(out, out[1:])):
        raise ValueError(f"schedule must be a nonempty increasing list of positive budgets: {text!r}")
    return tuple(out)


@dataclass
class EngineConfig:
    executable: str = "stockfish"
    script: Optional[str] = None
    hash_mb: int = 16
    threads: int = 1
    multipv: int = 2
    budget_kind: str = "depth"
    budget_value: int = 20
    schedule: tuple = tuple(range(1, 21))
    handshake_timeout: float = 10.0
    search_timeout: Optional[float] = None
    winrate_slope: float = WINRATE_SLOPE

    def __post_init__(self):
        self.schedule = parse_schedule(self.schedule)
        if self.multipv < 1:
            raise ValueError("multipv must be >= 1")
        if self.budget_kind not in BUDGET_KINDS:
            raise ValueError(f"unknown budget kind {self.budget_kind!r}")

    @property
    def scripted(self) -> bool:
        return self.executable == "scripted" or self.executable.startswith("scripted:")

    @property
    def budget(self) -> Budget:
        return Budget(self.budget_kind, self.budget_value)

    @classmethod
    def from_spec(cls, spec: str, **kw) -> "EngineConfig":
        """Build from a ``--engine`` value: a path or ``scripted:<file>``."""
        if spec.startswith("scripted:"):
            return cls(executable="scripted", script=spec.split(":", 1)[1], **kw)
        return cls(executable=spec, **kw)


class EngineSession:
    """One engine instance; strictly one search at a time."""

    identity = "engine"
    winrate_slope = WINRATE_SLOPE

    def search(self, position: Position, budget: Budget, multipv: int, searchmoves=None) -> list:
        """Return ``[(move, score, pv), ...]`` in engine order."""
        raise NotImplementedError

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


# UCI --------------------------------------------------------------------------

_MOVE_RE = re.compile(r"^[a-h][1-8][a-h][1-8][qrbn]?$")
_ONE_ARG = {"depth", "seldepth", "time", "nodes", "multipv", "currmove", "currmovenumber",
            "hashfull", "nps", "tbhits", "sbhits", "cpuload"}


def parse_info(line: str) -> Optional[dict]:
    """Parse a UCI ``info`` line; unknown tokens are skipped."""
    tokens = line.split()
    if not tokens or tokens[0] != "info":
        return None
    info: dict = {}
    i = 1
    n = len(tokens)
    while i < n:
        tok = tokens[i]
        if tok == "string":
            break
        if tok in _ONE_ARG and i + 1 < n:
            value = tokens[i + 1]
            if tok != "currmove":
                try:
                    value = int(value)
                except ValueError:
                    pass
            info[tok] = value
            i += 2
        elif tok == "score" and i + 2 < n:
            kind, raw = tokens[i + 1], tokens[i + 2]
            i += 3
            try:
                num = int(raw)
            except ValueError:
                continue
            if kind == "cp":
                info["score"] = Score(cp=num)
            elif kind == "mate":
                info["score"] = Score(mate=num)
            if i < n and tokens[i] in ("lowerbound", "upperbound"):
                info["bound"] = tokens[i]
                i += 1
        elif tok == "wdl" and i + 3 < n:
            i += 4
        elif tok == "pv":
            pv = []
            i += 1
            while i < n and _MOVE_RE.match(tokens[i]):
                pv.append(tokens[i])
                i += 1
            info["pv"] = pv
        elif tok in ("refutation", "currline"):
            i += 1
            while i < n and _MOVE_RE.match(tokens[i]):
                i += 1
        else:
            i += 1
    return info


class UciEngine(EngineSession):
    def __init__(self, command, options: Optional[dict] = None, handshake_timeout: float = 10.0,
                 search_timeout: Optional[float] = None, winrate_slope: float = WINRATE_SLOPE):
        if isinstance(command, str):
            argv = [command] if os.path.exists(command) else shlex.split(command)
        else:
            argv = list(command)
        self.argv = argv
        self.search_timeout = search_timeout
        self.winrate_slope = winrate_slope
        try:
            self._proc = subprocess.Popen(
                argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, stderr=subprocess.DEVNULL,
                text=True, bufsize=1,
            )
        except OSError as exc:
            raise EngineSpawnError(f"cannot start engine {argv[0]!r}: {exc}") from exc
        self._lines: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()
        self._multipv = None
        self.identity = argv[0]
        try:
            self._send("uci")
            for line in self._read_until("uciok", handshake_timeout):
                if line.startswith("id name "):
                    self.identity = line[len("id name "):].strip()
            for name, value in (options or {}).items():
                self._send(f"setoption name {name} value {value}")
            self._sync(handshake_timeout)
        except EngineError:
            self.close()
            raise

    def _pump(self):
        for line in self._proc.stdout:
            self._lines.put(line.rstrip("\n"))
        self._lines.put(None)

    def _send(self, text: str):
        if self._proc.poll() is not None:
            raise EngineCrashed(f"engine {self.identity!r} exited with code {self._proc.returncode}")
        try:
            self._proc.stdin.write(text + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise EngineCrashed(f"engine {self.identity!r} closed its input") from exc

    def _read_until(self, prefix: str, timeout: Optional[float]):
        lines = []
        while True:
            try:
                line = self._lines.get(timeout=timeout)
            except queue.Empty:
                raise EngineTimeout(f"no {prefix!r} from engine within {timeout}s") from None
            if line is None:
                raise EngineCrashed(f"engine {self.identity!r} terminated unexpectedly")
            lines.append(line)
            if line == prefix or line.startswith(prefix + " "):
                return lines

    def _sync(self, timeout):
        self._send("isready")
        self._read_until("readyok", timeout)

    def search(self, position, budget, multipv, searchmoves=None):
        if multipv != self._multipv:
            self._send(f"setoption name MultiPV value {multipv}")
            self._multipv = multipv
        self._send(f"position fen {position.fen()}")
        go = f"go {budget.uci()}"
        if searchmoves:
            go += " searchmoves " + " ".join(m.uci() for m in searchmoves)
        self._send(go)
        latest: dict = {}
        bestmove = None
        for line in self._read_until("bestmove", self.search_timeout):
            if line.startswith("bestmove"):
                parts = line.split()
                bestmove = parts[1] if len(parts) > 1 else None
                continue
            info = parse_info(line)
            if not info or "score" not in info or not info.get("pv"):
                continue
            idx = info.get("multipv", 1)
            if idx <= multipv:
                latest[idx] = info
        if bestmove in (None, "(none)", "0000") and not latest:
            return []
        out = []
        for idx in sorted(latest):
            info = latest[idx]
            pv = tuple(Move.from_uci(m) for m in info["pv"])
            out.append((pv[0], info["score"], pv))
        if not out and bestmove:
            raise EngineError(f"engine gave bestmove {bestmove} without any evaluation")
        return out

    def close(self):
        proc = getattr(self, "_proc", None)
        if proc is None or proc.poll() is not None:
            return
        try:
            self._send("quit")
            proc.wait(timeout=2)
        except (EngineError, subprocess.TimeoutExpired):
            proc.kill()
            proc.wait()


# Scripted engine --------------------------------------------------------------

@dataclass
class _ScriptBlock:
    kind: Optional[str]
    lo: int
    hi: int
    entries: list = field(default_factory=list)

    def matches(self, budget: Budget) -> bool:
        return self.kind is None or (self.kind == budget.kind and self.lo <= budget.value <= self.hi)


def _parse_score(kind: str, raw: str) -> Score:
    if kind == "cp":
        return Score(cp=float(raw) if "." in raw else int(raw))
    if kind == "mate":
        return Score(mate=int(raw))
    if kind == "wr":
        value = float(raw)
        if not 0.0 <= value <= 1.0:
            raise ValueError("wr must lie in [0, 1]")
        return Score(wr=value)
    raise ValueError(f"unknown score kind {kind!r}")


class ScriptedEngine(EngineSession):
    """Answers searches from a text script.

    Script format, one directive per line (``#`` starts a comment)::

        position <FEN>
        budget depth 1-9          # or 'budget depth 12', or 'budget *'
        e2e4 cp 35 pv e2e4 e7e5   # ranked answers for that budget
        d2d4 mate 3
        g1f3 wr 0.9               # direct win probability

    Move lines before any ``budget`` line apply to every budget. The first
    block (in file order) whose budget range contains the query answers it;
    a query nothing matches raises :class:`ScriptError`.
    """

    def __init__(self, blocks: dict, identity: str = "scripted", winrate_slope: float = WINRATE_SLOPE):
        self._blocks = blocks
        self.identity = identity
        self.winrate_slope = winrate_slope
        self.queries: list = []

    @classmethod
    def from_text(cls, text: str, identity: Optional[str] = None, **kw) -> "ScriptedEngine":
        digest = hashlib.sha1(text.encode()).hexdigest()[:10]
        blocks: dict = {}
        pos = None
        current = None
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            word, _, rest = line.partition(" ")
            try:
                if word == "position":
                    pos = parse_fen(rest.strip())
                    blocks.setdefault(pos.key(), [])
                    current = None
                elif word == "budget":
                    if pos is None:
                        raise ValueError("budget before position")
                    current = cls._parse_budget(rest.strip())
                    blocks[pos.key()].append(current)
                else:
                    if pos is None:
                        raise ValueError("move before position")
                    if current is None:
                        current = _ScriptBlock(None, 0, 0)
                        blocks[pos.key()].append(current)
                    current.entries.append(cls._parse_entry(pos, line))
            except (ValueError, PositionError, IllegalMoveError) as exc:
                raise ScriptError(f"script line {lineno}: {exc}") from exc
        return cls(blocks, identity or f"scripted:{digest}", **kw)

    @classmethod
    def from_file(cls, path, **kw) -> "ScriptedEngine":
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise EngineSpawnError(f"cannot read engine script {path!r}: {exc}") from exc
        return cls.from_text(text, **kw)

    @staticmethod
    def _parse_budget(text: str) -> _ScriptBlock:
        if text == "*":
            return _ScriptBlock(None, 0, 0)
        kind, _, rng = text.partition(" ")
        if kind not in BUDGET_KINDS:
            raise ValueError(f"unknown budget kind {kind!r}")
        lo, _, hi = rng.strip().partition("-")
        return _ScriptBlock(kind, int(lo), int(hi or lo))

    @staticmethod
    def _parse_entry(pos: Position, line: str):
        parts = line.split()
        if len(parts) < 3:
            raise ValueError(f"expected '<move> cp|mate|wr <value>', got {line!r}")
        move = Move.from_uci(parts[0])
        if move not in pos.legal_moves():
            raise IllegalMoveError(f"{parts[0]} is not legal in {pos.fen()}")
        score = _parse_score(parts[1], parts[2])
        pv = (move,)
        if len(parts) > 3:
            if parts[3] != "pv":
                raise ValueError(f"unexpected token {parts[3]!r}")
            pv = tuple(Move.from_uci(m) for m in parts[4:]) or pv
            if pv[0] != move:
                raise ValueError("pv must start with the scored move")
        return move, score, pv

    def search(self, position, budget, multipv, searchmoves=None):
        self.queries.append((position.key(), str(budget), multipv, tuple(m.uci() for m in searchmoves or ())))
        blocks = self._blocks.get(position.key())
        if blocks is None:
            raise ScriptError(f"no script entry for position {position.fen()}")
        block = next((b for b in blocks if b.matches(budget)), None)
        if block is None:
            raise ScriptError(f"no script entry for {position.fen()} at {budget}")
        entries = list(block.entries)
        if searchmoves:
            wanted = set(searchmoves)
            entries = [e for e in entries if e[0] in wanted]
            if not entries:
                raise ScriptError(f"script for {position.fen()} at {budget} lacks {[m.uci() for m in searchmoves]}")
        entries.sort(key=lambda e: -cp_to_winrate(e[1], self.winrate_slope))
        return entries[:multipv]


# Session helpers ----------------------------------------------------------------

def open_engine(cfg: EngineConfig) -> EngineSession:
    if cfg.scripted:
        path = cfg.script or cfg.executable.partition(":")[2]
        if not path:
            raise EngineSpawnError("scripted engine needs a script file")
        return ScriptedEngine.from_file(path, winrate_slope=cfg.winrate_slope)
    return UciEngine(
        cfg.executable,
        options={"Threads": cfg.threads, "Hash": cfg.hash_mb},
        handshake_timeout=cfg.handshake_timeout,
        search_timeout=cfg.search_timeout,
        winrate_slope=cfg.winrate_slope,
    )


def engine_fingerprint(cfg: EngineConfig, identity: str) -> str:
    sched = cfg.schedule
    return (
        f"{identity}|threads={cfg.threads}|hash={cfg.hash_mb}|multipv={cfg.multipv}"
        f"|budget={cfg.budget}|schedule={cfg.budget_kind}:{sched[0]}..{sched[-1]}x{len(sched)}"
    )


def analyze(session: EngineSession, position: Position, multipv: int, budget: Budget,
            searchmoves: Optional[Sequence[Move]] = None) -> AnalysisResult:
    """Top-``multipv`` moves ranked by winning probability (best first)."""
    if not position.legal_moves():
        raise ValueError(f"no legal moves in {position.fen()}")
    raw = session.search(position, budget, multipv, searchmoves)
    slope = session.winrate_slope
    entries = [MoveEval(m, s, tuple(pv), cp_to_winrate(s, slope)) for m, s, pv in raw]
    # stable: equal winrates keep engine order
    entries.sort(key=lambda e: -e.winrate)
    return AnalysisResult(position.fen(), budget, tuple(entries[:multipv]), session.identity)


def analyze_trace(session: EngineSession, position: Position, solution: Move,
                  schedule: Iterable[int], kind: str = "depth") -> EvalTrace:
    """Evaluate ``solution`` and the engine's own choice at each budget."""
    if solution not in position.legal_moves():
        raise ValueError(f"{solution.uci()} is not legal in {position.fen()}")
    checkpoints: list = []
    for t in schedule:
        budget = Budget(kind, t)
        try:
            restricted = analyze(session, position, 1, budget, searchmoves=[solution])
            free = analyze(session, position, 1, budget)
        except EngineError as exc:
            raise PartialTraceError(f"trace aborted at {budget}: {exc}", checkpoints) from exc
        entry = restricted.find(solution)
        if entry is None or not free.entries:
            raise PartialTraceError(f"engine returned no evaluation at {budget}", checkpoints)
        checkpoints.append(Checkpoint(t, entry.winrate, free.best.move))
    if not checkpoints:
        raise ValueError("empty trace schedule")
    return EvalTrace(solution, kind, tuple(checkpoints))


class EnginePool:
    """A fixed set of sessions handed out as exclusive leases."""

    def __init__(self, sessions: Iterable[EngineSession]):
        self._free: queue.Queue = queue.Queue()
        self.sessions = list(sessions)
        for s in self.sessions:
            self._free.put(s)

    @classmethod
    def open(cls, cfg: EngineConfig, size: int = 1) -> "EnginePool":
        return cls(open_engine(cfg) for _ in range(size))

    @contextmanager
    def lease(self, timeout: Optional[float] = None):
        try:
            session = self._free.get(timeout=timeout)
        except queue.Empty:
            raise PoolExhausted("no engine session available") from None
        try:
            yield session
        finally:
            self._free.put(session)

    def close(self):
        for s in self.sessions:
            s.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
