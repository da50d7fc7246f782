"""Novelty: edit distances, sequence entropy, rewards, the diversity gate and
the replay buffer of accepted puzzles."""

from __future__ import annotations

import hashlib
import json
import math
import threading
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Protocol, Sequence

import numpy as np
from rapidfuzz.distance import Levenshtein
from rapidfuzz.process import cdist

from .core import Position, PositionError, is_legal, parse_fen, piece_census
from .tokens import ALPHABET, BOARD_SIDE_TOKENS, SEQ_LEN, TOKEN_INDEX, board_side_tokens, encode77

ILLEGAL_REWARD = -2
UNQUALIFIED_REWARD = 0
QUALIFIED_REWARD = 1
GATE_FILTERS = ("board", "pv", "entropy")


def levenshtein(a: Sequence, b: Sequence) -> int:
    """Edit distance with unit costs over any two sequences of hashables."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


@dataclass(frozen=True)
class DistanceConfig:
    tau_board: float = 6
    tau_pv: float = 1
    pv_truncation_eval: int = 6
    pv_truncation_filter: int = 1

    def __post_init__(self):
        if self.tau_board < 0 or self.tau_pv < 0:
            raise ValueError("distance thresholds must be >= 0")
        if self.pv_truncation_eval < 1 or self.pv_truncation_filter < 1:
            raise ValueError("PV truncations must be >= 1")


def _board_tokens(p) -> str:
    if isinstance(p, str):
        return p[:BOARD_SIDE_TOKENS]
    return board_side_tokens(p)


def board_distance(a, b) -> int:
    """Edit distance between the board-and-side tokens of two positions.

    Accepts positions or precomputed token strings.
    """
    return Levenshtein.distance(_board_tokens(a), _board_tokens(b))


def _pv_tokens(pv) -> list:
    return [m if isinstance(m, str) else m.uci() for m in pv]


def pv_distance(pv_a, pv_b, truncation: int = 6) -> float:
    """Token edit distance of two truncated PVs over the longer length."""
    a = _pv_tokens(pv_a)[:truncation]
    b = _pv_tokens(pv_b)[:truncation]
    if not a or not b:
        raise ValueError("pv_distance needs nonempty PVs")
    return levenshtein(a, b) / max(len(a), len(b))


# entropy


class TokenDistributionProvider(Protocol):
    """Anything that can give next-token distributions for a token sequence."""

    def distributions(self, tokens: str) -> Iterable[np.ndarray]:
        ...


def shannon_entropy(probs: np.ndarray) -> float:
    p = probs[probs > 0]
    return float(-(p * np.log(p)).sum())


def sequence_entropy(provider: TokenDistributionProvider, tokens) -> float:
    """Mean Shannon entropy (nats) of the provider's next-token predictions."""
    if isinstance(tokens, Position):
        tokens = encode77(tokens)
    values = [shannon_entropy(d) for d in provider.distributions(tokens)]
    if not values:
        raise ValueError("empty sequence")
    return sum(values) / len(values)


class EntropyModel:
    """Position-aware n-gram model over 77-token sequences.

    Context for token ``i`` is its index plus up to ``order - 1`` preceding
    tokens. The per-index unigram is add-one smoothed over the alphabet;
    longer contexts are mixed in Witten-Bell style, each with weight
    ``n / (n + u)`` (``n`` observations, ``u`` distinct next tokens). The
    first unseen context stops the chain, so prediction backs off to the
    longest context that was seen.
    """

    VERSION = 2

    def __init__(self, order: int = 4, counts: Optional[dict] = None, fingerprint: str = "",
                 tau_ent: Optional[float] = None, percentile: float = 30.0):
        if order < 1:
            raise ValueError("order must be >= 1")
        self.order = order
        self.counts = counts or {}
        self.fingerprint = fingerprint
        self.tau_ent = tau_ent
        self.percentile = percentile

    @staticmethod
    def _key(i: int, ctx: str) -> str:
        return f"{i}|{ctx}"

    @classmethod
    def train(cls, corpus: Iterable, order: int = 4, percentile: float = 30.0) -> "EntropyModel":
        seqs = [encode77(s) if isinstance(s, Position) else s for s in corpus]
        if not seqs:
            raise ValueError("cannot train on an empty corpus")
        counts: dict = {}
        digest = hashlib.sha256()
        for seq in seqs:
            if len(seq) != SEQ_LEN:
                raise ValueError(f"sequence of length {len(seq)}")
            digest.update(seq.encode() + b"\n")
            for i, tok in enumerate(seq):
                for k in range(min(order - 1, i) + 1):
                    table = counts.setdefault(cls._key(i, seq[i - k:i]), {})
                    table[tok] = table.get(tok, 0) + 1
        model = cls(order, counts, digest.hexdigest()[:16], percentile=percentile)
        model.tau_ent = float(np.percentile([sequence_entropy(model, s) for s in seqs], percentile))
        return model

    def _counts(self, table: dict) -> np.ndarray:
        v = np.zeros(len(ALPHABET))
        for tok, c in table.items():
            v[TOKEN_INDEX[tok]] = c
        return v

    def distribution(self, prefix: str) -> np.ndarray:
        i = len(prefix)
        probs = self._counts(self.counts.get(self._key(i, ""), {})) + 1.0
        probs /= probs.sum()
        for k in range(1, min(self.order - 1, i) + 1):
            table = self.counts.get(self._key(i, prefix[i - k:]))
            if not table:
                break
            c = self._counts(table)
            n = c.sum()
            lam = n / (n + len(table))
            probs = lam * c / n + (1.0 - lam) * probs
        return probs

    def distributions(self, tokens: str):
        for i in range(len(tokens)):
            yield self.distribution(tokens[:i])

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump({"version": self.VERSION, "order": self.order, "fingerprint": self.fingerprint,
                       "tau_ent": self.tau_ent, "percentile": self.percentile,
                       "counts": self.counts}, fh, sort_keys=True)

    @classmethod
    def load(cls, path) -> "EntropyModel":
        with open(path) as fh:
            data = json.load(fh)
        if data.get("version") != cls.VERSION:
            raise ValueError(f"unsupported entropy model version {data.get('version')}")
        return cls(data["order"], data["counts"], data["fingerprint"], data["tau_ent"], data["percentile"])


# rewards


def outcome_reward(p, unique: bool, i_cnt: bool, census=None) -> int:
    """-2 for an illegal position, +1 for a unique counter-intuitive puzzle
    within the initial piece counts, 0 otherwise.

    ``p`` may be a FEN string, a Position, or None for unparseable output.
    """
    if isinstance(p, str):
        try:
            p = parse_fen(p)
        except PositionError:
            return ILLEGAL_REWARD
    if p is None or not is_legal(p):
        return ILLEGAL_REWARD
    if census is None:
        census = piece_census(p)
    if unique and i_cnt and not census.exceeds_initial:
        return QUALIFIED_REWARD
    return UNQUALIFIED_REWARD


def diversity_reward(outcome: int, gate_pass: bool) -> int:
    """+1 only for qualified puzzles that pass the gate; otherwise 0, or -2 if illegal."""
    if outcome == QUALIFIED_REWARD:
        return QUALIFIED_REWARD if gate_pass else UNQUALIFIED_REWARD
    return outcome


def reward_table(legal: bool, unique: bool, i_cnt: bool, census_ok: bool, gate_pass: bool) -> tuple:
    """``(outcome, diversity)`` rewards from the five boolean verdicts."""
    if not legal:
        outcome = ILLEGAL_REWARD
    elif unique and i_cnt and census_ok:
        outcome = QUALIFIED_REWARD
    else:
        outcome = UNQUALIFIED_REWARD
    return outcome, diversity_reward(outcome, gate_pass)


@dataclass
class ScoredPosition:
    fen: str
    solution_pv: tuple = ()
    r_uni: Optional[float] = None
    r_cnt: Optional[float] = None
    reward: int = UNQUALIFIED_REWARD
    entropy: Optional[float] = None
    min_board_dist: Optional[float] = None
    min_pv_dist: Optional[float] = None
    source: str = ""
    fingerprint: str = ""
    _tokens: Optional[str] = field(default=None, repr=False, compare=False)

    @property
    def tokens(self) -> str:
        if self._tokens is None:
            self._tokens = board_side_tokens(parse_fen(self.fen, validate=False))
        return self._tokens

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("_tokens")
        d["solution_pv"] = list(_pv_tokens(self.solution_pv))
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScoredPosition":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d and not k.startswith("_")}
        known["solution_pv"] = tuple(known.get("solution_pv", ()))
        return cls(**known)


@dataclass(frozen=True)
class GateResult:
    passed: bool
    failed: tuple = ()
    min_board_dist: Optional[float] = None
    min_pv_dist: Optional[float] = None

    @property
    def first_failure(self) -> Optional[str]:
        return self.failed[0] if self.failed else None


def diversity_gate(cand: ScoredPosition, peers: Sequence[ScoredPosition], reference: Sequence[ScoredPosition],
                   cfg: DistanceConfig = DistanceConfig(), tau_ent: Optional[float] = None) -> GateResult:
    """Board, PV and entropy filters for a qualified candidate.

    ``peers`` are qualified puzzles of the same batch, ``reference`` the
    buffer entries to compare against. With no ``tau_ent`` the entropy
    filter is skipped.
    """
    if cand.reward != QUALIFIED_REWARD:
        raise ValueError("the diversity gate applies to qualified positions only")
    others = list(peers) + list(reference)
    min_board = min((board_distance(cand.tokens, o.tokens) for o in others), default=math.inf)
    pv_others = [o for o in others if o.solution_pv]
    if cand.solution_pv and pv_others:
        min_pv = min(pv_distance(cand.solution_pv, o.solution_pv, cfg.pv_truncation_filter) for o in pv_others)
    else:
        min_pv = math.inf
    failed = []
    if min_board < cfg.tau_board:
        failed.append("board")
    if min_pv < cfg.tau_pv:
        failed.append("pv")
    if tau_ent is not None and (cand.entropy is None or cand.entropy < tau_ent):
        failed.append("entropy")
    return GateResult(not failed, tuple(failed), None if math.isinf(min_board) else min_board,
                      None if math.isinf(min_pv) else min_pv)


class ReplayBuffer:
    """Bounded store of accepted puzzles; the oldest entry is evicted first.

    Mutation and sampling are serialized by a lock; readers get copies.
    """

    def __init__(self, capacity: int = 100_000, seed: int = 0):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.entries: list = []
        self.pushed = 0
        self.evicted = 0
        self._rng = np.random.default_rng(seed)
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self.entries)

    def push(self, entry: ScoredPosition) -> None:
        if entry.reward != QUALIFIED_REWARD:
            raise ValueError("only gate-passing qualified entries may enter the buffer")
        with self._lock:
            self.entries.append(entry)
            self.pushed += 1
            if len(self.entries) > self.capacity:
                self.entries.pop(0)
                self.evicted += 1

    def _draw(self, k: int) -> list:
        with self._lock:
            n = len(self.entries)
            if k >= n:
                return list(self.entries)
            idx = self._rng.choice(n, size=k, replace=False)
            return [self.entries[i] for i in sorted(idx)]

    def sample(self, k: int = 16) -> list:
        return self._draw(k)

    def subsample(self, m: int = 2000) -> list:
        return self._draw(m)

    def snapshot(self) -> list:
        with self._lock:
            return list(self.entries)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            for e in self.snapshot():
                fh.write(json.dumps(e.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path, capacity: int = 100_000, seed: int = 0) -> "ReplayBuffer":
        buf = cls(capacity, seed)
        with open(path) as fh:
            for line in fh:
                if line.strip():
                    buf.push(ScoredPosition.from_dict(json.loads(line)))
        return buf


# nearest neighbours


class CorpusIndex:
    """Linear-scan index of corpus positions keyed by their board tokens."""

    def __init__(self, fens: Iterable[str]):
        self.fens = []
        self.tokens = []
        for fen in fens:
            p = parse_fen(fen, validate=False)
            self.fens.append(p.fen())
            self.tokens.append(board_side_tokens(p))

    def __len__(self) -> int:
        return len(self.fens)

    @classmethod
    def from_file(cls, path) -> "CorpusIndex":
        fens = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                fens.append(json.loads(line)["fen"] if line.startswith("{") else line)
        return cls(fens)

    def distances(self, p) -> np.ndarray:
        if not self.tokens:
            raise ValueError("empty corpus")
        return cdist([_board_tokens(p)], self.tokens, scorer=Levenshtein.distance, dtype=np.int32)[0]


def nearest_neighbors(p, index: CorpusIndex, k: int = 3) -> list:
    """``[(fen, distance)]`` for the ``k`` closest corpus positions, ties by corpus order."""
    d = index.distances(p)
    order = np.argsort(d, kind="stable")[:k]
    return [(index.fens[i], int(d[i])) for i in order]


def min_self_distances(records: Sequence[ScoredPosition], truncation: int = 6) -> tuple:
    """Mean over records of the distance to the closest other record (board, PV)."""
    if len(records) < 2:
        return 0.0, 0.0
    toks = [r.tokens for r in records]
    mat = cdist(toks, toks, scorer=Levenshtein.distance, dtype=np.int32).astype(float)
    np.fill_diagonal(mat, np.inf)
    board = float(mat.min(axis=1).mean())
    pvs = [r.solution_pv for r in records]
    pv_mins = []
    for i, a in enumerate(pvs):
        ds = [pv_distance(a, b, truncation) for j, b in enumerate(pvs) if j != i and a and b]
        if ds:
            pv_mins.append(min(ds))
    return board, (sum(pv_mins) / len(pv_mins) if pv_mins else 0.0)
