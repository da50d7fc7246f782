"""Pipeline configuration: flat ``key = value`` files plus environment overrides.

Every key can be overridden by ``PUZZLEGEN_<KEY>`` (upper case). Unknown
keys in either place are rejected.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields, replace
from typing import Mapping, Optional

from .engine import BUDGET_KINDS, Budget, EngineConfig, parse_schedule
from .evolve import EvoConfig
from .features import DEFAULT_WEIGHTS, WeightVector
from .novelty import DistanceConfig
from .uniqueness import UniquenessConfig

ENV_PREFIX = "PUZZLEGEN_"


@dataclass(frozen=True)
class PipelineConfig:
    # uniqueness
    tau_uni: float = 0.5
    mate_horizon: int = 15
    max_recursion_plies: int = 30
    # counter-intuitiveness
    tau_cnt: float = 0.1
    stability_tau: float = 0.05
    weights_file: str = ""
    # novelty
    tau_board: float = 6
    tau_pv: float = 1
    pv_truncation_eval: int = 6
    pv_truncation_filter: int = 1
    tau_ent: Optional[float] = None
    ent_percentile: float = 30.0
    ngram_order: int = 4
    entropy_model: str = ""
    replay_k: int = 16
    subsample: int = 2000
    buffer_capacity: int = 100_000
    exact_gate: bool = False
    # engine
    engine: str = "stockfish"
    engine_threads: int = 1
    engine_hash: int = 16
    multipv: int = 2
    budget_kind: str = "depth"
    budget_value: int = 20
    schedule: str = "1-20"
    handshake_timeout: float = 10.0
    search_timeout: Optional[float] = None
    winrate_slope: float = 0.00368
    pool_size: int = 1
    # evolution
    evo_workers: int = 1
    evo_iterations: int = 200
    evo_buffer_size: int = 16
    evo_parents: int = 4
    evo_mutations: int = 1
    evo_edit_budget: int = 2
    evo_move_budget: int = 2
    evo_t_start: float = 1.0
    evo_t_end: float = 0.01
    evo_schedule: str = "geometric"
    evo_budget_value: int = 12
    # run
    seed: int = 0
    batch_size: int = 64
    out: str = "out"

    def __post_init__(self):
        if self.budget_kind not in BUDGET_KINDS:
            raise ValueError(f"budget_kind must be one of {BUDGET_KINDS}")
        if self.multipv < 2:
            raise ValueError("multipv must be >= 2 for the uniqueness check")
        if self.batch_size < 1 or self.pool_size < 1:
            raise ValueError("batch_size and pool_size must be >= 1")
        if not 0 <= self.ent_percentile <= 100:
            raise ValueError("ent_percentile must lie in [0, 100]")
        parse_schedule(self.schedule)
        # delegate the remaining checks to the owning modules
        self.uniqueness()
        self.distance()
        self.evo()

    # views for the individual modules

    def uniqueness(self, budget_value: Optional[int] = None) -> UniquenessConfig:
        return UniquenessConfig(self.tau_uni, self.mate_horizon, self.max_recursion_plies,
                                Budget(self.budget_kind, budget_value or self.budget_value))

    def distance(self) -> DistanceConfig:
        return DistanceConfig(self.tau_board, self.tau_pv, self.pv_truncation_eval, self.pv_truncation_filter)

    def engine_config(self) -> EngineConfig:
        spec = self.engine
        kw = dict(hash_mb=self.engine_hash, threads=self.engine_threads, multipv=self.multipv,
                  budget_kind=self.budget_kind, budget_value=self.budget_value, schedule=self.schedule,
                  handshake_timeout=self.handshake_timeout, search_timeout=self.search_timeout,
                  winrate_slope=self.winrate_slope)
        return EngineConfig.from_spec(spec, **kw)

    def evo(self) -> EvoConfig:
        return EvoConfig(self.evo_workers, self.evo_iterations, self.evo_buffer_size, self.evo_parents,
                         self.evo_mutations, self.evo_edit_budget, self.evo_move_budget, self.evo_t_start,
                         self.evo_t_end, self.seed, schedule=self.evo_schedule)

    def weights(self) -> WeightVector:
        return WeightVector.load(self.weights_file) if self.weights_file else DEFAULT_WEIGHTS

    @property
    def schedule_tuple(self) -> tuple:
        return parse_schedule(self.schedule)


FIELD_TYPES = {f.name: f.type for f in fields(PipelineConfig)}


def _convert(key: str, raw: str):
    kind = FIELD_TYPES[key]
    raw = raw.strip()
    if "Optional" in kind and raw.lower() in ("", "none", "null"):
        return None
    if "bool" in kind:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    if "int" in kind:
        return int(raw)
    if "float" in kind:
        return float(raw)
    return raw


def parse_config_text(text: str, source: str = "<config>") -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise ValueError(f"{source}:{lineno}: expected 'key = value'")
        if key not in FIELD_TYPES:
            raise ValueError(f"{source}:{lineno}: unknown config key {key!r}")
        values[key] = _convert(key, value)
    return values


def env_overrides(environ: Mapping[str, str]) -> dict:
    values = {}
    for name, raw in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX):].lower()
        if key not in FIELD_TYPES:
            raise ValueError(f"unknown config key in environment variable {name}")
        values[key] = _convert(key, raw)
    return values


def load_config(path=None, environ: Optional[Mapping[str, str]] = None, **overrides) -> PipelineConfig:
    """File values, then environment, then explicit keyword overrides."""
    values = {}
    if path:
        with open(path) as fh:
            values.update(parse_config_text(fh.read(), str(path)))
    values.update(env_overrides(os.environ if environ is None else environ))
    unknown = set(overrides) - set(FIELD_TYPES)
    if unknown:
        raise ValueError(f"unknown config keys {sorted(unknown)}")
    values.update({k: v for k, v in overrides.items() if v is not None})
    return replace(PipelineConfig(), **values)


def dump_config(cfg: PipelineConfig) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        lines.append(f"{f.name} = {'' if v is None else v}")
    return "\n".join(lines) + "\n"
