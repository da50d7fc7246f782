import pytest

from puzzlegen.config import (
    PipelineConfig,
    dump_config,
    env_overrides,
    load_config,
    parse_config_text,
)
from puzzlegen.features import GRID_STEP, DEFAULT_WEIGHTS


def test_published_constants():
    cfg = load_config(environ={})
    assert cfg.tau_uni == 0.5
    assert cfg.tau_cnt == 0.1
    assert cfg.tau_board == 6
    assert cfg.tau_pv == 1
    assert cfg.pv_truncation_filter == 1
    assert cfg.pv_truncation_eval == 6
    assert cfg.replay_k == 16
    assert cfg.subsample == 2000
    assert cfg.mate_horizon == 15
    assert GRID_STEP == 0.1
    assert cfg.weights().nonzero() == {"depth_cp_move": 0.8, "neg_capture_material": 0.1}
    assert cfg.weights() == DEFAULT_WEIGHTS


def test_module_views_carry_values():
    cfg = PipelineConfig(tau_uni=0.4, tau_board=4, evo_iterations=7, seed=3)
    assert cfg.uniqueness().tau_uni == 0.4
    assert cfg.distance().tau_board == 4
    evo = cfg.evo()
    assert (evo.iterations, evo.seed) == (7, 3)
    assert cfg.uniqueness(budget_value=5).budget.value == 5


def test_file_values(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\ntau_uni = 0.6\nexact_gate = yes\nbatch_size = 8  # inline\n\ntau_ent = none\n")
    cfg = load_config(path, environ={})
    assert cfg.tau_uni == 0.6
    assert cfg.exact_gate is True
    assert cfg.batch_size == 8
    assert cfg.tau_ent is None


def test_precedence_file_env_kwargs(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("seed = 1\nbatch_size = 4\ntau_pv = 2\n")
    cfg = load_config(path, environ={"PUZZLEGEN_SEED": "2", "PUZZLEGEN_BATCH_SIZE": "5"}, batch_size=6)
    assert (cfg.seed, cfg.batch_size, cfg.tau_pv) == (2, 6, 2.0)


def test_env_ignores_foreign_names():
    assert env_overrides({"HOME": "/root", "PUZZLEGEN_TAU_CNT": "0.2"}) == {"tau_cnt": 0.2}


@pytest.mark.parametrize("text", ["tau_unique = 0.5", "tau_uni 0.5", "exact_gate = maybe", "seed = x"])
def test_bad_file_lines(text):
    with pytest.raises(ValueError):
        parse_config_text(text)


def test_unknown_env_and_kwargs():
    with pytest.raises(ValueError):
        load_config(environ={"PUZZLEGEN_TAU_UNIQUE": "1"})
    with pytest.raises(ValueError):
        load_config(environ={}, tau_unique=1)


@pytest.mark.parametrize("kwargs", [
    dict(budget_kind="seconds"),
    dict(multipv=1),
    dict(batch_size=0),
    dict(ent_percentile=120),
    dict(schedule="20-1"),
    dict(tau_uni=0.0),
    dict(tau_board=-1),
    dict(evo_t_start=0.001),
])
def test_invalid_values(kwargs):
    with pytest.raises(ValueError):
        PipelineConfig(**kwargs)


def test_dump_load_round_trip(tmp_path):
    cfg = PipelineConfig(tau_uni=0.45, exact_gate=True, schedule="2-10", out="o")
    path = tmp_path / "dump.cfg"
    path.write_text(dump_config(cfg))
    assert load_config(path, environ={}) == cfg
