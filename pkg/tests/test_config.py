"""Tests for configuration loading."""

import json
from pathlib import Path

import pytest
import yaml

from ls_sweep.config import load_config

PROJECT_ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture(autouse=True)
def _isolated_env(tmp_path: Path, monkeypatch: pytest.MonkeyPatch):
    """Keep stray .env files and LS_SWEEP_THREADS out of the tests."""
    monkeypatch.chdir(tmp_path)
    # set first so that teardown also removes a value loaded from .env
    monkeypatch.setenv("LS_SWEEP_THREADS", "1")
    monkeypatch.delenv("LS_SWEEP_THREADS")


def _write_config(tmp_path: Path, data: dict) -> str:
    config_file = tmp_path / "config.yaml"
    config_file.write_text(yaml.dump(data, allow_unicode=True), encoding="utf-8")
    return str(config_file)


def test_defaults_without_file():
    cfg = load_config()
    assert cfg.grid.omega_over_2pi == 16
    assert cfg.grid.b == 8
    assert cfg.grid.c_pml == 10
    assert cfg.solver.tol == 1e-6
    assert cfg.velocity.kind == "free"
    assert cfg.direction == (0.0, -1.0)
    assert cfg.threads == 1


def test_missing_file_hints_example():
    with pytest.raises(FileNotFoundError, match="config.example.yaml"):
        load_config("nope.yaml")


def test_example_config_loads():
    cfg = load_config(str(PROJECT_ROOT / "config.example.yaml"))
    assert cfg.velocity.kind == "converging_gaussian"
    assert cfg.stencil_eval.schemes == ["sparsify", "qsfem"]
    assert cfg.stencil_eval.fit_waves == 1024.0
    assert cfg.calibration.b_values == [4, 8]
    assert cfg.grid.to_grid().n == 127


def test_sections_parsed(tmp_path: Path):
    data = {
        "grid": {"omega_over_2pi": 4, "ppw": 6, "b": 4, "c_pml": 12},
        "velocity": {"kind": "random", "seed": 3, "contrast": 0.1},
        "incoming": {"direction": [1.0, 0.0]},
        "solver": {"tol": 1e-8, "restart": 10},
        "out": "results",
        "seed": 9,
    }
    cfg = load_config(_write_config(tmp_path, data))
    assert cfg.grid.omega_over_2pi == 4.0
    assert cfg.grid.to_grid().c_pml == 12.0
    assert cfg.velocity.seed == 3
    assert cfg.direction == (1.0, 0.0)
    assert cfg.solver.restart == 10
    assert cfg.solver.maxit == 50
    assert cfg.out == Path("results")
    assert cfg.seed == 9


def test_fit_waves_null_keeps_grid_window(tmp_path: Path):
    cfg = load_config(_write_config(tmp_path, {"stencil_eval": {"fit_waves": None}}))
    assert cfg.stencil_eval.fit_waves is None


class TestValidation:
    def test_unknown_top_level_key(self, tmp_path: Path):
        with pytest.raises(ValueError, match="Unknown keys in '<top>'"):
            load_config(_write_config(tmp_path, {"gird": {}}))

    def test_unknown_section_key(self, tmp_path: Path):
        with pytest.raises(ValueError, match="Unknown keys in 'solver'"):
            load_config(_write_config(tmp_path, {"solver": {"tolerance": 1e-6}}))

    def test_unknown_scheme(self, tmp_path: Path):
        with pytest.raises(ValueError, match="Unknown scheme"):
            load_config(_write_config(tmp_path, {"stencil_eval": {"schemes": ["fem"]}}))

    def test_fit_waves_must_be_positive(self, tmp_path: Path):
        with pytest.raises(ValueError, match="fit_waves"):
            load_config(_write_config(tmp_path, {"stencil_eval": {"fit_waves": 0}}))

    def test_direction_must_be_unit(self, tmp_path: Path):
        with pytest.raises(ValueError, match="unit vector"):
            load_config(_write_config(tmp_path, {"incoming": {"direction": [1.0, 1.0]}}))

    def test_grid_too_small(self, tmp_path: Path):
        with pytest.raises(ValueError, match="too small"):
            load_config(_write_config(tmp_path, {"grid": {"omega_over_2pi": 1}}))

    def test_invalid_solver(self, tmp_path: Path):
        with pytest.raises(ValueError, match="only left"):
            load_config(_write_config(tmp_path, {"solver": {"side": "right"}}))


class TestVelocityFile:
    def test_file_prefix(self, tmp_path: Path):
        media = tmp_path / "media.json"
        media.write_text(json.dumps({"kind": "gaussian_cloud", "seed": 4}), encoding="utf-8")
        cfg = load_config(_write_config(tmp_path, {"velocity": f"file:{media}"}))
        assert cfg.velocity.kind == "gaussian_cloud"
        assert cfg.velocity.seed == 4

    def test_missing_file(self, tmp_path: Path):
        with pytest.raises(FileNotFoundError, match="Velocity file"):
            load_config(_write_config(tmp_path, {"velocity": "file:missing.json"}))

    def test_plain_string_rejected(self, tmp_path: Path):
        with pytest.raises(ValueError, match="file:PATH"):
            load_config(_write_config(tmp_path, {"velocity": "marmousi"}))

    def test_unknown_velocity_key(self, tmp_path: Path):
        with pytest.raises(ValueError, match="Unknown velocity keys"):
            load_config(_write_config(tmp_path, {"velocity": {"kind": "free", "depth": 1}}))


class TestOverrides:
    def test_cli_overrides_file(self, tmp_path: Path):
        path = _write_config(tmp_path, {"grid": {"omega_over_2pi": 4, "b": 4}, "threads": 2})
        cfg = load_config(path, {"ppw": 10, "c_pml": 5, "threads": 3, "out": "x", "b": None})
        assert cfg.grid.ppw == 10.0
        assert cfg.grid.c_pml == 5.0
        assert cfg.grid.b == 4
        assert cfg.threads == 3
        assert cfg.out == Path("x")

    def test_env_threads_wins(self, monkeypatch: pytest.MonkeyPatch):
        monkeypatch.setenv("LS_SWEEP_THREADS", "4")
        cfg = load_config(None, {"threads": 2})
        assert cfg.threads == 4

    def test_dotenv_is_read(self, tmp_path: Path):
        (tmp_path / ".env").write_text("LS_SWEEP_THREADS=5\n", encoding="utf-8")
        assert load_config().threads == 5

    def test_unknown_override(self):
        with pytest.raises(ValueError, match="Unknown override"):
            load_config(None, {"colour": "red"})
