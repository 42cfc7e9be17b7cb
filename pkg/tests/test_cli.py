import csv
import math
import os

import numpy as np
import pytest
import yaml
from hypothesis import HealthCheck, given, settings, strategies as st

from cocyclelab import cli
from cocyclelab.config import (EXPERIMENTS, PARAMS, build_cocycle, config_from_dict, dump_config,
                               load_config, read_grid_payload, write_grid_payload)
from cocyclelab.errors import ConfigError

CAT = [[2, 1], [1, 1]]
CONFORMAL = {"kind": "conformal",
             "lam": {"type": "trig", "c0": 1.0, "terms": [{"k": [1, 0], "amp": 0.2}]},
             "theta": {"type": "trig", "c0": 0.5, "terms": [{"k": [0, 1], "amp": 0.3}]}}


def write(tmp_path, data, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return str(path)


def summary(out_dir):
    lines = (out_dir / "summary.txt").read_text().splitlines()
    return dict(line.split("=", 1) for line in lines)


def rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


params_strategy = st.fixed_dictionaries({}, optional={
    "max_period": st.integers(1, 20),
    "resolution": st.integers(2, 1024),
    "depth": st.integers(1, 10_000),
    "tol": st.floats(1e-15, 1.0),
    "T": st.integers(100, 10**8),
    "point": st.lists(st.floats(0, 1), min_size=2, max_size=2),
    "side": st.sampled_from(["stable", "unstable"]),
})


@given(params_strategy, st.sampled_from(EXPERIMENTS), st.integers(0, 2**31))
def test_config_round_trip(params, experiment, seed):
    data = {"base": {"matrix": CAT}, "cocycle": CONFORMAL, "experiment": experiment,
            "params": params, "seed": seed}
    cfg = config_from_dict(data)
    again = config_from_dict(yaml.safe_load(dump_config(cfg)))
    assert again == cfg
    assert again.to_dict() == cfg.to_dict()


@pytest.mark.parametrize("mutate,field", [
    (lambda d: d.pop("base"), "base.matrix"),
    (lambda d: d.update(base={"matrix": [[2, 1], [1]]}), "base.matrix"),
    (lambda d: d.update(base={"matrix": [[2.5, 1], [1, 1]]}), "base.matrix"),
    (lambda d: d.update(cocycle={}), "cocycle.kind"),
    (lambda d: d.update(experiment="plot"), "experiment"),
    (lambda d: d.update(params={"depth": 0}), "params.depth"),
    (lambda d: d.update(params={"tol": "small"}), "params.tol"),
    (lambda d: d.update(params={"frobnicate": 1}), "params.frobnicate"),
    (lambda d: d.update(params={"side": "left"}), "params.side"),
    (lambda d: d.update(seed=-1), "seed"),
    (lambda d: d.update(colour="blue"), "colour"),
])
def test_config_errors_name_the_field(mutate, field):
    data = {"base": {"matrix": CAT}, "cocycle": CONFORMAL, "experiment": "exponents"}
    mutate(data)
    with pytest.raises(ConfigError) as info:
        config_from_dict(data)
    assert info.value.field == field
    assert str(info.value).startswith(field + ":")


def test_every_param_default_is_in_range():
    for name, (default, kind, lo, hi) in PARAMS.items():
        if default is None:
            continue
        if lo is not None:
            assert default >= lo, name
        if hi is not None:
            assert default <= hi, name


def test_grid_payload_round_trip(tmp_path):
    vals = np.random.default_rng(0).normal(size=(8, 8, 2, 2))
    path = tmp_path / "grid.bin"
    write_grid_payload(path, vals, 2)
    back, k = read_grid_payload(path)
    assert k == 2 and np.array_equal(back, vals)
    path.write_bytes(b"JUNK" + path.read_bytes()[4:])
    with pytest.raises(ConfigError, match="not a grid payload"):
        read_grid_payload(path)


def test_grid_payload_config(tmp_path):
    vals = np.broadcast_to(np.diag([2.0, 0.5]), (4, 4, 2, 2))
    write_grid_payload(tmp_path / "g.bin", vals)
    cfg = load_config(write(tmp_path, {"base": {"matrix": CAT},
                                       "cocycle": {"kind": "grid", "payload": "g.bin"},
                                       "experiment": "exponents"}))
    from cocyclelab.config import build_base
    c = build_cocycle(cfg, build_base(cfg))
    assert np.allclose(c.values([[0.3, 0.7]]), np.diag([2.0, 0.5]))


def test_validate_examples(tmp_path, capsys):
    bad = write(tmp_path, {"base": {"matrix": [[1, 1], [0, 1]]}, "cocycle": CONFORMAL,
                           "experiment": "exponents"})
    assert cli.main(["validate", "--config", bad]) == 1
    assert "modulus 1" in capsys.readouterr().err
    det2 = write(tmp_path, {"base": {"matrix": [[2, 0], [0, 1]]}, "cocycle": CONFORMAL,
                            "experiment": "exponents"})
    assert cli.main(["validate", "--config", det2]) == 1
    assert "not invertible" in capsys.readouterr().err
    good = write(tmp_path, {"base": {"matrix": CAT}, "cocycle": CONFORMAL, "experiment": "exponents"})
    assert cli.main(["validate", "--config", good]) == 0
    out = dict(line.split("=", 1) for line in capsys.readouterr().out.splitlines())
    kappa = float(out["base_dynamics.ToralAutomorphism.kappa"])
    assert kappa == pytest.approx(math.log((3 + math.sqrt(5)) / 2), abs=1e-12)


def test_missing_config_is_operational_error(tmp_path, capsys):
    assert cli.main(["validate", "--config", str(tmp_path / "nope.yaml")]) == 1
    assert "error" in capsys.readouterr().err


def test_run_periodic_scan_conformal(tmp_path):
    cfg = write(tmp_path, {"base": {"matrix": CAT}, "cocycle": CONFORMAL,
                           "experiment": "periodic-scan", "params": {"max_period": 6}})
    out = tmp_path / "out"
    assert cli.main(["run", "--config", cfg, "--out-dir", str(out), "--workers", "2"]) == 0
    table = rows(out / "periodic_data.csv")
    assert table[0][:4] == ["orbit_id", "period", "eigenvalue_moduli", "K_p"]
    assert all(float(r[3]) == pytest.approx(1.0, abs=1e-12) for r in table[1:])
    pts = rows(out / "periodic_points.csv")
    assert pts[1] == ["0", "1", "0/1", "0/1"]
    s = summary(out)
    assert s["cli.exit_code"] == "0"
    assert s["spectral.periodic_scan.checklist_pass"] == "true"


def test_run_counterexample_exit_2(tmp_path):
    cfg = write(tmp_path, {"base": {"matrix": CAT},
                           "cocycle": {"kind": "shear_rotation", "eps": 0.1, "seg_len": 200,
                                       "max_period": 8},
                           "experiment": "counterexample", "params": {"n_max": 150}})
    out = tmp_path / "out"
    assert cli.main(["run", "--config", cfg, "--out-dir", str(out)]) == 2
    growth = rows(out / "growth.csv")
    assert growth[0] == ["n", "K", "shear_formula", "relative_error"]
    K = np.array([float(r[1]) for r in growth[1:]])
    n = np.arange(len(K))
    assert np.all(K >= 1 + 0.01 * n)
    periodic = rows(out / "periodic_data.csv")
    assert all(r[4] == "yes" and r[5] == "true" for r in periodic[1:])
    assert summary(out)["cli.counterexample_confirmed"] == "true"


def test_run_recover_and_determinism(tmp_path):
    C = {"type": "polar", "h": 0.5, "psi1": {"c0": 0.3, "terms": [{"k": [1, 0], "amp": 0.4}]},
         "psi2": {"c0": 0.0, "terms": [{"k": [1, 1], "amp": 0.5}]}}
    cfg = write(tmp_path, {"base": {"matrix": CAT},
                           "cocycle": {"kind": "conjugated_conformal", "C": C,
                                       "lam": 1.0, "theta": 1.0},
                           "experiment": "recover",
                           "params": {"resolution": 8, "depth": 10, "residual_samples": 16}})
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        assert cli.main(["run", "--config", cfg, "--out-dir", str(out), "--seed", "7"]) == 0
    for name in ("structure_field.csv", "summary.txt"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    s = summary(outs[0])
    assert s["cli.seed"] == "7"
    assert float(s["invariant_structures.recover_invariant_structure.invariance_residual"]) <= 1e-8
    header = rows(outs[0] / "structure_field.csv")[0]
    assert header == ["x1", "x2", "c00", "c01", "c11", "radius"]


def test_summary_keys_cite_modules(tmp_path):
    cfg = write(tmp_path, {"base": {"matrix": CAT}, "cocycle": {"kind": "identity"},
                           "experiment": "livsic", "params": {"a": 2.0}})
    out = tmp_path / "out"
    assert cli.main(["run", "--config", cfg, "--out-dir", str(out)]) == 2
    modules = ("cli.", "base_dynamics.", "cocycles.", "spectral.", "conformal_geometry.",
               "invariant_structures.")
    s = summary(out)
    assert all(key.startswith(modules) for key in s)
    assert s["invariant_structures.livsic_solve.obstruction_product"] == "2.0"


@pytest.mark.parametrize("experiment", ["exponents", "distortion-growth", "holonomy"])
def test_run_other_experiments(tmp_path, experiment):
    cfg = write(tmp_path, {"base": {"matrix": CAT}, "cocycle": CONFORMAL, "experiment": "exponents",
                           "params": {"T": 1000, "samples": 4}})
    out = tmp_path / "out"
    assert cli.main(["run", experiment, "--config", cfg, "--out-dir", str(out)]) == 0
    assert summary(out)["cli.experiment"] == experiment


def test_run_livsic_coboundary(tmp_path):
    a = {"type": "coboundary", "phi": {"c0": 2.0, "terms": [{"k": [1, 0], "amp": 1.0}]}}
    cfg = write(tmp_path, {"base": {"matrix": CAT}, "cocycle": {"kind": "identity"},
                           "experiment": "livsic",
                           "params": {"a": a, "livsic_T": 100_000, "resolution": 16,
                                      "residual_tol": 1e-3}})
    out = tmp_path / "out"
    assert cli.main(["run", "--config", cfg, "--out-dir", str(out)]) == 0
    assert rows(out / "livsic.csv")[0] == ["x1", "x2", "phi"]


def test_workers_must_be_positive(tmp_path, capsys):
    cfg = write(tmp_path, {"base": {"matrix": CAT}, "cocycle": CONFORMAL, "experiment": "exponents"})
    assert cli.main(["run", "--config", cfg, "--workers", "0", "--out-dir", str(tmp_path)]) == 1
    assert "--workers" in capsys.readouterr().err
