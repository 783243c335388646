from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fbswe.cli import (
    DEFAULTS, OUTPUT_ENV, Expression, main, parse_config, serialize_config, validate_config,
)
from fbswe.errors import ConfigInvalid

SMALL = "geometry.Nr_ext = 17\ngeometry.Ns = 32\ngeometry.Nr_int = 12\n"


def write(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def kinds(text):
    return {v.kind for v in validate_config(parse_config(text))}


def read_csv(path):
    return np.genfromtxt(path, delimiter=",", names=True)


def test_validate_default_config(tmp_path, capsys):
    assert main(["validate", write(tmp_path, "")]) == 0
    assert capsys.readouterr().out.strip() == "ok"


def test_tube_violation():
    # limit eta0 r0 = 0.125; a cos(s) mode of amplitude 1.5 times that
    assert "tube" in kinds("initial.gamma_cos = 0, 0.1875\n")
    assert "tube" not in kinds("initial.gamma_cos = 0, 0.05\n")


def test_subcritical_violation_names_node():
    cfg = parse_config("initial.v1 = 4*exp(-((x1-2)**2 + x2**2)/0.1)\n")
    bad = [v for v in validate_config(cfg) if v.kind == "subcritical"]
    assert bad and bad[0].node is not None
    x1, x2 = (float(c.split("=")[1]) for c in bad[0].node)
    assert abs(x1 - 2.0) <= 0.3 and abs(x2) <= 0.3


def test_invalid_config_exit_code(tmp_path, capsys):
    assert main(["validate", write(tmp_path, "initial.gamma_cos = 0, 0.1875\n")]) == 2
    assert main(["run", write(tmp_path, "numerics.nonsense = 1\n")]) == 2
    err = capsys.readouterr().err
    assert "unknown key" in err


@pytest.mark.parametrize("src", [
    "__import__('os')", "x1.real", "[x1]", "lambda: 1", "open('f')", "x1 if x2 else r", "True",
])
def test_expression_grammar_rejects(src):
    with pytest.raises(ValueError):
        Expression(src)
    with pytest.raises(ConfigInvalid):
        parse_config(f"initial.zeta = {src}\n")


def test_expression_evaluates():
    e = Expression("0.5*sin(pi*x1) + exp(-r**2) - s")
    x1, x2, r, s = np.array([0.5]), np.array([0.0]), np.array([1.0]), np.array([0.25])
    assert e(x1, x2, r, s)[0] == pytest.approx(0.5 + np.exp(-1.0) - 0.25, rel=1e-15)


@settings(max_examples=40, deadline=None)
@given(g=st.floats(0.1, 50), cfl=st.floats(0.01, 0.9), n=st.integers(8, 256),
       coeffs=st.lists(st.floats(-0.1, 0.1), max_size=4), snap=st.booleans())
def test_config_round_trip(g, cfl, n, coeffs, snap):
    cfg = dict(DEFAULTS, **{"physics.g": g, "numerics.cfl": cfl, "geometry.Ns": n,
                            "initial.gamma_sin": coeffs, "output.snapshots": snap})
    assert parse_config(serialize_config(cfg)) == cfg
    assert set(parse_config(serialize_config(cfg))) == set(DEFAULTS)


def test_lake_at_rest_run(tmp_path, monkeypatch):
    out = tmp_path / "out"
    monkeypatch.setenv(OUTPUT_ENV, str(out))
    cfg = SMALL + "initial.zeta = 0\nnumerics.T_end = 0.2\n"
    assert main(["run", write(tmp_path, cfg)]) == 0
    d = read_csv(out / "diagnostics.csv")
    assert d["t"][-1] == pytest.approx(0.2, abs=1e-14)
    assert np.ptp(d["energy"]) <= 1e-12 * d["energy"][0]
    assert np.all(d["gamma_max"] == 0.0)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "ok" and manifest["exit_code"] == 0
    assert (out / "checkpoint.bin").exists()
    assert parse_config((out / "config.txt").read_text()) == parse_config(cfg)


def test_resume_is_bit_identical(tmp_path, monkeypatch):
    base = SMALL + "numerics.dt = 0.02\ninitial.zeta = 0.02*exp(-((x1-1.8)**2 + x2**2)/0.09)\n"
    whole, split = tmp_path / "whole", tmp_path / "split"
    monkeypatch.setenv(OUTPUT_ENV, str(whole))
    assert main(["run", write(tmp_path, base + "numerics.T_end = 0.2\n", "a.cfg")]) == 0
    monkeypatch.setenv(OUTPUT_ENV, str(split))
    assert main(["run", write(tmp_path, base + "numerics.T_end = 0.1\n", "b.cfg")]) == 0
    assert main(["resume", str(split / "checkpoint.bin"), "--T", "0.2"]) == 0
    a = (whole / "diagnostics.csv").read_text().splitlines()
    b = (split / "diagnostics.csv").read_text().splitlines()
    assert len(a) == len(b) == 12
    assert a == b


def test_transversality_loss_dumps_state(tmp_path, monkeypatch, capsys):
    out = tmp_path / "out"
    monkeypatch.setenv(OUTPUT_ENV, str(out))
    cfg = ("geometry.Nr_ext = 24\ngeometry.Ns = 32\ngeometry.Nr_int = 12\n"
           "obstacle.depth = 0.06\nnumerics.c0 = 0.059\nnumerics.eta0 = 0.5\nnumerics.cfl = 0.2\n"
           "initial.zeta = 0.04*exp(-((x1-1.7)**2 + x2**2)/0.09)\n")
    assert main(["validate", write(tmp_path, cfg)]) == 0
    assert main(["run", write(tmp_path, cfg)]) == 5
    assert "fatal: TransversalityLost" in capsys.readouterr().out
    assert (out / "dump.bin").exists() and not (out / "checkpoint.bin").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["exit_code"] == 5 and manifest["state_file"] == "dump.bin"


def test_identities_command(capsys):
    assert main(["identities", "--seed", "0", "--nseeds", "2"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].split()[0] == "identity" and len(lines) > 1
