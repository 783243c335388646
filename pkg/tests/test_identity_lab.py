from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fbswe.geometry import make_circle_curve
from fbswe.identity_lab import (
    PhiCalculus, Plane, RandomFieldSpec, _dot, _mv, _perp, _random_gamma, adjugate, check_divergence_theorem,
    check_linearization_rules, check_nphi_formula, check_rellich, check_vector_identities, format_table,
    rellich_fd_order, run_suite,
)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_band_limited_k8_identities(seed):
    spec = RandomFieldSpec(seed=seed, K=8, N=128)
    for name, val in {**check_vector_identities(spec), **check_linearization_rules(spec)}.items():
        assert val <= 1e-11, name
    assert check_rellich(spec) <= 1e-9


def test_f1_with_equal_fields_is_exact():
    rng = np.random.default_rng(5)
    P = Plane(32)
    F, V = P.random_vector(rng, 4), P.random_vector(rng, 4)
    DV = P.jac(V)
    curl = DV[..., 1, 0] - DV[..., 0, 1]
    lhs = _dot(F, _mv(DV, F))
    rhs = _dot(F, _mv(DV, F)) + _dot(F, _perp(F)) * curl
    assert np.array_equal(lhs, rhs)


@settings(max_examples=50, deadline=None)
@given(a=st.lists(st.floats(-3, 3), min_size=4, max_size=4))
def test_adjugate(a):
    A = np.array(a).reshape(2, 2)
    adj = adjugate(A)
    det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
    assert np.allclose(adj @ A, det * np.eye(2), atol=1e-12)
    assert np.array_equal(adjugate(np.eye(2)), np.eye(2))


def test_identity_chart_reduces_to_plain_calculus():
    rng = np.random.default_rng(2)
    P = Plane(32)
    C = PhiCalculus(P, np.zeros(P.x.shape))
    f, v = P.random_scalar(rng, 4), P.random_vector(rng, 4)
    assert np.array_equal(C.J, np.ones_like(C.J))
    assert np.allclose(C.grad(f), P.grad(f), atol=1e-15)
    assert np.allclose(C.div(v), P.d(v[..., 0], 0) + P.d(v[..., 1], 1), atol=1e-15)


def test_static_chart_linearization():
    """With phi fixed the variation of nabla^phi f is nabla^phi of the variation."""
    rng = np.random.default_rng(3)
    P = Plane(32)
    u = 0.1 * P.random_vector(rng, 4)
    f, fdot = P.random_scalar(rng, 4), P.random_scalar(rng, 4)
    h = 1e-30
    Cc = PhiCalculus(P, u + 0j)
    var = Cc.grad(f + 1j * h * fdot).imag / h
    assert np.max(np.abs(var - PhiCalculus(P, u).grad(fdot))) <= 1e-13
    # constant f: the good unknown and its variation vanish
    assert np.max(np.abs(PhiCalculus(P, u).grad(np.full(P.x.shape[:-1], 2.0)))) <= 1e-13


def test_divergence_theorem():
    res = check_divergence_theorem(0, 128, 256)
    assert res["conservative"] <= 1e-6
    coarse = check_divergence_theorem(0, 64, 128)
    assert np.log2(coarse["pointwise"] / res["pointwise"]) >= 1.8


def test_nphi_examples():
    assert check_nphi_formula(np.zeros(64)) <= 1e-15
    c = make_circle_curve(1.0, 64)
    assert check_nphi_formula(np.full(64, 0.05)) <= 1e-15
    rng = np.random.default_rng(9)
    assert check_nphi_formula(_random_gamma(rng, 128, 6, 0.1, c.L)) <= 1e-9


def test_rellich_fd_order():
    _, order = rellich_fd_order(RandomFieldSpec(seed=1))
    assert order >= 1.9


def test_suite_reproducible():
    a, b = run_suite(range(2)), run_suite(range(2))
    assert [(r.name, r.residual) for r in a] == [(r.name, r.residual) for r in b]
    assert all(r.passed for r in a)
    table = format_table(a)
    assert table.splitlines()[0].split()[:3] == ["identity", "residual", "threshold"]
    assert len(table.splitlines()) == len(a) + 1
