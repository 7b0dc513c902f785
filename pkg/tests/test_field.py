"""Fields, propagators, loops and sampled bundles."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import dense_product
from homindex.errors import DomainError, InputError, NumericError, SamplingError
from homindex.field import (
    DiscreteVectorField,
    ParameterLoop,
    SampledBundle,
    autonomous_field,
    construct_hyperbolic_family,
    direct_sum,
    mobius_bundle,
    perturb_field,
    propagator,
    realization_field,
    tabulated_field,
    trivial_bundle,
)


def test_propagator_composition_order():
    # A_0 swaps coordinates, A_1 scales; Phi(2, 0) = A_1 @ A_0
    a0 = np.array([[0.0, 1.0], [1.0, 0.0]])
    a1 = np.diag([2.0, 3.0])
    f = tabulated_field(np.stack([a0, a1]), window=(0, 1))
    expected = np.array([[0.0, 2.0], [3.0, 0.0]])
    assert np.allclose(propagator(f, 0, 2, 0), expected)
    assert np.allclose(propagator(f, 0, 1, 1), np.eye(2))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), dim=st.integers(1, 4))
def test_cocycle_identity(seed, dim):
    rng = np.random.default_rng(seed)
    mats = rng.uniform(-1.0, 1.0, size=(9, dim, dim))
    f = tabulated_field(mats, window=(0, 8))
    k, m, n = 9, 5, 2
    left = propagator(f, 0, k, m) @ propagator(f, 0, m, n)
    assert np.allclose(left, propagator(f, 0, k, n), atol=1e-12)
    assert np.allclose(propagator(f, 0, k, n), dense_product(mats[n:k]), atol=1e-12)


def test_propagator_guards():
    f = autonomous_field(np.diag([3.0, 3.0]))
    with pytest.raises(InputError):
        propagator(f, 0, 20_001, 0)
    with pytest.raises(NumericError):
        propagator(f, 0, 400, 0)  # 3^400 blows past 1e150
    with pytest.raises(InputError):
        propagator(f, 0, 0, 3)


def test_loop_validation():
    with pytest.raises(InputError):
        ParameterLoop(np.zeros((4, 1)))
    with pytest.raises(InputError):
        ParameterLoop(np.ones((10, 1)))
    loop = ParameterLoop.circle(16)
    assert len(loop) == 16
    assert loop.angular
    assert loop.angle(8) == pytest.approx(np.pi)


def test_mobius_bundle_frames():
    loop = ParameterLoop.circle(16)
    mb = mobius_bundle(loop)
    assert mb.rank == 1 and mb.dim == 2
    assert np.allclose(mb.fibre(0)[:, 0], [1.0, 0.0])
    assert np.allclose(mb.fibre(8)[:, 0], [0.0, 1.0], atol=1e-12)
    plain = ParameterLoop(np.linspace(0.0, 1.0, 16)[:, None])
    with pytest.raises(InputError):
        mobius_bundle(plain)


def test_bundle_invariants():
    loop = ParameterLoop.circle(8)
    bad = np.repeat(np.array([[1.0], [1.0]])[None], 8, axis=0)
    with pytest.raises(InputError):
        SampledBundle(loop=loop, rank=1, frames=bad)
    # frames jumping between the two coordinate axes tilt by pi/2
    frames = np.zeros((8, 2, 1))
    frames[::2, 0, 0] = 1.0
    frames[1::2, 1, 0] = 1.0
    with pytest.raises(SamplingError):
        SampledBundle(loop=loop, rank=1, frames=frames)


def test_hyperbolic_family_action_on_fibre():
    loop = ParameterLoop.circle(16)
    mb = mobius_bundle(loop)
    fam = construct_hyperbolic_family(mb, q=0.5)
    for i in (0, 3, 8, 12):
        h = fam.matrix(i, 0)
        v = mb.fibre(i)[:, 0]
        w = np.array([-v[1], v[0]])
        assert np.allclose(h @ v, 0.5 * v, atol=1e-12)
        assert np.allclose(h @ w, 2.0 * w, atol=1e-12)
        assert np.allclose(h, h.T, atol=1e-12)
    # frozen fibre at theta = pi/2: (cos pi/4, sin pi/4)
    s = np.sqrt(0.5)
    assert np.allclose(mb.fibre(4)[:, 0], [s, s], atol=1e-12)
    with pytest.raises(DomainError):
        construct_hyperbolic_family(mb, q=1.5)


def test_realization_field_pieces():
    loop = ParameterLoop.circle(16)
    e = mobius_bundle(loop)
    f = trivial_bundle(loop, 2, 1)
    fld = realization_field(e, f, q=0.5, kappa_minus=-4, kappa_plus=4)
    h_f = construct_hyperbolic_family(f, 0.5)
    h_e = construct_hyperbolic_family(e, 0.5)
    for lam in (0, 5):
        assert np.allclose(fld.matrix(lam, -5), h_f.matrix(lam, 0))
        assert np.allclose(fld.matrix(lam, -4), np.eye(2))
        assert np.allclose(fld.matrix(lam, 0), np.eye(2))
        assert np.allclose(fld.matrix(lam, 4), np.eye(2))
        assert np.allclose(fld.matrix(lam, 5), h_e.matrix(lam, 0))
    with pytest.raises(InputError):
        realization_field(e, f, kappa_minus=1, kappa_plus=4)
    with pytest.raises(DomainError):
        realization_field(e, f, middle=lambda lam, n: np.zeros((2, 2)))


def test_perturbation_smallness_report():
    base = autonomous_field(np.diag([0.5, 2.0]), window=(-100, 100))
    bump = lambda lam, n: 1e-3 * np.exp(-abs(n)) * np.eye(2)
    pert, report = perturb_field(base, bump, gamma_plus=1e-2, gamma_minus=1e-2)
    assert report.small
    assert report.observed_plus == pytest.approx(1e-3)
    assert np.allclose(pert.matrix(0, 0), np.diag([0.5, 2.0]) + 1e-3 * np.eye(2))
    _, report2 = perturb_field(base, bump, gamma_plus=1e-4, gamma_minus=1e-2)
    assert not report2.plus_ok and report2.minus_ok and not report2.small


def test_direct_sum_block_structure():
    loop = ParameterLoop.circle(12)
    s = direct_sum(mobius_bundle(loop), trivial_bundle(loop, 2, 1))
    assert s.dim == 4 and s.rank == 2
    fib = s.fibre(0)
    assert np.allclose(fib[:2, 0], [1.0, 0.0])
    assert np.allclose(fib[2:, 1], [1.0, 0.0])
    assert abs(fib[2:, 0]).max() == 0.0 and abs(fib[:2, 1]).max() == 0.0


def test_tabulated_field_window_checks():
    mats = np.zeros((3, 2, 2)) + np.eye(2)
    f = tabulated_field(mats, window=(-1, 1))
    assert np.allclose(f.matrix(0, -1), np.eye(2))
    with pytest.raises(InputError):
        f.matrix(0, 2)
    with pytest.raises(InputError):
        tabulated_field(mats, window=(0, 4))
