"""Lattice operators: stencils vs matrices, spectra, and projection."""

import math

import numpy as np
import pytest

from sirb_lattice.lattice import (
    LatticeField,
    TransportCoefficients,
    grad_centered,
    grad_matrix,
    grad_minus,
    grad_minus_matrix,
    grad_plus,
    grad_plus_matrix,
    inner,
    laplace,
    laplace_matrix,
    project,
    transition_matrix,
    transition_probability,
    transport_apply,
    transport_matrix,
)

RNG = np.random.default_rng(20240811)


def random_field(n):
    return LatticeField(RNG.normal(size=n))


# ---------------------------------------------------------------------------
# LatticeField basics

def test_field_rejects_too_few_sites():
    with pytest.raises(ValueError):
        LatticeField(np.array([1.0, 2.0]))


def test_field_periodic_access():
    f = LatticeField(np.array([1.0, 2.0, 3.0, 4.0]))
    assert f.site(4) == 1.0
    assert f.site(-1) == 4.0


# ---------------------------------------------------------------------------
# Projection

def test_project_constant_is_constant():
    f = project(lambda x: np.full_like(np.asarray(x, float), 2.5), 8)
    assert np.allclose(f.values, 2.5)


def test_project_fixes_step_functions():
    values = RNG.normal(size=6)
    step = lambda x: values[(np.floor(np.asarray(x) * 6).astype(int)) % 6]
    f = project(step, 6, quadrature_points=7)
    assert np.allclose(f.values, values, rtol=0, atol=1e-15)


def test_project_sine_matches_antiderivative():
    # Site averages of sin(2 pi x) on 4 sites: the exact antiderivative gives
    # (2/pi) * (1, 1, -1, -1).
    expected = (2.0 / math.pi) * np.array([1.0, 1.0, -1.0, -1.0])
    f = project(lambda x: np.sin(2 * np.pi * np.asarray(x)), 4, quadrature_points=4096)
    assert np.allclose(f.values, expected, atol=1e-8)


def test_project_scalar_function_fallback():
    f = project(lambda x: 1.0 if x < 0.5 else 2.0, 4, quadrature_points=8)
    assert np.allclose(f.values, [1.0, 1.0, 2.0, 2.0])


def test_project_rejects_nonfinite():
    with pytest.raises(ValueError, match="non-finite"):
        project(lambda x: np.where(np.asarray(x) > 0.5, np.nan, 1.0), 4)


def test_project_rejects_bad_quadrature():
    with pytest.raises(ValueError):
        project(lambda x: np.ones_like(np.asarray(x, float)), 4, quadrature_points=0)


def test_project_sup_contraction():
    for _ in range(20):
        coef = RNG.normal(size=3)
        fn = lambda x: (coef[0] + coef[1] * np.sin(2 * np.pi * np.asarray(x))
                        + coef[2] * np.cos(4 * np.pi * np.asarray(x)))
        xs = np.linspace(0, 1, 4001)
        sup = np.max(np.abs(fn(xs)))
        f = project(fn, 16, quadrature_points=32)
        assert np.max(np.abs(f.values)) <= sup + 1e-12


# ---------------------------------------------------------------------------
# Difference operators

def test_grad_centered_constant_is_zero():
    f = LatticeField(np.full(7, 3.3))
    assert np.allclose(grad_centered(f).values, 0.0)


def test_grad_centered_hand_stencil():
    # (n/2)(f[j+1] - f[j-1]) on f = (0, 1, 0, -1) with n = 4.
    f = LatticeField(np.array([0.0, 1.0, 0.0, -1.0]))
    assert np.array_equal(grad_centered(f).values, np.array([4.0, 0.0, -4.0, 0.0]))


def test_grad_centered_skew_adjoint():
    for n in (3, 5, 16):
        for _ in range(5):
            f, g = random_field(n), random_field(n)
            lhs = inner(grad_centered(f), g) + inner(f, grad_centered(g))
            assert abs(lhs) < 1e-12


def test_one_sided_grads_constant_zero():
    f = LatticeField(np.full(5, -1.7))
    assert np.allclose(grad_plus(f).values, 0.0)
    assert np.allclose(grad_minus(f).values, 0.0)


def test_grad_plus_minus_compose_to_laplace():
    for n in (3, 4, 9, 32):
        f = random_field(n)
        lap = laplace(f).values
        assert np.allclose(grad_plus(grad_minus(f)).values, lap, rtol=1e-12, atol=1e-9)
        assert np.allclose(grad_minus(grad_plus(f)).values, lap, rtol=1e-12, atol=1e-9)


def test_laplace_constant_is_zero():
    f = LatticeField(np.full(6, 9.9))
    assert np.allclose(laplace(f).values, 0.0)


def test_laplace_cosine_eigenvector():
    n = 12
    f = LatticeField(np.cos(2 * np.pi * np.arange(n) / n))
    eig = 2.0 * n**2 * (math.cos(2 * math.pi / n) - 1.0)
    assert np.allclose(laplace(f).values, eig * f.values, atol=1e-9)


def test_laplace_matrix_row_sums_zero():
    for n in (3, 8, 17):
        assert np.allclose(laplace_matrix(n).sum(axis=1), 0.0, atol=1e-9)


def test_laplace_symmetric_negative_semidefinite():
    for n in (4, 9):
        mat = laplace_matrix(n)
        assert np.allclose(mat, mat.T)
        for _ in range(10):
            f = random_field(n)
            assert inner(laplace(f), f) <= 1e-10


def test_fourier_modes_diagonalize_laplacian():
    # Brute force over every mode m < n for lattices up to 32 sites.
    for n in (3, 4, 5, 8, 16, 32):
        mat = laplace_matrix(n)
        for m in range(n):
            mode = np.exp(2j * np.pi * m * np.arange(n) / n)
            eig = 2.0 * n**2 * (math.cos(2 * math.pi * m / n) - 1.0)
            assert np.allclose(mat @ mode, eig * mode, atol=1e-7 * n**2)


def test_operators_commute_with_cyclic_shift():
    n = 10
    f = random_field(n)
    tc = TransportCoefficients(ell=1.3, p_out=0.8, n_sites=n)
    for op in (grad_centered, grad_plus, grad_minus, laplace,
               lambda g: transport_apply(g, tc)):
        shifted_then_op = op(f.shifted(3)).values
        op_then_shifted = op(f).shifted(3).values
        assert np.allclose(shifted_then_op, op_then_shifted, atol=1e-9)


def test_matrices_agree_with_stencils():
    n = 9
    f = random_field(n)
    tc = TransportCoefficients(ell=0.7, p_out=0.25, n_sites=n)
    pairs = [
        (grad_matrix(n), grad_centered),
        (grad_plus_matrix(n), grad_plus),
        (grad_minus_matrix(n), grad_minus),
        (laplace_matrix(n), laplace),
        (transport_matrix(tc), lambda g: transport_apply(g, tc)),
    ]
    for mat, op in pairs:
        assert np.allclose(mat @ f.values, op(f).values, atol=1e-9)


# ---------------------------------------------------------------------------
# Transport

def test_transport_annihilates_constants():
    tc = TransportCoefficients(ell=2.0, p_out=0.9, n_sites=6)
    f = LatticeField(np.full(6, 4.2))
    assert np.allclose(transport_apply(f, tc).values, 0.0, atol=1e-12)


def test_transport_unbiased_is_pure_diffusion():
    n = 8
    tc = TransportCoefficients(ell=1.1, p_out=0.5, n_sites=n)
    assert tc.nu == 0.0
    f = random_field(n)
    assert np.allclose(
        transport_apply(f, tc).values,
        tc.diffusion * laplace(f).values,
        rtol=1e-12, atol=1e-12,
    )


def test_transport_matches_event_form():
    # Hop bookkeeping: ell * p_out * (f[j-1] - f[j]) + ell * p_in * (f[j+1] - f[j])
    # must equal the advection-diffusion stencil exactly.
    for n, p_out in ((5, 0.7), (12, 0.0), (8, 1.0), (6, 0.5)):
        tc = TransportCoefficients(ell=1.9, p_out=p_out, n_sites=n)
        for _ in range(5):
            f = random_field(n)
            v = f.values
            event_form = tc.ell * tc.p_out * (np.roll(v, 1) - v) + \
                tc.ell * tc.p_in * (np.roll(v, -1) - v)
            assert np.allclose(transport_apply(f, tc).values, event_form,
                               rtol=1e-12, atol=1e-12)


def test_transport_rejects_mismatched_lattice():
    tc = TransportCoefficients(ell=1.0, p_out=0.6, n_sites=5)
    with pytest.raises(ValueError):
        transport_apply(random_field(8), tc)


def test_transition_probabilities_sum_to_one():
    tc = TransportCoefficients(ell=1.0, p_out=0.7, n_sites=8)
    assert transition_probability(tc, 3, 4) == pytest.approx(0.7)
    assert transition_probability(tc, 3, 2) == pytest.approx(0.3)
    mat = transition_matrix(tc)
    assert np.allclose(mat.sum(axis=1), 1.0)


def test_transition_probability_pure_downstream():
    tc = TransportCoefficients(ell=1.0, p_out=1.0, n_sites=5)
    assert transition_probability(tc, 2, 1) == 0.0
    assert transition_probability(tc, 2, 3) == 1.0


def test_transition_probability_nearest_neighbour_only():
    tc = TransportCoefficients(ell=1.0, p_out=0.7, n_sites=9)
    for i in range(9):
        for j in range(9):
            d = (j - i) % 9
            if d not in (1, 8):
                assert transition_probability(tc, i, j) == 0.0


def test_transition_probability_wraps_around():
    tc = TransportCoefficients(ell=1.0, p_out=0.7, n_sites=4)
    assert transition_probability(tc, 3, 0) == pytest.approx(0.7)
    assert transition_probability(tc, 0, 3) == pytest.approx(0.3)


# ---------------------------------------------------------------------------
# TransportCoefficients derived values

def test_transport_coefficients_derived_quantities():
    tc = TransportCoefficients(ell=2.0, p_out=0.75, n_sites=10)
    assert tc.p_in == pytest.approx(0.25)
    assert tc.bias == pytest.approx(0.5)
    assert tc.nu == pytest.approx(0.5 * 2.0 / 10)
    assert tc.diffusion == pytest.approx(2.0 / 200)


def test_transport_coefficients_validation():
    with pytest.raises(ValueError):
        TransportCoefficients(ell=-1.0, p_out=0.5, n_sites=5)
    with pytest.raises(ValueError):
        TransportCoefficients(ell=1.0, p_out=1.3, n_sites=5)
    with pytest.raises(ValueError):
        TransportCoefficients(ell=1.0, p_out=0.5, n_sites=2)


def test_from_continuum_round_trip():
    tc = TransportCoefficients(ell=0.5, p_out=0.7, n_sites=8)
    tc2 = TransportCoefficients.from_continuum(tc.diffusion, tc.nu, 8)
    assert tc2.ell == pytest.approx(tc.ell)
    assert tc2.p_out == pytest.approx(tc.p_out)
    # Refining preserves the continuum coefficients, not the raw hop rate.
    tc_fine = TransportCoefficients.from_continuum(tc.diffusion, tc.nu, 16)
    assert tc_fine.diffusion == pytest.approx(tc.diffusion)
    assert tc_fine.nu == pytest.approx(tc.nu)
    assert tc_fine.ell == pytest.approx(4 * tc.ell)


def test_from_continuum_rejects_unreachable_advection():
    with pytest.raises(ValueError):
        TransportCoefficients.from_continuum(diffusion=1e-4, nu=1.0, n_sites=4)
    with pytest.raises(ValueError):
        TransportCoefficients.from_continuum(diffusion=0.0, nu=0.5, n_sites=4)
