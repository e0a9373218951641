import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from glvortex.dynamics import modulate
from glvortex.fields import (
    CutoffSpec,
    Field2D,
    GridFunction,
    UsageError,
    b_form,
    d_e,
    eta,
    h_norm,
    nr_lower_bound,
    p_r,
    reference_vortex,
    renormalized_energy_decomposed,
    renormalized_energy_direct,
    shift_grid_function,
    vortex_derivative,
    weighted_l2,
)
from glvortex.grid import Grid2D
from glvortex.perturb import Perturbation
from glvortex.profile import eval_profile, one_minus_rho_sq


def _random_field(grid, profile, seed, amp=0.05, family="random"):
    return Field2D.from_recipe(grid, profile, Perturbation(family=family, amplitude=amp, seed=seed))


def _radial_h_norm_sq(profile, r_max):
    """Oracle: ||V1||_H^2 = 2 pi int (2 rho rho')^2 + (1 - rho^2)(rho'^2 + rho^2/r^2) r dr."""

    def f(r):
        rho = eval_profile(profile, r)
        d = eval_profile(profile, r, 1)
        rr = rho / r if r > 0 else profile.slope_at_origin
        return ((2 * rho * d) ** 2 + one_minus_rho_sq(profile, r) * (d**2 + rr**2)) * r

    val, _ = integrate.quad(f, 0, r_max, limit=400, epsabs=1e-12)
    return 2 * np.pi * val


# -- cutoff ---------------------------------------------------------------------------


@settings(max_examples=30, deadline=None)
@given(st.floats(1.0, 40.0))
def test_cutoff_shape(R):
    chi = CutoffSpec(R)
    r = np.linspace(0, 3 * R, 601)
    c = chi(r)
    assert np.all((0 <= c) & (c <= 1))
    assert np.all(np.diff(c) <= 1e-15)
    assert np.all(c[r <= R] == 1) and np.all(c[r >= 2 * R] == 0)
    # R^2-scaled derivative combination is scale free
    assert chi.derivative_bound_ratio() < 20


def test_cutoff_derivatives_match_differences():
    chi = CutoffSpec(3.0)
    r = np.linspace(3.1, 5.9, 15)
    h = 1e-5
    assert np.allclose((chi(r + h) - chi(r - h)) / (2 * h), chi(r, 1), atol=1e-8)
    assert np.allclose((chi(r + h, 1) - chi(r - h, 1)) / (2 * h), chi(r, 2), atol=1e-7)


def test_cutoff_rejects_nonpositive_scale():
    with pytest.raises(UsageError):
        CutoffSpec(0.0)


# -- H-norm and distance -----------------------------------------------------------------


def test_h_norm_of_zero(grid256, profile):
    assert h_norm(GridFunction.zero(grid256), profile) == 0.0


def test_h_norm_of_vortex_matches_radial_oracle(grid512, profile):
    oracle = _radial_h_norm_sq(profile, grid512.L)
    val = h_norm(Field2D.vortex(grid512, profile)) ** 2
    assert abs(val - oracle) <= 0.02 * oracle


def test_h_norm_of_phase_rotation_is_finite(grid256, profile):
    ref = reference_vortex(grid256, profile)
    c = 1j - 1
    eps = GridFunction(grid256, c * ref.V, c * ref.Vx, c * ref.Vy)
    val = h_norm(eps, profile)
    assert np.isfinite(val) and val > 0


def test_h_norm_of_grid_function_needs_profile(grid128):
    with pytest.raises(UsageError):
        h_norm(GridFunction.zero(grid128))


@settings(max_examples=15, deadline=None)
@given(st.floats(-3.0, 3.0), st.integers(0, 50))
def test_h_norm_homogeneous(profile, t, seed):
    g = Grid2D(20.0, 96)
    prof = profile
    eps = _random_field(g, prof, seed).eps
    assert h_norm(t * eps, prof) == pytest.approx(abs(t) * h_norm(eps, prof), rel=1e-12, abs=1e-14)


def test_d_e_basic_properties(grid128, profile):
    f, g, k = (_random_field(grid128, profile, s, amp=0.1) for s in (1, 2, 3))
    assert d_e(f, f) == 0.0
    assert d_e(f, g) == pytest.approx(d_e(g, f), rel=1e-12)
    assert d_e(f, k) <= d_e(f, g) + d_e(g, k) + 1e-14
    v = Field2D.vortex(grid128, profile)
    assert d_e(v, Field2D.vortex(grid128, profile, phase=0.3)) > 0


def test_d_e_grid_mismatch(profile):
    with pytest.raises(UsageError):
        d_e(Field2D.vortex(Grid2D(30.0, 64), profile), Field2D.vortex(Grid2D(30.0, 66), profile))


def test_d_e_translation_is_lipschitz(grid256, profile):
    v = Field2D.vortex(grid256, profile)
    ds = np.array([0.05, 0.1, 0.2, 0.4])
    dist = [d_e(v, Field2D.vortex(grid256, profile, center=(d, 0.0))) for d in ds]
    slope = np.polyfit(np.log(ds), np.log(dist), 1)[0]
    assert abs(slope - 1.0) <= 0.1


def test_translation_bound_on_perturbations(grid256, profile):
    eps = _random_field(grid256, profile, 7).eps
    base = h_norm(eps, profile)
    ratios = []
    for d in (0.25, 0.5, 1.0):
        w = shift_grid_function(grid256, eps.values, (d, 0.0))
        ratios.append(h_norm(GridFunction.from_compact(grid256, w), profile) / base)
    assert max(ratios) < 2.0


def test_weighted_embedding(grid256, profile):
    ratios = [weighted_l2(_random_field(grid256, profile, s).eps) / h_norm(_random_field(grid256, profile, s).eps, profile) ** 2
              for s in range(8)]
    print(f"weighted embedding constant over suite: {max(ratios):.4g}")
    assert max(ratios) < 10


# -- eta ----------------------------------------------------------------------------------


def test_eta_identities(grid128, profile):
    assert np.all(eta(Field2D.vortex(grid128, profile)) == 0)
    f = _random_field(grid128, profile, 4)
    alt = np.abs(f.reference.V) ** 2 - np.abs(f.psi.values) ** 2
    assert np.max(np.abs(eta(f) - alt)) < 1e-14
    ref = reference_vortex(grid128, profile)
    minus = GridFunction(grid128, -ref.V, -ref.Vx, -ref.Vy)
    minus.profile = profile
    assert np.allclose(eta(minus), np.abs(ref.V) ** 2, atol=1e-15)


# -- renormalized energy -------------------------------------------------------------------


def test_energy_of_vortex_is_zero(grid256, profile):
    assert abs(renormalized_energy_direct(Field2D.vortex(grid256, profile)).value) <= 1e-6


@settings(max_examples=6, deadline=None)
@given(st.floats(-1.4, 1.4), st.floats(-1.4, 1.4), st.floats(0, 2 * np.pi))
def test_energy_invariance(grid256, profile, a1, a2, alpha):
    f = Field2D.vortex(grid256, profile).transformed((a1, a2), alpha)
    assert abs(renormalized_energy_direct(f).value) <= 1e-4


def test_direct_and_decomposed_agree(grid256, profile):
    f = Field2D.from_recipe(grid256, profile, Perturbation(family="bump", amplitude=0.05))
    direct = renormalized_energy_direct(f).value
    for R in (1.0, 3.0, 7.0):
        assert abs(renormalized_energy_decomposed(f, R).total - direct) <= 1e-6


def test_decomposed_zero_and_range(grid256, profile):
    br = renormalized_energy_decomposed(Field2D.vortex(grid256, profile), 4.0)
    assert br.q_r == 0 and br.n_r == 0 and abs(br.p_r) < 1e-20
    with pytest.raises(UsageError):
        renormalized_energy_decomposed(Field2D.vortex(grid256, profile), 8.0)
    with pytest.raises(UsageError):
        renormalized_energy_decomposed(Field2D.vortex(grid256, profile), 0.5)


def test_energy_nonnegative_on_suite(grid256, profile):
    for s in range(6):
        for amp in (0.05, 0.5):
            assert renormalized_energy_direct(_random_field(grid256, profile, s, amp)).value >= -1e-6


def test_coercivity_of_energy_after_modulation(grid256, profile):
    kappas = []
    for s in range(4):
        f = _random_field(grid256, profile, s, amp=0.02)
        st_ = modulate(f)
        m = f.transformed(st_.a, -st_.phi)
        energy = renormalized_energy_direct(m).value
        scale = h_norm(m.eps, profile) ** 2 + grid256.integrate(eta(m) ** 2)
        kappas.append(energy / scale)
    print(f"energy coercivity kappa over suite: {min(kappas):.4g}")
    assert min(kappas) > 0


def test_nr_lower_bound(grid256, profile):
    for s in range(5):
        lhs, rhs = nr_lower_bound(_random_field(grid256, profile, s, amp=0.2), 3.0)
        assert lhs >= rhs


# -- P_R and B ---------------------------------------------------------------------------------


def test_p_r_vanishes_on_vortex(grid256, profile):
    assert abs(p_r(Field2D.vortex(grid256, profile), 4.0).value) < 1e-14
    assert abs(p_r(Field2D.vortex(grid256, profile, phase=1.0), 4.0).value) < 1e-14


def test_b_form_kernel(grid512, profile):
    for axis in (0, 1):
        d = vortex_derivative(grid512, profile, axis)
        n2 = grid512.integrate(np.abs(d.values) ** 2)
        assert abs(b_form(d, profile)) <= 1e-3 * n2


def test_b_form_quadratic(grid128, profile):
    eps = _random_field(grid128, profile, 3).eps
    assert b_form(2.5 * eps, profile) == pytest.approx(6.25 * b_form(eps, profile), rel=1e-12)
    assert b_form(GridFunction.zero(grid128), profile) == 0


# -- snapshots ------------------------------------------------------------------------------------


def test_field_invariant_enforced(grid128, profile):
    w = np.zeros((128, 128), complex)
    w[1, 5] = 1e-3
    with pytest.raises(UsageError):
        Field2D(grid128, w, profile)


def test_snapshot_roundtrip(grid128, profile, tmp_path):
    f = _random_field(grid128, profile, 1)
    f.save(tmp_path / "f.bin")
    g = Field2D.load(tmp_path / "f.bin", profile)
    assert np.max(np.abs(g.perturbation - f.perturbation)) < 1e-7
    assert g.grid.same_as(f.grid)
