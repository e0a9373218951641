import numpy as np
import pytest

from glvortex.dynamics import (
    ModulationFailure,
    Patch,
    StepRejected,
    Stepper,
    evolve,
    linearized_residual,
    m0_matrix,
    modulate,
    modulation_rhs,
    modulation_system,
    orbital_stability_experiment,
    perturbation_at_distance,
    step,
    unwrap_phase,
    xi,
    xi_jacobian,
)
from glvortex.fields import Field2D, UsageError, d_e, h_norm, reference_vortex, renormalized_energy_direct, vortex_derivative
from glvortex.grid import Grid2D
from glvortex.perturb import Perturbation


@pytest.fixture(scope="module")
def small_grid():
    return Grid2D(20.0, 96)


def _bump(grid, profile, amp=0.02, **kw):
    return Field2D.from_recipe(grid, profile, Perturbation(family="bump", amplitude=amp), **kw)


# -- modulation map ------------------------------------------------------------------------


def test_xi_vanishes_on_orbit(grid128, profile):
    assert np.max(np.abs(xi(Field2D.vortex(grid128, profile), (0, 0), 0))) == 0
    f = Field2D.vortex(grid128, profile, center=(0.4, -0.3), phase=0.7)
    assert np.max(np.abs(xi(f, (0.4, -0.3), 0.7))) < 1e-13


def test_jacobian_at_vortex_is_m0_diagonal(grid128, profile):
    f = Field2D.vortex(grid128, profile)
    h = 1e-6
    fd = np.empty((3, 3))
    for k, dv in enumerate(np.eye(3)):
        plus = xi(f, dv[:2] * h, dv[2] * h)
        minus = xi(f, -dv[:2] * h, -dv[2] * h)
        fd[:, k] = (plus - minus) / (2 * h)
    M0 = m0_matrix(profile)
    # columns are d/db1, d/db2, d/dphi; the phase column is -int chi |V1|^2
    expected = np.diag([M0[0, 0], M0[1, 1], -M0[2, 2]])
    assert np.allclose(fd, expected, rtol=1e-4, atol=1e-4 * M0[0, 0])
    assert np.allclose(xi_jacobian(f, (0, 0), 0), fd, atol=1e-8)


def test_m0_off_diagonal(profile):
    M0 = m0_matrix(profile)
    assert np.max(np.abs(M0 - np.diag(np.diag(M0)))) <= 1e-10


def test_analytic_jacobian_matches_differences_off_orbit(grid128, profile):
    f = _bump(grid128, profile, 0.05, center=(0.2, 0.1), phase=0.3)
    b, phi, h = np.array([0.15, 0.05]), 0.25, 1e-6
    J = xi_jacobian(f, b, phi)
    for k, dv in enumerate(np.eye(3)):
        fd = (xi(f, b + dv[:2] * h, phi + dv[2] * h) - xi(f, b - dv[:2] * h, phi - dv[2] * h)) / (2 * h)
        assert np.allclose(J[:, k], fd, atol=1e-8)


def test_patch_outside_grid(profile):
    g = Grid2D(3.0, 32)
    with pytest.raises(UsageError):
        xi(Field2D.vortex(g, profile), (1.5, 0.0), 0.0)


def test_modulate_exact_orbit_elements(grid128, profile):
    st = modulate(Field2D.vortex(grid128, profile, center=(0.3, -0.2)))
    assert np.allclose(st.a, (0.3, -0.2), atol=1e-6) and abs(st.phi) < 1e-6
    st = modulate(Field2D.vortex(grid128, profile, phase=0.4))
    assert np.allclose(st.a, 0, atol=1e-6) and abs(st.phi - 0.4) < 1e-6


@pytest.mark.parametrize("interp", ["spectral", "bilinear"])
def test_modulate_perturbed_orbit_element(grid256, profile, interp):
    f = _bump(grid256, profile, 0.005, center=(0.2, 0.0), phase=0.1)
    st = modulate(f, ((0.2, 0.0), 0.1), estimate=True, interp=interp)
    assert st.residual <= 1e-10
    assert np.isfinite(st.estimate_A) and st.estimate_A > 0
    print(f"{interp}: stability estimate constant A = {st.estimate_A:.4g}")


def test_modulate_divergence_is_reported(grid128, profile):
    with pytest.raises(ModulationFailure):
        modulate(Field2D.vortex(grid128, profile, center=(3.0, 0.0)), alpha=0.2)
    with pytest.raises(ModulationFailure) as exc:
        modulate(Field2D.vortex(grid128, profile, center=(2.5, 1.0)), max_iter=3)
    assert len(exc.value.history) >= 1


def test_rates_vanish_for_vortex(grid128, profile):
    f = Field2D.vortex(grid128, profile)
    st = modulate(f)
    assert np.all(modulation_rhs(f, st) == 0)


def test_rate_system_condition_cap(grid128, profile):
    f = _bump(grid128, profile)
    st = modulate(f)
    with pytest.raises(ModulationFailure):
        modulation_rhs(f, st, cond_cap=1.0)


def test_modulation_matrix_deviation_is_linear(grid256, profile):
    P0 = m0_matrix(profile)
    ratios = []
    for amp in (0.01, 0.02, 0.04):
        f = _bump(grid256, profile, amp)
        st = modulate(f)
        M, _ = modulation_system(f, st.a, st.phi)
        eps_h = h_norm(f.transformed(st.a, -st.phi).eps, profile)
        M0 = np.diag([P0[0, 0], P0[1, 1], P0[2, 2]])
        ratios.append(np.linalg.norm(M - M0) / eps_h)
    assert max(ratios) < 2 * min(ratios)


# -- stepping -----------------------------------------------------------------------------


def test_vortex_is_stationary(small_grid, profile):
    for f in (Field2D.vortex(small_grid, profile), Field2D.vortex(small_grid, profile, phase=1.3)):
        out, s = evolve(f, 2.0)
        assert np.max(np.abs(out.psi.values - f.psi.values)) <= 1e-8 * 2.0


def test_gauge_covariance(small_grid, profile):
    f = _bump(small_grid, profile, 0.05)
    a = step(f).perturbation * np.exp(0.7j)
    g = Field2D(small_grid, f.perturbation * np.exp(0.7j), profile, phase=0.7)
    assert np.max(np.abs(step(g).perturbation - a)) < 1e-14


def test_translation_covariance(profile):
    g = Grid2D(20.0, 128)
    f = _bump(g, profile, 0.05)
    shift = (0.5, -0.25)
    a, _ = evolve(f, 0.5)
    b, _ = evolve(f.transformed(shift), 0.5)
    a = a.transformed(shift)
    inner = g.R < 10
    assert np.max(np.abs(a.psi.values - b.psi.values)[inner]) < 1e-6


def test_energy_conserved_short_run(small_grid, profile):
    f = _bump(small_grid, profile, 0.05)
    s = Stepper(f)
    e0 = s.energy()
    assert e0 == pytest.approx(renormalized_energy_direct(f).value, abs=1e-8)
    for _ in range(100):
        s.step()
    assert abs(s.energy() - e0) <= 1e-5 * abs(e0) + 1e-8


def test_rk4_cross_validates_cn(small_grid, profile):
    f = _bump(small_grid, profile, 0.05)
    dt = 0.1 * small_grid.h**2
    ref, _ = evolve(f, 0.3, dt=dt / 2, method="rk4")
    gaps = []
    for k in (1, 2):
        a, _ = evolve(f, 0.3, dt=dt / k, method="cn")
        gaps.append(np.max(np.abs(a.perturbation - ref.perturbation)))
    # second order in time
    assert gaps[0] < 1e-4
    assert 3.0 <= gaps[0] / gaps[1] <= 5.0


def test_step_rejection_halves(small_grid, profile):
    s = Stepper(_bump(small_grid, profile, 0.05), dt=0.5, max_iter=2)
    with pytest.raises(StepRejected):
        s.step()
    assert s.rejections > 0


def test_bad_method_and_dt(small_grid, profile):
    with pytest.raises(UsageError):
        Stepper(Field2D.vortex(small_grid, profile), method="euler")
    with pytest.raises(UsageError):
        Stepper(Field2D.vortex(small_grid, profile), dt=-1.0)


# -- linearization ----------------------------------------------------------------------------


def test_linearized_residual(grid512, profile):
    for axis in (0, 1):
        assert linearized_residual(vortex_derivative(grid512, profile, axis), grid512, profile) <= 1e-3
    assert linearized_residual(1j * reference_vortex(grid512, profile).V, grid512, profile) <= 1e-3
    assert linearized_residual(_bump(grid512, profile).perturbation, grid512, profile) > 1e-3


# -- experiments --------------------------------------------------------------------------------


def test_distance_normalization(grid128, profile):
    f = perturbation_at_distance(grid128, profile, Perturbation(family="bump", amplitude=0.02), 0.03)
    assert d_e(Field2D.vortex(grid128, profile), f) == pytest.approx(0.03, rel=1e-8)


def test_experiment_on_vortex_is_flat(small_grid, profile):
    run = orbital_stability_experiment(Field2D.vortex(small_grid, profile), 2.0)
    assert run.ratio == [0.0] * len(run.times)
    assert max(run.rates) == 0


def test_experiment_rejects_large_initial_distance(small_grid, profile):
    with pytest.raises(UsageError):
        orbital_stability_experiment(_bump(small_grid, profile, 0.5), 1.0)


def test_linear_response_scaling(small_grid, profile):
    peaks = []
    for d in (0.02, 0.01):
        f = perturbation_at_distance(small_grid, profile, Perturbation(family="bump", amplitude=0.02), d)
        run = orbital_stability_experiment(f, 4.0)
        peaks.append(max(run.d_e))
    assert 2 / 1.5 <= peaks[0] / peaks[1] <= 2 * 1.5


def test_run_outputs(small_grid, profile, tmp_path):
    f = perturbation_at_distance(small_grid, profile, Perturbation(family="bump", amplitude=0.02), 0.02)
    run = orbital_stability_experiment(f, 1.0, snapshot_dir=tmp_path, snapshot_every=1)
    run.write_csv(tmp_path / "d.csv")
    run.write_manifest(tmp_path / "m.json")
    header = (tmp_path / "d.csv").read_text().splitlines()[0]
    assert header == "t,energy,d_E,a1,a2,phi,rate"
    snaps = sorted(tmp_path.glob("snap_*.bin"))
    assert snaps and Field2D.load(snaps[0], profile).grid.same_as(small_grid)


def test_unwrap_phase():
    assert unwrap_phase(-np.pi + 0.1, np.pi - 0.1) == pytest.approx(np.pi + 0.1)
    assert unwrap_phase(0.2, 0.1) == 0.2


def test_patch_rejects_unknown_interp(grid128, profile):
    with pytest.raises(UsageError):
        Patch(Field2D.vortex(grid128, profile), interp="cubic")
