"""Acceptance criteria, one test each, with a PASS/FAIL line per criterion."""

import time

import numpy as np
import pytest

from glvortex.dynamics import Stepper, evolve, orbital_stability_experiment, perturbation_at_distance
from glvortex.fields import (
    Field2D,
    b_form,
    p_r,
    renormalized_energy_decomposed,
    renormalized_energy_direct,
    vortex_derivative,
)
from glvortex.grid import Grid2D
from glvortex.perturb import Perturbation
from glvortex.profile import eval_profile, ode_residual, relax_profile, solve_profile
from glvortex.sector import (
    RadialGrid,
    assemble_sector,
    constrained_coercivity,
    difference_integral,
    q0_identity_check,
    q0_min_eigvec,
    qloc_pm,
    translation_pair,
)


@pytest.fixture
def verdict(capsys):
    def report(number, title, checks, elapsed, budget):
        checks = dict(checks, runtime=(elapsed <= budget, f"{elapsed:.1f}s <= {budget:g}s"))
        ok = all(c[0] for c in checks.values())
        detail = "; ".join(f"{k}: {v[1]}" for k, v in checks.items())
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number} ({title}): {detail}")
        assert ok, detail

    return report


def test_criterion_01_profile(verdict):
    t0 = time.perf_counter()
    p = solve_profile()
    _, res = ode_residual(p, 0.01, 30.0)
    r = 25.0
    tail = abs(eval_profile(p, r) - (1 - 1 / (2 * r**2) - 9 / (8 * r**4)))
    elapsed = time.perf_counter() - t0
    rr, rho, _ = relax_profile()
    oracle = float(np.max(np.abs(eval_profile(p, rr) - rho)))
    res_sup = float(np.max(np.abs(res)))
    verdict(1, "profile", {
        "residual": (res_sup <= 1e-8, f"{res_sup:.3g} <= 1e-8"),
        "tail@25": (tail <= 5e-8, f"{tail:.3g} <= 5e-8"),
        "relaxation": (oracle <= 1e-7, f"{oracle:.3g} <= 1e-7"),
    }, elapsed, 10)


def test_criterion_02_energy_routes(verdict, profile, grid512):
    t0 = time.perf_counter()
    e_v = renormalized_energy_direct(Field2D.vortex(grid512, profile)).value
    worst = 0.0
    for seed in range(20):
        f = Field2D.from_recipe(grid512, profile, Perturbation(family="random", amplitude=0.05, seed=seed))
        direct = renormalized_energy_direct(f).value
        for R in (2.0, 4.0, 7.5):
            worst = max(worst, abs(renormalized_energy_decomposed(f, R).total - direct))
    verdict(2, "renormalized energy", {
        "E(V1)": (abs(e_v) <= 1e-6, f"{abs(e_v):.3g} <= 1e-6"),
        "direct vs decomposed": (worst <= 1e-6, f"{worst:.3g} <= 1e-6"),
    }, time.perf_counter() - t0, 120)


def test_criterion_03_invariance(verdict, profile, grid512):
    t0 = time.perf_counter()
    f = Field2D.from_recipe(grid512, profile, Perturbation(family="bump", amplitude=0.05))
    e0 = renormalized_energy_direct(f).value
    rng = np.random.default_rng(3)
    shifts = [(2.0, 0.0), (0.0, -2.0), (np.sqrt(2), np.sqrt(2))]
    for _ in range(5):
        rad, ang = 2 * np.sqrt(rng.uniform()), rng.uniform(0, 2 * np.pi)
        shifts.append((rad * np.cos(ang), rad * np.sin(ang)))
    worst = 0.0
    for a in shifts:
        for alpha in (0.0, 1.0, np.pi, 5.5):
            worst = max(worst, abs(renormalized_energy_direct(f.transformed(a, alpha)).value - e0))
    verdict(3, "invariance", {"max change": (worst <= 1e-4, f"{worst:.3g} <= 1e-4")},
            time.perf_counter() - t0, 60)


def test_criterion_04_p_r_decay(verdict, profile):
    t0 = time.perf_counter()
    # R = 16 needs R <= L/4
    g = Grid2D(64.0, 512)
    radii = np.array([4.0, 8.0, 16.0])
    slopes = []
    for seed in range(10):
        f = Field2D.from_recipe(g, profile, Perturbation(family="extended", amplitude=0.02, width=2.0, seed=seed))
        vals = [abs(p_r(f, R).value) for R in radii]
        slopes.append(np.polyfit(np.log(radii), np.log(vals), 1)[0])
    worst = max(slopes)
    verdict(4, "P_R decay", {"max slope": (worst <= -0.9, f"{worst:.3f} <= -0.9")},
            time.perf_counter() - t0, 120)


def test_criterion_05_sector_identities(verdict, profile, rgrid):
    t0 = time.perf_counter()
    r = rgrid.r
    bundles = {j: assemble_sector(j, 4.0, rgrid, profile) for j in range(-3, 4)}
    rho = bundles[0].h_potential["rho"]
    fact = q0_identity_check(rho * np.exp(-((r - 3) / 1.5) ** 2), bundles[0]).residual
    e = (r / (1 + r)) * np.exp(-((r - 6.0) / 2.0) ** 2)
    eq = abs(bundles[-2].q_value(e) - bundles[0].q_value(e) - difference_integral(bundles[-2], e, "minus2"))
    rng = np.random.default_rng(0)
    worst = np.inf
    for _ in range(50):
        j = int(rng.choice([-3, -2, 1, 2, 3]))
        c, w = rng.uniform(0, 15), rng.uniform(0.3, 5)
        e = (r / (1 + r)) ** max(abs(j + 1), 1) * np.exp(-((r - c) / w) ** 2)
        gap = (bundles[j].q_value(e) - bundles[0].q_value(e)) / bundles[0].gram_value(e)
        worst = min(worst, gap)
    verdict(5, "sector identities", {
        "factorization": (fact <= 1e-6, f"{fact:.3g} <= 1e-6"),
        "minus-two equality": (eq <= 1e-6, f"{eq:.3g} <= 1e-6"),
        "monotonicity (50)": (worst >= -1e-10, f"min normalized gap {worst:.3g} >= -1e-10"),
    }, time.perf_counter() - t0, 60)


def test_criterion_06_kernels(verdict, profile, grid512, rgrid):
    t0 = time.perf_counter()
    b_ratio = 0.0
    for axis in (0, 1):
        d = vortex_derivative(grid512, profile, axis)
        b_ratio = max(b_ratio, abs(b_form(d, profile)) / grid512.integrate(np.abs(d.values) ** 2))
    u, v = translation_pair(rgrid, profile)
    q = qloc_pm(u, v, +1, profile)
    q_ratio = abs(q.bulk) / q.norm_sq
    _, corr, _ = q0_min_eigvec(assemble_sector(0, 4.0, rgrid, profile))
    verdict(6, "kernels", {
        "B(dV)": (b_ratio <= 1e-3, f"{b_ratio:.3g} <= 1e-3"),
        "Q_loc translation": (q_ratio <= 1e-5, f"{q_ratio:.3g} <= 1e-5"),
        "Q_0 eigvec corr": (corr > 0.999, f"{corr:.7f} > 0.999"),
    }, time.perf_counter() - t0, 120)


def test_criterion_07_constrained_coercivity(verdict, profile):
    t0 = time.perf_counter()
    lam = [constrained_coercivity(4.0, RadialGrid.graded(k), profile).lam_min for k in (1, 2)]
    change = abs(lam[1] - lam[0]) / abs(lam[0])
    verdict(7, "constrained coercivity", {
        "lambda_min": (lam[0] > 0 and lam[1] > 0, f"{lam[0]:.6g}, {lam[1]:.6g} > 0"),
        "refinement": (change < 0.05, f"{change:.3g} < 0.05"),
    }, time.perf_counter() - t0, 300)


def _drift(f, T, dt):
    s = Stepper(f, dt)
    e0 = s.energy()
    worst = 0.0
    for _ in range(int(round(T / s.dt))):
        s.step()
        worst = max(worst, abs(s.energy() - e0))
    return worst / abs(e0), e0


@pytest.mark.slow
def test_criterion_08_dynamics(verdict, profile):
    t0 = time.perf_counter()
    g = Grid2D(30.0, 256)
    stat = 0.0
    for phase in (0.0, 1.3):
        v = Field2D.vortex(g, profile, phase=phase)
        out, s = evolve(v, 50.0)
        stat = max(stat, np.max(np.abs(out.psi.values - v.psi.values)) / 50.0,
                   np.max(np.abs(s.time_derivative(np.zeros_like(s.w)))))
    f = perturbation_at_distance(g, profile, Perturbation(family="bump", amplitude=0.02), 0.02)
    dt = g.h**2
    d1, e0 = _drift(f, 50.0, dt)
    d2, _ = _drift(f, 50.0, dt / 2)
    cross = abs(e0 - renormalized_energy_direct(f).value)
    verdict(8, "dynamics", {
        "stationary": (stat <= 1e-8, f"{stat:.3g} <= 1e-8 per unit time"),
        "drift dt": (d1 <= 1e-5, f"{d1:.3g} <= 1e-5"),
        "drift dt/2": (d2 <= 1e-6, f"{d2:.3g} <= 1e-6"),
        "discrete vs direct energy": (cross <= 1e-8, f"{cross:.3g} <= 1e-8"),
    }, time.perf_counter() - t0, 600)


@pytest.mark.slow
def test_criterion_09_orbital_stability(verdict, profile):
    t0 = time.perf_counter()
    g = Grid2D(30.0, 256)
    recipe = Perturbation(family="bump", amplitude=0.02)
    summaries = {}
    for d in (0.01, 0.02, 0.04):
        run = orbital_stability_experiment(perturbation_at_distance(g, profile, recipe, d), 50.0)
        summaries[d] = run.summary()
        assert not run.truncated
    main = summaries[0.02]
    cs = [s["rate_constant"] for s in summaries.values()]
    spread = max(cs) / min(cs)
    verdict(9, "orbital stability", {
        "max ratio": (main["max_ratio"] <= 10, f"{main['max_ratio']:.4g} <= 10"),
        "final-quartile trend": (main["final_quartile_trend"] <= 0.1,
                                 f"{main['final_quartile_trend']:.3g} <= 0.1 of max"),
        "rate constant spread": (spread <= 2, f"C in [{min(cs):.4g}, {max(cs):.4g}], ratio {spread:.3g} <= 2"),
    }, time.perf_counter() - t0, 900)


@pytest.mark.slow
def test_criterion_10_dual_track(verdict, profile):
    t0 = time.perf_counter()
    g = Grid2D(30.0, 256)
    f = perturbation_at_distance(g, profile, Perturbation(family="bump", amplitude=0.02), 0.02)
    run = orbital_stability_experiment(f, 20.0, ode_track=True)
    gap = run.summary()["track_gap"]
    verdict(10, "modulation dual track", {"track gap": (gap <= 1e-3, f"{gap:.3g} <= 1e-3")},
            time.perf_counter() - t0, 600)
