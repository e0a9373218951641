"""Command-line harness: ``glvortex profile|energy|coercivity|evolve|modulate``.

Configuration is resolved as JSON file < GLVORTEX_* environment variables <
flags.  Every run writes its resolved config next to its outputs, and every
output cites the config hash and the profile hash.  Floats are written with
17 significant digits.  Exit codes: 0 success, 2 usage, 3 numerical failure.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import dynamics, fields, sector
from .fields import Field2D, UsageError
from .grid import Grid2D
from .perturb import Perturbation
from .profile import RECOMMENDED_MIN_RMAX, ProfileError, VortexProfile, default_profile, profile_diagnostics, solve_profile

ENV_PREFIX = "GLVORTEX_"
OUTPUT_ENV = ENV_PREFIX + "OUTPUT"
EXIT_USAGE = 2
EXIT_NUMERICAL = 3

log = logging.getLogger("glvortex")

# every subcommand key and its type; used for env parsing and hashing
_TYPES = {
    "L": float, "N": int, "R": str, "dt": float, "T": float, "tol": float,
    "rmax": float, "match_radius": float, "perturb": str, "seed": int,
    "center": str, "shift": str, "phase": float, "refine": int, "j_max": int,
    "j": int, "constraint": bool, "every": int, "method": str, "ode_track": bool,
    "distance": bool, "amp_sweep": str, "snapshots": int, "delta": float,
    "alpha": float, "field": str, "guess": str, "profile": str, "output": str,
    "count": int, "interp": str,
}


class NumericalFailure(RuntimeError):
    pass


# -- formatting -----------------------------------------------------------------------


def fmt_float(x):
    if math.isnan(x) or math.isinf(x):
        return json.dumps(str(x))
    return f"{x:.17g}"


def dumps(obj, indent=0):
    """JSON with 17-significant-digit floats and sorted keys (byte-stable)."""
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt_float(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent + 1)}" for k, v in sorted(obj.items(), key=lambda kv: str(kv[0]))]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool) for v in seq):
            return "[" + ", ".join(dumps(v) for v in seq) + "]"
        return "[\n" + ",\n".join(pad + dumps(v, indent + 1) for v in seq) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def config_hash(cfg):
    # where results land does not change what they are
    inputs = {k: v for k, v in cfg.items() if k != "output"}
    return hashlib.sha256(dumps(inputs).encode()).hexdigest()[:16]


# -- configuration --------------------------------------------------------------------


def _coerce(key, raw):
    kind = _TYPES.get(key, str)
    if kind is bool:
        if isinstance(raw, bool):
            return raw
        return str(raw).lower() in ("1", "true", "yes", "on")
    try:
        return kind(raw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad value for {key}: {raw!r}") from exc


def resolve_config(command, defaults, config_file, flags):
    """Merge defaults < file < environment < flags for ``command``."""
    cfg = dict(defaults)
    if config_file:
        try:
            data = json.loads(Path(config_file).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config file {config_file}: {exc}") from exc
        data = data.get(command, data)
        for k, v in data.items():
            if k in cfg:
                cfg[k] = _coerce(k, v)
    for k in cfg:
        if k == "output":
            continue  # GLVORTEX_OUTPUT is the output root, not a run directory
        env = os.environ.get(ENV_PREFIX + k.upper())
        if env is not None:
            cfg[k] = _coerce(k, env)
    for k, v in flags.items():
        if v is not None and k in cfg:
            cfg[k] = _coerce(k, v)
    if cfg.get("output") is None:
        root = os.environ.get(OUTPUT_ENV, "glvortex-out")
        cfg["output"] = str(Path(root) / command)
    cfg["command"] = command
    return cfg


def _pair(text, name):
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError as exc:
        raise UsageError(f"{name} must be comma-separated numbers") from exc
    return vals


def _grid(cfg):
    if cfg["N"] < 8 or cfg["L"] <= 0:
        raise UsageError("need N >= 8 and L > 0")
    return Grid2D(cfg["L"], cfg["N"])


def _profile(cfg):
    if cfg.get("profile"):
        return VortexProfile.load(cfg["profile"])
    return default_profile()


def _recipe(cfg, amplitude=None):
    p = Perturbation.parse(cfg["perturb"], seed=cfg["seed"])
    if cfg.get("center"):
        c = _pair(cfg["center"], "center")
        p = Perturbation.from_dict(dict(p.to_dict(), center=c))
    if amplitude is not None:
        p = Perturbation.from_dict(dict(p.to_dict(), amplitude=amplitude))
    return p


class Outputs:
    """Writes run artifacts tagged with the config and profile hashes."""

    def __init__(self, cfg, profile):
        self.dir = Path(cfg["output"])
        self.dir.mkdir(parents=True, exist_ok=True)
        self.tags = {"config_hash": config_hash(cfg), "profile_hash": profile.content_hash}
        (self.dir / "config.json").write_text(dumps(dict(cfg, **self.tags)) + "\n")

    def json(self, name, payload):
        path = self.dir / name
        path.write_text(dumps(dict(payload, **self.tags)) + "\n")
        return path

    def csv(self, name, run: dynamics.EvolutionRun):
        path = self.dir / name
        run.write_csv(path)
        text = path.read_text()
        path.write_text(f"# config_hash={self.tags['config_hash']} profile_hash={self.tags['profile_hash']}\n" + text)
        return path


def _echo(key, value):
    click.echo(f"{key} = {fmt_float(value) if isinstance(value, float) else value}")


def _guard(fn):
    """Map package errors onto the exit-code contract."""

    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except UsageError as exc:
            click.echo(f"usage error: {exc}", err=True)
            sys.exit(EXIT_USAGE)
        except (ProfileError, sector.SectorError, dynamics.ModulationFailure, dynamics.StepRejected,
                NumericalFailure, np.linalg.LinAlgError, FloatingPointError) as exc:
            click.echo(f"numerical failure: {exc}", err=True)
            sys.exit(EXIT_NUMERICAL)

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# -- commands ----------------------------------------------------------------------------


@click.group()
@click.option("-v", "--verbose", is_flag=True)
def main(verbose):
    """Numerical experiments on the degree-one Ginzburg-Landau vortex."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")


def _common(f):
    f = click.option("--config", "config_file", type=click.Path(dir_okay=False), help="JSON config file.")(f)
    f = click.option("--output", help="Output directory.")(f)
    f = click.option("--profile", help="Profile table to load instead of solving.")(f)
    return f


@main.command("profile")
@_common
@click.option("--rmax", type=float)
@click.option("--tol", type=float)
@click.option("--match-radius", type=float)
@_guard
def cmd_profile(config_file, output, profile, **flags):
    """Solve for the vortex profile and write the table."""
    cfg = resolve_config("profile", {"rmax": 40.0, "tol": 1e-10, "match_radius": 30.0, "output": None, "profile": None},
                         config_file, dict(flags, output=output, profile=profile))
    if cfg["rmax"] <= 0 or cfg["tol"] <= 0:
        raise UsageError("rmax and tol must be positive")
    if cfg["rmax"] < RECOMMENDED_MIN_RMAX:
        click.echo(f"warning: tail-match radius {cfg['rmax']} below recommended {RECOMMENDED_MIN_RMAX}", err=True)
    match = min(cfg["match_radius"], cfg["rmax"])
    p = solve_profile(r_max=cfg["rmax"], tol=cfg["tol"], match_radius=match)
    out = Outputs(cfg, p)
    p.save(out.dir / "profile.txt")
    diag = profile_diagnostics(p)
    out.json("profile_report.json", {"A1": p.slope_at_origin, "r_max": p.r_max, "match_radius": p.match_radius, **diag})
    _echo("A1", p.slope_at_origin)
    _echo("residual_sup", diag["residual_sup"])
    _echo("stitch_error", diag["stitch_error"])


@main.command("energy")
@_common
@click.option("--L", "L", type=float)
@click.option("--N", "N", type=int)
@click.option("--R", "R", help="Comma-separated cutoff scales.")
@click.option("--perturb")
@click.option("--seed", type=int)
@click.option("--center")
@click.option("--shift")
@click.option("--phase", type=float)
@click.option("--tol", type=float)
@_guard
def cmd_energy(config_file, output, profile, **flags):
    """Renormalized energy by both routes, P_R decay table and the window sweep."""
    defaults = {"L": 30.0, "N": 512, "R": "2,4,7.5", "perturb": "none", "seed": 0, "center": None, "shift": "0,0",
                "phase": 0.0, "tol": 1e-6, "output": None, "profile": None}
    cfg = resolve_config("energy", defaults, config_file, dict(flags, output=output, profile=profile))
    g = _grid(cfg)
    p = _profile(cfg)
    radii = _pair(cfg["R"], "R")
    for R in radii:
        if not 1.0 <= R <= g.L / 4:
            raise UsageError(f"R = {R} must lie in [1, L/4] for L = {g.L}")
    f = Field2D.from_recipe(g, p, _recipe(cfg))
    shift = _pair(cfg["shift"], "shift")
    if len(shift) != 2:
        raise UsageError("shift needs two components")
    if any(shift) or cfg["phase"]:
        f = f.transformed(shift, cfg["phase"])
    out = Outputs(cfg, p)
    direct = fields.renormalized_energy_direct(f, cfg["tol"])
    rows = []
    for R in radii:
        br = fields.renormalized_energy_decomposed(f, R)
        rows.append(dict(br.to_dict(), agreement=abs(br.total - direct.value)))
    pr = [abs(r["P_R"]) for r in rows]
    slope = None
    if len(radii) >= 2 and all(v > 0 for v in pr):
        slope = float(np.polyfit(np.log(radii), np.log(pr), 1)[0])
    # the decomposed route integrates eps over the box; it needs eps ~ 0 near the edge
    edge = np.abs(f.eps.values[g.R > 0.9 * g.L])
    applicable = bool(edge.size == 0 or edge.max() <= 1e-8)
    if not applicable:
        click.echo("warning: eps does not vanish near the box edge; decomposed rows carry truncation bias", err=True)
    report = {
        "decomposed_applicable": applicable,
        "direct": direct.to_dict(),
        "decomposed": rows,
        "p_r_decay_slope": slope,
    }
    out.json("energy_report.json", report)
    _echo("energy_direct", direct.value)
    for r in rows:
        _echo(f"energy_decomposed[R={fmt_float(r['R'])}]", r["total"])
    if slope is not None:
        _echo("p_r_slope", slope)


def _coercivity_defaults():
    return {"R": "4", "refine": 1, "j_max": 6, "j": None, "constraint": True, "seed": 0, "count": 8,
            "output": None, "profile": None}


@main.command("coercivity")
@_common
@click.option("--R", "R")
@click.option("--refine", type=int)
@click.option("--j-max", type=int)
@click.option("--j", type=int, help="Restrict to one sector.")
@click.option("--constraint/--no-constraint", default=None)
@click.option("--seed", type=int)
@_guard
def cmd_coercivity(config_file, output, profile, **flags):
    """Sector assembly, identity residuals and constrained eigenvalues."""
    cfg = resolve_config("coercivity", _coercivity_defaults(), config_file, dict(flags, output=output, profile=profile))
    if cfg["refine"] < 1 or cfg["j_max"] < 1:
        raise UsageError("refine and j-max must be at least 1")
    R = float(cfg["R"]) if cfg["R"] not in ("inf", "Infinity") else math.inf
    if R < 1:
        raise UsageError("R must be at least 1")
    p = _profile(cfg)
    rg = sector.RadialGrid.graded(cfg["refine"])
    out = Outputs(cfg, p)
    report = {"grid": rg.meta()}
    b0 = sector.assemble_sector(0, R, rg, p)
    rho_check = sector.q0_identity_check(b0.h_potential["rho"], b0)
    report["q0_identity_rho"] = rho_check.to_dict()
    if cfg["j"] is not None:
        j = cfg["j"]
        if abs(j) > cfg["j_max"]:
            raise UsageError("|j| must not exceed j-max")
        bj = sector.assemble_sector(j, R, rg, p)
        if j == 0 and not cfg["constraint"]:
            lam, corr, _ = sector.q0_min_eigvec(bj)
            report["sector"] = {"j": 0, "lambda_min": lam, "witness_rho_correlation": corr}
        else:
            con = bj.constraints.get("b0") if (j == 0 and cfg["constraint"]) else None
            res = sector.min_eig_constrained(sector.single_block(bj, with_i=False, constraint=con, name=f"q{j}"))
            report["sector"] = {"j": j, "lambda_min": res.lam}
        _echo(f"lambda_min[j={j}]", report["sector"]["lambda_min"])
    else:
        if cfg["constraint"]:
            rep = sector.constrained_coercivity(R, rg, p, cfg["j_max"])
        else:
            _, blocks = sector.combined_blocks(R, rg, p, cfg["j_max"], constrained=False)
            per = {b.name: sector.min_eig_constrained(b).lam for b in blocks}
            name = min(per, key=per.get)
            rep = sector.CoercivityReport(R, per[name], name, per, rg.meta())
        report["coercivity"] = rep.to_dict()
        modes = sector.random_modes(rg, cfg["seed"])
        if cfg["constraint"]:
            modes = sector.project_constraints(modes, rg, p)
        report["scan"] = sector.coercivity_scan(max(R, 1.0) if math.isfinite(R) else 4.0, 3, modes, rg, p).to_dict()
        _echo("lambda_min", rep.lam_min)
        _echo("argmin_block", rep.block)
        if cfg["constraint"] and not rep.lam_min > 0:
            out.json("coercivity_report.json", report)
            raise NumericalFailure(f"constrained lambda_min = {rep.lam_min:.6g} is not positive")
    out.json("coercivity_report.json", report)


def _evolve_defaults():
    return {"L": 30.0, "N": 256, "dt": None, "T": 50.0, "perturb": "bump:0.02", "seed": 0, "center": None,
            "every": None, "method": "cn", "ode_track": False, "distance": True, "amp_sweep": None,
            "snapshots": 0, "delta": dynamics.DELTA_DEFAULT, "alpha": dynamics.ALPHA_DEFAULT,
            "output": None, "profile": None}


def _initial_field(cfg, g, p, amplitude=None):
    rec = _recipe(cfg, amplitude)
    if rec.family == "none" or rec.amplitude == 0:
        return Field2D.vortex(g, p)
    if cfg["distance"]:
        return dynamics.perturbation_at_distance(g, p, rec, rec.amplitude)
    return Field2D.from_recipe(g, p, rec)


@main.command("evolve")
@_common
@click.option("--L", "L", type=float)
@click.option("--N", "N", type=int)
@click.option("--dt", type=float)
@click.option("--T", "T", type=float)
@click.option("--perturb", help="family[:amplitude[:width]]; amplitude is the target d_E unless --raw-amplitude.")
@click.option("--raw-amplitude", "raw", is_flag=True, default=None)
@click.option("--seed", type=int)
@click.option("--center")
@click.option("--every", type=int, help="Modulate every k steps.")
@click.option("--method", type=click.Choice(["cn", "rk4"]))
@click.option("--ode-track/--no-ode-track", default=None)
@click.option("--amp-sweep", help="Comma-separated amplitudes.")
@click.option("--snapshots", type=int, help="Save a field snapshot every k modulation points.")
@click.option("--delta", type=float)
@click.option("--alpha", type=float)
@_guard
def cmd_evolve(config_file, output, profile, raw, **flags):
    """Evolve a perturbed vortex and track its modulation parameters."""
    if raw:
        flags["distance"] = False
    cfg = resolve_config("evolve", _evolve_defaults(), config_file, dict(flags, output=output, profile=profile))
    if cfg["T"] <= 0 or (cfg["dt"] is not None and cfg["dt"] <= 0):
        raise UsageError("T and dt must be positive")
    g = _grid(cfg)
    p = _profile(cfg)
    out = Outputs(cfg, p)
    amps = [None] if not cfg["amp_sweep"] else list(_pair(cfg["amp_sweep"], "amp-sweep"))
    table = []
    truncated = False
    for amp in amps:
        f0 = _initial_field(cfg, g, p, amp)
        snap_dir = None
        if cfg["snapshots"]:
            snap_dir = out.dir / ("snapshots" if amp is None else f"snapshots_{amp:g}")
            snap_dir.mkdir(exist_ok=True)
        run = dynamics.orbital_stability_experiment(
            f0, cfg["T"], dt=cfg["dt"], every=cfg["every"], delta=cfg["delta"], alpha=cfg["alpha"],
            ode_track=cfg["ode_track"], method=cfg["method"], snapshot_dir=snap_dir,
            snapshot_every=cfg["snapshots"] or None, config=dict(cfg, amplitude=amp),
        )
        tag = "" if amp is None else f"_{amp:g}"
        out.csv(f"diagnostics{tag}.csv", run)
        summ = run.summary()
        out.json(f"manifest{tag}.json", {"config": dict(cfg, amplitude=amp), "summary": summ})
        table.append(dict(summ, amplitude=amp))
        _echo(f"max_ratio{tag}", summ["max_ratio"])
        _echo(f"energy_drift{tag}", summ["energy_drift"])
        if run.truncated:
            truncated = True
            click.echo(f"truncated{tag}: {run.truncated}", err=True)
    if len(amps) > 1:
        out.json("amp_sweep.json", {"rows": table})
        for row in table:
            click.echo(f"amplitude {fmt_float(row['amplitude'])}: d0 {fmt_float(row['d0'])} "
                       f"max_ratio {fmt_float(row['max_ratio'])} C {fmt_float(row['rate_constant'])}")
    if truncated:
        raise NumericalFailure("modulation failed mid-run; partial outputs written")


@main.command("modulate")
@_common
@click.option("--L", "L", type=float)
@click.option("--N", "N", type=int)
@click.option("--field", help="Snapshot file to modulate.")
@click.option("--perturb")
@click.option("--seed", type=int)
@click.option("--center", help="Vortex center of the synthetic input.")
@click.option("--phase", type=float)
@click.option("--guess", help="b1,b2,phi")
@click.option("--interp", type=click.Choice(["spectral", "bilinear"]))
@click.option("--alpha", type=float)
@_guard
def cmd_modulate(config_file, output, profile, **flags):
    """Newton modulation of one field, with the rate system at the solution."""
    defaults = {"L": 30.0, "N": 256, "field": None, "perturb": "none", "seed": 0, "center": "0,0", "phase": 0.0,
                "guess": "0,0,0", "interp": "spectral", "alpha": dynamics.ALPHA_DEFAULT, "output": None, "profile": None}
    cfg = resolve_config("modulate", defaults, config_file, dict(flags, output=output, profile=profile))
    p = _profile(cfg)
    if cfg["field"]:
        try:
            f = Field2D.load(cfg["field"], p)
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot load field: {exc}") from exc
    else:
        g = _grid(cfg)
        center = _pair(cfg["center"], "center")
        rec = Perturbation.parse(cfg["perturb"], seed=cfg["seed"])
        f = Field2D.from_recipe(g, p, rec, center=center, phase=cfg["phase"])
    guess = _pair(cfg["guess"], "guess")
    if len(guess) != 3:
        raise UsageError("guess needs b1,b2,phi")
    out = Outputs(cfg, p)
    try:
        st = dynamics.modulate(f, (guess[:2], guess[2]), estimate=True, alpha=cfg["alpha"], interp=cfg["interp"])
    except dynamics.ModulationFailure as exc:
        out.json("modulation.json", {"failure": str(exc), "residual_history": exc.history})
        raise
    rates = st.rates()
    out.json("modulation.json", {
        "a": list(st.a), "phi": st.phi, "residual": st.residual, "iterations": st.iterations,
        "residual_history": st.history, "estimate_A": st.estimate_A, "eps_h": st.eps_h,
        "M": [list(r) for r in st.M], "F": list(st.F), "cond": st.cond, "rates": list(rates),
    })
    _echo("a1", float(st.a[0]))
    _echo("a2", float(st.a[1]))
    _echo("phi", float(st.phi))
    _echo("estimate_A", float(st.estimate_A))


if __name__ == "__main__":
    main()
