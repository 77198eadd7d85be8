"""``porehomog`` command line: cell, micro, macro, unfold and sweep runs.

Exit codes: 0 ok, 2 configuration error, 3 solver failure, 4 verdict failure.
Every output directory gets a ``manifest.json`` (config echo, versions,
mask hash, generator name) that is byte-identical across reruns; wall time
goes to ``timing.json`` so it cannot break that.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .cell import CellProblemError, EffectiveCoefficients, effective_coefficients, solve_sigma
from .config import COMMANDS, ConfigError, ExperimentConfig, parse_config
from .geometry import GeometryError, build_cell_mask, build_domain_mask, parse_geometry
from .initial import RNG_NAME
from .io import read_snapshot, versions, write_csv, write_json, write_snapshot
from .linalg import SolveError
from .macro import MACRO_COLUMNS, MacroError, MacroParams, run_macro
from .micro import LEDGER_COLUMNS, MicroParams, StepError, estimate_report, run_micro
from .sweep import SWEEP_COLUMNS, SweepError, manufactured_limit, manufactured_sweep, two_scale_sweep
from .unfolding import (
    TwoScaleRow,
    UnfoldingError,
    extend_solid,
    integral_identity_check,
    pairing,
    two_scale_error,
    two_scale_report,
    unfold,
)

__all__ = ["main", "run_command", "VerdictFailure"]

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_VERDICT = 0, 2, 3, 4


class VerdictFailure(RuntimeError):
    pass


def micro_params(cfg: ExperimentConfig, eps: float) -> MicroParams:
    return MicroParams(
        eps=eps, lam=cfg.lam, mu=cfg.mu, dt=cfg.dt, T=cfg.T, S=cfg.S,
        alpha=cfg.alpha, beta=cfg.beta, gamma=cfg.gamma, exponent_override=cfg.exponent_override,
        flow=cfg.flow, stokes_solver=cfg.stokes_solver, stokes_tol=cfg.stokes_tol,
        uzawa_step=cfg.uzawa_step, ch_solver=cfg.ch_solver, ch_tol=cfg.ch_tol,
        snapshot_stride=cfg.snapshot_stride, dual_stride=cfg.dual_stride,
    )


def _manifest(out: Path, cfg: ExperimentConfig, extra: dict | None = None) -> None:
    doc = {
        "command": cfg.command,
        "config": cfg.echo(),
        "config_keys_set": cfg.raw,
        "seed": cfg.seed,
        "rng": RNG_NAME,
        "versions": versions(),
    }
    if extra:
        doc.update(extra)
    doc["artifacts"] = sorted(str(p.relative_to(out)) for p in out.rglob("*")
                              if p.is_file() and p.name not in ("manifest.json", "timing.json"))
    write_json(out / "manifest.json", doc)


def _snapshot_meta(cfg: ExperimentConfig, name: str, mask, t: float, step: int) -> dict:
    return {
        "field": name,
        "eps": mask.eps,
        "k": mask.k,
        "N_cell": mask.N_cell,
        "geometry": cfg.geometry,
        "mask_sha256": mask.digest(),
        "t": t,
        "step": step,
        "params": {"lambda": cfg.lam, "mu": cfg.mu, "dt": cfg.dt, "S": cfg.S, "T": cfg.T},
    }


# ---------------------------------------------------------------------------
# commands


def _cmd_cell(cfg: ExperimentConfig, out: Path) -> dict:
    geom = cfg.cell_geometry
    co = effective_coefficients(geom, cfg.N, cfg.convention)
    doc = co.to_json()
    doc["notes"] = {
        "means": "volume means over the pore part Y_p",
        "sigma_convention": cfg.convention,
    }
    write_json(out / "coefficients.json", doc)
    mask = build_cell_mask(geom, cfg.N)
    if geom.kind != "empty" or cfg.convention == "MeanProject":
        sig = solve_sigma(mask, cfg.convention)
        write_snapshot(out / "sigma", sig.sigma, {"field": "sigma", "N_cell": cfg.N, "geometry": cfg.geometry,
                                                  "mask_sha256": mask.digest(), "convention": cfg.convention})
    return {"mask_sha256": mask.digest()}


def _cmd_micro(cfg: ExperimentConfig, out: Path) -> dict:
    eps = cfg.eps[0]
    geom = cfg.cell_geometry
    mask = build_domain_mask(geom, eps, cfg.N_cell)
    run = run_micro(mask, params=micro_params(cfg, eps), c0=cfg.init, seed=cfg.seed)
    write_csv(out / "ledger.csv", LEDGER_COLUMNS, run.ledger.rows)
    write_json(out / "estimates.json", estimate_report(run.ledger))
    snap = out / "snapshots"
    snap.mkdir(exist_ok=True)
    for st in run.snapshots:
        for name in ("c", "w", "p"):
            write_snapshot(snap / f"{name}_step{st.step:06d}", run.field(st, name),
                           _snapshot_meta(cfg, name, mask, st.t, st.step))
        ux, uy = run.field(st, "u")
        for name, arr in (("ux", ux), ("uy", uy)):
            write_snapshot(snap / f"{name}_step{st.step:06d}", arr,
                           _snapshot_meta(cfg, name, mask, st.t, st.step))
    return {"mask_sha256": mask.digest()}


def _load_coefficients(cfg: ExperimentConfig) -> EffectiveCoefficients:
    if cfg.coefficients:
        try:
            with open(cfg.coefficients) as fh:
                return EffectiveCoefficients.from_json(json.load(fh))
        except (OSError, KeyError, ValueError) as exc:
            raise ConfigError(f"cannot read coefficients {cfg.coefficients!r}: {exc}") from None
    return effective_coefficients(cfg.cell_geometry, cfg.N_cell, cfg.convention)


def _cmd_macro(cfg: ExperimentConfig, out: Path) -> dict:
    co = _load_coefficients(cfg)
    params = MacroParams(
        coefficients=co, N=cfg.N, lam=cfg.lam, mu=cfg.mu, dt=cfg.dt, T=cfg.T, S=cfg.S,
        orientation=cfg.orientation, sigma_bar_override=cfg.sigma_bar_override,
        conserve_mass=cfg.conserve_mass, growth_limit=cfg.growth_limit,
        snapshot_stride=cfg.snapshot_stride,
    )
    init = cfg.raw.get("init", "stripe")
    run = run_macro(params, init, cfg.seed)
    write_csv(out / "ledger.csv", MACRO_COLUMNS, run.ledger)
    snap = out / "snapshots"
    snap.mkdir(exist_ok=True)
    for st in run.snapshots:
        for name in ("c", "w", "p"):
            write_snapshot(snap / f"{name}_step{st.step:06d}", getattr(st, name), {
                "field": name, "N": cfg.N, "t": st.t, "step": st.step,
                "orientation": cfg.orientation, "sigma_bar": params.sigma_bar,
                "sigma_bar_override_used": cfg.sigma_bar_override is not None,
            })
    return {"coefficients": co.to_json(), "sigma_bar_used": params.sigma_bar,
            "sigma_bar_override_used": cfg.sigma_bar_override is not None,
            "orientation": cfg.orientation}


def _test_function(name: str, n: int, k: int) -> np.ndarray:
    x = (np.arange(n) + 0.5) / n
    X1, X2 = np.meshgrid(x, x, indexing="ij")
    if name == "one":
        return np.ones((n, n))
    y = (X1 if name == "cos_y1" else X2) * k
    return np.cos(2 * np.pi * y)


def _cmd_unfold(cfg: ExperimentConfig, out: Path) -> dict:
    rows, table = [], []
    digests = {}
    for path in cfg.snapshot.split(","):
        try:
            field, meta = read_snapshot(path.strip())
        except (OSError, KeyError, ValueError) as exc:
            raise ConfigError(f"cannot read snapshot {path!r}: {exc}") from None
        if "eps" in cfg.raw:
            if len(cfg.eps) != 1:
                raise ConfigError("unfold takes a single eps")
            eps = cfg.eps[0]
        elif "eps" in meta:
            eps = float(meta["eps"])
        else:
            raise ConfigError(f"snapshot {path!r} carries no eps; set eps=")
        k = int(round(1.0 / eps))
        if meta.get("eps") is not None and abs(float(meta["eps"]) - eps) > 1e-12:
            raise ConfigError(f"eps={eps:g} does not match the snapshot's eps={meta['eps']:g}")
        if "geometry" in meta and "N_cell" in meta:
            mask = build_domain_mask(parse_geometry(meta["geometry"]), eps, int(meta["N_cell"]))
            if meta.get("mask_sha256") not in (None, mask.digest()):
                raise ConfigError(f"snapshot {path!r}: mask hash does not match its geometry")
            active = mask.cell_active
            digests[path.strip()] = mask.digest()
        else:
            active = np.ones(field.shape, dtype=bool)
        ext = extend_solid(field, active, k, cfg.extension)
        T = unfold(ext, eps)
        if cfg.limit == "manufactured":
            limit = manufactured_limit
        elif cfg.limit == "zero":
            limit = np.zeros(T.values.shape)
        else:
            N = T.N_cell
            cnt = active.reshape(k, N, k, N).sum(axis=(1, 3))
            s = np.where(active, field, 0.0).reshape(k, N, k, N).sum(axis=(1, 3))
            avg = np.divide(s, cnt, out=np.zeros_like(s), where=cnt > 0)
            chi = active[:N, :N] if cfg.extension == "zero" else np.ones((N, N), dtype=bool)
            limit = avg[:, :, None, None] * chi[None, None]
        dist = two_scale_error(T, limit)
        pr = pairing(ext, _test_function(cfg.test_function, field.shape[0], k))
        lhs, rhs, diff = integral_identity_check(ext, eps)
        _, rhs_printed, _ = integral_identity_check(ext, eps, printed=True)
        rows.append(TwoScaleRow(eps, dist, pr))
        table.append({"eps": eps, "k": k, "distance": dist, "pairing": pr, "integral_lhs": lhs,
                      "integral_rhs": rhs, "integral_diff": diff, "integral_rhs_printed": rhs_printed,
                      "snapshot": path.strip()})
    rep = two_scale_report(rows)
    table.sort(key=lambda r: -r["eps"])
    write_csv(out / "unfold.csv", ("eps", "k", "distance", "pairing", "integral_lhs", "integral_rhs",
                                   "integral_diff", "integral_rhs_printed", "snapshot"), table)
    write_json(out / "verdict.json", {"monotone": rep.monotone, "levels": len(rows)})
    return {"mask_sha256": digests, "limit": cfg.limit, "extension": cfg.extension}


def _cmd_sweep(cfg: ExperimentConfig, out: Path) -> dict:
    if cfg.manufactured:
        rows, monotone = manufactured_sweep(cfg.eps, cfg.N_cell)
        write_csv(out / "sweep.csv", ("eps", "k", "distance", "pairing"), rows)
        verdict = {"monotone": monotone, "passed": monotone}
        write_json(out / "verdict.json", verdict)
        if not monotone:
            raise VerdictFailure("two-scale distances are not strictly decreasing")
        return {"manufactured": True}
    geom = cfg.cell_geometry
    base = micro_params(cfg, cfg.eps[0])
    rep = two_scale_sweep(geom, cfg.eps, cfg.N_cell, base, cfg.init, cfg.seed, cfg.convention, cfg.extension)
    write_csv(out / "sweep.csv", SWEEP_COLUMNS, rep.rows)
    for k, ledger in rep.ledgers.items():
        write_csv(out / f"ledger_k{k}.csv", LEDGER_COLUMNS, ledger.rows)
    write_json(out / "verdict.json", rep.verdict())
    extra = {"mask_sha256": {str(k): d for k, d in rep.mask_digests.items()}}
    if not rep.passed:
        failed = [name for name, ok in (("bounded monitors", rep.bounded), ("monotone c", rep.monotone_c),
                                        ("monotone w", rep.monotone_w)) if not ok]
        _manifest(out, cfg, extra)
        raise VerdictFailure("sweep verdict failed: " + ", ".join(failed))
    return extra


_DISPATCH = {
    "cell": _cmd_cell,
    "micro": _cmd_micro,
    "macro": _cmd_macro,
    "unfold": _cmd_unfold,
    "sweep": _cmd_sweep,
}


def run_command(cfg: ExperimentConfig, out: str | Path) -> int:
    """Run one experiment and write its artifacts; returns the exit status."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        extra = _DISPATCH[cfg.command](cfg, out)
    except VerdictFailure as exc:
        _timing(out, t0)
        print(f"porehomog: {exc}", file=sys.stderr)
        return EXIT_VERDICT
    except (ConfigError, GeometryError, CellProblemError, SweepError, UnfoldingError) as exc:
        print(f"porehomog: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolveError, StepError, MacroError, ValueError, ArithmeticError) as exc:
        print(f"porehomog: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    _manifest(out, cfg, extra)
    _timing(out, t0)
    return EXIT_OK


def _timing(out: Path, t0: float) -> None:
    write_json(out / "timing.json", {"wall_time_s": time.perf_counter() - t0})


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="porehomog", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="key=value configuration file")
    ap.add_argument("--out", default=None, help="output directory (overrides out= in the config)")
    ap.add_argument("--seed", type=int, default=None, help="unsigned 64-bit seed (overrides the config)")
    args = ap.parse_args(argv)
    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        print(f"porehomog: config error: cannot read {args.config}: {exc.strerror}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = parse_config(text, command=args.command, seed=args.seed)
    except ConfigError as exc:
        print(f"porehomog: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out or cfg.out
    if out is None:
        print("porehomog: config error: no output directory (pass --out or set out=)", file=sys.stderr)
        return EXIT_CONFIG
    return run_command(cfg, out)


if __name__ == "__main__":
    sys.exit(main())
