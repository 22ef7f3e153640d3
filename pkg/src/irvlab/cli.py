"""Command-line front door.

    irvlab {simulate,ssvi,carr-sun-audit,static-arb,sandwich} CONFIG [--seed N]

Each run writes config-echo.json and stats.json (plus command-specific CSV
files) into the configured output directory. Exit codes: 0 pass,
2 static-arbitrage violations, 3 configuration or structural error,
4 statistical-test failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from .carr_sun import CarrSunParameterError, CarrSunParams, audit_grid
from .config import ConfigError, load_config
from .core import StoppingBand, build_model, no_drift_a
from .engine import ConfigurationError, SimConfig, TimeGrid, martingale_test, qv_check, simulate
from .sandwich import AdmissibilityError, STOP_REASONS, SandwichSpec, sandwich_experiment
from .ssvi import SsviDomainError, SsviParams, frak_B_inverse, master_coefficients, smile_omega, ssvi_simulate
from .static_arb import SmileSnapshot, StructuralError, check

EXIT_OK = 0
EXIT_VIOLATIONS = 2
EXIT_CONFIG = 3
EXIT_STATISTICAL = 4

CONFIG_ERRORS = (
    ConfigError,
    ConfigurationError,
    CarrSunParameterError,
    AdmissibilityError,
    SsviDomainError,
    StructuralError,
    KeyError,
    TypeError,
    ValueError,
)


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    return obj


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.17g" % float(x)


def write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(x) for x in row])
    path.write_text(buf.getvalue())


def _run_dir(cfg: dict) -> Path:
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------


def cmd_simulate(cfg: dict) -> int:
    grid = TimeGrid.covering(cfg["T"], cfg["dt"])
    model = build_model(cfg["model"]["name"], cfg["model"]["params"], cfg["strike"], cfg["T"])
    n_rows = cfg["n_paths"] * (grid.steps + 1)
    dump = cfg["write_paths"] and n_rows <= cfg["max_path_rows"]
    sc = SimConfig(
        n_paths=int(cfg["n_paths"]),
        master_seed=int(cfg["seed"]),
        band=StoppingBand(cfg["band_n"]),
        antithetic=cfg["antithetic"],
        workers=int(cfg["workers"]),
        chunk_size=int(cfg["chunk_size"]),
        store_paths=dump,
    )
    out = _run_dir(cfg)
    write_json(out / "config-echo.json", cfg)
    ens = simulate(model, cfg["strike"], cfg["s0"], cfg["omega0"], grid, sc)
    stats = martingale_test(ens)
    qv = qv_check(ens)
    passed = abs(stats.drift_z_score) <= cfg["z_budget"]
    doc = {
        "config": cfg,
        "model": model.describe(),
        "ensemble": stats.to_dict(),
        "abs_mean_minus_initial": abs(stats.mean_terminal_call - stats.initial_call),
        "qv": {"realized": qv.realized, "predicted": qv.predicted, "rel_error": qv.rel_error, "rel_std_error": qv.rel_std_error},
        "stop_reasons": ens.reason_counts(),
        "paths_csv": "written" if dump else ("skipped: size gate" if cfg["write_paths"] else "disabled"),
        "passed": passed,
    }
    write_json(out / "stats.json", doc)
    if dump:
        write_csv(out / "paths.csv", ["path_id", "step", "t", "S", "omega", "C", "stopped_flag"], _sim_rows(ens))
    print(f"simulate: z={stats.drift_z_score:.4g} budget={cfg['z_budget']} -> {'pass' if passed else 'fail'}")
    return EXIT_OK if passed else EXIT_STATISTICAL


def _sim_rows(ens):
    for p in range(len(ens)):
        stop = int(ens.stop_index[p])
        for i, t in enumerate(ens.times):
            flag = 1 if 0 <= stop <= i else 0
            yield p, i, t, ens.s[p, i], ens.omega[p, i], ens.call[p, i], flag


def cmd_ssvi(cfg: dict) -> int:
    psi = float(cfg["psi"])
    theta0 = cfg["theta0"]
    if theta0 is None:
        theta0 = 2.0 * frak_B_inverse(psi * psi)
        cfg["theta0"] = theta0
    p = SsviParams(psi=psi, theta0=float(theta0), T=float(cfg["T"]))
    grid = TimeGrid.covering(cfg["T"], cfg["dt"])
    ks = np.linspace(cfg["k_min"], cfg["k_max"], int(cfg["n_strikes"]))
    strikes = cfg["s0"] * np.exp(ks)
    out = _run_dir(cfg)
    write_json(out / "config-echo.json", cfg)

    # no-drift residual sweep on random (theta, psi, k)
    g = np.random.default_rng(int(cfg["seed"]))
    n = int(cfg["residual_draws"])
    th = g.uniform(0.01, 10.0, n)
    ps = g.uniform(0.0, 4.0, n)
    kk = g.uniform(-3.0, 3.0, n)
    a, b, c = master_coefficients(th, ps, kk)
    resid = np.abs(a - no_drift_a(b, c, smile_omega(th, ps, kk), kk)) / np.maximum(1.0, np.abs(a))
    residual_ok = bool(resid.max() <= cfg["residual_tol"])

    run = ssvi_simulate(p, float(cfg["sigma"]), strikes, grid, int(cfg["n_paths"]), seed=int(cfg["seed"]),
                        band=StoppingBand(cfg["band_n"]), s0=float(cfg["s0"]))
    viol = run.pre_tau_violations()
    clean = bool(viol.sum() == 0)
    diags = [dict(path_id=i, **run.diagnostics(i)) for i in range(run.s.shape[0])]
    reasons = {}
    for d in diags:
        reasons[d["reason"]] = reasons.get(d["reason"], 0) + 1
    passed = residual_ok and clean
    write_json(out / "diagnostics.json", diags)
    write_json(out / "stats.json", {
        "config": cfg,
        "residual_max_relative": float(resid.max()),
        "residual_pass": residual_ok,
        "bound_floor": run.bound_floor,
        "pre_tau_violations": int(viol.sum()),
        "paths_with_violations": int((viol > 0).sum()),
        "tau_reasons": reasons,
        "passed": passed,
    })
    if cfg["write_snapshots"]:
        m = min(int(cfg["snapshot_paths"]), run.s.shape[0])
        write_csv(out / "snapshots.csv", ["path_id", "step", "t", "S", "theta", "strike", "k", "omega", "call"],
                  _ssvi_rows(run, m))
    print(f"ssvi: residual max {resid.max():.3g}, pre-tau violations {int(viol.sum())} -> {'pass' if passed else 'fail'}")
    return EXIT_OK if passed else EXIT_STATISTICAL


def _ssvi_rows(run, m):
    for pid in range(m):
        stop = int(run.tau_step[pid])
        last = run.times.size - 1 if stop < 0 else stop
        for i in range(last + 1):
            s, th = run.s[pid, i], run.theta[pid, i]
            k = np.log(run.strikes / s)
            om = smile_omega(th, run.params.psi, k)
            calls = run.calls_at(i)[pid]
            for j, K in enumerate(run.strikes):
                yield pid, i, run.times[i], s, th, K, k[j], om[j], calls[j]


def cmd_carr_sun_audit(cfg: dict) -> int:
    p = CarrSunParams(a0=float(cfg["a0"]), a1=float(cfg["a1"]), rho=float(cfg["rho"]))
    ks = np.linspace(cfg["k_min"], cfg["k_max"], int(cfg["n_k"]))
    out = _run_dir(cfg)
    write_json(out / "config-echo.json", cfg)
    verdict = audit_grid(ks, p, threshold=float(cfg["threshold"]))
    fields = ["k", "smile_omega", "ito_drift", "ito_w_loading", "model_drift", "orthogonal_mismatch", "residual_quartic_term"]
    write_csv(out / "audit.csv", fields + ["branch"],
              ([getattr(r, f) for f in fields] + [r.branch] for r in verdict.reports))
    write_json(out / "stats.json", {
        "config": cfg,
        "verdict": verdict.line(),
        "consistent": verdict.consistent,
        "witness_k": verdict.witness_k,
        "max_mismatch": verdict.max_mismatch,
    })
    print(verdict.line())
    return EXIT_OK


def read_snapshot_csv(path) -> SmileSnapshot:
    """First line ``S,<spot>``; optional ``strike,call`` header; then rows."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise StructuralError("empty snapshot file")
    head = [x.strip() for x in lines[0].split(",")]
    if len(head) != 2 or head[0].upper() != "S":
        raise StructuralError("the first line must read 'S,<spot>'")
    try:
        s = float(head[1])
        rows = lines[1:]
        if rows and rows[0].replace(" ", "").lower() == "strike,call":
            rows = rows[1:]
        pairs = [tuple(float(x) for x in r.split(",")) for r in rows]
    except ValueError as exc:
        raise StructuralError(f"unparsable snapshot: {exc}") from exc
    if any(len(q) != 2 for q in pairs):
        raise StructuralError("each row must hold strike,call")
    return SmileSnapshot(s=s, strikes=tuple(q[0] for q in pairs), calls=tuple(q[1] for q in pairs))


def cmd_static_arb(cfg: dict) -> int:
    out = _run_dir(cfg)
    write_json(out / "config-echo.json", cfg)
    snap = read_snapshot_csv(cfg["input"])
    report = check(snap, tol=float(cfg["tol"]))
    write_json(out / "report.json", report.to_list())
    write_json(out / "stats.json", {"config": cfg, "clean": report.clean, "n_violations": len(report)})
    print(f"static-arb: {len(report)} violation(s)")
    return EXIT_OK if report.clean else EXIT_VIOLATIONS


def cmd_sandwich(cfg: dict) -> int:
    hz = cfg["n_horizons"]
    spec = SandwichSpec(
        variant=cfg["variant"],
        strikes=tuple(float(k) for k in cfg["strikes"]),
        T=float(cfg["T"]),
        s0=float(cfg["s0"]),
        sigma=float(cfg["sigma"]),
        n_horizons=() if hz is None else tuple(float(h) for h in hz),
    )
    grid = TimeGrid.covering(cfg["T"], cfg["dt"])
    band = None if cfg["extract_band_n"] is None else StoppingBand(cfg["extract_band_n"])
    out = _run_dir(cfg)
    write_json(out / "config-echo.json", cfg)
    n_rows = cfg["n_paths"] * (grid.steps + 1)
    dump = cfg["write_paths"] and n_rows <= cfg["max_path_rows"]
    rows = []

    def on_chunk(first, sp):
        names = sorted(sp.n)
        pre = sp.pre_stop_mask()
        for p in range(sp.s.shape[0]):
            for i, t in enumerate(sp.times):
                rows.append([first + p, i, t, sp.s[p, i]] + [sp.n[nm][p, i] for nm in names]
                            + list(sp.c[p, :, i]) + [0 if pre[p, i] else 1])

    report = sandwich_experiment(spec, grid, int(cfg["n_paths"]), seed=int(cfg["seed"]),
                                 chunk_size=int(cfg["chunk_size"]), extract_band=band,
                                 on_chunk=on_chunk if dump else None)
    if dump:
        m = len(spec.strikes)
        n_names = ["N"] if spec.variant == "single" else ["N1", "N12", "N23"]
        write_csv(out / "paths.csv", ["path_id", "step", "t", "S"] + n_names + [f"C{j + 1}" for j in range(m)] + ["stopped"], rows)
    doc = report.to_dict()
    doc["config"] = cfg
    doc["stop_reasons_legend"] = list(STOP_REASONS)
    doc["paths_csv"] = "written" if dump else ("skipped: size gate" if cfg["write_paths"] else "disabled")
    write_json(out / "stats.json", doc)
    print(f"sandwich: {report.prestop_violations} pre-stop violation(s) -> {'pass' if report.passed else 'fail'}")
    return EXIT_OK if report.passed else EXIT_STATISTICAL


COMMANDS = {
    "simulate": cmd_simulate,
    "ssvi": cmd_ssvi,
    "carr-sun-audit": cmd_carr_sun_audit,
    "static-arb": cmd_static_arb,
    "sandwich": cmd_sandwich,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="irvlab", description="Implied remaining variance experiments")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("config", help="YAML or JSON configuration file")
        sp.add_argument("--seed", type=int, default=None, help="override the configured seed")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.command, args.config, seed=args.seed)
        return COMMANDS[args.command](cfg)
    except CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
