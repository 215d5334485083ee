"""Batch command-line front end.

Subcommands map one-to-one onto the library surfaces: `table1` (band-minimum
summary over a k range), `profile` (band profile + quadratic approximation),
`verify` (identity / criterion suite), `miniwell` (K spectrum from a
geometry file), `predict` (gap forecast files), `validate2d` (2D sweep).

Every invocation writes its outputs (UTF-8 CSV/JSON, RFC-4180 quoting via
the csv module) plus a manifest JSON recording the subcommand, the full
parameter set, the tool version, a timestamp, and the output paths. Outputs
are deterministic for identical parameter sets; the worker count for k
sweeps comes from MAGWELL_WORKERS (default 1).

Exit codes: 0 success, 1 numerical failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .sl_engine import SolverError, parity_classify
from . import montgomery, miniwell, asymptotics, model2d

WORKERS_ENV = "MAGWELL_WORKERS"


class UsageError(Exception):
    pass


def _parse_k_range(text: str) -> list[int]:
    try:
        if ".." in text:
            lo, hi = text.split("..")
            ks = list(range(int(lo), int(hi) + 1))
        else:
            ks = [int(text)]
    except ValueError as exc:
        raise UsageError(f"bad k range {text!r}: {exc}") from exc
    if not ks or any(k < 1 for k in ks):
        raise UsageError(f"k values must be >= 1, got {text!r}")
    return ks


def _parse_float_list(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.replace(",", " ").split()]
    except ValueError as exc:
        raise UsageError(f"bad float list {text!r}") from exc
    if not vals:
        raise UsageError("empty list")
    return vals


def _parse_range(text: str) -> tuple[float, float]:
    try:
        lo, hi = text.split(":")
        return float(lo), float(hi)
    except ValueError as exc:
        raise UsageError(f"bad range {text!r}, expected LO:HI") from exc


def _workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _write_manifest(outdir: Path, name: str, subcommand: str, params: dict,
                    outputs: list[Path]) -> Path:
    manifest = {
        "subcommand": subcommand,
        "parameters": params,
        "tool_version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "outputs": [str(p) for p in outputs],
    }
    path = outdir / f"{name}_manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return path


def _report_for_k(args):
    k, tol = args
    return montgomery.minimize_alpha(k, tol)


def cmd_table1(args) -> int:
    ks = _parse_k_range(args.k)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    jobs = [(k, args.tol) for k in ks]
    failures = []
    reports = {}
    if _workers() > 1:
        with ProcessPoolExecutor(max_workers=_workers()) as pool:
            futures = {k: pool.submit(_report_for_k, job)
                       for k, job in zip(ks, jobs)}
        for k in ks:   # parameter order, not completion order
            try:
                reports[k] = futures[k].result()
            except SolverError as exc:
                failures.append((k, str(exc)))
                print(f"k={k}: FAILED ({exc})", file=sys.stderr)
    else:
        for k, tol in jobs:
            try:
                reports[k] = montgomery.minimize_alpha(k, tol)
            except SolverError as exc:
                failures.append((k, str(exc)))
                print(f"k={k}: FAILED ({exc})", file=sys.stderr)

    done = sorted(reports)
    print("k        " + "".join(f"{k:>10d}" for k in done))
    for label, attr in (("alpha_min", "alpha_min"), ("nu_hat", "nu_hat"),
                        ("lambda_1", "lambda1")):
        row = "".join(f"{getattr(reports[k], attr):>10.4f}" for k in done)
        print(f"{label:<9s}{row}")

    csv_path = outdir / "table1.csv"
    import csv as _csv
    with open(csv_path, "w", newline="") as fh:
        w = _csv.writer(fh)
        w.writerow(["k", "alpha_min", "nu_hat", "lambda_1", "lambda_2", "d2",
                    "d2_lower_bound", "condik_margin", "hf_residual",
                    "norm_identity_residual"])
        for k in done:
            r = reports[k]
            w.writerow([k] + [repr(v) for v in (
                r.alpha_min, r.nu_hat, r.lambda1, r.lambda2, r.d2,
                r.d2_lower_bound, r.condik_margin, r.hf_residual,
                r.norm_identity_residual)])
    json_path = outdir / "table1.json"
    with open(json_path, "w") as fh:
        json.dump({str(k): reports[k].to_json_dict() for k in done},
                  fh, indent=2, sort_keys=True)
    _write_manifest(outdir, "table1", "table1",
                    {"k": args.k, "tol": args.tol}, [csv_path, json_path])
    return 1 if failures else 0


def cmd_profile(args) -> int:
    lo, hi = _parse_range(args.range)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    table = montgomery.profile(args.k, (lo, hi), args.samples)
    if not (lo <= table.alpha_min <= hi):
        print(f"warning: range [{lo}, {hi}] does not contain "
              f"alpha_min={table.alpha_min:.4f}", file=sys.stderr)
    csv_path = outdir / f"profile_k{args.k}.csv"
    json_path = outdir / f"profile_k{args.k}.json"
    table.to_csv(csv_path)
    table.to_json(json_path)
    _write_manifest(outdir, f"profile_k{args.k}", "profile",
                    {"k": args.k, "range": args.range, "samples": args.samples},
                    [csv_path, json_path])
    return 0


def _verify_one_k(k: int, tol: float, rng_seed: int = 20240801) -> dict:
    ident = montgomery.verify_identities(k, tol)
    nondeg = montgomery.nondegeneracy_check(k)
    st = montgomery.minimizer_state(k)
    checks = {
        "stationarity_identity": ident.stationarity_residual < 1e-5,
        "norm_identity": ident.norm_residual < 1e-4,
        "condik": nondeg.condik_holds,
        "bound_consistency": nondeg.d2 >= nondeg.d2_lower_bound - 1e-3,
    }
    if k % 2 == 1:
        checks["condik_odd"] = bool(nondeg.condik_odd_holds)
        pars = parity_classify(st.spectrum)
        want = ["even", "odd", "even"]
        checks["parity"] = all(p.label == w for p, w in zip(pars, want))
    rng = np.random.default_rng(rng_seed + k)
    ok_scaling = True
    for _ in range(2):
        alpha = float(rng.uniform(-1.0, 1.5))
        beta = float(rng.uniform(0.3, 4.0))
        p = montgomery.ModelParams(k, alpha, beta)
        scaled = montgomery.lambda_m(p, 0, tol=1e-9)
        direct = montgomery.lambda_m_direct(p, 0, tol=1e-9)
        ok_scaling &= abs(scaled - direct) < 1e-8
    checks["scaling"] = ok_scaling
    return {
        "k": k,
        "checks": checks,
        "residuals": {
            "stationarity": ident.stationarity_residual,
            "norm": ident.norm_residual,
            "condik_margin": nondeg.condik_margin,
            "d2_minus_bound": nondeg.d2 - nondeg.d2_lower_bound,
        },
        "passed": all(checks.values()),
    }


def cmd_verify(args) -> int:
    ks = _parse_k_range(args.k)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    results = []
    if _workers() > 1:
        with ProcessPoolExecutor(max_workers=_workers()) as pool:
            results = list(pool.map(_verify_one_k, ks, [args.tol] * len(ks)))
    else:
        results = [_verify_one_k(k, args.tol) for k in ks]
    all_ok = True
    for res in results:
        status = "PASS" if res["passed"] else "FAIL"
        all_ok &= res["passed"]
        detail = ", ".join(f"{name}={'ok' if ok else 'FAIL'}"
                           for name, ok in res["checks"].items())
        print(f"k={res['k']}: {status}  ({detail})")
    json_path = outdir / "verify.json"
    with open(json_path, "w") as fh:
        json.dump(results, fh, indent=2, sort_keys=True)
    _write_manifest(outdir, "verify", "verify",
                    {"k": args.k, "tol": args.tol}, [json_path])
    return 0 if all_ok else 1


def cmd_miniwell(args) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    geom = miniwell.MiniwellGeometry.from_json(args.geometry)
    kop = miniwell.build_effective_operator(geom, args.k)
    kspec = miniwell.spectrum_K(kop, count=args.count)
    json_path = outdir / "miniwell_spectrum.json"
    with open(json_path, "w") as fh:
        json.dump({
            "k": args.k,
            "c_omega": kop.c_omega,
            "e_omega": kop.e_omega.tolist(),
            "Omega": kop.Omega.tolist(),
            "A_real": kop.A_const.real,
            "A_imag": kop.A_const.imag,
            "alpha_min": kop.alpha_min,
            "spectrum": kspec.to_json_dict(),
        }, fh, indent=2, sort_keys=True)
    _write_manifest(outdir, "miniwell", "miniwell",
                    {"geometry": str(args.geometry), "k": args.k,
                     "count": args.count}, [json_path])
    print(f"branch={kspec.branch} bottom={kspec.bottom:.6f}")
    return 0


def cmd_predict(args) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    h_list = _parse_float_list(args.h)
    geom = miniwell.MiniwellGeometry.from_json(args.geometry)
    kop = miniwell.build_effective_operator(geom, args.k)
    kspec = miniwell.spectrum_K(kop, count=args.count)
    if kspec.branch != "nondegenerate":
        raise SolverError("degenerate branch: supply explicit levels instead")
    forecast = asymptotics.build_forecast(
        args.k, geom.omega_min, kspec.levels, h_list, C=args.error_constant,
        c_res=args.residual_constant)
    json_path = outdir / "forecast.json"
    csv_path = outdir / "forecast.csv"
    forecast.to_json(json_path)
    forecast.to_csv(csv_path)
    _write_manifest(outdir, "predict", "predict",
                    {"geometry": str(args.geometry), "k": args.k, "h": args.h,
                     "count": args.count, "C": args.error_constant,
                     "c_res": args.residual_constant},
                    [json_path, csv_path])
    return 0


def cmd_validate2d(args) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    config = model2d.Field2DConfig.from_json(args.config)
    report = model2d.run_sweep(config, m_count=args.levels)
    json_path = outdir / "sweep2d.json"
    csv_path = outdir / "sweep2d.csv"
    report.to_json(json_path)
    report.to_csv(csv_path)
    _write_manifest(outdir, "validate2d", "validate2d",
                    {"config": str(args.config), "levels": args.levels},
                    [json_path, csv_path])
    print(f"leading exponent {report.leading_fit_exponent:.4f} "
          f"(target {float(asymptotics.leading_exponent(report.k)):.4f}); "
          f"splitting exponent {report.splitting_fit_exponent:.4f} "
          f"(target {float(asymptotics.splitting_exponent(report.k)):.4f})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="magwell", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    t1 = sub.add_parser("table1", help="band-minimum summary over a k range")
    t1.add_argument("--k", default="1..7", help="k or k range, e.g. 1..7")
    t1.add_argument("--tol", type=float, default=1e-4)
    t1.add_argument("--out", default=".")
    t1.set_defaults(func=cmd_table1)

    pr = sub.add_parser("profile", help="band profile and quadratic approximation")
    pr.add_argument("--k", type=int, required=True)
    pr.add_argument("--range", required=True, help="alpha range LO:HI")
    pr.add_argument("--samples", type=int, default=201)
    pr.add_argument("--out", default=".")
    pr.set_defaults(func=cmd_profile)

    ve = sub.add_parser("verify", help="identity and criterion suite")
    ve.add_argument("--k", default="1..7")
    ve.add_argument("--tol", type=float, default=1e-5)
    ve.add_argument("--out", default=".")
    ve.set_defaults(func=cmd_verify)

    mw = sub.add_parser("miniwell", help="K spectrum from a geometry file")
    mw.add_argument("--geometry", required=True)
    mw.add_argument("--k", type=int, default=1)
    mw.add_argument("--count", type=int, default=8)
    mw.add_argument("--out", default=".")
    mw.set_defaults(func=cmd_miniwell)

    pd = sub.add_parser("predict", help="gap forecast files")
    pd.add_argument("--geometry", required=True)
    pd.add_argument("--k", type=int, default=1)
    pd.add_argument("--h", required=True, help="h values, comma or space separated")
    pd.add_argument("--count", type=int, default=6)
    pd.add_argument("--error-constant", type=float, default=1.0)
    pd.add_argument("--residual-constant", type=float, default=1.0)
    pd.add_argument("--out", default=".")
    pd.set_defaults(func=cmd_predict)

    v2 = sub.add_parser("validate2d", help="2D sweep against predictions")
    v2.add_argument("--config", required=True)
    v2.add_argument("--levels", type=int, default=4)
    v2.add_argument("--out", default=".")
    v2.set_defaults(func=cmd_validate2d)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
