"""Command-line front end: ``urnclt {count,lambda,moments,sigma,simulate,ladder}``.

Exit codes: 0 success, 1 internal error, 2 invalid or infeasible input, 3 budget guard.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .covariance import (
    CovModel,
    build_sigma,
    check_conditions,
    closed_form_sigma12,
    closed_form_sigma123,
    diagonal_regime_sigma,
    fixed_gamma_factorization,
)
from .errors import BudgetError, InfeasibleError, NotPositiveDefiniteError
from .manifest import ExperimentManifest
from .moments import (
    asymptotic_profile,
    box_grid,
    exact_covariance,
    exact_profile,
    default_grid_total,
    moment_comparison_grid,
    moment_table,
    overall_boundedness_check,
    simplex_grid,
)
from .occupancy import AllocationParams, count_placements, log_count_table
from .simulator import (
    SamplerConfig,
    llt_acceptance,
    normality_report,
    draw,
    standardize,
)
from .tilted import lambda_capacity_note_check, llt_count_approx, solve_lambda0

log = logging.getLogger("urnclt")

LADDER_TABLE_BUDGET = 2 * 10**8


def _header_lines(config: dict) -> str:
    return (
        f"# tool=urnclt version={__version__}\n"
        f"# config={json.dumps(config, sort_keys=True, separators=(',', ':'))}\n"
    )


def _write(out_dir: Path, name: str, text: str) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    path.write_text(text, encoding="utf-8", newline="")
    return path


def _json_doc(config: dict, body: dict) -> str:
    doc = {"tool": "urnclt", "version": __version__, "config": config, **body}
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=True) + "\n"


def resolve_workers(flag: int | None) -> int:
    if flag is not None:
        return flag
    env = os.environ.get("URNCLT_WORKERS")
    if env:
        return int(env)
    return os.cpu_count() or 1


def _manifest(args) -> ExperimentManifest:
    overrides: dict = {}
    if any(getattr(args, k, None) is not None for k in ("n", "N", "C")):
        model = {"n": args.n, "N": args.N, "C": args.C}
        if None in model.values():
            raise ValueError("--n, --N and --C must be given together")
        overrides["model"] = model
    if getattr(args, "m", None):
        overrides["profile"] = [int(v) for v in args.m.split(",")]
    sampler = {}
    if getattr(args, "seed", None) is not None:
        sampler["seed"] = args.seed
    if getattr(args, "samples", None) is not None:
        sampler["samples"] = args.samples
    if sampler:
        overrides["sampler"] = sampler
    if getattr(args, "out", None):
        overrides["outputs"] = args.out
    return ExperimentManifest.load(args.config, overrides)


def _k_grid(man: ExperimentManifest, r: int, lam0: float) -> list[tuple[int, ...]]:
    spec = man.data["k_grid"]
    N = man.params.N
    if spec.get("box"):
        if len(spec["box"]) != r:
            raise ValueError(f"k_grid.box needs {r} entries")
        return box_grid(spec["box"])
    total = spec.get("max_total")
    if total is None:
        total = max(1, default_grid_total(N, lam0, float(spec.get("fraction", 0.25))))
    return simplex_grid(r, int(total))


def cmd_count(args) -> int:
    params = AllocationParams(args.n, args.N, args.C)
    exact = count_placements(params)
    print(f"exact={exact}")
    if params.interior:
        approx = llt_count_approx(params, solve_lambda0(params))
        print(f"llt_log={approx!r}")
        print(f"llt_rel_error={math.expm1(approx - math.log(exact))!r}")
    return 0


def cmd_lambda(args) -> int:
    params = AllocationParams(args.n, args.N, args.C)
    tilt = solve_lambda0(params)
    law = tilt.law
    print(f"lambda0={tilt.lambda0!r}")
    print(f"log_g={law.log_g!r}")
    print(f"mean={law.mean!r}")
    print(f"variance={law.variance!r}")
    print(f"G={law.bigG!r}")
    if (params.C - 1) * params.N < params.n:
        row = lambda_capacity_note_check([params])[0]
        print(f"inv_lambda={row.inv_lambda!r}")
        print(f"capacity_gap={row.gap!r}")
        print(f"ratio={row.ratio!r}")
    return 0


def cmd_moments(args) -> int:
    man = _manifest(args)
    params, m = man.params, man.profile
    tilt = solve_lambda0(params)
    grid = _k_grid(man, len(m), tilt.lambda0)
    config = man.resolved()
    result = moment_comparison_grid(asymptotic_profile(params, m, tilt), tilt, grid)
    table = moment_table(params, max(sum(k) for k in grid))
    report = overall_boundedness_check(
        exact_profile(params, m, table), tilt, grid, table, float(man.data["boundedness_bound"])
    )
    out = Path(man.data["outputs"])
    _write(out, "moment_grid.csv", _header_lines(config) + result.to_csv())
    body = json.loads(report.to_json())
    doc = {"lambda0": tilt.lambda0, "lambda0_at_least_1": tilt.lambda0 >= 1.0, "boundedness": body}
    _write(out, "boundedness.json", _json_doc(config, doc))
    print(f"max_rel_error={result.max_rel_error!r} at k={result.argmax()}")
    print(f"boundedness_flagged={report.flagged}")
    return 0


def _closed_form_comparison(C: int, N: int, lam: float, m: tuple[int, ...], model: CovModel) -> dict:
    body = {}
    if lam < 10:
        return body
    if m == (C - 1, C - 2) and C >= 3:
        cf = closed_form_sigma12(C, N, lam)
        body["closed_form_12"] = {
            "nu_predicted": [cf.nu1, cf.nu2],
            "nu_numeric": model.eigenvalues.tolist(),
            "nu_rel_error": [float(model.eigenvalues[0] / cf.nu1 - 1), float(model.eigenvalues[1] / cf.nu2 - 1)],
            "A_n": cf.A_n.tolist(),
            "A_n_rel_dev": float((np.abs(cf.A_n - model.invsqrt) / np.abs(model.invsqrt)).max()),
        }
    if m == (C - 1, C - 2, C - 3) and C >= 4:
        cf = closed_form_sigma123(C, N, lam)
        pred = [cf.nu1, cf.nu2, cf.nu3]
        body["closed_form_123"] = {
            "nu_predicted": pred,
            "nu_numeric": model.eigenvalues.tolist(),
            "nu_rel_error": [float(a / b - 1) for a, b in zip(model.eigenvalues, pred)],
        }
    return body


def _covariance(source: str, params: AllocationParams, m, tilt, table=None) -> tuple[CovModel, np.ndarray]:
    """Model and the mean vector that goes with it."""
    prof = asymptotic_profile(params, m, tilt)
    if source == "exact":
        if table is None:
            table = moment_table(params, 2)
        mu, cov = exact_covariance(exact_profile(params, m, table), table)
        return CovModel.from_matrix(cov, source="exact"), mu
    if source == "asymptotic":
        return build_sigma(prof, tilt), prof.mu_array()
    if source == "diagonal":
        return diagonal_regime_sigma(prof), prof.mu_array()
    C, N, lam = params.C, params.N, tilt.lambda0
    if source == "closed-form-12":
        if tuple(m) != (C - 1, C - 2):
            raise ValueError(f"closed-form-12 needs profile ({C - 1},{C - 2})")
        A = closed_form_sigma12(C, N, lam).A_n
        inv = np.linalg.inv(A)
        return CovModel.from_matrix(inv @ inv, source=source), prof.mu_array()
    if tuple(m) != (C - 1, C - 2, C - 3):
        raise ValueError(f"closed-form-123 needs profile ({C - 1},{C - 2},{C - 3})")
    return CovModel.from_matrix(closed_form_sigma123(C, N, lam).approx_sigma, source=source), prof.mu_array()


def cmd_sigma(args) -> int:
    man = _manifest(args)
    params, m = man.params, man.profile
    tilt = solve_lambda0(params)
    source = man.data["covariance_source"]
    model, mu = _covariance(source, params, m, tilt)
    cond = man.data["conditions"]
    report = check_conditions(model, mu, float(cond["c1"]), float(cond["c2"]))
    gamma = fixed_gamma_factorization(model)
    body = {
        "lambda0": tilt.lambda0,
        "lambda0_at_least_1": tilt.lambda0 >= 1.0,
        "mu": np.asarray(mu).tolist(),
        "model": model.to_dict(),
        "identity_residuals": list(model.residuals()),
        "conditions": report.to_dict(),
        "gamma": {
            "sigma": gamma.sigma_vec.tolist(),
            "Gamma": gamma.gamma.tolist(),
            "min_eigenvalue": gamma.min_eigenvalue,
            "invertible": gamma.invertible,
        },
    }
    asym = model if source == "asymptotic" else build_sigma(asymptotic_profile(params, m, tilt), tilt)
    if source != "asymptotic":
        body["asymptotic_model"] = asym.to_dict()
    body.update(_closed_form_comparison(params.C, params.N, tilt.lambda0, tuple(m), asym))
    out = Path(man.data["outputs"])
    _write(out, "sigma.json", _json_doc(man.resolved(), body))
    print(f"eigenvalues={model.eigenvalues.tolist()}")
    return 0


def cmd_simulate(args) -> int:
    man = _manifest(args)
    params, m = man.params, man.profile
    s = man.data["sampler"]
    config = SamplerConfig(
        params,
        method=s.get("method", "sequential-exact"),
        seed=int(s.get("seed", 0)),
        samples=int(s.get("samples", 1000)),
        workers=resolve_workers(args.workers),
    )
    tilt = solve_lambda0(params)
    table = log_count_table(params) if config.method == "sequential-exact" else None
    source = man.data["covariance_source"]
    model, mu = _covariance(source, params, m, tilt, table)
    batch = standardize(draw(config, m, table=table, tilt=tilt), model, mu)
    report = normality_report(batch, min_samples=min(1000, config.samples))
    if batch.attempts is not None:
        report["attempts"] = batch.attempts
        report["acceptance_rate"] = batch.acceptance_rate
        report["llt_acceptance"] = llt_acceptance(tilt)
    report["lambda0"] = tilt.lambda0
    report["mu"] = np.asarray(mu).tolist()
    config_echo = man.resolved()
    out = Path(man.data["outputs"])
    _write(out, "samples.csv", _header_lines(config_echo) + batch.to_csv())
    _write(out, "normality.json", _json_doc(config_echo, {"normality": report}))
    print(f"cov_max_dev={report['cov_max_dev']!r} ks={report['ks']}")
    return 0


def _trend(values: list[float]) -> str:
    finite = [v for v in values if v is not None and math.isfinite(v)]
    if len(finite) < 2:
        return "na"
    return "yes" if all(b < a for a, b in zip(finite, finite[1:])) else "no"


def ladder_rows(man: ExperimentManifest) -> tuple[list[str], list[list]]:
    points = man.ladder_points()
    if len(points) < 3:
        raise ValueError(f"a ladder needs at least 3 points, got {len(points)}")
    m = man.profile
    source = man.data["covariance_source"]
    if source not in ("asymptotic", "diagonal"):
        source = "asymptotic"
    cond = man.data["conditions"]
    r = len(m)
    header = ["N", "lambda_rule", "alpha", "lambda_target", "n", "lambda0"]
    header += [f"{name}_{i + 1}" for name in ("qmu", "max", "extra") for i in range(r)]
    header += ["moment_max_rel_error", "cov_deviation"]
    rows = []
    for pt in points:
        p = pt.params
        tilt = solve_lambda0(p)
        prof = asymptotic_profile(p, m, tilt)
        model = build_sigma(prof, tilt) if source == "asymptotic" else diagonal_regime_sigma(prof)
        rep = check_conditions(model, prof.mu_array(), float(cond["c1"]), float(cond["c2"]))
        row = [pt.N, pt.rule, pt.alpha, pt.lam_target, p.n, tilt.lambda0]
        row += rep.qmu.tolist() + rep.max.tolist() + rep.extra.tolist()
        if p.N * (p.n + 1) * (p.C + 1) <= LADDER_TABLE_BUDGET:
            total = max(2, default_grid_total(p.N, tilt.lambda0))
            table = moment_table(p, total)
            grid = moment_comparison_grid(prof, tilt, simplex_grid(r, total), table)
            _, cov = exact_covariance(exact_profile(p, m, table), table)
            scale = np.sqrt(np.outer(np.diag(cov), np.diag(cov)))
            row += [grid.max_rel_error, float((np.abs(model.sigma - cov) / scale).max())]
        else:
            log.info("N=%d exceeds the ladder table budget; moment columns left empty", p.N)
            row += [math.nan, math.nan]
        rows.append(row)
    return header, rows


def cmd_ladder(args) -> int:
    man = _manifest(args)
    header, rows = ladder_rows(man)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else ("" if v is None else v) for v in row])
    trend = ["decreasing", "", "", "", "", ""]
    for col in range(6, len(header)):
        trend.append(_trend([row[col] for row in rows]))
    w.writerow(trend)
    _write(Path(man.data["outputs"]), "ladder.csv", _header_lines(man.resolved()) + buf.getvalue())
    print(",".join(f"{h}={t}" for h, t in zip(header[6:], trend[6:])))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="urnclt", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"urnclt {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def model_flags(p, required: bool):
        p.add_argument("--n", type=int, required=required, help="number of balls")
        p.add_argument("--N", type=int, required=required, help="number of bins")
        p.add_argument("--C", type=int, required=required, help="bin capacity")

    for name, fn in (("count", cmd_count), ("lambda", cmd_lambda)):
        p = sub.add_parser(name)
        model_flags(p, True)
        p.set_defaults(func=fn)
    for name, fn in (("moments", cmd_moments), ("sigma", cmd_sigma), ("simulate", cmd_simulate), ("ladder", cmd_ladder)):
        p = sub.add_parser(name)
        model_flags(p, False)
        p.add_argument("--m", help="comma-separated fill levels, e.g. 2,1")
        p.add_argument("--config", help="YAML manifest")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--samples", type=int)
        p.add_argument("--workers", type=int, help="parallelism (env URNCLT_WORKERS)")
        p.set_defaults(func=fn)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except BudgetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (InfeasibleError, NotPositiveDefiniteError, ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
