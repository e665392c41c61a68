"""Command-line entry point: ``ptfh {fit,predict,mse,simulate,diagnose}``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
Failures print a JSON object to stderr.  Outputs depend only on the
inputs, the flags and the seed, never on ``--threads``.
"""

from __future__ import annotations

import argparse
import json
import sys
from contextlib import ExitStack
from importlib import resources
from pathlib import Path

import numpy as np

from . import estimation, simulation
from .data import AreaData
from .diagnostics import (
    curve_samples,
    fit_models,
    ks_normal_test,
    lambda_bootstrap_ci,
    marginal_aic,
    standardized_residuals,
)
from .errors import DataError, PTFHError
from .estimation import FitResult, loglik_normalized, transformed
from .io import manifest, parse_dataset, write_csv, write_json
from .mse_bootstrap import CORRECTIONS, MseSettings, bootstrap_mse
from .prediction import DEFAULT_QUAD_ORDER, predict
from .rng import default_seed

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(message)


def _common(p: argparse.ArgumentParser, boot_default: int | None = None) -> None:
    p.add_argument("--data", help="input CSV (default: bundled 47-area fixture)")
    p.add_argument("--out", default="ptfh-out", help="output directory")
    p.add_argument("--seed", type=int, default=None,
                   help="random seed (default: $PTFH_SEED or a fixed constant)")
    p.add_argument("--threads", type=int, default=1, help="worker processes")
    p.add_argument("--model", choices=estimation.MODELS, default="ptfh")
    p.add_argument("--lambda-max", type=float, default=estimation.DEFAULT_LAMBDA_MAX)
    p.add_argument("--quad-order", type=int, default=DEFAULT_QUAD_ORDER)
    if boot_default is not None:
        p.add_argument("--boot", type=int, default=boot_default, help="bootstrap replicates B")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ptfh", description="Transformed Fay-Herriot small-area estimation.")
    sub = parser.add_subparsers(dest="command", required=True)

    _common(sub.add_parser("fit", help="fit a model and write its summary"))
    _common(sub.add_parser("predict", help="per-area predictions"))

    mse = sub.add_parser("mse", help="predictions with bootstrap MSE estimates")
    _common(mse, boot_default=100)
    mse.add_argument("--mc-samples", type=int, default=10000, help="Monte Carlo draws S for g1")
    mse.add_argument("--correction", choices=CORRECTIONS, default="additive")
    mse.add_argument("--clamp-negative", action="store_true",
                     help="replace negative MSE estimates by g2*")

    sim = sub.add_parser("simulate", help="run a simulation study")
    _common(sim, boot_default=100)
    sim.add_argument("--study", choices=("pred", "mse"), required=True)
    sim.add_argument("--scale", choices=tuple(simulation.SCALES), default="desk")
    sim.add_argument("--pattern", choices=tuple(simulation.D_PATTERNS), default="a")
    sim.add_argument("--lam", type=float, default=None,
                     help="true lambda (default 1.0 for pred, 0.2 for mse)")
    sim.add_argument("--effect", choices=simulation.EFFECT_DISTS, default="normal")
    sim.add_argument("--d-mode", choices=("known", "estimated"), default="known",
                     help="mse study: known D or D estimated from replicates")
    sim.add_argument("--mc-samples", type=int, default=10000)
    sim.add_argument("--correction", choices=CORRECTIONS, default="additive")
    sim.add_argument("--reps", type=int, default=None,
                     help="override R (pred) or R2 (mse) from --scale")
    sim.add_argument("--truth-reps", type=int, default=None, help="override R1 (mse)")

    diag = sub.add_parser("diagnose", help="residual checks, AIC, lambda interval, spline curves")
    _common(diag, boot_default=1000)
    diag.add_argument("--level", type=float, default=0.95)
    return parser


def _fixture():
    return resources.files("ptfh") / "fixtures" / "fixture.csv"


def _fit_row(data: AreaData, res: FitResult) -> dict:
    p = res.params
    row = {"model": res.model, "m": data.m, "lambda": p.lam, "A": p.A}
    row.update({f"beta{j}": b for j, b in enumerate(p.beta)})
    row.update({
        "loglik": res.loglik,
        "loglik_normalized": loglik_normalized(data, p, res.d_used, res.model),
        "aic": marginal_aic(data, res),
        "n_params": res.n_params,
        "lambda_max": res.lambda_max,
        "iterations": res.convergence.get("iterations", 0),
        "tol_met": res.convergence.get("tol_met", True),
        "a_boundary": res.convergence.get("a_boundary", False),
        "lambda_boundary": res.convergence.get("lambda_boundary") or "",
    })
    return row


def _prediction_rows(data: AreaData, res: FitResult, quad_order: int) -> list[dict]:
    rows = []
    for i, pr in enumerate(predict(data, res, quad_order)):
        rows.append({"area_id": pr.area_id, "y": data.y[i], "D": res.d_used[i],
                     "theta_hat": pr.theta_hat, "gamma": pr.gamma, "sigma2": pr.sigma2,
                     "mu_hat": pr.mu_hat, "mu_naive": pr.mu_naive})
    return rows


def _config(args, *skip: str) -> dict:
    drop = {"command", "out", "threads", "data", "seed", *skip}
    return {k: v for k, v in sorted(vars(args).items()) if k not in drop}


def _run_fit(args, data: AreaData) -> tuple[dict, dict]:
    res = estimation.fit(data, lambda_max=args.lambda_max, model=args.model)
    files = {"fit_summary.csv": [_fit_row(data, res)],
             "profile.csv": [{"lambda": lam, "profile_loglik": ll} for lam, ll in res.profile]}
    if args.command == "predict":
        files["predictions.csv"] = _prediction_rows(data, res, args.quad_order)
    return files, {}


def _run_mse(args, data: AreaData) -> tuple[dict, dict]:
    res = estimation.fit(data, lambda_max=args.lambda_max, model=args.model)
    settings = MseSettings(B=args.boot, S=args.mc_samples, seed=args.seed,
                           correction=args.correction, clamp_negative=args.clamp_negative,
                           quad_order=args.quad_order)
    known = data if data.D is not None else data.with_D(res.d_used)
    rep = bootstrap_mse(known, res, settings, threads=args.threads)
    rows = _prediction_rows(data, res, args.quad_order)
    for i, row in enumerate(rows):
        row.update({
            "g1_plugin": rep.g1_plugin[i], "g1_plugin_se": rep.g1_plugin_se[i],
            "g1_boot_mean": rep.g1_boot_mean[i], "g1_corrected": rep.g1_corrected[i],
            "g2_star": rep.g2_star[i], "mse_raw": rep.mse_raw[i], "mse": rep.mse_total[i],
            "clamped": bool(rep.mse_clamped_flag[i]), "rmse": rep.rmse[i],
        })
    files = {"fit_summary.csv": [_fit_row(data, res)], "predictions.csv": rows}
    return files, {"bootstrap": {"failed_refits": rep.n_failed, "valid": rep.valid}}


def _run_simulate(args, data) -> tuple[dict, dict]:
    scale = simulation.SCALES[args.scale]
    if args.study == "pred":
        cfg = simulation.PredStudyConfig(
            lam=1.0 if args.lam is None else args.lam, effect_dist=args.effect,
            R=args.reps or scale["R"], seed=args.seed, lambda_max=args.lambda_max,
            quad_order=args.quad_order)
        res = simulation.run_pred_study(cfg, threads=args.threads)
        files = {"table.csv": res.table(), "errors.csv": res.error_rows()}
        extra = {"failures": res.failures}
    else:
        cfg = simulation.MseStudyConfig(
            lam=0.2 if args.lam is None else args.lam, pattern=args.pattern,
            R1=args.truth_reps or scale["R1"], R2=args.reps or scale["R2"], B=args.boot,
            S=args.mc_samples, known_D=args.d_mode == "known", correction=args.correction,
            seed=args.seed, lambda_max=args.lambda_max, quad_order=args.quad_order)
        res = simulation.run_mse_study(cfg, threads=args.threads)
        area = [{"area": i + 1, "D": cfg.D[i], "true_mse": res.true_mse[i], "rb": res.rb[i],
                 "cv": res.cv[i], "rb_naive": res.rb_naive[i], "cv_naive": res.cv_naive[i]}
                for i in range(cfg.m)]
        est = [{"replicate": r, "area": i + 1, "mse": res.estimates[r, i],
                "mse_naive": res.naive[r, i]}
               for r in range(cfg.R2)
               for i in range(cfg.m)]
        files = {"table.csv": res.table(), "areas.csv": area, "estimates.csv": est}
        extra = {"failures": res.failures}
    return files, {"study": simulation.config_dict(cfg), **extra}


def _run_diagnose(args, data: AreaData) -> tuple[dict, dict]:
    fits = fit_models(data, args.lambda_max)
    ci = lambda_bootstrap_ci(data, fits["ptfh"], B=args.boot, level=args.level,
                             seed=args.seed, threads=args.threads)
    summary, resid = [], {}
    for name, res in fits.items():
        e = standardized_residuals(data, res)
        resid[name] = e
        ks = ks_normal_test(e)
        summary.append({"model": name, "lambda": res.params.lam, "A": res.params.A,
                        "loglik_normalized": loglik_normalized(data, res.params, res.d_used,
                                                               res.model),
                        "n_params": res.n_params, "aic": marginal_aic(data, res),
                        "ks_statistic": ks.statistic, "ks_p_value": ks.p_value})
    files = {
        "model_summary.csv": summary,
        "residuals.csv": [{"area_id": a, **{f"e_{k}": v[i] for k, v in resid.items()}}
                          for i, a in enumerate(data.area_id)],
        "lambda_interval.csv": [{"lambda_hat": fits["ptfh"].params.lam, "lo": ci.lo,
                                 "hi": ci.hi, "level": ci.level, "B": args.boot,
                                 "failed_refits": ci.n_failed, "valid": ci.valid}],
    }
    if data.p == 2:
        ptfh = fits["ptfh"]
        z = transformed(data.y, ptfh.params.lam)
        files["curves.csv"] = curve_samples(z, data.X[:, 1], ptfh.d_used,
                                            tuple(ptfh.params.beta))
    return files, {}


RUNNERS = {"fit": _run_fit, "predict": _run_fit, "mse": _run_mse,
           "simulate": _run_simulate, "diagnose": _run_diagnose}


def run(args: argparse.Namespace) -> None:
    if args.threads < 1:
        raise UsageError("--threads must be >= 1")
    if args.seed is None:
        args.seed = default_seed()
    if args.seed < 0:
        raise UsageError("--seed must be >= 0")
    with ExitStack() as stack:
        inputs = {}
        data = None
        if args.command != "simulate":
            path = Path(args.data) if args.data else stack.enter_context(
                resources.as_file(_fixture()))
            data = parse_dataset(path)
            inputs["data"] = path
        files, extra = RUNNERS[args.command](args, data)
        info = manifest(args.command, _config(args), args.seed, inputs,
                        {**extra, "outputs": sorted(files)})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, rows in files.items():
        write_csv(out / name, rows)
    write_json(out / "manifest.json", info)


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": {"type": kind, "message": message, "exit_code": code}}),
          file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        run(args)
    except UsageError as exc:
        return _fail("UsageError", str(exc), EXIT_USAGE)
    except (DataError, OSError) as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_DATA)
    except (PTFHError, ArithmeticError, np.linalg.LinAlgError) as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_NUMERIC)
    except ValueError as exc:
        return _fail("UsageError", str(exc), EXIT_USAGE)
    return 0


if __name__ == "__main__":
    sys.exit(main())
