"""Batch command-line front end.

Subcommands wire the pipeline: simulate -> check-stability -> train ->
mc-normality -> mvn-test, plus three end-to-end experiment presets.  All
randomness flows from one --seed through keyed sub-streams, outputs carry
no timestamps, and floats are written in shortest round-trip form, so
identical invocations produce byte-identical files.  Exit codes: 0 success,
1 validation failure, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import rng
from .asymptotics import (
    EtaSample,
    ExcessiveFailures,
    asymptotics_report,
    monte_carlo_eta,
)
from .errors import (
    CharmeLabError,
    DomainError,
    IndexOutOfRange,
    ModelMismatch,
    NonFiniteLoss,
    SampleSizeOutOfRange,
    ShapeMismatch,
    SingularBlock,
    SingularCovariance,
)
from .estimate import FitConfig, InitSpec, LossSpec, fitted_and_residuals, qn_loss, sgd_fit
from .model import (
    CharmeModel,
    model_from_json,
    model_to_json,
    validate_model,
)
from .mvn import mahalanobis_qq, normality_report
from .presets import (
    SCALES,
    build_model_experiment1,
    build_model_experiment2,
    build_model_experiment3,
    experiment1_settings,
    experiment2_settings,
    experiment3_settings,
    fit_config_from_settings,
    fresh_architecture,
)
from .simulate import Trajectory, simulate
from .stability import stability_report

SCHEMA_VERSION = 1

_VALIDATION_ERRORS = (
    ShapeMismatch,
    DomainError,
    ModelMismatch,
    IndexOutOfRange,
    SampleSizeOutOfRange,
    FileNotFoundError,
    NotADirectoryError,
    json.JSONDecodeError,
    KeyError,
    ValueError,
)
_NUMERICAL_ERRORS = (NonFiniteLoss, SingularBlock, SingularCovariance, ExcessiveFailures)


def _fmt(v) -> str:
    return repr(float(v))


def _write_csv(path: str, header: list, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _write_json(path: str, obj: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_model(path: str) -> CharmeModel:
    with open(path, "r", encoding="utf-8") as fh:
        return model_from_json(fh.read())


def _require_valid(model: CharmeModel) -> None:
    violations = validate_model(model)
    if violations:
        lines = "; ".join(f"{v.code} at {v.location}: {v.detail}" for v in violations)
        raise DomainError(f"model fails validation: {lines}")


# ---------------------------------------------------------------------------
# trajectory CSV wire format: columns t, R_t, x1..xd [, eps1..epsd]; the p
# rows with t <= 0 carry the lagged pre-window and leave R_t (and eps) empty.
# ---------------------------------------------------------------------------


def write_trajectory_csv(path: str, traj: Trajectory, with_eps: bool) -> None:
    d = traj.d
    header = ["t", "R_t"] + [f"x{i + 1}" for i in range(d)]
    if with_eps:
        header += [f"eps{i + 1}" for i in range(d)]
    rows = []
    for i in range(traj.p):
        row = [str(i + 1 - traj.p), ""] + [_fmt(v) for v in traj.pre[i]]
        if with_eps:
            row += [""] * d
        rows.append(row)
    for t in range(traj.n):
        row = [str(t + 1), str(int(traj.regimes[t]))] + [_fmt(v) for v in traj.x[t]]
        if with_eps:
            row += [_fmt(v) for v in traj.innovations[t]]
        rows.append(row)
    _write_csv(path, header, rows)


def read_trajectory_csv(path: str, p: int, d: int) -> Trajectory:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["t", "R_t"]:
            raise ValueError(f"unexpected trajectory header {header[:2]}")
        if len(header) < 2 + d:
            raise ValueError(f"trajectory file carries fewer than d = {d} state columns")
        pre_rows, rows = [], []
        for rec in reader:
            t = int(rec[0])
            x = [float(v) for v in rec[2 : 2 + d]]
            if t <= 0:
                pre_rows.append((t, x))
            else:
                rows.append((t, int(rec[1]), x))
    pre_rows.sort(key=lambda r: r[0])
    rows.sort(key=lambda r: r[0])
    if len(pre_rows) != p:
        raise ValueError(f"expected {p} lag rows (t <= 0), found {len(pre_rows)}")
    if not rows:
        raise ValueError("no observation rows (t >= 1) in trajectory file")
    return Trajectory(
        x=np.array([r[2] for r in rows]),
        pre=np.array([r[1] for r in pre_rows]),
        regimes=np.array([r[1] for r in rows], dtype=np.int64),
        innovations=None,
        seed=0,
        burn_in=0,
    )


def write_eta_csv(path: str, eta: EtaSample) -> None:
    header = [f"eta{i + 1}" for i in range(eta.dim)]
    _write_csv(path, header, ([_fmt(v) for v in row] for row in eta.eta))


def read_matrix_csv(path: str) -> np.ndarray:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        data = [[float(v) for v in rec] for rec in reader]
    if not data:
        raise ValueError(f"no data rows in {path}")
    return np.array(data)


def _loss_from_args(args) -> LossSpec:
    if args.loss == "quadratic":
        return LossSpec.quadratic()
    return LossSpec.normalized_power(args.gamma)


def _fit_config_from_args(args) -> FitConfig:
    init = InitSpec.uniform(args.init_delta) if args.init == "uniform" else InitSpec.provided()
    return FitConfig(
        epochs=args.epochs,
        batch_size=args.batch,
        lr0=args.lr0,
        decay=args.decay,
        seed=args.seed,
        lipschitz_cap=args.cap,
        init=init,
    )


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    model = _load_model(args.model)
    traj = simulate(model, args.n, burn_in=args.burn_in, seed=args.seed)
    write_trajectory_csv(args.out, traj, with_eps=args.with_eps)
    if traj.overflow_at is not None:
        print(
            f"numerical failure: state became non-finite at t = {traj.overflow_at}; "
            f"wrote {traj.n} finite rows",
            file=sys.stderr,
        )
        return 2
    print(f"wrote {traj.n} rows (+{traj.p} lag rows) to {args.out}")
    return 0


def cmd_check_stability(args) -> int:
    model = _load_model(args.model)
    report = stability_report(model, m_values=args.m, r_max=args.r_max)
    _write_json(args.out, report.to_obj())
    tau_csv = args.tau_csv or os.path.join(os.path.dirname(args.out) or ".", "tau_curve.csv")
    _write_csv(tau_csv, ["r", "bound"], ([str(r), _fmt(v)] for r, v in report.tau_curve))
    verdict = "certified stationary" if report.certified_stationary else "NOT certified"
    print(f"c = {report.c:.6f} ({verdict}); report -> {args.out}; curve -> {tau_csv}")
    return 0


def cmd_train(args) -> int:
    model = _load_model(args.model_init)
    _require_valid(model)
    data = read_trajectory_csv(args.data, p=model.p, d=model.d)
    loss = _loss_from_args(args)
    cfg = _fit_config_from_args(args)
    fit = sgd_fit(model, data, loss, cfg)
    os.makedirs(args.out_dir, exist_ok=True)
    model_path = os.path.join(args.out_dir, "model.json")
    with open(model_path, "w", encoding="utf-8") as fh:
        fh.write(model_to_json(fit.model))
        fh.write("\n")
    _, resid = fitted_and_residuals(fit.model, data)
    _write_csv(
        os.path.join(args.out_dir, "residuals.csv"),
        ["t"] + [f"eps_hat{i + 1}" for i in range(model.d)],
        ([str(t + 1)] + [_fmt(v) for v in resid[t]] for t in range(resid.shape[0])),
    )
    _write_csv(
        os.path.join(args.out_dir, "trace.csv"),
        ["epoch", "qn_loss"],
        ([str(e + 1), _fmt(v)] for e, v in enumerate(fit.loss_trace)),
    )
    print(f"final loss {fit.final_loss!r} after {fit.iterations} updates -> {args.out_dir}")
    return 0


def cmd_mc_normality(args) -> int:
    model = _load_model(args.model)
    _require_valid(model)
    cfg = _fit_config_from_args(args)
    eta = monte_carlo_eta(
        model,
        N=args.N,
        n=args.n,
        fit_cfg=cfg,
        master_seed=args.seed,
        burn_in=args.burn_in,
        jitter=args.jitter,
        workers=args.workers,
    )
    write_eta_csv(args.out, eta)
    asym_n = args.asym_n or args.n
    asym_traj = simulate(
        model, asym_n, burn_in=args.burn_in, seed=rng.derive_seed(args.seed, "vw")
    )
    report = asymptotics_report(model, asym_traj)
    asym_out = args.asym_out or os.path.join(
        os.path.dirname(args.out) or ".", "asymptotics.json"
    )
    _write_json(asym_out, report.to_obj())
    print(
        f"kept {eta.N} of {args.N} replicates (dim {eta.dim}) -> {args.out}; "
        f"plug-in matrices (n = {asym_traj.n}) -> {asym_out}"
    )
    return 0


def _parse_subset(text: str | None) -> list | None:
    if text is None:
        return None
    return [int(tok) for tok in text.replace(" ", "").split(",") if tok]


def cmd_mvn_test(args) -> int:
    mat = read_matrix_csv(args.eta)
    subset = _parse_subset(args.subset)
    report = normality_report(mat, subset)
    _write_json(args.out, report.to_obj())
    sub = mat[:, [i - 1 for i in report.subset]]
    qq = mahalanobis_qq(sub)
    qq_csv = args.qq_csv or os.path.join(os.path.dirname(args.out) or ".", "qq.csv")
    _write_csv(
        qq_csv,
        ["chi2_q", "d2"],
        ([_fmt(a), _fmt(b)] for a, b in zip(qq.chi2_quantiles, qq.d2_sorted)),
    )
    print(
        "p-values: mardia-skew {:.4f}, mardia-kurt {:.4f}, hz {:.4f}, royston {:.4f}".format(
            report.mardia_skewness.p_value,
            report.mardia_kurtosis.p_value,
            report.henze_zirkler.p_value,
            report.royston.p_value,
        )
    )
    return 0


# ---------------------------------------------------------------------------
# experiment presets
# ---------------------------------------------------------------------------


def _load_experiment_config(path: str | None, settings: dict) -> dict:
    """Merge a config document into preset settings; checks schema and files."""
    if path is None:
        return settings
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValueError(f"unrecognized schema_version {version!r} (expected {SCHEMA_VERSION})")
    for ref_key in ("model",):
        if ref_key in doc and not os.path.exists(doc[ref_key]):
            raise FileNotFoundError(f"config references missing file {doc[ref_key]!r}")
    overrides = doc.get("overrides", {})
    unknown = set(overrides) - set(settings)
    if unknown:
        raise ValueError(f"unknown override keys: {sorted(unknown)}")
    merged = dict(settings)
    merged.update(overrides)
    if "model" in doc:
        merged["model"] = doc["model"]
    return merged


def _residual_summary(resid: np.ndarray) -> dict:
    return {
        "residual_mean": [float(v) for v in resid.mean(axis=0)],
        "residual_variance": [float(v) for v in resid.var(axis=0, ddof=1)],
    }


def _run_recovery_experiment(name, model0, train_model, settings, args) -> int:
    os.makedirs(args.out, exist_ok=True)
    report = stability_report(model0, m_values=(1.0,))
    traj = simulate(
        model0, settings["n"], burn_in=settings["burn_in"], seed=rng.derive_seed(args.seed, "sim")
    )
    if traj.overflow_at is not None:
        raise NonFiniteLoss(f"simulation overflowed at t = {traj.overflow_at}")
    cfg = fit_config_from_settings(settings, seed=rng.derive_seed(args.seed, "train"))
    fit = sgd_fit(train_model, traj, LossSpec.quadratic(), cfg)
    _, resid = fitted_and_residuals(fit.model, traj)

    with open(os.path.join(args.out, "model0.json"), "w", encoding="utf-8") as fh:
        fh.write(model_to_json(model0))
        fh.write("\n")
    with open(os.path.join(args.out, "model.json"), "w", encoding="utf-8") as fh:
        fh.write(model_to_json(fit.model))
        fh.write("\n")
    write_trajectory_csv(os.path.join(args.out, "data.csv"), traj, with_eps=False)
    _write_csv(
        os.path.join(args.out, "residuals.csv"),
        ["t"] + [f"eps_hat{i + 1}" for i in range(model0.d)],
        ([str(t + 1)] + [_fmt(v) for v in resid[t]] for t in range(resid.shape[0])),
    )
    _write_csv(
        os.path.join(args.out, "trace.csv"),
        ["epoch", "qn_loss"],
        ([str(e + 1), _fmt(v)] for e, v in enumerate(fit.loss_trace)),
    )
    summary = {
        "schema_version": SCHEMA_VERSION,
        "experiment": name,
        "scale": args.scale,
        "seed": args.seed,
        "n": settings["n"],
        "c_certified": report.c,
        "certified_stationary": report.certified_stationary,
        "final_loss": fit.final_loss,
        "iterations": fit.iterations,
        **_residual_summary(resid),
    }
    _write_json(os.path.join(args.out, "summary.json"), summary)
    print(
        f"{name}: residual mean {summary['residual_mean'][0]:+.4f}, "
        f"variance {summary['residual_variance'][0]:.4f} -> {args.out}"
    )
    return 0


def cmd_experiment1(args) -> int:
    settings = _load_experiment_config(args.config, experiment1_settings(args.scale))
    model0 = (
        _load_model(settings["model"])
        if "model" in settings
        else build_model_experiment1(rng.derive_seed(args.seed, "model"))
    )
    train_model = fresh_architecture(model0)
    return _run_recovery_experiment("experiment1", model0, train_model, settings, args)


def cmd_experiment2(args) -> int:
    settings = _load_experiment_config(args.config, experiment2_settings(args.scale))
    model0 = _load_model(settings["model"]) if "model" in settings else build_model_experiment2()
    train_model = fresh_architecture(model0, widths_list=settings["train_widths"])
    return _run_recovery_experiment("experiment2", model0, train_model, settings, args)


def cmd_experiment3(args) -> int:
    settings = _load_experiment_config(args.config, experiment3_settings(args.scale))
    os.makedirs(args.out, exist_ok=True)
    model0 = (
        _load_model(settings["model"])
        if "model" in settings
        else build_model_experiment3(rng.derive_seed(args.seed, "model"))
    )
    report = stability_report(model0, m_values=(1.0, 2.0))
    cfg = fit_config_from_settings(settings, seed=0)  # per-replicate seeds derived inside
    eta = monte_carlo_eta(
        model0,
        N=settings["N"],
        n=settings["n"],
        fit_cfg=cfg,
        master_seed=rng.derive_seed(args.seed, "mc"),
        burn_in=settings["burn_in"],
        workers=args.workers,
    )
    write_eta_csv(os.path.join(args.out, "eta.csv"), eta)

    asym_traj = simulate(
        model0,
        settings["asym_n"],
        burn_in=settings["burn_in"],
        seed=rng.derive_seed(args.seed, "vw"),
    )
    asym = asymptotics_report(model0, asym_traj)
    _write_json(os.path.join(args.out, "asymptotics.json"), asym.to_obj())

    subset = list(range(1, min(settings["subset_size"], eta.dim) + 1))
    normality = normality_report(eta, subset)
    _write_json(os.path.join(args.out, "report.json"), normality.to_obj())
    qq = mahalanobis_qq(eta.eta[:, [i - 1 for i in subset]])
    _write_csv(
        os.path.join(args.out, "qq.csv"),
        ["chi2_q", "d2"],
        ([_fmt(a), _fmt(b)] for a, b in zip(qq.chi2_quantiles, qq.d2_sorted)),
    )
    with open(os.path.join(args.out, "model0.json"), "w", encoding="utf-8") as fh:
        fh.write(model_to_json(model0))
        fh.write("\n")
    summary = {
        "schema_version": SCHEMA_VERSION,
        "experiment": "experiment3",
        "scale": args.scale,
        "seed": args.seed,
        "n": settings["n"],
        "N": settings["N"],
        "kept_replicates": eta.N,
        "failed_replicates": eta.failed_replicates,
        "c_certified": report.c,
        "certified_stationary": report.certified_stationary,
        "subset": subset,
        "p_values": {
            "mardia_skewness": normality.mardia_skewness.p_value,
            "mardia_kurtosis": normality.mardia_kurtosis.p_value,
            "henze_zirkler": normality.henze_zirkler.p_value,
            "royston": normality.royston.p_value,
        },
        "qq_slope": qq.slope(),
    }
    _write_json(os.path.join(args.out, "summary.json"), summary)
    print(
        "experiment3: p-values mardia-skew {:.4f}, mardia-kurt {:.4f}, hz {:.4f}, "
        "royston {:.4f}; qq slope {:.3f} -> {}".format(
            summary["p_values"]["mardia_skewness"],
            summary["p_values"]["mardia_kurtosis"],
            summary["p_values"]["henze_zirkler"],
            summary["p_values"]["royston"],
            summary["qq_slope"],
            args.out,
        )
    )
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_fit_flags(sp) -> None:
    sp.add_argument("--epochs", type=int, default=10)
    sp.add_argument("--batch", type=int, default=64)
    sp.add_argument("--lr0", type=float, default=0.01)
    sp.add_argument("--decay", type=float, default=0.0)
    sp.add_argument("--cap", type=float, default=None, help="layer-product Lipschitz cap")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--init", choices=("uniform", "provided"), default="uniform")
    sp.add_argument("--init-delta", type=float, default=0.05)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="charme-lab",
        description="Simulate, certify, train, and test regime-switching network mixtures.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="generate a trajectory CSV")
    sp.add_argument("--model", required=True)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--burn-in", type=int, default=None)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.add_argument("--with-eps", action="store_true", help="include innovation columns")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("check-stability", help="emit the stability certificate")
    sp.add_argument("--model", required=True)
    sp.add_argument("--m", type=float, nargs="+", default=[1.0, 2.0])
    sp.add_argument("--r-max", type=int, default=None)
    sp.add_argument("--out", required=True)
    sp.add_argument("--tau-csv", default=None)
    sp.set_defaults(func=cmd_check_stability)

    sp = sub.add_parser("train", help="fit expert networks to a trajectory")
    sp.add_argument("--data", required=True)
    sp.add_argument("--model-init", required=True)
    sp.add_argument("--loss", choices=("quadratic", "normpow"), default="quadratic")
    sp.add_argument("--gamma", type=float, default=2.0)
    _add_fit_flags(sp)
    sp.add_argument("--out-dir", required=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("mc-normality", help="Monte Carlo scaled-error sample + plug-in matrices")
    sp.add_argument("--model", required=True)
    sp.add_argument("--N", type=int, required=True)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--burn-in", type=int, default=None)
    _add_fit_flags(sp)
    sp.add_argument("--jitter", type=float, default=0.01)
    sp.add_argument("--workers", type=int, default=None)
    sp.add_argument("--asym-n", type=int, default=None)
    sp.add_argument("--out", required=True, help="eta CSV path")
    sp.add_argument("--asym-out", default=None)
    sp.set_defaults(func=cmd_mc_normality)

    sp = sub.add_parser("mvn-test", help="multivariate normality diagnostics on an eta CSV")
    sp.add_argument("--eta", required=True)
    sp.add_argument("--subset", default=None, help="1-based coordinates, e.g. 1,5,9")
    sp.add_argument("--out", required=True)
    sp.add_argument("--qq-csv", default=None)
    sp.set_defaults(func=cmd_mvn_test)

    for name, func in (
        ("experiment1", cmd_experiment1),
        ("experiment2", cmd_experiment2),
        ("experiment3", cmd_experiment3),
    ):
        sp = sub.add_parser(name, help=f"run the {name} preset end to end")
        sp.add_argument("--scale", choices=SCALES, default="small")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", required=True)
        sp.add_argument("--config", default=None, help="JSON config document with overrides")
        if name == "experiment3":
            sp.add_argument("--workers", type=int, default=None)
        sp.set_defaults(func=func)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except CharmeLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


run = main
