"""Command line interface.

    namformer simulate   --config run.yaml --out data.csv
    namformer train      --config run.yaml --data data.csv --out model.json
    namformer eval       --model model.json --data data.csv
    namformer shapes     --model model.json --out shapes/ [--grid-size 200]
    namformer probe      --model model.json --data data.csv --stage uncontextualized
    namformer boundcheck --model model.json --data data.csv [--truth data_sim.json] [--p 0.1]
    namformer gradcheck

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd

from . import evaluation as ev
from .encoding import FeatureSpec, fit_encoders
from .model import extract_shape_function
from .persistence import ConfigError, ModelArtifact, RunConfig
from .simulation import SimConfig, config_dict, generate
from .training import TrainingDiverged, gradient_check, toy_problem, train, validation_split

log = logging.getLogger("namformer")


class UsageError(Exception):
    pass


# -- helpers ----------------------------------------------------------------


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config)
    if args.seed is not None:
        cfg.simulation = replace(cfg.simulation, seed=args.seed)
        cfg.train = replace(cfg.train, seed=args.seed)
    return cfg


def _read_csv(path) -> pd.DataFrame:
    try:
        return pd.read_csv(path, encoding="utf-8", float_precision="round_trip")
    except FileNotFoundError:
        raise UsageError(f"data file not found: {path}") from None
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise UsageError(f"cannot parse {path}: {exc}") from None


def _load_artifact(path) -> ModelArtifact:
    try:
        return ModelArtifact.load(path)
    except FileNotFoundError:
        raise UsageError(f"model file not found: {path}") from None


def _stem(path) -> Path:
    p = Path(path)
    return p.with_suffix("") if p.suffix else p


def infer_specs(frame: pd.DataFrame, target: str, default_encoding: str) -> list:
    specs = []
    for col in frame.columns:
        if col == target:
            continue
        kind = "numeric" if pd.api.types.is_numeric_dtype(frame[col]) else "categorical"
        specs.append(FeatureSpec(col, kind, default_encoding if kind == "numeric" else None))
    return specs


def resolve_specs(cfg: RunConfig, frame: pd.DataFrame) -> list:
    if cfg.features is None:
        return infer_specs(frame, cfg.target, cfg.default_encoding)
    try:
        return [FeatureSpec(f["name"], f["kind"], f.get("encoding")) for f in cfg.features]
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"invalid features entry: {exc}") from None


def check_frame(frame: pd.DataFrame, specs, target: str | None):
    """Schema checks with diagnostics naming the offending column and row."""
    if target is not None and target not in frame.columns:
        raise UsageError(f"target column {target!r} not found in data (columns: {list(frame.columns)})")
    for spec in specs:
        if spec.name not in frame.columns:
            raise UsageError(f"feature column {spec.name!r} not found in data")
        if spec.kind == "numeric":
            values = pd.to_numeric(frame[spec.name], errors="coerce")
            bad = np.flatnonzero(values.isna().to_numpy())
            if bad.size:
                row = int(bad[0])
                raise UsageError(f"non-numeric value {frame[spec.name].iloc[row]!r} in column "
                                 f"{spec.name!r}, row {row + 1}")
    if target is not None:
        values = pd.to_numeric(frame[target], errors="coerce")
        bad = np.flatnonzero(values.isna().to_numpy())
        if bad.size:
            raise UsageError(f"non-numeric value in target column {target!r}, row {int(bad[0]) + 1}")


def _print(obj):
    print(json.dumps(obj, indent=2, sort_keys=True))


# -- commands ---------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    sim = generate(cfg.simulation)
    out = Path(args.out or "simulated.csv")
    sim.frame.to_csv(out, index=False, float_format="%.17g")
    stem = _stem(out)
    truth_path = stem.with_name(stem.name + "_truth.csv")
    sim.truth().to_csv(truth_path, index=False, float_format="%.17g")
    meta_path = stem.with_name(stem.name + "_sim.json")
    meta_path.write_text(json.dumps({"simulation": config_dict(cfg.simulation)}, indent=2, sort_keys=True))
    print(f"wrote {len(sim.frame)} rows to {out}; ground truth in {truth_path}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    frame = _read_csv(args.data)
    specs = resolve_specs(cfg, frame)
    check_frame(frame, specs, cfg.target)
    task = cfg.model.task
    loss = "logloss" if task == "binary" else "mse"
    train_cfg = replace(cfg.train, loss=loss)
    if task == "binary" and not np.isin(frame[cfg.target].to_numpy(), (0, 1)).all():
        raise UsageError(f"binary task needs 0/1 labels in target column {cfg.target!r}")
    rows, _ = validation_split(len(frame), train_cfg)
    fit_frame = frame.iloc[rows]
    encoders = fit_encoders(fit_frame, specs, cfg.target, cfg.bins)
    model, hist = train(frame, cfg.target, encoders, train_cfg, cfg.model)
    ranges = {s.name: (float(fit_frame[s.name].min()), float(fit_frame[s.name].max()))
              for s in specs if s.kind == "numeric"}
    art = ModelArtifact(model, encoders, train_cfg.seed, ranges, cfg.target)
    out = Path(args.out or "model.json")
    digest = art.save(out)
    stem = _stem(out)
    hist_path = stem.with_name(stem.name + "_history.csv")
    hist.to_frame().to_csv(hist_path, index=False, float_format="%.17g")
    best = hist.val_loss[hist.best_epoch - 1]
    print(f"best epoch {hist.best_epoch}: validation {loss} {best:.6g}")
    print(f"wrote model to {out} (sha256 {digest[:12]}); history in {hist_path}")
    return 0


def cmd_eval(args) -> int:
    art = _load_artifact(args.model)
    frame = _read_csv(args.data)
    specs = [f.spec for f in art.encoders.features]
    check_frame(frame, specs, art.target)
    y = frame[art.target].to_numpy(dtype=np.float64)
    eta, _ = art.model.predict(art.encoders.transform(frame))
    if art.model.config.task == "binary":
        if not np.isin(y, (0.0, 1.0)).all():
            raise UsageError("classification model needs 0/1 labels in the target column")
        prob = 1.0 / (1.0 + np.exp(-eta))
        metrics = {"auc": ev.auc(eta, y), "accuracy": ev.accuracy(prob, y)}
    else:
        metrics = {"mse": ev.mse(eta, y), "target_variance": float(np.var(y))}
    metrics["n_rows"] = int(len(y))
    _print(metrics)
    if args.out:
        Path(args.out).write_text(json.dumps(metrics, indent=2, sort_keys=True))
    return 0


def cmd_shapes(args) -> int:
    art = _load_artifact(args.model)
    if args.grid_size < 2:
        raise UsageError("--grid-size must be >= 2")
    out = Path(args.out or "shapes")
    out.mkdir(parents=True, exist_ok=True)
    for j, enc in enumerate(art.encoders.features):
        name = enc.spec.name
        if enc.spec.kind == "numeric":
            lo, hi = art.feature_ranges.get(name, (0.0, 1.0))
            grid = np.linspace(lo, hi, args.grid_size)
        else:
            grid = np.array(sorted(enc.vocabulary, key=enc.vocabulary.get), dtype=object)
        table = extract_shape_function(art.model, enc, j, grid)
        table.to_csv(out / f"{name}.csv", index=False, float_format="%.17g")
    print(f"wrote {len(art.encoders.features)} shape tables to {out}")
    return 0


def cmd_probe(args) -> int:
    art = _load_artifact(args.model)
    frame = _read_csv(args.data)
    check_frame(frame, [f.spec for f in art.encoders.features], None)
    seed = 0 if args.seed is None else args.seed
    rep = ev.identifiability_probe(art.model, art.encoders, frame, args.stage, seed=seed)
    table = rep.to_frame()
    print(table.to_string(index=False))
    print(f"mean R2 ({args.stage}): {rep.mean:.4f}")
    if args.out:
        table.to_csv(args.out, index=False, float_format="%.17g")
    return 0


def binned_conditional_mean(frame: pd.DataFrame, target: str, n_bins: int = 50):
    """E[y | x_k] estimated by averaging y within equal-width bins of x_k
    (numeric) or within each level (categorical)."""
    y = frame[target].to_numpy(dtype=np.float64)

    def cond(name, values):
        x = frame[name].to_numpy()
        if not pd.api.types.is_numeric_dtype(frame[name]):
            means = pd.Series(y).groupby(x).mean()
            return np.array([means[v] for v in values])
        x = x.astype(np.float64)
        edges = np.linspace(x.min(), x.max(), n_bins + 1)
        idx = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, n_bins - 1)
        sums = np.bincount(idx, weights=y, minlength=n_bins)
        counts = np.bincount(idx, minlength=n_bins)
        means = np.where(counts > 0, sums / np.maximum(counts, 1), y.mean())
        q = np.clip(np.searchsorted(edges, np.asarray(values, dtype=np.float64), side="right") - 1, 0, n_bins - 1)
        return means[q]

    return cond


def cmd_boundcheck(args) -> int:
    art = _load_artifact(args.model)
    if art.model.config.task != "regression":
        raise UsageError("the bound check applies to regression (MSE) models only; this model is binary")
    p = art.model.config.feature_dropout if args.p is None else args.p
    if not 0.0 < p <= 1.0:
        raise UsageError(f"--p must lie in (0, 1], got {p}")
    if args.samples < 2:
        raise UsageError("--samples must be >= 2")
    frame = _read_csv(args.data)
    check_frame(frame, [f.spec for f in art.encoders.features], art.target)
    if args.truth:
        try:
            doc = json.loads(Path(args.truth).read_text())
            sim_cfg = SimConfig(**doc["simulation"])
        except (OSError, KeyError, TypeError, ValueError) as exc:
            raise UsageError(f"cannot read simulation truth {args.truth}: {exc}") from None
        cond = ev.sim_conditional_mean(sim_cfg)
    else:
        cond = binned_conditional_mean(frame, art.target, args.bins)
    seed = 0 if args.seed is None else args.seed
    rep = ev.bound_check(art.model, art.encoders, frame, cond, p, args.samples, seed, target=art.target)
    table = rep.to_frame()
    print(table.to_string(index=False))
    print(f"R_hat {rep.risk:.6g} (se {rep.risk_se:.3g}); 2*R_hat {rep.two_risk:.6g}; "
          f"verdict {'holds' if rep.verdict else 'violated'}")
    if args.out:
        table.to_csv(args.out, index=False, float_format="%.17g")
    return 0 if rep.verdict else 1


def cmd_gradcheck(args) -> int:
    seed = 0 if args.seed is None else args.seed
    worst = 0.0
    for task, loss in (("regression", "mse"), ("binary", "logloss")):
        model, inputs, y = toy_problem(seed, task=task)
        errors = gradient_check(model, inputs, y, loss)
        name = max(errors, key=errors.get)
        worst = max(worst, errors[name])
        print(f"{loss}: max relative error {errors[name]:.3e} ({name}) over {len(errors)} parameter arrays")
    ok = worst < args.tol
    print("gradient check " + ("passed" if ok else "FAILED"))
    return 0 if ok else 1


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON run configuration")
    common.add_argument("--seed", type=int, help="override every seed in the configuration")
    common.add_argument("--out", help="output path")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="namformer", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("simulate", parents=[common], help="write a simulated dataset")
    p = sub.add_parser("train", parents=[common], help="fit encoders and train a model")
    p.add_argument("--data", required=True)
    p = sub.add_parser("eval", parents=[common], help="MSE, or AUC and accuracy")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p = sub.add_parser("shapes", parents=[common], help="export shape function tables")
    p.add_argument("--model", required=True)
    p.add_argument("--grid-size", type=int, default=200)
    p = sub.add_parser("probe", parents=[common], help="embedding identifiability probe")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--stage", required=True, choices=ev.STAGES)
    p = sub.add_parser("boundcheck", parents=[common], help="empirical dropout bound check")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--truth", help="simulation metadata (<data>_sim.json) for analytic conditional means")
    p.add_argument("--p", type=float, help="feature dropout rate (default: the model's)")
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--bins", type=int, default=50, help="bins for the estimated conditional mean")
    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    p.add_argument("--tol", type=float, default=1e-4)
    return parser


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "eval": cmd_eval,
    "shapes": cmd_shapes,
    "probe": cmd_probe,
    "boundcheck": cmd_boundcheck,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TrainingDiverged, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
