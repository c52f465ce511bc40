"""Batch CLI: synthesize benchmark data, train pools, forecast, evaluate,
ablate, grid-sweep, and compare models with the Diebold-Mariano test.

All commands are driven by a single JSON config document whose defaults are
the production hyperparameters; ``--set section.field=value`` overrides any
field. Outputs embed the config hash and master seed; timestamps live in a
separate ``created_at`` field so re-runs are byte-identical elsewhere.

Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import sys
from dataclasses import dataclass, fields as dataclass_fields, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import data
from .baselines import seasonal_naive
from .ensemble import EnsembleSpec, draw_member_indices, run_trials
from .evaluation import aggregate_metrics, diebold_mariano, dm_decision, point_errors
from .model import ABLATION_FLAGS, ModelConfig, config_hash, decompose, model_forward
from .train import TrainSchedule, build_pool, load_pool

SPLIT_REGIONS = ("test", "val")


class ConfigError(Exception):
    """Invalid configuration or command usage; maps to exit code 2."""


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    dataset: str | None
    output_dir: str | None
    model: ModelConfig
    schedule: TrainSchedule
    ensemble: EnsembleSpec
    split: data.SplitSpec

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "output_dir": self.output_dir,
            "model": self.model.to_dict(),
            "train": {f.name: getattr(self.schedule, f.name) for f in dataclass_fields(self.schedule)},
            "ensemble": {f.name: getattr(self.ensemble, f.name) for f in dataclass_fields(self.ensemble)},
            "split": {f.name: getattr(self.split, f.name) for f in dataclass_fields(self.split)},
        }


_SECTIONS = {"dataset", "output_dir", "model", "train", "ensemble", "split"}


def _apply_override(doc: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"--set expects KEY=VALUE, got '{assignment}'")
    key, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = doc
    parts = key.strip().split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"--set path '{key}' collides with a non-object field")
    node[parts[-1]] = value


def _build_section(cls, doc: dict, section: str):
    valid = {f.name for f in dataclass_fields(cls)}
    unknown = set(doc) - valid
    if unknown:
        raise ConfigError(f"config section '{section}': unknown field(s) {sorted(unknown)}")
    try:
        if cls is ModelConfig:
            return ModelConfig.from_dict(doc)
        return cls(**doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config section '{section}': {exc}") from None


def load_run_config(path=None, overrides=()) -> RunConfig:
    """Read the JSON config document, apply --set overrides, validate fields."""
    doc: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
    for assignment in overrides:
        _apply_override(doc, assignment)
    unknown = set(doc) - _SECTIONS
    if unknown:
        raise ConfigError(f"unknown config field(s): {sorted(unknown)}")
    dataset = doc.get("dataset")
    output_dir = doc.get("output_dir")
    return RunConfig(
        dataset=str(dataset) if dataset is not None else None,
        output_dir=str(output_dir) if output_dir is not None else None,
        model=_build_section(ModelConfig, doc.get("model", {}), "model"),
        schedule=_build_section(TrainSchedule, doc.get("train", {}), "train"),
        ensemble=_build_section(EnsembleSpec, doc.get("ensemble", {}), "ensemble"),
        split=_build_section(data.SplitSpec, doc.get("split", {}), "split"),
    )


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------

def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _write_json(path, doc: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _meta(cfg_hash: str, master_seed, **extra) -> dict:
    return {"config_hash": cfg_hash, "master_seed": master_seed, "created_at": _now(), **extra}


def _open_csv(path, cfg_hash: str, master_seed) -> tuple:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fh = open(path, "w", newline="")
    fh.write(f"# config_hash={cfg_hash} master_seed={master_seed}\n")
    return fh, csv.writer(fh)


def _load_manifest_doc(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"manifest not found: {path}")
    return json.loads(path.read_text())


def _require_dataset(cfg: RunConfig) -> Path:
    if not cfg.dataset:
        raise ConfigError("config is missing the 'dataset' path")
    path = Path(cfg.dataset)
    if not path.exists():
        raise ConfigError(f"dataset file not found: {path}")
    return path


def _load_series(dataset_path, model_cfg: ModelConfig, drop_short: bool):
    return data.load_dataset(
        dataset_path,
        min_length=model_cfg.lookback + 2 * model_cfg.horizon,
        on_short="drop" if drop_short else "error",
    )


def _ensemble_from_args(base: EnsembleSpec, args) -> EnsembleSpec:
    updates = {}
    if getattr(args, "ensemble_size", None) is not None:
        updates["ensemble_size"] = args.ensemble_size
    if getattr(args, "trials", None) is not None:
        updates["trials"] = args.trials
    if getattr(args, "aggregation", None) is not None:
        updates["aggregation"] = args.aggregation
    if getattr(args, "ensemble_seed", None) is not None:
        updates["seed"] = args.ensemble_seed
    try:
        return replace(base, **updates) if updates else base
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    series = data.synthetic_dataset(
        n_series=args.series,
        months=args.months,
        amplitude=args.amplitude,
        trend_per_year=args.trend,
        noise=args.noise,
        seed=args.seed,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.format == "json" or (args.format == "auto" and out.suffix.lower() == ".json"):
        data.write_dataset_json(series, out)
    else:
        data.write_dataset_csv(series, out)
    print(f"wrote {len(series)} series x {args.months} months to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, args.set)
    _require_dataset(cfg)
    if args.dry_run:
        print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
        return 0
    if not cfg.output_dir:
        raise ConfigError("config is missing 'output_dir'")
    series = _load_series(cfg.dataset, cfg.model, args.drop_short)
    run_extra = {"dataset": cfg.dataset, "ensemble": cfg.to_dict()["ensemble"]}
    pool = build_pool(
        series,
        cfg.model,
        cfg.schedule,
        split_spec=cfg.split,
        out_dir=cfg.output_dir,
        workers=args.workers,
        extra_manifest=run_extra,
    )
    losses = [m.final_loss for m in pool.members]
    manifest = Path(cfg.output_dir) / "manifest.json"
    print(f"trained pool of {len(pool.members)} members (config {pool.config_hash})")
    print(f"mean final training loss: {float(np.mean(losses)):.6f}")
    print(f"manifest: {manifest}")
    return 0


def _forecast_targets(series_list, requested: str):
    by_id = {s.id: s for s in series_list}
    if requested == "all":
        return [by_id[sid] for sid in sorted(by_id)]
    targets = []
    for sid in requested.split(","):
        sid = sid.strip()
        if sid not in by_id:
            raise ConfigError(f"unknown series id '{sid}'")
        targets.append(by_id[sid])
    return targets


def cmd_forecast(args) -> int:
    doc = _load_manifest_doc(args.manifest)
    pool = load_pool(args.manifest)
    run = doc.get("run", {})
    dataset = args.dataset or run.get("dataset")
    if not dataset:
        raise ConfigError("no dataset given and the manifest records none")
    if not Path(dataset).exists():
        raise ConfigError(f"dataset file not found: {dataset}")
    series_list = _load_series(dataset, pool.config, drop_short=False)
    targets = _forecast_targets(series_list, args.series)

    base_spec = _build_section(EnsembleSpec, run.get("ensemble", {}), "ensemble")
    spec = _ensemble_from_args(base_spec, args)
    config = pool.config

    anchors = []
    for s in targets:
        if args.anchor is None:
            idx = len(s) - 1
        else:
            try:
                year, month = (int(p) for p in args.anchor.split("-"))
            except ValueError:
                raise ConfigError(f"--anchor expects YYYY-MM, got '{args.anchor}'") from None
            idx = data.month_index(year, month) - data.month_index(*s.start)
        if idx >= len(s):
            raise ConfigError(f"anchor leaves series '{s.id}' without data ({args.anchor})")
        if idx + 1 < config.lookback:
            raise ConfigError(
                f"anchor leaves series '{s.id}' with fewer than {config.lookback} months of history"
            )
        anchors.append(idx)

    x = np.stack([s.values[i + 1 - config.lookback : i + 1] for s, i in zip(targets, anchors)])
    indices = draw_member_indices(len(pool.members), spec, args.trial_index)
    member_forecasts = []
    member_contribs = []
    for i in sorted(set(int(j) for j in indices)):
        params = pool.members[i].load_params()
        y_hat, diag = model_forward(params, x, config)
        member_forecasts.append((i, y_hat))
        member_contribs.append((i, decompose(diag)))
    forecast_by_index = dict(member_forecasts)
    stacked = np.stack([forecast_by_index[int(i)] for i in indices])
    aggregated = np.median(stacked, axis=0) if spec.aggregation == "median" else stacked.mean(axis=0)

    fh, writer = _open_csv(args.out, pool.config_hash, pool.schedule.seed)
    with fh:
        writer.writerow(["series_id", "year", "month", "forecast"])
        for s, idx, row in zip(targets, anchors, aggregated):
            for j, value in enumerate(row, start=1):
                year, month = s.month_at(idx + j)
                writer.writerow([s.id, year, month, repr(float(value))])
    print(f"wrote forecasts for {len(targets)} series to {args.out}")

    if args.decomposition:
        # Mean-aggregated block contributions stay additive, so the per-block
        # rows sum exactly to the "forecast" field below (which equals the
        # forecast CSV when aggregation=mean or the ensemble has one member).
        contrib_by_index = dict(member_contribs)
        mean_contrib = np.mean(
            np.stack([contrib_by_index[int(i)] for i in indices]), axis=0
        )  # (M, n_series, H)
        series_docs = {}
        for k, (s, idx) in enumerate(zip(targets, anchors)):
            months = [list(s.month_at(idx + j)) for j in range(1, config.horizon + 1)]
            blocks = [mean_contrib[m, k].tolist() for m in range(config.blocks)]
            series_docs[s.id] = {
                "anchor": list(s.month_at(idx)),
                "months": months,
                "blocks": blocks,
                "forecast": mean_contrib[:, k].sum(axis=0).tolist(),
            }
        _write_json(
            args.decomposition,
            {
                "meta": _meta(pool.config_hash, pool.schedule.seed, aggregation="mean"),
                "series": series_docs,
            },
        )
        print(f"wrote block decomposition to {args.decomposition}")
    return 0


def _baseline_report(series_list, split_spec, region: str, horizon: int):
    groups = {}
    for s in series_list:
        regions = data.split(s, split_spec)
        start, stop = getattr(regions, region)
        history = s.values[:start]
        if history.size < 12:
            return None
        forecast = seasonal_naive(history, stop - start)
        groups[s.id] = point_errors(s.values[start:stop], forecast)
    return aggregate_metrics(groups)


def cmd_evaluate(args) -> int:
    doc = _load_manifest_doc(args.manifest)
    pool = load_pool(args.manifest)
    run = doc.get("run", {})
    dataset = args.dataset or run.get("dataset")
    if not dataset:
        raise ConfigError("no dataset given and the manifest records none")
    if not Path(dataset).exists():
        raise ConfigError(f"dataset file not found: {dataset}")
    series_list = _load_series(dataset, pool.config, drop_short=False)
    base_spec = _build_section(EnsembleSpec, run.get("ensemble", {}), "ensemble")
    spec = _ensemble_from_args(base_spec, args)

    windows = data.evaluation_windows(
        series_list, pool.split, pool.config.lookback, pool.config.horizon, region=args.split
    )
    report = run_trials(pool, spec, windows)
    baseline = _baseline_report(series_list, pool.split, args.split, pool.config.horizon)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg_hash, master_seed = pool.config_hash, pool.schedule.seed

    _write_json(
        out_dir / "metrics.json",
        {
            "meta": _meta(cfg_hash, master_seed, dataset=str(dataset), split=args.split,
                          model_label=args.label),
            "metrics": report.to_dict(),
            "baseline_seasonal_naive": baseline.to_dict() if baseline else None,
        },
    )

    fh, writer = _open_csv(out_dir / "per_series.csv", cfg_hash, master_seed)
    with fh:
        writer.writerow(["model", "series_id", "medape", "mape", "iqr_ape", "rmse", "mpe"])
        for sid, metrics in report.per_series_averaged.items():
            writer.writerow(
                [args.label, sid]
                + [repr(metrics[name]) for name in ("medape", "mape", "iqr_ape", "rmse", "mpe")]
            )

    fh, writer = _open_csv(out_dir / "errors.csv", cfg_hash, master_seed)
    with fh:
        writer.writerow(["series_id", "year", "month", "actual", "forecast", "error"])
        by_series = {s.id: s for s in series_list}
        for window, forecast in zip(windows, report.mean_forecast):
            s = by_series[window.series_id]
            for j, (actual, predicted) in enumerate(zip(window.y, forecast), start=1):
                year, month = s.month_at(window.anchor + j)
                writer.writerow(
                    [s.id, year, month, repr(float(actual)), repr(float(predicted)),
                     repr(float(actual - predicted))]
                )

    fh, writer = _open_csv(out_dir / "mpe_points.csv", cfg_hash, master_seed)
    with fh:
        writer.writerow(["series_id", "year", "month", "pe"])
        for window, forecast in zip(windows, report.mean_forecast):
            s = by_series[window.series_id]
            pe = 100.0 * (window.y - forecast) / window.y
            for j, value in enumerate(pe, start=1):
                year, month = s.month_at(window.anchor + j)
                writer.writerow([s.id, year, month, repr(float(value))])

    agg = report.averaged
    print(
        f"{args.split} split, {spec.trials} trials: "
        f"MAPE {agg['mape']:.3f}  MedAPE {agg['medape']:.3f}  RMSE {agg['rmse']:.3f}  "
        f"MPE {agg['mpe']:+.3f}"
    )
    if baseline:
        print(f"seasonal-naive MAPE {baseline.aggregate['mape']:.3f}")
    print(f"reports in {out_dir}")
    return 0


def cmd_ablate(args) -> int:
    cfg = load_run_config(args.config, args.set)
    _require_dataset(cfg)
    out_dir = Path(args.out_dir or cfg.output_dir or "ablation")
    series = _load_series(cfg.dataset, cfg.model, args.drop_short)

    variants = ["full", *ABLATION_FLAGS]
    rows = []
    details = {}
    for variant in variants:
        flags = frozenset() if variant == "full" else frozenset({variant})
        model_cfg = replace(cfg.model, ablation=flags)
        pool = build_pool(
            series, model_cfg, cfg.schedule, split_spec=cfg.split,
            out_dir=out_dir / variant, workers=args.workers,
            extra_manifest={"dataset": cfg.dataset, "variant": variant},
        )
        windows = data.evaluation_windows(
            series, cfg.split, model_cfg.lookback, model_cfg.horizon, region="test"
        )
        report = run_trials(pool, cfg.ensemble, windows)
        rows.append((variant, report.averaged["mape"], report.averaged["rmse"]))
        details[variant] = {
            "config_hash": config_hash(model_cfg),
            "mape": report.averaged["mape"],
            "rmse": report.averaged["rmse"],
            "loss_trace_member0": pool.members[0].loss_trace,
        }
        print(f"{variant:8s} MAPE {report.averaged['mape']:.3f}  RMSE {report.averaged['rmse']:.3f}")

    base_hash = config_hash(cfg.model)
    fh, writer = _open_csv(out_dir / "ablation_table.csv", base_hash, cfg.schedule.seed)
    with fh:
        writer.writerow(["variant", "mape", "rmse"])
        for variant, mape, rmse in rows:
            writer.writerow([variant, repr(mape), repr(rmse)])
    _write_json(
        out_dir / "ablation.json",
        {"meta": _meta(base_hash, cfg.schedule.seed, dataset=cfg.dataset), "variants": details},
    )
    print(f"ablation table in {out_dir}")
    return 0


def _read_errors_csv(path) -> tuple[dict, str | None]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"errors file not found: {path}")
    out = {}
    provenance = None
    with open(path, newline="") as fh:
        raw = list(csv.reader(fh))
    for row in raw:
        if row and row[0].lstrip().startswith("#"):
            provenance = ",".join(row).lstrip("# ")
            break
    rows = [r for r in raw if r and not r[0].lstrip().startswith("#")]
    if not rows:
        raise ConfigError(f"{path}: empty errors file")
    header = [c.strip() for c in rows[0]]
    try:
        sid_col = header.index("series_id")
        year_col = header.index("year")
        month_col = header.index("month")
        err_col = header.index("error")
    except ValueError:
        raise ConfigError(
            f"{path}: errors file needs columns series_id, year, month, error"
        ) from None
    for row in rows[1:]:
        key = (row[sid_col], int(row[year_col]), int(row[month_col]))
        out[key] = float(row[err_col])
    return out, provenance


def cmd_dm_test(args) -> int:
    errors_a, provenance_a = _read_errors_csv(args.errors_a)
    errors_b, provenance_b = _read_errors_csv(args.errors_b)
    if errors_a.keys() != errors_b.keys():
        only_a = len(errors_a.keys() - errors_b.keys())
        only_b = len(errors_b.keys() - errors_a.keys())
        raise ConfigError(
            f"error files are not aligned: {only_a} keys only in A, {only_b} only in B"
        )
    keys = sorted(errors_a)
    e1 = np.array([errors_a[k] for k in keys])
    e2 = np.array([errors_b[k] for k in keys])
    result = diebold_mariano(e1, e2, loss_kind=args.loss, horizon_correction=args.horizon)

    doc = {
        "loss": args.loss,
        "horizon_correction": args.horizon,
        "n": result.n,
        "lag": result.lag,
        "mean_differential": result.mean_differential,
        "long_run_variance": result.long_run_variance,
        "degenerate": result.degenerate,
        "reason": result.reason,
        "statistic": result.statistic,
        "p_value": result.p_value,
    }
    if result.degenerate:
        print(f"degenerate Diebold-Mariano comparison: {result.reason}")
    else:
        decision = dm_decision(result.statistic, args.alpha)
        doc.update(decision)
        verdict = "reject equal accuracy" if decision["reject_equal_accuracy"] else "no rejection"
        print(
            f"DM statistic {result.statistic:+.4f}  p={result.p_value:.4g}  "
            f"({verdict} at alpha={args.alpha}, |z|>{decision['critical_z']:.3f})"
        )
    if args.out:
        meta = {
            "created_at": _now(),
            "errors_a": {"path": str(args.errors_a), "provenance": provenance_a},
            "errors_b": {"path": str(args.errors_b), "provenance": provenance_b},
        }
        _write_json(Path(args.out), {"meta": meta, "result": doc})
    return 0


def _grid_target(field: str):
    model_fields = {f.name for f in dataclass_fields(ModelConfig)}
    schedule_fields = {f.name for f in dataclass_fields(TrainSchedule)}
    name = field.split(".", 1)[1] if "." in field else field
    section = field.split(".", 1)[0] if "." in field else None
    if section == "model" or (section is None and name in model_fields):
        if name not in model_fields:
            raise ConfigError(f"grid field '{field}' is not a model hyperparameter")
        return "model", name
    if section == "train" or (section is None and name in schedule_fields):
        if name not in schedule_fields:
            raise ConfigError(f"grid field '{field}' is not a schedule hyperparameter")
        return "train", name
    raise ConfigError(f"grid field '{field}' is not a model or schedule hyperparameter")


def cmd_sweep(args) -> int:
    cfg = load_run_config(args.config, args.set)
    _require_dataset(cfg)
    if cfg.split.val_months < 1:
        raise ConfigError("sweep needs split.val_months >= 1 to score on the validation block")
    grid_path = Path(args.grid)
    if not grid_path.exists():
        raise ConfigError(f"grid file not found: {grid_path}")
    try:
        grid = json.loads(grid_path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{grid_path}: invalid JSON: {exc}") from None
    if not isinstance(grid, dict) or not grid:
        raise ConfigError(f"{grid_path}: grid must be a non-empty JSON object of field -> values")
    targets = {}
    for field, values in grid.items():
        if not isinstance(values, list) or not values:
            raise ConfigError(f"grid field '{field}' must map to a non-empty list of values")
        targets[field] = (_grid_target(field), values)

    series = _load_series(cfg.dataset, cfg.model, args.drop_short)
    field_names = sorted(targets)
    combos = itertools.product(*(targets[name][1] for name in field_names))
    rows = []
    for combo in combos:
        model_updates, schedule_updates = {}, {}
        for name, value in zip(field_names, combo):
            (section, attr), _ = targets[name]
            (model_updates if section == "model" else schedule_updates)[attr] = value
        try:
            model_cfg = replace(cfg.model, **model_updates)
            schedule = replace(cfg.schedule, **schedule_updates)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"grid combination {dict(zip(field_names, combo))}: {exc}") from None
        pool = build_pool(series, model_cfg, schedule, split_spec=cfg.split)
        windows = data.evaluation_windows(
            series, cfg.split, model_cfg.lookback, model_cfg.horizon, region="val"
        )
        report = run_trials(pool, cfg.ensemble, windows)
        row = {name: value for name, value in zip(field_names, combo)}
        row.update(
            val_mape=report.averaged["mape"],
            val_medape=report.averaged["medape"],
            val_rmse=report.averaged["rmse"],
            config_hash=config_hash(model_cfg),
        )
        rows.append(row)
        label = ", ".join(f"{k}={v}" for k, v in zip(field_names, combo))
        print(f"{label}: val MAPE {row['val_mape']:.3f}")

    best = min(rows, key=lambda r: r["val_mape"])
    out_dir = Path(args.out_dir or cfg.output_dir or "sweep")
    base_hash = config_hash(cfg.model)
    fh, writer = _open_csv(out_dir / "sweep.csv", base_hash, cfg.schedule.seed)
    with fh:
        writer.writerow(field_names + ["val_mape", "val_medape", "val_rmse", "config_hash"])
        for row in rows:
            writer.writerow(
                [row[name] for name in field_names]
                + [repr(row["val_mape"]), repr(row["val_medape"]), repr(row["val_rmse"]),
                   row["config_hash"]]
            )
    _write_json(
        out_dir / "sweep.json",
        {
            "meta": _meta(base_hash, cfg.schedule.seed, dataset=cfg.dataset),
            "rows": rows,
            "best": best,
        },
    )
    best_label = ", ".join(f"{k}={best[k]}" for k in field_names)
    print(f"best by validation MAPE: {best_label} ({best['val_mape']:.3f}); table in {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_config_args(sub):
    sub.add_argument("--config", required=True, help="JSON run-config file")
    sub.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                     help="override a config field, e.g. --set model.tau=0.3")
    sub.add_argument("--drop-short", action="store_true",
                     help="drop too-short series instead of failing")
    sub.add_argument("--workers", type=int, default=1, help="parallel member training")


def _add_ensemble_args(sub):
    sub.add_argument("--ensemble-size", type=int, default=None)
    sub.add_argument("--trials", type=int, default=None)
    sub.add_argument("--aggregation", choices=["median", "mean"], default=None)
    sub.add_argument("--ensemble-seed", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="loadcast",
        description="Mid-term load forecasting: train, forecast, evaluate, compare.",
    )
    commands = parser.add_subparsers(dest="command")

    sub = commands.add_parser("synth", help="generate the synthetic benchmark dataset")
    sub.add_argument("--out", required=True)
    sub.add_argument("--series", type=int, default=8)
    sub.add_argument("--months", type=int, default=60)
    sub.add_argument("--amplitude", type=float, default=0.2)
    sub.add_argument("--trend", type=float, default=0.02)
    sub.add_argument("--noise", type=float, default=0.01)
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--format", choices=["auto", "csv", "json"], default="auto")
    sub.set_defaults(func=cmd_synth)

    sub = commands.add_parser("train", help="train a model pool and write its manifest")
    _add_config_args(sub)
    sub.add_argument("--dry-run", action="store_true", help="validate and echo the config only")
    sub.set_defaults(func=cmd_train)

    sub = commands.add_parser("forecast", help="forecast series from a trained pool")
    sub.add_argument("--manifest", required=True)
    sub.add_argument("--dataset", default=None, help="defaults to the dataset in the manifest")
    sub.add_argument("--series", default="all", help="comma-separated ids, or 'all'")
    sub.add_argument("--anchor", default=None, metavar="YYYY-MM",
                     help="last lookback month (default: each series' final month)")
    sub.add_argument("--out", required=True, help="forecast CSV path")
    sub.add_argument("--decomposition", default=None, help="optional per-block JSON path")
    sub.add_argument("--trial-index", type=int, default=0)
    _add_ensemble_args(sub)
    sub.set_defaults(func=cmd_forecast)

    sub = commands.add_parser("evaluate", help="score a trained pool on the held-out split")
    sub.add_argument("--manifest", required=True)
    sub.add_argument("--dataset", default=None)
    sub.add_argument("--split", choices=list(SPLIT_REGIONS), default="test")
    sub.add_argument("--out-dir", required=True)
    sub.add_argument("--label", default="ensemble", help="model column in per_series.csv")
    _add_ensemble_args(sub)
    sub.set_defaults(func=cmd_evaluate)

    sub = commands.add_parser("ablate", help="train + evaluate the full model and each reduced variant")
    _add_config_args(sub)
    sub.add_argument("--out-dir", default=None)
    sub.set_defaults(func=cmd_ablate)

    sub = commands.add_parser("dm-test", help="Diebold-Mariano equal-accuracy test on two error files")
    sub.add_argument("--errors-a", required=True)
    sub.add_argument("--errors-b", required=True)
    sub.add_argument("--loss", choices=["absolute", "squared"], default="absolute")
    sub.add_argument("--horizon", type=int, default=12, help="h-step correction (lag window h-1)")
    sub.add_argument("--alpha", type=float, default=0.01)
    sub.add_argument("--out", default=None, help="optional JSON result path")
    sub.set_defaults(func=cmd_dm_test)

    sub = commands.add_parser("sweep", help="grid-search hyperparameters on the validation split")
    _add_config_args(sub)
    sub.add_argument("--grid", required=True, help="JSON file: field -> list of values")
    sub.add_argument("--out-dir", default=None)
    sub.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    if not getattr(args, "func", None):
        parser.print_help()
        return 2
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except data.DatasetError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"missing file: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure -> exit 1, per the CLI contract
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
