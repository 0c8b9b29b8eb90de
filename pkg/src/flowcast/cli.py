"""Command-line surface: synth, pretrain, encode, train, forecast, evaluate.

Stages communicate through files in the output directory: the pretrain stage
writes encoder weights, encode writes the representation store, train writes
the model file, and forecast/evaluate consume both.  Every command that emits
CSV also renders a figure next to it.  Exit codes: 0 ok, 2 configuration
error, 3 data/artifact error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import report
from .config import RunConfig, config_to_dict, load_config
from .contrastive import pretrain
from .data import (NormStats, TimeSeries, chronological_split, load_csv,
                   normalize_series, write_csv)
from .encoder import Encoder, EncoderConfig
from .errors import (ArtifactError, ConfigError, ContractViolation, DataError,
                     FlowcastError, NumericError)
from .evaluation import MetricsRow, evaluate_forecasts, forecast_origins
from .forecaster import FlowFusionForecaster, ForecasterConfig
from .modelfile import load_artifact, save_artifact
from .params import ParameterSet
from .rng import RandomStream
from .store import ReprStore, default_scales, encode_multiscale
from .synth import generate

_FLOAT_FMT = repr  # shortest round-trip formatting keeps reruns byte-identical


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------

def _out_dir(config: RunConfig) -> Path:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_dataset(config: RunConfig) -> list[TimeSeries]:
    if not config.data:
        raise ConfigError("no dataset given; set `data` in the config or pass --data")
    return load_csv(config.data)


def _fit_stats(config: RunConfig, series: list[TimeSeries]) -> dict[str, NormStats]:
    stats = {}
    for ts in series:
        train, _, _ = chronological_split(ts, config.train_frac, config.val_frac)
        stats[ts.series_id] = NormStats.fit(train.values)
    return stats


def _scale_table(config: RunConfig, series: list[TimeSeries]):
    if config.scales is not None:
        return list(config.scales)
    return default_scales(series[0].stride)


def _write_rows(path: Path, header: list[str], rows) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_FLOAT_FMT(v) if isinstance(v, float) else v
                             for v in row])


def _dataset_name(config: RunConfig) -> str:
    return Path(config.data).stem if config.data else "dataset"


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(config: RunConfig) -> Path:
    out = _out_dir(config)
    series = generate(config.synth, RandomStream(config.seed, lane=101))
    data_path = out / "synth.csv"
    write_csv(data_path, series)
    report.save_series_preview(series[0], out / "synth.png")
    print(f"wrote {len(series)} series x {config.synth.length} points to {data_path}")
    return data_path


def cmd_pretrain(config: RunConfig) -> Path:
    out = _out_dir(config)
    series = _load_dataset(config)
    stats = _fit_stats(config, series)
    train_splits = []
    for ts in series:
        train, _, _ = chronological_split(ts, config.train_frac, config.val_frac)
        train_splits.append(normalize_series(train, stats[ts.series_id]))

    value_dim = series[0].n_channels
    enc_config = dataclasses.replace(config.encoder, in_channels=value_dim)
    params, _, history = pretrain(train_splits, enc_config, config.pretrain,
                                  RandomStream(config.seed, lane=1))

    encoder_path = out / "encoder.bin"
    save_artifact(
        encoder_path, "flowcast-encoder",
        {"encoder_config": dataclasses.asdict(enc_config),
         "value_dim": value_dim, "config": config_to_dict(config)},
        params.state(),
    )
    _write_rows(out / "pretrain_loss.csv",
                ["epoch", "step", "loss_time", "loss_freq", "loss_total"],
                [(h.epoch, h.step, h.loss_time, h.loss_freq, h.loss_total)
                 for h in history])
    if history:
        report.save_pretrain_curve(history, out / "pretrain_loss.png")
    print(f"pretrained encoder ({params.n_values()} parameters) -> {encoder_path}")
    return encoder_path


def _load_encoder(path) -> tuple[Encoder, ParameterSet, dict]:
    meta, arrays = load_artifact(path, "flowcast-encoder")
    enc_config = EncoderConfig(**meta["encoder_config"])
    params = ParameterSet()
    for name, value in arrays.items():
        params.add(name, value, trainable=False)
    return Encoder(enc_config, params), params, meta


def cmd_encode(config: RunConfig, encoder_path, export_csv: bool = False) -> Path:
    out = _out_dir(config)
    encoder, _, _ = _load_encoder(encoder_path)
    series = _load_dataset(config)
    stats = _fit_stats(config, series)
    scales = _scale_table(config, series)
    cadence = config.encode_cadence or scales[0].length

    store = ReprStore(encoder.config.repr_dim, scales)
    shortest = min(s.length for s in scales)
    for ts in series:
        normalized = normalize_series(ts, stats[ts.series_id])
        for idx in range(shortest - 1, ts.length, cadence):
            rep = encode_multiscale(encoder, normalized,
                                    int(ts.timestamps[idx]), scales,
                                    allow_partial=True)
            store.put(rep)

    store_path = out / "reprs.bin"
    store.save(store_path)
    if export_csv:
        rows = []
        for rep in store.records():
            for scale, vec in rep.vectors.items():
                rows.append([rep.series_id, rep.anchor, scale] +
                            [float(v) for v in vec])
        dim = store.dim
        _write_rows(out / "reprs.csv",
                    ["series_id", "anchor", "scale"] + [f"v{i}" for i in range(dim)],
                    rows)
    print(f"stored {len(store)} multiscale representations -> {store_path}")
    return store_path


def _build_forecaster_config(config: RunConfig, value_dim: int, cov_dim: int,
                             n_series: int, repr_dim: int,
                             scale_names: tuple[str, ...]) -> ForecasterConfig:
    m = config.model
    return ForecasterConfig(
        value_dim=value_dim, cov_dim=cov_dim, n_series=n_series,
        repr_dim=repr_dim, scale_names=scale_names,
        context_dim=m.context_dim, id_dim=m.id_dim, heads=m.heads,
        flow_layers=m.flow_layers, flow_hidden=m.flow_hidden,
        scale_clamp=m.scale_clamp, no_repr=config.no_repr,
        no_fusion=config.no_fusion, no_flow=config.no_flow,
    )


def cmd_train(config: RunConfig, encoder_path, store_path) -> Path:
    out = _out_dir(config)
    _, encoder_params, encoder_meta = _load_encoder(encoder_path)
    store = ReprStore.load(store_path)
    series = _load_dataset(config)
    stats = _fit_stats(config, series)

    train_splits = []
    for ts in series:
        train, _, _ = chronological_split(ts, config.train_frac, config.val_frac)
        train_splits.append(normalize_series(train, stats[ts.series_id]))

    value_dim = series[0].n_channels
    cov_dim = 4 + series[0].covariates.shape[1]
    scale_names = tuple(s.name for s in store.scales)
    fc = _build_forecaster_config(config, value_dim, cov_dim, len(series),
                                  store.dim, scale_names)
    params = ParameterSet()
    model = FlowFusionForecaster.create(fc, params, RandomStream(config.seed, lane=2))
    history = model.train(train_splits, store, config.train,
                          RandomStream(config.seed, lane=3))

    arrays = params.state()
    for name, value in encoder_params.state().items():
        arrays[name] = value  # frozen stage-1 weights ride along for provenance
    for ts in series:
        arrays[f"stats.{ts.series_id}.mean"] = stats[ts.series_id].mean
        arrays[f"stats.{ts.series_id}.std"] = stats[ts.series_id].std

    model_path = out / "model.bin"
    save_artifact(
        model_path, "flowcast-model",
        {"config": config_to_dict(config),
         "forecaster_config": dataclasses.asdict(fc),
         "series_ids": [ts.series_id for ts in series],
         "encoder_config": encoder_meta["encoder_config"]},
        arrays,
    )
    _write_rows(out / "train_loss.csv", ["epoch", "step", "nll"],
                [(h.epoch, h.step, h.nll) for h in history])
    if history:
        report.save_train_curve(history, out / "train_loss.png")
    print(f"trained model ({len(history)} steps) -> {model_path}")
    return model_path


def _load_model(path):
    meta, arrays = load_artifact(path, "flowcast-model")
    fc_raw = dict(meta["forecaster_config"])
    fc_raw["scale_names"] = tuple(fc_raw["scale_names"])
    fc = ForecasterConfig(**fc_raw)
    params = ParameterSet()
    stats = {}
    for name, value in arrays.items():
        if name.startswith("stats."):
            continue
        params.add(name, value, trainable=False)
    for sid in meta["series_ids"]:
        stats[sid] = NormStats(mean=arrays[f"stats.{sid}.mean"],
                               std=arrays[f"stats.{sid}.std"])
    model = FlowFusionForecaster(fc, params)
    return model, stats, meta


def cmd_forecast(config: RunConfig, model_path, store_path,
                 series_id: str | None, horizon: int | None,
                 origin: int | None) -> Path:
    out = _out_dir(config)
    model, stats, meta = _load_model(model_path)
    store = None if config.no_repr else ReprStore.load(store_path)
    series = _load_dataset(config)
    index_of = {sid: i for i, sid in enumerate(meta["series_ids"])}
    horizon = horizon or config.horizons[0]

    targets = [series_id] if series_id else [ts.series_id for ts in series]
    rows = []
    first_dist = None
    first_series = None
    for sid in targets:
        matching = [ts for ts in series if ts.series_id == sid]
        if not matching or sid not in index_of:
            raise ArtifactError(f"series {sid!r} unknown to the model/dataset")
        ts = matching[0]
        norm = normalize_series(ts, stats[sid])
        origin_idx = ts.length - 1 if origin is None else origin
        dist = model.forecast(norm, origin_idx, horizon, store,
                              RandomStream(config.seed, lane=4),
                              series_index=index_of[sid],
                              backcast=config.backcast,
                              n_samples=config.n_samples)
        st = stats[sid]
        denorm_q = st.denormalize(dist.quantiles)
        denorm_point = st.denormalize(dist.point)
        for step in range(horizon):
            rows.append([sid, dist.origin_timestamp, step + 1,
                         float(denorm_point[step, 0]),
                         float(denorm_q[0, step, 0]),
                         float(denorm_q[1, step, 0]),
                         float(denorm_q[2, step, 0])])
        if first_dist is None:
            first_dist = dataclasses.replace(
                dist, point=denorm_point, quantiles=denorm_q,
                samples=st.denormalize(dist.samples))
            first_series = (ts, origin_idx)
    forecast_path = out / "forecast.csv"
    _write_rows(forecast_path,
                ["series_id", "origin", "step", "point", "q10", "q50", "q90"],
                rows)
    ts, origin_idx = first_series
    tail = slice(max(0, origin_idx - 4 * horizon), origin_idx + 1)
    report.save_forecast_fan(ts.timestamps[tail], ts.values[tail], first_dist,
                             out / "forecast.png")
    print(f"forecast ({len(rows)} rows) -> {forecast_path}")
    return forecast_path


def cmd_evaluate(config: RunConfig, model_path, store_path) -> Path:
    out = _out_dir(config)
    model, stats, meta = _load_model(model_path)
    store = None if config.no_repr else ReprStore.load(store_path)
    series = _load_dataset(config)
    index_of = {sid: i for i, sid in enumerate(meta["series_ids"])}

    test_norm = []
    for ts in series:
        _, _, test = chronological_split(ts, config.train_frac, config.val_frac)
        test_norm.append(normalize_series(test, stats[ts.series_id]))

    rows: list[MetricsRow] = []
    name = _dataset_name(config)
    for horizon in config.horizons:
        origins = forecast_origins(min(t.length for t in test_norm),
                                   config.backcast, horizon, config.eval_stride)

        def predict(ts: TimeSeries, origin: int, n: int) -> np.ndarray:
            dist = model.forecast(
                ts, origin, n, store,
                RandomStream(config.seed, lane=5).split(origin),
                series_index=index_of[ts.series_id],
                backcast=config.backcast, n_samples=config.n_samples)
            return dist.point

        # metrics are computed on the normalized scale unless asked otherwise
        if config.denormalized:
            eval_series = [TimeSeries(t.series_id, t.timestamps,
                                      stats[t.series_id].denormalize(t.values),
                                      t.covariates) for t in test_norm]
            raw_predict = predict

            def predict(ts: TimeSeries, origin: int, n: int,
                        _inner=raw_predict) -> np.ndarray:
                normed = [s for s in test_norm if s.series_id == ts.series_id][0]
                return stats[ts.series_id].denormalize(_inner(normed, origin, n))
        else:
            eval_series = test_norm
        pair = evaluate_forecasts(predict, eval_series, origins, horizon)
        rows.append(MetricsRow(name, horizon, pair[0], pair[1], config.seed))

    metrics_path = out / "metrics.csv"
    csv_rows = [(r.dataset, r.horizon, r.mse, r.mae, r.seed) for r in rows]
    csv_rows.append((name, "avg", float(np.mean([r.mse for r in rows])),
                     float(np.mean([r.mae for r in rows])), config.seed))
    _write_rows(metrics_path, ["dataset", "horizon", "mse", "mae", "seed"], csv_rows)
    payload = {
        "dataset": name,
        "seed": config.seed,
        "per_horizon": [dataclasses.asdict(r) for r in rows],
        "average": {"mse": float(np.mean([r.mse for r in rows])),
                    "mae": float(np.mean([r.mae for r in rows]))},
    }
    (out / "metrics.json").write_text(json.dumps(payload, sort_keys=True, indent=2))
    report.save_metrics_chart(rows, out / "metrics.png")
    for r in rows:
        print(f"{name} horizon={r.horizon} mse={r.mse:.6f} mae={r.mae:.6f}")
    return metrics_path


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowcast",
        description="probabilistic long-horizon forecasting with multiscale "
                    "representations and conditional flows",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--data", default=None, help="dataset CSV")
        p.add_argument("--no-repr", action="store_true", default=None,
                       help="ablation: drop multiscale representations")
        p.add_argument("--no-fusion", action="store_true", default=None,
                       help="ablation: replace attention fusion with a linear mix")
        p.add_argument("--no-flow", action="store_true", default=None,
                       help="ablation: Gaussian head instead of the flow")

    common(sub.add_parser("synth", help="generate a synthetic workload CSV"))
    common(sub.add_parser("pretrain", help="contrastive encoder pretraining"))

    enc = sub.add_parser("encode", help="encode multiscale representations")
    common(enc)
    enc.add_argument("--encoder", required=True, help="encoder artifact")
    enc.add_argument("--export-csv", action="store_true",
                     help="also dump representations as CSV")

    tr = sub.add_parser("train", help="train the fusion forecaster")
    common(tr)
    tr.add_argument("--encoder", required=True)
    tr.add_argument("--store", required=True)

    fc = sub.add_parser("forecast", help="sample forecasts from a trained model")
    common(fc)
    fc.add_argument("--model", required=True)
    fc.add_argument("--store", default=None)
    fc.add_argument("--series", default=None, help="forecast one series only")
    fc.add_argument("--horizon", type=int, default=None)
    fc.add_argument("--origin", type=int, default=None,
                    help="origin index (default: the last observation)")

    ev = sub.add_parser("evaluate", help="rolling-origin metrics on the test split")
    common(ev)
    ev.add_argument("--model", required=True)
    ev.add_argument("--store", default=None)
    ev.add_argument("--denormalized", action="store_true", default=None,
                    help="report metrics in raw data units")
    ev.add_argument("--horizons", default=None,
                    help="comma-separated override, e.g. 96,192")
    return parser


def _config_from_args(args) -> RunConfig:
    overrides = {
        "seed": args.seed,
        "out": args.out,
        "data": args.data,
        "no_repr": args.no_repr,
        "no_fusion": args.no_fusion,
        "no_flow": args.no_flow,
    }
    if getattr(args, "denormalized", None):
        overrides["denormalized"] = True
    if getattr(args, "horizons", None):
        try:
            overrides["horizons"] = tuple(
                int(h) for h in args.horizons.split(",") if h)
        except ValueError:
            raise ConfigError(f"--horizons: expected integers, got {args.horizons!r}")
    return load_config(args.config, overrides)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        config = _config_from_args(args)
        if args.command == "synth":
            cmd_synth(config)
        elif args.command == "pretrain":
            cmd_pretrain(config)
        elif args.command == "encode":
            cmd_encode(config, args.encoder, args.export_csv)
        elif args.command == "train":
            cmd_train(config, args.encoder, args.store)
        elif args.command == "forecast":
            cmd_forecast(config, args.model, args.store, args.series,
                         args.horizon, args.origin)
        elif args.command == "evaluate":
            cmd_evaluate(config, args.model, args.store)
    except (ConfigError, ContractViolation) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (DataError, ArtifactError) as exc:
        print(f"artifact error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    except FlowcastError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
