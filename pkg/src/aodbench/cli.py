"""Command-line entry point: synth, baseline, train, evaluate, map."""
from __future__ import annotations

import argparse
import datetime as dt
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._accel import thread_cap
from .collocation import (
    CollocatedPair, SampleSet, build_samples, collocate, max_collocation_distance,
)
from .geo_grid import GridFormatError, haversine_km, nearest_index, read_grid_series, write_grid_series
from .metrics import breakdown, compare_models, per_site, rank_sites
from .nn.serialize import ModelFormatError, deserialize_model, serialize_model
from .stations import (
    EXTREME_THRESHOLD, StationFormatError, daily_records, parse_station_csv, write_station_csv,
)
from .svgmap import METRICS, render_site_map
from .synth import SynthConfig, gen_grid_series, gen_station_truth, truth_observations
from .training import (
    NonFiniteLossError, TooFewSamplesError, TrainConfig, evaluate, filter_regime, split_for, train,
)

log = logging.getLogger("aodbench")

REPORT_SCHEMA = "aodbench-report-v1"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def digest_inputs(path) -> str:
    p = Path(path)
    if p.is_file():
        return _sha256_file(p)
    h = hashlib.sha256()
    for f in sorted(p.glob("*.aodg")):
        h.update(f.name.encode())
        h.update(bytes.fromhex(_sha256_file(f)))
    return h.hexdigest()


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def manifest(command: str, config: dict, seeds: dict | None = None,
             inputs: dict | None = None) -> dict:
    return {
        "tool": "aodbench",
        "version": __version__,
        "command": command,
        "config": config,
        "seeds": seeds or {},
        "inputs": {k: {"path": str(v), "sha256": digest_inputs(v)} for k, v in (inputs or {}).items()},
    }


def _write_json(path, doc: dict):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=False) + "\n", encoding="utf-8")


def load_inputs(grids, stations):
    try:
        series = read_grid_series(grids, threads=thread_cap())
    except GridFormatError as e:
        raise DataError(f"grid input: {e}") from e
    if not series:
        raise DataError(f"no .aodg files found under {grids}")
    try:
        text = Path(stations).read_text(encoding="utf-8")
        records = daily_records(parse_station_csv(text))
    except StationFormatError as e:
        raise DataError(f"{stations}: {e}") from e
    return series, records


def _pairs_from_samples(samples, spec) -> list[CollocatedPair]:
    out = []
    for s in samples:
        r, c = nearest_index(spec, s.site.lat, s.site.lon)
        d = haversine_km(s.site.lat, s.site.lon, float(spec.lat_of(r)), float(spec.lon_of(c)))
        out.append(CollocatedPair(s.site, s.date, s.baseline, s.target, d))
    return out


# --- commands ---------------------------------------------------------------

def cmd_synth(args) -> int:
    config = SynthConfig(seed=args.seed, days=args.days, sites=args.sites)
    out = Path(args.out_dir)
    series = gen_grid_series(config)
    truth = gen_station_truth(series, config)
    try:
        write_grid_series(series, out / "grids")
        (out / "stations.csv").write_text(write_station_csv(truth_observations(truth)), encoding="utf-8")
        _write_json(out / "truth.json", {
            "schema": "aodbench-synth-truth-v1",
            "config": {"seed": config.seed, "days": config.days, "sites": config.sites,
                       "extreme_fraction": config.extreme_fraction, "noise_sd": config.noise_sd,
                       "start": config.start.isoformat(), "grid": vars(config.spec)},
            "truth_model": truth.model.to_dict(),
            "sites": [{"name": s.name, "lat": s.lat, "lon": s.lon} for s in truth.sites],
        })
    except OSError as e:
        raise DataError(f"cannot write under {out}: {e}") from e
    log.info("wrote %d grid files and %d station rows to %s", len(series), len(truth.records), out)
    return EXIT_OK


def baseline_report(series, records, min_obs: int, threshold: float) -> dict:
    coll = collocate(series, records)
    if not coll.pairs:
        raise DataError("empty collocation: no station dates overlap the grid series")
    spec = next(iter(series.values())).spec
    samples: SampleSet = build_samples(series, records)
    sites = per_site(coll.pairs, min_obs=min_obs, threshold=threshold)
    return {
        "breakdown": breakdown(coll.pairs, threshold).to_dict(),
        "sites": [s.to_dict() for s in sites],
        "rankings": {
            key: [s.site.name for s in rank_sites(sites, key, 5)] if sites else []
            for key in ("extreme_count", "variance")
        },
        "collocation": {
            "pairs": len(coll.pairs),
            "unmatched_records": coll.unmatched,
            "missing_cell": coll.missing_cell,
            "max_pair_distance_km": max(p.distance_km for p in coll.pairs),
            "max_collocation_distance_km": max_collocation_distance(spec),
        },
        "drops": {k: samples.dispositions.get(k, 0) for k in
                  ("sample", "no-previous-day", "missing-cells", "latitude-out-of-range", "date-absent")},
    }


def cmd_baseline(args) -> int:
    started = _now()
    series, records = load_inputs(args.grids, args.stations)
    body = baseline_report(series, records, args.min_obs, args.threshold)
    doc = {
        "schema": REPORT_SCHEMA, "kind": "baseline",
        "manifest": manifest("baseline", {"min_obs": args.min_obs, "threshold": args.threshold},
                             inputs={"grids": args.grids, "stations": args.stations}),
        **body,
        "timestamps": {"started": started, "finished": _now()},
    }
    _write_json(args.out, doc)
    b = body["breakdown"]
    log.info("baseline: all n=%d rmse=%s", b["all"]["n"], b["all"]["rmse"])
    return EXIT_OK


def history_path(model_path) -> Path:
    p = Path(model_path)
    return p.with_name(p.stem + ".history.csv")


def cmd_train(args) -> int:
    series, records = load_inputs(args.grids, args.stations)
    samples = build_samples(series, records)
    config = TrainConfig(lr=args.lr, epochs=args.epochs, batch_size=args.batch, seed=args.seed,
                         regime=args.regime, split=args.split)
    result = train(samples.samples, config)
    result.model.meta.update({
        "manifest": manifest("train", {"lr": args.lr, "epochs": args.epochs, "batch": args.batch,
                                       "regime": args.regime, "split": args.split},
                             seeds={"seed": args.seed},
                             inputs={"grids": args.grids, "stations": args.stations}),
    })
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(serialize_model(result.model), encoding="utf-8")
    hist = Path(args.history) if args.history else history_path(out)
    hist.write_text(result.history.to_csv(), encoding="utf-8")
    log.info("trained %s model on %d samples; final heldout rmse %.5f",
             args.regime, len(result.train_idx), result.history.heldout_rmse[-1])
    return EXIT_OK


def evaluation_report(model, series, records, subset: str = "heldout") -> dict:
    if model.scaler is None:
        raise DataError("model has no feature scaler")
    samples = build_samples(series, records).samples
    meta = model.meta or {}
    regime = meta.get("regime", "all")
    threshold = meta.get("threshold", EXTREME_THRESHOLD)
    pool = filter_regime(samples, regime, threshold)
    if subset == "heldout" and "seed" in meta and len(pool) >= 2:
        cfg = TrainConfig(seed=int(meta["seed"]), regime=regime, split=meta.get("split", "random"))
        _, test_idx = split_for(pool, cfg)
        pool = [pool[i] for i in test_idx]
    if not pool:
        raise DataError("no samples to evaluate")
    ev = evaluate(model, pool)
    spec = next(iter(series.values())).spec
    pairs = _pairs_from_samples(pool, spec)
    return {
        "regime": regime,
        "subset": subset,
        "n_samples": len(pool),
        "negative_predictions": ev.negative_count,
        "table": compare_models(pairs, ev.predictions, threshold),
        "sites": [s.to_dict() for s in per_site(pairs, threshold=threshold, preds=ev.predictions)],
        "baseline_sites": [s.to_dict() for s in per_site(pairs, threshold=threshold)],
    }


def cmd_evaluate(args) -> int:
    started = _now()
    try:
        model = deserialize_model(Path(args.model).read_text(encoding="utf-8"))
    except ModelFormatError as e:
        raise DataError(f"{args.model}: {e}") from e
    series, records = load_inputs(args.grids, args.stations)
    body = evaluation_report(model, series, records, args.subset)
    doc = {
        "schema": REPORT_SCHEMA, "kind": "evaluate",
        "manifest": manifest("evaluate", {"subset": args.subset},
                             inputs={"model": args.model, "grids": args.grids,
                                     "stations": args.stations}),
        **body,
        "timestamps": {"started": started, "finished": _now()},
    }
    _write_json(args.out, doc)
    t = body["table"]
    log.info("all-days rmse: baseline %s, model %s", t["baseline"]["all"]["rmse"], t["model"]["all"]["rmse"])
    return EXIT_OK


def cmd_map(args) -> int:
    try:
        report = json.loads(Path(args.report).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"{args.report}: {e}") from e
    if "sites" not in report:
        raise DataError(f"{args.report} has no per-site statistics")
    title = f"{report.get('kind', 'report')} per-site {args.metric.upper()}"
    svg = render_site_map(report["sites"], args.metric, title)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(svg, encoding="utf-8")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="aodbench", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a seeded synthetic grid series and station CSV")
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--days", type=int, default=400)
    s.add_argument("--sites", type=int, default=12)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_synth)

    b = sub.add_parser("baseline", help="score the reanalysis against station truth")
    b.add_argument("--grids", required=True)
    b.add_argument("--stations", required=True)
    b.add_argument("--min-obs", type=int, default=366)
    b.add_argument("--threshold", type=float, default=EXTREME_THRESHOLD)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_baseline)

    t = sub.add_parser("train", help="train the patch CNN for one regime")
    t.add_argument("--grids", required=True)
    t.add_argument("--stations", required=True)
    t.add_argument("--regime", choices=("all", "extreme"), default="all")
    t.add_argument("--epochs", type=int, default=50)
    t.add_argument("--batch", type=int, default=32)
    t.add_argument("--lr", type=float, default=0.003)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--split", choices=("random", "temporal"), default="random")
    t.add_argument("--history", help="history CSV path (default: <out>.history.csv)")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="compare a trained model with the reanalysis baseline")
    e.add_argument("--model", required=True)
    e.add_argument("--grids", required=True)
    e.add_argument("--stations", required=True)
    e.add_argument("--subset", choices=("heldout", "all"), default="heldout")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evaluate)

    m = sub.add_parser("map", help="render per-site statistics as an SVG map")
    m.add_argument("--report", required=True)
    m.add_argument("--metric", choices=METRICS, default="rmse")
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_map)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NonFiniteLossError as e:
        print(f"aodbench: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, TooFewSamplesError, FileNotFoundError) as e:
        print(f"aodbench: data error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as e:
        print(f"aodbench: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except OSError as e:
        print(f"aodbench: I/O error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
