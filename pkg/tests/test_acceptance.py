"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""
import datetime as dt
import math
import time

import numpy as np
import pytest

from aodbench.cli import evaluation_report, main
from aodbench.collocation import build_samples, collocate, max_collocation_distance
from aodbench.geo_grid import MERRA2, GridField, GridSpec, haversine_km, nearest_index, parse_grid_file, write_grid_file
from aodbench.metrics import breakdown_arrays, compute_stats
from aodbench.nn import (
    AdamState, BatchNorm, Conv2d, Dense, Dropout, Flatten, MaxPool, ReLU, ScalingParams,
    adam_step, default_architecture, deserialize_model, serialize_model,
)
from aodbench.nn.gradcheck import check_layer, check_model
from aodbench.stations import Site, StationRecord, angstrom_convert
from aodbench.synth import SynthConfig, gen_grid_series, gen_station_truth
from aodbench.training import TrainConfig, filter_regime, train


@pytest.fixture(scope="module")
def seed7():
    config = SynthConfig(seed=7)
    series = {f.date: f for f in gen_grid_series(config)}
    truth = gen_station_truth(list(series.values()), config)
    return series, truth.records, build_samples(series, truth.records).samples


@pytest.fixture(scope="module")
def trained_all(seed7):
    _, _, samples = seed7
    start = time.perf_counter()
    result = train(samples, TrainConfig(epochs=50, regime="all", seed=0))
    return result, time.perf_counter() - start


def _layer_instances(seed):
    rng = np.random.default_rng(seed)
    conv = Conv2d(2, 3)
    conv.params["W"] = rng.standard_normal(conv.params["W"].shape)
    conv.params["b"] = rng.standard_normal(3)
    bn = BatchNorm(3)
    bn.params["gamma"] = rng.uniform(0.5, 1.5, 3)
    bn.params["beta"] = rng.standard_normal(3)
    dense = Dense(12, 5)
    dense.params["W"] = rng.standard_normal((5, 12))
    dense.params["b"] = rng.standard_normal(5)
    return rng, [
        (conv, rng.standard_normal((2, 2, 6, 6))),
        (bn, rng.standard_normal((4, 3, 3, 3))),
        (ReLU(), rng.standard_normal((3, 7))),
        (MaxPool(2, 2), rng.standard_normal((2, 2, 6, 6))),
        (Flatten(), rng.standard_normal((2, 3, 2, 2))),
        (dense, rng.standard_normal((3, 12))),
        (Dropout(0.0), rng.standard_normal((3, 7))),
    ]


def test_criterion_1_gradient_oracle(criterion):
    start = time.perf_counter()
    worst, instances = 0.0, 0
    for seed in range(3):
        rng, cases = _layer_instances(seed)
        for layer, x in cases:
            worst = max(worst, max(check_layer(layer, x, rng).values()))
            instances += 1
    for seed in range(3):
        rng = np.random.default_rng(100 + seed)
        model = default_architecture(seed, dropout_p=0.0)
        x = rng.random((3, 1, 30, 30))
        worst = max(worst, max(check_model(model, x, rng.random((3, 1)), rng, per_tensor=6).values()))
        instances += 1
    elapsed = time.perf_counter() - start
    criterion(1, worst < 1e-6 and instances >= 20 and elapsed < 60,
              f"max rel err {worst:.2e} over {instances} instances in {elapsed:.1f}s")


def _naive_stats(pred, truth):
    e = [p - t for p, t in zip(pred, truth)]
    n = len(e)
    return (math.sqrt(math.fsum(x * x for x in e) / n), math.fsum(abs(x) for x in e) / n,
            math.fsum(e) / n)


def test_criterion_2_metric_oracle(criterion):
    rng = np.random.default_rng(2)
    worst, invariants = 0.0, True
    for _ in range(1000):
        n = int(rng.integers(1, 200))
        truth = rng.gamma(2.0, 0.2, n)
        pred = truth + rng.normal(rng.normal(0, 0.1), rng.uniform(0.01, 0.5), n)
        s = compute_stats(pred, truth)
        ref = _naive_stats(pred.tolist(), truth.tolist())
        for got, want in zip((s.rmse, s.mae, s.mbe), ref):
            worst = max(worst, abs(got - want) / max(abs(want), 1e-300))
        invariants &= s.mae >= abs(s.mbe) and s.rmse >= abs(s.mbe)
    criterion(2, worst <= 1e-12 and invariants, f"max rel diff {worst:.1e}; invariants hold: {invariants}")


def test_criterion_3_collocation_oracle(criterion):
    rng = np.random.default_rng(3)
    lats = MERRA2.lat0 + MERRA2.dlat * np.arange(MERRA2.nlat)
    lons = MERRA2.lon0 + MERRA2.dlon * np.arange(MERRA2.nlon)
    mismatches = 0
    for lat, lon in zip(rng.uniform(-90, 90, 1000), rng.uniform(-180, 180, 1000)):
        d = haversine_km(lat, lon, lats[:, None], lons[None, :])
        best = d.min()
        r, c = nearest_index(MERRA2, lat, lon)
        if not d[r, c] <= best + 1e-9:
            mismatches += 1
    bound = max_collocation_distance(MERRA2)
    field = GridField(MERRA2, dt.date(2010, 1, 2), np.full(MERRA2.shape, 0.2, np.float32))
    records = [StationRecord(Site(f"S{i}", float(la), float(lo)), field.date, 0.3)
               for i, (la, lo) in enumerate(zip(rng.uniform(-89, 89, 500), rng.uniform(-180, 180, 500)))]
    worst_pair = max(p.distance_km for p in collocate({field.date: field}, records).pairs)
    ok = mismatches == 0 and worst_pair <= bound and 40 <= bound <= 45
    criterion(3, ok, f"{mismatches} argmin mismatches; max pair {worst_pair:.3f} km <= bound {bound:.3f} km")


def test_criterion_4_round_trips(criterion):
    rng = np.random.default_rng(4)
    grid_ok = 0
    for i in range(100):
        spec = GridSpec(float(rng.uniform(-90, 0)), 0.5, int(rng.integers(1, 40)),
                        float(rng.uniform(-180, 0)), 0.625, int(rng.integers(1, 40)))
        vals = rng.gamma(1.5, 0.3, spec.shape).astype(np.float32)
        vals[rng.random(spec.shape) < 0.1] = np.nan
        f = GridField(spec, dt.date(2008, 1, 1) + dt.timedelta(days=int(i)), vals)
        grid_ok += parse_grid_file(write_grid_file(f)) == f
    model_ok = 0
    for i in range(100):
        m = default_architecture(i, channels=(2, 3), dense=(6,), input_size=12)
        for _, p in m.named_params():
            p[:] = rng.standard_normal(p.shape) * 10.0 ** rng.integers(-8, 3)
        for layer in m.layers:
            if isinstance(layer, BatchNorm):
                layer.buffers["running_var"] = rng.random(layer.channels) + 1e-3
        m.scaler = ScalingParams(float(rng.random()), 1.0 + float(rng.random()))
        back = deserialize_model(serialize_model(m))
        same = all(np.array_equal(a, b) for (_, a), (_, b) in zip(m.named_params(), back.named_params()))
        same &= all(np.array_equal(la.buffers[k], lb.buffers[k])
                    for la, lb in zip(m.layers, back.layers) for k in la.buffers)
        model_ok += same and back.scaler == m.scaler
    criterion(4, grid_ok == 100 and model_ok == 100, f"AODGRID {grid_ok}/100, aodcnn {model_ok}/100 exact")


@pytest.mark.slow
def test_criterion_5_learnability(criterion, seed7, trained_all):
    series, records, _ = seed7
    result, elapsed = trained_all
    table = evaluation_report(result.model, series, records, "heldout")["table"]
    base, cnn = table["baseline"], table["model"]
    ratio = cnn["all"]["rmse"] / base["all"]["rmse"]
    ok = ratio <= 0.8 and abs(cnn["extreme"]["mbe"]) < abs(base["extreme"]["mbe"]) and elapsed < 600
    criterion(5, ok, f"all-days RMSE cnn {cnn['all']['rmse']:.4f} vs baseline {base['all']['rmse']:.4f} "
                     f"(ratio {ratio:.3f}); extreme MBE cnn {cnn['extreme']['mbe']:.4f} vs baseline "
                     f"{base['extreme']['mbe']:.4f}; trained in {elapsed:.0f}s")


@pytest.mark.slow
def test_criterion_6_two_regimes(criterion, seed7, trained_all):
    _, _, samples = seed7
    brute = sum(1 for s in samples if s.target > 0.7)
    res = train(samples, TrainConfig(epochs=2, regime="extreme", seed=0))
    used = len(res.train_idx) + len(res.test_idx)
    only_extreme = all(s.target > 0.7 for s in res.regime_samples)
    all_model = trained_all[0].model
    distinct = serialize_model(res.model) != serialize_model(all_model)
    ok = used == brute == len(filter_regime(samples, "extreme")) and only_extreme and distinct
    criterion(6, ok, f"extreme regime used {used} samples, brute-force count {brute}; "
                     f"distinct from all-regime model: {distinct}")


def test_criterion_7_determinism(criterion, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["synth", "--seed", "7", "--days", "40", "--sites", "4", "--out-dir", str(d)]) == 0
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    synth_same = all((a / f).read_bytes() == (b / f).read_bytes() for f in files)
    synth_same &= files == sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    args = ["train", "--grids", str(a / "grids"), "--stations", str(a / "stations.csv"),
            "--epochs", "2", "--seed", "5"]
    for name in ("m1.json", "m2.json"):
        assert main(args + ["--out", str(tmp_path / name)]) == 0
    train_same = (tmp_path / "m1.json").read_bytes() == (tmp_path / "m2.json").read_bytes()
    criterion(7, synth_same and train_same,
              f"synth byte-identical over {len(files)} files: {synth_same}; model files identical: {train_same}")


def test_criterion_8_breakdown_partition(criterion):
    rng = np.random.default_rng(8)
    ok = True
    for _ in range(200):
        n = int(rng.integers(1, 300))
        truth = rng.gamma(1.2, 0.4, n)
        pred = truth * rng.uniform(0.5, 1.5, n)
        b = breakdown_arrays(pred, truth, float(rng.uniform(0.1, 1.5)))
        ok &= b.normal.n + b.extreme.n == b.all.n == n
        high = breakdown_arrays(pred, truth, float(truth.max()) + 1.0)
        ok &= high.extreme.n == 0 and high.normal.n == n
    criterion(8, ok, "normal.n + extreme.n == all.n on 200 datasets; threshold above max empties extreme")


def test_criterion_9_adam_first_step(criterion):
    p = {"w": np.array([0.0])}
    adam_step(p, {"w": np.array([0.2])}, AdamState(lr=0.003))
    got = float(p["w"][0])
    criterion(9, abs(got - (-0.003)) <= 1.5e-7, f"param after one step {got:.10f}")


def test_criterion_10_angstrom(criterion):
    identity = all(angstrom_convert(x, 0.0) == x for x in (0.0, 0.05, 0.2, 1.7, 4.0))
    case = angstrom_convert(0.2, 1.4)
    rng = np.random.default_rng(10)
    worst = 0.0
    for x, a in zip(rng.uniform(0.01, 3, 500), rng.uniform(-0.5, 2.5, 500)):
        back = angstrom_convert(angstrom_convert(x, a), a, 550.0, 500.0)
        worst = max(worst, abs(back - x) / x)
    ok = identity and abs(case - 0.175017) <= 1e-5 and worst <= 1e-12
    criterion(10, ok, f"alpha=0 identity: {identity}; (0.2, 1.4) -> {case:.6f}; max round-trip rel {worst:.1e}")
