import datetime as dt
from dataclasses import replace

import numpy as np
import pytest

from aodbench.collocation import Sample
from aodbench.nn import ScalingParams
from aodbench.stations import Site
from aodbench.training import (
    TooFewSamplesError, TrainConfig, apply_scaler, evaluate, filter_regime, fit_scaler,
    split_70_30, split_temporal, train, train_two_regimes,
)

SITE = Site("T", 0.0, 0.0)
DAY0 = dt.date(2010, 1, 1)


def make_samples(n, seed=0, fn=None):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        patch = rng.random((30, 30)) * rng.uniform(0.2, 2.0)
        target = fn(patch) if fn else float(patch.mean())
        out.append(Sample(patch, target, SITE, DAY0 + dt.timedelta(days=i), float(patch[15, 15])))
    return out


def test_scaler_hand_case():
    s = make_samples(2)
    s[0].patch[:] = 0.0
    s[1].patch[:] = 2.0
    p = fit_scaler(s)
    assert (p.min, p.max) == (0.0, 2.0)
    assert apply_scaler(np.array([0.0, 1.0, 2.0, 3.0]), p).tolist() == [0.0, 0.5, 1.0, 1.5]


def test_scaler_degenerate_rejected():
    s = make_samples(2)
    for x in s:
        x.patch[:] = 0.3
    with pytest.raises(ValueError, match="degenerate"):
        fit_scaler(s)
    with pytest.raises(ValueError):
        ScalingParams(1.0, 1.0)


def test_scaler_ignores_test_samples():
    samples = make_samples(200, seed=1)
    samples[5].patch[0, 0] = 99.0
    res = train(samples, TrainConfig(epochs=1, seed=0))
    expected = fit_scaler(res.train_samples)
    assert res.model.scaler == expected
    if 5 in set(res.test_idx):
        assert res.model.scaler.max < 99.0


def test_split_sizes_and_determinism():
    tr, te = split_70_30(10, seed=4)
    assert (len(tr), len(te)) == (7, 3)
    tr2, te2 = split_70_30(10, seed=4)
    assert np.array_equal(tr, tr2) and np.array_equal(te, te2)


@pytest.mark.parametrize("n", [2, 3, 57, 1000])
def test_split_partitions(n):
    for seed in range(100 if n < 100 else 5):
        tr, te = split_70_30(n, seed)
        assert len(tr) == int(np.floor(0.7 * n))
        assert not set(tr) & set(te)
        assert sorted(set(tr) | set(te)) == list(range(n))


def test_split_temporal_orders_by_date():
    dates = [DAY0 + dt.timedelta(days=d) for d in (5, 1, 9, 3, 7, 2, 8, 0, 4, 6)]
    tr, te = split_temporal(dates)
    assert max(dates[i] for i in tr) < min(dates[i] for i in te)


@pytest.fixture(scope="module")
def patch_mean_run():
    samples = make_samples(1000, seed=2)
    return train(samples, TrainConfig(epochs=50, seed=1))


@pytest.mark.slow
def test_learns_patch_mean(patch_mean_run):
    res = patch_mean_run
    y = np.array([s.target for s in res.test_samples])
    ev = evaluate(res.model, res.test_samples)
    assert ev.stats.rmse < 0.25 * y.std()
    assert res.history.heldout_rmse[-1] == pytest.approx(ev.stats.rmse, rel=1e-12)
    assert len(res.history.train_loss) == 50


@pytest.mark.slow
def test_training_rmse_below_heldout(patch_mean_run):
    res = patch_mean_run
    fit = evaluate(res.model, res.train_samples).stats.rmse
    assert fit < evaluate(res.model, res.test_samples).stats.rmse


def test_training_deterministic():
    samples = make_samples(100, seed=3)
    a = train(samples, TrainConfig(epochs=2, seed=5))
    b = train(samples, TrainConfig(epochs=2, seed=5))
    assert a.history == b.history
    for k, v in a.model.params().items():
        assert np.array_equal(v, b.model.params()[k])


def test_thirty_percent_extremes_give_distinct_models():
    hot = set(np.random.default_rng(7).choice(300, 90, replace=False).tolist())
    samples = [replace(s, target=s.target + 0.8) if i in hot else replace(s, target=s.target * 0.5)
               for i, s in enumerate(make_samples(300, seed=7, fn=lambda p: min(float(p.mean()), 1.3)))]
    a, e = train_two_regimes(samples, TrainConfig(epochs=1))
    assert len(e.regime_samples) == 90
    digest = lambda m: hash(b"".join(v.tobytes() for _, v in m.named_params()))
    assert digest(a.model) != digest(e.model)


def test_extreme_regime_without_extremes():
    samples = make_samples(100, seed=4, fn=lambda p: 0.1)
    with pytest.raises(TooFewSamplesError, match="extreme"):
        train(samples, TrainConfig(epochs=1, regime="extreme"))


def test_two_regimes_are_independent():
    samples = make_samples(300, seed=5, fn=lambda p: 1.5 * float(p.mean()) + 0.2)
    extreme = filter_regime(samples, "extreme")
    assert 64 <= len(extreme) < 300
    a, e = train_two_regimes(samples, TrainConfig(epochs=1))
    assert len(a.regime_samples) == 300 and len(e.regime_samples) == len(extreme)
    assert all(s.target > 0.7 for s in e.regime_samples)
    assert a.model.meta["regime"] == "all" and e.model.meta["regime"] == "extreme"
    assert not np.array_equal(a.model.params()["0.W"], e.model.params()["0.W"]) or \
        a.model.scaler != e.model.scaler


def test_evaluate_zero_weights_returns_final_bias():
    samples = make_samples(80, seed=6)
    res = train(samples, TrainConfig(epochs=1))
    model = res.model
    for _, p in model.named_params():
        p[:] = 0.0
    model.layers[-1].params["b"][:] = 0.42
    ev = evaluate(model, samples)
    assert len(ev.predictions) == 80
    assert np.all(ev.predictions == 0.42)
    assert ev.negative_count == 0


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(regime="mixed")
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(split="spatial")
