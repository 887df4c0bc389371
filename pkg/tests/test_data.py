import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xcpd.data import (
    SeriesDataset,
    SynthSpec,
    backbone_naive,
    backbone_ridge,
    load_csv,
    metrics,
    planted_groups,
    seasonal_naive,
    synth_generate,
    window_count,
    windowize,
    write_csv,
)
from xcpd.errors import ConfigurationError, IngestionError


def small_ds(values, train=0.5, val=0.25):
    values = np.atleast_2d(np.asarray(values, dtype=float))
    return SeriesDataset(values, tuple(f"c{i}" for i in range(len(values))), "hourly", train, val)


# -- synthetic --------------------------------------------------------------


def test_synthetic_is_deterministic():
    spec = SynthSpec(length=2000)
    a, b = synth_generate(spec, 7), synth_generate(spec, 7)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, synth_generate(spec, 8).values)


def test_phase_shifted_copies_without_noise():
    spec = SynthSpec(channels=3, length=2400, low_periods=(24.0,), mid_amplitude=0.0,
                     noise_std=0.0, mid_groups=((0, 1),))
    ds = synth_generate(spec, 3)
    phases = np.array(ds.meta["low_phases"])[:, 0]
    seg = ds.values[:, :24]
    for i in range(3):
        for j in range(3):
            r = np.corrcoef(seg[i], seg[j])[0, 1]
            assert r == pytest.approx(math.cos(phases[i] - phases[j]), abs=1e-9)


def test_planted_lead_lag():
    spec = SynthSpec(channels=4, length=2000, low_amplitude=0.0, noise_std=0.0,
                     mid_groups=((0, 1, 2),), mid_lag=5)
    v = synth_generate(spec, 0).values
    np.testing.assert_allclose(v[0, :-5], v[1, 5:], atol=1e-12)
    np.testing.assert_allclose(v[1], v[2], atol=0)
    assert np.all(v[3] == 0)


def test_synthetic_validation():
    with pytest.raises(ConfigurationError):
        SynthSpec(channels=1, mid_groups=()).validate()
    with pytest.raises(ConfigurationError):
        SynthSpec(channels=4, mid_groups=((0, 5),)).validate()
    with pytest.raises(ConfigurationError):
        SynthSpec(channels=4, mid_groups=((0, 1), (1, 2))).validate()
    with pytest.raises(ConfigurationError):
        SynthSpec(length=100).validate()


def test_planted_groups():
    assert planted_groups(8) == ((0, 1, 2, 3), (4, 5, 6, 7))
    assert planted_groups(5) == ((0, 1, 2, 3, 4),)
    assert planted_groups(6) == ((0, 1, 2, 3), (4, 5))


# -- csv --------------------------------------------------------------------


def test_csv_roundtrip(tmp_path):
    ds = synth_generate(SynthSpec(channels=3, length=2000, mid_groups=((0, 1),)), 1)
    path = tmp_path / "d.csv"
    write_csv(path, ds)
    back = load_csv(path)
    assert np.array_equal(back.values, ds.values)
    assert back.channel_names == ds.channel_names


def test_etth1_header(tmp_path):
    path = tmp_path / "ETTh1.csv"
    path.write_text("date,HUFL,HULL,MUFL,MULL,LUFL,LULL,OT\n"
                    "2016-07-01 00:00:00,5.827,2.009,1.599,0.462,4.203,1.340,30.531\n"
                    "2016-07-01 01:00:00,5.693,2.076,1.492,0.426,4.142,1.371,27.787\n")
    ds = load_csv(path)
    assert ds.channels == 7 and ds.length == 2
    assert ds.channel_names[-1] == "OT"


def test_blank_cell_names_row(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("date,a,b\n0,1.0,2.0\n1,,3.0\n")
    with pytest.raises(IngestionError, match="row 3") as err:
        load_csv(path)
    assert err.value.row == 3 and err.value.column == 1


def test_ragged_and_garbage_rows(tmp_path):
    path = tmp_path / "ragged.csv"
    path.write_text("date,a,b\n0,1.0\n")
    with pytest.raises(IngestionError, match="row 2"):
        load_csv(path)
    path.write_text("date,a,b\n0,1.0,abc\n")
    with pytest.raises(IngestionError, match="column 2"):
        load_csv(path)


def test_missing_file(tmp_path):
    with pytest.raises(IngestionError):
        load_csv(tmp_path / "nope.csv")


# -- windows ----------------------------------------------------------------


def test_window_counts():
    assert window_count(10, 4, 2, 1) == 5
    assert window_count(10, 4, 2, 10) == 1
    ds = small_ds(np.arange(20.0))
    assert len(windowize(ds, 4, 2, split="train", normalize=False)) == 5


def test_window_content():
    ds = small_ds(np.arange(40.0))
    w = windowize(ds, 4, 2, split="val", normalize=False)
    assert len(w) == 5
    assert np.array_equal(w.lookback[0, 0], [20, 21, 22, 23])
    assert np.array_equal(w.target[0, 0], [24, 25])
    assert w.starts[0] == 24


def test_horizon_exceeding_split():
    with pytest.raises(ConfigurationError):
        windowize(small_ds(np.arange(20.0)), 4, 3, split="val")


@settings(max_examples=40, deadline=None)
@given(length=st.integers(60, 200), lookback=st.integers(1, 8), horizon=st.integers(1, 5),
       stride=st.integers(1, 4))
def test_windows_stay_inside_splits(length, lookback, horizon, stride):
    ds = small_ds(np.arange(float(length)), 0.6, 0.2)
    for split, (lo, hi) in ds.bounds().items():
        w = windowize(ds, lookback, horizon, stride, split=split, normalize=False)
        assert np.all(w.starts - lookback >= lo)
        assert np.all(w.starts + horizon <= hi)
        assert np.array_equal(w.lookback[:, 0, 0], w.starts - lookback)


def test_normalization_uses_train_only():
    v = np.concatenate([np.zeros(50), np.full(50, 100.0)]) + np.arange(100) * 0.01
    ds = small_ds(v)
    a, b = ds.bounds()["train"]
    assert ds.mean[0] == pytest.approx(v[a:b].mean())
    lo, hi = ds.bounds()["test"]
    assert abs(v[lo:hi].mean() - ds.mean[0]) > 10


# -- backbones --------------------------------------------------------------


def test_naive_cases():
    assert np.array_equal(backbone_naive(np.array([[1.0, 5.0]]), 3), [[5.0, 5.0, 5.0]])
    const = np.full((1, 8), 2.0)
    assert np.array_equal(backbone_naive(const, 4), np.full((1, 4), 2.0))
    ramp = np.arange(10.0)[None]
    err = np.arange(10.0, 14.0) - backbone_naive(ramp, 4)[0]
    assert np.array_equal(err, [1.0, 2.0, 3.0, 4.0])


def test_ridge_recovers_planted_map(rng):
    w_true = rng.standard_normal((2, 5, 3))
    b_true = rng.standard_normal((2, 3))
    x = rng.standard_normal((200, 2, 5))
    y = np.einsum("wct,ctk->wck", x, w_true) + b_true
    model = backbone_ridge(x, y, 1e-10)
    np.testing.assert_allclose(model.weights, w_true, atol=1e-6)
    np.testing.assert_allclose(model.intercept, b_true, atol=1e-6)


def test_ridge_limits(rng):
    x = rng.standard_normal((50, 1, 4))
    y = rng.standard_normal((50, 1, 2))
    heavy = backbone_ridge(x, y, 1e12)
    assert np.abs(heavy.weights).max() < 1e-9
    np.testing.assert_allclose(heavy.predict(x[:3]), np.broadcast_to(y.mean(axis=0), (3, 1, 2)),
                               atol=1e-8)
    const = backbone_ridge(np.full((10, 1, 4), 3.0), np.full((10, 1, 2), 3.0), 1.0)
    np.testing.assert_allclose(const.predict(np.full((1, 1, 4), 3.0)), 3.0)


def test_ridge_needs_enough_windows(rng):
    with pytest.raises(ConfigurationError):
        backbone_ridge(rng.standard_normal((3, 1, 5)), rng.standard_normal((3, 1, 2)), 1.0)
    with pytest.raises(ConfigurationError):
        backbone_ridge(rng.standard_normal((9, 1, 5)), rng.standard_normal((9, 1, 2)), 0.0)


def test_ridge_is_deterministic(rng):
    x, y = rng.standard_normal((40, 2, 6)), rng.standard_normal((40, 2, 3))
    a, b = backbone_ridge(x, y, 0.5), backbone_ridge(x, y, 0.5)
    assert np.array_equal(a.weights, b.weights) and np.array_equal(a.intercept, b.intercept)


# -- metrics ----------------------------------------------------------------


def test_perfect_forecast():
    t = np.array([[[1.0, 2.0, 3.0]]])
    ins = np.array([[[0.0, 1.0, 3.0, 2.0]]])
    rep = metrics(t, t, ins, 1, naive2=t + 1)
    assert (rep.mae, rep.mse, rep.smape, rep.mase, rep.owa) == (0, 0, 0, 0, 0)


def test_scalar_case():
    rep = metrics(np.array([[12.0]]), np.array([[10.0]]))
    assert rep.mae == 2.0 and rep.mse == 4.0
    assert rep.smape == pytest.approx(200 * 2 / 22, abs=1e-12)


def test_owa_of_naive2_is_one(rng):
    truth = rng.random((5, 2, 6)) + 1
    ins = rng.random((5, 2, 30)) + 1
    naive = seasonal_naive(ins, 6, 4)
    assert metrics(naive, truth, ins, 4, naive).owa == 1.0


def test_mase_undefined_for_flat_history():
    rep = metrics(np.ones((1, 3)), np.zeros((1, 3)), np.ones((1, 5)), 1)
    assert rep.mase is None and rep.owa is None


def test_metric_invariances(rng):
    truth = rng.random((6, 2, 4)) + 0.5
    pred = truth + rng.normal(scale=0.2, size=truth.shape)
    ins = rng.random((6, 2, 10)) + 0.5
    base = metrics(pred, truth, ins, 2)
    perm = rng.permutation(6)
    shuffled = metrics(pred[perm], truth[perm], ins[perm], 2)
    assert shuffled == base
    doubled = metrics(2 * pred, 2 * truth, 2 * ins, 2)
    assert doubled.mae == pytest.approx(2 * base.mae, rel=1e-12)
    assert doubled.mse == pytest.approx(4 * base.mse, rel=1e-12)
    assert doubled.smape == pytest.approx(base.smape, rel=1e-12)
    assert doubled.mase == pytest.approx(base.mase, rel=1e-12)


def test_seasonal_naive_repeats_last_season():
    ins = np.array([[1.0, 2.0, 3.0, 4.0, 5.0]])
    assert np.array_equal(seasonal_naive(ins, 5, 2), [[4.0, 5.0, 4.0, 5.0, 4.0]])
