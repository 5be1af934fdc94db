import numpy as np
import pytest

from canreid.channels import ChannelId, TimeSeries
from canreid.errors import ConfigInfeasible, EmptyDataset, ShapeMismatch
from canreid.its import ItsConfig, ItsModel, build_its, early_stopping, plan_layers, train_its
from canreid.sampling import SplitSpec, balance, split_traces
from canreid.synthetic import planted_series

from conftest import tiny_its_config

CH = ChannelId(0x10, 0)


def test_default_plan_at_100hz():
    p = plan_layers(ItsConfig(), 100.0)
    assert p.seg_points == 300
    assert (p.kernel1, p.stride1) == (50, 5)
    assert p.conv1_len == 51
    assert p.pooled_len == 11
    # one pooled step spans 25 input points, i.e. 4 Hz: 0.5 s -> 2 points, 0.05 s -> clamped to 1
    assert (p.kernel2, p.stride2) == (2, 1)


def test_default_model_shapes():
    m = build_its(ItsConfig(n_classes=5), 100.0, CH, seed=0)
    x = np.random.default_rng(0).uniform(0, 1, (2, 20, 300))
    assert m.forward(x).shape == (2, 5)
    assert m.features(x).shape == (2, 64)
    assert m.lstm.Wx.shape == (64, 64)
    assert m.attention_weights.shape == (2, 20)


def test_infeasible_configs():
    with pytest.raises(ConfigInfeasible):
        plan_layers(ItsConfig(kernel=0.004), 100.0)
    with pytest.raises(ConfigInfeasible):
        plan_layers(ItsConfig(seg_len=1.0, kernel=0.9, pool=5), 100.0)
    with pytest.raises(ConfigInfeasible):
        ItsConfig(kernel=4.0)
    with pytest.raises(ConfigInfeasible):
        ItsConfig(head="binary", n_classes=3)


def test_outputs_are_probabilities(rng):
    x = rng.uniform(0, 1, (4, 3, 20))
    p = ItsModel(tiny_its_config(5), 10.0, CH, seed=1).predict_proba(x)
    assert np.allclose(p.sum(axis=1), 1, atol=1e-9)
    b = ItsModel(tiny_its_config(2, "binary"), 10.0, CH, seed=1).predict_proba(x)
    assert np.all((b[:, 1] > 0) & (b[:, 1] < 1))


def test_same_seed_same_parameters():
    a = ItsModel(tiny_its_config(), 10.0, CH, seed=9)
    b = ItsModel(tiny_its_config(), 10.0, CH, seed=9)
    assert a.to_bytes() == b.to_bytes()
    assert a.n_params() == b.n_params()
    assert ItsModel(tiny_its_config(), 10.0, CH, seed=10).to_bytes() != a.to_bytes()


def test_batch_independence_in_inference(rng):
    m = ItsModel(tiny_its_config(), 10.0, CH, seed=2)
    x = rng.uniform(0, 1, (3, 3, 20))
    both = m.predict_proba(np.concatenate([x[:1], x[:1], x[1:]]))
    assert np.array_equal(both[0], both[1])
    assert np.allclose(both[0], m.predict_proba(x[:1])[0], atol=1e-15)


def test_zero_input_is_finite():
    m = ItsModel(tiny_its_config(), 10.0, CH, seed=2)
    assert np.all(np.isfinite(m.predict_proba(np.zeros((2, 3, 20)))))


def test_shape_mismatch():
    m = ItsModel(tiny_its_config(), 10.0, CH, seed=2)
    with pytest.raises(ShapeMismatch):
        m.forward(np.zeros((2, 3, 21)))


def test_cnn_is_shared_across_segments(rng):
    m = ItsModel(tiny_its_config(), 10.0, CH, seed=4)
    x = rng.uniform(0, 1, (1, 4, 20))
    perm = x[:, [2, 0, 3, 1]]
    f, fp = m.segment_features(x), m.segment_features(perm)
    assert np.allclose(fp[0, 0], f[0, 2], atol=1e-15)
    assert np.allclose(fp[0, 3], f[0, 1], atol=1e-15)


def test_serialization_round_trip(rng):
    m = ItsModel(tiny_its_config(), 10.0, CH, seed=4)
    m.forward(rng.uniform(0, 1, (4, 3, 20)), train=True)
    again = ItsModel.from_bytes(m.to_bytes())
    assert again.to_bytes() == m.to_bytes()
    assert again.channel == CH
    x = rng.uniform(0, 1, (2, 3, 20))
    assert np.array_equal(again.predict_proba(x), m.predict_proba(x))


# -- early stopping --------------------------------------------------------------

def run_stopping(accs, patience, max_epochs=20, losses=None):
    state = {"epoch": 0}
    seen = []

    def run_epoch(e):
        state["epoch"] = e

    def evaluate():
        a = accs[state["epoch"] - 1]
        seen.append(a)
        return a if losses is None else (a, losses[state["epoch"] - 1])

    restored = {}
    best, epochs, hist = early_stopping(run_epoch, evaluate, lambda: state["epoch"],
                                        lambda s: restored.setdefault("epoch", s), max_epochs, patience)
    return best, epochs, hist, restored["epoch"]


def test_patience_one_stops_after_two_epochs():
    best, epochs, hist, restored = run_stopping([0.6, 0.6, 0.6, 0.6], patience=1)
    assert epochs == 2
    assert restored == 1


def test_early_stopping_keeps_best():
    best, epochs, hist, restored = run_stopping([0.5, 0.7, 0.6, 0.65, 0.9], patience=2)
    assert (best, epochs, restored) == (0.7, 4, 2)
    assert best >= max(hist)


def test_lower_loss_breaks_accuracy_ties():
    best, epochs, _, restored = run_stopping([0.8, 0.8, 0.8, 0.8], 2, losses=[0.5, 0.4, 0.45, 0.41])
    assert (best, epochs, restored) == (0.8, 4, 2)


def test_max_epochs_cap():
    _, epochs, _, restored = run_stopping(list(np.linspace(0, 1, 10)), patience=3, max_epochs=5)
    assert (epochs, restored) == (5, 5)


# -- training on separable and unlearnable toy channels --------------------------

def square_vs_flat(seed, duration=240.0, rate=20.0):
    rng = np.random.default_rng(seed)
    n = int(duration * rate)
    t = np.arange(n) / rate
    square = 0.5 + 0.4 * np.sign(np.sin(2 * np.pi * 4 * t)) + rng.normal(0, 0.05, n)
    flat = 0.5 + rng.normal(0, 0.05, n)
    return {
        "square": {CH: TimeSeries(CH, rate, np.clip(square, 0, 1))},
        "flat": {CH: TimeSeries(CH, rate, np.clip(flat, 0, 1))},
    }


def tiny_trainer(head="binary"):
    return ItsModel(tiny_its_config(2, head, seg_len=1.0, kernel=0.3), 20.0, CH, seed=0)


def test_square_wave_vs_flat_is_learnt():
    pools = split_traces(square_vs_flat(0), SplitSpec(sample_duration=6, shift=1.0))
    m = tiny_trainer()
    train_its(m, balance(pools.train, 0), pools.validation, max_epochs=5, patience=5, batch_size=16)
    assert m.meta.val_accuracy >= 0.95
    assert m.meta.epochs_run <= 5


def shuffled(pool, rng):
    return pool.relabel(rng.permutation(pool.labels), pool.classes)


def test_shuffled_labels_give_chance():
    # labels permuted in every pool carry no information about the input,
    # even though the planted channel itself separates the drivers perfectly
    series, ch = planted_series(n_drivers=2, n_noise=0, duration=6000, rate_hz=10.0, seed=3)
    pools = split_traces(series, SplitSpec(sample_duration=10, shift=10.0))
    rng = np.random.default_rng(0)
    m = ItsModel(tiny_its_config(2, "binary"), 10.0, ch, seed=0)
    train_its(m, balance(shuffled(pools.train, rng), 0), shuffled(pools.validation, rng),
              max_epochs=3, patience=1, batch_size=16)
    test = shuffled(pools.test, rng)
    acc = float(np.mean(np.argmax(m.predict_proba(test.segments(ch, 2.0)), axis=1) == test.labels))
    assert abs(acc - 0.5) <= 0.1


def test_training_is_deterministic():
    pools = split_traces(square_vs_flat(1, duration=120), SplitSpec(sample_duration=6, shift=2.0))
    a, b = tiny_trainer("multiclass"), tiny_trainer("multiclass")
    for m in (a, b):
        train_its(m, pools.train, pools.validation, max_epochs=2, patience=2, batch_size=8)
    assert a.to_bytes() == b.to_bytes()


def test_empty_dataset():
    pools = split_traces(square_vs_flat(1, duration=120), SplitSpec(sample_duration=6, shift=2.0))
    with pytest.raises(EmptyDataset):
        train_its(tiny_trainer(), pools.train.subset([]), pools.validation)
