import inspect

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import ks_2samp

from canreid.can_log import dumps
from canreid.channels import ChannelId, extract_channels, filter_channels
from canreid.synthetic import (
    PROFILE_RANGES,
    BusLayout,
    ByteRole,
    DriverProfile,
    MessageSpec,
    default_layout,
    gen_cohort,
    gen_trace,
    planted_series,
    spread_profiles,
)

THROTTLE = ChannelId(0x0A0, 0)


def test_same_inputs_same_log(layout):
    p = DriverProfile("x", accel_aggression=0.3)
    a = gen_trace(p, layout, 60, seed=4)
    b = gen_trace(p, layout, 60, seed=4)
    assert dumps(a) == dumps(b)
    assert dumps(gen_trace(p, layout, 60, seed=5)) != dumps(a)


def test_short_traces_rejected(layout):
    with pytest.raises(ValueError):
        gen_trace(DriverProfile("x"), layout, 30, seed=0)


def test_default_layout_roles(layout):
    assert len(layout.messages) == 8
    assert {m.period for m in layout.messages} == {0.01, 0.1}
    assert len(layout.channels("signal")) == 3
    assert len(layout.channels("constant")) == 4
    assert len(layout.channels("counter")) == 2
    assert len(layout.channels("noise")) == 5


def test_layout_fidelity_and_jitter(small_cohort, layout):
    specs = {m.can_id: m for m in layout.messages}
    log = next(iter(small_cohort.logs.values()))
    assert {f.can_id for f in log.frames} == set(specs)
    assert all(f.len == len(specs[f.can_id].bytes) for f in log.frames)
    for cid, m in specs.items():
        t = np.array([f.timestamp_us for f in log.frames if f.can_id == cid]) / 1e6
        gaps = np.diff(t) / m.period
        assert gaps.min() >= 0.9 - 1e-6 and gaps.max() <= 1.1 + 1e-6


def test_byte_roles(small_cohort, layout):
    chs = extract_channels(next(iter(small_cohort.logs.values())))
    for m in layout.messages:
        for off, b in enumerate(m.bytes):
            v = chs[ChannelId(m.can_id, off)].values.astype(int)
            if b.role == "constant":
                assert np.all(v == b.value)
            elif b.role == "counter":
                assert v[0] == b.value
                assert np.all(np.diff(v) % 256 == b.step % 256)


def test_checksum_role():
    layout = BusLayout((MessageSpec(0x50, 0.1, (ByteRole("signal", "speed"), ByteRole("noise"),
                                                ByteRole("checksum"))),))
    chs = extract_channels(gen_trace(DriverProfile("x"), layout, 60, seed=0))
    a, b, c = (chs[ChannelId(0x50, i)].values for i in range(3))
    assert np.array_equal(c, a ^ b)


def test_layout_json_round_trip(tmp_path, layout):
    layout.save(tmp_path / "layout.json")
    assert BusLayout.load(tmp_path / "layout.json") == layout


def test_layout_validation():
    with pytest.raises(ValueError):
        MessageSpec(0x1, 0.1, ())
    with pytest.raises(ValueError):
        MessageSpec(0x1, 0.0, (ByteRole("noise"),))
    with pytest.raises(ValueError):
        ByteRole("signal", "rpm")
    with pytest.raises(ValueError):
        ByteRole("counter", step=256)
    with pytest.raises(ValueError):
        DriverProfile("x", accel_aggression=1.5)


def test_aggression_changes_throttle_distribution(layout):
    def throttle(aggr):
        log = gen_trace(DriverProfile("x", accel_aggression=aggr), layout, 600, seed=1)
        return extract_channels(log)[THROTTLE].values

    assert ks_2samp(throttle(0.2), throttle(0.9)).statistic > 0.2


def test_cohort_shares_channels(layout):
    c = gen_cohort(5, duration=60, seed=2)
    assert len(c.logs) == 5
    universes = {frozenset(extract_channels(lg)) for lg in c.logs.values()}
    assert universes == {frozenset(layout.channels())}
    assert len({(p.accel_aggression, p.brake_sharpness) for p in c.profiles.values()}) == 5
    genders = [c.metas[d].gender for d in sorted(c.metas)]
    assert genders == ["male", "female", "male", "female", "male"]
    with pytest.raises(ValueError):
        gen_cohort(1, duration=60)


def test_profile_spread():
    same = spread_profiles(4, separation=0.0)
    assert len({tuple(vars(p).values())[1:] for p in same}) == 1
    wide = spread_profiles(8, separation=1.0)
    for name, (lo, hi) in PROFILE_RANGES.items():
        vals = [getattr(p, name) for p in wide]
        assert lo <= min(vals) and max(vals) <= hi
        assert max(vals) - min(vals) > 0.5 * (hi - lo)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_wider_separation_spreads_profiles(a, b):
    lo, hi = sorted((a, b))
    def spread(s):
        ps = spread_profiles(5, s)
        return max(p.accel_aggression for p in ps) - min(p.accel_aggression for p in ps)
    assert spread(lo) <= spread(hi) + 1e-12


def test_full_scale_defaults():
    sig = inspect.signature(gen_cohort)
    assert sig.parameters["duration"].default == 30 * 60


def test_planted_series():
    series, planted = planted_series(n_drivers=3, n_noise=10, duration=60, rate_hz=10, seed=0)
    assert planted == ChannelId(0x10A, 0)
    for d, chans in series.items():
        assert len(chans) == 11
        assert max(chans) == planted
    means = [series[d][planted].values.mean() for d in sorted(series)]
    assert np.allclose(means, [0.25, 0.5, 0.75], atol=0.01)


def test_filter_on_generated_logs_is_idempotent(small_cohort):
    for lg in small_cohort.logs.values():
        once = filter_channels(extract_channels(lg))
        assert filter_channels(once) == once
