import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from canreid.can_log import parse_log
from canreid.channels import (
    ChannelId,
    FilterConfig,
    RawChannel,
    estimate_rate,
    extract_channels,
    filter_channels,
    intersect_common,
    read_manifest,
    resample,
    write_manifest,
)
from canreid.errors import EmptyIntersection, TooFewPoints


def raw(ts, vals, ch=ChannelId(1, 0)):
    return RawChannel(ch, np.asarray(ts, dtype=float), np.asarray(vals, dtype=np.uint8))


def test_extract_splits_bytes_into_channels():
    log = parse_log("1.0 0x010 000 0x2 0x01 0x02\n1.1 0x010 000 0x2 0x03 0x04\n2.0 0x020 000 0x1 0x09\n")
    chs = extract_channels(log)
    assert set(chs) == {ChannelId(0x10, 0), ChannelId(0x10, 1), ChannelId(0x20, 0)}
    assert chs[ChannelId(0x10, 1)].values.tolist() == [2, 4]
    assert chs[ChannelId(0x10, 0)].timestamps.tolist() == [1.0, 1.1]


def test_channel_id_text_round_trip():
    ch = ChannelId(0x2C4, 3)
    assert str(ch) == "0x02c4:3"
    assert ChannelId.parse(str(ch)) == ch
    with pytest.raises(ValueError):
        ChannelId(1, 8)


def test_resample_zero_order_hold():
    ts = resample(raw([0, 0.01, 0.02], [255, 0, 255]), 100)
    assert ts.values.tolist() == [1, 0, 1]


def test_resample_holds_last_value():
    ts = resample(raw([0, 0.03], [0, 255]), 100)
    assert ts.values.tolist() == [0, 0, 0, 1]


def test_resample_needs_two_points():
    with pytest.raises(TooFewPoints):
        resample(raw([0], [1]), 10)


@given(st.lists(st.floats(0.001, 0.5), min_size=1, max_size=40), st.sampled_from([1.0, 10.0, 100.0]),
       st.data())
def test_resample_values_are_observed_bytes(gaps, rate, data):
    t = np.concatenate([[0.0], np.cumsum(gaps)])
    vals = data.draw(st.lists(st.integers(0, 255), min_size=len(t), max_size=len(t)))
    ts = resample(raw(t, vals), rate)
    assert len(ts) == int(round(t[-1] * rate)) + 1
    assert np.all((ts.values >= 0) & (ts.values <= 1))
    assert set(np.round(ts.values * 255).astype(int)) <= set(vals)
    assert ts.values[0] == vals[0] / 255


def test_estimate_rate_with_duplicate_timestamps():
    t = np.repeat(np.arange(0, 1, 0.01), 1)
    t = np.sort(np.concatenate([t, t[:3]]))
    assert estimate_rate(raw(t, np.zeros(len(t)))) == 100


def test_estimate_rate_with_jitter(rng):
    t = np.cumsum(0.02 + rng.uniform(-0.002, 0.002, 500))
    assert estimate_rate(raw(t, np.zeros(500))) == 50


def test_counter_is_dropped():
    vals = np.tile(np.arange(256), 3)[:600]
    ch = raw(np.arange(600) * 0.01, vals)
    assert filter_channels([ch], FilterConfig(min_points=100)) == {}


def test_short_channel_is_dropped(rng):
    ch = raw(np.arange(10) * 0.01, rng.integers(0, 256, 10))
    assert filter_channels([ch], FilterConfig(min_points=100)) == {}


def test_constant_is_dropped():
    ch = raw(np.arange(2000) * 0.01, np.full(2000, 7))
    assert filter_channels([ch]) == {}


def test_noise_is_kept(rng):
    ch = raw(np.arange(2000) * 0.01, rng.integers(0, 256, 2000))
    assert list(filter_channels([ch])) == [ch.id]


def test_intersection():
    a, b, c = ChannelId(1, 0), ChannelId(2, 0), ChannelId(3, 0)
    assert intersect_common({"x": [a, b], "y": [b, c]}) == {b}
    with pytest.raises(EmptyIntersection):
        intersect_common({"x": [a], "y": [c]})


def test_manifest_round_trip(tmp_path):
    entries = [(ChannelId(0xA0, 0), 100.0, 1234), (ChannelId(0x3E9, 1), 10.0, 99)]
    write_manifest(tmp_path / "m.txt", entries)
    assert read_manifest(tmp_path / "m.txt") == entries


def test_filter_keeps_exactly_signal_and_noise(small_cohort, layout):
    expect = layout.channels("signal", "noise")
    dropped = layout.channels("constant", "counter")
    for log in small_cohort.logs.values():
        chs = extract_channels(log)
        assert set(chs) == layout.channels()
        kept = filter_channels(chs)
        assert set(kept) == expect
        assert not set(kept) & dropped
        assert filter_channels(kept) == kept
