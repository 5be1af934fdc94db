"""Seeded synthetic CAN traces with tunable driver behaviour.

Three pedal/steering signals are simulated at 100 Hz as mean-reverting
processes punctuated by manoeuvres (accelerate, cruise, brake, coast). The
manoeuvre timing is traffic and does not depend on the driver; how each
manoeuvre is executed does. Signals are quantized to bytes and packed into
messages according to a :class:`BusLayout`, together with driver-independent
constant, counter and noise bytes.
"""

from __future__ import annotations

import json
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import lfilter
from scipy.stats import qmc

from .can_log import CanFrame, CanLog
from .channels import ChannelId, TimeSeries
from .drivers import AGE_BRACKETS, EXPERIENCE, GENDERS, DriverMeta

SIM_DT = 0.01
SIGNALS = ("throttle", "brake", "steering", "speed")
ROLES = ("signal", "constant", "counter", "noise", "checksum")
EPOCH_START_US = 1_500_000_000 * 1_000_000

# (low, high) of every profile parameter
PROFILE_RANGES = {
    "accel_aggression": (0.0, 1.0),
    "brake_sharpness": (0.0, 1.0),
    "pedal_jitter_hz": (0.5, 4.0),
    "steering_smoothness": (0.0, 1.0),
    "reaction_lag": (0.1, 1.5),
}


@dataclass(frozen=True)
class DriverProfile:
    driver: str
    accel_aggression: float = 0.5
    brake_sharpness: float = 0.5
    pedal_jitter_hz: float = 2.0
    steering_smoothness: float = 0.5
    reaction_lag: float = 0.5

    def __post_init__(self):
        for name, (lo, hi) in PROFILE_RANGES.items():
            v = getattr(self, name)
            if not lo <= v <= hi:
                raise ValueError(f"{name}={v} outside [{lo}, {hi}]")


@dataclass(frozen=True)
class ByteRole:
    role: str
    name: str | None = None  # signal name
    value: int = 0  # constant value / counter start
    step: int = 1  # counter increment

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown byte role {self.role!r}")
        if self.role == "signal" and self.name not in SIGNALS:
            raise ValueError(f"unknown signal {self.name!r}; expected one of {SIGNALS}")
        if self.role == "counter" and self.step % 256 == 0:
            raise ValueError("counter step must be non-zero modulo 256")


@dataclass(frozen=True)
class MessageSpec:
    can_id: int
    period: float
    bytes: tuple[ByteRole, ...]

    def __post_init__(self):
        if not 1 <= len(self.bytes) <= 8:
            raise ValueError("a message carries 1-8 bytes")
        if self.period <= 0:
            raise ValueError("period must be positive")


@dataclass(frozen=True)
class BusLayout:
    messages: tuple[MessageSpec, ...]

    def channels(self, *roles: str) -> set[ChannelId]:
        return {
            ChannelId(m.can_id, off)
            for m in self.messages
            for off, b in enumerate(m.bytes)
            if not roles or b.role in roles
        }

    def to_dict(self) -> dict:
        return {
            "messages": [
                {
                    "can_id": f"0x{m.can_id:04x}",
                    "period_s": m.period,
                    "bytes": [
                        {k: v for k, v in asdict(b).items() if v is not None} for b in m.bytes
                    ],
                }
                for m in self.messages
            ]
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> BusLayout:
        msgs = []
        for m in doc["messages"]:
            cid = m["can_id"]
            cid = int(cid, 16) if isinstance(cid, str) else int(cid)
            msgs.append(MessageSpec(cid, float(m["period_s"]), tuple(ByteRole(**b) for b in m["bytes"])))
        return cls(tuple(msgs))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> BusLayout:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def default_layout() -> BusLayout:
    """8 ids at 10 ms / 100 ms: 3 signal, 4 constant, 2 counter and 5 noise bytes."""
    S, C, K, N = (
        lambda name: ByteRole("signal", name),
        lambda v: ByteRole("constant", value=v),
        lambda step, start=0: ByteRole("counter", value=start, step=step),
        ByteRole("noise"),
    )
    return BusLayout((
        MessageSpec(0x0A0, 0.01, (S("throttle"), C(0x00))),
        MessageSpec(0x0B4, 0.01, (S("brake"), K(1))),
        MessageSpec(0x0C8, 0.01, (S("steering"), N)),
        MessageSpec(0x110, 0.1, (C(0x3C), C(0x81))),
        MessageSpec(0x1A2, 0.1, (K(16, 3), N)),
        MessageSpec(0x208, 0.1, (N,)),
        MessageSpec(0x2C4, 0.1, (C(0xFF),)),
        MessageSpec(0x3E9, 0.1, (N, N)),
    ))


# -- signal simulation ---------------------------------------------------------

def _ou(rng: np.random.Generator, n: int, tau: float, std: float) -> np.ndarray:
    """Stationary AR(1) discretization of an Ornstein-Uhlenbeck process."""
    a = np.exp(-SIM_DT / tau)
    eps = rng.standard_normal(n) * std * np.sqrt(1 - a * a)
    return lfilter([1.0], [1.0, -a], eps)


def _ramp(length: int, rise: int, fall: int) -> np.ndarray:
    """Trapezoid envelope: 0 -> 1 over ``rise`` steps, hold, 1 -> 0 over ``fall`` steps."""
    env = np.ones(length)
    rise, fall = min(rise, length), min(fall, length)
    if rise:
        env[:rise] = np.linspace(0, 1, rise, endpoint=False) + 1.0 / rise
    if fall:
        env[length - fall:] = np.minimum(env[length - fall:], np.linspace(1, 0, fall))
    return env


def simulate_signals(profile: DriverProfile, duration: float, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Pedal, steering and speed signals in [0, 1] on a 100 Hz grid."""
    n = int(round(duration / SIM_DT))
    t = np.arange(n) * SIM_DT
    throttle = np.zeros(n)
    brake = np.zeros(n)
    aggr, sharp = profile.accel_aggression, profile.brake_sharpness
    lag = int(round(profile.reaction_lag / SIM_DT))

    phases = ("accelerate", "cruise", "brake", "coast")
    lengths = {"accelerate": (2.0, 6.0), "cruise": (2.0, 8.0), "brake": (2.0, 5.0), "coast": (0.5, 3.0)}
    i, p = 0, int(rng.integers(len(phases)))
    while i < n:
        kind = phases[p % len(phases)]
        m = min(n - i, int(round(rng.uniform(*lengths[kind]) / SIM_DT)))
        if kind == "accelerate":
            peak = (0.35 + 0.6 * aggr) * rng.uniform(0.9, 1.1)
            rise = int((0.3 + 1.7 * (1 - aggr)) / SIM_DT)
            throttle[i:i + m] = peak * _ramp(m, rise, int(0.5 / SIM_DT))
        elif kind == "cruise":
            throttle[i:i + m] = (0.12 + 0.1 * aggr) * rng.uniform(0.8, 1.2)
        elif kind == "brake":
            # pedal release, reaction lag, then the brake ramp
            start = min(lag, m)
            peak = (0.3 + 0.6 * sharp) * rng.uniform(0.9, 1.1)
            rise = int((0.2 + 1.8 * (1 - sharp)) / SIM_DT)
            if m - start > 0:
                brake[i + start:i + m] = peak * _ramp(m - start, rise, int(0.4 / SIM_DT))
        i += m
        p += 1

    pressed = throttle > 0.05
    # the tremor phase diffuses so no trace keeps a fixed phase for its whole length
    phase = rng.uniform(0, 2 * np.pi) + np.cumsum(rng.standard_normal(n)) * np.sqrt(SIM_DT)
    jitter = 0.06 * np.sin(2 * np.pi * profile.pedal_jitter_hz * t + phase)
    throttle = throttle + pressed * (jitter + _ou(rng, n, 0.5, 0.02))
    brake = brake + (brake > 0.02) * _ou(rng, n, 0.3, 0.015)

    smooth = profile.steering_smoothness
    steering = 0.5 + _ou(rng, n, 0.3 + 3.0 * smooth, 0.15)
    steering += (1 - smooth) * _ou(rng, n, 0.05, 0.03)

    accel = 0.8 * np.clip(throttle, 0, 1) - 1.5 * np.clip(brake, 0, 1) - 0.05
    speed = np.clip(np.cumsum(accel) * SIM_DT / 40.0 + 0.3, 0.0, 1.0)
    speed = lfilter([0.02], [1.0, -0.98], speed - speed[0]) + speed[0]
    out = {"throttle": throttle, "brake": brake, "steering": steering, "speed": speed}
    return {k: np.clip(v, 0.0, 1.0) for k, v in out.items()}


def to_bytes(x: np.ndarray) -> np.ndarray:
    return np.round(np.clip(x, 0, 1) * 255).astype(np.uint8)


def gen_trace(
    profile: DriverProfile,
    layout: BusLayout,
    duration: float,
    seed: int,
    start_us: int = EPOCH_START_US,
) -> CanLog:
    """Simulate one driver and pack the signals into frames per ``layout``.

    Frame timestamps follow each message's period with +/-5 % jitter.
    Output is a pure function of the arguments.
    """
    if duration < 60:
        raise ValueError("traces shorter than 60 s are not supported")
    rng = np.random.default_rng(seed)
    signals = {k: to_bytes(v) for k, v in simulate_signals(profile, duration, rng).items()}
    n_sim = len(signals["throttle"])

    times, msg_of, payloads = [], [], []
    for mi, msg in enumerate(layout.messages):
        count = int(duration / msg.period)
        k = np.arange(count)
        t = rng.uniform(0, msg.period) + k * msg.period
        jitter = rng.uniform(-0.05, 0.05, size=count)
        # resampling anchors its grid on the first frame, so a jittered first
        # frame would shift the hold pattern of the whole trace by a
        # per-trace constant that identifies the trace without any behaviour
        jitter[0] = 0.0
        t = t + jitter * msg.period
        t = t[(t >= 0) & (t < duration)]
        count = len(t)
        sim_idx = np.minimum((t / SIM_DT).astype(np.int64), n_sim - 1)
        cols = []
        for b in msg.bytes:
            if b.role == "signal":
                cols.append(signals[b.name][sim_idx])
            elif b.role == "constant":
                cols.append(np.full(count, b.value, dtype=np.uint8))
            elif b.role == "counter":
                cols.append(((b.value + np.arange(count) * b.step) % 256).astype(np.uint8))
            elif b.role == "noise":
                cols.append(rng.integers(0, 256, size=count, dtype=np.uint8))
            else:
                cols.append(None)
        for j, b in enumerate(msg.bytes):
            if b.role == "checksum":
                acc = np.zeros(count, dtype=np.uint8)
                for c in cols:
                    if c is not None:
                        acc ^= c
                cols[j] = acc
        times.append(np.round(t * 1e6).astype(np.int64) + start_us)
        msg_of.append(np.full(count, mi))
        payloads.append(np.stack(cols, axis=1))

    t_all = np.concatenate(times)
    m_all = np.concatenate(msg_of)
    row = np.concatenate([np.arange(len(t)) for t in times])
    order = np.lexsort((row, m_all, t_all))
    frames = []
    for o in order:
        mi = m_all[o]
        msg = layout.messages[mi]
        frames.append(CanFrame(int(t_all[o]), msg.can_id, False, payloads[mi][row[o]].tobytes()))
    return CanLog(tuple(frames), profile.driver)


def spread_profiles(n: int, separation: float = 1.0, prefix: str = "driver") -> list[DriverProfile]:
    """``n`` profiles on a Halton sequence, scaled around the centre by ``separation``.

    ``separation=0`` gives identical profiles; 1 spans the full parameter ranges.
    """
    if not 0 <= separation <= 1:
        raise ValueError("separation must lie in [0, 1]")
    names = list(PROFILE_RANGES)
    # skip the origin, which would put driver 0 on every lower bound
    u = qmc.Halton(d=len(names), scramble=False).random(n + 1)[1:]
    profiles = []
    for i in range(n):
        kw = {}
        for j, name in enumerate(names):
            lo, hi = PROFILE_RANGES[name]
            kw[name] = float((lo + hi) / 2 + separation * (u[i, j] - 0.5) * (hi - lo))
        profiles.append(DriverProfile(f"{prefix}_{i:02d}", **kw))
    return profiles


def synthetic_metas(drivers: Sequence[str]) -> dict[str, DriverMeta]:
    return {
        d: DriverMeta(d, GENDERS[i % len(GENDERS)], AGE_BRACKETS[i % len(AGE_BRACKETS)],
                      EXPERIENCE[i % len(EXPERIENCE)])
        for i, d in enumerate(drivers)
    }


@dataclass
class Cohort:
    logs: dict[str, CanLog]
    metas: dict[str, DriverMeta]
    profiles: dict[str, DriverProfile] = field(default_factory=dict)


def driver_seeds(seed: int, n: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def gen_cohort(
    n_drivers: int,
    layout: BusLayout | None = None,
    duration: float = 30 * 60,
    seed: int = 0,
    separation: float = 1.0,
    profiles: Sequence[DriverProfile] | None = None,
) -> Cohort:
    """Generate ``n_drivers`` traces sharing one layout."""
    if n_drivers < 2:
        raise ValueError("a cohort needs at least 2 drivers")
    layout = layout or default_layout()
    profiles = list(profiles) if profiles is not None else spread_profiles(n_drivers, separation)
    if len(profiles) != n_drivers:
        raise ValueError("need one profile per driver")
    logs = {}
    for i, (prof, s) in enumerate(zip(profiles, driver_seeds(seed, n_drivers))):
        logs[prof.driver] = gen_trace(prof, layout, duration, s, EPOCH_START_US + i * 86_400_000_000)
    return Cohort(logs, synthetic_metas(list(logs)), {p.driver: p for p in profiles})


def planted_series(
    n_drivers: int = 3,
    n_noise: int = 10,
    duration: float = 600.0,
    rate_hz: float = 10.0,
    seed: int = 0,
) -> tuple[dict[str, dict[ChannelId, TimeSeries]], ChannelId]:
    """Resampled-series cohort: ``n_noise`` i.i.d. byte channels plus one planted channel.

    The planted channel carries a per-driver level, so it identifies the
    driver perfectly. It gets the highest id, so ranking ties never favour it.
    """
    rng = np.random.default_rng(seed)
    n = int(round(duration * rate_hz))
    noise_ids = [ChannelId(0x100 + i, 0) for i in range(n_noise)]
    planted = ChannelId(0x100 + n_noise, 0)
    series = {}
    for d in range(n_drivers):
        chans = {ch: TimeSeries(ch, rate_hz, rng.integers(0, 256, n) / 255.0) for ch in noise_ids}
        level = (d + 1) / (n_drivers + 1)
        chans[planted] = TimeSeries(planted, rate_hz, np.clip(level + rng.normal(0, 0.02, n), 0, 1))
        series[f"driver_{d:02d}"] = chans
    return series, planted
