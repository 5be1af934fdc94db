"""Text CAN log reader/writer.

One frame per line, single-space separated::

    1481492674.736055 0x02c4 000 0x8 0x82 0xc8 0x00 0x0f 0x03 0x00 0x92 0x3c

timestamp (seconds, 6 fractional digits), 11-bit id, 3-char remote request
flag, payload length, then ``len`` data bytes. ``#`` starts a comment line.
"""

from __future__ import annotations

import io
from collections.abc import Iterable
from dataclasses import dataclass, field
from pathlib import Path
from typing import TextIO

from .errors import IdOutOfRange, LengthMismatch, MalformedLine

MAX_STD_ID = 0x7FF
MAX_DLC = 8


@dataclass(frozen=True)
class CanFrame:
    timestamp_us: int
    can_id: int
    req: bool
    data: bytes

    def __post_init__(self):
        if not 0 <= self.can_id <= MAX_STD_ID:
            raise ValueError(f"can_id {self.can_id:#x} outside 11-bit range")
        if len(self.data) > MAX_DLC:
            raise ValueError(f"payload of {len(self.data)} bytes exceeds {MAX_DLC}")

    @property
    def timestamp(self) -> float:
        return self.timestamp_us / 1e6

    @property
    def len(self) -> int:
        return len(self.data)


@dataclass(frozen=True)
class CanLog:
    frames: tuple[CanFrame, ...]
    source_label: str = ""
    errors: tuple[MalformedLine, ...] = field(default=(), compare=False)

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def duration(self) -> float:
        if not self.frames:
            return 0.0
        return (self.frames[-1].timestamp_us - self.frames[0].timestamp_us) / 1e6


def _parse_timestamp(tok: str) -> int:
    whole, dot, frac = tok.partition(".")
    if not whole.isdigit() or (dot and not frac.isdigit()) or len(frac) > 6:
        raise ValueError("bad timestamp")
    return int(whole) * 1_000_000 + int(frac.ljust(6, "0") or 0)


def _parse_hex(tok: str) -> int:
    if not tok.lower().startswith("0x") or len(tok) < 3:
        raise ValueError(f"expected 0x-prefixed hex, got {tok!r}")
    return int(tok[2:], 16)


def parse_line(line: str, lineno: int = 0) -> CanFrame:
    """Parse a single non-comment log line into a frame."""
    toks = line.split()
    if len(toks) < 4:
        raise MalformedLine(lineno, line, f"expected at least 4 fields, got {len(toks)}")
    try:
        ts = _parse_timestamp(toks[0])
        can_id = _parse_hex(toks[1])
        if len(toks[2]) != 3 or toks[2] not in ("000", "001"):
            raise ValueError(f"req field must be 000 or 001, got {toks[2]!r}")
        dlc = _parse_hex(toks[3])
        payload = [_parse_hex(t) for t in toks[4:]]
    except ValueError as exc:
        raise MalformedLine(lineno, line, str(exc)) from None
    if can_id > MAX_STD_ID:
        raise IdOutOfRange(lineno, line, f"id {can_id:#x} exceeds {MAX_STD_ID:#x}")
    if dlc > MAX_DLC:
        raise MalformedLine(lineno, line, f"len {dlc} exceeds {MAX_DLC}")
    if dlc != len(payload):
        raise LengthMismatch(lineno, line, f"len field {dlc} but {len(payload)} data bytes")
    if any(b > 0xFF for b in payload):
        raise MalformedLine(lineno, line, "data byte above 0xff")
    return CanFrame(ts, can_id, toks[2] == "001", bytes(payload))


def _lines(text: str | TextIO | Iterable[str]) -> Iterable[str]:
    if isinstance(text, str):
        return text.splitlines()
    return text


def parse_log(
    text: str | TextIO | Iterable[str],
    source_label: str = "",
    *,
    strict: bool = True,
) -> CanLog:
    """Parse a text log into a time-ordered :class:`CanLog`.

    With ``strict=True`` the first bad line raises. Otherwise bad lines are
    collected on ``CanLog.errors`` so that every non-blank, non-comment line
    is accounted for as either a frame or an error.

    Frames are stably sorted by timestamp; equal timestamps keep file order.
    """
    frames: list[CanFrame] = []
    errors: list[MalformedLine] = []
    for lineno, raw in enumerate(_lines(text), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            frames.append(parse_line(line, lineno))
        except MalformedLine as exc:
            if strict:
                raise
            errors.append(exc)
    frames.sort(key=lambda f: f.timestamp_us)
    return CanLog(tuple(frames), source_label, tuple(errors))


def format_frame(frame: CanFrame) -> str:
    sec, us = divmod(frame.timestamp_us, 1_000_000)
    head = f"{sec}.{us:06d} 0x{frame.can_id:04x} {'001' if frame.req else '000'} 0x{len(frame.data):x}"
    return " ".join([head, *(f"0x{b:02x}" for b in frame.data)])


def write_log(log: CanLog, sink: TextIO) -> None:
    for frame in log.frames:
        sink.write(format_frame(frame))
        sink.write("\n")


def dumps(log: CanLog) -> str:
    buf = io.StringIO()
    write_log(log, buf)
    return buf.getvalue()


def read_log(path: str | Path, source_label: str | None = None, *, strict: bool = True) -> CanLog:
    path = Path(path)
    with path.open("r", encoding="ascii") as fh:
        return parse_log(fh, source_label if source_label is not None else path.stem, strict=strict)


def save_log(log: CanLog, path: str | Path) -> None:
    with Path(path).open("w", encoding="ascii", newline="\n") as fh:
        write_log(log, fh)
