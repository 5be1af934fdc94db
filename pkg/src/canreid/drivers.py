"""Driver metadata used for per-attribute accuracy breakdowns."""

from __future__ import annotations

import json
from collections.abc import Mapping
from dataclasses import asdict, dataclass
from pathlib import Path

GENDERS = ("male", "female")
AGE_BRACKETS = ("[20-25]", "[25-30]", "[30-40]", "[40-70]")
EXPERIENCE = ("low", "average", "high")


@dataclass(frozen=True)
class DriverMeta:
    driver: str
    gender: str
    age: str
    experience: str

    def __post_init__(self):
        if self.gender not in GENDERS:
            raise ValueError(f"gender must be one of {GENDERS}")
        if self.age not in AGE_BRACKETS:
            raise ValueError(f"age bracket must be one of {AGE_BRACKETS}")
        if self.experience not in EXPERIENCE:
            raise ValueError(f"experience must be one of {EXPERIENCE}")


def write_metas(path: str | Path, metas: Mapping[str, DriverMeta]) -> None:
    doc = [asdict(metas[k]) for k in sorted(metas)]
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def read_metas(path: str | Path) -> dict[str, DriverMeta]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return {m["driver"]: DriverMeta(**m) for m in doc}
