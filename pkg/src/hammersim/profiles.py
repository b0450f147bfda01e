"""Per-vendor device profiles: geometry, adjacency and fault-model parameters."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Optional

from .adjacency import AdjacencyMap, Kind, SyntheticBank

VENDORS = ("vendor1", "vendor2", "vendor3")

# 10^6 ACTs reach 99% of the saturated density.
DEFAULT_N0 = 1e6 / math.log(100)


@dataclass
class DeviceProfile:
    vendor: str
    adjacency: AdjacencyMap
    p_max: dict = field(default_factory=lambda: {("whole", 1): 0.797, ("whole", 0): 0.038,
                                                 ("half", 1): 0.39, ("half", 0): 0.0186})
    n0: float = DEFAULT_N0
    act_threshold: float = 0.0
    banks: int = 16
    retention_weak_rows: tuple = (0.96, 0.033, 0.007)
    retention_threshold_s: float = 15.0
    cell_polarity: str = "true-cell"
    description: str = ""

    def __post_init__(self):
        for key, p in self.p_max.items():
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"p_max{key} = {p} is not a probability")
        for bit in (0, 1):
            if self.p_max[("whole", bit)] < self.p_max[("half", bit)]:
                raise ValueError("whole-row p_max must not be below half-row p_max")
        if abs(sum(self.retention_weak_rows) - 1.0) > 1e-9:
            raise ValueError("retention weak-row distribution must sum to 1")
        if self.n0 <= 0:
            raise ValueError("n0 must be positive")

    @property
    def rows_per_bank(self) -> int:
        return self.adjacency.rows_per_bank

    def density(self, aggressor: int, victim: int, kind: Kind, bit: int = 1) -> float:
        """Saturated fraction of the victim row's bits that flip, for cells seeded ``bit``.

        A half-row victim only exposes half its bits, so its row density is
        at most one half.
        """
        group = "half" if kind.is_half else "whole"
        base1 = self.p_max[(group, 1)]
        d1 = self.adjacency.densities.get((aggressor, victim), base1)
        if bit == 1:
            return d1
        return d1 * self.p_max[(group, 0)] / base1 if base1 else 0.0

    def cell_strength(self, aggressor: int, victim: int, kind: Kind, bit: int) -> float:
        """Per-cell saturated flip probability inside the affected bit-half(s)."""
        d = self.density(aggressor, victim, kind, bit)
        return min(1.0, 2 * d) if kind.is_half else d

    def to_dict(self) -> dict:
        pm: dict = {}
        for (group, bit), p in self.p_max.items():
            pm.setdefault(group, {})[str(bit)] = p
        return {"vendor": self.vendor, "description": self.description, "banks": self.banks,
                "rows_per_bank": self.rows_per_bank, "n0": self.n0,
                "act_threshold": self.act_threshold, "p_max": pm,
                "retention": {"weak_rows": list(self.retention_weak_rows),
                              "threshold_s": self.retention_threshold_s},
                "cell_polarity": self.cell_polarity,
                "adjacency": self.adjacency.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "DeviceProfile":
        adj = AdjacencyMap.from_dict(d["adjacency"])
        if int(d.get("rows_per_bank", adj.rows_per_bank)) != adj.rows_per_bank:
            raise ValueError("profile and adjacency disagree on rows_per_bank")
        pm = {(group, int(bit)): float(p) for group, bits in d["p_max"].items()
              for bit, p in bits.items()}
        ret = d.get("retention", {})
        return cls(vendor=d["vendor"], adjacency=adj, p_max=pm,
                   n0=float(d.get("n0", DEFAULT_N0)),
                   act_threshold=float(d.get("act_threshold", 0.0)),
                   banks=int(d.get("banks", 16)),
                   retention_weak_rows=tuple(ret.get("weak_rows", (0.96, 0.033, 0.007))),
                   retention_threshold_s=float(ret.get("threshold_s", 15.0)),
                   cell_polarity=d.get("cell_polarity", "true-cell"),
                   description=d.get("description", ""))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def load_profile(name_or_path: str) -> DeviceProfile:
    """Load a bundled vendor profile by name, or any profile file by path."""
    if name_or_path in VENDORS:
        text = resources.files("hammersim").joinpath(f"data/{name_or_path}.json").read_text()
    else:
        text = Path(name_or_path).read_text()
    return DeviceProfile.from_dict(json.loads(text))


def list_profiles() -> list[DeviceProfile]:
    return [load_profile(v) for v in VENDORS]


def synthetic_profile(bank: SyntheticBank, banks: int = 1, **kw) -> DeviceProfile:
    """Profile around a generated map; densities come from the map itself."""
    kw.setdefault("description", "synthetic")
    return DeviceProfile(vendor="synthetic", adjacency=bank.adjacency, banks=banks, **kw)


def with_adjacency(profile: DeviceProfile, adjacency: AdjacencyMap) -> DeviceProfile:
    return replace(profile, adjacency=adjacency)
