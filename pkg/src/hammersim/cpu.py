"""Calibrated emission models for Rowhammer instruction sequences.

No core is simulated.  Each catalog entry records the request spacing and
the fraction of loop iterations the CPU serves from cache, and
:func:`generate_stream` turns that into a timed list of memory requests.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

from .addrmap import AddressSpace, MappingConfig, phys_to_logical
from .timing import TimingParams

ARCHS = ("broadwell", "skylake", "cascadelake")

OPS = frozenset({
    "load", "store", "clflush", "clflushopt", "mfence", "lfence", "sfence",
    "nt_load", "nt_store", "uncached_load", "invd", "wbinvd", "cache_conflict_evict",
})
MEMORY_OPS = OPS - {"mfence", "lfence", "sfence", "invd", "wbinvd"}
FENCES = frozenset({"mfence", "lfence", "sfence"})

# First architecture that implements each instruction; absent means all.
_INTRODUCED = {"clflushopt": "skylake"}


class UnknownSequence(KeyError):
    pass


class UnsupportedArch(ValueError):
    pass


class AddressesSameRow(ValueError):
    pass


class RequestKind(str, enum.Enum):
    READ = "read"
    WRITE = "write"
    FLUSH_READ = "flush-read"


class MemoryRequest(NamedTuple):
    time: int
    kind: RequestKind
    virtual_addr: int
    data: Optional[int] = None  # store value; None for loads and flushes


@dataclass(frozen=True)
class InstructionSequence:
    name: str
    body: tuple  # of (op, slot) or (op,)
    slots: int = 2

    def __post_init__(self):
        if not self.body:
            raise ValueError(f"sequence {self.name!r} has an empty body")
        for item in self.body:
            op = item[0]
            if op not in OPS:
                raise ValueError(f"unknown op {op!r} in {self.name!r}")
            if op in MEMORY_OPS:
                if len(item) < 2 or not 0 <= item[1] < self.slots:
                    raise ValueError(f"{op} in {self.name!r} references an undeclared slot")

    @property
    def ops(self) -> list[str]:
        return [item[0] for item in self.body]

    @property
    def has_fence(self) -> bool:
        return any(op in FENCES for op in self.ops)

    def fence_free(self) -> "InstructionSequence":
        body = tuple(item for item in self.body if item[0] not in FENCES)
        return InstructionSequence(self.name, body, self.slots)

    def describe(self) -> str:
        return "; ".join(op if len(item) == 1 else f"{op} [a{item[1]}]"
                         for item, op in zip(self.body, self.ops))


@dataclass(frozen=True)
class SequenceProfile:
    arch: str
    requests_per_iteration: int = 2
    intra_iteration_gaps: tuple = (46_700,)
    inter_iteration_gap: int = 46_700
    cache_hit_fraction: float = 0.0
    dram_access_per_flush_on_invalid_line: bool = True
    kind: RequestKind = RequestKind.FLUSH_READ
    warmup_iterations: int = 0
    approximate: bool = False

    def __post_init__(self):
        if not 0.0 <= self.cache_hit_fraction <= 1.0:
            raise ValueError("cache_hit_fraction must lie in [0, 1]")
        if self.inter_iteration_gap < 0 or any(g < 0 for g in self.intra_iteration_gaps):
            raise ValueError("gaps must be non-negative")
        if self.requests_per_iteration > 1 and \
                len(self.intra_iteration_gaps) != self.requests_per_iteration - 1:
            raise ValueError("need one intra-iteration gap per request after the first")

    @property
    def iteration_period(self) -> int:
        return sum(self.intra_iteration_gaps) + self.inter_iteration_gap

    @property
    def emits_requests(self) -> bool:
        return (self.dram_access_per_flush_on_invalid_line and self.requests_per_iteration > 0
                and self.cache_hit_fraction < 1.0)

    def nominal_rate(self, params: TimingParams = TimingParams()) -> float:
        """Requests per tREFI before any controller or refresh effects."""
        if not self.emits_requests or self.iteration_period == 0:
            return 0.0
        per_iter = self.requests_per_iteration * (1.0 - self.cache_hit_fraction)
        return per_iter * params.t_refi / self.iteration_period


@dataclass
class StreamStats:
    iterations: int = 0
    candidate_requests: int = 0
    suppressed: int = 0

    @property
    def hit_fraction(self) -> float:
        return self.suppressed / self.candidate_requests if self.candidate_requests else 0.0


@dataclass
class Catalog:
    sequences: dict = field(default_factory=dict)  # name -> InstructionSequence
    profiles: dict = field(default_factory=dict)   # name -> base profile kwargs
    arch_overrides: dict = field(default_factory=dict)  # name -> {arch: kwargs}

    @classmethod
    def load(cls, path=None) -> "Catalog":
        if path is None:
            text = resources.files("hammersim").joinpath("data/catalog.json").read_text()
        else:
            with open(path) as fh:
                text = fh.read()
        return cls.from_dict(json.loads(text))

    @classmethod
    def from_dict(cls, data: dict) -> "Catalog":
        cat = cls()
        for name, entry in data["sequences"].items():
            body = tuple(tuple(item) for item in entry["body"])
            cat.sequences[name] = InstructionSequence(name, body, entry.get("slots", 2))
            cat.profiles[name] = dict(entry["profile"])
            cat.arch_overrides[name] = dict(entry.get("arch", {}))
        return cat

    def names(self) -> list[str]:
        return list(self.sequences)

    def sequence(self, name: str) -> InstructionSequence:
        try:
            return self.sequences[name]
        except KeyError:
            raise UnknownSequence(name) from None


_DEFAULT_CATALOG: Optional[Catalog] = None


def default_catalog() -> Catalog:
    global _DEFAULT_CATALOG
    if _DEFAULT_CATALOG is None:
        _DEFAULT_CATALOG = Catalog.load()
    return _DEFAULT_CATALOG


def _check_arch(seq: InstructionSequence, arch: str) -> None:
    if arch not in ARCHS:
        raise UnsupportedArch(f"unknown architecture {arch!r}")
    for op in seq.ops:
        first = _INTRODUCED.get(op)
        if first is not None and ARCHS.index(arch) < ARCHS.index(first):
            raise UnsupportedArch(f"{op} is not available on {arch}")


def profile_for(seq, arch: str, catalog: Optional[Catalog] = None, **overrides) -> SequenceProfile:
    """Calibrated profile for a cataloged sequence (by object or name) on ``arch``."""
    catalog = catalog or default_catalog()
    name = seq.name if isinstance(seq, InstructionSequence) else seq
    if name not in catalog.sequences:
        raise UnknownSequence(name)
    _check_arch(catalog.sequences[name], arch)
    kw = dict(catalog.profiles[name])
    kw.update(catalog.arch_overrides[name].get(arch, {}))
    kw.update(overrides)
    kw["intra_iteration_gaps"] = tuple(int(g) for g in kw.get("intra_iteration_gaps", ()))
    if "kind" in kw:
        kw["kind"] = RequestKind(kw["kind"])
    return SequenceProfile(arch=arch, **kw)


def low_rate_profile(profile: SequenceProfile, acts_per_trefi: float,
                     params: TimingParams = TimingParams()) -> SequenceProfile:
    """Re-space a profile evenly so it issues ``acts_per_trefi`` requests per tREFI."""
    gap = round(params.t_refi / acts_per_trefi)
    n = profile.requests_per_iteration
    return replace(profile, intra_iteration_gaps=(gap,) * (n - 1), inter_iteration_gap=gap,
                   cache_hit_fraction=0.0)


def _hit_mask(n_iter: int, fraction: float, seed: int) -> np.ndarray:
    # Systematic sampling: exactly round(n*f) hits spread evenly, with a seeded phase.
    if fraction <= 0.0:
        return np.zeros(n_iter, dtype=bool)
    if fraction >= 1.0:
        return np.ones(n_iter, dtype=bool)
    u = np.random.default_rng(seed).random()
    k = np.arange(n_iter + 1)
    marks = np.floor(k * fraction + u)
    return np.diff(marks) > 0


def check_pair(addr_pair: Sequence[int], cfg: Optional[MappingConfig] = None,
               space: Optional[AddressSpace] = None) -> None:
    cfg = cfg or MappingConfig()
    space = space or AddressSpace()
    a, b = (phys_to_logical(cfg, space.virt_to_phys(v)) for v in addr_pair)
    if (a.channel, a.dimm, a.rank, a.bank) != (b.channel, b.dimm, b.rank, b.bank):
        raise ValueError("hammer addresses must share a bank")
    if a.row == b.row:
        raise AddressesSameRow(f"both addresses map to row 0x{a.row:x}; the open row "
                               "would never be re-activated")


def generate_stream(profile: SequenceProfile, addr_pair: Sequence[int], duration: int,
                    seed: int = 0, start: int = 0, cfg: Optional[MappingConfig] = None,
                    space: Optional[AddressSpace] = None,
                    stats: Optional[StreamStats] = None,
                    data_pair: Optional[Sequence[int]] = None) -> list[MemoryRequest]:
    """Timed requests alternating over ``addr_pair`` for ``duration`` picoseconds.

    Iterations chosen as cache hits are dropped whole, so the surviving
    stream still alternates between the two rows.
    """
    if duration < 0:
        raise ValueError("duration must be non-negative")
    check_pair(addr_pair, cfg, space)
    stats = stats if stats is not None else StreamStats()
    end = start + duration
    if duration == 0 or not profile.emits_requests:
        return []
    period = profile.iteration_period
    n = profile.requests_per_iteration
    offsets = [0]
    for g in profile.intra_iteration_gaps:
        offsets.append(offsets[-1] + g)
    n_iter = math.ceil(duration / period) + 1 if period else 1
    hits = _hit_mask(n_iter, profile.cache_hit_fraction, seed)
    out: list[MemoryRequest] = []
    kind = profile.kind
    for it in range(n_iter):
        t0 = start + it * period
        if t0 >= end:
            break
        stats.iterations += 1
        if it < profile.warmup_iterations:
            continue
        for j in range(n):
            t = t0 + offsets[j]
            if t >= end:
                break
            stats.candidate_requests += 1
            if hits[it]:
                stats.suppressed += 1
                continue
            slot = j % len(addr_pair)
            out.append(MemoryRequest(t, kind, addr_pair[slot],
                                     None if data_pair is None else data_pair[slot]))
    return out


def merge_streams(streams: Iterable[list[MemoryRequest]]) -> list[MemoryRequest]:
    """Interleave several harts' streams in timestamp order (stable)."""
    merged = [r for s in streams for r in s]
    merged.sort(key=lambda r: r.time)
    return merged
