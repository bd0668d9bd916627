"""Peak-level simulation of labelled STR mixture profiles.

Each profile is produced by a stochastic model that works directly on peak
records: donors are drawn under Hardy-Weinberg, allelic peak heights follow
template x exponential degradation x log-normal noise, stutter mass is spawned
at the four displaced positions, and the measurement stage adds pull-up and
random artefact peaks, drops low peaks, caps saturated ones and assigns a peak
label probability (plp).
"""

from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .kit import (
    KitConfig,
    KitError,
    allele_frequency,
    allele_size,
    normalize_allele,
    size_to_allele,
)

STUTTER_TYPES = ("back", "double_back", "forward", "point2")
# child designation = parent designation + offset
STUTTER_OFFSETS = {"back": -1.0, "double_back": -2.0, "forward": 1.0, "point2": -0.2}
PULLUP_PROBABILITY = 0.3
MAX_NOC = 10

_MASK64 = (1 << 64) - 1


def splitmix64(seed: int, index: int) -> int:
    """Derive an independent 64-bit stream seed for record ``index``."""
    z = (seed + (index + 1) * 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


@dataclass(frozen=True)
class StutterParams:
    base_ratio: float
    slope_per_repeat: float
    ratio_cv: float


def _default_stutters() -> dict[str, StutterParams]:
    return {
        "back": StutterParams(0.04, 0.003, 0.25),
        "double_back": StutterParams(0.003, 0.0002, 0.4),
        "forward": StutterParams(0.008, 0.0003, 0.4),
        "point2": StutterParams(0.004, 0.0, 0.4),
    }


@dataclass(frozen=True)
class SimParams:
    noc_min: int = 1
    noc_max: int = 10
    template_rfu_range: tuple[float, float] = (30.0, 30000.0)
    degradation_range: tuple[float, float] = (0.0, 0.01)
    peak_height_cv: float = 0.3
    stutter_params: dict[str, StutterParams] = field(default_factory=_default_stutters)
    artefact_rate: float = 8.0
    pullup_threshold_rfu: float = 2000.0
    plp_true: tuple[float, float] = (20.0, 1.5)
    plp_artefact: tuple[float, float] = (1.5, 8.0)
    noise_floor_rfu: float = 5.0
    saturation_rfu: float = 33000.0
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.noc_min <= self.noc_max <= MAX_NOC:
            raise ValueError(f"need 1 <= noc_min <= noc_max <= {MAX_NOC}")
        lo, hi = self.template_rfu_range
        if not 0 < lo <= hi:
            raise ValueError("template_rfu_range must satisfy 0 < low <= high")
        d_lo, d_hi = self.degradation_range
        if not 0 <= d_lo <= d_hi:
            raise ValueError("degradation_range must be nonnegative and ordered")
        for name in ("peak_height_cv", "artefact_rate", "pullup_threshold_rfu",
                     "noise_floor_rfu", "saturation_rfu"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if set(self.stutter_params) != set(STUTTER_TYPES):
            raise ValueError(f"stutter_params must cover {STUTTER_TYPES}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["template_rfu_range"] = list(self.template_rfu_range)
        d["degradation_range"] = list(self.degradation_range)
        d["plp_true"] = list(self.plp_true)
        d["plp_artefact"] = list(self.plp_artefact)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimParams":
        d = dict(d)
        if "stutter_params" in d:
            d["stutter_params"] = {k: StutterParams(**v) if isinstance(v, dict) else StutterParams(*v)
                                   for k, v in d["stutter_params"].items()}
        for key in ("template_rfu_range", "degradation_range", "plp_true", "plp_artefact"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def without_stutter(self) -> "SimParams":
        off = {t: StutterParams(0.0, 0.0, 0.0) for t in STUTTER_TYPES}
        return replace(self, stutter_params=off)


@dataclass(frozen=True)
class DonorProfile:
    genotypes: tuple[tuple[float, float], ...]


@dataclass
class SimulatedPeak:
    locus: int
    allele: float
    size_bp: float
    height_rfu: float
    allelic_rfu: float | None
    stutter_rfu: float | None
    artefact_rfu: float | None
    donor_copies: tuple[int, ...]
    plp: float
    donor_rfu: tuple[float, ...] | None = None
    # stutter type -> index (into the profile's peak list) of the linked peak
    stutter_parent: dict[str, int] = field(default_factory=dict)
    stutter_child: dict[str, int] = field(default_factory=dict)

    @property
    def has_composition(self) -> bool:
        return self.allelic_rfu is not None


@dataclass
class SimulatedProfile:
    peaks: list[SimulatedPeak]
    noc: int
    donor_templates_rfu: list[float]
    donor_proportions: list[float]
    seed_used: int = 0
    donor_degradation: list[float] | None = None

    @property
    def donor_order(self) -> list[int]:
        return sorted(range(self.noc), key=lambda j: -self.donor_templates_rfu[j])

    def locus_peaks(self, locus: int) -> list[SimulatedPeak]:
        return [p for p in self.peaks if p.locus == locus]


# --------------------------------------------------------------------------
# donor sampling and stutter expectation


def sample_donor(kit: KitConfig, rng: np.random.Generator) -> DonorProfile:
    genotypes = []
    for lc in kit.loci:
        table = kit.frequencies.locus_alleles(lc.index)
        alleles = np.array([a for a, _ in table])
        p = np.array([f for _, f in table])
        p = p / p.sum()
        pick = rng.choice(len(alleles), size=2, p=p)
        genotypes.append((float(alleles[pick[0]]), float(alleles[pick[1]])))
    return DonorProfile(tuple(genotypes))


def expected_stutter_ratio(kit: KitConfig, locus: int, allele: float, stutter_type: str,
                           params: SimParams | None = None) -> float:
    if stutter_type not in STUTTER_OFFSETS:
        raise ValueError(f"unknown stutter type {stutter_type!r}")
    sp = (params.stutter_params if params is not None else _default_stutters())[stutter_type]
    lc = kit.locus(locus)
    r = sp.base_ratio + sp.slope_per_repeat * (allele - lc.allele_min)
    return min(max(r, 0.0), 0.5)


def _lognormal_sigma(cv: float) -> float:
    return math.sqrt(math.log1p(cv * cv))


# --------------------------------------------------------------------------
# profile simulation


class _Mass:
    __slots__ = ("allelic", "stutter", "artefact", "copies", "donor_rfu")

    def __init__(self, noc: int):
        self.allelic = 0.0
        self.stutter = 0.0
        self.artefact = 0.0
        self.copies = [0] * noc
        self.donor_rfu = [0.0] * noc

    @property
    def height(self) -> float:
        return self.allelic + self.stutter + self.artefact


def _in_range(kit: KitConfig, locus: int, allele: float) -> bool:
    lc = kit.loci[locus]
    return lc.allele_min - 1e-9 <= allele <= lc.allele_max + 1e-9


def simulate_profile(kit: KitConfig, params: SimParams, rng: np.random.Generator,
                     seed_used: int = 0) -> SimulatedProfile:
    # 1. contributors
    noc = int(rng.integers(params.noc_min, params.noc_max + 1))
    lo, hi = params.template_rfu_range
    templates = np.exp(rng.uniform(math.log(lo), math.log(hi), size=noc))
    degr = rng.uniform(params.degradation_range[0], params.degradation_range[1], size=noc)
    donors = [sample_donor(kit, rng) for _ in range(noc)]
    order = np.argsort(-templates, kind="stable")
    templates = templates[order]
    degr = degr[order]
    donors = [donors[j] for j in order]

    sigma = _lognormal_sigma(params.peak_height_cv)
    masses: list[dict[float, _Mass]] = [dict() for _ in kit.loci]

    # 2. allelic contributions
    for li in range(len(kit.loci)):
        for j in range(noc):
            counts = Counter(donors[j].genotypes[li])
            for allele in sorted(counts):
                copies = counts[allele]
                size = allele_size(kit, li, allele)
                expected = copies * templates[j] * math.exp(-degr[j] * size)
                realized = expected * rng.lognormal(0.0, sigma)
                m = masses[li].setdefault(allele, _Mass(noc))
                m.allelic += realized
                m.copies[j] += copies
                m.donor_rfu[j] += realized

    # 3-4. stutter, merged into coincident designations
    for li in range(len(kit.loci)):
        parents = sorted((a, m.allelic) for a, m in masses[li].items() if m.allelic > 0)
        for allele, parent_rfu in parents:
            for st in STUTTER_TYPES:
                sp = params.stutter_params[st]
                ratio = expected_stutter_ratio(kit, li, allele, st, params)
                noise = rng.lognormal(0.0, _lognormal_sigma(sp.ratio_cv))
                mass = parent_rfu * ratio * noise
                target = normalize_allele(allele + STUTTER_OFFSETS[st])
                if mass <= 0 or not _in_range(kit, li, target):
                    continue
                masses[li].setdefault(target, _Mass(noc)).stutter += mass

    # 5. pull-up and random artefacts
    dye_index = {d: i for i, d in enumerate(kit.dyes)}
    pullups = []
    for li, lc in enumerate(kit.loci):
        for allele in sorted(masses[li]):
            m = masses[li][allele]
            if m.height <= params.pullup_threshold_rfu:
                continue
            if rng.random() >= PULLUP_PROBABILITY:
                continue
            frac = rng.uniform(0.01, 0.05)
            di = dye_index[lc.dye]
            neighbours = [d for d in (di - 1, di + 1) if 0 <= d < len(kit.dyes)]
            target_dye = kit.dyes[neighbours[int(rng.integers(len(neighbours)))]]
            size = allele_size(kit, li, allele)
            pullups.append((target_dye, size, min(m.height, params.saturation_rfu) * frac))
    for target_dye, size, h in pullups:
        for lc in kit.loci_in_dye(target_dye):
            if lc.contains_size(size):
                a = size_to_allele(lc, size)
                if _in_range(kit, lc.index, a):
                    masses[lc.index].setdefault(a, _Mass(noc)).artefact += h
                break

    n_art = int(rng.poisson(params.artefact_rate)) if params.artefact_rate > 0 else 0
    floor = params.noise_floor_rfu if params.noise_floor_rfu > 0 else 1.0
    for _ in range(n_art):
        li = int(rng.integers(len(kit.loci)))
        lc = kit.loci[li]
        s_lo = allele_size(kit, li, lc.allele_min)
        s_hi = allele_size(kit, li, lc.allele_max)
        a = size_to_allele(lc, rng.uniform(s_lo, s_hi))
        a = min(max(a, lc.allele_min), lc.allele_max)
        h = math.exp(rng.uniform(math.log(floor), math.log(10 * floor)))
        masses[li].setdefault(a, _Mass(noc)).artefact += h

    # 6-7. detection, saturation, plp
    peaks: list[SimulatedPeak] = []
    for li in range(len(kit.loci)):
        for allele in sorted(masses[li]):
            m = masses[li][allele]
            height = m.height
            if height <= 0 or height < params.noise_floor_rfu:
                continue
            allelic, stutter, artefact = m.allelic, m.stutter, m.artefact
            donor_rfu = list(m.donor_rfu)
            if height > params.saturation_rfu:
                scale = params.saturation_rfu / height
                allelic, stutter, artefact = allelic * scale, stutter * scale, artefact * scale
                donor_rfu = [x * scale for x in donor_rfu]
            height = allelic + stutter + artefact
            if artefact / height < 0.5:
                plp = rng.beta(*params.plp_true)
            else:
                plp = rng.beta(*params.plp_artefact)
            peaks.append(SimulatedPeak(
                locus=li,
                allele=allele,
                size_bp=allele_size(kit, li, allele),
                height_rfu=height,
                allelic_rfu=allelic,
                stutter_rfu=stutter,
                artefact_rfu=artefact,
                donor_copies=tuple(m.copies),
                plp=float(plp),
                donor_rfu=tuple(donor_rfu),
            ))

    # 8. truth metadata
    total = float(templates.sum())
    profile = SimulatedProfile(
        peaks=peaks,
        noc=noc,
        donor_templates_rfu=[float(t) for t in templates],
        donor_proportions=[float(t) / total for t in templates],
        seed_used=seed_used,
        donor_degradation=[float(d) for d in degr],
    )
    attach_stutter_links(profile)
    return profile


def attach_stutter_links(profile: SimulatedProfile) -> None:
    """Fill each peak's stutter_parent / stutter_child maps (indices into profile.peaks)."""
    from .encoder import stutter_linkage

    for p in profile.peaks:
        p.stutter_parent = {}
        p.stutter_child = {}
    by_locus: dict[int, list[int]] = defaultdict(list)
    for i, p in enumerate(profile.peaks):
        by_locus[p.locus].append(i)
    for idx in by_locus.values():
        local = [profile.peaks[i] for i in idx]
        for (child, st), parent in stutter_linkage(local).items():
            profile.peaks[idx[child]].stutter_parent[st] = idx[parent]
            profile.peaks[idx[parent]].stutter_child[st] = idx[child]


# --------------------------------------------------------------------------
# dataset serialisation


def _num(x: float) -> str:
    if isinstance(x, (bool, np.bool_)):
        raise TypeError("bool is not a number here")
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if not math.isfinite(x):
        raise ValueError("non-finite number in dataset record")
    return format(x, ".17g")


def _dump(obj) -> str:
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(k)}: {_dump(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_dump(v) for v in obj) + "]"
    if obj is None:
        return "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    return _num(obj)


def profile_to_record(profile: SimulatedProfile) -> dict:
    peaks = []
    for p in profile.peaks:
        rec = {
            "locus": p.locus,
            "allele": p.allele,
            "size_bp": p.size_bp,
            "height_rfu": p.height_rfu,
            "allelic_rfu": p.allelic_rfu,
            "stutter_rfu": p.stutter_rfu,
            "artefact_rfu": p.artefact_rfu,
            "donor_copies": list(p.donor_copies),
            "plp": p.plp,
        }
        if p.donor_rfu is not None:
            rec["donor_rfu"] = list(p.donor_rfu)
        peaks.append(rec)
    rec = {
        "noc": profile.noc,
        "donor_templates": list(profile.donor_templates_rfu),
        "donor_proportions": list(profile.donor_proportions),
        "seed": profile.seed_used,
        "peaks": peaks,
    }
    if profile.donor_degradation is not None:
        rec["donor_degradation"] = list(profile.donor_degradation)
    return rec


def profile_to_json(profile: SimulatedProfile) -> str:
    return _dump(profile_to_record(profile))


def _opt(d: dict, key: str):
    v = d.get(key)
    return None if v is None else float(v)


def profile_from_record(rec: dict) -> SimulatedProfile:
    noc = int(rec["noc"])
    peaks = []
    for p in rec["peaks"]:
        copies = tuple(int(c) for c in p.get("donor_copies", [0] * noc))
        donor_rfu = p.get("donor_rfu")
        peaks.append(SimulatedPeak(
            locus=int(p["locus"]),
            allele=normalize_allele(p["allele"]),
            size_bp=float(p["size_bp"]),
            height_rfu=float(p["height_rfu"]),
            allelic_rfu=_opt(p, "allelic_rfu"),
            stutter_rfu=_opt(p, "stutter_rfu"),
            artefact_rfu=_opt(p, "artefact_rfu"),
            donor_copies=copies,
            plp=float(p["plp"]),
            donor_rfu=None if donor_rfu is None else tuple(float(x) for x in donor_rfu),
        ))
    templates = [float(t) for t in rec.get("donor_templates", [])]
    props = rec.get("donor_proportions")
    if props is None and templates:
        props = [t / sum(templates) for t in templates]
    profile = SimulatedProfile(
        peaks=peaks,
        noc=noc,
        donor_templates_rfu=templates,
        donor_proportions=[float(x) for x in (props or [])],
        seed_used=int(rec.get("seed", 0)),
        donor_degradation=rec.get("donor_degradation"),
    )
    attach_stutter_links(profile)
    return profile


def read_dataset(path: str | Path) -> Iterator[SimulatedProfile]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield profile_from_record(json.loads(line))
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad profile record ({exc})") from exc


def load_dataset(path: str | Path) -> list[SimulatedProfile]:
    return list(read_dataset(path))


def write_dataset(profiles: Iterable[SimulatedProfile], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p in profiles:
            fh.write(profile_to_json(p) + "\n")


def simulate_record(kit: KitConfig, params: SimParams, index: int) -> SimulatedProfile:
    seed = splitmix64(params.seed, index)
    return simulate_profile(kit, params, np.random.default_rng(seed), seed_used=seed)


def _simulate_chunk(args):
    kit, params, start, stop, laboratory = args
    strip = strip_composition if laboratory else (lambda p: p)
    return [profile_to_json(strip(simulate_record(kit, params, i))) for i in range(start, stop)]


def iter_simulated(kit: KitConfig, params: SimParams, n: int) -> Iterator[SimulatedProfile]:
    for i in range(n):
        yield simulate_record(kit, params, i)


def simulate_dataset(kit: KitConfig, params: SimParams, n: int, out: str | Path,
                     threads: int = 1, chunk: int = 256, laboratory: bool = False) -> dict:
    """Write ``n`` simulated profiles to ``out`` (JSONL) and return summary statistics.

    Record ``i`` is simulated from its own stream ``splitmix64(seed, i)``, so the
    output does not depend on ``threads``. ``laboratory`` drops the peak
    composition from every record (see :func:`strip_composition`).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    jobs = [(kit, params, s, min(s + chunk, n), laboratory) for s in range(0, n, chunk)]
    noc_counts: Counter = Counter()
    peak_counts: dict[int, list[int]] = defaultdict(list)
    total_dna: dict[int, list[float]] = defaultdict(list)

    def consume(lines, fh):
        for line in lines:
            fh.write(line + "\n")
            rec = json.loads(line)
            k = rec["noc"]
            noc_counts[k] += 1
            peak_counts[k].append(len(rec["peaks"]))
            total_dna[k].append(sum(rec["donor_templates"]))

    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        if threads > 1:
            with ProcessPoolExecutor(max_workers=threads) as pool:
                for lines in pool.map(_simulate_chunk, jobs):
                    consume(lines, fh)
        else:
            for job in jobs:
                consume(_simulate_chunk(job), fh)

    summary = {"n": n, "per_noc": {}}
    for k in sorted(noc_counts):
        pc = np.array(peak_counts[k], dtype=float)
        td = np.array(total_dna[k], dtype=float)
        summary["per_noc"][str(k)] = {
            "count": noc_counts[k],
            "peaks_mean": float(pc.mean()),
            "peaks_quantiles": [float(q) for q in np.quantile(pc, [0.05, 0.25, 0.5, 0.75, 0.95])],
            "total_template_mean": float(td.mean()),
            "total_template_quantiles": [float(q) for q in np.quantile(td, [0.05, 0.25, 0.5, 0.75, 0.95])],
        }
    return summary


def strip_composition(profile: SimulatedProfile) -> SimulatedProfile:
    """Laboratory-style copy: NoC, donors and genotypes kept, peak composition unknown."""
    peaks = [replace(p, allelic_rfu=None, stutter_rfu=None, artefact_rfu=None, donor_rfu=None,
                     stutter_parent=dict(p.stutter_parent), stutter_child=dict(p.stutter_child))
             for p in profile.peaks]
    return replace(profile, peaks=peaks)


def allelic_copy_totals(profile: SimulatedProfile, n_loci: int = 24) -> list[int]:
    totals = [0] * n_loci
    for p in profile.peaks:
        totals[p.locus] += sum(p.donor_copies)
    return totals


def peak_frequency(kit: KitConfig, peak: SimulatedPeak) -> float:
    return allele_frequency(kit, peak.locus, peak.allele)


__all__: Sequence[str] = (
    "STUTTER_TYPES", "STUTTER_OFFSETS", "StutterParams", "SimParams", "DonorProfile",
    "SimulatedPeak", "SimulatedProfile", "sample_donor", "expected_stutter_ratio",
    "simulate_profile", "simulate_dataset", "simulate_record", "iter_simulated",
    "splitmix64", "read_dataset", "load_dataset", "write_dataset", "profile_to_json",
    "profile_from_record", "profile_to_record", "strip_composition", "KitError",
)
