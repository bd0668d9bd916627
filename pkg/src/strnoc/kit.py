"""Profiling kit definition: locus order, dye lanes, allele sizing and frequencies."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping

N_LOCI = 24
N_DYES = 6
DEFAULT_DYES = ("blue", "green", "yellow", "red", "purple", "orange")
DEFAULT_DYE_COLORS = {
    "blue": "#1f4fd1",
    "green": "#1a9e3a",
    "yellow": "#2b2b2b",
    "red": "#d62728",
    "purple": "#8e44ad",
    "orange": "#ff8c1a",
}


class KitError(ValueError):
    """Raised for malformed kit files or out-of-range allele queries."""


def normalize_allele(allele: float) -> float:
    """Round a designation to one decimal place (the nomenclature resolution)."""
    return round(float(allele) + 0.0, 1) + 0.0


def allele_key(allele: float) -> str:
    a = normalize_allele(allele)
    return str(int(a)) if a == math.floor(a) else f"{a:.1f}"


def _split_designation(allele: float) -> tuple[int, int]:
    a = normalize_allele(allele)
    whole = math.floor(a)
    return whole, int(round((a - whole) * 10))


@dataclass(frozen=True)
class LocusDef:
    name: str
    index: int
    dye: str
    repeat_unit_bp: float
    size_offset_bp: float
    allele_min: float
    allele_max: float

    def contains_size(self, size_bp: float) -> bool:
        lo = allele_size_for(self, self.allele_min)
        hi = allele_size_for(self, self.allele_max)
        return lo <= size_bp <= hi


@dataclass(frozen=True)
class AlleleFrequencyTable:
    entries: Mapping[tuple[int, float], float]
    sample_size_2N: int

    @property
    def minimum_frequency(self) -> float:
        return max(5.0 / self.sample_size_2N, 1e-4)

    def locus_alleles(self, locus: int) -> list[tuple[float, float]]:
        """(allele, frequency) pairs for one locus, sorted by allele."""
        return sorted((a, f) for (li, a), f in self.entries.items() if li == locus)


@dataclass(frozen=True)
class KitConfig:
    loci: tuple[LocusDef, ...]
    frequencies: AlleleFrequencyTable
    dyes: tuple[str, ...] = DEFAULT_DYES
    dye_colors: Mapping[str, str] = field(default_factory=lambda: dict(DEFAULT_DYE_COLORS))
    name: str = "kit"

    def locus(self, index: int) -> LocusDef:
        if not 0 <= index < len(self.loci):
            raise KitError(f"unknown locus index {index}")
        return self.loci[index]

    def loci_in_dye(self, dye: str) -> list[LocusDef]:
        return [lc for lc in self.loci if lc.dye == dye]

    def to_dict(self) -> dict:
        loci = []
        for lc in self.loci:
            freqs = {allele_key(a): f for a, f in self.frequencies.locus_alleles(lc.index)}
            loci.append({
                "name": lc.name,
                "dye": lc.dye,
                "repeat_unit_bp": lc.repeat_unit_bp,
                "size_offset_bp": lc.size_offset_bp,
                "allele_min": lc.allele_min,
                "allele_max": lc.allele_max,
                "frequencies": freqs,
            })
        return {
            "name": self.name,
            "dyes": list(self.dyes),
            "dye_colors": dict(self.dye_colors),
            "sample_size_2N": self.frequencies.sample_size_2N,
            "loci": loci,
        }


def allele_size_for(locus: LocusDef, allele: float) -> float:
    whole, micro = _split_designation(allele)
    return locus.size_offset_bp + whole * locus.repeat_unit_bp + micro


def allele_size(kit: KitConfig, locus: int, allele: float) -> float:
    """Fragment size in bp; micro-variant digits count as single base pairs."""
    lc = kit.locus(locus)
    a = normalize_allele(allele)
    if not lc.allele_min - 1e-9 <= a <= lc.allele_max + 1e-9:
        raise KitError(
            f"allele {allele} outside kit range [{lc.allele_min}, {lc.allele_max}] at {lc.name}"
        )
    return allele_size_for(lc, a)


def size_to_allele(locus: LocusDef, size_bp: float) -> float:
    """Inverse of the sizing rule, rounding to the nearest whole base pair.

    The micro-variant digit is always below the repeat length, so the result is
    the canonical designation for that size.
    """
    bp = int(round(size_bp - locus.size_offset_bp))
    rep = int(round(locus.repeat_unit_bp))
    whole, rem = divmod(bp, rep)
    return normalize_allele(whole + rem / 10.0)


def allele_frequency(kit: KitConfig, locus: int, allele: float) -> float:
    f = kit.frequencies.entries.get((locus, normalize_allele(allele)))
    if f is None or f <= 0.0:
        return kit.frequencies.minimum_frequency
    return f


def _parse_kit(doc: dict, source: str) -> KitConfig:
    if not isinstance(doc, dict) or "loci" not in doc:
        raise KitError(f"{source}: missing 'loci' array")
    raw_loci = doc["loci"]
    if len(raw_loci) != N_LOCI:
        raise KitError(f"{source}: expected {N_LOCI} loci, found {len(raw_loci)}")
    try:
        two_n = int(doc["sample_size_2N"])
    except (KeyError, TypeError, ValueError) as exc:
        raise KitError(f"{source}: missing or invalid sample_size_2N") from exc
    if two_n <= 0:
        raise KitError(f"{source}: sample_size_2N must be positive")

    dyes = tuple(doc.get("dyes", DEFAULT_DYES))
    if len(dyes) != N_DYES or len(set(dyes)) != N_DYES:
        raise KitError(f"{source}: expected {N_DYES} distinct dye lanes")
    colors = dict(DEFAULT_DYE_COLORS)
    colors.update(doc.get("dye_colors", {}))
    missing = [d for d in dyes if d not in colors]
    if missing:
        raise KitError(f"{source}: no colour for dye(s) {missing}")

    loci = []
    entries: dict[tuple[int, float], float] = {}
    seen = set()
    for i, item in enumerate(raw_loci):
        try:
            name = str(item["name"])
            lc = LocusDef(
                name=name,
                index=i,
                dye=str(item["dye"]),
                repeat_unit_bp=float(item["repeat_unit_bp"]),
                size_offset_bp=float(item["size_offset_bp"]),
                allele_min=normalize_allele(item["allele_min"]),
                allele_max=normalize_allele(item["allele_max"]),
            )
            freqs = {normalize_allele(float(k)): float(v) for k, v in item["frequencies"].items()}
        except (KeyError, TypeError, ValueError) as exc:
            raise KitError(f"{source}: locus #{i} malformed ({exc})") from exc
        if name in seen:
            raise KitError(f"{source}: duplicate locus name {name}")
        seen.add(name)
        if lc.dye not in dyes:
            raise KitError(f"{source}: locus {name} uses unknown dye {lc.dye!r}")
        if lc.repeat_unit_bp <= 0:
            raise KitError(f"{source}: locus {name} has non-positive repeat unit")
        if not lc.allele_min < lc.allele_max:
            raise KitError(f"{source}: locus {name} has allele_min >= allele_max")
        if not freqs:
            raise KitError(f"{source}: locus {name} has no frequencies")
        if any(not 0.0 <= f <= 1.0 for f in freqs.values()):
            raise KitError(f"{source}: locus {name} has a frequency outside [0, 1]")
        total = math.fsum(freqs.values())
        if abs(total - 1.0) > 1e-6:
            raise KitError(f"{source}: frequencies at locus {name} sum to {total:.6g}, not 1")
        for a, f in freqs.items():
            if not lc.allele_min - 1e-9 <= a <= lc.allele_max + 1e-9:
                raise KitError(f"{source}: locus {name} lists allele {a} outside its range")
            entries[(i, a)] = f
        loci.append(lc)

    return KitConfig(
        loci=tuple(loci),
        frequencies=AlleleFrequencyTable(entries=entries, sample_size_2N=two_n),
        dyes=dyes,
        dye_colors=colors,
        name=str(doc.get("name", Path(source).stem)),
    )


def load_kit_config(path: str | Path) -> KitConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise KitError(f"{path}: parse error: {exc}") from exc
    return _parse_kit(doc, str(path))


def kit_from_dict(doc: dict) -> KitConfig:
    return _parse_kit(doc, "<dict>")


def save_kit_config(kit: KitConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(kit.to_dict(), indent=1) + "\n", encoding="utf-8")


def default_kit_path() -> Path:
    return Path(str(resources.files("strnoc") / "data" / "default_kit.json"))


def default_kit() -> KitConfig:
    """The bundled synthetic 24-locus kit (frequencies are not population data)."""
    return load_kit_config(default_kit_path())
