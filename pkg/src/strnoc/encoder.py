"""Profile -> [24 x 50 x 89] feature tensor, plus the six labelled outputs.

Feature layout per peak row (0-based column ranges):

    0-23    one-hot locus
    24      allele / 100
    25      size_bp / 100
    26      height / 33000 (capped at 1)
    27      allele frequency
    28      plp
    29-52   "this peak is a stutter of type i" blocks (back, double back,
            forward, point-2), 6 values each: parent allele / 100, parent
            height / 33000, min(height / parent height, 1), expected stutter
            ratio, parent frequency, parent plp
    53-76   "this peak is the parent of a stutter of type j" blocks, 6 values
            each: stutter allele / 100, stutter height / 33000,
            min(stutter height / height, 1), expected stutter ratio of this
            peak, stutter frequency, stutter plp
    77      peaks at the locus / 100
    78      peaks in the profile / 1000
    79-88   smart-start mixture proportions for 10 hypothetical donors
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator, Sequence

import numpy as np

from .kit import KitConfig, KitError, allele_frequency, normalize_allele
from .simulator import (
    MAX_NOC,
    STUTTER_OFFSETS,
    STUTTER_TYPES,
    SimParams,
    SimulatedPeak,
    SimulatedProfile,
    expected_stutter_ratio,
)

N_LOCI = 24
MAX_PEAKS = 50
N_FEATURES = 89
HEIGHT_SCALE = 33000.0
N_DONORS = 10
N_PEAK_COUNTS = 21
N_LOCUS_COUNTS = 20

COL_ALLELE = 24
COL_SIZE = 25
COL_HEIGHT = 26
COL_FREQ = 27
COL_PLP = 28
COL_CHILD = 29
COL_PARENT = 53
COL_LOCUS_PEAKS = 77
COL_PROFILE_PEAKS = 78
COL_SMART = 79

LABEL_NAMES = (
    "peak_prop_allelic",
    "peak_allele_count",
    "locus_mixture",
    "locus_allele_count",
    "profile_mixture",
    "profile_noc",
)
LABEL_SHAPES = (
    (N_LOCI, MAX_PEAKS, 1),
    (N_LOCI, MAX_PEAKS, N_PEAK_COUNTS),
    (N_LOCI, N_DONORS),
    (N_LOCI, N_LOCUS_COUNTS),
    (N_DONORS,),
    (N_DONORS,),
)


class EncodingError(ValueError):
    pass


# --------------------------------------------------------------------------
# peak filtering and stutter links


def filter_artefact_peaks(profile: SimulatedProfile, threshold: float = 0.97) -> SimulatedProfile:
    """Drop peaks whose artefact probability (1 - plp) exceeds ``threshold``."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    keep = [i for i, p in enumerate(profile.peaks) if not (1.0 - p.plp) > threshold]
    remap = {old: new for new, old in enumerate(keep)}
    peaks = []
    for old in keep:
        p = profile.peaks[old]
        peaks.append(replace(
            p,
            stutter_parent={t: remap[i] for t, i in p.stutter_parent.items() if i in remap},
            stutter_child={t: remap[i] for t, i in p.stutter_child.items() if i in remap},
        ))
    return replace(profile, peaks=peaks)


def stutter_linkage(peaks: Sequence[SimulatedPeak]) -> dict[tuple[int, str], int]:
    """Link stutter children to parents within one locus.

    Returns ``{(child_index, stutter_type): parent_index}``. A child at
    designation c has a parent of type t at c - offset(t) (within 0.01); when
    several candidates qualify the one closest in height wins.
    """
    by_allele: dict[float, list[int]] = {}
    for i, p in enumerate(peaks):
        by_allele.setdefault(normalize_allele(p.allele), []).append(i)
    links = {}
    for ci, child in enumerate(peaks):
        for st in STUTTER_TYPES:
            target = normalize_allele(child.allele - STUTTER_OFFSETS[st])
            cands = [i for i in by_allele.get(target, ()) if i != ci
                     and abs(peaks[i].allele - child.allele + STUTTER_OFFSETS[st]) <= 0.01 + 1e-9]
            if not cands:
                continue
            best = min(cands, key=lambda i: (abs(peaks[i].height_rfu - child.height_rfu), i))
            links[(ci, st)] = best
    return links


# --------------------------------------------------------------------------
# smart start


def smart_start(profile: SimulatedProfile, n_donors: int = N_DONORS) -> np.ndarray:
    """Greedy template estimates for ``n_donors`` hypothetical contributors.

    At each step the template is the median over loci of the mean of the two
    largest unexplained plp-weighted heights; that amount is then removed from
    the two largest heights at every locus. Superfluous contributors get 1% of
    the first template.
    """
    if not profile.peaks:
        raise EncodingError("smart_start needs at least one peak")
    remaining: dict[int, list[float]] = {}
    for p in profile.peaks:
        remaining.setdefault(p.locus, []).append(max(p.height_rfu, 0.0) * p.plp)
    loci = {k: np.array(v, dtype=np.float64) for k, v in remaining.items()}

    t = np.zeros(n_donors)
    for k in range(n_donors):
        estimates = []
        slots = {}
        for li, h in loci.items():
            pos = np.flatnonzero(h > 0)
            if pos.size == 0:
                continue
            order = pos[np.argsort(-h[pos], kind="stable")]
            two = [order[0], order[0]] if order.size == 1 else [order[0], order[1]]
            slots[li] = two
            estimates.append(0.5 * (h[two[0]] + h[two[1]]))
        tk = float(np.median(estimates)) if estimates else 0.0
        for li, two in slots.items():
            h = loci[li]
            for idx in two:
                h[idx] -= min(tk, h[idx])
        t[k] = tk
        if k > 0 and t[k] < 0.01 * t[0]:
            t[k] = 0.01 * t[0]
    if t[0] <= 0:
        return np.full(n_donors, 1.0 / n_donors)
    t = np.sort(t)[::-1]
    return t / t.sum()


# --------------------------------------------------------------------------
# tensor encoding


@dataclass
class CompactProfile:
    """Active rows of a profile tensor plus their (locus, position) coordinates."""

    rows: np.ndarray        # [n, 89]
    locus: np.ndarray       # [n] int
    pos: np.ndarray         # [n] int, position within the locus block

    def to_dense(self, dtype=np.float32) -> np.ndarray:
        out = np.zeros((N_LOCI, MAX_PEAKS, N_FEATURES), dtype=dtype)
        out[self.locus, self.pos] = self.rows
        return out

    @classmethod
    def from_dense(cls, tensor: np.ndarray) -> "CompactProfile":
        tensor = np.asarray(tensor)
        if tensor.shape != (N_LOCI, MAX_PEAKS, N_FEATURES):
            raise EncodingError(f"tensor shape {tensor.shape} != {(N_LOCI, MAX_PEAKS, N_FEATURES)}")
        li, pi = np.nonzero(np.any(tensor != 0, axis=2))
        return cls(rows=tensor[li, pi], locus=li.astype(np.int32), pos=pi.astype(np.int32))


def _sorted_locus_peaks(profile: SimulatedProfile) -> dict[int, list[int]]:
    groups: dict[int, list[int]] = {}
    for i, p in enumerate(profile.peaks):
        if not 0 <= p.locus < N_LOCI:
            raise EncodingError(f"unknown locus index {p.locus}")
        groups.setdefault(p.locus, []).append(i)
    for li in groups:
        groups[li].sort(key=lambda i: (profile.peaks[i].size_bp, -profile.peaks[i].height_rfu,
                                       profile.peaks[i].allele))
    return groups


def captured_peaks(profile: SimulatedProfile) -> dict[int, list[int]]:
    """Per locus, indices of the (at most 50) captured peaks in row order."""
    return {li: idx[:MAX_PEAKS] for li, idx in _sorted_locus_peaks(profile).items()}


def encode_compact(profile: SimulatedProfile, kit: KitConfig,
                   sim_params: SimParams | None = None, dtype=np.float32) -> CompactProfile:
    groups = _sorted_locus_peaks(profile)
    peaks = profile.peaks
    n_total = len(peaks)
    smart = smart_start(profile) if peaks else np.zeros(N_DONORS)

    freq = [allele_frequency(kit, p.locus, p.allele) for p in peaks]

    rows, loci, pos = [], [], []
    for li in sorted(groups):
        idx = groups[li]
        local = [peaks[i] for i in idx]
        links = stutter_linkage(local)
        children: dict[tuple[int, str], int] = {}
        for (c, st), par in links.items():
            prev = children.get((par, st))
            if prev is None or (abs(local[c].height_rfu - local[par].height_rfu)
                                < abs(local[prev].height_rfu - local[par].height_rfu)):
                children[(par, st)] = c
        for r, gi in enumerate(idx[:MAX_PEAKS]):
            p = peaks[gi]
            v = np.zeros(N_FEATURES, dtype=np.float64)
            v[li] = 1.0
            v[COL_ALLELE] = p.allele / 100.0
            v[COL_SIZE] = p.size_bp / 100.0
            v[COL_HEIGHT] = min(p.height_rfu, HEIGHT_SCALE) / HEIGHT_SCALE
            v[COL_FREQ] = freq[gi]
            v[COL_PLP] = p.plp
            for b, st in enumerate(STUTTER_TYPES):
                par = links.get((r, st))
                if par is not None:
                    q = local[par]
                    c0 = COL_CHILD + 6 * b
                    v[c0] = q.allele / 100.0
                    v[c0 + 1] = min(q.height_rfu, HEIGHT_SCALE) / HEIGHT_SCALE
                    v[c0 + 2] = min(p.height_rfu / q.height_rfu, 1.0) if q.height_rfu > 0 else 1.0
                    v[c0 + 3] = expected_stutter_ratio(kit, li, q.allele, st, sim_params)
                    v[c0 + 4] = freq[idx[par]]
                    v[c0 + 5] = q.plp
                ch = children.get((r, st))
                if ch is not None:
                    q = local[ch]
                    c0 = COL_PARENT + 6 * b
                    v[c0] = q.allele / 100.0
                    v[c0 + 1] = min(q.height_rfu, HEIGHT_SCALE) / HEIGHT_SCALE
                    v[c0 + 2] = min(q.height_rfu / p.height_rfu, 1.0) if p.height_rfu > 0 else 1.0
                    v[c0 + 3] = expected_stutter_ratio(kit, li, p.allele, st, sim_params)
                    v[c0 + 4] = freq[idx[ch]]
                    v[c0 + 5] = q.plp
            v[COL_LOCUS_PEAKS] = len(idx) / 100.0
            v[COL_PROFILE_PEAKS] = n_total / 1000.0
            v[COL_SMART:COL_SMART + N_DONORS] = smart
            rows.append(v)
            loci.append(li)
            pos.append(r)
    if rows:
        arr = np.asarray(rows, dtype=dtype)
    else:
        arr = np.zeros((0, N_FEATURES), dtype=dtype)
    return CompactProfile(arr, np.asarray(loci, dtype=np.int32), np.asarray(pos, dtype=np.int32))


def encode_profile(profile: SimulatedProfile, kit: KitConfig,
                   sim_params: SimParams | None = None, dtype=np.float32) -> np.ndarray:
    """Dense [24, 50, 89] tensor for an (already artefact-filtered) profile."""
    return encode_compact(profile, kit, sim_params, dtype).to_dense(dtype)


# --------------------------------------------------------------------------
# labels


@dataclass
class LabelSet:
    peak_prop_allelic: np.ndarray     # [24, 50, 1]
    peak_allele_count: np.ndarray     # [24, 50, 21]
    locus_mixture: np.ndarray         # [24, 10]
    locus_allele_count: np.ndarray    # [24, 20]
    profile_mixture: np.ndarray       # [10]
    profile_noc: np.ndarray           # [10]

    def arrays(self) -> tuple[np.ndarray, ...]:
        return tuple(getattr(self, n) for n in LABEL_NAMES)

    @property
    def noc(self) -> int:
        return int(np.argmax(self.profile_noc)) + 1


def _donor_peak_rfu(p: SimulatedPeak, proportions: Sequence[float]) -> np.ndarray:
    if p.donor_rfu is not None:
        return np.asarray(p.donor_rfu, dtype=np.float64)
    copies = np.asarray(p.donor_copies, dtype=np.float64)
    return copies * np.asarray(proportions, dtype=np.float64)


def build_labels(profile: SimulatedProfile) -> LabelSet:
    """Labelled outputs; donor columns are ordered by descending template.

    Peaks without a known composition (laboratory data) get NaN for the
    allelic proportion, to be filled by pseudo-labelling.
    """
    noc = profile.noc
    if not 1 <= noc <= MAX_NOC:
        raise EncodingError(f"noc {noc} outside [1, {MAX_NOC}]")
    order = profile.donor_order
    props = np.asarray(profile.donor_proportions, dtype=np.float64)
    if props.size != noc:
        if profile.donor_templates_rfu:
            t = np.asarray(profile.donor_templates_rfu, dtype=np.float64)
            props = t / t.sum()
        else:
            props = np.full(noc, 1.0 / noc)

    prop = np.zeros((N_LOCI, MAX_PEAKS, 1))
    pcount = np.zeros((N_LOCI, MAX_PEAKS, N_PEAK_COUNTS))
    lmix = np.zeros((N_LOCI, N_DONORS))
    lcount = np.zeros((N_LOCI, N_LOCUS_COUNTS))
    lcount[:, 2 * noc - 1] = 1.0

    groups = captured_peaks(profile)
    for li in range(N_LOCI):
        idx = groups.get(li, [])
        for r, gi in enumerate(idx):
            p = profile.peaks[gi]
            if p.allelic_rfu is None:
                prop[li, r, 0] = np.nan
            else:
                prop[li, r, 0] = min(max(p.allelic_rfu / p.height_rfu, 0.0), 1.0) if p.height_rfu > 0 else 0.0
            n_alleles = int(sum(p.donor_copies)) if p.donor_copies else 0
            pcount[li, r, min(n_alleles, N_PEAK_COUNTS - 1)] = 1.0
        share = np.zeros(noc)
        for gi in _sorted_locus_peaks(profile).get(li, []):
            d = _donor_peak_rfu(profile.peaks[gi], props)
            if d.size == noc:
                share += d
        share = share[order]
        if share.sum() > 0:
            lmix[li, :noc] = share / share.sum()
        else:
            lmix[li, :noc] = 1.0 / noc

    pmix = np.zeros(N_DONORS)
    pmix[:noc] = np.sort(props)[::-1]
    pmix /= pmix.sum()
    onehot = np.zeros(N_DONORS)
    onehot[noc - 1] = 1.0
    return LabelSet(prop, pcount, lmix, lcount, pmix, onehot)


# --------------------------------------------------------------------------
# binary tensor cache


CACHE_MAGIC = b"DNOC1"
CACHE_VERSION = 1
_SHAPE_SLOTS = 6  # per array: ndim followed by up to five dims, zero padded


def _write_array(fh: BinaryIO, arr: np.ndarray) -> None:
    header = [arr.ndim] + list(arr.shape) + [0] * (_SHAPE_SLOTS - 1 - arr.ndim)
    fh.write(struct.pack("<6I", *header))
    fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_exact(fh: BinaryIO, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise EncodingError(f"truncated tensor cache while reading {what}")
    return buf


def _read_array(fh: BinaryIO, what: str) -> np.ndarray:
    header = struct.unpack("<6I", _read_exact(fh, 24, what))
    ndim = header[0]
    if not 0 <= ndim <= _SHAPE_SLOTS - 1:
        raise EncodingError(f"bad ndim {ndim} in tensor cache ({what})")
    shape = tuple(header[1:1 + ndim])
    count = int(np.prod(shape)) if shape else 1
    data = np.frombuffer(_read_exact(fh, 4 * count, what), dtype="<f4")
    return data.reshape(shape).astype(np.float32)


def write_tensor_cache(path: str | Path, records: Iterable[tuple[np.ndarray, LabelSet]],
                       count: int) -> None:
    """Write ``count`` (tensor, labels) records; float32 little-endian, row-major."""
    written = 0
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<II", CACHE_VERSION, count))
        for tensor, labels in records:
            _write_array(fh, np.asarray(tensor))
            for arr in labels.arrays():
                _write_array(fh, np.asarray(arr))
            written += 1
    if written != count:
        raise EncodingError(f"wrote {written} records but header says {count}")


def read_tensor_cache(path: str | Path) -> Iterator[tuple[np.ndarray, LabelSet]]:
    with open(path, "rb") as fh:
        magic = fh.read(len(CACHE_MAGIC))
        if magic != CACHE_MAGIC:
            raise EncodingError(f"{path}: not a tensor cache (bad magic)")
        version, count = struct.unpack("<II", _read_exact(fh, 8, "header"))
        if version != CACHE_VERSION:
            raise EncodingError(f"{path}: unsupported cache version {version}")
        for r in range(count):
            tensor = _read_array(fh, f"record {r} input")
            if tensor.shape != (N_LOCI, MAX_PEAKS, N_FEATURES):
                raise EncodingError(f"{path}: record {r} input has shape {tensor.shape}")
            outs = []
            for name, shape in zip(LABEL_NAMES, LABEL_SHAPES):
                arr = _read_array(fh, f"record {r} {name}")
                if arr.shape != shape:
                    raise EncodingError(f"{path}: record {r} {name} has shape {arr.shape}")
                outs.append(arr)
            yield tensor, LabelSet(*outs)


__all__ = [
    "filter_artefact_peaks", "stutter_linkage", "smart_start", "encode_profile",
    "encode_compact", "build_labels", "LabelSet", "CompactProfile", "EncodingError",
    "write_tensor_cache", "read_tensor_cache", "KitError",
]
