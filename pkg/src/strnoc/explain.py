"""Single-image summary of a profile and all six model outputs (SVG + JSON).

The report is built once as an in-memory object holding both the plotted data
and every drawing primitive; the SVG and the JSON are two serialisations of
that object, so each number drawn is also present in the JSON.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .encoder import MAX_PEAKS, N_LOCI, captured_peaks
from .kit import KitConfig, allele_key, allele_size
from .simulator import SimulatedProfile

CANVAS_W = 1400
TRACK_H = 210
PLOT_H = 120
PLOT_X0 = 90
PLOT_X1 = 1010
SIZE_MIN = 50.0
SIZE_MAX = 500.0
PANEL_X = 1060
PANEL_W = 300
TOP = 40
HIGHLIGHT = "#d62728"
GREY = "#c8c8c8"


def _r(x: float) -> float:
    """Two-decimal rounding used for every drawn coordinate and value."""
    return float(round(float(x), 2)) + 0.0


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    v = _r(x)
    return str(int(v)) if v == int(v) else repr(v)


@dataclass
class PeakView:
    locus: int
    allele: float
    size_bp: float
    height_rfu: float
    drawn_height: float
    x: float
    baseline_y: float
    color: str
    plp: float
    prop_allelic: float
    tick_y: float
    allele_count_probs: list[float]


@dataclass
class LocusView:
    index: int
    name: str
    dye: str
    allele_count_probs: list[float]
    mixture: list[float]


@dataclass
class ExplainReport:
    peaks: list[PeakView]
    loci: list[LocusView]
    profile_mixture: list[float]
    noc_probabilities: list[float]
    noc: int
    canvas: dict
    elements: list[dict] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1) + "\n"

    def to_svg(self) -> str:
        w, h = self.canvas["width"], self.canvas["height"]
        out = [
            '<?xml version="1.0" encoding="UTF-8"?>',
            f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{_fmt(w)}" '
            f'height="{_fmt(h)}" viewBox="0 0 {_fmt(w)} {_fmt(h)}" font-family="sans-serif">',
        ]
        _emit(self.elements, out, 1)
        out.append("</svg>")
        return "\n".join(out) + "\n"


def _emit(elements: list[dict], out: list[str], depth: int) -> None:
    pad = "  " * depth
    for el in elements:
        attrs = "".join(f' {k}="{escape(_fmt(v))}"' for k, v in el.get("attrs", {}).items())
        tag = el["tag"]
        if tag == "g":
            out.append(f"{pad}<g{attrs}>")
            _emit(el["children"], out, depth + 1)
            out.append(f"{pad}</g>")
        elif "text" in el:
            out.append(f"{pad}<{tag}{attrs}>{escape(_fmt(el['text']))}</{tag}>")
        else:
            out.append(f"{pad}<{tag}{attrs}/>")


def _rect(x, y, w, h, fill, cls=None, **extra) -> dict:
    attrs = {"x": _r(x), "y": _r(y), "width": _r(max(w, 0)), "height": _r(max(h, 0)), "fill": fill}
    if cls:
        attrs["class"] = cls
    attrs.update(extra)
    return {"tag": "rect", "attrs": attrs}


def _line(x1, y1, x2, y2, stroke, width=1, cls=None) -> dict:
    attrs = {"x1": _r(x1), "y1": _r(y1), "x2": _r(x2), "y2": _r(y2), "stroke": stroke,
             "stroke-width": _r(width)}
    if cls:
        attrs["class"] = cls
    return {"tag": "line", "attrs": attrs}


def _text(x, y, s, size=10, anchor="middle", cls=None, fill="#000000") -> dict:
    attrs = {"x": _r(x), "y": _r(y), "font-size": _r(size), "text-anchor": anchor, "fill": fill}
    if cls:
        attrs["class"] = cls
    return {"tag": "text", "attrs": attrs, "text": s}


def size_to_x(size_bp: float) -> float:
    frac = (size_bp - SIZE_MIN) / (SIZE_MAX - SIZE_MIN)
    return PLOT_X0 + min(max(frac, 0.0), 1.0) * (PLOT_X1 - PLOT_X0)


def build_report(profile: SimulatedProfile, tensor: np.ndarray, outputs, kit: KitConfig) -> ExplainReport:
    """Assemble the report; ``outputs`` are the six dense outputs for ``tensor``."""
    prop, pcount, lmix, lcount, pmix, noc_p = [np.asarray(o, dtype=np.float64) for o in outputs]
    shapes = [(N_LOCI, MAX_PEAKS, 1), (N_LOCI, MAX_PEAKS, 21), (N_LOCI, 10), (N_LOCI, 20), (10,), (10,)]
    for arr, shape in zip((prop, pcount, lmix, lcount, pmix, noc_p), shapes):
        if arr.shape != shape:
            raise ValueError(f"output shape {arr.shape} does not match expected {shape}")
    tensor = np.asarray(tensor)
    active = np.any(tensor != 0, axis=2)
    groups = captured_peaks(profile)
    for li in range(N_LOCI):
        n_rows = len(groups.get(li, []))
        if int(active[li].sum()) != n_rows or (n_rows and not active[li, :n_rows].all()):
            raise ValueError(f"tensor rows at locus {li} do not match the profile's peaks")

    n_tracks = len(kit.dyes)
    height = TOP + n_tracks * TRACK_H + 20
    canvas = {"width": CANVAS_W, "height": height, "track_height": TRACK_H, "plot_height": PLOT_H}
    noc = int(np.argmax(noc_p)) + 1

    peaks: list[PeakView] = []
    loci: list[LocusView] = []
    elements: list[dict] = [_rect(0, 0, CANVAS_W, height, "#ffffff", cls="background")]

    for ti, dye in enumerate(kit.dyes):
        color = kit.dye_colors[dye]
        y0 = TOP + ti * TRACK_H
        base = y0 + PLOT_H + 10
        dye_loci = kit.loci_in_dye(dye)
        heights = [profile.peaks[gi].height_rfu for lc in dye_loci for gi in groups.get(lc.index, [])]
        scale = PLOT_H / max(heights) if heights else 0.0
        track = {"tag": "g", "attrs": {"class": "dye-track", "data-dye": dye}, "children": [
            _line(PLOT_X0, base, PLOT_X1, base, "#888888", 1, cls="axis"),
            _text(PLOT_X0 - 8, y0 + 14, dye, 11, "end", cls="dye-label", fill=color),
        ]}
        for lc in dye_loci:
            li = lc.index
            lx0 = size_to_x(allele_size(kit, li, lc.allele_min))
            lx1 = size_to_x(allele_size(kit, li, lc.allele_max))
            children = [_text((lx0 + lx1) / 2, y0 + 12, lc.name, 10, cls="locus-name")]
            for r, gi in enumerate(groups.get(li, [])):
                p = profile.peaks[gi]
                x = size_to_x(p.size_bp)
                dh = _r(p.height_rfu * scale)
                pa = _r(prop[li, r, 0])
                tick_y = _r(base - dh * pa)
                pv = PeakView(li, p.allele, _r(p.size_bp), _r(p.height_rfu), dh, _r(x), _r(base), color,
                              _r(p.plp), pa, tick_y, [_r(v) for v in pcount[li, r]])
                peaks.append(pv)
                children.append({"tag": "g", "attrs": {"class": "peak"}, "children": [
                    _rect(x - 3, base - PLOT_H * p.plp, 6, PLOT_H * p.plp, GREY, cls="plp-bar"),
                    _line(x, base, x, base - dh, color, 2, cls="peak-line"),
                    _line(x - 4, tick_y, x + 4, tick_y, HIGHLIGHT, 2, cls="allelic-tick"),
                    _text(x, base + 11, allele_key(p.allele), 8, cls="allele-label"),
                ]})
            # per-locus allele-count distribution (20 bins) and mixture strip
            cw = max(lx1 - lx0, 40.0)
            bin_w = cw / 20
            dist_y = base + 48
            dist = {"tag": "g", "attrs": {"class": "locus-count"}, "children": []}
            for k in range(20):
                bh = 26 * lcount[li, k]
                dist["children"].append(_rect(lx0 + k * bin_w, dist_y - bh, bin_w * 0.9, bh, "#555555",
                                              cls="count-bin"))
            strip = {"tag": "g", "attrs": {"class": "locus-mixture"}, "children": []}
            sx = lx0
            for j in range(10):
                w = cw * lmix[li, j]
                shade = _shade(j)
                strip["children"].append(_rect(sx, dist_y + 6, w, 8, shade, cls="mix-seg"))
                sx += w
            children += [dist, strip]
            track["children"].append({"tag": "g", "attrs": {"class": "locus", "data-locus": lc.name,
                                                             "data-index": li}, "children": children})
            loci.append(LocusView(li, lc.name, dye, [_r(v) for v in lcount[li]], [_r(v) for v in lmix[li]]))
        elements.append(track)

    # profile panel
    panel = {"tag": "g", "attrs": {"class": "profile-panel"}, "children": [
        _text(PANEL_X, TOP + 4, "Profile mixture", 12, "start", cls="panel-title"),
    ]}
    bar_w = PANEL_W / 10
    for j in range(10):
        bh = 100 * pmix[j]
        panel["children"].append(_rect(PANEL_X + j * bar_w, TOP + 120 - bh, bar_w * 0.8, bh, _shade(j),
                                       cls="profile-mix-bar"))
        panel["children"].append(_text(PANEL_X + j * bar_w + bar_w * 0.4, TOP + 134, str(j + 1), 9))
    ny = TOP + 200
    panel["children"].append(_text(PANEL_X, ny - 10, "Number of contributors", 12, "start", cls="panel-title"))
    for j in range(10):
        bh = 120 * noc_p[j]
        hl = j == noc - 1
        panel["children"].append(_rect(PANEL_X + j * bar_w, ny + 120 - bh, bar_w * 0.8, bh,
                                       HIGHLIGHT if hl else "#7f7f7f",
                                       cls="noc-bar highlight" if hl else "noc-bar",
                                       **{"data-noc": j + 1, "data-p": _r(noc_p[j])}))
        panel["children"].append(_text(PANEL_X + j * bar_w + bar_w * 0.4, ny + 134, str(j + 1), 9))
    elements.append(panel)

    return ExplainReport(
        peaks=peaks,
        loci=loci,
        profile_mixture=[_r(v) for v in pmix],
        noc_probabilities=[float(v) for v in noc_p],
        noc=noc,
        canvas=canvas,
        elements=elements,
    )


def _shade(j: int) -> str:
    palette = ["#08306b", "#08519c", "#2171b5", "#4292c6", "#6baed6",
               "#9ecae1", "#c6dbef", "#fdae6b", "#fd8d3c", "#e6550d"]
    return palette[j % len(palette)]


def render_report(profile: SimulatedProfile, tensor: np.ndarray, outputs, kit: KitConfig,
                  out_svg: str | Path, out_json: str | Path) -> tuple[Path, Path]:
    report = build_report(profile, tensor, outputs, kit)
    out_svg, out_json = Path(out_svg), Path(out_json)
    out_svg.write_text(report.to_svg(), encoding="utf-8")
    out_json.write_text(report.to_json(), encoding="utf-8")
    return out_svg, out_json
