"""Regenerate src/strnoc/data/default_kit.json.

The bundled kit is a synthetic 24-locus layout. Locus names and rough allele
ranges follow common autosomal STR markers, but the allele frequencies are
made up (a discretised bell shape per locus) and must not be used for
casework. Supply real population data through your own kit file.
"""

import json
import math
from pathlib import Path

# name, repeat unit (bp), allele_min, allele_max, micro-variants
LOCI = [
    ("D3S1358", 4, 9, 20, [15.2]),
    ("vWA", 4, 10, 24, []),
    ("D16S539", 4, 5, 16, []),
    ("CSF1PO", 4, 6, 16, []),
    ("TPOX", 4, 5, 15, []),
    ("D8S1179", 4, 7, 19, []),
    ("D21S11", 4, 24, 38.2, [29.2, 30.2, 31.2, 32.2, 33.2]),
    ("D18S51", 4, 7, 27, [13.2, 14.2]),
    ("D2S441", 4, 8, 17, [11.3, 14.3]),
    ("D19S433", 4, 6, 19, [13.2, 14.2, 15.2]),
    ("TH01", 4, 4, 14, [9.3]),
    ("FGA", 4, 16, 34, [21.2, 22.2]),
    ("D22S1045", 3, 8, 19, []),
    ("D5S818", 4, 7, 18, []),
    ("D13S317", 4, 5, 16, []),
    ("D7S820", 4, 6, 16, []),
    ("SE33", 4, 9, 31, [20.2, 21.2, 27.2, 28.2, 29.2]),
    ("D10S1248", 4, 8, 19, []),
    ("D1S1656", 4, 9, 20, [14.3, 15.3, 16.3, 17.3]),
    ("D12S391", 4, 14, 27, [17.3, 18.3, 19.3]),
    ("D2S1338", 4, 15, 28, []),
    ("PentaD", 5, 2.2, 17, []),
    ("PentaE", 5, 5, 24, []),
    ("D6S1043", 4, 8, 25, [18.3, 19.3]),
]
DYES = ["blue", "green", "yellow", "red", "purple", "orange"]
DYE_COLORS = {
    "blue": "#1f4fd1",
    "green": "#1a9e3a",
    "yellow": "#2b2b2b",
    "red": "#d62728",
    "purple": "#8e44ad",
    "orange": "#ff8c1a",
}
START_BP = 70
GAP_BP = 12


def _frequencies(lo, hi, micro):
    alleles = [float(a) for a in range(math.ceil(lo), math.floor(hi) + 1)]
    if lo != math.floor(lo):
        alleles.append(lo)
    if hi != math.floor(hi):
        alleles.append(hi)
    alleles += micro
    mid = (lo + hi) / 2
    sd = max((hi - lo) / 5, 1.0)
    raw = {}
    for a in sorted(set(alleles)):
        w = math.exp(-0.5 * ((a - mid) / sd) ** 2) + 0.01
        if a != math.floor(a):
            w *= 0.15
        raw[a] = w
    total = sum(raw.values())
    return {_fmt(a): w / total for a, w in raw.items()}


def _fmt(a):
    return str(int(a)) if a == math.floor(a) else f"{a:.1f}"


def main():
    loci = []
    cursor = {d: START_BP for d in DYES}
    for i, (name, rep, lo, hi, micro) in enumerate(LOCI):
        dye = DYES[i // 4]
        offset = cursor[dye] - math.floor(lo) * rep
        max_size = offset + math.floor(hi) * rep + round((hi - math.floor(hi)) * 10)
        cursor[dye] = max_size + GAP_BP
        loci.append({
            "name": name,
            "dye": dye,
            "repeat_unit_bp": rep,
            "size_offset_bp": offset,
            "allele_min": lo,
            "allele_max": hi,
            "frequencies": _frequencies(lo, hi, micro),
        })
    kit = {
        "name": "synthetic-24",
        "note": "Synthetic allele frequencies; not population data.",
        "dyes": DYES,
        "dye_colors": DYE_COLORS,
        "sample_size_2N": 1000,
        "loci": loci,
    }
    out = Path(__file__).resolve().parents[1] / "src" / "strnoc" / "data" / "default_kit.json"
    out.write_text(json.dumps(kit, indent=1) + "\n", encoding="utf-8")
    print(out, {d: c for d, c in cursor.items()})


if __name__ == "__main__":
    main()
