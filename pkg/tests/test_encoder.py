import numpy as np
import pytest

from conftest import make_peak, make_profile, quiet_params
from strnoc.encoder import (
    COL_HEIGHT,
    COL_PLP,
    LABEL_SHAPES,
    EncodingError,
    build_labels,
    encode_compact,
    encode_profile,
    filter_artefact_peaks,
    read_tensor_cache,
    smart_start,
    stutter_linkage,
    write_tensor_cache,
)
from strnoc.simulator import SimParams, simulate_profile, simulate_record


# features are numbered from 1 in the published layout; columns here are 0-based
def feature(v, n):
    return v[n - 1]


def test_plp_filter_boundaries():
    prof = make_profile([make_peak(0, 10, 500, plp=0.01), make_peak(0, 11, 500, plp=0.03),
                         make_peak(0, 12, 500, plp=0.9)])
    kept = [p.allele for p in filter_artefact_peaks(prof).peaks]
    assert kept == [11, 12]
    assert len(filter_artefact_peaks(prof, 1.0).peaks) == 3


def test_filter_remaps_stutter_links(kit):
    prof = simulate_record(kit, SimParams(seed=9, noc_min=2, noc_max=2, artefact_rate=20), 0)
    f = filter_artefact_peaks(prof)
    for p in f.peaks:
        for t, i in p.stutter_parent.items():
            assert f.peaks[i].locus == p.locus
            assert abs(f.peaks[i].allele - p.allele - {"back": 1, "double_back": 2,
                                                       "forward": -1, "point2": 0.2}[t]) < 1e-6


def test_stutter_linkage_rules():
    links = stutter_linkage([make_peak(0, 9, 100), make_peak(0, 10, 1000)])
    assert links[(0, "back")] == 1
    assert links[(1, "forward")] == 0

    links = stutter_linkage([make_peak(0, 8, 100), make_peak(0, 10, 1000)])
    assert links[(0, "double_back")] == 1
    assert (0, "back") not in links

    links = stutter_linkage([make_peak(0, 9.8, 100), make_peak(0, 10, 1000)])
    assert links[(0, "point2")] == 1


def test_smart_start_single_source(kit):
    prof = simulate_profile(kit, quiet_params(), np.random.default_rng(2))
    for p in prof.peaks:
        p.plp = 1.0
    s = smart_start(prof)
    assert s.shape == (10,)
    assert s.sum() == pytest.approx(1.0, abs=1e-9)
    assert s[0] > 0.5
    assert np.all(s[1:] == s[1])
    # the first donor explains everything; the nine others sit at the 1% floor
    assert s[0] == pytest.approx(1 / 1.09)
    assert s[1] == pytest.approx(0.01 / 1.09)


def test_smart_start_normalised_and_sorted(kit):
    for i in range(10):
        s = smart_start(simulate_record(kit, SimParams(seed=12), i))
        assert s.sum() == pytest.approx(1.0, abs=1e-9)
        assert np.all(np.diff(s) <= 0)


def test_smart_start_scale_invariant(kit):
    prof = simulate_record(kit, SimParams(seed=5, noc_min=3, noc_max=3), 0)
    doubled = make_profile([make_peak(p.locus, p.allele, 2 * p.height_rfu, plp=p.plp) for p in prof.peaks])
    assert np.array_equal(smart_start(prof), smart_start(doubled))


def test_smart_start_empty():
    with pytest.raises(EncodingError):
        smart_start(make_profile([]))


def test_height_and_scalar_features(kit):
    lc = kit.loci[0]
    prof = make_profile([make_peak(0, 12, 3300, plp=0.8, size=310.0), make_peak(0, 22, 500, size=400.0)])
    t = encode_profile(prof, kit, dtype=np.float64)
    v = t[0, 0]
    assert feature(v, 27) == pytest.approx(0.1)
    assert feature(v, 29) == pytest.approx(0.8)
    assert v[COL_HEIGHT] == feature(v, 27) and v[COL_PLP] == feature(v, 29)
    assert feature(v, 1) == 1.0 and v[1:24].sum() == 0
    w = t[0, 1]
    assert feature(w, 25) == pytest.approx(0.22)
    assert feature(w, 26) == pytest.approx(4.00)
    assert feature(v, 26) == pytest.approx(3.10)
    assert lc.allele_min <= 12


def test_empty_locus_block_zero(kit):
    t = encode_profile(make_profile([make_peak(3, 12, 800)]), kit)
    assert t.shape == (24, 50, 89)
    assert not t[np.arange(24) != 3].any()
    assert not t[3, 1:].any()


def test_truncation_keeps_smallest_50(kit):
    peaks = [make_peak(2, 10, 100 + i, size=500.0 - i) for i in range(60)]
    prof = make_profile(peaks)
    t = encode_profile(prof, kit, dtype=np.float64)
    assert np.all(np.any(t[2] != 0, axis=1))
    sizes = t[2, :, 25] * 100
    assert np.allclose(sizes, sorted(500.0 - np.arange(60))[:50])


def test_tie_break_height_descending(kit):
    prof = make_profile([make_peak(0, 10, 100, size=200.0), make_peak(0, 10.1, 900, size=200.0)])
    t = encode_profile(prof, kit, dtype=np.float64)
    assert t[0, 0, COL_HEIGHT] > t[0, 1, COL_HEIGHT]


def test_stutter_child_block(kit):
    prof = make_profile([make_peak(0, 12, 100), make_peak(0, 13, 1000)])
    t = encode_profile(prof, kit, dtype=np.float64)
    child, parent = t[0, 0], t[0, 1]
    # the back-stutter child sees its parent in block 30..35, the parent its child in 54..59
    assert child[29] == pytest.approx(0.13)
    assert child[31] == pytest.approx(0.1)
    assert parent[53] == pytest.approx(0.12)
    assert parent[55] == pytest.approx(0.1)


def test_labels_shapes_and_noc(kit):
    prof = simulate_record(kit, SimParams(seed=1, noc_min=3, noc_max=3), 0)
    labels = build_labels(filter_artefact_peaks(prof))
    assert tuple(a.shape for a in labels.arrays()) == LABEL_SHAPES
    assert np.all(labels.locus_allele_count.argmax(axis=1) + 1 == 6)
    assert labels.locus_allele_count.sum() == 24
    assert labels.noc == 3
    assert np.allclose(labels.locus_mixture.sum(axis=1), 1.0)
    assert labels.profile_mixture.sum() == pytest.approx(1.0)


def test_pure_artefact_labels(kit):
    p = make_peak(0, 11, 40, plp=0.2, allelic=0.0, copies=(0,))
    p.artefact_rfu = 40.0
    labels = build_labels(make_profile([p]))
    assert labels.peak_prop_allelic[0, 0, 0] == 0.0
    assert labels.peak_allele_count[0, 0].argmax() == 0
    assert labels.peak_allele_count[0, 0].sum() == 1


def test_equal_templates_profile_mixture():
    labels = build_labels(make_profile([make_peak(0, 11, 40, copies=(1,) * 10)], noc=10))
    assert np.allclose(labels.profile_mixture, 0.1)


def test_lab_profile_labels_are_nan():
    p = make_peak(0, 11, 400)
    p.allelic_rfu = None
    labels = build_labels(make_profile([p]))
    assert np.isnan(labels.peak_prop_allelic[0, 0, 0])


def test_compact_matches_dense(kit):
    prof = filter_artefact_peaks(simulate_record(kit, SimParams(seed=4), 2))
    c = encode_compact(prof, kit)
    dense = encode_profile(prof, kit)
    assert np.array_equal(c.to_dense(), dense)
    back = type(c).from_dense(dense)
    assert np.array_equal(back.rows, c.rows)


def test_tensor_cache_roundtrip(kit, tmp_path):
    profs = [filter_artefact_peaks(simulate_record(kit, SimParams(seed=6), i)) for i in range(3)]
    recs = [(encode_profile(p, kit), build_labels(p)) for p in profs]
    path = tmp_path / "d.dnoc"
    write_tensor_cache(path, recs, 3)
    got = list(read_tensor_cache(path))
    assert len(got) == 3
    for (t, lab), (t2, lab2) in zip(recs, got):
        assert np.array_equal(t, t2)
        for a, b in zip(lab.arrays(), lab2.arrays()):
            assert np.array_equal(a.astype(np.float32), b)


def test_tensor_cache_errors(tmp_path):
    bad = tmp_path / "bad.dnoc"
    bad.write_bytes(b"XXXXX\x01\x00\x00\x00")
    with pytest.raises(EncodingError, match="bad magic"):
        list(read_tensor_cache(bad))
    trunc = tmp_path / "t.dnoc"
    trunc.write_bytes(b"DNOC1\x01\x00\x00\x00\x02\x00\x00\x00" + b"\x03\x00")
    with pytest.raises(EncodingError, match="truncated"):
        list(read_tensor_cache(trunc))
