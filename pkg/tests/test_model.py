import numpy as np
import pytest

from strnoc.encoder import build_labels, encode_profile, filter_artefact_peaks
from strnoc.model import (
    MAIN_BRANCH,
    EncodedRecord,
    LossWeights,
    ModelFormatError,
    Outputs,
    batch_from_dense,
    build_model,
    load_weights,
    make_batch,
    save_weights,
    total_loss,
)
from strnoc.nn import AdamState, gradient_check
from strnoc.simulator import SimParams, simulate_record
from strnoc.trainer import encode_records


@pytest.fixture(scope="module")
def records(kit):
    profs = [simulate_record(kit, SimParams(seed=21, noc_max=4), i) for i in range(4)]
    return encode_records(profs, kit)


@pytest.fixture(scope="module")
def model():
    return build_model(3)


def test_same_seed_same_parameters():
    a, b = build_model(5).params(), build_model(5).params()
    assert all(np.array_equal(a[k], b[k]) for k in a)
    c = build_model(6).params()
    assert any(not np.array_equal(a[k], c[k]) for k in a)


def test_main_branch_has_16_layers(model):
    assert model.main_branch_depth == 16
    assert len(MAIN_BRANCH) == 16


def test_layer_widths(model):
    dims = {n: (i, o) for n, i, o, _ in model.layer_dims()}
    assert dims["peak1"] == (89, 128)
    assert dims["peak_merge"] == (150, 128)
    assert dims["locus1"] == (256, 256)
    assert dims["locus_merge"] == (158, 128)
    assert dims["trunk5"] == (64, 32)
    assert dims["noc"] == (32, 10)
    ablated = {n: (i, o) for n, i, o, _ in build_model(3, feedback=False).layer_dims()}
    assert ablated["peak_merge"] == (128, 128)
    assert ablated["locus_merge"] == (128, 128)


def test_output_invariants(model, records):
    out = model.forward(make_batch(records))
    assert out.noc.shape == (4, 10)
    assert np.allclose(out.noc.sum(axis=1), 1, atol=1e-6)
    assert np.allclose(out.profile_mix.sum(axis=1), 1, atol=1e-6)
    assert np.allclose(out.count.sum(axis=1), 1, atol=1e-5)
    assert np.all((out.prop >= 0) & (out.prop <= 1))
    assert np.allclose(out.locus_mix.sum(axis=1), 1, atol=1e-5)
    assert np.allclose(out.locus_count.sum(axis=1), 1, atol=1e-5)


def test_all_zero_input_defined(model):
    outs = model.predict_dense(np.zeros((24, 50, 89), np.float32))
    shapes = [(24, 50, 1), (24, 50, 21), (24, 10), (24, 20), (10,), (10,)]
    assert [o.shape for o in outs] == shapes
    assert all(np.all(np.isfinite(o)) for o in outs)
    assert outs[5].sum() == pytest.approx(1.0, abs=1e-6)


def test_permutation_invariance(kit, model):
    prof = filter_artefact_peaks(simulate_record(kit, SimParams(seed=8, noc_min=3, noc_max=3), 0))
    t = encode_profile(prof, kit)
    base = model.predict_dense(t)
    rng = np.random.default_rng(0)
    perm_t = t.copy()
    perms = {}
    for li in range(24):
        perms[li] = rng.permutation(50)
        perm_t[li] = t[li, perms[li]]
    got = model.predict_dense(perm_t)
    for a, b in zip(base[2:], got[2:]):
        assert np.allclose(a, b, atol=1e-5)
    for li in range(24):
        assert np.allclose(got[0][li], base[0][li, perms[li]], atol=1e-6)


def test_batch_composition_does_not_leak(model, records):
    alone = model.forward(make_batch(records[:1])).noc[0]
    together = model.forward(make_batch(records)).noc[0]
    assert np.allclose(alone, together, atol=1e-6)


def test_dense_and_compact_paths_agree(kit, model, records):
    dense = np.stack([r.inputs.to_dense() for r in records])
    a = model.forward(batch_from_dense(dense)).noc
    b = model.forward(make_batch(records)).noc
    assert np.allclose(a, b)


def test_loss_zero_when_outputs_equal_labels(records):
    batch = make_batch(records, np.float64)
    n, S, B = len(batch.x), batch.n_slots, batch.n_profiles
    prop = np.nan_to_num(batch.prop)
    out = Outputs(
        prop=prop,
        count=np.eye(21)[np.maximum(batch.count, 0)],
        locus_mix=batch.locus_mix,
        locus_count=np.eye(20)[batch.locus_count],
        profile_mix=batch.profile_mix,
        noc=np.eye(10)[batch.noc - 1],
        locus_active=np.isin(np.arange(S), batch.slot),
    )
    loss, terms, _ = total_loss(out, batch)
    assert n > 0 and B == 4
    assert terms == (0.0,) * 6
    assert loss == 0.0


def test_noc_only_weights(model, records):
    batch = make_batch(records)
    out = model.forward(batch)
    loss, terms, _ = total_loss(out, batch, LossWeights.noc_only())
    assert loss == pytest.approx(terms[5])
    p = out.noc[np.arange(4), batch.noc - 1]
    assert loss == pytest.approx(-np.mean(np.log(p)), rel=1e-5)


def test_loss_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(noc=0.0)
    with pytest.raises(ValueError):
        LossWeights(peak_prop=-1.0)


def test_gradient_check_small_batch(records):
    m = build_model(1, dtype=np.float64)
    batch = make_batch(records[:2], np.float64)
    assert gradient_check(m, batch, n_coords=30, seed=2) < 1e-4


def test_gradient_check_without_feedback(records):
    m = build_model(1, feedback=False, dtype=np.float64)
    assert gradient_check(m, make_batch(records[:1], np.float64), n_coords=20, seed=5) < 1e-4


def test_save_load_roundtrip(tmp_path, model, records):
    path = save_weights(model, tmp_path / "m.dnocw")
    again = load_weights(path)
    batch = make_batch(records)
    assert np.array_equal(model.forward(batch).noc, again.forward(batch).noc)
    assert again.seed == model.seed
    assert (tmp_path / "m.dnocw.json").exists()


def test_save_load_optimizer(tmp_path, model, records):
    m = model.copy()
    opt = AdamState()
    _, grads = m.loss_and_grads(make_batch(records))
    from strnoc.nn import adam_step
    adam_step(opt, m.params(), grads)
    save_weights(m, tmp_path / "m.dnocw", optimizer=opt)
    _, opt2 = load_weights(tmp_path / "m.dnocw", with_optimizer=True)
    assert opt2.t == 1
    assert all(np.array_equal(opt.m[k].astype(np.float32), opt2.m[k]) for k in opt.m)


def test_truncated_weight_file(tmp_path, model):
    path = save_weights(model, tmp_path / "m.dnocw")
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(ModelFormatError, match="truncated weight file"):
        load_weights(path)


def test_bad_magic(tmp_path, model):
    path = save_weights(model, tmp_path / "m.dnocw")
    path.write_bytes(b"NOTAWT" + path.read_bytes()[6:])
    with pytest.raises(ModelFormatError, match="bad magic"):
        load_weights(path)


def test_encoded_record_from_dense(kit, records):
    prof = filter_artefact_peaks(simulate_record(kit, SimParams(seed=21, noc_max=4), 0))
    rec = EncodedRecord.from_dense(encode_profile(prof, kit), build_labels(prof))
    assert rec.noc == records[0].noc
    assert np.array_equal(rec.count, records[0].count)
