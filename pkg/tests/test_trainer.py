from dataclasses import replace

import numpy as np
import pytest

from strnoc.model import build_model
from strnoc.nn import NumericalError
from strnoc.simulator import SimParams, simulate_record
from strnoc.trainer import (
    TrainConfig,
    TrainHistory,
    accuracy,
    encode_records,
    fine_tune,
    learning_curve,
    pseudo_label,
    split_dataset,
    steps_per_epoch,
    train,
)


@pytest.fixture(scope="module")
def base_records(kit):
    profs = [simulate_record(kit, SimParams(seed=31, noc_max=3), i) for i in range(6)]
    return encode_records(profs, kit)


def _many(records, n):
    return [records[i % len(records)] for i in range(n)]


def _no_wall(h):
    return [replace(e, wall_time=0.0) for e in h.epochs]


def test_alternating_split():
    train_set, test_set = split_dataset(list(range(10)), mode="alternating")
    assert train_set == [0, 2, 4, 6, 8] and test_set == [1, 3, 5, 7, 9]
    train_set, test_set = split_dataset(list(range(11)), mode="alternating")
    assert (len(train_set), len(test_set)) == (6, 5)


def test_random_fraction_split():
    data = list(range(100_000))
    a, b = split_dataset(data, fraction=0.9, seed=4)
    assert (len(a), len(b)) == (90_000, 10_000)
    assert sorted(a + b) == data
    assert split_dataset(data, fraction=0.9, seed=4) == (a, b)


def test_split_errors():
    with pytest.raises(ValueError):
        split_dataset([])
    with pytest.raises(ValueError):
        split_dataset([1, 2], mode="bogus")


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(split=1.0)
    cfg = TrainConfig(epochs=3, loss_weights=(1, 0, 1, 0, 1, 1))
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError, match="unknown"):
        TrainConfig.from_dict({"epoch": 3})


def test_steps_per_epoch_250(base_records):
    assert steps_per_epoch(250, 100) == 3
    h, _, opt = train(build_model(0), _many(base_records, 250), [], TrainConfig(epochs=1))
    assert h.epochs[0].steps == 3
    assert opt.t == 3
    assert len(h) == 1
    assert h.epochs[0].test_accuracy is None


def test_fine_tune_743_lab_profiles(base_records):
    # 743 laboratory profiles: even indices train, the rest test
    h, _, (tr, te) = fine_tune(build_model(0), _many(base_records, 743), TrainConfig(epochs=1))
    assert (len(tr), len(te)) == (372, 371)
    assert h.epochs[0].steps == 4


def test_371_training_profiles_take_4_steps(base_records):
    h, _, _ = train(build_model(0), _many(base_records, 371), [], TrainConfig(epochs=1))
    assert h.epochs[0].steps == 4


def test_deterministic_history(base_records):
    cfg = TrainConfig(epochs=2, batch_size=4, seed=9)
    h1, m1, _ = train(build_model(1), base_records, base_records[:2], cfg)
    h2, m2, _ = train(build_model(1), base_records, base_records[:2], cfg)
    assert _no_wall(h1) == _no_wall(h2)
    assert all(np.array_equal(a, b) for a, b in zip(m1.params().values(), m2.params().values()))


def test_deterministic_mode_history_has_no_timing(base_records):
    cfg = TrainConfig(epochs=2, batch_size=4, seed=9, deterministic=True)
    h1, _, _ = train(build_model(1), base_records, [], cfg)
    h2, _, _ = train(build_model(1), base_records, [], cfg)
    assert all(e.wall_time is None for e in h1.epochs)
    assert h1.to_dict() == h2.to_dict()


def test_history_roundtrip(tmp_path, base_records):
    h, _, _ = train(build_model(1), base_records, [], TrainConfig(epochs=1, batch_size=3))
    h.save(tmp_path / "h.json")
    import json
    again = TrainHistory.from_dict(json.loads((tmp_path / "h.json").read_text()))
    assert again == h


def test_checkpoints(tmp_path, base_records):
    cfg = TrainConfig(epochs=2, batch_size=3, checkpoint_every=1)
    train(build_model(1), base_records, [], cfg, checkpoint_dir=tmp_path)
    assert (tmp_path / "epoch0002.dnocw").exists()
    assert (tmp_path / "epoch0001.history.json").exists()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_aborts(base_records):
    bad = base_records[0]
    rows = bad.inputs.rows.copy()
    rows[0, 26] = np.inf
    broken = replace(bad, inputs=replace(bad.inputs, rows=rows))
    with pytest.raises(NumericalError, match="epoch 1, batch 0"):
        train(build_model(0), [broken], [], TrainConfig(epochs=1))


def test_pseudo_label(base_records):
    model = build_model(2)
    before = {k: v.copy() for k, v in model.params().items()}
    lab = [replace(r, prop=np.full_like(r.prop, np.nan)) for r in base_records]
    out = pseudo_label(model, lab)
    assert all(np.array_equal(before[k], v) for k, v in model.params().items())
    for r, o in zip(base_records, out):
        assert o.prop.shape == r.prop.shape
        assert np.all((o.prop >= 0) & (o.prop <= 1))
        assert o.noc == r.noc


def test_pseudo_label_matches_forward(base_records):
    model = build_model(2)
    out = pseudo_label(model, base_records[:1])[0]
    from strnoc.model import make_batch
    assert np.allclose(out.prop, model.forward(make_batch(base_records[:1])).prop)


def test_learning_curve(base_records):
    cfg = TrainConfig(epochs=1, seed=3)
    data = _many(base_records, 500)
    table = learning_curve(lambda: build_model(0), data, base_records, (50, 500), cfg)
    assert [s for s, _ in table] == [50, 500]
    assert all(0.0 <= a <= 1.0 for _, a in table)
    assert learning_curve(lambda: build_model(0), data, base_records, (50, 500), cfg) == table
    with pytest.raises(ValueError):
        learning_curve(lambda: build_model(0), data, base_records, (501,), cfg)


def test_accuracy_helper(base_records):
    acc = accuracy(build_model(0), base_records)
    assert 0.0 <= acc <= 1.0
    assert np.isnan(accuracy(build_model(0), []))
