import json
import math

import numpy as np
import pytest

from eegmobile.cache import CacheWriter, open_cache
from eegmobile.dataset import FoldPlan, build_folds, ingest, pair_sleep_edf
from eegmobile.edf import Stage
from eegmobile.errors import BadSelector, EmptyFold, LabelOutOfRange, LeakageError, ShapeMismatch
from eegmobile.fixtures import separable_images
from eegmobile.nn.model import MicroNetConfig, build_micronet, count_params
from eegmobile.spectro import RenderConfig, RgbImage
from eegmobile.train import (
    Adam,
    AdamHyper,
    AdamState,
    ArraySource,
    CacheSource,
    TrainConfig,
    adam_step,
    fit,
    parse_selector,
    run_cv,
    set_trainable,
    sparse_ce_loss,
)

SMALL = MicroNetConfig(input_shape=(16, 16, 3))


def _snapshot(model):
    return {name: arr.copy() for name, arr in model.named_arrays()}


# -- loss -----------------------------------------------------------------------


def test_ce_certain_prediction_is_zero():
    loss, grad = sparse_ce_loss(np.array([[0.0, 1.0, 0.0, 0.0, 0.0]]), [1])
    assert loss == 0.0
    assert not grad.any()


def test_ce_uniform_is_log_k():
    loss, _ = sparse_ce_loss(np.full((3, 5), 0.2), [0, 2, 4])
    assert loss == pytest.approx(math.log(5), abs=1e-12)


def test_ce_gradient_form():
    p = np.array([[0.1, 0.2, 0.3, 0.2, 0.2], [0.5, 0.1, 0.1, 0.1, 0.2]])
    _, grad = sparse_ce_loss(p, [2, 0])
    onehot = np.eye(5)[[2, 0]]
    assert np.allclose(grad, (p - onehot) / 2, atol=0)


def test_ce_errors():
    with pytest.raises(LabelOutOfRange):
        sparse_ce_loss(np.full((1, 5), 0.2), [5])
    with pytest.raises(ShapeMismatch):
        sparse_ce_loss(np.full((2, 5), 0.2), [0])


# -- Adam -----------------------------------------------------------------------


def test_adam_first_step():
    p = {"w": np.array([0.0])}
    adam_step(p, {"w": np.array([1.0])}, AdamState())
    # m_hat = v_hat = 1 after bias correction
    assert p["w"][0] == pytest.approx(-1e-3 / (1 + 1e-7), rel=1e-12)
    assert p["w"][0] == pytest.approx(-0.000999999, abs=1e-9)  # quoted to nine places


def test_adam_zero_gradient_is_a_no_op():
    w = np.array([1.5, -2.0])
    p = {"w": w.copy()}
    adam_step(p, {"w": np.zeros(2)}, AdamState())
    assert np.array_equal(p["w"], w)


def test_adam_two_steps_differ_from_one_double_step():
    g = {"w": np.array([0.3])}
    a = {"w": np.array([0.0])}
    st = AdamState()
    adam_step(a, g, st)
    adam_step(a, g, st)
    b = {"w": np.array([0.0])}
    adam_step(b, g, AdamState(), AdamHyper(lr=2e-3))
    assert st.t == 2
    assert a["w"][0] != b["w"][0]


def test_adam_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        adam_step({"w": np.zeros(3)}, {"w": np.zeros(2)}, AdamState())


def test_adam_bad_betas():
    with pytest.raises(ValueError):
        AdamHyper(beta1=1.0)


# -- selectors ------------------------------------------------------------------


def test_parse_selector_forms():
    assert parse_selector("all", 10) == set(range(10))
    assert parse_selector("none", 10) == set()
    assert parse_selector("5:", 10) == {5, 6, 7, 8, 9}
    assert parse_selector("-2:", 10) == {8, 9}
    assert parse_selector("0,3,-1", 10) == {0, 3, 9}
    assert parse_selector([1, 2], 10) == {1, 2}
    assert parse_selector("head", 10, head_start=6) == {6, 7, 8, 9}


@pytest.mark.parametrize("bad", ["12", "0:99", "x", "1,,a", [10]])
def test_bad_selector(bad):
    with pytest.raises(BadSelector):
        parse_selector(bad, 10)
    assert issubclass(BadSelector, ValueError)


def test_head_needs_head_start():
    with pytest.raises(BadSelector):
        parse_selector("head", 10)


def test_all_trainable_counts_everything():
    m = set_trainable(build_micronet(SMALL), "all")
    assert count_params(m, trainable_only=True) == count_params(m)


def test_nothing_trainable_leaves_weights_bit_identical():
    m = set_trainable(build_micronet(SMALL, seed=1), "none")
    assert count_params(m, trainable_only=True) == 0
    x, y = separable_images(per_class=2, size=16)
    before = _snapshot(m)
    probs = m.forward(x.astype(np.float32) / 255, training=False)
    _, d = sparse_ce_loss(probs, y)
    m.backward(d.astype(np.float32))
    Adam().step(m)
    after = _snapshot(m)
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_head_only_updates_head():
    m = build_micronet(SMALL, seed=2)
    set_trainable(m, "head")
    x, y = separable_images(per_class=4, size=16)
    before = _snapshot(m)
    fit(m, ArraySource(x, y), TrainConfig(epochs=1, phase1_epochs=0, trainable_layers="head", prefetch=0))
    # fit restores "all" for phase 1; with no phase 1 the head selector governs every step
    after = _snapshot(m)
    head = SMALL.head_start
    for name in before:
        layer = int(name.split(".")[0])
        changed = not np.array_equal(before[name], after[name])
        if layer < head:
            assert not changed, name
    assert any(not np.array_equal(before[n], after[n]) for n in before if int(n.split(".")[0]) >= head)


# -- fit ------------------------------------------------------------------------


def test_loss_decreases_on_separable_data():
    x, y = separable_images(per_class=16, size=16, seed=4)
    m = build_micronet(SMALL, seed=0)
    hist = fit(m, ArraySource(x, y), TrainConfig(epochs=4, phase1_epochs=4, prefetch=0))
    assert len(hist) == 4
    assert hist.loss[-1] < hist.loss[0]


def test_fit_prefetch_matches_inline_batches():
    x, y = separable_images(per_class=4, size=16, seed=5)
    runs = []
    for prefetch in (0, 3):
        m = build_micronet(SMALL, seed=3)
        cfg = TrainConfig(epochs=2, phase1_epochs=1, prefetch=prefetch, seed=9)
        runs.append((fit(m, ArraySource(x, y), cfg).loss, _snapshot(m)))
    assert runs[0][0] == runs[1][0]
    assert all(np.array_equal(runs[0][1][k], runs[1][1][k]) for k in runs[0][1])


def test_phase_two_keeps_frozen_layers_fixed():
    x, y = separable_images(per_class=4, size=16, seed=6)
    m = build_micronet(SMALL, seed=4)
    hist = fit(m, ArraySource(x, y), TrainConfig(epochs=3, phase1_epochs=1, prefetch=0))
    assert hist.frozen_digest_phase1 == hist.frozen_digest_final is not None


def test_fit_empty_training_set():
    with pytest.raises(EmptyFold):
        fit(build_micronet(SMALL), ArraySource(np.zeros((0, 16, 16, 3), np.uint8), []))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=3, phase1_epochs=4)


# -- cross-validation -----------------------------------------------------------


@pytest.fixture(scope="module")
def small_cache(tmp_path_factory, corpus4_dir):
    path = tmp_path_factory.mktemp("cv") / "c.egmc"
    recs, _ = pair_sleep_edf(corpus4_dir)
    ingest(recs, render_cfg=RenderConfig(out_width=16, out_height=16), cache_path=path)
    return path


CV_CFG = TrainConfig(epochs=2, phase1_epochs=1, strict=True)


def _factory(fold):
    return build_micronet(SMALL, seed=fold)


def test_run_cv_writes_fold_files(tmp_path, small_cache):
    cache = open_cache(small_cache, "memory")
    plan = build_folds([k[0] for k in cache.keys()], k=2)
    res = run_cv(_factory, plan, cache, CV_CFG, out_dir=tmp_path)
    assert len(res.folds) == 2
    folds = [json.loads((tmp_path / f"fold_{i:02d}.json").read_text()) for i in range(2)]
    agg = json.loads((tmp_path / "aggregate.json").read_text())
    assert agg["n_folds"] == 2
    assert agg["accuracy"] == pytest.approx(np.mean([f["accuracy"] for f in folds]), abs=1e-15)
    assert agg["kappa"] == pytest.approx(np.mean([f["kappa"] for f in folds]), abs=1e-15)
    for f, fr in zip(folds, res.folds):
        assert set(f["validation_subjects"]) == set(fr.validation_subjects)
        assert f["n_train"] + f["n_val"] == len(cache)
    assert len((tmp_path / "history_00.jsonl").read_text().splitlines()) == 2
    assert (tmp_path / "fold_01.egmw").exists()


def test_strict_rerun_is_byte_identical(tmp_path, small_cache):
    outs = []
    for i in range(2):
        cache = open_cache(small_cache, "disk")
        plan = build_folds([k[0] for k in cache.keys()], k=2)
        run_cv(_factory, plan, cache, CV_CFG, out_dir=tmp_path / str(i))
        outs.append(tmp_path / str(i))
    for name in ["aggregate.json", "fold_00.json", "history_00.jsonl", "history_01.jsonl", "fold_01.egmw"]:
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name


def test_leakage_detected(small_cache):
    cache = open_cache(small_cache, "memory")
    subjects = sorted({k[0] for k in cache.keys()})
    bad = FoldPlan(((frozenset(subjects[:1]), frozenset(subjects)),))
    with pytest.raises(LeakageError):
        run_cv(_factory, bad, cache, CV_CFG)


def test_empty_validation_fold(small_cache):
    cache = open_cache(small_cache, "memory")
    subjects = sorted({k[0] for k in cache.keys()})
    plan = FoldPlan(((frozenset({"nobody"}), frozenset(subjects)),))
    with pytest.raises(EmptyFold):
        run_cv(_factory, plan, cache, CV_CFG)


def test_cache_source_resizes_to_model_input(tmp_path):
    path = tmp_path / "c.egmc"
    rng = np.random.default_rng(0)
    with CacheWriter(path) as w:
        for i in range(4):
            w.put(("A" if i < 2 else "B", 1, i), RgbImage(rng.integers(0, 256, (20, 24, 3), dtype=np.uint8)),
                  Stage(i % 5))
    src = CacheSource(open_cache(path), open_cache(path).keys(), (16, 16, 3))
    x, y = src.batch([0, 3])
    assert x.shape == (2, 16, 16, 3) and x.dtype == np.float32
    assert 0 <= x.min() and x.max() <= 1
    assert y.tolist() == [0, 3]
