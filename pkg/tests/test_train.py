"""Training harness: lr schedule, AUC/metrics oracles, SGD semantics, CV laws."""


import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import multiplane.tensor as T
from multiplane.data import PhantomSpec, generate_phantoms, make_folds
from multiplane.losses import LossConfig
from multiplane.model import ModelConfig, init_model, model_forward
from multiplane.train import (
    CVResult,
    DivergenceError,
    TrainConfig,
    auc,
    compute_metrics,
    cross_validate,
    format_epoch_log,
    format_metrics_report,
    lr_at,
    mean_metrics,
    predict_scores,
    train_fold,
)

TINY_MODEL = ModelConfig(active_planes=("axial",), kan_hidden=4, grid_size=4, head_dim=4)


def _tiny_cfg(**kw):
    base = dict(epochs=1, batch_size=2, use_augment=False, model=TINY_MODEL)
    base.update(kw)
    return TrainConfig(**base)


def _tiny_set(n_per_class=3, dims=(32, 32, 32)):
    spec = PhantomSpec(dims=dims, lesion_center_class1=tuple(d // 2 for d in dims),
                       lesion_radius=3.0)
    return generate_phantoms(spec, n_per_class)


# ---------------------------------------------------------------------------
# lr schedule

def test_lr_schedule_reference_points():
    cfg = TrainConfig()
    assert lr_at(1, cfg) == 0.005
    assert lr_at(20, cfg) == 0.005
    assert lr_at(21, cfg) == 0.0025
    assert lr_at(41, cfg) == 0.00125
    assert lr_at(100, cfg) == 0.005 * 0.5 ** 4


def test_lr_epoch_validation():
    with pytest.raises(ValueError):
        lr_at(0, TrainConfig())


@given(st.integers(min_value=1, max_value=500))
def test_lr_monotone_nonincreasing(epoch):
    cfg = TrainConfig()
    assert lr_at(epoch + 1, cfg) <= lr_at(epoch, cfg)


# ---------------------------------------------------------------------------
# AUC against pair enumeration

def auc_pairs_oracle(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    if not pos or not neg:
        return None
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def test_auc_known_value():
    scores = [0.1, 0.4, 0.35, 0.8]
    labels = [0, 0, 1, 1]
    assert auc(scores, labels) == 0.75
    assert auc_pairs_oracle(scores, labels) == 0.75


def test_auc_perfect_and_inverted():
    assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auc([0.9, 0.8, 0.1, 0.2], [0, 0, 1, 1]) == 0.0


def test_auc_ties_credit_half():
    assert auc([0.5, 0.5], [0, 1]) == 0.5
    assert auc([0.3, 0.3, 0.3, 0.9], [0, 1, 0, 1]) == 0.75


def test_auc_single_class_is_none():
    assert auc([0.2, 0.8], [1, 1]) is None
    assert auc([0.2, 0.8], [0, 0]) is None


@settings(deadline=None, max_examples=60)
@given(st.lists(st.tuples(st.floats(min_value=0, max_value=1, allow_nan=False),
                          st.integers(min_value=0, max_value=1)),
                min_size=2, max_size=16))
def test_auc_matches_pair_enumeration(pairs):
    scores = [p[0] for p in pairs]
    labels = [p[1] for p in pairs]
    want = auc_pairs_oracle(scores, labels)
    got = auc(scores, labels)
    if want is None:
        assert got is None
    else:
        assert abs(got - want) < 1e-12


# ---------------------------------------------------------------------------
# metrics

def test_metrics_counting_oracle():
    scores = [0.9, 0.2, 0.6, 0.4, 0.7]
    labels = [1, 0, 0, 1, 1]
    m = compute_metrics(scores, labels)
    # preds = [1, 0, 1, 0, 1]
    assert (m.tp, m.tn, m.fp, m.fn) == (2, 1, 1, 1)
    assert m.acc == 3 / 5
    assert m.sen == 2 / 3
    assert m.spe == 1 / 2
    assert m.f1 == 4 / (4 + 1 + 1)


def test_metrics_undefined_denominators_are_none():
    m = compute_metrics([0.2, 0.3], [0, 0])
    assert m.sen is None  # no positives
    assert m.auc is None
    assert m.spe == 1.0
    m2 = compute_metrics([0.9], [1])
    assert m2.spe is None


def test_metrics_threshold_is_half_exclusive():
    m = compute_metrics([0.5], [1])
    assert m.fn == 1  # score == 0.5 predicts class 0


def test_mean_metrics_skips_none():
    a = compute_metrics([0.9, 0.1], [1, 0])
    b = compute_metrics([0.2, 0.3], [0, 0])
    mm = mean_metrics([a, b])
    assert mm.sen == a.sen  # b contributes no sensitivity
    assert mm.tp == a.tp + b.tp


def test_format_metrics_report_uses_na():
    m = compute_metrics([0.2], [0])
    text = format_metrics_report([("fold0", m)])
    assert "NA" in text
    assert text.startswith("fold\tacc")


# ---------------------------------------------------------------------------
# training loop semantics

def test_single_sgd_step_matches_manual_update():
    vols = _tiny_set(1)[:2]
    cfg = _tiny_cfg(epochs=1, batch_size=2, lr_initial=0.01,
                    loss=LossConfig(ramp_start_epoch=0, ramp_steps=1))
    # manual replica: same init, same ordering (rng fixed), same per-batch math
    params0 = init_model(cfg.model, cfg.seed)
    got, _ = train_fold(vols, cfg)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x7EA1]))
    order = rng.permutation(2)
    from multiplane.losses import ce_loss, slc_loss, total_loss

    tensors = params0.parameters()
    for p in tensors:
        p.zero_grad()
    for i in order:
        vol = vols[i]
        out = model_forward(vol.voxels, params0)
        p1 = T.slice_channels(T.softmax(out.global_logits, axis=0), 1, 2)
        loss = T.mul(total_loss(ce_loss(p1, [vol.label]),
                                slc_loss(out.patch_weights, out.patch_logits, vol.label),
                                1, cfg.loss), 0.5)
        T.backward(loss)
    for p in tensors:
        p.data -= 0.01 * p.grad
    for name, t in got.named_parameters().items():
        assert np.allclose(t.data, params0.named_parameters()[name].data, atol=1e-12)


def test_zero_lr_keeps_parameters_fixed():
    vols = _tiny_set(1)
    cfg = _tiny_cfg(epochs=2, lr_initial=1e-30)
    before = {k: v.data.copy() for k, v in init_model(cfg.model, cfg.seed).named_parameters().items()}
    params, _ = train_fold(vols, cfg)
    for k, t in params.named_parameters().items():
        assert np.allclose(t.data, before[k], atol=1e-20)


def test_training_is_deterministic():
    vols = _tiny_set(2)
    cfg = _tiny_cfg(epochs=2, use_augment=True)
    p1, logs1 = train_fold(vols, cfg)
    p2, logs2 = train_fold(vols, cfg)
    assert format_epoch_log(logs1) == format_epoch_log(logs2)
    for a, b in zip(p1.parameters(), p2.parameters()):
        assert np.array_equal(a.data, b.data)


def test_epoch_log_fields_and_format():
    vols = _tiny_set(2)
    cfg = _tiny_cfg(epochs=2, loss=LossConfig(ramp_start_epoch=1, ramp_steps=2))
    _, logs = train_fold(vols, cfg)
    assert [r.epoch for r in logs] == [1, 2]
    assert logs[0].lambda_eff == 0.0
    assert logs[1].lambda_eff == 0.1
    text = format_epoch_log(logs)
    assert len(text.strip().splitlines()) == 2
    assert text.splitlines()[0].split("\t")[0] == "1"


def test_divergence_raises_with_epoch():
    vols = _tiny_set(1)
    cfg = _tiny_cfg(epochs=5, lr_initial=1e30)  # overflow to inf, then nan
    with pytest.raises(DivergenceError) as exc:
        train_fold(vols, cfg)
    assert exc.value.epoch >= 1


def test_stop_when_halts_early():
    vols = _tiny_set(2)
    cfg = _tiny_cfg(epochs=10)
    _, logs = train_fold(vols, cfg, stop_when=lambda rec: rec.epoch == 2)
    assert len(logs) == 2


def test_empty_training_set_rejected():
    with pytest.raises(ValueError):
        train_fold([], _tiny_cfg())


def test_momentum_changes_trajectory():
    vols = _tiny_set(1)
    plain, _ = train_fold(vols, _tiny_cfg(epochs=2))
    heavy, _ = train_fold(vols, _tiny_cfg(epochs=2, momentum=0.9))
    diffs = [np.max(np.abs(a.data - b.data))
             for a, b in zip(plain.parameters(), heavy.parameters())]
    assert max(diffs) > 0


def test_predict_scores_in_unit_interval():
    vols = _tiny_set(1)
    params = init_model(TINY_MODEL, seed=0)
    scores = predict_scores(params, vols)
    assert scores.shape == (2,)
    assert ((scores > 0) & (scores < 1)).all()


# ---------------------------------------------------------------------------
# cross-validation

@pytest.mark.slow
def test_cross_validation_disjoint_and_complete():
    vols = _tiny_set(5)
    cfg = _tiny_cfg(epochs=1, folds=5)
    result = cross_validate(vols, cfg)
    assert isinstance(result, CVResult)
    assert len(result.per_fold) == 5
    assert len(result.fold_params) == 5
    # every subject appears in exactly one test fold
    plan = make_folds(vols, k=5, seed=cfg.seed)
    seen = [sid for f in range(5) for sid in plan.fold_ids(f)]
    assert sorted(seen) == sorted(v.subject_id for v in vols)


@pytest.mark.slow
def test_transfer_initialization_changes_outcome():
    vols = _tiny_set(5)
    cfg = _tiny_cfg(epochs=1, folds=5)
    donor = init_model(TINY_MODEL, seed=123)
    plain = cross_validate(vols, cfg)
    transferred = cross_validate(vols, cfg, transfer_from=[donor])
    a = plain.fold_params[0].head.psi.data
    b = transferred.fold_params[0].head.psi.data
    assert not np.array_equal(a, b)
