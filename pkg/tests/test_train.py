import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deepfake_vit.backbone import BackboneConfig, Teacher
from deepfake_vit.data import Dataset
from deepfake_vit.errors import ConfigError, ContractError, NonFiniteError
from deepfake_vit.model import HeadOutputs, HybridViT, ModelConfig, PatchConfig
from deepfake_vit.rng import stream
from deepfake_vit.tensor import Tensor
from deepfake_vit.train import (LOG_COLUMNS, LossConfig, OptimizerState, StepDecay, TrainRunConfig,
                                balanced_batches, bce, distillation_loss, fit, sgd_step, state_dict,
                                teacher_heads, teacher_logits_for, train_student, train_teacher)

from conftest import check_grads

LN2 = math.log(2)


def sig(z):
    return 1 / (1 + np.exp(-z))


def heads(c, d):
    return HeadOutputs(Tensor(np.asarray(c, float).reshape(-1, 1)), Tensor(np.asarray(d, float).reshape(-1, 1)))


def bce_direct(logit, target, eps=1e-7):
    p = min(max(1 / (1 + math.exp(-logit)), eps), 1 - eps)
    return -(target * math.log(p) + (1 - target) * math.log(1 - p))


# ------------------------------------------------------------------------- bce

def test_bce_examples():
    assert bce(Tensor([0.0]), [1.0]).item() == pytest.approx(LN2, abs=1e-15)
    assert bce(Tensor([0.0]), [0.5]).item() == pytest.approx(LN2, abs=1e-15)
    assert abs(bce(Tensor([2.0]), [1.0]).item() + math.log(sig(2.0))) < 1e-12


def test_bce_target_out_of_range():
    with pytest.raises(ContractError):
        bce(Tensor([0.0]), [1.5])


# ------------------------------------------------------------ distillation loss

def test_lambda_one_is_per_class_averaged_bce():
    c = np.array([0.3, -1.2, 2.0, 0.1, -0.4])
    y = np.array([1, 0, 1, 0, 0])
    br = distillation_loss(LossConfig(1.0), heads(c, c * 0), y, None)
    fake = np.mean([bce_direct(z, 1) for z in c[y == 1]])
    real = np.mean([bce_direct(z, 0) for z in c[y == 0]])
    assert br.distill_term == 0.0 and br.fake_distill is None and br.real_distill is None
    assert abs(br.value - (fake + real) / 2) < 1e-12


def test_all_zero_logits_give_ln2():
    br = distillation_loss(LossConfig(0.5), heads([0] * 4, [0] * 4), [1, 1, 0, 0], [0.0] * 4)
    assert br.fake == pytest.approx(LN2, abs=1e-15)
    assert br.real == pytest.approx(LN2, abs=1e-15)
    assert br.value == pytest.approx(LN2, abs=1e-15)


def test_four_sample_hand_expansion():
    lam = 0.5
    c = np.array([40.0, -40.0, 40.0, -40.0])        # class head saturated and correct
    zt = np.array([1.5, -0.7, 0.2, -2.0])
    d = zt.copy()                                      # distill head equal to the teacher
    y = np.array([1, 0, 1, 0])
    br = distillation_loss(LossConfig(lam), heads(c, d), y, zt)

    def soft_ce(z, t):
        p = sig(z)
        return -(t * math.log(p) + (1 - t) * math.log(1 - p))

    eps = 1e-7
    l_fake = lam * -math.log(1 - eps) + (1 - lam) * (soft_ce(d[0], sig(zt[0])) + soft_ce(d[2], sig(zt[2]))) / 2
    l_real = lam * -math.log(1 - eps) + (1 - lam) * (soft_ce(d[1], sig(zt[1])) + soft_ce(d[3], sig(zt[3]))) / 2
    assert abs(br.fake - l_fake) < 1e-12
    assert abs(br.real - l_real) < 1e-12
    assert abs(br.value - (l_fake + l_real) / 2) < 1e-12


def test_single_class_batch_uses_that_loss():
    br = distillation_loss(LossConfig(0.5), heads([0.3, -0.2], [0.1, 0.4]), [1, 1], [0.5, 0.5])
    assert br.real is None and br.value == br.fake


def test_empty_batch_and_bad_labels():
    with pytest.raises(ContractError):
        distillation_loss(LossConfig(), HeadOutputs(None, None), [], [])
    with pytest.raises(ContractError):
        distillation_loss(LossConfig(), heads([0.0], [0.0]), [2], [0.0])
    with pytest.raises(ContractError):
        distillation_loss(LossConfig(0.5), heads([0.0, 0.0], [0.0, 0.0]), [0, 1], None)
    with pytest.raises(ConfigError):
        LossConfig(lam=1.5).validate()


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 12), st.integers(0, 2**31), st.floats(0.0, 1.0))
def test_eq3_identity_and_half_split(n, seed, lam):
    r = np.random.default_rng(seed)
    y = r.integers(0, 2, n)
    y[0], y[1] = 1, 0
    c, d, zt = r.normal(0, 3, n), r.normal(0, 3, n), r.normal(0, 3, n)
    br = distillation_loss(LossConfig(lam), heads(c, d), y, zt)
    assert br.value == (br.fake + br.real) * 0.5
    assert br.value == pytest.approx(br.class_term + br.distill_term, rel=1e-12)
    # lambda = 1/2: each subset loss is the plain mean of its class and distill terms
    half = distillation_loss(LossConfig(0.5), heads(c, d), y, zt)
    assert half.fake == pytest.approx((half.fake_class + half.fake_distill) / 2, rel=1e-12)
    assert half.real == pytest.approx((half.real_class + half.real_distill) / 2, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 10), st.integers(0, 2**31))
def test_loss_permutation_invariant(n, seed):
    r = np.random.default_rng(seed)
    y = r.integers(0, 2, n)
    c, d, zt = r.normal(size=n), r.normal(size=n), r.normal(size=n)
    p = r.permutation(n)
    a = distillation_loss(LossConfig(0.3), heads(c, d), y, zt).value
    b = distillation_loss(LossConfig(0.3), heads(c[p], d[p]), y[p], zt[p]).value
    assert a == pytest.approx(b, rel=1e-13)


def test_loss_gradient_through_tiny_student():
    cfg = ModelConfig(PatchConfig(8, 8, 3, 4, 8), BackboneConfig(stage_channels=[2], strides=[2],
                                                                  feature_tokens=2, embed_dim=8),
                      layers=1, heads=2)
    model = HybridViT(cfg, stream(4, "m"))
    r = stream(4, "b")
    x = Tensor(r.uniform(size=(4, 3, 8, 8)))
    y, zt = np.array([1, 0, 0, 1]), r.normal(size=4)
    params = [model.class_token, model.distill_token, model.class_head.weight,
              model.backbone.stages[0].kernels, model.blocks[0].mlp.fc1.bias]
    check_grads(lambda: distillation_loss(LossConfig(0.5), model(x), y, zt).total, params)


# ------------------------------------------------------------------- optimizer

def test_sgd_zero_gradient_keeps_params():
    p = Tensor([1.0, -2.0])
    sgd_step(OptimizerState(lr=0.01), [p], [np.zeros(2)])
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_sgd_single_and_double_step():
    p = Tensor(1.0)
    state = OptimizerState(lr=0.01, momentum=0.9)
    sgd_step(state, [p], [np.array(1.0)])
    assert p.item() == pytest.approx(0.99, abs=1e-15)
    sgd_step(state, [p], [np.array(1.0)])
    assert p.item() == pytest.approx(1 - 0.01 - 0.019, abs=1e-15)


def test_step_decay_boundaries():
    sched = StepDecay(epochs=20)
    assert sched.boundaries == [12, 17]
    assert [sched.lr_at(0.01, e) for e in (0, 11, 12, 16, 17, 19)] == pytest.approx(
        [0.01, 0.01, 0.001, 0.001, 0.0001, 0.0001])
    assert StepDecay(epochs=1).boundaries == []


# ------------------------------------------------------------------- batching

def test_balanced_batches_hold_both_classes():
    labels = np.array([1] * 7 + [0] * 13)
    for b in balanced_batches(labels, 6, np.random.default_rng(0)):
        assert labels[b].sum() == 3 and len(b) == 6


# -------------------------------------------------------------------- training

def toy_set(n=10, seed=0):
    # separable: fakes are bright, reals dark
    r = np.random.default_rng(seed)
    y = np.array([1, 0] * (n // 2))
    x = np.where(y[:, None, None, None] == 1, 0.8, 0.2) + r.normal(0, 0.02, (n, 3, 8, 8))
    return Dataset(np.clip(x, 0, 1), y, np.arange(n, dtype=np.uint64))


def small_teacher(seed=0):
    return Teacher(BackboneConfig(stage_channels=[4, 4], strides=[2, 2], feature_tokens=1, embed_dim=4),
                   stream(seed, "teacher"))


def test_teacher_one_epoch_decreases_training_loss():
    ds = toy_set()
    teacher = small_teacher()
    before = fit(teacher, teacher_heads, ds, ds, TrainRunConfig(epochs=1, batch_size=10, lr=1e-9),
                 LossConfig(1.0)).rows[0]["val_L_train"]
    teacher = small_teacher()
    res = train_teacher(ds, ds, teacher, TrainRunConfig(epochs=1, batch_size=2, lr=0.05))
    assert res.rows[0]["val_L_train"] < before


def test_empty_dataset_is_rejected():
    ds = toy_set()
    with pytest.raises(ContractError):
        train_teacher(ds.subset(np.array([], dtype=int)), ds, small_teacher(), TrainRunConfig(epochs=1))


def tiny_student(seed=0):
    cfg = ModelConfig(PatchConfig(8, 8, 3, 4, 8), BackboneConfig(stage_channels=[4], strides=[2],
                                                                  feature_tokens=2, embed_dim=8),
                      layers=1, heads=2)
    return HybridViT(cfg, stream(seed, "student"))


def test_teacher_frozen_during_distillation():
    ds = toy_set(12)
    teacher = small_teacher()
    before = {k: v.tobytes() for k, v in state_dict(teacher).items()}
    logits_before = teacher_logits_for(teacher, ds.images)
    train_student(ds, ds, teacher, tiny_student(), TrainRunConfig(epochs=2, batch_size=4), LossConfig(0.5))
    assert {k: v.tobytes() for k, v in state_dict(teacher).items()} == before
    assert teacher_logits_for(teacher, ds.images).tobytes() == logits_before.tobytes()


def test_lambda_one_ignores_teacher():
    ds = toy_set(12)
    run = TrainRunConfig(epochs=2, batch_size=4)
    a = train_student(ds, ds, small_teacher(), tiny_student(), run, LossConfig(1.0))
    b = train_student(ds, ds, None, tiny_student(), run, LossConfig(1.0))
    assert a.log_csv() == b.log_csv()
    assert all(row["train_distill_term"] == 0.0 and row["val_distill_term"] == 0.0 for row in a.rows)


def test_best_checkpoint_is_argmin_of_validation_loss():
    ds = toy_set(12)
    res = train_student(ds, ds, small_teacher(), tiny_student(), TrainRunConfig(epochs=4, batch_size=4, lr=0.05),
                        LossConfig(0.5))
    vals = [row["val_L_train"] for row in res.rows]
    assert res.best_val == min(vals) and res.best_epoch == 1 + int(np.argmin(vals))
    assert list(res.rows[0]) and set(res.log_csv().splitlines()[0].split(",")) == set(LOG_COLUMNS)


def test_student_requires_teacher_below_lambda_one():
    ds = toy_set()
    with pytest.raises(ContractError):
        train_student(ds, ds, None, tiny_student(), TrainRunConfig(epochs=1), LossConfig(0.5))


def test_nan_aborts_with_named_tensor():
    ds = toy_set()
    model = tiny_student()
    model.class_head.weight.data[:] = np.nan
    with pytest.raises(NonFiniteError, match="loss"):
        train_student(ds, ds, None, model, TrainRunConfig(epochs=1, batch_size=4), LossConfig(1.0))


def test_run_config_validation():
    with pytest.raises(ConfigError):
        TrainRunConfig(epochs=0).validate()
    with pytest.raises(ConfigError):
        OptimizerState(lr=0.0)
