import numpy as np
import pytest
from scipy.special import log_softmax

from slzkit.camera import CameraIntrinsics
from slzkit.errors import DegenerateInputError, ShapeMismatchError
from slzkit.geometry import backproject, normals_from_depth
from slzkit.losses import (
    ClassWeights,
    LossWeights,
    depth_normal_consistency,
    depth_normal_consistency_grad,
    fine_tune_loss,
    grad_check,
    sample_triplets,
    sequential_depth_loss,
    sequential_depth_loss_grad,
    slz_loss,
    slz_loss_grad,
    virtual_normal_loss,
)
from slzkit.synth import plane_depth, plane_unit_normal

INTR = CameraIntrinsics(100, 100, 15.5, 15.5)


# --- virtual normal loss ------------------------------------------------------


def test_vnl_zero_on_identical_depths():
    depth = plane_depth(16, 16, INTR, 0.1, 0.2, 4.0)
    assert virtual_normal_loss(depth, depth, INTR, 40, seed=3) == 0.0


def test_vnl_matches_brute_force_over_shared_triplets():
    d_gt = np.full((16, 16), 4.0)
    d_pred = plane_depth(16, 16, INTR, 0.25, -0.1, 4.0)
    value = virtual_normal_loss(d_pred, d_gt, INTR, 64, seed=11)

    triplets = sample_triplets(d_pred, d_gt, INTR, 64, seed=11)
    dists = []
    for tri in triplets:
        def unit_normal(depth):
            p = [np.array(backproject(c, r, depth[r, c], INTR)) for r, c in tri]
            cr = np.cross(p[1] - p[0], p[2] - p[0])
            return cr / np.linalg.norm(cr)

        dists.append(np.linalg.norm(unit_normal(d_pred) - unit_normal(d_gt)))
    assert value == pytest.approx(float(np.mean(dists)), abs=1e-7)


def test_vnl_deterministic_and_seed_sensitive():
    rng = np.random.default_rng(0)
    d_gt = 4.0 + rng.uniform(-0.5, 0.5, (12, 12))
    d_pred = d_gt + rng.uniform(0, 0.3, (12, 12))
    a = virtual_normal_loss(d_pred, d_gt, INTR, 50, seed=5)
    b = virtual_normal_loss(d_pred, d_gt, INTR, 50, seed=5)
    c = virtual_normal_loss(d_pred, d_gt, INTR, 50, seed=6)
    assert a == b
    assert a != c


def test_vnl_global_scale_invariance():
    rng = np.random.default_rng(1)
    d_gt = 5.0 + rng.uniform(-1, 1, (12, 12))
    d_pred = d_gt + rng.uniform(0, 0.5, (12, 12))
    a = virtual_normal_loss(d_pred, d_gt, INTR, 50, seed=9)
    b = virtual_normal_loss(3.0 * d_pred, 3.0 * d_gt, INTR, 50, seed=9)
    assert b == pytest.approx(a, abs=1e-6)


def test_vnl_argument_errors():
    depth = np.full((8, 8), 2.0)
    with pytest.raises(DegenerateInputError):
        virtual_normal_loss(depth, depth, INTR, 0, seed=0)
    with pytest.raises(DegenerateInputError):
        virtual_normal_loss(np.full((8, 8), -1.0), depth, INTR, 4, seed=0)
    with pytest.raises(ShapeMismatchError):
        virtual_normal_loss(depth, np.full((8, 9), 2.0), INTR, 4, seed=0)


def test_vnl_degenerate_when_all_triplets_collinear():
    # A single constant-depth row: every backprojected triplet is collinear.
    row = np.full((1, 40), 3.0)
    with pytest.raises(DegenerateInputError):
        virtual_normal_loss(row, row, INTR, 2, seed=0)


# --- sequential depth loss ----------------------------------------------------


def test_sequential_zero_on_perfect_predictions():
    gt = np.full((6, 6), 2.0)
    conf = np.full((6, 6), 0.7)
    w = LossWeights(T=0)
    assert sequential_depth_loss([gt], [conf], gt, conf, w) == 0.0


def test_sequential_decay_sum_hand_value():
    gt = np.full((4, 4), 2.0)
    cgt = np.full((4, 4), 1.0)
    # constant per-step loss L = 0.3 + 0.2 = 0.5
    preds = [gt + 0.3, gt + 0.3]
    confs = [cgt - 0.2, cgt - 0.2]
    w = LossWeights(T=1, gamma=0.9)
    total = sequential_depth_loss(preds, confs, gt, cgt, w)
    assert total == pytest.approx(1.9 * 0.5, abs=1e-12)


def test_sequential_gamma_one_is_plain_sum():
    rng = np.random.default_rng(2)
    gt = 3.0 + rng.uniform(-1, 1, (5, 5))
    cgt = rng.uniform(0, 1, (5, 5))
    preds = [gt + rng.uniform(-1, 1, (5, 5)) for _ in range(4)]
    confs = [cgt + rng.uniform(-1, 1, (5, 5)) for _ in range(4)]
    w = LossWeights(T=3, gamma=1.0)
    total = sequential_depth_loss(preds, confs, gt, cgt, w)
    direct = sum(np.abs(p - gt).mean() + np.abs(c - cgt).mean()
                 for p, c in zip(preds, confs))
    assert total == pytest.approx(direct, rel=1e-12)


def test_sequential_valid_mask_and_errors():
    gt = np.full((4, 4), 2.0)
    cgt = np.ones((4, 4))
    preds = [gt + 1.0]
    confs = [cgt]
    valid = np.zeros((4, 4), np.uint8)
    valid[0, 0] = 1
    w = LossWeights(T=0)
    assert sequential_depth_loss(preds, confs, gt, cgt, w, valid) == pytest.approx(1.0)
    with pytest.raises(DegenerateInputError):
        sequential_depth_loss(preds, confs, gt, cgt, w, np.zeros((4, 4), np.uint8))
    with pytest.raises(ShapeMismatchError):
        sequential_depth_loss(preds * 2, confs * 2, gt, cgt, w)  # length 2, T=0


# --- depth-normal consistency -------------------------------------------------


def test_dncl_self_consistency():
    depth = plane_depth(12, 12, INTR, 0.2, 0.1, 5.0)
    derived = normals_from_depth(depth, INTR)
    assert depth_normal_consistency(depth, derived, INTR) <= 1e-6


def test_dncl_antipodal_bound():
    depth = plane_depth(12, 12, INTR, 0.2, 0.1, 5.0)
    derived = normals_from_depth(depth, INTR)
    value = depth_normal_consistency(depth, -derived, INTR)
    assert value == pytest.approx(2.0, abs=1e-6)


def test_dncl_analytic_plane():
    a, b = 0.3, -0.2
    depth = plane_depth(16, 16, INTR, a, b, 5.0)
    target = np.broadcast_to(plane_unit_normal(a, b), (16, 16, 3)).copy()
    assert depth_normal_consistency(depth, target, INTR) <= 1e-3


def test_dncl_errors():
    depth = np.full((8, 8), 2.0)
    with pytest.raises(DegenerateInputError):
        depth_normal_consistency(depth, np.zeros((8, 8, 3)), INTR)
    with pytest.raises(ShapeMismatchError):
        depth_normal_consistency(depth, np.zeros((8, 9, 3)), INTR)


# --- slz loss -------------------------------------------------------------------


def test_slz_confident_correct_prediction():
    labels = np.array([[0, 1], [1, 0]], dtype=np.uint8)
    logits = np.where(np.stack([labels == 0, labels == 1], axis=-1), 30.0, 0.0)
    assert slz_loss([logits], labels) <= 1e-9


def test_slz_uniform_logits_all_safe():
    labels = np.zeros((4, 4), dtype=np.uint8)
    logits = np.zeros((4, 4, 2))
    value = slz_loss([logits], labels, ClassWeights(w_safe=2.0, w_unsafe=1.0))
    assert value == pytest.approx(2.0 * np.log(2.0), abs=1e-9)


def test_slz_decay_sum():
    labels = np.zeros((4, 4), dtype=np.uint8)
    logits = np.zeros((4, 4, 2))
    per_step = 2.0 * np.log(2.0)
    total = slz_loss([logits, logits], labels, gamma=0.9)
    assert total == pytest.approx(1.9 * per_step, rel=1e-12)


def test_slz_unweighted_matches_independent_cross_entropy():
    rng = np.random.default_rng(3)
    labels = (rng.uniform(size=(6, 6)) > 0.5).astype(np.uint8)
    seq = [rng.normal(scale=3.0, size=(6, 6, 2)) for _ in range(3)]
    ours = slz_loss(seq, labels, ClassWeights(1.0, 1.0), gamma=0.9)
    ref = 0.0
    for t, z in enumerate(seq):
        logp = log_softmax(z, axis=-1)
        picked = np.take_along_axis(logp, labels[..., None].astype(int), axis=-1)[..., 0]
        ref += 0.9 ** (len(seq) - 1 - t) * -picked.mean()
    assert ours == pytest.approx(ref, abs=1e-9)


def test_slz_gamma_one_is_plain_sum():
    rng = np.random.default_rng(4)
    labels = (rng.uniform(size=(5, 5)) > 0.3).astype(np.uint8)
    seq = [rng.normal(size=(5, 5, 2)) for _ in range(4)]
    total = slz_loss(seq, labels, gamma=1.0)
    direct = sum(slz_loss([z], labels, gamma=1.0) for z in seq)
    assert total == pytest.approx(direct, rel=1e-12)


def test_slz_errors():
    labels = np.zeros((3, 3), dtype=np.uint8)
    with pytest.raises(DegenerateInputError):
        slz_loss([], labels)
    with pytest.raises(DegenerateInputError):
        slz_loss([np.zeros((3, 3, 2))], labels, valid=np.zeros((3, 3), np.uint8))
    with pytest.raises(ShapeMismatchError):
        slz_loss([np.zeros((3, 4, 2))], labels)


# --- combined loss --------------------------------------------------------------


def test_fine_tune_default_weights():
    assert fine_tune_loss(1.0, 1.0, 1.0, LossWeights()) == pytest.approx(0.71, abs=1e-12)


def test_fine_tune_zeros():
    assert fine_tune_loss(0.0, 0.0, 0.0, LossWeights()) == 0.0
    zeroed = LossWeights(lambda1=0.0, lambda2=0.0, lambda3=0.0)
    assert fine_tune_loss(3.0, 7.0, 11.0, zeroed) == 0.0


def test_fine_tune_rejects_non_finite():
    with pytest.raises(ValueError):
        fine_tune_loss(np.inf, 0.0, 0.0, LossWeights())


def test_weight_validation():
    with pytest.raises(ValueError):
        LossWeights(lambda1=-0.1)
    with pytest.raises(ValueError):
        LossWeights(gamma=0.0)
    with pytest.raises(ValueError):
        LossWeights(T=-1)
    with pytest.raises(ValueError):
        ClassWeights(0.0, 1.0)


# --- gradient checks -------------------------------------------------------------


def test_grad_check_quadratic():
    x = np.random.default_rng(5).normal(size=(4, 4))
    err = grad_check(lambda v: float((v**2).sum()), x, 2 * x, eps=1e-4)
    assert err <= 1e-6


def test_grad_check_slz():
    rng = np.random.default_rng(6)
    labels = (rng.uniform(size=(4, 4)) > 0.5).astype(np.uint8)
    seq = [rng.normal(size=(4, 4, 2)) for _ in range(2)]
    _, grads = slz_loss_grad(seq, labels)
    for i in range(2):
        def f(x, i=i):
            trial = [x if j == i else z for j, z in enumerate(seq)]
            return slz_loss(trial, labels)

        assert grad_check(f, seq[i], grads[i], eps=1e-5) <= 1e-4


def test_grad_check_sequential():
    rng = np.random.default_rng(7)
    gt = 3.0 + rng.uniform(-0.5, 0.5, (4, 4))
    cgt = rng.uniform(0.2, 0.8, (4, 4))
    # keep residuals away from the |.| kink
    preds = [gt + rng.uniform(0.2, 0.6, (4, 4)), gt - rng.uniform(0.2, 0.6, (4, 4))]
    confs = [cgt + 0.1, cgt - 0.15]
    w = LossWeights(T=1)
    _, gd, gc = sequential_depth_loss_grad(preds, confs, gt, cgt, w)
    for i in range(2):
        def fd(x, i=i):
            return sequential_depth_loss([x if j == i else p for j, p in enumerate(preds)],
                                         confs, gt, cgt, w)

        def fc(x, i=i):
            return sequential_depth_loss(preds,
                                         [x if j == i else c for j, c in enumerate(confs)],
                                         gt, cgt, w)

        assert grad_check(fd, preds[i], gd[i], eps=1e-5) <= 1e-4
        assert grad_check(fc, confs[i], gc[i], eps=1e-5) <= 1e-4


def test_grad_check_dncl():
    rng = np.random.default_rng(8)
    depth = 4.0 + rng.uniform(-0.3, 0.3, (8, 8))
    target = np.zeros((8, 8, 3))
    target[..., 2] = -1.0
    _, grad = depth_normal_consistency_grad(depth, target, INTR)
    err = grad_check(lambda x: depth_normal_consistency(x, target, INTR), depth, grad, eps=1e-5)
    assert err <= 1e-3


def test_grad_check_api_errors():
    x = np.zeros((2, 2))
    with pytest.raises(ValueError):
        grad_check(lambda v: 0.0, x, x, eps=0.0)
    with pytest.raises(ShapeMismatchError):
        grad_check(lambda v: 0.0, x, np.zeros((3, 3)))
    with pytest.raises(DegenerateInputError):
        grad_check(lambda v: float("nan"), x, x)
