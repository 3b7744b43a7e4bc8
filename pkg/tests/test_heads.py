import math

import numpy as np
import pytest

from oracles import bilinear_oracle, cell_stats_oracle, cross_entropy_oracle, dense_ce_oracle

from hiergraph import autodiff as ad
from hiergraph import errors
from hiergraph.autodiff import value_of
from hiergraph.heads import (
    DEMO_STRIDES,
    TaskLogits,
    TaskTargets,
    extract_demo_features,
    forward_heads,
    fuse,
    multitask_loss,
    multitask_loss_terms,
)
from hiergraph.params import HeadParams, TaskWeights


def make_heads(rng, c_cat, c1, c_top, d, n=3):
    return HeadParams(
        object_w=rng.normal(size=(c_cat, n)),
        part_w=rng.normal(size=(c_cat, n)),
        material_w=rng.normal(size=(c1, n)),
        scene_w=rng.normal(size=(c_top, n)),
        readout_proj=rng.normal(size=(d, c_top)),
        texture_w=rng.normal(size=(c1, n)),
    )


# --- demo features ---

def test_demo_features_constant_image():
    image = np.full((3, 64, 64), 0.4)
    feats = extract_demo_features(image)
    for f in feats:
        assert np.allclose(f[0:3], 0.4)
        assert np.allclose(f[3:12], 0.0)


def test_demo_features_shapes():
    image = np.zeros((3, 64, 96))
    feats = extract_demo_features(image)
    assert [f.shape for f in feats] == [
        (12, 64 // s, 96 // s) for s in DEMO_STRIDES
    ]


def test_demo_features_step_edge_oracle():
    image = np.zeros((3, 32, 32))
    image[:, :, 18:] = 1.0  # vertical edge inside a stride-4 cell
    feats = extract_demo_features(image)
    expected4 = cell_stats_oracle(image, 4)
    assert np.allclose(feats[0], expected4, atol=1e-12)
    gx = feats[0][3]
    straddling = np.zeros_like(gx, dtype=bool)
    straddling[:, 18 // 4] = True  # column of cells containing the edge
    assert np.all(gx[straddling] != 0)
    assert np.all(gx[~straddling] == 0)


def test_demo_features_indivisible():
    with pytest.raises(errors.IndivisibleSize):
        extract_demo_features(np.zeros((3, 30, 64)))


# --- fusion ---

def test_fuse_zero_fhat_is_identity(rng):
    f = [rng.normal(size=(3, 8, 8)), rng.normal(size=(3, 4, 4))]
    fh = [np.zeros_like(x) for x in f]
    fused = fuse(f, fh)
    assert np.array_equal(value_of(fused.level1), f[0])
    up = value_of(fused.concat)
    assert np.array_equal(up[:3], f[0])
    assert np.allclose(up[3:], bilinear_oracle(f[1], 8, 8), atol=1e-12)


def test_fuse_1x1_identity(rng):
    f = [rng.normal(size=(2, 1, 1)), rng.normal(size=(2, 1, 1))]
    fh = [rng.normal(size=(2, 1, 1)), rng.normal(size=(2, 1, 1))]
    fused = fuse(f, fh)
    assert np.array_equal(
        value_of(fused.concat), np.concatenate([f[0] + fh[0], f[1] + fh[1]], axis=0)
    )


def test_fuse_bilinear_oracle(rng):
    f = [rng.normal(size=(2, 6, 6)), rng.normal(size=(2, 3, 2))]
    fh = [rng.normal(size=(2, 6, 6)), rng.normal(size=(2, 3, 2))]
    fused = fuse(f, fh)
    expected = bilinear_oracle(f[1] + fh[1], 6, 6)
    assert np.allclose(value_of(fused.concat)[2:], expected, atol=1e-6)


def test_fuse_shape_mismatch(rng):
    with pytest.raises(errors.ShapeMismatch):
        fuse([np.zeros((2, 4, 4))], [np.zeros((2, 2, 2))])


# --- heads ---

def test_heads_zero_weights_uniform(rng):
    fused = fuse([rng.normal(size=(3, 4, 4))], [np.zeros((3, 4, 4))])
    params = HeadParams(
        object_w=np.zeros((3, 4)),
        part_w=np.zeros((3, 4)),
        material_w=np.zeros((3, 4)),
        scene_w=np.zeros((3, 4)),
        readout_proj=np.zeros((5, 3)),
        texture_w=np.zeros((3, 4)),
    )
    logits = forward_heads(fused, np.ones(5), rng.normal(size=(3, 2, 2)), params)
    for l in (logits.object, logits.part, logits.material):
        assert np.array_equal(value_of(l), np.zeros_like(value_of(l)))
    e = np.exp(value_of(logits.scene))
    assert np.allclose(e / e.sum(), 0.25)


def test_scene_head_zero_projection(rng):
    fused = fuse([rng.normal(size=(3, 4, 4))], [np.zeros((3, 4, 4))])
    f_top = rng.normal(size=(3, 2, 2))
    params = make_heads(rng, 3, 3, 3, 5)
    params.readout_proj = np.zeros((5, 3))
    logits = forward_heads(fused, rng.normal(size=5), f_top, params)
    expected = f_top.mean(axis=(1, 2)) @ params.scene_w
    assert np.allclose(value_of(logits.scene), expected, atol=1e-12)


def test_heads_dense_matmul_oracle(rng):
    f1 = rng.normal(size=(2, 3, 3))
    fused = fuse([f1], [np.zeros_like(f1)])
    params = make_heads(rng, 2, 2, 2, 4, n=2)
    r = rng.normal(size=4)
    f_top = rng.normal(size=(2, 2, 2))
    logits = forward_heads(fused, r, f_top, params)
    for y in range(3):
        for x in range(3):
            expected = f1[:, y, x] @ params.object_w
            assert np.allclose(value_of(logits.object)[:, y, x], expected, atol=1e-12)
    expected_scene = (f_top.mean(axis=(1, 2)) + r @ params.readout_proj) @ params.scene_w
    assert np.allclose(value_of(logits.scene), expected_scene, atol=1e-12)
    expected_tex = f1.mean(axis=(1, 2)) @ params.texture_w
    assert np.allclose(value_of(logits.texture), expected_tex, atol=1e-12)


# --- loss ---

def uniform_logits(n, h=2, w=2):
    return TaskLogits(
        object=np.zeros((n, h, w)),
        part=np.zeros((n, h, w)),
        material=np.zeros((n, h, w)),
        scene=np.zeros(n),
        texture=np.zeros(n),
    )


def full_targets(h=2, w=2):
    return TaskTargets(
        object=np.zeros((h, w), np.int32),
        part=np.zeros((h, w), np.int32),
        material=np.zeros((h, w), np.int32),
        scene=0,
        texture=0,
    )


def test_uniform_logits_weighted_sum():
    # all five tasks at C classes with uniform logits: each CE is ln C and
    # the coefficient sum is 0.25 + 1 + 1 + 0.5 + 1 = 3.75
    for n in (2, 3, 7):
        total = multitask_loss(uniform_logits(n), full_targets())
        assert math.isclose(float(value_of(total)), 3.75 * math.log(n), rel_tol=1e-12)


def test_only_object_confident():
    logits = TaskLogits(object=np.zeros((2, 2, 2)))
    logits.object[0] = 30.0  # confidently class 0 everywhere
    targets = TaskTargets(object=np.zeros((2, 2), np.int32))
    total = float(value_of(multitask_loss(logits, targets)))
    assert total < 1e-9


def test_loss_matches_scalar_oracle(rng):
    logits = TaskLogits(
        object=rng.normal(size=(3, 4, 4)),
        scene=rng.normal(size=3),
    )
    targets = TaskTargets(
        object=rng.integers(-1, 3, size=(4, 4)).astype(np.int32),
        scene=1,
    )
    terms = multitask_loss_terms(logits, targets)
    assert np.isclose(
        float(value_of(terms["object"])), dense_ce_oracle(logits.object, targets.object), atol=1e-9
    )
    assert np.isclose(
        float(value_of(terms["scene"])), cross_entropy_oracle(logits.scene, 1), atol=1e-9
    )


def test_loss_lambda_linearity(rng):
    logits = uniform_logits(3)
    targets = full_targets()
    base = TaskWeights()
    total = float(value_of(multitask_loss(logits, targets, base)))
    for task in ("scene", "texture", "object", "part", "material"):
        kwargs = {t: getattr(base, t) for t in ("scene", "texture", "object", "part", "material")}
        kwargs[task] = 0.0
        reduced = float(value_of(multitask_loss(logits, targets, TaskWeights(**kwargs))))
        terms = multitask_loss_terms(logits, targets)
        expected = total - getattr(base, task) * float(value_of(terms[task]))
        assert math.isclose(reduced, expected, rel_tol=1e-12)


def test_ignored_pixels_do_not_matter(rng):
    logits = rng.normal(size=(3, 3, 3))
    targets = rng.integers(0, 3, size=(3, 3)).astype(np.int32)
    targets[0, :] = -1
    l1 = TaskLogits(object=logits.copy())
    l2 = TaskLogits(object=logits.copy())
    l2.object[:, 0, :] += rng.normal(size=(3, 3)) * 100
    t = TaskTargets(object=targets)
    a = float(value_of(multitask_loss(l1, t)))
    b = float(value_of(multitask_loss(l2, t)))
    assert a == b


def test_loss_shift_invariance(rng):
    logits = rng.normal(size=(4, 2, 2))
    targets = rng.integers(0, 4, size=(2, 2)).astype(np.int32)
    a = float(value_of(multitask_loss(TaskLogits(object=logits), TaskTargets(object=targets))))
    b = float(
        value_of(multitask_loss(TaskLogits(object=logits + 7.3), TaskTargets(object=targets)))
    )
    assert math.isclose(a, b, abs_tol=1e-6)


def test_all_pixels_ignored():
    logits = TaskLogits(object=np.zeros((2, 2, 2)))
    targets = TaskTargets(object=np.full((2, 2), -1, np.int32))
    with pytest.raises(errors.AllPixelsIgnored):
        multitask_loss(logits, targets)


def test_no_tasks_present():
    with pytest.raises(ValueError):
        multitask_loss(uniform_logits(2), TaskTargets())
