import numpy as np
import pytest

from bbc.distances import (DistanceFn, FeatureExtractor, SkeletonTopology, euclidean_sq, forward_difference,
                           motion_manifold, motion_terms, perceptual)
from bbc.errors import ConfigError, DimensionError
from bbc.numcore import LayerSpec, Tensor, grad_of, init_params

import oracles

N_PAIRS = 1000


def _extractor(seed=0, weights=None):
    spec = [LayerSpec(6, 8, "relu"), LayerSpec(8, 4, "tanh")]
    params = init_params(spec, np.random.default_rng(seed))
    return FeatureExtractor(params, spec, tap_layers=[0, 1], layer_weights=weights,
                            layer_dims=[(2, 2, 2), (1, 1, 4)])


SKELETON = SkeletonTopology(4, [(0, 1), (1, 2), (1, 3)], 5)


def _all_distances():
    return {
        "euclidean_sq": (DistanceFn(), 6),
        "perceptual": (DistanceFn("perceptual", extractor=_extractor()), 6),
        "motion_manifold": (DistanceFn("motion_manifold", skeleton=SKELETON), SKELETON.sample_size),
    }


# -- euclidean -----------------------------------------------------------------

def test_euclidean_examples():
    assert euclidean_sq(np.array([0.0, 0.0]), np.array([3.0, 4.0])).data == 25.0
    x = np.array([0.1, -2.0])
    assert euclidean_sq(x, x).data == 0.0


def test_euclidean_matches_loop():
    rng = np.random.default_rng(3)
    for _ in range(20):
        x, y = rng.normal(size=7), rng.normal(size=7)
        assert euclidean_sq(x, y).data == pytest.approx(oracles.euclid_loop(x, y), rel=1e-13)


def test_shape_mismatch():
    with pytest.raises(DimensionError):
        euclidean_sq(np.zeros(3), np.zeros(4))


# -- perceptual ----------------------------------------------------------------

def test_perceptual_hand_example():
    fe = FeatureExtractor([np.eye(2), np.zeros(2)], [LayerSpec(2, 2, "identity")], tap_layers=[0],
                          layer_weights=[1.0], layer_dims=[(1, 1, 2)])
    d = perceptual(np.array([1.0, 0.0]), np.array([0.0, 1.0]), fe)
    assert d.data == pytest.approx(2.0, abs=1e-12)


def test_perceptual_normalization_ignores_scale():
    fe = FeatureExtractor([np.eye(2), np.zeros(2)], [LayerSpec(2, 2, "identity")], tap_layers=[0],
                          layer_weights=[1.0])
    assert perceptual(np.array([3.0, 0.0]), np.array([0.5, 0.0]), fe).data == pytest.approx(0.0, abs=1e-12)


def test_perceptual_linear_in_weights():
    rng = np.random.default_rng(5)
    x, y = rng.uniform(size=6), rng.uniform(size=6)
    d1 = perceptual(x, y, _extractor(weights=[0.3, 0.7])).data
    d2 = perceptual(x, y, _extractor(weights=[0.6, 1.4])).data
    assert d2 == pytest.approx(2 * d1, rel=1e-12)


def test_perceptual_spatial_layout_oracle():
    # layer 0 is read as 2x2 positions of 2 channels; compare with a loop evaluation
    fe = _extractor()
    rng = np.random.default_rng(9)
    x, y = rng.uniform(size=6), rng.uniform(size=6)
    expected = 0.0
    for w, layer, (W, H, C) in zip(fe.layer_weights, fe.tap_layers, fe.layer_dims):
        acts = ["relu", "tanh"][: layer + 1]
        ax = oracles.loop_mlp(fe.params[: 2 * (layer + 1)], acts, x)
        ay = oracles.loop_mlp(fe.params[: 2 * (layer + 1)], acts, y)
        for pos in range(W * H):
            vx, vy = ax[pos * C:(pos + 1) * C], ay[pos * C:(pos + 1) * C]
            nx = max(np.sqrt(sum(v * v for v in vx)), 1e-12)
            ny = max(np.sqrt(sum(v * v for v in vy)), 1e-12)
            expected += w * sum((a / nx - b / ny) ** 2 for a, b in zip(vx, vy)) / (W * H)
    assert perceptual(x, y, fe).data == pytest.approx(expected, rel=1e-10, abs=1e-14)


def test_perceptual_needs_extractor():
    with pytest.raises(ConfigError):
        perceptual(np.zeros(2), np.zeros(2), None)
    with pytest.raises(ConfigError):
        DistanceFn("perceptual")


def test_extractor_layout_checked():
    spec = [LayerSpec(2, 3, "relu")]
    with pytest.raises(ConfigError):
        FeatureExtractor(init_params(spec, np.random.default_rng(0)), spec, [0], layer_dims=[(2, 1, 2)])
    with pytest.raises(ConfigError):
        FeatureExtractor(init_params(spec, np.random.default_rng(0)), spec, [0], layer_weights=[-1.0])


# -- motion manifold -------------------------------------------------------------

def test_motion_zero_on_identical():
    x = np.random.default_rng(0).normal(size=SKELETON.sample_size)
    assert motion_manifold(x, x, SKELETON).data == 0.0


def test_motion_translation_example():
    M, J = 6, 3
    sk = SkeletonTopology(J, [(0, 1), (1, 2)], M)
    x = np.random.default_rng(1).normal(size=(M, J, 3))
    c = np.array([0.3, -0.4, 1.2])
    terms = motion_terms(x.ravel(), (x + c).ravel(), sk)
    ref = oracles.motion_loop(x, x + c, J, M, sk.bones)
    assert terms["bone"].data[0] == pytest.approx(0.0, abs=1e-12)
    assert terms["order1"].data[0] == pytest.approx(0.0, abs=1e-12)
    assert terms["order2"].data[0] == pytest.approx(0.0, abs=1e-12)
    assert terms["order0"].data[0] == pytest.approx(ref["order0"], rel=1e-12)
    assert terms["order0"].data[0] == pytest.approx(float(c @ c), rel=1e-12)


def test_motion_scaling_bone_term():
    M = 4
    sk = SkeletonTopology(2, [(0, 1)], M)
    rng = np.random.default_rng(2)
    x = np.zeros((M, 2, 3))
    for m in range(M):
        v = rng.normal(size=3)
        x[m, 0] = rng.normal(size=3)
        x[m, 1] = x[m, 0] + v / np.linalg.norm(v)
    terms = motion_terms(x.ravel(), 2 * x.ravel(), sk)
    ref = oracles.motion_loop(x, 2 * x, 2, M, sk.bones)
    assert terms["bone"].data[0] == pytest.approx(1.0, rel=1e-12)
    assert terms["bone"].data[0] == pytest.approx(ref["bone"], rel=1e-12)


def test_motion_full_value_matches_loop():
    rng = np.random.default_rng(4)
    for _ in range(10):
        x, y = rng.normal(size=SKELETON.sample_size), rng.normal(size=SKELETON.sample_size)
        ref = oracles.motion_loop(x, y, SKELETON.num_joints, SKELETON.num_frames, SKELETON.bones)
        assert motion_manifold(x, y, SKELETON).data == pytest.approx(sum(ref.values()), rel=1e-12)


def test_forward_difference_exact():
    q = np.random.default_rng(6).normal(size=(1, 5, 2, 3))
    d = forward_difference(Tensor(q)).data
    assert np.array_equal(d[:, :-1], q[:, 1:] - q[:, :-1])
    assert np.array_equal(d[:, -1], d[:, -2])


def test_motion_derivative_orders_subset():
    sk = SkeletonTopology(4, [(0, 1)], 5, derivative_orders=(0,))
    x = np.random.default_rng(7).normal(size=sk.sample_size)
    assert set(motion_terms(x, x + 1, sk)) == {"bone", "order0"}


def test_motion_dimension_mismatch():
    with pytest.raises(DimensionError):
        motion_manifold(np.zeros(7), np.zeros(7), SKELETON)


def test_skeleton_round_trip(tmp_path):
    SKELETON.dump(tmp_path / "sk.ini")
    back = SkeletonTopology.load(tmp_path / "sk.ini")
    assert back == SKELETON


def test_skeleton_rejects_bad_bone():
    with pytest.raises(ConfigError):
        SkeletonTopology(2, [(0, 5)], 3)


# -- shared properties over 1000 random pairs -------------------------------------

@pytest.mark.parametrize("kind", ["euclidean_sq", "perceptual", "motion_manifold"])
def test_distance_properties(kind):
    d, dim = _all_distances()[kind]
    rng = np.random.default_rng(11)
    x, y = rng.uniform(-1, 1, size=(N_PAIRS, dim)), rng.uniform(-1, 1, size=(N_PAIRS, dim))
    dxy, dyx, dxx = d(x, y).data, d(y, x).data, d(x, x).data
    assert dxy.shape == (N_PAIRS,)
    assert np.all(dxy >= 0)
    assert np.all(np.abs(dxx) <= 1e-12)
    assert np.all(np.abs(dxy - dyx) <= 1e-12 * np.maximum(1.0, dxy))


@pytest.mark.parametrize("kind", ["euclidean_sq", "perceptual", "motion_manifold"])
def test_distance_gradient_fd(kind):
    d, dim = _all_distances()[kind]
    rng = np.random.default_rng(12)
    for _ in range(5):
        x, y = rng.uniform(0.1, 0.9, size=dim), rng.uniform(0.1, 0.9, size=dim)
        _, (g,) = grad_of(lambda t: d(x, t), y)
        fd = oracles.fd_params(lambda ps: float(d(x, ps[0]).data), [y])[0]
        assert oracles.norm_rel_error(g, fd) < 1e-4
