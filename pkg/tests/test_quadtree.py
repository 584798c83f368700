import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fgrn.errors import EmptyBatch, ImageTooSmall, InvalidConfig
from fgrn.inference import mode_complete, mode_encode
from fgrn.learning import LearnConfig
from fgrn.lvm import lvm_train
from fgrn.oracle import analytic_marginals
from fgrn.quadtree import (
    QUADRANT_ORDER,
    ArchitectureConfig,
    LayerParams,
    PatchPyramid,
    QuadtreeNetwork,
    assemble,
    build_network,
    extract_patches,
    one_hot,
    sample_image,
    sample_images,
    subdivide,
    train_layerwise,
)


class TestConfig:
    @pytest.mark.parametrize(
        "args",
        [(0, 1, 1, (2,)), (1, 0, 1, (2, 2)), (2, 1, 1, (2, 2)), (1, 1, 1, (2, 0))],
    )
    def test_invalid(self, args):
        with pytest.raises(InvalidConfig):
            ArchitectureConfig(*args)

    def test_per_layer_settings(self):
        cfg = ArchitectureConfig(2, 1, 1, (2, 2, 2), epochs=(3, 4), learn=(LearnConfig(2), LearnConfig(5)))
        assert cfg.epochs == (3, 4) and cfg.learn[1].n_iterations == 5

    def test_wrong_epoch_count(self):
        with pytest.raises(InvalidConfig):
            ArchitectureConfig(2, 1, 1, (2, 2, 2), epochs=(3,))

    def test_smoothing_range(self):
        with pytest.raises(InvalidConfig):
            ArchitectureConfig(1, 1, 1, (2, 2), smoothing=1.0)


class TestBuild:
    def test_single_block(self):
        net = build_network(ArchitectureConfig(1, 2, 2, (2, 3)))
        assert net.block_count(1) == 1
        assert net.params(1).cpts.shape == (4, 3, 2)
        assert net.grid_shape(0) == (2, 2)

    def test_three_layer_geometry(self):
        net = build_network(ArchitectureConfig(3, 8, 8, (2, 3, 3, 3)))
        assert net.grid_shape(0) == (32, 32)
        assert [net.block_count(i) for i in (1, 2, 3)] == [16, 4, 1]
        assert net.patch_shape(1) == (8, 8) and net.patch_shape(2) == (2, 2)

    def test_minimal_instance(self):
        net = build_network(ArchitectureConfig(2, 1, 1, (2, 2, 2)))
        assert net.grid_shape(0) == (2, 2)
        assert net.grid_shape(1) == (2, 2)
        assert net.n_variables == 9

    @given(st.integers(1, 4), st.integers(1, 3), st.integers(1, 3))
    def test_block_counts(self, L, N, M):
        net = build_network(ArchitectureConfig(L, N, M, (2,) * (L + 1)))
        for i in range(1, L + 1):
            assert net.block_count(i) == 4 ** (L - i)

    @given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 3))
    def test_tree_structure(self, L, N, M):
        net = build_network(ArchitectureConfig(L, N, M, (2,) * (L + 1)))
        parents = {}
        for v in net.variables():
            for ch in (net.children(*v) if v[0] > 0 else []):
                assert ch not in parents
                parents[ch] = v
                assert net.parent(*ch) == v
        roots = [v for v in net.variables() if v not in parents]
        assert roots == [(L, 0, 0)]
        assert len(parents) == net.n_variables - 1

    def test_initial_parameters(self):
        net = build_network(ArchitectureConfig(2, 2, 2, (2, 3, 4), jitter=0.01, seed=3))
        for i in (1, 2):
            p = net.params(i)
            np.testing.assert_allclose(p.cpts.sum(axis=-1), 1.0, atol=1e-12)
            assert np.all(np.abs(p.cpts * p.cpts.shape[-1] - 1) <= 0.0201)
            np.testing.assert_array_equal(p.prior, np.full(p.prior.size, 1 / p.prior.size))

    def test_tying(self):
        net = build_network(ArchitectureConfig(3, 1, 1, (2, 2, 2, 2)))
        a, b = net.block(1, 0, 0), net.block(1, 3, 2)
        net.params(1).cpts[0, 0] = [0.25, 0.75]
        net.params(1).prior[:] = [0.1, 0.9]
        for blk in (a, b):
            np.testing.assert_array_equal(blk.cpts[0][0], [0.25, 0.75])
            np.testing.assert_array_equal(blk.prior, [0.1, 0.9])

    def test_shape_validation(self):
        cfg = ArchitectureConfig(1, 1, 1, (2, 2))
        with pytest.raises(InvalidConfig):
            QuadtreeNetwork(cfg, [LayerParams(np.full((1, 3, 2), 0.5), np.full(3, 1 / 3), (1, 1))])

    def test_quadrant_order(self):
        assert QUADRANT_ORDER == ("NW", "NE", "SW", "SE")
        net = build_network(ArchitectureConfig(2, 1, 1, (2, 2, 2)))
        assert net.children(2, 0, 0) == [(1, 0, 0), (1, 0, 1), (1, 1, 0), (1, 1, 1)]


class TestPatches:
    def test_whole_image(self):
        cfg = ArchitectureConfig(2, 2, 2, (2, 2, 2))
        img = np.arange(16).reshape(4, 4) % 2
        pyr = extract_patches(img, cfg, 1)
        np.testing.assert_array_equal(pyr.patches[0], img)
        assert pyr.flat_level(1).shape == (4, 2, 2)

    def test_too_small(self):
        with pytest.raises(ImageTooSmall):
            extract_patches(np.zeros((3, 8)), ArchitectureConfig(2, 2, 2, (2, 2, 2)), 1)

    def test_patch_counts(self, rng):
        cfg = ArchitectureConfig(3, 8, 8, (2, 2, 2, 2))
        pyrs = [extract_patches(rng.integers(0, 2, (40, 48)), cfg, 10, seed=j) for j in range(50)]
        assert sum(len(p) for p in pyrs) == 500

    def test_three_level_subdivision(self, rng):
        cfg = ArchitectureConfig(3, 8, 8, (2, 2, 2, 2))
        patch = rng.integers(0, 2, (32, 32))
        pyr = PatchPyramid(patch[None], 3, 8, 8)
        lv2, lv1 = pyr.level(2), pyr.level(1)
        assert lv2.shape == (1, 2, 2, 16, 16) and lv1.shape == (1, 4, 4, 8, 8)
        for q, (a, b) in enumerate([(0, 0), (0, 1), (1, 0), (1, 1)]):
            np.testing.assert_array_equal(lv2[0, a, b], patch[16 * a:16 * a + 16, 16 * b:16 * b + 16])
            np.testing.assert_array_equal(subdivide(patch)[q], lv2[0, a, b])
        flat = pyr.flat_level(1)
        for k in range(16):
            r, c = divmod(k, 4)
            np.testing.assert_array_equal(flat[k], patch[8 * r:8 * r + 8, 8 * c:8 * c + 8])

    def test_anchors_valid_and_seeded(self, rng):
        cfg = ArchitectureConfig(2, 2, 3, (2, 2, 2))
        img = rng.integers(0, 2, (9, 13))
        a = extract_patches(img, cfg, 20, seed=5)
        b = extract_patches(img, cfg, 20, seed=5)
        np.testing.assert_array_equal(a.patches, b.patches)
        for (r, c), p in zip(a.anchors, a.patches):
            np.testing.assert_array_equal(img[r:r + 4, c:c + 6], p)

    @given(st.integers(1, 4), st.integers(1, 3), st.integers(1, 3), st.integers(0, 2**32 - 1))
    def test_subdivide_round_trip(self, L, N, M, seed):
        rng = np.random.default_rng(seed)
        h, w = N * 2 ** (L - 1), M * 2 ** (L - 1)
        patch = rng.integers(0, 5, (h, w))

        def rebuild(p, depth):
            if depth == 0:
                return p
            return assemble([rebuild(q, depth - 1) for q in subdivide(p)])

        assert np.array_equal(rebuild(patch, L - 1), patch)


class TestTraining:
    def test_single_layer_equals_lvm_train(self, rng):
        cfg = ArchitectureConfig(1, 2, 3, (2, 4), epochs=3, learn=LearnConfig(4), seed=9)
        pyr = PatchPyramid(rng.integers(0, 2, (25, 2, 3)), 1, 2, 3)
        net = train_layerwise([pyr], cfg)
        blk = lvm_train(one_hot(pyr.patches, 2), 4, LearnConfig(4), 3, seed=cfg.layer_seed(1))
        assert np.array_equal(net.params(1).cpts, np.stack(blk.cpts))
        assert np.array_equal(net.params(1).prior, blk.prior)

    @pytest.mark.xfail(
        strict=True,
        reason="a one-pixel Layer-1 block is not identifiable: every CPT with the right pixel marginal "
        "is a likelihood maximum, so training stays at its near-uniform start and S1 carries no signal",
    )
    def test_two_patterns_get_distinct_root_states(self):
        a = np.array([[0, 1], [1, 0]])
        cfg = ArchitectureConfig(2, 1, 1, (2, 2, 2), epochs=10, learn=LearnConfig(10))
        net = train_layerwise([PatchPyramid(np.stack([a, 1 - a] * 10), 2, 1, 1)], cfg)
        roots = [mode_encode(net, p)[2][0, 0] for p in (a, 1 - a)]
        assert all(r.max() >= 0.99 for r in roots)
        assert roots[0].argmax() != roots[1].argmax()

    def test_two_tiled_patterns_get_distinct_root_states(self):
        q = np.array([[0, 1], [1, 1]])
        a, b = np.tile(q, (2, 2)), np.tile(1 - q, (2, 2))
        cfg = ArchitectureConfig(2, 2, 2, (2, 2, 2), epochs=10, learn=LearnConfig(10))
        net = train_layerwise([PatchPyramid(np.stack([a, b] * 10), 2, 2, 2)], cfg)
        roots = [mode_encode(net, p)[2][0, 0] for p in (a, b)]
        assert all(r.max() >= 0.99 for r in roots)
        assert roots[0].argmax() != roots[1].argmax()

    def test_empty(self):
        cfg = ArchitectureConfig(1, 1, 1, (2, 2))
        with pytest.raises(EmptyBatch):
            train_layerwise([PatchPyramid(np.zeros((0, 1, 1), int), 1, 1, 1)], cfg)

    def test_metadata(self, rng):
        cfg = ArchitectureConfig(2, 1, 1, (2, 2, 2), epochs=2, seed=4)
        net = train_layerwise([PatchPyramid(rng.integers(0, 2, (5, 2, 2)), 2, 1, 1)], cfg)
        assert net.metadata["seed"] == 4 and net.metadata["partitions"] == 1
        assert net.metadata["epochs"] == [2, 2]

    def test_large_cardinalities_smoke(self, rng):
        cfg = ArchitectureConfig(3, 8, 8, (2, 100, 300, 300), epochs=1, learn=LearnConfig(2))
        imgs = [rng.integers(0, 2, (40, 40)) for _ in range(2)]
        net = train_layerwise([extract_patches(im, cfg, 3, seed=j) for j, im in enumerate(imgs)], cfg)
        for i in (1, 2, 3):
            p = net.params(i)
            assert p.cpts.min() >= 0
            np.testing.assert_allclose(p.cpts.sum(axis=-1), 1.0, atol=1e-10)
            np.testing.assert_allclose(p.prior.sum(), 1.0, atol=1e-12)


def _deterministic_net():
    cfg = ArchitectureConfig(2, 1, 2, (2, 2, 3))
    c1 = np.zeros((2, 2, 2))
    c1[0] = [[1, 0], [0, 1]]
    c1[1] = [[0, 1], [0, 1]]
    c2 = np.zeros((4, 3, 2))
    for k in range(4):
        c2[k, :, k % 2] = 1.0
    layers = [LayerParams(c1, np.array([0.5, 0.5]), (1, 2)), LayerParams(c2, np.array([0.0, 1.0, 0.0]), (2, 2))]
    return QuadtreeNetwork(cfg, layers)


class TestSampling:
    def test_deterministic_network(self):
        img = sample_image(_deterministic_net(), seed=1)
        np.testing.assert_array_equal(img, [[0, 1, 1, 1], [0, 1, 1, 1]])

    def test_seeded(self, rng):
        net = build_network(ArchitectureConfig(2, 2, 2, (2, 3, 3), jitter=0.5))
        assert np.array_equal(sample_images(net, 5, seed=3), sample_images(net, 5, seed=3))
        assert np.array_equal(sample_image(net, 3), sample_images(net, 1, seed=3)[0])

    def test_single_block_uses_drawn_row(self):
        cfg = ArchitectureConfig(1, 1, 3, (2, 2))
        cpts = np.array([[[1.0, 0.0], [0.0, 1.0]]] * 3)
        net = QuadtreeNetwork(cfg, [LayerParams(cpts, np.array([0.3, 0.7]), (1, 3))])
        imgs, lat = sample_images(net, 200, seed=0, return_latents=True)
        # each pixel copies the cluster index drawn for its block
        np.testing.assert_array_equal(imgs[:, 0, :], np.repeat(lat[1][:, 0, 0:1], 3, axis=1))

    def test_marginals_within_binomial_bounds(self, rng):
        net = build_network(ArchitectureConfig(2, 1, 2, (2, 3, 2), jitter=0.9, seed=2))
        net.params(2).prior[:] = [0.2, 0.8]
        n = 20000
        freq = (sample_images(net, n, seed=5) == 1).mean(axis=0)
        p = analytic_marginals(net)[0][..., 1]
        sigma = np.sqrt(p * (1 - p) / n)
        assert np.all(np.abs(freq - p) <= 3 * sigma + 1e-12)


def test_tile_family_completion():
    """Patterns built from a small family of 4x4 tiles are recalled from half their pixels."""
    rng = np.random.default_rng(0)
    tiles = rng.integers(0, 2, (10, 4, 4))

    def pattern():
        t = tiles[rng.integers(0, 10, 4)]
        return np.block([[t[0], t[1]], [t[2], t[3]]])

    train = np.stack([pattern() for _ in range(8)])
    held_out = np.stack([pattern() for _ in range(8)])
    cfg = ArchitectureConfig(2, 4, 4, (2, 16, 16), epochs=10, learn=LearnConfig(10), seed=0, smoothing=0.01)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        net = train_layerwise([PatchPyramid(np.concatenate([train] * 25), 2, 4, 4)], cfg)

    def recovery(patterns, seed):
        r = np.random.default_rng(seed)
        hit = total = 0
        for p in patterns:
            mask = np.zeros(64, bool)
            mask[r.permutation(64)[:32]] = True
            mask = mask.reshape(8, 8)
            res = mode_complete(net, p, mask)
            hit += (res.decisions[~mask] == p[~mask]).sum()
            total += (~mask).sum()
        return hit / total

    assert recovery(train, 1) >= 0.95
    assert recovery(held_out, 2) > 0.5
