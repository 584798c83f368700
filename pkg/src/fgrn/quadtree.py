"""Quadtree of parameter-tied latent variable models.

Layer 0 is the pixel grid of shape ``(N * 2**(L-1), M * 2**(L-1))``.  Each
Layer-1 variable parents an N x M pixel patch; each variable at layers
2..L parents a 2 x 2 block of variables one layer down.  The single Layer-L
variable is the root.  Every LVM instance within a layer shares one set of
parameters: one CPT per child role (pixel offset at Layer 1, quadrant above)
plus one prior.

Quadrants are enumerated row-major: NW, NE, SW, SE.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

from fgrn import kernels
from fgrn.errors import ContradictoryEvidence, EmptyBatch, ImageTooSmall, InvalidConfig
from fgrn.learning import LearnConfig, SkippedExamplesWarning, jittered_uniform
from fgrn.lvm import LvmBlock, lvm_train

log = logging.getLogger(__name__)

QUADRANT_ORDER = ("NW", "NE", "SW", "SE")


@dataclass(frozen=True)
class ArchitectureConfig:
    """Shape and training settings of a quadtree network.

    ``cardinalities`` lists ``d_S0 .. d_SL`` (pixel alphabet first).
    ``epochs`` and ``learn`` may be given once for all layers or per layer.
    """

    L: int
    N: int
    M: int
    cardinalities: tuple[int, ...]
    epochs: tuple[int, ...] | int = 10
    learn: tuple[LearnConfig, ...] | LearnConfig = LearnConfig()
    seed: int = 0
    jitter: float = 0.01
    smoothing: float = 0.0

    def __post_init__(self):
        if self.L < 1 or self.N < 1 or self.M < 1:
            raise InvalidConfig(f"need L, N, M >= 1, got L={self.L}, N={self.N}, M={self.M}")
        cards = tuple(int(d) for d in self.cardinalities)
        if len(cards) != self.L + 1:
            raise InvalidConfig(f"expected {self.L + 1} cardinalities (d_S0..d_SL), got {len(cards)}")
        if any(d < 1 for d in cards):
            raise InvalidConfig("all cardinalities must be >= 1")
        object.__setattr__(self, "cardinalities", cards)
        epochs = (self.epochs,) * self.L if isinstance(self.epochs, int) else tuple(self.epochs)
        if len(epochs) != self.L or any(e < 1 for e in epochs):
            raise InvalidConfig(f"need {self.L} positive epoch counts, got {epochs}")
        object.__setattr__(self, "epochs", epochs)
        learn = (self.learn,) * self.L if isinstance(self.learn, LearnConfig) else tuple(self.learn)
        if len(learn) != self.L:
            raise InvalidConfig(f"need {self.L} learning configs, got {len(learn)}")
        object.__setattr__(self, "learn", learn)
        if self.jitter < 0:
            raise InvalidConfig("jitter must be nonnegative")
        if not 0.0 <= self.smoothing < 1.0:
            raise InvalidConfig("smoothing must lie in [0, 1)")

    @property
    def image_shape(self) -> tuple[int, int]:
        s = 2 ** (self.L - 1)
        return self.N * s, self.M * s

    def layer_seed(self, i: int) -> int:
        return self.seed + i - 1


@dataclass(eq=False)
class LayerParams:
    """Tied parameters of layer ``i``: ``cpts`` is (K, d_Si, d_S(i-1)), ``prior`` is (d_Si,)."""

    cpts: np.ndarray
    prior: np.ndarray
    patch: tuple[int, int]


@dataclass(eq=False)
class QuadtreeNetwork:
    config: ArchitectureConfig
    layers: list[LayerParams]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.layers) != self.config.L:
            raise InvalidConfig(f"{len(self.layers)} parameter sets for L={self.config.L}")
        for i in range(1, self.L + 1):
            p = self.params(i)
            k = p.patch[0] * p.patch[1]
            want = (k, self.card(i), self.card(i - 1))
            if p.cpts.shape != want:
                raise InvalidConfig(f"layer {i}: CPT stack shape {p.cpts.shape}, expected {want}")
            if p.prior.shape != (self.card(i),):
                raise InvalidConfig(f"layer {i}: prior shape {p.prior.shape}")

    @property
    def L(self) -> int:
        return self.config.L

    def card(self, i: int) -> int:
        return self.config.cardinalities[i]

    def params(self, i: int) -> LayerParams:
        if not 1 <= i <= self.L:
            raise IndexError(f"layer {i} has no parameters (valid: 1..{self.L})")
        return self.layers[i - 1]

    def grid_shape(self, i: int) -> tuple[int, int]:
        if i == 0:
            return self.config.image_shape
        s = 2 ** (self.L - i)
        return s, s

    def patch_shape(self, i: int) -> tuple[int, int]:
        return (self.config.N, self.config.M) if i == 1 else (2, 2)

    def cone_shape(self, i: int) -> tuple[int, int]:
        """Pixels subtended by one Layer-i variable."""
        if i == 0:
            return 1, 1
        s = 2 ** (i - 1)
        return self.config.N * s, self.config.M * s

    def block_count(self, i: int) -> int:
        r, c = self.grid_shape(i)
        return r * c

    def children(self, i: int, r: int, c: int) -> list[tuple[int, int, int]]:
        ph, pw = self.patch_shape(i)
        return [(i - 1, r * ph + a, c * pw + b) for a in range(ph) for b in range(pw)]

    def parent(self, i: int, r: int, c: int) -> Optional[tuple[int, int, int]]:
        if i == self.L:
            return None
        ph, pw = self.patch_shape(i + 1)
        return i + 1, r // ph, c // pw

    def variables(self) -> Iterator[tuple[int, int, int]]:
        for i in range(self.L, -1, -1):
            rows, cols = self.grid_shape(i)
            for r in range(rows):
                for c in range(cols):
                    yield i, r, c

    @property
    def n_variables(self) -> int:
        return sum(self.block_count(i) for i in range(self.L + 1))

    def block(self, i: int, r: int = 0, c: int = 0) -> LvmBlock:
        """The LVM instance rooted at ``S_i[r, c]``; shares storage with the layer."""
        rows, cols = self.grid_shape(i)
        if not (0 <= r < rows and 0 <= c < cols):
            raise IndexError(f"no block at layer {i}, position ({r}, {c})")
        p = self.params(i)
        return LvmBlock(p.prior, [p.cpts[k] for k in range(p.cpts.shape[0])], p.patch)

    def copy(self) -> "QuadtreeNetwork":
        layers = [LayerParams(p.cpts.copy(), p.prior.copy(), p.patch) for p in self.layers]
        return QuadtreeNetwork(self.config, layers, dict(self.metadata))


def _layer_init(config: ArchitectureConfig, i: int, patch: tuple[int, int]) -> LayerParams:
    rng = np.random.default_rng(config.layer_seed(i))
    d_p, d_c = config.cardinalities[i], config.cardinalities[i - 1]
    k = patch[0] * patch[1]
    cpts = np.stack([jittered_uniform(d_p, d_c, rng, config.jitter) for _ in range(k)])
    return LayerParams(cpts, np.full(d_p, 1.0 / d_p), patch)


def build_network(config: ArchitectureConfig) -> QuadtreeNetwork:
    """Untrained network: uniform priors, jittered-uniform CPT rows."""
    layers = [
        _layer_init(config, i, (config.N, config.M) if i == 1 else (2, 2))
        for i in range(1, config.L + 1)
    ]
    return QuadtreeNetwork(config, layers)


# -- patches --------------------------------------------------------------------


@dataclass(eq=False)
class PatchPyramid:
    """L-Level patches cut from one image, viewable at every coarser level.

    ``patches`` has shape (P, H, W) with (H, W) the L-Level patch size.
    """

    patches: np.ndarray
    L: int
    N: int
    M: int
    anchors: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self):
        h, w = self.level_shape(self.L)
        if self.patches.ndim != 3 or self.patches.shape[1:] != (h, w):
            raise ValueError(f"patches must have shape (P, {h}, {w}), got {self.patches.shape}")

    def __len__(self):
        return self.patches.shape[0]

    def level_shape(self, k: int) -> tuple[int, int]:
        s = 2 ** (k - 1)
        return self.N * s, self.M * s

    def level(self, k: int) -> np.ndarray:
        """k-Level sub-patches, shape (P, g, g, h_k, w_k) laid out spatially (g = 2**(L-k))."""
        if not 1 <= k <= self.L:
            raise ValueError(f"level {k} outside 1..{self.L}")
        h, w = self.level_shape(k)
        g = 2 ** (self.L - k)
        p = self.patches.reshape(len(self), g, h, g, w)
        return p.transpose(0, 1, 3, 2, 4)

    def flat_level(self, k: int) -> np.ndarray:
        """k-Level sub-patches flattened to (P * g * g, h_k, w_k), row-major per patch."""
        lv = self.level(k)
        return lv.reshape(-1, *lv.shape[-2:])


def subdivide(patch: np.ndarray) -> list[np.ndarray]:
    """Split a patch into its NW, NE, SW, SE quadrants."""
    h, w = patch.shape[-2:]
    if h % 2 or w % 2:
        raise ValueError(f"patch {patch.shape} is not evenly divisible")
    hh, hw = h // 2, w // 2
    return [patch[..., :hh, :hw], patch[..., :hh, hw:], patch[..., hh:, :hw], patch[..., hh:, hw:]]


def assemble(quadrants: Sequence[np.ndarray]) -> np.ndarray:
    nw, ne, sw, se = quadrants
    return np.concatenate([np.concatenate([nw, ne], axis=-1), np.concatenate([sw, se], axis=-1)], axis=-2)


def extract_patches(image: np.ndarray, config: ArchitectureConfig, count: int, seed: int = 0) -> PatchPyramid:
    """Sample ``count`` L-Level patches with uniformly random top-left anchors."""
    image = np.asarray(image)
    h, w = config.image_shape
    if image.ndim != 2 or image.shape[0] < h or image.shape[1] < w:
        raise ImageTooSmall(f"image {image.shape} smaller than an L-Level patch ({h}, {w})")
    rng = np.random.default_rng(seed)
    rows = rng.integers(0, image.shape[0] - h + 1, size=count)
    cols = rng.integers(0, image.shape[1] - w + 1, size=count)
    patches = np.stack([image[r:r + h, c:c + w] for r, c in zip(rows, cols)]) if count else np.zeros((0, h, w), int)
    return PatchPyramid(patches.astype(np.int64), config.L, config.N, config.M, np.stack([rows, cols], axis=1))


# -- training -------------------------------------------------------------------


def one_hot(x: np.ndarray, d: int) -> np.ndarray:
    x = np.asarray(x)
    if x.size and (x.min() < 0 or x.max() >= d):
        raise ValueError(f"symbol outside alphabet of size {d}")
    return np.eye(d)[x]


def upward_sweep(net: QuadtreeNetwork, b0: np.ndarray, top: int) -> list[np.ndarray]:
    """Backward messages at layers 0..top from pixel evidence ``b0`` (..., H, W, d0).

    A single pure upward pass; used to collect training data for layer
    ``top + 1`` from frozen lower layers.
    """
    out = [b0]
    for i in range(1, top + 1):
        p = net.params(i)
        ups, zero = kernels.siso_backward(p.cpts, kernels.group(out[-1], *p.patch))
        if np.any(zero):
            r, c, k = (int(v) for v in np.argwhere(zero)[0][-3:])
            ph, pw = p.patch
            raise ContradictoryEvidence(i - 1, r * ph + k // pw, c * pw + k % pw, "impossible under every parent state")
        b, zero = kernels.branch_product(ups)
        if np.any(zero):
            idx = np.argwhere(zero)[0]
            raise ContradictoryEvidence(i, int(idx[-2]), int(idx[-1]))
        out.append(b)
    return out


def _collect(net: QuadtreeNetwork, b0: np.ndarray, top: int) -> tuple[np.ndarray, np.ndarray]:
    """Layer-``top`` backward messages for a stack of patches (P, H, W, d0).

    Unlike :func:`upward_sweep` this does not raise: it also returns a (P,)
    mask of the patches that the frozen layers still find possible.
    """
    b = b0
    ok = np.ones(b0.shape[0], dtype=bool)
    for i in range(1, top + 1):
        p = net.params(i)
        ups, zero = kernels.siso_backward(p.cpts, kernels.group(b, *p.patch))
        ok &= ~zero.reshape(zero.shape[0], -1).any(axis=1)
        b, zero = kernels.branch_product(ups)
        ok &= ~zero.reshape(zero.shape[0], -1).any(axis=1)
    return b, ok


def _set_layer(net: QuadtreeNetwork, i: int, block: LvmBlock):
    p = net.params(i)
    p.cpts[...] = np.stack(block.cpts)
    p.prior[...] = block.prior


def train_layerwise(pyramids: Sequence[PatchPyramid], config: ArchitectureConfig) -> QuadtreeNetwork:
    """Greedy bottom-up training; lower layers are frozen once learned."""
    pyramids = [p for p in pyramids if len(p)]
    if not pyramids:
        raise EmptyBatch("no training patches")
    net = build_network(config)
    d0 = config.cardinalities[0]
    patches = np.concatenate([p.patches for p in pyramids])
    pyr = PatchPyramid(patches, config.L, config.N, config.M)

    first = one_hot(pyr.flat_level(1), d0)
    log.info("layer 1: %d patches", first.shape[0])
    block = lvm_train(
        first, config.cardinalities[1], config.learn[0], config.epochs[0],
        seed=config.layer_seed(1), jitter=config.jitter, smoothing=config.smoothing,
    )
    _set_layer(net, 1, block)

    if config.L > 1:
        b0 = one_hot(patches, d0)
        for i in range(2, config.L + 1):
            below, ok = _collect(net, b0, i - 1)  # (P, g, g, d)
            if not ok.all():
                warnings.warn(
                    f"layer {i}: {int((~ok).sum())} of {ok.size} patches impossible under the frozen layers below",
                    SkippedExamplesWarning,
                    stacklevel=2,
                )
                if not ok.any():
                    raise ContradictoryEvidence(i - 1, 0, 0, "every training patch is impossible")
                below = below[ok]
            grids = kernels.group(below, 2, 2)  # (P, g/2, g/2, 4, d)
            ex = grids.reshape(-1, 2, 2, grids.shape[-1])
            log.info("layer %d: %d patches", i, ex.shape[0])
            block = lvm_train(
                ex, config.cardinalities[i], config.learn[i - 1], config.epochs[i - 1],
                seed=config.layer_seed(i), jitter=config.jitter, smoothing=config.smoothing,
            )
            _set_layer(net, i, block)

    net.metadata.update(
        seed=config.seed,
        jitter=config.jitter,
        smoothing=config.smoothing,
        epochs=list(config.epochs),
        n_iterations=[c.n_iterations for c in config.learn],
        den_floor=[c.den_floor for c in config.learn],
        ftmp_floor=[c.ftmp_floor for c in config.learn],
        partitions=1,
        n_patches=int(patches.shape[0]),
    )
    return net


# -- sampling -------------------------------------------------------------------


def _draw(cum: np.ndarray, u: np.ndarray) -> np.ndarray:
    # cum: (..., d) cumulative rows; u: (...) uniforms in [0, 1)
    s = (u[..., None] >= cum).sum(axis=-1)
    return np.minimum(s, cum.shape[-1] - 1)


def sample_images(net: QuadtreeNetwork, n: int, seed: int = 0, return_latents: bool = False):
    """Ancestral samples root to leaves; returns (n, H, W) pixel symbols."""
    rng = np.random.default_rng(seed)
    root = net.params(net.L)
    states = _draw(np.cumsum(root.prior)[None, None, None, :], rng.random((n, 1, 1)))
    latents = [states]
    for i in range(net.L, 0, -1):
        p = net.params(i)
        ph, pw = p.patch
        rows, cols = states.shape[1:]
        child = np.empty((n, rows * ph, cols * pw), dtype=np.int64)
        cum = np.cumsum(p.cpts, axis=-1)
        for a in range(ph):
            for b in range(pw):
                k = a * pw + b
                child[:, a::ph, b::pw] = _draw(cum[k][states], rng.random(states.shape))
        states = child
        latents.append(states)
    if return_latents:
        return states, latents[::-1]
    return states


def sample_image(net: QuadtreeNetwork, seed: int = 0) -> np.ndarray:
    return sample_images(net, 1, seed)[0]

