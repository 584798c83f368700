"""Image corpora, checkpoints, rendering and run configuration files."""

from __future__ import annotations

import json
import logging
import os
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from fgrn.errors import CorruptFile, DecodeError, EmptyCorpus, InvalidConfig, VersionMismatch
from fgrn.learning import LearnConfig
from fgrn.quadtree import QUADRANT_ORDER, ArchitectureConfig, LayerParams, QuadtreeNetwork

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".pgm", ".png")
MAGIC = "FGRN-CHECKPOINT"
FORMAT_VERSION = 1
_SEPARATOR = b"\n--\n"


# -- images ---------------------------------------------------------------------


@dataclass(eq=False)
class BinaryImageCorpus:
    images: list[np.ndarray]
    names: list[str]
    threshold: float

    def __len__(self):
        return len(self.images)


def _read_gray(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode == "1":
                im = im.convert("L")
            if im.mode != "L":
                raise DecodeError(f"{path}: expected 8-bit grayscale, got mode {im.mode}")
            return np.asarray(im, dtype=np.uint8).copy()
    except (UnidentifiedImageError, OSError, SyntaxError) as e:
        raise DecodeError(f"{path}: {e}") from e


def image_paths(directory: str | os.PathLike) -> list[Path]:
    """Graymap and PNG files of ``directory`` in sorted order."""
    d = Path(directory)
    if not d.is_dir():
        raise EmptyCorpus(f"{d} is not a directory")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def load_images(paths: Iterable[str | os.PathLike], threshold: float = 0.5) -> BinaryImageCorpus:
    """Read grayscale images and binarize: a pixel is 1 where ``value >= threshold * 255``."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    images, names = [], []
    for p in map(Path, paths):
        gray = _read_gray(p)
        images.append((gray >= threshold * 255).astype(np.int64))
        names.append(p.name)
    if not images:
        raise EmptyCorpus("no images to load")
    return BinaryImageCorpus(images, names, threshold)


def load_mask(path: str | os.PathLike) -> np.ndarray:
    """Boolean known-pixel mask; zero pixels mark erased positions."""
    return _read_gray(Path(path)) != 0


def probability_to_gray(p1: np.ndarray) -> np.ndarray:
    """``round(255 * p)`` with halves rounded up, as uint8."""
    v = np.floor(255.0 * np.asarray(p1, dtype=np.float64) + 0.5)
    return np.clip(v, 0, 255).astype(np.uint8)


def render_distribution_grid(messages, path: Optional[str | os.PathLike] = None) -> np.ndarray:
    """Gray-level image of P(symbol 1) for an (H, W, 2) array or grid of binary messages.

    Written to ``path`` (format from its suffix) when given; the pixel array
    is returned either way.
    """
    if isinstance(messages, np.ndarray):
        arr = messages
    else:
        arr = np.array([[np.asarray(getattr(m, "values", m)) for m in row] for row in messages])
    if arr.ndim != 3 or arr.shape[-1] != 2:
        raise ValueError(f"need an (H, W, 2) grid of binary distributions, got {arr.shape}")
    img = probability_to_gray(arr[..., 1] / arr.sum(axis=-1))
    if path is not None:
        save_gray(img, path)
    return img


def render_masked_input(image: np.ndarray, mask: np.ndarray, path: Optional[str | os.PathLike] = None) -> np.ndarray:
    """Binary input with erased pixels (``mask`` false) shown at mid-gray."""
    img = np.where(np.asarray(mask, bool), np.asarray(image) * 255, 128).astype(np.uint8)
    if path is not None:
        save_gray(img, path)
    return img


def save_gray(img: np.ndarray, path: str | os.PathLike):
    Image.fromarray(np.ascontiguousarray(img, dtype=np.uint8)).save(path)


def read_soft(path: str | os.PathLike, shape: tuple[int, int], d: int) -> np.ndarray:
    """Per-pixel distributions from text lines ``row col : p0 p1 ...``.

    Blank lines and lines starting with ``#`` are ignored; every pixel must
    appear exactly once.
    """
    out = np.full(shape + (d,), np.nan)
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            head, tail = line.split(":")
            r, c = (int(x) for x in head.split())
            vals = [float(x) for x in tail.split()]
        except ValueError as e:
            raise DecodeError(f"{path}:{n}: malformed line {line!r}") from e
        if len(vals) != d or not (0 <= r < shape[0] and 0 <= c < shape[1]):
            raise DecodeError(f"{path}:{n}: expected {d} values at a pixel inside {shape}")
        if not np.isnan(out[r, c, 0]):
            raise DecodeError(f"{path}:{n}: pixel ({r}, {c}) given twice")
        out[r, c] = vals
    if np.isnan(out).any():
        missing = np.argwhere(np.isnan(out[..., 0]))[0]
        raise DecodeError(f"{path}: no distribution for pixel ({missing[0]}, {missing[1]})")
    return out


def format_row(key: Sequence[int], p: np.ndarray) -> str:
    return " ".join(str(int(k)) for k in key) + " : " + " ".join(f"{x:.12g}" for x in p)


def format_encoding(posteriors: dict[int, np.ndarray]) -> str:
    """One line per latent: ``layer row col : p1 p2 ...``, layers bottom-up."""
    lines = []
    for i in sorted(posteriors):
        post = posteriors[i]
        for r in range(post.shape[0]):
            for c in range(post.shape[1]):
                lines.append(format_row((i, r, c), post[r, c]))
    return "\n".join(lines) + "\n"


# -- run configuration ----------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    """An architecture plus the corpus-handling settings of a training run."""

    architecture: ArchitectureConfig
    patches_per_image: int = 100
    threshold: float = 0.5


_INT_KEYS = ("L", "N", "M", "epochs", "n_iterations", "seed", "patches_per_image")
_FLOAT_KEYS = ("threshold", "jitter", "smoothing", "den_floor", "ftmp_floor")


def parse_config(text: str) -> RunConfig:
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    raw: dict[str, str] = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfig(f"line {n}: expected key=value, got {line!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        if k in raw:
            raise InvalidConfig(f"line {n}: duplicate key {k!r}")
        raw[k] = v
    vals: dict = {}
    try:
        for k in _INT_KEYS:
            if k in raw:
                vals[k] = int(raw.pop(k))
        for k in _FLOAT_KEYS:
            if k in raw:
                vals[k] = float(raw.pop(k))
        for k in ("L", "N", "M"):
            if k not in vals:
                raise InvalidConfig(f"missing required key {k!r}")
        cards = []
        for i in range(vals["L"] + 1):
            key = f"dS{i}"
            if key not in raw:
                raise InvalidConfig(f"missing required key {key!r}")
            cards.append(int(raw.pop(key)))
    except ValueError as e:
        if isinstance(e, InvalidConfig):
            raise
        raise InvalidConfig(str(e)) from e
    if raw:
        raise InvalidConfig(f"unknown keys: {', '.join(sorted(raw))}")
    learn = LearnConfig(
        n_iterations=vals.get("n_iterations", 10),
        den_floor=vals.get("den_floor", 1e-12),
        ftmp_floor=vals.get("ftmp_floor", 1e-12),
    )
    arch = ArchitectureConfig(
        vals["L"], vals["N"], vals["M"], tuple(cards),
        epochs=vals.get("epochs", 10),
        learn=learn,
        seed=vals.get("seed", 0),
        jitter=vals.get("jitter", 0.01),
        smoothing=vals.get("smoothing", 0.0),
    )
    run = RunConfig(arch, vals.get("patches_per_image", 100), vals.get("threshold", 0.5))
    if run.patches_per_image < 1:
        raise InvalidConfig("patches_per_image must be positive")
    if not 0.0 <= run.threshold <= 1.0:
        raise InvalidConfig("threshold must lie in [0, 1]")
    return run


def load_config(path: str | os.PathLike) -> RunConfig:
    return parse_config(Path(path).read_text())


# -- checkpoints ----------------------------------------------------------------


def _config_to_dict(cfg: ArchitectureConfig) -> dict:
    return {
        "L": cfg.L, "N": cfg.N, "M": cfg.M,
        "cardinalities": list(cfg.cardinalities),
        "epochs": list(cfg.epochs),
        "learn": [
            {"n_iterations": c.n_iterations, "den_floor": c.den_floor, "ftmp_floor": c.ftmp_floor}
            for c in cfg.learn
        ],
        "seed": cfg.seed,
        "jitter": cfg.jitter,
        "smoothing": cfg.smoothing,
    }


def _config_from_dict(d: dict) -> ArchitectureConfig:
    return ArchitectureConfig(
        d["L"], d["N"], d["M"], tuple(d["cardinalities"]),
        epochs=tuple(d["epochs"]),
        learn=tuple(LearnConfig(**c) for c in d["learn"]),
        seed=d["seed"],
        jitter=d["jitter"],
        smoothing=d.get("smoothing", 0.0),
    )


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.generic):
        return x.item()
    return x


def checkpoint_bytes(net: QuadtreeNetwork) -> bytes:
    arrays = []
    for i in range(1, net.L + 1):
        p = net.params(i)
        arrays += [p.cpts, p.prior]
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    header = {
        "version": FORMAT_VERSION,
        "quadrant_order": list(QUADRANT_ORDER),
        "config": _config_to_dict(net.config),
        "metadata": _jsonable(net.metadata),
        "arrays": [list(a.shape) for a in arrays],
        "crc32": zlib.crc32(body),
    }
    text = MAGIC + "\n" + json.dumps(header, indent=1, sort_keys=True)
    return text.encode("utf-8") + _SEPARATOR + struct.pack("<Q", len(body)) + body


def save_checkpoint(net: QuadtreeNetwork, path: str | os.PathLike):
    """Readable JSON header, then a length-prefixed little-endian float64 body."""
    Path(path).write_bytes(checkpoint_bytes(net))


def checkpoint_from_bytes(data: bytes) -> QuadtreeNetwork:
    if not data.startswith(MAGIC.encode()):
        raise CorruptFile("not a checkpoint (bad magic)")
    head, sep, rest = data.partition(_SEPARATOR)
    if not sep:
        raise CorruptFile("checkpoint header is not terminated")
    try:
        header = json.loads(head[len(MAGIC):].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptFile(f"unreadable checkpoint header: {e}") from e
    if header.get("version") != FORMAT_VERSION:
        raise VersionMismatch(f"checkpoint format {header.get('version')}, this build reads {FORMAT_VERSION}")
    if tuple(header.get("quadrant_order", ())) != QUADRANT_ORDER:
        raise VersionMismatch(f"quadrant order {header.get('quadrant_order')} differs from {list(QUADRANT_ORDER)}")
    if len(rest) < 8:
        raise CorruptFile("checkpoint body is truncated")
    (n,) = struct.unpack("<Q", rest[:8])
    body = rest[8:]
    if len(body) != n:
        raise CorruptFile(f"body holds {len(body)} bytes, header promises {n}")
    if zlib.crc32(body) != header["crc32"]:
        raise CorruptFile("checksum mismatch")
    flat = np.frombuffer(body, dtype="<f8").astype(np.float64)
    shapes = [tuple(s) for s in header["arrays"]]
    if sum(int(np.prod(s)) for s in shapes) != flat.size:
        raise CorruptFile("array shapes do not match the body size")
    arrays, pos = [], 0
    for s in shapes:
        k = int(np.prod(s))
        arrays.append(flat[pos:pos + k].reshape(s).copy())
        pos += k
    try:
        cfg = _config_from_dict(header["config"])
        layers = [
            LayerParams(arrays[2 * j], arrays[2 * j + 1], (cfg.N, cfg.M) if j == 0 else (2, 2))
            for j in range(cfg.L)
        ]
        return QuadtreeNetwork(cfg, layers, header["metadata"])
    except (KeyError, TypeError, IndexError, ValueError) as e:
        raise CorruptFile(f"inconsistent checkpoint: {e}") from e


def load_checkpoint(path: str | os.PathLike) -> QuadtreeNetwork:
    return checkpoint_from_bytes(Path(path).read_bytes())
