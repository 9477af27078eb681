"""Image pipeline: color conversion, bicubic resampling, degradation, edge
maps, augmentation, patch extraction, and image / patch-set file formats.

Images are float arrays in [0, 1] shaped (h, w) or (h, w, 3). Functions take
either a bare array or an :class:`ImageBuffer` and return the same kind.
"""
from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .kernels import resample_rows

log = logging.getLogger(__name__)

COLORSPACES = ("rgb", "ycbcr", "luminance")

# Plane order of every edge map produced here.
EDGE_DIRECTIONS = ("up-down", "down-up", "left-right", "right-left")
EDGE_CHANNELS = len(EDGE_DIRECTIONS)


@dataclass
class ImageBuffer:
    data: np.ndarray
    colorspace: str = "luminance"

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.colorspace not in COLORSPACES:
            raise ValueError(f"unknown colorspace {self.colorspace!r}")
        nch = 1 if self.data.ndim == 2 else self.data.shape[2] if self.data.ndim == 3 else -1
        if nch not in (1, 3) or (nch == 1) != (self.colorspace == "luminance"):
            raise ValueError(f"{self.colorspace} image cannot have shape {self.data.shape}")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else self.data.shape[2]


def _unwrap(img):
    if isinstance(img, ImageBuffer):
        return img.data, img.colorspace
    return np.asarray(img, dtype=np.float64), None


def _rewrap(data, colorspace):
    return data if colorspace is None else ImageBuffer(data, colorspace)


# ---------------------------------------------------------------------------
# Color
# ---------------------------------------------------------------------------

# BT.601 studio swing for RGB in [0, 1]; offsets are on the [0, 1] scale.
_YCBCR_MATRIX = np.array(
    [
        [65.481, 128.553, 24.966],
        [-37.797, -74.203, 112.0],
        [112.0, -93.786, -18.214],
    ]
) / 255.0
_YCBCR_OFFSET = np.array([16.0, 128.0, 128.0]) / 255.0
_YCBCR_INVERSE = np.linalg.inv(_YCBCR_MATRIX)


def _require_color(data, op):
    if data.ndim != 3 or data.shape[2] != 3:
        raise ValueError(f"{op} needs a 3-channel image, got shape {data.shape}")


def rgb_to_ycbcr(img):
    data, cs = _unwrap(img)
    _require_color(data, "rgb_to_ycbcr")
    out = data @ _YCBCR_MATRIX.T + _YCBCR_OFFSET
    return _rewrap(out, None if cs is None else "ycbcr")


def ycbcr_to_rgb(img):
    data, cs = _unwrap(img)
    _require_color(data, "ycbcr_to_rgb")
    out = np.clip((data - _YCBCR_OFFSET) @ _YCBCR_INVERSE.T, 0.0, 1.0)
    return _rewrap(out, None if cs is None else "rgb")


def luminance(img, quantize: bool = False):
    """Y plane of an RGB image (or the image itself if already single channel).

    ``quantize`` rounds Y to the 8-bit grid, as evaluation scripts that convert
    uint8 RGB to uint8 YCbCr do.
    """
    data, cs = _unwrap(img)
    if data.ndim == 2:
        y = data
    elif cs == "ycbcr":
        y = data[..., 0]
    else:
        y = rgb_to_ycbcr(data)[..., 0]
    if quantize:
        y = np.round(y * 255.0) / 255.0
    return _rewrap(y, None if cs is None else "luminance")


# ---------------------------------------------------------------------------
# Bicubic resampling
# ---------------------------------------------------------------------------


def cubic(x):
    """Keys cubic convolution kernel with a = -0.5."""
    ax = np.abs(np.asarray(x, dtype=np.float64))
    ax2 = ax * ax
    ax3 = ax2 * ax
    return (1.5 * ax3 - 2.5 * ax2 + 1.0) * (ax <= 1) + (-0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0) * (
        (ax > 1) & (ax <= 2)
    )


def _as_fraction(scale) -> Fraction:
    f = Fraction(scale).limit_denominator(10_000) if not isinstance(scale, Fraction) else scale
    if f <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    return f


def resize_weights(in_len: int, out_len: int, scale, antialias: bool = True):
    """Sparse 1-D bicubic resampling matrix as (weights, 0-based indices).

    Output sample x (1-based) sits at input coordinate x/scale + (1 - 1/scale)/2.
    When shrinking with ``antialias`` the kernel is stretched by 1/scale.
    Out-of-range taps are mirrored symmetrically back into the signal.
    """
    s = float(scale)
    width = 4.0
    if s < 1 and antialias:
        width /= s
        kern = lambda t: s * cubic(s * t)  # noqa: E731
    else:
        kern = cubic
    x = np.arange(1, out_len + 1, dtype=np.float64)
    u = x / s + 0.5 * (1.0 - 1.0 / s)
    left = np.floor(u - width / 2.0)
    taps = int(math.ceil(width)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    w = kern(u[:, None] - idx)
    w = w / w.sum(axis=1, keepdims=True)
    mirror = np.concatenate([np.arange(in_len), np.arange(in_len - 1, -1, -1)])
    idx = mirror[np.mod(idx.astype(np.int64) - 1, 2 * in_len)]
    keep = np.any(w != 0, axis=0)
    return np.ascontiguousarray(w[:, keep]), np.ascontiguousarray(idx[:, keep])


def bicubic_resize(img, scale=None, out_shape: tuple[int, int] | None = None, antialias: bool = True):
    """Resize by ``scale`` (or to ``out_shape``) with the Keys bicubic kernel.

    The output extent is ceil(scale * input extent); the result is clamped to
    [0, 1].
    """
    data, cs = _unwrap(img)
    h, w = data.shape[:2]
    if out_shape is None:
        if scale is None:
            raise ValueError("give scale or out_shape")
        f = _as_fraction(scale)
        out_shape = (math.ceil(h * f), math.ceil(w * f))
        scales = (f, f)
    else:
        scales = (Fraction(out_shape[0], h), Fraction(out_shape[1], w)) if scale is None else (
            _as_fraction(scale),
        ) * 2
    oh, ow = out_shape
    if oh < 1 or ow < 1:
        raise ValueError(f"degenerate output size {out_shape}")
    if (oh, ow) == (h, w) and scales == (1, 1):
        return _rewrap(data.copy(), cs)
    extra = data.shape[2:]
    cur = data.reshape(h, -1)
    wr, ir = resize_weights(h, oh, scales[0], antialias)
    cur = resample_rows(cur, wr, ir)  # (oh, w*c)
    cur = cur.reshape(oh, w, -1).transpose(1, 0, 2).reshape(w, -1)
    wc, ic = resize_weights(w, ow, scales[1], antialias)
    cur = resample_rows(cur, wc, ic)  # (ow, oh*c)
    out = cur.reshape(ow, oh, -1).transpose(1, 0, 2).reshape((oh, ow) + extra)
    np.clip(out, 0.0, 1.0, out=out)
    return _rewrap(out, cs)


def modcrop(img, scale: int):
    data, cs = _unwrap(img)
    h, w = data.shape[:2]
    return _rewrap(data[: h - h % scale, : w - w % scale].copy(), cs)


def degrade(hr, scale: int):
    """Bicubic degradation: returns (lr, lr_up) for the scale-cropped ``hr``.

    No noise is added.
    """
    hr = modcrop(hr, scale)
    data, _ = _unwrap(hr)
    if scale == 1:
        return hr, modcrop(hr, 1)
    lr = bicubic_resize(hr, Fraction(1, scale))
    lr_up = bicubic_resize(lr, scale, out_shape=data.shape[:2])
    return lr, lr_up


# ---------------------------------------------------------------------------
# Edges
# ---------------------------------------------------------------------------


def sobel_xy(a: np.ndarray):
    """Signed Sobel responses (gy, gx) of the last two axes, symmetric boundary.

    gy is positive where intensity increases downward, gx where it increases
    to the right.
    """
    a = np.asarray(a, dtype=np.float64)
    pad = [(0, 0)] * (a.ndim - 2) + [(1, 1), (1, 1)]
    p = np.pad(a, pad, mode="symmetric")
    h, w = a.shape[-2:]

    def sl(dy, dx):
        return p[..., 1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]

    gy = (sl(1, -1) + 2.0 * sl(1, 0) + sl(1, 1)) - (sl(-1, -1) + 2.0 * sl(-1, 0) + sl(-1, 1))
    gx = (sl(-1, 1) + 2.0 * sl(0, 1) + sl(1, 1)) - (sl(-1, -1) + 2.0 * sl(0, -1) + sl(1, -1))
    return gy, gx


def sobel_edges(img) -> np.ndarray:
    """Four rectified directional Sobel planes, shape (..., 4, h, w).

    Plane order follows :data:`EDGE_DIRECTIONS`; plane 0 minus plane 1 is the
    vertical response and plane 2 minus plane 3 the horizontal one.
    """
    data, cs = _unwrap(img)
    if cs is not None and data.ndim != 2:
        raise ValueError(f"sobel_edges needs a single-channel image, got shape {data.shape}")
    gy, gx = sobel_xy(data)
    return np.stack([np.maximum(gy, 0), np.maximum(-gy, 0), np.maximum(gx, 0), np.maximum(-gx, 0)], axis=-3)


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------

_FLIPS = (
    ("identity", lambda a: a),
    ("flip-ud", lambda a: a[::-1]),
    ("flip-lr", lambda a: a[:, ::-1]),
    ("flip-both", lambda a: a[::-1, ::-1]),
)
AUGMENT_NAMES = tuple(f"{name}/rot{deg}" for name, _ in _FLIPS for deg in (0, 90, 180, 270))


def augment(img) -> list:
    """The 16 flip x clockwise-rotation variants, in :data:`AUGMENT_NAMES` order.

    Flips and rotations only span the 8-element dihedral group, so the list
    holds each distinct raster twice.
    """
    data, cs = _unwrap(img)
    out = []
    for _, flip in _FLIPS:
        f = flip(data)
        for r in range(4):
            out.append(_rewrap(np.ascontiguousarray(np.rot90(f, -r)), cs))
    return out


# ---------------------------------------------------------------------------
# Patches
# ---------------------------------------------------------------------------


@dataclass
class PatchSet:
    """Aligned training patches, all float32 NCHW.

    ``provenance`` rows are (image index, augmentation index, top, left).
    """

    lr: np.ndarray
    hr: np.ndarray
    lr_edges: np.ndarray
    hr_edges: np.ndarray
    patch: int
    scale: int
    provenance: np.ndarray = field(default=None)

    def __post_init__(self):
        n = len(self.lr)
        if self.provenance is None:
            self.provenance = np.zeros((n, 4), dtype=np.int32)
        for name, arr, c in (
            ("lr", self.lr, 1),
            ("hr", self.hr, 1),
            ("lr_edges", self.lr_edges, EDGE_CHANNELS),
            ("hr_edges", self.hr_edges, EDGE_CHANNELS),
        ):
            if arr.shape != (n, c, self.patch, self.patch):
                raise ValueError(f"{name} has shape {arr.shape}, expected {(n, c, self.patch, self.patch)}")
        if self.provenance.shape != (n, 4):
            raise ValueError(f"provenance has shape {self.provenance.shape}, expected {(n, 4)}")

    def __len__(self):
        return len(self.lr)

    @classmethod
    def empty(cls, patch: int, scale: int) -> "PatchSet":
        z = lambda c: np.zeros((0, c, patch, patch), dtype=np.float32)  # noqa: E731
        return cls(z(1), z(1), z(EDGE_CHANNELS), z(EDGE_CHANNELS), patch, scale, np.zeros((0, 4), np.int32))

    @classmethod
    def concatenate(cls, sets: Sequence["PatchSet"]) -> "PatchSet":
        first = sets[0]
        if any(s.patch != first.patch or s.scale != first.scale for s in sets):
            raise ValueError("cannot concatenate patch sets with different patch size or scale")
        cat = lambda name: np.concatenate([getattr(s, name) for s in sets])  # noqa: E731
        return cls(
            cat("lr"), cat("hr"), cat("lr_edges"), cat("hr_edges"), first.patch, first.scale, cat("provenance")
        )

    def subset(self, idx) -> "PatchSet":
        return PatchSet(
            self.lr[idx], self.hr[idx], self.lr_edges[idx], self.hr_edges[idx], self.patch, self.scale,
            self.provenance[idx],
        )


def window_origins(length: int, patch: int, stride: int) -> range:
    if length < patch:
        return range(0)
    return range(0, length - patch + 1, stride)


def extract_patches(hr, scale: int, patch: int = 33, stride: int = 14, image_index: int = 0, aug_index: int = 0) -> PatchSet:
    """Degrade a luminance image and cut aligned (lr_up, hr) windows with edge maps."""
    hr_data, _ = _unwrap(hr)
    if hr_data.ndim != 2:
        raise ValueError("extract_patches expects a single-channel luminance image")
    hr_c, _ = _unwrap(modcrop(hr_data, scale))
    if min(hr_c.shape) < patch:
        log.warning("image %d (%s) smaller than patch %d; no patches", image_index, hr_c.shape, patch)
        return PatchSet.empty(patch, scale)
    _, lr_up = degrade(hr_c, scale)
    ys = window_origins(hr_c.shape[0], patch, stride)
    xs = window_origins(hr_c.shape[1], patch, stride)
    win = lambda a: np.lib.stride_tricks.sliding_window_view(a, (patch, patch))[::stride, ::stride]  # noqa: E731
    lr_p = win(lr_up).reshape(-1, patch, patch)
    hr_p = win(hr_c).reshape(-1, patch, patch)
    n = len(lr_p)
    assert n == len(ys) * len(xs)
    prov = np.array([(image_index, aug_index, y, x) for y in ys for x in xs], dtype=np.int32).reshape(n, 4)
    return PatchSet(
        lr_p[:, None].astype(np.float32),
        hr_p[:, None].astype(np.float32),
        sobel_edges(lr_p).astype(np.float32),
        sobel_edges(hr_p).astype(np.float32),
        patch,
        scale,
        prov,
    )


def build_patchset(images: Iterable, scale: int, patch: int = 33, stride: int = 14, augment_data: bool = True) -> PatchSet:
    """Patches from a corpus of images (RGB or luminance), with optional 16-way augmentation."""
    sets = []
    for i, img in enumerate(images):
        y, _ = _unwrap(luminance(img))
        variants = augment(y) if augment_data else [y]
        for a, v in enumerate(variants):
            ps = extract_patches(v, scale, patch, stride, image_index=i, aug_index=a)
            if len(ps):
                sets.append(ps)
    if not sets:
        return PatchSet.empty(patch, scale)
    return PatchSet.concatenate(sets)


# PatchSet file: 16-byte header (8-byte magic, u32 version, u32 descriptor
# size), descriptor (u64 count, u32 patch, u32 scale, u32 edge channels,
# u32 reserved), then little-endian float32 lr, hr, lr_edges, hr_edges in NCHW
# order, then int32 provenance (count x 4).
PATCHSET_MAGIC = b"DGPATCH\x00"
PATCHSET_VERSION = 1
_PS_HEADER = struct.Struct("<8sII")
_PS_DESC = struct.Struct("<QIIII")


def save_patchset(ps: PatchSet, path) -> None:
    with open(path, "wb") as f:
        f.write(_PS_HEADER.pack(PATCHSET_MAGIC, PATCHSET_VERSION, _PS_DESC.size))
        f.write(_PS_DESC.pack(len(ps), ps.patch, ps.scale, EDGE_CHANNELS, 0))
        for arr in (ps.lr, ps.hr, ps.lr_edges, ps.hr_edges):
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(ps.provenance, dtype="<i4").tobytes())


def load_patchset(path, mmap: bool = False) -> PatchSet:
    """Read a PatchSet file; ``mmap`` maps the tensors read-only instead of loading them."""
    with open(path, "rb") as f:
        magic, version, dsize = _PS_HEADER.unpack(f.read(_PS_HEADER.size))
        if magic != PATCHSET_MAGIC:
            raise ValueError(f"{path}: not a patch set file")
        if version != PATCHSET_VERSION or dsize != _PS_DESC.size:
            raise ValueError(f"{path}: unsupported patch set version {version}")
        count, patch, scale, edge_c, _ = _PS_DESC.unpack(f.read(_PS_DESC.size))
    if edge_c != EDGE_CHANNELS:
        raise ValueError(f"{path}: {edge_c} edge channels, expected {EDGE_CHANNELS}")
    offset = _PS_HEADER.size + _PS_DESC.size
    arrays = []
    for c in (1, 1, edge_c, edge_c):
        shape = (count, c, patch, patch)
        nbytes = 4 * count * c * patch * patch
        if mmap:
            arrays.append(np.memmap(path, dtype="<f4", mode="r", offset=offset, shape=shape))
        else:
            arrays.append(np.fromfile(path, dtype="<f4", count=nbytes // 4, offset=offset).reshape(shape).astype(np.float32))
        offset += nbytes
    prov = np.fromfile(path, dtype="<i4", count=count * 4, offset=offset)
    if prov.size != count * 4:
        raise ValueError(f"{path}: truncated patch set file")
    return PatchSet(*arrays, patch=patch, scale=scale, provenance=prov.reshape(count, 4).astype(np.int32))


# ---------------------------------------------------------------------------
# Image files
# ---------------------------------------------------------------------------

IMAGE_SUFFIXES = (".png", ".bmp", ".ppm", ".pgm", ".pnm", ".jpg", ".jpeg", ".tif", ".tiff")


def read_image(path) -> ImageBuffer:
    """Read an 8-bit image file (PNG, PPM/PGM, ...) as an RGB or luminance buffer in [0, 1]."""
    from PIL import Image

    with Image.open(path) as im:
        if im.mode in ("L", "I;16", "I", "F", "1"):
            arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
            return ImageBuffer(arr, "luminance")
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return ImageBuffer(arr, "rgb")


def write_image(path, img) -> None:
    """Write an RGB or luminance buffer as an 8-bit file; the format follows the suffix."""
    from PIL import Image

    data, cs = _unwrap(img)
    if cs == "ycbcr":
        data = ycbcr_to_rgb(data)
    u8 = np.round(np.clip(data, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(u8, mode="L" if u8.ndim == 2 else "RGB").save(path)


def list_images(directory) -> list[Path]:
    d = Path(directory)
    return sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
