"""Edge-guided recurrent residual network.

Topology, for K recurrent units of width C and E edge planes::

    f_input = [y, edges(y)]                       1 + E channels
    f_in^1  = relu(conv_input(f_input))           C
    f_mid^k = relu(conv_in^k(f_in^k))
    f_out^k = relu(conv_mid^k(f_mid^k)) + f_in^k  (no rectifier after the sum)
    f_edge  = relu(conv_edge(f_out^K))            E, supervised by HR edges
    f_rect  = [f_out^K, f_edge]                   C + E
    x_high  = relu(conv_rect(f_rect))             1
    x_hat   = y + x_high

Units do not share weights. With ``bypass=False`` the identity term is dropped,
giving a plain stack of equal depth.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .imaging import EDGE_CHANNELS, _rewrap, _unwrap, bicubic_resize, sobel_edges
from .tensor import (
    ConvParams,
    ShapeError,
    concat_channels,
    conv2d_backward,
    conv2d_forward,
    relu_backward,
    relu_forward,
    sgd_momentum_step,
    split_channels,
)


class StaleTraceError(RuntimeError):
    """A trace was produced before the most recent parameter update."""


@dataclass
class DegreeConfig:
    scale: int = 3
    recurrences: int = 4
    channels: int = 64
    kernel: int = 3
    edge_channels: int = EDGE_CHANNELS
    lam: float = 1.0
    seed: int = 0
    bypass: bool = True

    def __post_init__(self):
        if self.scale < 1:
            raise ValueError(f"scale must be >= 1, got {self.scale}")
        if self.recurrences < 1:
            raise ValueError(f"recurrences must be >= 1, got {self.recurrences}")
        if self.kernel < 1 or self.kernel % 2 != 1:
            raise ValueError(f"kernel must be odd, got {self.kernel}")
        if self.channels < self.edge_channels:
            raise ValueError(f"channels ({self.channels}) must be >= edge_channels ({self.edge_channels})")
        if self.edge_channels != EDGE_CHANNELS:
            raise ValueError(f"edge_channels must be {EDGE_CHANNELS} to match the edge maps")
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")

    @classmethod
    def from_layers(cls, layers: int, **kw) -> "DegreeConfig":
        """10 layers -> 4 units, 20 layers -> 9 units (edge conv not counted)."""
        if layers < 4 or layers % 2:
            raise ValueError(f"layer count must be even and >= 4, got {layers}")
        return cls(recurrences=(layers - 2) // 2, **kw)

    @property
    def conv_layers(self) -> int:
        return 2 * self.recurrences + 3

    def parameter_count(self) -> int:
        c, e, k2, units = self.channels, self.edge_channels, self.kernel**2, self.recurrences
        return (
            ((1 + e) * c * k2 + c)
            + units * 2 * (c * c * k2 + c)
            + (c * e * k2 + e)
            + ((c + e) * k2 + 1)
        )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ForwardTrace:
    """Activations of one forward pass, enough to run the backward pass."""

    y: np.ndarray
    f_input: np.ndarray
    f_in1: np.ndarray
    f_mid: list = field(default_factory=list)
    branches: list = field(default_factory=list)
    f_out: list = field(default_factory=list)
    f_edge: np.ndarray = None
    f_rect: np.ndarray = None
    x_high: np.ndarray = None
    x_hat: np.ndarray = None
    version: int = -1

    @property
    def f_output(self) -> np.ndarray:
        return self.f_out[-1]

    def f_in(self, k: int) -> np.ndarray:
        """Input of unit k (0-based)."""
        return self.f_in1 if k == 0 else self.f_out[k - 1]


@dataclass
class LossResult:
    total: float
    image: float
    edge: float
    grad_x_hat: np.ndarray
    grad_edge: np.ndarray


class DegreeNetwork:
    def __init__(self, config: DegreeConfig, params: list[ConvParams]):
        self.config = config
        expected = self.expected_shapes(config)
        got = [p.weights.shape for p in params]
        if got != expected:
            raise ShapeError("DegreeNetwork", *got, detail=f"expected {expected}")
        self.params = params
        self.version = 0

    @staticmethod
    def expected_shapes(config: DegreeConfig) -> list[tuple]:
        c, e, k = config.channels, config.edge_channels, config.kernel
        shapes = [(c, 1 + e, k, k)]
        shapes += [(c, c, k, k)] * (2 * config.recurrences)
        shapes += [(e, c, k, k), (1, c + e, k, k)]
        return shapes

    @classmethod
    def build(cls, config: DegreeConfig, dtype=np.float32) -> "DegreeNetwork":
        rng = np.random.default_rng(config.seed)
        params = [ConvParams.he_normal(s[1], s[0], s[2], rng, dtype) for s in cls.expected_shapes(config)]
        return cls(config, params)

    @property
    def dtype(self):
        return self.params[0].weights.dtype

    @property
    def input_conv(self) -> ConvParams:
        return self.params[0]

    def unit_convs(self, k: int) -> tuple[ConvParams, ConvParams]:
        return self.params[1 + 2 * k], self.params[2 + 2 * k]

    @property
    def edge_conv(self) -> ConvParams:
        return self.params[-2]

    @property
    def rect_conv(self) -> ConvParams:
        return self.params[-1]

    def group_names(self) -> list[str]:
        names = ["input"]
        for k in range(1, self.config.recurrences + 1):
            names += [f"unit{k}.in", f"unit{k}.mid"]
        return names + ["edge", "rect"]

    def astype(self, dtype) -> "DegreeNetwork":
        return DegreeNetwork(self.config, [p.astype(dtype) for p in self.params])

    def copy(self) -> "DegreeNetwork":
        net = self.astype(self.dtype)
        net.version = self.version
        return net

    # -- forward / loss / backward -------------------------------------------

    def forward(self, y: np.ndarray, y_edges: np.ndarray) -> ForwardTrace:
        if y.ndim != 4 or y.shape[1] != 1:
            raise ShapeError("forward", y.shape, detail="y must be (n, 1, h, w)")
        if y_edges.shape != (y.shape[0], self.config.edge_channels) + y.shape[2:]:
            raise ShapeError("forward", y.shape, y_edges.shape, detail="edge maps must match y spatially")
        dt = self.dtype
        y = y.astype(dt, copy=False)
        f_input = concat_channels([y, y_edges.astype(dt, copy=False)])
        f_in1 = relu_forward(conv2d_forward(f_input, self.input_conv))
        tr = ForwardTrace(y=y, f_input=f_input, f_in1=f_in1, version=self.version)
        cur = f_in1
        for k in range(self.config.recurrences):
            conv_in, conv_mid = self.unit_convs(k)
            f_mid = relu_forward(conv2d_forward(cur, conv_in))
            branch = relu_forward(conv2d_forward(f_mid, conv_mid))
            cur = branch + cur if self.config.bypass else branch
            tr.f_mid.append(f_mid)
            tr.branches.append(branch)
            tr.f_out.append(cur)
        tr.f_edge = relu_forward(conv2d_forward(cur, self.edge_conv))
        tr.f_rect = concat_channels([cur, tr.f_edge])
        tr.x_high = relu_forward(conv2d_forward(tr.f_rect, self.rect_conv))
        tr.x_hat = y + tr.x_high
        return tr

    def loss(self, trace: ForwardTrace, x: np.ndarray, x_edges: np.ndarray, lam: float | None = None) -> LossResult:
        """Joint MSE: mean((x_hat - x)^2) + lam * mean((f_edge - x_edges)^2)."""
        lam = self.config.lam if lam is None else lam
        if lam < 0:
            raise ValueError(f"lam must be >= 0, got {lam}")
        if x.shape != trace.x_hat.shape or x_edges.shape != trace.f_edge.shape:
            raise ShapeError("loss", trace.x_hat.shape, x.shape, x_edges.shape)
        dt = self.dtype
        d_img = trace.x_hat.astype(np.float64) - x
        d_edge = trace.f_edge.astype(np.float64) - x_edges
        image = float(np.mean(d_img * d_img))
        edge = float(np.mean(d_edge * d_edge))
        return LossResult(
            total=image + lam * edge,
            image=image,
            edge=edge,
            grad_x_hat=(2.0 / d_img.size * d_img).astype(dt),
            grad_edge=(2.0 * lam / d_edge.size * d_edge).astype(dt),
        )

    def backward(self, trace: ForwardTrace, grad_x_hat: np.ndarray, grad_edge: np.ndarray):
        """Parameter gradients [(grad_w, grad_b), ...] in ``self.params`` order."""
        if trace.version != self.version:
            raise StaleTraceError(f"trace from parameter version {trace.version}, network is at {self.version}")
        cfg = self.config
        grads = [None] * len(self.params)

        g = relu_backward(trace.x_high, grad_x_hat)
        g_rect, gw, gb = conv2d_backward(trace.f_rect, self.rect_conv, g)
        grads[-1] = (gw, gb)
        g_out, g_edge = split_channels(g_rect, [cfg.channels, cfg.edge_channels])
        # f_edge is reached both through the loss and through f_rect.
        g = relu_backward(trace.f_edge, g_edge + grad_edge)
        g_from_edge, gw, gb = conv2d_backward(trace.f_output, self.edge_conv, g)
        grads[-2] = (gw, gb)
        g_out = g_out + g_from_edge

        for k in reversed(range(cfg.recurrences)):
            conv_in, conv_mid = self.unit_convs(k)
            g = relu_backward(trace.branches[k], g_out)
            g_mid, gw, gb = conv2d_backward(trace.f_mid[k], conv_mid, g)
            grads[2 + 2 * k] = (gw, gb)
            g = relu_backward(trace.f_mid[k], g_mid)
            g_in, gw, gb = conv2d_backward(trace.f_in(k), conv_in, g)
            grads[1 + 2 * k] = (gw, gb)
            g_out = g_in + g_out if cfg.bypass else g_in

        g = relu_backward(trace.f_in1, g_out)
        _, gw, gb = conv2d_backward(trace.f_input, self.input_conv, g, need_input_grad=False)
        grads[0] = (gw, gb)
        return grads

    def apply_sgd(self, grads, lr: float, momentum: float) -> None:
        for p, g in zip(self.params, grads):
            sgd_momentum_step(p, g, lr, momentum)
        self.version += 1

    # -- inference -----------------------------------------------------------

    def _head(self, state: np.ndarray) -> np.ndarray:
        f_edge = relu_forward(conv2d_forward(state, self.edge_conv))
        return relu_forward(conv2d_forward(concat_channels([state, f_edge]), self.rect_conv))

    def _states(self, y: np.ndarray, edges: np.ndarray, keep_states: bool):
        """High-frequency estimate and optionally [f_in^1, f_out^1..K], without a full trace."""
        dt = self.dtype
        f_input = concat_channels([y.astype(dt), edges.astype(dt)])
        cur = relu_forward(conv2d_forward(f_input, self.input_conv))
        states = [cur] if keep_states else None
        for k in range(self.config.recurrences):
            conv_in, conv_mid = self.unit_convs(k)
            branch = relu_forward(conv2d_forward(relu_forward(conv2d_forward(cur, conv_in)), conv_mid))
            cur = branch + cur if self.config.bypass else branch
            if keep_states:
                states.append(cur)
        return self._head(cur), states


def _prepare_input(lr_image, scale: int):
    data, cs = _unwrap(lr_image)
    if data.ndim != 2:
        raise ValueError(f"expected a single-channel luminance image, got shape {data.shape}")
    up = data if scale == 1 else _unwrap(bicubic_resize(data, scale))[0]
    return up, cs


def predict_image(net: DegreeNetwork, lr_image, scale: int | None = None):
    """Super-resolve a luminance image: bicubic upscale, add the predicted high band, clamp."""
    scale = net.config.scale if scale is None else scale
    up, cs = _prepare_input(lr_image, scale)
    x_high, _ = net._states(up[None, None], sobel_edges(up)[None], keep_states=False)
    # Combine in float64 so a zero high band returns the bicubic image unchanged.
    out = np.clip(up + x_high[0, 0].astype(np.float64), 0.0, 1.0)
    return _rewrap(out, cs)


def _normalize(a: np.ndarray) -> np.ndarray:
    a = a.astype(np.float64)
    lo, hi = a.min(), a.max()
    return np.zeros_like(a) if hi <= lo else (a - lo) / (hi - lo)


def extract_subband_states(net: DegreeNetwork, lr_image, scale: int | None = None, normalize: bool = True) -> list:
    """Image-space projections of f_in^1 ("1L") and each f_out^k ("kR").

    Each state is pushed through the reconstruction head (edge conv, concat,
    rect conv) and, with ``normalize``, min-max scaled to [0, 1] per image.
    """
    scale = net.config.scale if scale is None else scale
    up, cs = _prepare_input(lr_image, scale)
    _, states = net._states(up[None, None], sobel_edges(up)[None], keep_states=True)
    out = []
    for s in states:
        proj = net._head(s)[0, 0].astype(np.float64)
        out.append(_rewrap(_normalize(proj) if normalize else proj, cs))
    return out


def subband_labels(recurrences: int) -> list[str]:
    return ["1L"] + [f"{k}R" for k in range(1, recurrences + 1)]
