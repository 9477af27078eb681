"""SGD-with-momentum training loop, learning-rate schedule, checkpoints and metrics log."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from .imaging import PatchSet
from .network import DegreeConfig, DegreeNetwork
from .tensor import ConvParams, NonFiniteError

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("epoch", "iteration", "lr", "loss_total", "loss_image", "loss_edge", "val_psnr")


class CheckpointError(ValueError):
    """A checkpoint file is corrupt or internally inconsistent."""


class TrainingDiverged(NonFiniteError):
    def __init__(self, msg: str, last_checkpoint: Path | None):
        super().__init__(msg)
        self.last_checkpoint = last_checkpoint


@dataclass
class TrainConfig:
    batch_size: int = 64
    lr_initial: float = 1e-4
    lr_drop_epoch: int = 76
    lr_after: float = 1e-5
    max_epochs: int = 270
    momentum: float = 0.9
    lam: float = 1.0
    seed: int = 0
    val_interval: int = 5
    log_interval: int = 50
    checkpoint_dir: str | None = None
    weight_decay: float = 0.0
    clip_norm: float | None = None
    max_iterations: int | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 < self.lr_after < self.lr_initial:
            raise ValueError("need 0 < lr_after < lr_initial")
        # lr_drop_epoch == max_epochs means the drop never happens within the run.
        if not 0 <= self.lr_drop_epoch <= self.max_epochs:
            raise ValueError("need 0 <= lr_drop_epoch <= max_epochs")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)


def learning_rate(epoch: int, cfg: TrainConfig) -> float:
    """Step schedule; ``epoch`` is 0-based, so epochs >= lr_drop_epoch use lr_after."""
    return cfg.lr_initial if epoch < cfg.lr_drop_epoch else cfg.lr_after


@dataclass
class TrainState:
    epoch: int = 0
    iteration: int = 0
    avg_loss_image: float = 0.0
    avg_loss_edge: float = 0.0
    rng_state: dict | None = None
    final: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    state: TrainState
    losses: list = field(default_factory=list)
    rows: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)


def _clip(grads, max_norm: float):
    total = math.sqrt(sum(float(np.sum(gw.astype(np.float64) ** 2) + np.sum(gb.astype(np.float64) ** 2)) for gw, gb in grads))
    if total <= max_norm:
        return grads
    s = max_norm / total
    return [(gw * s, gb * s) for gw, gb in grads]


def train(
    net: DegreeNetwork,
    patches: PatchSet,
    cfg: TrainConfig,
    state: TrainState | None = None,
    validate: Callable[[DegreeNetwork], float] | None = None,
    metrics_path=None,
) -> TrainResult:
    """Optimise the joint loss over ``patches``; resumes from ``state`` when given.

    One checkpoint per epoch is written to ``cfg.checkpoint_dir`` (if set); the
    last one is also written as ``final.dgre``.
    """
    n = len(patches)
    if n == 0:
        raise ValueError("empty patch set")
    if patches.lr.shape[1] + patches.lr_edges.shape[1] != net.input_conv.c_in:
        raise ValueError("network input channels do not match the patch set")
    state = TrainState() if state is None else state
    rng = np.random.default_rng(cfg.seed)
    if state.rng_state is not None:
        rng.bit_generator.state = state.rng_state
    ckpt_dir = Path(cfg.checkpoint_dir) if cfg.checkpoint_dir else None
    if ckpt_dir:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    result = TrainResult(state=state)
    last_ckpt = None
    writer = _MetricsWriter(metrics_path, append=state.iteration > 0) if metrics_path else None
    stop = False
    try:
        for epoch in range(state.epoch, cfg.max_epochs):
            lr = learning_rate(epoch, cfg)
            order = rng.permutation(n)
            sum_img = sum_edge = 0.0
            win_img = win_edge = 0.0
            win_n = 0
            batches = 0
            for start in range(0, n, cfg.batch_size):
                idx = np.sort(order[start : start + cfg.batch_size])
                trace = net.forward(np.asarray(patches.lr[idx]), np.asarray(patches.lr_edges[idx]))
                res = net.loss(trace, np.asarray(patches.hr[idx]), np.asarray(patches.hr_edges[idx]), cfg.lam)
                if not math.isfinite(res.total):
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch} iteration {state.iteration}; "
                        f"last good checkpoint: {last_ckpt}",
                        last_ckpt,
                    )
                grads = net.backward(trace, res.grad_x_hat, res.grad_edge)
                if cfg.weight_decay:
                    grads = [(gw + cfg.weight_decay * p.weights, gb) for (gw, gb), p in zip(grads, net.params)]
                if cfg.clip_norm:
                    grads = _clip(grads, cfg.clip_norm)
                net.apply_sgd(grads, lr, cfg.momentum)
                state.iteration += 1
                batches += 1
                result.losses.append(res.total)
                sum_img += res.image
                sum_edge += res.edge
                win_img += res.image
                win_edge += res.edge
                win_n += 1
                if win_n == cfg.log_interval:
                    row = _row(epoch, state.iteration, lr, win_img / win_n, win_edge / win_n, cfg.lam)
                    result.rows.append(row)
                    if writer:
                        writer.write(row)
                    win_img = win_edge = 0.0
                    win_n = 0
                if cfg.max_iterations is not None and state.iteration >= cfg.max_iterations:
                    stop = True
                    break
            state.avg_loss_image = sum_img / batches
            state.avg_loss_edge = sum_edge / batches
            if stop:
                break
            state.epoch = epoch + 1
            state.rng_state = rng.bit_generator.state
            val = None
            if validate is not None and cfg.val_interval and state.epoch % cfg.val_interval == 0:
                val = validate(net)
            row = _row(epoch, state.iteration, lr, state.avg_loss_image, state.avg_loss_edge, cfg.lam, val)
            result.rows.append(row)
            if writer:
                writer.write(row)
            log.info("epoch %d: loss %.6g (image %.6g, edge %.6g) lr %g", epoch, row["loss_total"],
                     state.avg_loss_image, state.avg_loss_edge, lr)
            state.final = state.epoch == cfg.max_epochs
            if ckpt_dir:
                last_ckpt = ckpt_dir / f"epoch_{state.epoch:04d}.dgre"
                save_checkpoint(net, state, last_ckpt)
                result.checkpoints.append(last_ckpt)
        state.rng_state = rng.bit_generator.state
        if ckpt_dir and state.iteration > 0:
            state.final = True
            final = ckpt_dir / "final.dgre"
            save_checkpoint(net, state, final)
            result.checkpoints.append(final)
    finally:
        if writer:
            writer.close()
    return result


def _row(epoch, iteration, lr, img, edge, lam, val=None) -> dict:
    return {
        "epoch": epoch,
        "iteration": iteration,
        "lr": lr,
        "loss_total": img + lam * edge,
        "loss_image": img,
        "loss_edge": edge,
        "val_psnr": "" if val is None else val,
    }


class _MetricsWriter:
    def __init__(self, path, append: bool):
        path = Path(path)
        new = not (append and path.exists())
        self._f = open(path, "w" if new else "a", newline="")
        self._w = csv.DictWriter(self._f, fieldnames=METRIC_COLUMNS)
        if new:
            self._w.writeheader()

    def write(self, row):
        self._w.writerow(row)
        self._f.flush()

    def close(self):
        self._f.close()


# ---------------------------------------------------------------------------
# Checkpoints
#
#   b"DGRE" | u32 version | u32 record length | JSON record (UTF-8, sorted keys)
#   u32 group count | per group: u32 c_out, c_in, k, k
#   float32 LE: weights, bias for every group; then w_velocity, b_velocity
#   u64 LE checksum: first 8 bytes of BLAKE2b over everything before it
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"DGRE"
CHECKPOINT_VERSION = 1


def _checksum(payload: bytes) -> bytes:
    return hashlib.blake2b(payload, digest_size=8).digest()


def checkpoint_bytes(net: DegreeNetwork, state: TrainState) -> bytes:
    record = json.dumps({"network": net.config.to_dict(), "state": state.to_dict()}, sort_keys=True).encode()
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(record)), record]
    parts.append(struct.pack("<I", len(net.params)))
    for p in net.params:
        parts.append(struct.pack("<4I", *p.weights.shape))
    for p in net.params:
        parts += [p.weights.astype("<f4").tobytes(), p.bias.astype("<f4").tobytes()]
    for p in net.params:
        parts += [p.w_velocity.astype("<f4").tobytes(), p.b_velocity.astype("<f4").tobytes()]
    payload = b"".join(parts)
    return payload + _checksum(payload)


def save_checkpoint(net: DegreeNetwork, state: TrainState, path) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(checkpoint_bytes(net, state))
    tmp.replace(path)


def load_checkpoint(path) -> tuple[DegreeNetwork, TrainState]:
    """Parse and fully validate a checkpoint before building anything from it."""
    blob = Path(path).read_bytes()
    if len(blob) < 20 or blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    payload, digest = blob[:-8], blob[-8:]
    if _checksum(payload) != digest:
        raise CheckpointError(f"{path}: checksum mismatch")
    version, rec_len = struct.unpack_from("<II", payload, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    try:
        record = json.loads(payload[off : off + rec_len])
        config = DegreeConfig(**record["network"])
        state = TrainState(**record["state"])
    except (ValueError, TypeError, KeyError) as e:
        raise CheckpointError(f"{path}: bad config record: {e}") from None
    off += rec_len
    (count,) = struct.unpack_from("<I", payload, off)
    off += 4
    shapes = [tuple(struct.unpack_from("<4I", payload, off + 16 * i)) for i in range(count)]
    off += 16 * count
    expected = DegreeNetwork.expected_shapes(config)
    if shapes != expected:
        raise CheckpointError(f"{path}: shape table {shapes} disagrees with config record (expects {expected})")

    def take(shape):
        nonlocal off
        size = int(np.prod(shape))
        if off + 4 * size > len(payload):
            raise CheckpointError(f"{path}: truncated parameter data")
        arr = np.frombuffer(payload, dtype="<f4", count=size, offset=off).reshape(shape).astype(np.float32)
        off += 4 * size
        return arr

    values = [(take(s), take(s[:1])) for s in shapes]
    velocities = [(take(s), take(s[:1])) for s in shapes]
    if off != len(payload):
        raise CheckpointError(f"{path}: {len(payload) - off} trailing bytes")
    params = [ConvParams(w, b, vw, vb) for (w, b), (vw, vb) in zip(values, velocities)]
    return DegreeNetwork(config, params), state
