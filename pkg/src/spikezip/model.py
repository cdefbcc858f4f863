"""Compressive autoencoder: encoder, vector quantizer, decoder and training.

The encoder maps ``M_spk`` aligned spikes of ``D`` samples to ``N_feat``
latent vectors of dimension ``d = D/4``. Each latent vector is replaced by the
index of its nearest codeword; only those indexes are transmitted. Training
minimizes ``mse(x, x_hat) + mse(y, y_hat)`` with the quantizer bypassed in the
backward pass (straight-through).
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import container
from .autodiff import AdamState, NonFiniteError, Tensor, adam_step, make_node, mse
from .nn import (
    Conv1d,
    Deconv1d,
    Downsample2,
    Module,
    Norm,
    ReLU,
    Sequential,
    Upsample2,
    resnet_deconv_block,
    resnext_block,
)

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"CAE1"
CHECKPOINT_VERSION = 1
INPUT_SCALE_PERCENTILE = 99.9
RESEED_SHARE = 0.3  # codewords below this fraction of the uniform share get reseeded


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass(frozen=True)
class CaeConfig:
    m_spk: int = 4
    spike_len: int = 48
    bit_depth: int = 16
    n_feat: int = 16
    codebook_size: int = 256
    groups: int = 32
    width: int = 256
    denoising: bool = False

    def __post_init__(self):
        if self.spike_len % 4:
            raise ValueError(f"spike length {self.spike_len} must be divisible by 4")
        k = self.codebook_size
        if k < 1 or k & (k - 1):
            raise ValueError(f"codebook size {k} must be a power of two")
        if self.m_spk < 1 or self.n_feat < 1:
            raise ValueError("m_spk and n_feat must be >= 1")
        if not 10 <= self.bit_depth <= 16:
            raise ValueError(f"bit depth {self.bit_depth} outside [10, 16]")
        if self.width % 2 or (self.width // 2) % self.groups:
            raise ValueError(f"width {self.width} incompatible with groups={self.groups}")

    @property
    def codeword_dim(self) -> int:
        return self.spike_len // 4

    def digest(self) -> bytes:
        """8-byte fingerprint used to pair bitstreams with checkpoints."""
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).digest()[:8]


class VectorQuantizer(Module):
    """Voronoi quantizer over a learned ``K x d`` codebook."""

    def __init__(self, k: int, d: int, rng):
        self.codebook = Tensor(rng.uniform(-1.0, 1.0, size=(k, d)), requires_grad=True)

    def parameters(self):
        return [("codebook", self.codebook)]

    def macs(self, shape):
        n_feat, d = shape
        return n_feat * self.codebook.shape[0] * d, shape

    def forward(self, x):
        return Tensor(self.codebook.data[nearest_codewords(x.data, self.codebook.data)])


def nearest_codewords(y: np.ndarray, codebook: np.ndarray) -> np.ndarray:
    """Index of the closest codeword (squared Euclidean) for every vector in ``y``.

    ``y`` has shape (..., d). Distances accumulate coordinate by coordinate so
    results are reproducible across platforms; ties resolve to the lowest index.
    """
    k, d = codebook.shape
    if k == 0:
        raise ValueError("empty codebook")
    if y.shape[-1] != d:
        raise ValueError(f"vector dimension {y.shape[-1]} != codeword dimension {d}")
    flat = y.reshape(-1, d)
    out = np.empty(len(flat), dtype=np.int64)
    chunk = max(1, 2_000_000 // max(k, 1))
    for start in range(0, len(flat), chunk):
        block = flat[start : start + chunk]
        dist = np.zeros((len(block), k))
        for j in range(d):
            diff = block[:, j, None] - codebook[None, :, j]
            dist += diff * diff
        out[start : start + chunk] = dist.argmin(axis=1)
    return out.reshape(y.shape[:-1])


@dataclass
class LatentBlock:
    y: np.ndarray
    indexes: np.ndarray
    y_hat: np.ndarray


@dataclass
class CaeModel:
    config: CaeConfig
    encoder: Sequential
    quantizer: VectorQuantizer
    decoder: Sequential
    input_scale: float = 1.0
    scale_fitted: bool = False
    seed: int = 0
    epochs_trained: int = 0
    loss_history: list[float] = field(default_factory=list)

    @property
    def codebook(self) -> np.ndarray:
        return self.quantizer.codebook.data

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return (
            [(f"encoder.{n}", p) for n, p in self.encoder.parameters()]
            + [("quantizer.codebook", self.quantizer.codebook)]
            + [(f"decoder.{n}", p) for n, p in self.decoder.parameters()]
        )

    def buffers(self) -> list[tuple[str, np.ndarray]]:
        return [(f"encoder.{n}", b) for n, b in self.encoder.buffers()] + [
            (f"decoder.{n}", b) for n, b in self.decoder.buffers()
        ]

    def encoder_with_vq(self) -> Sequential:
        """On-chip part (encoder + quantizer) as one network, for accounting."""
        return Sequential(*self.encoder.layers, self.quantizer)

    def train_mode(self, flag: bool = True) -> None:
        self.encoder.train(flag)
        self.decoder.train(flag)

    def scale(self, spikes: np.ndarray) -> np.ndarray:
        return np.asarray(spikes, dtype=np.float64) / self.input_scale


def build(config: CaeConfig, seed: int = 0) -> CaeModel:
    rng = np.random.default_rng(seed)
    w, g = config.width, config.groups
    encoder = Sequential(
        Conv1d(config.m_spk, w, 1, rng=rng),
        Norm(w),
        ReLU(),
        resnext_block(w, g, rng),
        Downsample2(),
        resnext_block(w, g, rng),
        Downsample2(),
        Conv1d(w, config.n_feat, 1, rng=rng),
        Norm(config.n_feat),
    )
    quantizer = VectorQuantizer(config.codebook_size, config.codeword_dim, rng)
    decoder = Sequential(
        Deconv1d(config.n_feat, w, 1, rng=rng),
        Norm(w),
        ReLU(),
        Upsample2(),
        resnet_deconv_block(w, rng),
        Upsample2(),
        resnet_deconv_block(w, rng),
        Deconv1d(w, config.m_spk, 1, bias=True, rng=rng),
    )
    model = CaeModel(config, encoder, quantizer, decoder, seed=seed)
    model.train_mode(False)
    return model


def _check_input(model: CaeModel, x: np.ndarray) -> None:
    c = model.config
    if x.ndim != 3 or x.shape[1:] != (c.m_spk, c.spike_len):
        raise ValueError(f"expected spikes of shape (N, {c.m_spk}, {c.spike_len}), got {x.shape}")


def encode(model: CaeModel, spikes: np.ndarray) -> np.ndarray:
    """Latent vectors (N, N_feat, d) for already-scaled spikes."""
    x = np.asarray(spikes, dtype=np.float64)
    _check_input(model, x)
    model.train_mode(False)
    return model.encoder(Tensor(x)).data


def quantize(model: CaeModel, y: np.ndarray) -> LatentBlock:
    y = np.asarray(y, dtype=np.float64)
    if not np.isfinite(y).all():
        raise ValueError("latent vectors must be finite")
    idx = nearest_codewords(y, model.codebook)
    return LatentBlock(y=y, indexes=idx, y_hat=model.codebook[idx])


def decode(model: CaeModel, y_hat: np.ndarray) -> np.ndarray:
    """Reconstruction in normalized units; multiply by ``input_scale`` for physical units."""
    c = model.config
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y_hat.ndim != 3 or y_hat.shape[1:] != (c.n_feat, c.codeword_dim):
        raise ValueError(f"expected latents of shape (N, {c.n_feat}, {c.codeword_dim}), got {y_hat.shape}")
    model.train_mode(False)
    return model.decoder(Tensor(y_hat)).data


def compress(model: CaeModel, raw_spikes: np.ndarray) -> np.ndarray:
    """Codeword indexes (N, N_feat) for spikes in physical units."""
    return quantize(model, encode(model, model.scale(raw_spikes))).indexes


def decompress(model: CaeModel, indexes: np.ndarray) -> np.ndarray:
    """Spikes in physical units from codeword indexes."""
    return decode(model, model.codebook[np.asarray(indexes)]) * model.input_scale


def reconstruct(model: CaeModel, raw_spikes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    idx = compress(model, raw_spikes)
    return decompress(model, idx), idx


# ---------------------------------------------------------------------------
# training


def straight_through(y: Tensor, codebook: Tensor) -> tuple[Tensor, Tensor, np.ndarray]:
    """Quantize ``y`` and return (decoder input, codebook rows, indexes).

    The decoder input carries the quantized values forward but hands its
    gradient to ``y`` unchanged. The second output is the same values as a
    gather from the codebook, so gradients through it reach the codewords.
    """
    idx = nearest_codewords(y.data, codebook.data)
    y_hat = codebook.data[idx]
    k, d = codebook.shape
    flat_idx = idx.reshape(-1)

    def gather_backward(g):
        out = np.zeros((k, d))
        np.add.at(out, flat_idx, g.reshape(-1, d))
        return (out,)

    passthrough = make_node(y_hat, (y,), lambda g: (g,), "straight_through")
    gathered = make_node(y_hat.copy(), (codebook,), gather_backward, "gather")
    return passthrough, gathered, idx


def loss(x, x_hat: Tensor, y: Tensor, y_hat: Tensor, clean=None, denoising: bool = False) -> Tensor:
    """``d(target, x_hat) + d(y, y_hat)`` with d the mean squared error.

    In denoising mode the reconstruction target is ``clean`` instead of ``x``.
    """
    if denoising:
        if clean is None:
            raise ValueError("denoising mode needs clean targets")
        target = clean
    else:
        target = x
    target = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    return mse(x_hat, target) + mse(y, y_hat)


def forward_loss(model: CaeModel, x: np.ndarray, clean: np.ndarray | None = None, use_vq: bool = True) -> Tensor:
    """One training-mode pass over a scaled batch, returning the loss node."""
    return _training_pass(model, x, clean, use_vq)[0]


def _training_pass(model, x, clean, use_vq):
    y = model.encoder(Tensor(x))
    if use_vq:
        dec_in, y_hat, idx = straight_through(y, model.quantizer.codebook)
    else:
        dec_in, y_hat, idx = y, y.detach(), None
    x_hat = model.decoder(dec_in)
    value = loss(x, x_hat, y, y_hat, clean=clean, denoising=model.config.denoising)
    return value, idx, y.data


def reseed_dead_codewords(codebook: np.ndarray, usage: np.ndarray, latents: np.ndarray, rng, min_share: float = 0.0) -> int:
    """Move rarely used codewords onto randomly drawn live latents.

    A codeword counts as dead when it won no vectors, or fewer than
    ``min_share`` times its uniform share ``usage.sum() / K``. Returns the
    number of codewords moved. Unused codewords receive no gradient, so
    without this they stay dead for the rest of training.
    """
    dead = np.flatnonzero((usage == 0) | (usage < min_share * usage.sum() / len(usage)))
    if len(dead) == 0 or len(latents) == 0:
        return 0
    pick = rng.choice(len(latents), size=len(dead), replace=len(dead) > len(latents))
    codebook[dead] = latents[pick]
    return len(dead)


def fit_input_scale(model: CaeModel, raw_spikes: np.ndarray) -> float:
    scale = float(np.percentile(np.abs(raw_spikes), INPUT_SCALE_PERCENTILE))
    if not scale > 0:
        raise ValueError("training spikes are all zero")
    model.input_scale = scale
    model.scale_fitted = True
    return scale


def train(
    model: CaeModel,
    spikes: np.ndarray,
    epochs: int,
    batch_size: int = 48,
    seed: int = 0,
    clean: np.ndarray | None = None,
    lr: float = 1e-3,
    use_vq: bool = True,
    state: AdamState | None = None,
    reseed: bool = True,
    reseed_share: float = RESEED_SHARE,
) -> list[float]:
    """Train in place on raw spikes (N, M_spk, D); returns per-epoch mean loss.

    ``clean`` holds the denoising targets paired with ``spikes`` and is
    required when ``config.denoising`` is set. With ``use_vq=False`` the
    quantizer is skipped and the model is a plain autoencoder. With
    ``reseed`` set, codewords used less than ``reseed_share`` times their
    uniform share during an epoch are moved onto latents seen in that epoch.
    """
    spikes = np.asarray(spikes, dtype=np.float64)
    if len(spikes) == 0:
        raise ValueError("empty training set")
    _check_input(model, spikes)
    if model.config.denoising:
        if clean is None:
            raise ValueError("denoising mode needs clean targets")
        clean = np.asarray(clean, dtype=np.float64)
        if clean.shape != spikes.shape:
            raise ValueError("clean targets must match the training spikes")
    if not model.scale_fitted:
        fit_input_scale(model, spikes if clean is None else clean)
    x_all = model.scale(spikes)
    c_all = model.scale(clean) if clean is not None else None

    rng = np.random.default_rng(seed)
    params = model.parameters()
    state = state if state is not None else AdamState(lr=lr)
    history = []
    model.train_mode(True)
    try:
        for epoch in range(epochs):
            order = rng.permutation(len(x_all))
            total, count = 0.0, 0
            k = model.config.codebook_size
            usage = np.zeros(k, dtype=np.int64)
            pool = []
            for start in range(0, len(order), batch_size):
                sel = order[start : start + batch_size]
                if len(sel) < 2 and count:
                    continue
                for p in params:
                    p.grad = None
                try:
                    value, idx, y = _training_pass(model, x_all[sel], None if c_all is None else c_all[sel], use_vq)
                    value.backward()
                except NonFiniteError as exc:
                    raise DivergenceError(f"non-finite values at epoch {model.epochs_trained + 1}: {exc}") from exc
                adam_step(params, state)
                if idx is not None:
                    usage += np.bincount(idx.reshape(-1), minlength=k)
                    pool.append(y.reshape(-1, y.shape[-1])[rng.integers(0, idx.size, size=8)])
                total += value.item() * len(sel)
                count += len(sel)
            history.append(total / count)
            if reseed and use_vq and pool:
                reseed_dead_codewords(model.quantizer.codebook.data, usage, np.concatenate(pool), rng, reseed_share)
            model.epochs_trained += 1
            if not np.isfinite(history[-1]):
                raise DivergenceError(f"loss diverged at epoch {model.epochs_trained}")
            log.debug("epoch %d loss %.6f", model.epochs_trained, history[-1])
    finally:
        model.train_mode(False)
    model.loss_history.extend(history)
    return history


# ---------------------------------------------------------------------------
# checkpoints

_CONFIG_FMT = "IIIIIIIB"


def _to_bytes(model: CaeModel) -> bytes:
    c = model.config
    parts = [
        struct.pack(
            "<" + _CONFIG_FMT,
            c.m_spk,
            c.spike_len,
            c.bit_depth,
            c.n_feat,
            c.codebook_size,
            c.groups,
            c.width,
            int(c.denoising),
        ),
        struct.pack("<d", model.input_scale),
    ]
    meta = json.dumps(
        {"seed": model.seed, "epochs": model.epochs_trained, "loss_history": model.loss_history, "scale_fitted": model.scale_fitted}
    ).encode()
    parts.append(struct.pack("<I", len(meta)) + meta)
    arrays = [p.data for p in model.parameters()] + [b for _, b in model.buffers()]
    parts.append(struct.pack("<I", len(arrays)))
    for a in arrays:
        parts.append(struct.pack("<I", a.size) + a.astype("<f4").tobytes())
    return container.frame(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, b"".join(parts))


def save(model: CaeModel, path) -> None:
    Path(path).write_bytes(_to_bytes(model))


def read_config(body: bytes) -> tuple[CaeConfig, container.Reader]:
    r = container.Reader(body)
    vals = r.unpack(_CONFIG_FMT)
    config = CaeConfig(*vals[:7], denoising=bool(vals[7]))
    return config, r


def load(path) -> CaeModel:
    _, body = container.unframe(Path(path).read_bytes(), CHECKPOINT_MAGIC, (CHECKPOINT_VERSION,))
    config, r = read_config(body)
    (scale,) = r.unpack("d")
    (meta_len,) = r.unpack("I")
    meta = json.loads(r.take(meta_len).decode())
    model = build(config, seed=meta["seed"])
    model.input_scale = scale
    model.scale_fitted = meta.get("scale_fitted", True)
    model.epochs_trained = meta["epochs"]
    model.loss_history = list(meta["loss_history"])
    targets = [p.data for p in model.parameters()] + [b for _, b in model.buffers()]
    (count,) = r.unpack("I")
    if count != len(targets):
        raise container.FormatError(f"checkpoint has {count} arrays, model expects {len(targets)}")
    for t in targets:
        (n,) = r.unpack("I")
        if n != t.size:
            raise container.FormatError(f"array size {n} != expected {t.size}")
        t[...] = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(t.shape)
    if not r.done():
        raise container.FormatError("trailing bytes in checkpoint")
    return model


def round_to_float32(model: CaeModel) -> CaeModel:
    """Round all parameters and buffers to float32 in place (what a checkpoint keeps)."""
    for a in [p.data for p in model.parameters()] + [b for _, b in model.buffers()]:
        a[...] = a.astype(np.float32)
    return model
