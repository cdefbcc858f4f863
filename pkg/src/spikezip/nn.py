"""Layers for the spike autoencoder, built on :mod:`spikezip.autodiff`.

Convolutions are one-dimensional, stride 1, zero padded so the temporal
length is preserved (odd kernels only). Grouped convolution splits input and
output channels into ``groups`` independent blocks. The transposed
convolution is implemented as the exact adjoint of the forward convolution
with the same weight tensor, so ``<conv(x, w), y> == <x, deconv(y, w)>``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import DTYPE, Tensor, make_node, relu

LAYER_KINDS = ("conv1d", "deconv1d", "norm", "relu", "downsample2", "upsample2")
NORM_EPS = 1e-5
NORM_MOMENTUM = 0.1


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 1
    groups: int = 1
    bias: bool = False

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kernel < 1 or self.groups < 1:
            raise ValueError("kernel and groups must be >= 1")
        if self.kind in ("conv1d", "deconv1d"):
            if self.in_channels % self.groups or self.out_channels % self.groups:
                raise ValueError(
                    f"channels {self.in_channels}->{self.out_channels} not divisible by groups={self.groups}"
                )
            if self.kernel % 2 == 0:
                raise ValueError("only odd kernels keep the length with symmetric padding")

    def weight_shape(self) -> tuple[int, int, int]:
        """Shape of the weight tensor.

        For ``conv1d`` it is (out, in/groups, k). A ``deconv1d`` is the adjoint
        of a conv mapping out->in, so its weights are (in, out/groups, k).
        """
        if self.kind == "conv1d":
            return (self.out_channels, self.in_channels // self.groups, self.kernel)
        if self.kind == "deconv1d":
            return (self.in_channels, self.out_channels // self.groups, self.kernel)
        raise ValueError(f"{self.kind} has no weight tensor")


# ---------------------------------------------------------------------------
# raw array kernels (shared by conv and deconv)


def _columns(x: np.ndarray, k: int, groups: int) -> np.ndarray:
    """(N, C, L) -> (N, groups, C/groups * k, L) shifted copies (im2col)."""
    n, c, length = x.shape
    if k == 1:
        return x.reshape(n, groups, c // groups, length)
    p = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p)))
    cols = np.stack([xp[:, :, j : j + length] for j in range(k)], axis=2)
    return cols.reshape(n, groups, (c // groups) * k, length)


def _uncolumns(cols: np.ndarray, c: int, k: int) -> np.ndarray:
    """Adjoint of :func:`_columns`: scatter-add shifted entries back to (N, C, L)."""
    n, _, _, length = cols.shape
    if k == 1:
        return cols.reshape(n, c, length)
    p = (k - 1) // 2
    cols = cols.reshape(n, c, k, length)
    xp = np.zeros((n, c, length + 2 * p), dtype=cols.dtype)
    for j in range(k):
        xp[:, :, j : j + length] += cols[:, :, j, :]
    return xp[:, :, p : p + length]


def conv_apply(x: np.ndarray, w: np.ndarray, groups: int) -> np.ndarray:
    n, _, length = x.shape
    cout, cig, k = w.shape
    wg = w.reshape(groups, cout // groups, cig * k)
    return (wg @ _columns(x, k, groups)).reshape(n, cout, length)


def conv_adjoint(y: np.ndarray, w: np.ndarray, groups: int) -> np.ndarray:
    n, cout, length = y.shape
    _, cig, k = w.shape
    wg = w.reshape(groups, cout // groups, cig * k)
    cols = wg.transpose(0, 2, 1) @ y.reshape(n, groups, cout // groups, length)
    return _uncolumns(cols, cig * groups, k)


def conv_weight_grad(x: np.ndarray, dy: np.ndarray, groups: int, k: int) -> np.ndarray:
    n, cout, length = dy.shape
    cols = _columns(x, k, groups)
    dw = (dy.reshape(n, groups, cout // groups, length) @ cols.transpose(0, 1, 3, 2)).sum(axis=0)
    return dw.reshape(cout, x.shape[1] // groups, k)


# ---------------------------------------------------------------------------
# differentiable ops


def _check_conv(x: Tensor, w: Tensor, spec: LayerSpec, kind: str) -> None:
    if spec.kind != kind:
        raise ValueError(f"expected a {kind} spec, got {spec.kind}")
    if x.data.ndim != 3 or x.shape[1] != spec.in_channels:
        raise ValueError(f"input shape {x.shape} does not match in_channels={spec.in_channels}")
    if w.shape != spec.weight_shape():
        raise ValueError(f"weight shape {w.shape} != expected {spec.weight_shape()}")


def conv1d_forward(x: Tensor, w: Tensor, spec: LayerSpec, bias: Tensor | None = None) -> Tensor:
    _check_conv(x, w, spec, "conv1d")
    g = spec.groups
    out = conv_apply(x.data, w.data, g)
    if bias is not None:
        out = out + bias.data[None, :, None]

    def backward(dy):
        grads = [conv_adjoint(dy, w.data, g), conv_weight_grad(x.data, dy, g, spec.kernel)]
        if bias is not None:
            grads.append(dy.sum(axis=(0, 2)))
        return grads

    parents = (x, w) if bias is None else (x, w, bias)
    return make_node(out, parents, backward, "conv1d")


def deconv1d_forward(x: Tensor, w: Tensor, spec: LayerSpec, bias: Tensor | None = None) -> Tensor:
    _check_conv(x, w, spec, "deconv1d")
    g = spec.groups
    out = conv_adjoint(x.data, w.data, g)
    if bias is not None:
        out = out + bias.data[None, :, None]

    def backward(dy):
        grads = [conv_apply(dy, w.data, g), conv_weight_grad(dy, x.data, g, spec.kernel)]
        if bias is not None:
            grads.append(dy.sum(axis=(0, 2)))
        return grads

    parents = (x, w) if bias is None else (x, w, bias)
    return make_node(out, parents, backward, "deconv1d")


def norm_forward(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    mode: str = "train",
    running_mean: np.ndarray | None = None,
    running_var: np.ndarray | None = None,
    momentum: float = NORM_MOMENTUM,
) -> Tensor:
    """Per-channel batch normalization over the (batch, time) axes.

    In train mode the running buffers, when given, are updated in place.
    """
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"affine parameters must have shape ({c},)")
    gam = gamma.data
    if mode == "train":
        m = x.shape[0] * x.shape[2]
        mean = np.einsum("ncl->c", x.data) / m
        xhat = x.data - mean[None, :, None]
        var = np.einsum("ncl,ncl->c", xhat, xhat) / m
        inv = 1.0 / np.sqrt(var + NORM_EPS)
        xhat *= inv[None, :, None]
        if running_mean is not None:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mean
        if running_var is not None:
            running_var *= 1.0 - momentum
            running_var += momentum * var * (m / max(m - 1, 1))

        def backward(g):
            sg = np.einsum("ncl->c", g)
            sgx = np.einsum("ncl,ncl->c", g, xhat)
            dx = xhat * (-sgx / m)[None, :, None]
            dx += g
            dx -= (sg / m)[None, :, None]
            dx *= (gam * inv)[None, :, None]
            return dx, sgx, sg

    elif mode == "eval":
        if running_mean is None or running_var is None:
            raise ValueError("eval mode needs running statistics")
        inv = 1.0 / np.sqrt(running_var + NORM_EPS)
        xhat = (x.data - running_mean[None, :, None]) * inv[None, :, None]

        def backward(g):
            return g * (gam * inv)[None, :, None], np.einsum("ncl,ncl->c", g, xhat), np.einsum("ncl->c", g)

    else:
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    out = xhat * gam[None, :, None]
    out += beta.data[None, :, None]
    return make_node(out, (x, gamma, beta), backward, "norm")


def downsample2(x: Tensor) -> Tensor:
    """Average non-overlapping temporal pairs."""
    n, c, length = x.shape
    if length % 2:
        raise ValueError(f"downsample2 needs an even length, got {length}")
    out = x.data.reshape(n, c, length // 2, 2).mean(axis=3)
    return make_node(out, (x,), lambda g: (np.repeat(g, 2, axis=2) * 0.5,), "downsample2")


def upsample2(x: Tensor) -> Tensor:
    """Nearest-neighbour repeat of every sample."""
    n, c, length = x.shape
    out = np.repeat(x.data, 2, axis=2)
    return make_node(out, (x,), lambda g: (g.reshape(n, c, length, 2).sum(axis=3),), "upsample2")


# ---------------------------------------------------------------------------
# modules


class Module:
    training = True

    def parameters(self) -> list[tuple[str, Tensor]]:
        return []

    def buffers(self) -> list[tuple[str, np.ndarray]]:
        return []

    def children(self) -> list[Module]:
        return []

    def train(self, flag: bool = True) -> Module:
        self.training = flag
        for ch in self.children():
            ch.train(flag)
        return self

    def eval(self) -> Module:
        return self.train(False)

    def macs(self, shape: tuple[int, int]) -> tuple[int, tuple[int, int]]:
        """MACs for one sample of (channels, length) and the output shape."""
        return 0, shape

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)


def _he_uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = np.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Conv1d(Module):
    kind = "conv1d"

    def __init__(self, cin: int, cout: int, kernel: int = 1, groups: int = 1, bias: bool = False, rng=None):
        self.spec = LayerSpec(self.kind, cin, cout, kernel, groups, bias)
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = (cin // groups) * kernel
        self.weight = _he_uniform(rng, self.spec.weight_shape(), fan_in)
        self.bias = Tensor(np.zeros(cout), requires_grad=True) if bias else None

    def parameters(self):
        ps = [("weight", self.weight)]
        if self.bias is not None:
            ps.append(("bias", self.bias))
        return ps

    def forward(self, x):
        return conv1d_forward(x, self.weight, self.spec, self.bias)

    def macs(self, shape):
        c, length = shape
        if c != self.spec.in_channels:
            raise ValueError(f"{self.kind} expects {self.spec.in_channels} channels, got {c}")
        s = self.spec
        return s.out_channels * (s.in_channels // s.groups) * s.kernel * length, (s.out_channels, length)


class Deconv1d(Conv1d):
    kind = "deconv1d"

    def forward(self, x):
        return deconv1d_forward(x, self.weight, self.spec, self.bias)

    def macs(self, shape):
        c, length = shape
        if c != self.spec.in_channels:
            raise ValueError(f"deconv1d expects {self.spec.in_channels} channels, got {c}")
        s = self.spec
        return s.in_channels * (s.out_channels // s.groups) * s.kernel * length, (s.out_channels, length)


class Norm(Module):
    def __init__(self, channels: int):
        self.channels = channels
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=DTYPE)
        self.running_var = np.ones(channels, dtype=DTYPE)

    def parameters(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def buffers(self):
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]

    def forward(self, x):
        mode = "train" if self.training else "eval"
        return norm_forward(x, self.gamma, self.beta, mode, self.running_mean, self.running_var)


class ReLU(Module):
    def forward(self, x):
        return relu(x)


class Downsample2(Module):
    def forward(self, x):
        return downsample2(x)

    def macs(self, shape):
        return 0, (shape[0], shape[1] // 2)


class Upsample2(Module):
    def forward(self, x):
        return upsample2(x)

    def macs(self, shape):
        return 0, (shape[0], shape[1] * 2)


class Sequential(Module):
    def __init__(self, *layers: Module):
        self.layers = list(layers)

    def children(self):
        return self.layers

    def parameters(self):
        return [(f"{i}.{name}", p) for i, layer in enumerate(self.layers) for name, p in layer.parameters()]

    def buffers(self):
        return [(f"{i}.{name}", b) for i, layer in enumerate(self.layers) for name, b in layer.buffers()]

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x

    def macs(self, shape):
        total = 0
        for layer in self.layers:
            m, shape = layer.macs(shape)
            total += m
        return total, shape


class Residual(Module):
    """``relu(body(x) + x)``: identity shortcut added before the final activation."""

    def __init__(self, body: Sequential):
        self.body = body

    def children(self):
        return [self.body]

    def parameters(self):
        return [(f"body.{n}", p) for n, p in self.body.parameters()]

    def buffers(self):
        return [(f"body.{n}", b) for n, b in self.body.buffers()]

    def forward(self, x):
        return relu(self.body(x) + x)

    def macs(self, shape):
        return self.body.macs(shape)


def resnext_block(width: int, groups: int, rng) -> Residual:
    """Grouped bottleneck: 1x1 (width -> width/2), 1x3, 1x1 back to width."""
    half = width // 2
    return Residual(
        Sequential(
            Conv1d(width, half, 1, groups, rng=rng),
            Norm(half),
            ReLU(),
            Conv1d(half, half, 3, groups, rng=rng),
            Norm(half),
            ReLU(),
            Conv1d(half, width, 1, groups, rng=rng),
            Norm(width),
        )
    )


def resnet_deconv_block(width: int, rng) -> Residual:
    """Two full (ungrouped) 1x3 transposed convolutions."""
    return Residual(
        Sequential(
            Deconv1d(width, width, 3, rng=rng),
            Norm(width),
            ReLU(),
            Deconv1d(width, width, 3, rng=rng),
            Norm(width),
        )
    )


def param_count(network: Module | None) -> int:
    if network is None:
        return 0
    return sum(p.size for _, p in network.parameters())


def mac_count(network: Module | None, input_shape: tuple[int, int]) -> int:
    """Multiply-accumulates for one input sample of shape (channels, length).

    Convolutions and codeword distance evaluations are counted; normalization,
    activations, pooling and shortcut additions are not.
    """
    if network is None:
        return 0
    return network.macs(tuple(input_shape))[0]
