"""Differentiable layers with explicit caches.

Every layer is a pure parameter holder: forward(x) returns (y, cache) and
backward(cache, dy, grads) returns dx, accumulating parameter gradients into
the per-call GradientStore.  No layer mutates itself during inference, so a
built model can be used concurrently across inputs.

All math is float64.  ReLU uses subgradient 0 at the kink; MaxPool routes the
gradient to the first maximum within a window.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

__all__ = [
    "Parameter",
    "GradientStore",
    "Layer",
    "Linear",
    "ReLU",
    "Sigmoid",
    "Conv2D",
    "MaxPool2D",
    "LayerNorm",
    "MultiHeadSelfAttention",
    "SinusoidalPositionalEncoding",
    "GRUCell",
    "BiGRU",
    "GlobalMeanPool",
    "AddChannelDim",
    "ConvToTimeSequence",
    "ConvToPatchSequence",
    "TransformerEncoderLayer",
    "ResidualConvBlock",
    "sigmoid",
    "build_layer",
    "LAYER_KINDS",
]

# Scores stay strictly inside (0, 1) even when the logit saturates.
_SCORE_LO = np.nextafter(0.0, 1.0)
_SCORE_HI = np.nextafter(1.0, 0.0)


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class Parameter:
    """A named trainable array."""

    __slots__ = ("name", "value")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = np.asarray(value, dtype=np.float64)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.value.shape})"


class GradientStore:
    """Parameter gradients for one backward pass (or an accumulated batch)."""

    __slots__ = ("_grads",)

    def __init__(self):
        self._grads = {}

    def add(self, param: Parameter, grad: np.ndarray) -> None:
        key = id(param)
        if key in self._grads:
            self._grads[key] = self._grads[key] + grad
        else:
            self._grads[key] = grad

    def get(self, param: Parameter):
        return self._grads.get(id(param))


class Layer:
    def local_params(self) -> list[tuple[str, Parameter]]:
        return []

    def children(self) -> list[tuple[str, "Layer"]]:
        return []

    def forward(self, x):
        raise NotImplementedError

    def backward(self, cache, dy, grads: GradientStore | None):
        raise NotImplementedError

    def describe(self) -> dict:
        raise NotImplementedError


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        a, b = v
        return int(a), int(b)
    return int(v), int(v)


class Linear(Layer):
    """Affine map on the last axis; accepts (n_in,) or (T, n_in)."""

    def __init__(self, n_in: int, n_out: int, rng=None):
        rng = rng or np.random.default_rng(0)
        scale = np.sqrt(2.0 / (n_in + n_out))
        self.n_in, self.n_out = n_in, n_out
        self.weight = Parameter("weight", rng.normal(0.0, scale, (n_in, n_out)))
        self.bias = Parameter("bias", np.zeros(n_out))

    def local_params(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def forward(self, x):
        if x.shape[-1] != self.n_in:
            raise ValueError(f"expected last dim {self.n_in}, got {x.shape}")
        return x @ self.weight.value + self.bias.value, x

    def backward(self, cache, dy, grads):
        x = cache
        if grads is not None:
            if x.ndim == 1:
                grads.add(self.weight, np.outer(x, dy))
                grads.add(self.bias, dy)
            else:
                grads.add(self.weight, x.T @ dy)
                grads.add(self.bias, dy.sum(axis=0))
        return dy @ self.weight.value.T

    def describe(self):
        return {"kind": "linear", "n_in": self.n_in, "n_out": self.n_out}

    @classmethod
    def from_description(cls, desc):
        return cls(desc["n_in"], desc["n_out"])


class ReLU(Layer):
    def forward(self, x):
        mask = x > 0
        return np.where(mask, x, 0.0), mask

    def backward(self, cache, dy, grads):
        return np.where(cache, dy, 0.0)

    def describe(self):
        return {"kind": "relu"}

    @classmethod
    def from_description(cls, desc):
        return cls()


class Sigmoid(Layer):
    """Elementwise logistic squashing, clipped to the open interval (0, 1)."""

    def forward(self, x):
        s = np.clip(sigmoid(x), _SCORE_LO, _SCORE_HI)
        return s, s

    def backward(self, cache, dy, grads):
        s = cache
        return dy * s * (1.0 - s)

    def describe(self):
        return {"kind": "sigmoid"}

    @classmethod
    def from_description(cls, desc):
        return cls()


class Conv2D(Layer):
    """2-D convolution on (C, H, W) input via im2col."""

    def __init__(self, in_ch: int, out_ch: int, kernel, stride=1, padding=0, rng=None):
        rng = rng or np.random.default_rng(0)
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kernel = _pair(kernel)
        self.stride = _pair(stride)
        self.padding = _pair(padding)
        kh, kw = self.kernel
        fan_in = in_ch * kh * kw
        self.weight = Parameter(
            "weight", rng.normal(0.0, np.sqrt(2.0 / fan_in), (out_ch, in_ch, kh, kw))
        )
        self.bias = Parameter("bias", np.zeros(out_ch))

    def local_params(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def _out_hw(self, h: int, w: int) -> tuple[int, int]:
        kh, kw = self.kernel
        sh, sw = self.stride
        ph, pw = self.padding
        ho = (h + 2 * ph - kh) // sh + 1
        wo = (w + 2 * pw - kw) // sw + 1
        if ho < 1 or wo < 1:
            raise ValueError(f"input {h}x{w} too small for kernel {self.kernel}")
        return ho, wo

    def forward(self, x):
        c, h, w = x.shape
        if c != self.in_ch:
            raise ValueError(f"expected {self.in_ch} channels, got {c}")
        kh, kw = self.kernel
        sh, sw = self.stride
        ph, pw = self.padding
        ho, wo = self._out_hw(h, w)
        xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x
        win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
        win = win[:, ::sh, ::sw][:, :ho, :wo]  # (C, ho, wo, kh, kw)
        cols = win.transpose(0, 3, 4, 1, 2).reshape(c * kh * kw, ho * wo)
        w_mat = self.weight.value.reshape(self.out_ch, -1)
        y = (w_mat @ cols + self.bias.value[:, None]).reshape(self.out_ch, ho, wo)
        return y, (cols, x.shape)

    def backward(self, cache, dy, grads):
        cols, x_shape = cache
        c, h, w = x_shape
        kh, kw = self.kernel
        sh, sw = self.stride
        ph, pw = self.padding
        _, ho, wo = dy.shape
        dy_mat = dy.reshape(self.out_ch, -1)
        if grads is not None:
            grads.add(self.weight, (dy_mat @ cols.T).reshape(self.weight.value.shape))
            grads.add(self.bias, dy_mat.sum(axis=1))
        w_mat = self.weight.value.reshape(self.out_ch, -1)
        dcols = (w_mat.T @ dy_mat).reshape(c, kh, kw, ho, wo)
        dxp = np.zeros((c, h + 2 * ph, w + 2 * pw))
        for i in range(kh):
            for j in range(kw):
                dxp[:, i : i + sh * ho : sh, j : j + sw * wo : sw] += dcols[:, i, j]
        return dxp[:, ph : ph + h, pw : pw + w]

    def describe(self):
        return {
            "kind": "conv2d",
            "in_ch": self.in_ch,
            "out_ch": self.out_ch,
            "kernel": list(self.kernel),
            "stride": list(self.stride),
            "padding": list(self.padding),
        }

    @classmethod
    def from_description(cls, desc):
        return cls(
            desc["in_ch"],
            desc["out_ch"],
            tuple(desc["kernel"]),
            tuple(desc["stride"]),
            tuple(desc["padding"]),
        )


class MaxPool2D(Layer):
    """k x k max pooling with stride k; trailing remainder rows/cols dropped."""

    def __init__(self, k: int):
        if k < 1:
            raise ValueError(f"pool size must be >= 1, got {k}")
        self.k = int(k)

    def forward(self, x):
        c, h, w = x.shape
        k = self.k
        ho, wo = h // k, w // k
        if ho < 1 or wo < 1:
            raise ValueError(f"input {h}x{w} too small for {k}x{k} pooling")
        xv = (
            x[:, : ho * k, : wo * k]
            .reshape(c, ho, k, wo, k)
            .transpose(0, 1, 3, 2, 4)
            .reshape(c, ho, wo, k * k)
        )
        idx = xv.argmax(axis=3)
        y = np.take_along_axis(xv, idx[..., None], axis=3)[..., 0]
        return y, (idx, x.shape)

    def backward(self, cache, dy, grads):
        idx, x_shape = cache
        c, h, w = x_shape
        k = self.k
        _, ho, wo = dy.shape
        dxv = np.zeros((c, ho, wo, k * k))
        np.put_along_axis(dxv, idx[..., None], dy[..., None], axis=3)
        dx = np.zeros(x_shape)
        dx[:, : ho * k, : wo * k] = (
            dxv.reshape(c, ho, wo, k, k).transpose(0, 1, 3, 2, 4).reshape(c, ho * k, wo * k)
        )
        return dx

    def describe(self):
        return {"kind": "maxpool2d", "k": self.k}

    @classmethod
    def from_description(cls, desc):
        return cls(desc["k"])


class LayerNorm(Layer):
    """Normalization over the last axis with learned gain and shift."""

    EPS = 1e-5

    def __init__(self, dim: int):
        self.dim = int(dim)
        self.gain = Parameter("gain", np.ones(dim))
        self.shift = Parameter("shift", np.zeros(dim))

    def local_params(self):
        return [("gain", self.gain), ("shift", self.shift)]

    def forward(self, x):
        if x.shape[-1] != self.dim:
            raise ValueError(f"expected last dim {self.dim}, got {x.shape}")
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + self.EPS)
        xhat = (x - mu) * inv_std
        y = self.gain.value * xhat + self.shift.value
        return y, (xhat, inv_std)

    def backward(self, cache, dy, grads):
        xhat, inv_std = cache
        if grads is not None:
            axes = tuple(range(dy.ndim - 1))
            grads.add(self.gain, (dy * xhat).sum(axis=axes))
            grads.add(self.shift, dy.sum(axis=axes))
        dxhat = dy * self.gain.value
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        return (dxhat - m1 - xhat * m2) * inv_std

    def describe(self):
        return {"kind": "layernorm", "dim": self.dim}

    @classmethod
    def from_description(cls, desc):
        return cls(desc["dim"])


class MultiHeadSelfAttention(Layer):
    """Softmax self-attention over a (T, dim) sequence."""

    def __init__(self, dim: int, heads: int, rng=None):
        if dim % heads != 0:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        rng = rng or np.random.default_rng(0)
        self.dim, self.heads = int(dim), int(heads)
        self.head_dim = dim // heads
        scale = np.sqrt(2.0 / (dim + dim))
        for name in ("wq", "wk", "wv", "wo"):
            setattr(self, name, Parameter(name, rng.normal(0.0, scale, (dim, dim))))
        for name in ("bq", "bk", "bv", "bo"):
            setattr(self, name, Parameter(name, np.zeros(dim)))

    def local_params(self):
        return [(n, getattr(self, n)) for n in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")]

    def _split(self, a, t):
        return a.reshape(t, self.heads, self.head_dim).transpose(1, 0, 2)

    def forward(self, x):
        t, d = x.shape
        if d != self.dim:
            raise ValueError(f"expected dim {self.dim}, got {d}")
        q = self._split(x @ self.wq.value + self.bq.value, t)
        k = self._split(x @ self.wk.value + self.bk.value, t)
        v = self._split(x @ self.wv.value + self.bv.value, t)
        scale = self.head_dim**-0.5
        scores = q @ k.transpose(0, 2, 1) * scale
        scores -= scores.max(axis=-1, keepdims=True)
        attn = np.exp(scores)
        attn /= attn.sum(axis=-1, keepdims=True)
        ctx = (attn @ v).transpose(1, 0, 2).reshape(t, d)
        y = ctx @ self.wo.value + self.bo.value
        return y, (x, q, k, v, attn, ctx)

    def backward(self, cache, dy, grads):
        x, q, k, v, attn, ctx = cache
        t, d = x.shape
        scale = self.head_dim**-0.5
        if grads is not None:
            grads.add(self.wo, ctx.T @ dy)
            grads.add(self.bo, dy.sum(axis=0))
        dctx = (dy @ self.wo.value.T).reshape(t, self.heads, self.head_dim).transpose(1, 0, 2)
        dattn = dctx @ v.transpose(0, 2, 1)
        dv = attn.transpose(0, 2, 1) @ dctx
        dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
        dq = dscores @ k * scale
        dk = dscores.transpose(0, 2, 1) @ q * scale

        def merge(a):
            return a.transpose(1, 0, 2).reshape(t, d)

        dq, dk, dv = merge(dq), merge(dk), merge(dv)
        if grads is not None:
            grads.add(self.wq, x.T @ dq)
            grads.add(self.bq, dq.sum(axis=0))
            grads.add(self.wk, x.T @ dk)
            grads.add(self.bk, dk.sum(axis=0))
            grads.add(self.wv, x.T @ dv)
            grads.add(self.bv, dv.sum(axis=0))
        return dq @ self.wq.value.T + dk @ self.wk.value.T + dv @ self.wv.value.T

    def describe(self):
        return {"kind": "mhsa", "dim": self.dim, "heads": self.heads}

    @classmethod
    def from_description(cls, desc):
        return cls(desc["dim"], desc["heads"])


@lru_cache(maxsize=64)
def _pe_table(t: int, dim: int) -> np.ndarray:
    pos = np.arange(t, dtype=np.float64)[:, None]
    freq = 10000.0 ** (-np.arange(0, dim, 2, dtype=np.float64) / dim)
    table = np.zeros((t, dim))
    table[:, 0::2] = np.sin(pos * freq)
    table[:, 1::2] = np.cos(pos * freq)
    table.setflags(write=False)
    return table


class SinusoidalPositionalEncoding(Layer):
    """Adds the sin/cos position table, computed per input length."""

    def __init__(self, dim: int):
        if dim % 2 != 0:
            raise ValueError(f"dim must be even, got {dim}")
        self.dim = int(dim)

    def forward(self, x):
        t, d = x.shape
        if d != self.dim:
            raise ValueError(f"expected dim {self.dim}, got {d}")
        return x + _pe_table(t, d), None

    def backward(self, cache, dy, grads):
        return dy

    def describe(self):
        return {"kind": "sinusoidal_pe", "dim": self.dim}

    @classmethod
    def from_description(cls, desc):
        return cls(desc["dim"])


class GRUCell(Layer):
    """Gated recurrent cell; as a layer it scans a (T, n_in) sequence from h=0.

    Gate layout in the stacked weight columns is (reset, update, candidate).
    """

    def __init__(self, n_in: int, n_hidden: int, rng=None):
        rng = rng or np.random.default_rng(0)
        self.n_in, self.n_hidden = int(n_in), int(n_hidden)
        k = 1.0 / np.sqrt(n_hidden)
        self.w_ih = Parameter("w_ih", rng.uniform(-k, k, (n_in, 3 * n_hidden)))
        self.w_hh = Parameter("w_hh", rng.uniform(-k, k, (n_hidden, 3 * n_hidden)))
        self.b_ih = Parameter("b_ih", np.zeros(3 * n_hidden))
        self.b_hh = Parameter("b_hh", np.zeros(3 * n_hidden))

    def local_params(self):
        return [
            ("w_ih", self.w_ih),
            ("w_hh", self.w_hh),
            ("b_ih", self.b_ih),
            ("b_hh", self.b_hh),
        ]

    def step(self, x_t, h_prev):
        nh = self.n_hidden
        gi = x_t @ self.w_ih.value + self.b_ih.value
        gh = h_prev @ self.w_hh.value + self.b_hh.value
        r = sigmoid(gi[:nh] + gh[:nh])
        z = sigmoid(gi[nh : 2 * nh] + gh[nh : 2 * nh])
        hn = gh[2 * nh :]
        n = np.tanh(gi[2 * nh :] + r * hn)
        h_t = (1.0 - z) * n + z * h_prev
        return h_t, (x_t, h_prev, r, z, n, hn)

    def forward(self, x):
        t = x.shape[0]
        h = np.zeros(self.n_hidden)
        ys = np.empty((t, self.n_hidden))
        caches = []
        for i in range(t):
            h, cache = self.step(x[i], h)
            ys[i] = h
            caches.append(cache)
        return ys, caches

    def backward(self, caches, dy, grads):
        nh = self.n_hidden
        t = len(caches)
        dx = np.empty((t, self.n_in))
        dh_carry = np.zeros(nh)
        d_wih = np.zeros_like(self.w_ih.value)
        d_whh = np.zeros_like(self.w_hh.value)
        d_bih = np.zeros_like(self.b_ih.value)
        d_bhh = np.zeros_like(self.b_hh.value)
        for i in range(t - 1, -1, -1):
            x_t, h_prev, r, z, n, hn = caches[i]
            dh = dy[i] + dh_carry
            dz = dh * (h_prev - n)
            dn = dh * (1.0 - z)
            dh_prev = dh * z
            dn_pre = dn * (1.0 - n * n)
            dr = dn_pre * hn
            dhn = dn_pre * r
            dz_pre = dz * z * (1.0 - z)
            dr_pre = dr * r * (1.0 - r)
            dgi = np.concatenate([dr_pre, dz_pre, dn_pre])
            dgh = np.concatenate([dr_pre, dz_pre, dhn])
            d_wih += np.outer(x_t, dgi)
            d_bih += dgi
            d_whh += np.outer(h_prev, dgh)
            d_bhh += dgh
            dx[i] = dgi @ self.w_ih.value.T
            dh_carry = dh_prev + dgh @ self.w_hh.value.T
        if grads is not None:
            grads.add(self.w_ih, d_wih)
            grads.add(self.w_hh, d_whh)
            grads.add(self.b_ih, d_bih)
            grads.add(self.b_hh, d_bhh)
        return dx

    def describe(self):
        return {"kind": "gru_cell", "n_in": self.n_in, "n_hidden": self.n_hidden}

    @classmethod
    def from_description(cls, desc):
        return cls(desc["n_in"], desc["n_hidden"])


class BiGRU(Layer):
    """Bidirectional GRU: forward and time-reversed scans, concatenated."""

    def __init__(self, n_in: int, n_hidden: int, rng=None):
        rng = rng or np.random.default_rng(0)
        self.n_in, self.n_hidden = int(n_in), int(n_hidden)
        self.fwd = GRUCell(n_in, n_hidden, rng)
        self.bwd = GRUCell(n_in, n_hidden, rng)

    def children(self):
        return [("fwd", self.fwd), ("bwd", self.bwd)]

    def forward(self, x):
        yf, cf = self.fwd.forward(x)
        yb, cb = self.bwd.forward(x[::-1])
        return np.concatenate([yf, yb[::-1]], axis=1), (cf, cb)

    def backward(self, cache, dy, grads):
        cf, cb = cache
        nh = self.n_hidden
        dxf = self.fwd.backward(cf, dy[:, :nh], grads)
        dxb = self.bwd.backward(cb, dy[:, nh:][::-1], grads)
        return dxf + dxb[::-1]

    def describe(self):
        return {"kind": "bigru", "n_in": self.n_in, "n_hidden": self.n_hidden}

    @classmethod
    def from_description(cls, desc):
        return cls(desc["n_in"], desc["n_hidden"])


class GlobalMeanPool(Layer):
    """Mean over time for (T, D) input, over space for (C, H, W) input."""

    def forward(self, x):
        if x.ndim == 2:
            return x.mean(axis=0), x.shape
        if x.ndim == 3:
            return x.mean(axis=(1, 2)), x.shape
        raise ValueError(f"expected 2-D or 3-D input, got shape {x.shape}")

    def backward(self, cache, dy, grads):
        shape = cache
        if len(shape) == 2:
            return np.broadcast_to(dy / shape[0], shape).copy()
        count = shape[1] * shape[2]
        return np.broadcast_to((dy / count)[:, None, None], shape).copy()

    def describe(self):
        return {"kind": "global_mean_pool"}

    @classmethod
    def from_description(cls, desc):
        return cls()


class AddChannelDim(Layer):
    """(H, W) -> (1, H, W) so spectrograms enter conv stacks as one channel."""

    def forward(self, x):
        if x.ndim != 2:
            raise ValueError(f"expected 2-D input, got shape {x.shape}")
        return x[None, :, :], None

    def backward(self, cache, dy, grads):
        return dy[0]

    def describe(self):
        return {"kind": "add_channel"}

    @classmethod
    def from_description(cls, desc):
        return cls()


class ConvToTimeSequence(Layer):
    """(C, H, W) -> (W, C*H): one feature vector per time step."""

    def forward(self, x):
        c, h, w = x.shape
        return x.transpose(2, 0, 1).reshape(w, c * h), x.shape

    def backward(self, cache, dy, grads):
        c, h, w = cache
        return dy.reshape(w, c, h).transpose(1, 2, 0)

    def describe(self):
        return {"kind": "conv_to_time_seq"}

    @classmethod
    def from_description(cls, desc):
        return cls()


class ConvToPatchSequence(Layer):
    """(C, H, W) -> (H*W, C): one token per spatial position, raster order."""

    def forward(self, x):
        c, h, w = x.shape
        return x.transpose(1, 2, 0).reshape(h * w, c), x.shape

    def backward(self, cache, dy, grads):
        c, h, w = cache
        return dy.reshape(h, w, c).transpose(2, 0, 1)

    def describe(self):
        return {"kind": "conv_to_patch_seq"}

    @classmethod
    def from_description(cls, desc):
        return cls()


class TransformerEncoderLayer(Layer):
    """Pre-norm block: x + Attn(LN(x)), then + MLP(LN(.))."""

    def __init__(self, dim: int, heads: int, mlp_dim: int, rng=None):
        rng = rng or np.random.default_rng(0)
        self.dim, self.heads, self.mlp_dim = int(dim), int(heads), int(mlp_dim)
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.lin1 = Linear(dim, mlp_dim, rng)
        self.act = ReLU()
        self.lin2 = Linear(mlp_dim, dim, rng)

    def children(self):
        return [
            ("norm1", self.norm1),
            ("attn", self.attn),
            ("norm2", self.norm2),
            ("lin1", self.lin1),
            ("act", self.act),
            ("lin2", self.lin2),
        ]

    def forward(self, x):
        a1, c_n1 = self.norm1.forward(x)
        a2, c_at = self.attn.forward(a1)
        h = x + a2
        b1, c_n2 = self.norm2.forward(h)
        b2, c_l1 = self.lin1.forward(b1)
        b3, c_r = self.act.forward(b2)
        b4, c_l2 = self.lin2.forward(b3)
        return h + b4, (c_n1, c_at, c_n2, c_l1, c_r, c_l2)

    def backward(self, cache, dy, grads):
        c_n1, c_at, c_n2, c_l1, c_r, c_l2 = cache
        d = self.lin2.backward(c_l2, dy, grads)
        d = self.act.backward(c_r, d, grads)
        d = self.lin1.backward(c_l1, d, grads)
        dh = dy + self.norm2.backward(c_n2, d, grads)
        d = self.attn.backward(c_at, dh, grads)
        return dh + self.norm1.backward(c_n1, d, grads)

    def describe(self):
        return {
            "kind": "transformer_block",
            "dim": self.dim,
            "heads": self.heads,
            "mlp_dim": self.mlp_dim,
        }

    @classmethod
    def from_description(cls, desc):
        return cls(desc["dim"], desc["heads"], desc["mlp_dim"])


class ResidualConvBlock(Layer):
    """conv-relu-conv plus a (projected) skip, ReLU after the sum."""

    def __init__(self, in_ch: int, out_ch: int, stride: int = 1, rng=None):
        rng = rng or np.random.default_rng(0)
        self.in_ch, self.out_ch, self.stride = int(in_ch), int(out_ch), int(stride)
        self.conv1 = Conv2D(in_ch, out_ch, 3, stride, 1, rng)
        self.act1 = ReLU()
        self.conv2 = Conv2D(out_ch, out_ch, 3, 1, 1, rng)
        self.proj = None
        if in_ch != out_ch or stride != 1:
            self.proj = Conv2D(in_ch, out_ch, 1, stride, 0, rng)
        self.act2 = ReLU()

    def children(self):
        kids = [("conv1", self.conv1), ("act1", self.act1), ("conv2", self.conv2)]
        if self.proj is not None:
            kids.append(("proj", self.proj))
        kids.append(("act2", self.act2))
        return kids

    def forward(self, x):
        m1, c1 = self.conv1.forward(x)
        r1, cr1 = self.act1.forward(m1)
        m2, c2 = self.conv2.forward(r1)
        if self.proj is not None:
            s, cs = self.proj.forward(x)
        else:
            s, cs = x, None
        y, cr2 = self.act2.forward(m2 + s)
        return y, (c1, cr1, c2, cs, cr2)

    def backward(self, cache, dy, grads):
        c1, cr1, c2, cs, cr2 = cache
        dz = self.act2.backward(cr2, dy, grads)
        d = self.conv2.backward(c2, dz, grads)
        d = self.act1.backward(cr1, d, grads)
        dx = self.conv1.backward(c1, d, grads)
        if self.proj is not None:
            dx = dx + self.proj.backward(cs, dz, grads)
        else:
            dx = dx + dz
        return dx

    def describe(self):
        return {
            "kind": "residual_conv_block",
            "in_ch": self.in_ch,
            "out_ch": self.out_ch,
            "stride": self.stride,
        }

    @classmethod
    def from_description(cls, desc):
        return cls(desc["in_ch"], desc["out_ch"], desc["stride"])


LAYER_KINDS = {
    "linear": Linear,
    "relu": ReLU,
    "sigmoid": Sigmoid,
    "conv2d": Conv2D,
    "maxpool2d": MaxPool2D,
    "layernorm": LayerNorm,
    "mhsa": MultiHeadSelfAttention,
    "sinusoidal_pe": SinusoidalPositionalEncoding,
    "gru_cell": GRUCell,
    "bigru": BiGRU,
    "global_mean_pool": GlobalMeanPool,
    "add_channel": AddChannelDim,
    "conv_to_time_seq": ConvToTimeSequence,
    "conv_to_patch_seq": ConvToPatchSequence,
    "transformer_block": TransformerEncoderLayer,
    "residual_conv_block": ResidualConvBlock,
}


def build_layer(desc: dict) -> Layer:
    """Reconstruct a layer from its description (parameters set separately)."""
    kind = desc.get("kind")
    if kind not in LAYER_KINDS:
        raise ValueError(f"unknown layer kind {kind!r}")
    return LAYER_KINDS[kind].from_description(desc)
