"""Layer implementations for fixed sequential networks.

Activations are channels-last: ``(N, L, C)`` for 1D stacks and
``(N, H, W, C)`` for 2D stacks. Convolutions use "valid" windows only and
may stride; pooling drops any trailing remainder. Weights keep the
conventional ``(out, in, kernel...)`` layout.

A layer's ``forward`` returns ``(out, cache)``; ``backward`` takes the
upstream gradient and that cache and returns ``(dx, grads)`` where
``grads`` lines up with ``params``.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    pass


class Layer:
    kind = "layer"
    params: list[np.ndarray]

    def __init__(self):
        self.params = []

    def output_shape(self, in_shape):
        return in_shape

    def init_params(self, in_shape, rng):
        self.params = []

    def forward(self, x, training=False, rng=None):
        raise NotImplementedError

    def backward(self, dout, cache, need_dx=True):
        raise NotImplementedError

    def hyper(self):
        """Hyperparameters, in serialization order."""
        return []

    def __repr__(self):
        args = ", ".join(str(h) for h in self.hyper())
        return f"{type(self).__name__}({args})"


def _he_uniform(rng, shape, fan_in):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


class Conv1D(Layer):
    kind = "conv1d"

    def __init__(self, out_channels, kernel, stride=1):
        super().__init__()
        if out_channels < 1 or kernel < 1 or stride < 1:
            raise ValueError("Conv1D sizes must be >= 1")
        self.out_channels = int(out_channels)
        self.kernel = int(kernel)
        self.stride = int(stride)

    def output_shape(self, in_shape):
        if len(in_shape) != 2:
            raise ShapeError(f"{self!r} expects (length, channels), got {in_shape}")
        length, _ = in_shape
        if length < self.kernel:
            raise ShapeError(f"{self!r}: input length {length} shorter than kernel")
        return ((length - self.kernel) // self.stride + 1, self.out_channels)

    def init_params(self, in_shape, rng):
        c = in_shape[1]
        w = _he_uniform(rng, (self.out_channels, c, self.kernel), c * self.kernel)
        self.params = [w, np.zeros(self.out_channels)]

    def hyper(self):
        return [self.out_channels, self.kernel, self.stride]

    def _taps(self, a, n_out):
        stop = self.stride * (n_out - 1) + 1
        return [a[:, j : j + stop : self.stride] for j in range(self.kernel)]

    def forward(self, x, training=False, rng=None):
        w, b = self.params
        n, length, c = x.shape
        n_out = (length - self.kernel) // self.stride + 1
        # im2col with (tap, channel) column order
        if c == 1:
            win = sliding_window_view(x[:, :, 0], self.kernel, axis=1)
            cols = win[:, : self.stride * (n_out - 1) + 1 : self.stride].reshape(n * n_out, -1)
        else:
            cols = np.empty((n, n_out, self.kernel, c))
            for j, v in enumerate(self._taps(x, n_out)):
                cols[:, :, j] = v
            cols = cols.reshape(n * n_out, -1)
        wmat = w.transpose(2, 1, 0).reshape(-1, self.out_channels)
        out = cols @ wmat
        out += b
        return out.reshape(n, n_out, self.out_channels), (x.shape, cols)

    def backward(self, dout, cache, need_dx=True):
        shape, cols = cache
        w, _ = self.params
        n, _, c = shape
        n_out = dout.shape[1]
        d2 = dout.reshape(-1, self.out_channels)
        dw = (cols.T @ d2).reshape(self.kernel, c, self.out_channels).transpose(2, 1, 0)
        db = d2.sum(axis=0)
        dx = None
        if need_dx:
            wmat = w.transpose(2, 1, 0).reshape(-1, self.out_channels)
            dcols = (d2 @ wmat.T).reshape(n, n_out, self.kernel, c)
            dx = np.zeros(shape)
            for j, v in enumerate(self._taps(dx, n_out)):
                v += dcols[:, :, j]
        return dx, [np.ascontiguousarray(dw), db]


class Conv2D(Layer):
    kind = "conv2d"

    def __init__(self, out_channels, kernel_hw, stride_hw=(1, 1)):
        super().__init__()
        kh, kw = kernel_hw
        sh, sw = stride_hw
        if min(out_channels, kh, kw, sh, sw) < 1:
            raise ValueError("Conv2D sizes must be >= 1")
        self.out_channels = int(out_channels)
        self.kernel_hw = (int(kh), int(kw))
        self.stride_hw = (int(sh), int(sw))

    def output_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"{self!r} expects (height, width, channels), got {in_shape}")
        h, w, _ = in_shape
        kh, kw = self.kernel_hw
        sh, sw = self.stride_hw
        if h < kh or w < kw:
            raise ShapeError(f"{self!r}: input {h}x{w} smaller than kernel {kh}x{kw}")
        return ((h - kh) // sh + 1, (w - kw) // sw + 1, self.out_channels)

    def init_params(self, in_shape, rng):
        c = in_shape[2]
        kh, kw = self.kernel_hw
        w = _he_uniform(rng, (self.out_channels, c, kh, kw), c * kh * kw)
        self.params = [w, np.zeros(self.out_channels)]

    def hyper(self):
        return [self.out_channels, *self.kernel_hw, *self.stride_hw]

    def _taps(self, a, ho, wo):
        kh, kw = self.kernel_hw
        sh, sw = self.stride_hw
        hstop = sh * (ho - 1) + 1
        wstop = sw * (wo - 1) + 1
        return [a[:, i : i + hstop : sh, j : j + wstop : sw] for i in range(kh) for j in range(kw)]

    def _wmat(self):
        # rows ordered (tap_h, tap_w, channel) to match the im2col columns
        return self.params[0].transpose(2, 3, 1, 0).reshape(-1, self.out_channels)

    def forward(self, x, training=False, rng=None):
        _, b = self.params
        n, h, wd, c = x.shape
        kh, kw = self.kernel_hw
        sh, sw = self.stride_hw
        ho = (h - kh) // sh + 1
        wo = (wd - kw) // sw + 1
        if c == 1:
            win = sliding_window_view(x[..., 0], (kh, kw), axis=(1, 2))
            win = win[:, : sh * (ho - 1) + 1 : sh, : sw * (wo - 1) + 1 : sw]
            cols = win.reshape(n * ho * wo, -1)
        else:
            cols = np.empty((n, ho, wo, kh * kw, c))
            for t, v in enumerate(self._taps(x, ho, wo)):
                cols[:, :, :, t] = v
            cols = cols.reshape(n * ho * wo, -1)
        out = cols @ self._wmat()
        out += b
        return out.reshape(n, ho, wo, self.out_channels), (x.shape, cols)

    def backward(self, dout, cache, need_dx=True):
        shape, cols = cache
        w, _ = self.params
        n, _, _, c = shape
        kh, kw = self.kernel_hw
        _, ho, wo, _ = dout.shape
        d2 = dout.reshape(-1, self.out_channels)
        dw = (cols.T @ d2).reshape(kh, kw, c, self.out_channels).transpose(3, 2, 0, 1)
        db = d2.sum(axis=0)
        dx = None
        if need_dx:
            dcols = (d2 @ self._wmat().T).reshape(n, ho, wo, kh * kw, c)
            dx = np.zeros(shape)
            for t, v in enumerate(self._taps(dx, ho, wo)):
                v += dcols[:, :, :, t]
        return dx, [np.ascontiguousarray(dw), db]


def _pool_forward(views):
    out = views[0]
    for v in views[1:]:
        out = np.maximum(out, v)
    return out


def _pool_backward(dout, views, out, dx_views):
    # gradient goes to the first tap that attains the maximum
    if len(views) == 2:
        first = views[0] == out
        np.multiply(dout, first, out=dx_views[0])
        np.multiply(dout, ~first, out=dx_views[1])
        return
    taken = np.zeros(out.shape, dtype=bool)
    for v, dxv in zip(views, dx_views):
        hit = (v == out) & ~taken
        np.multiply(dout, hit, out=dxv)
        taken |= hit


class MaxPool1D(Layer):
    kind = "maxpool1d"

    def __init__(self, width):
        super().__init__()
        if width < 1:
            raise ValueError("pool width must be >= 1")
        self.width = int(width)

    def output_shape(self, in_shape):
        if len(in_shape) != 2:
            raise ShapeError(f"{self!r} expects (length, channels), got {in_shape}")
        length, c = in_shape
        if length < self.width:
            raise ShapeError(f"{self!r}: input length {length} shorter than pool width")
        return (length // self.width, c)

    def hyper(self):
        return [self.width]

    def _taps(self, x):
        p = self.width
        lp = x.shape[1] // p
        return [x[:, j : lp * p : p] for j in range(p)]

    def forward(self, x, training=False, rng=None):
        out = _pool_forward(self._taps(x))
        return out, (x, out)

    def backward(self, dout, cache, need_dx=True):
        x, out = cache
        dx = np.zeros(x.shape)
        _pool_backward(dout, self._taps(x), out, self._taps(dx))
        return dx, []


class MaxPool2D(Layer):
    kind = "maxpool2d"

    def __init__(self, hw):
        super().__init__()
        ph, pw = hw
        if ph < 1 or pw < 1:
            raise ValueError("pool size must be >= 1")
        self.hw = (int(ph), int(pw))

    def output_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"{self!r} expects (height, width, channels), got {in_shape}")
        h, w, c = in_shape
        ph, pw = self.hw
        if h < ph or w < pw:
            raise ShapeError(f"{self!r}: input {h}x{w} smaller than pool")
        return (h // ph, w // pw, c)

    def hyper(self):
        return list(self.hw)

    def _taps(self, x):
        # row-major order inside each block decides tie-breaking
        ph, pw = self.hw
        hp, wp = x.shape[1] // ph, x.shape[2] // pw
        return [x[:, i : hp * ph : ph, j : wp * pw : pw] for i in range(ph) for j in range(pw)]

    def forward(self, x, training=False, rng=None):
        out = _pool_forward(self._taps(x))
        return out, (x, out)

    def backward(self, dout, cache, need_dx=True):
        x, out = cache
        dx = np.zeros(x.shape)
        _pool_backward(dout, self._taps(x), out, self._taps(dx))
        return dx, []


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, training=False, rng=None):
        out = np.maximum(x, 0.0)
        return out, out

    def backward(self, dout, cache, need_dx=True):
        return dout * (cache > 0), []


def keep_mask(rng, shape, rate):
    """Boolean mask keeping each unit with probability ``1 - rate``.

    Uses raw 32-bit draws against an integer threshold, which is exact to
    2**-32 and about twice as fast as drawing floats.
    """
    n = int(np.prod(shape))
    bits = rng.bit_generator.random_raw((n + 1) // 2).view(np.uint32)[:n]
    return (bits >= np.uint32(min(round(rate * 2.0**32), 2**32 - 1))).reshape(shape)


class Dropout(Layer):
    """Inverted dropout: kept units are scaled by 1/(1-rate) while training."""

    kind = "dropout"

    def __init__(self, rate):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")
        self.rate = float(rate)

    def hyper(self):
        return [self.rate]

    def forward(self, x, training=False, rng=None):
        if not training or self.rate == 0.0:
            return x, None
        if rng is None:
            raise ValueError("training-mode dropout needs an rng")
        mask = keep_mask(rng, x.shape, self.rate) * (1.0 / (1.0 - self.rate))
        return x * mask, mask

    def backward(self, dout, cache, need_dx=True):
        if cache is None:
            return dout, []
        return dout * cache, []


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, training=False, rng=None):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dout, cache, need_dx=True):
        return dout.reshape(cache), []


class Dense(Layer):
    kind = "dense"

    def __init__(self, out_units):
        super().__init__()
        if out_units < 1:
            raise ValueError("Dense needs at least one unit")
        self.out_units = int(out_units)

    def output_shape(self, in_shape):
        if len(in_shape) != 1:
            raise ShapeError(f"{self!r} expects a flat input, got {in_shape}")
        return (self.out_units,)

    def init_params(self, in_shape, rng):
        fan_in = in_shape[0]
        self.params = [
            _he_uniform(rng, (fan_in, self.out_units), fan_in),
            np.zeros(self.out_units),
        ]

    def hyper(self):
        return [self.out_units]

    def forward(self, x, training=False, rng=None):
        w, b = self.params
        return x @ w + b, x

    def backward(self, dout, cache, need_dx=True):
        w, _ = self.params
        x = cache
        dx = dout @ w.T if need_dx else None
        return dx, [x.T @ dout, dout.sum(axis=0)]
