"""Differentiable classical layers in plain numpy.

Every layer caches what its backward pass needs during forward and exposes
``params`` / ``grads`` dictionaries so an optimizer can update weights in
place.  Image tensors use the (batch, channels, height, width) layout and
float64 throughout.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..validation import ShapeMismatchError, UsageError, shape_mismatch


class Layer:
    """Base class: a differentiable op with optional weights."""

    def __init__(self) -> None:
        self.frozen = False
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._cache = None

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _take_cache(self):
        if self._cache is None:
            raise UsageError(f"{type(self).__name__}.backward called before forward")
        cache, self._cache = self._cache, None
        return cache

    def set_frozen(self, frozen: bool) -> None:
        self.frozen = frozen

    def __call__(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        return self.forward(x, train=train)


def _as4d(name: str, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise ShapeMismatchError(f"{name}: expected (batch, channels, h, w), got shape {x.shape}")
    return x


class Dense(Layer):
    """Affine map x @ W + b on (batch, n_in) inputs."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator | None = None,
                 weight_scale: float | None = None) -> None:
        super().__init__()
        if n_in <= 0 or n_out <= 0:
            raise ValueError(f"Dense needs positive sizes, got ({n_in}, {n_out})")
        rng = rng or np.random.default_rng()
        scale = weight_scale if weight_scale is not None else np.sqrt(2.0 / n_in)
        self.n_in, self.n_out = n_in, n_out
        self.params = {
            "W": rng.normal(0.0, scale, size=(n_in, n_out)),
            "b": np.zeros(n_out),
        }

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise shape_mismatch("Dense input", ("batch", self.n_in), x.shape)
        self._cache = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dout: np.ndarray) -> np.ndarray:
        x = self._take_cache()
        dout = np.asarray(dout, dtype=np.float64)
        self.grads = {"W": x.T @ dout, "b": dout.sum(axis=0)}
        return dout @ self.params["W"].T


class ReLU(Layer):
    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        mask = x > 0
        self._cache = mask
        return x * mask

    def backward(self, dout: np.ndarray) -> np.ndarray:
        mask = self._take_cache()
        return np.asarray(dout) * mask


class Tanh(Layer):
    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        out = np.tanh(np.asarray(x, dtype=np.float64))
        self._cache = out
        return out

    def backward(self, dout: np.ndarray) -> np.ndarray:
        out = self._take_cache()
        return np.asarray(dout) * (1.0 - out * out)


class Flatten(Layer):
    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        shape = self._take_cache()
        return np.asarray(dout).reshape(shape)


class Conv2D(Layer):
    """2-d convolution (cross-correlation) with square kernels."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 stride: int = 1, padding: int = 0,
                 rng: np.random.Generator | None = None) -> None:
        super().__init__()
        if kernel_size <= 0 or stride <= 0 or padding < 0:
            raise ValueError(
                f"bad Conv2D hyperparams: kernel={kernel_size}, stride={stride}, padding={padding}")
        rng = rng or np.random.default_rng()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        fan_in = in_channels * kernel_size * kernel_size
        self.params = {
            "W": rng.normal(0.0, np.sqrt(2.0 / fan_in),
                            size=(out_channels, in_channels, kernel_size, kernel_size)),
            "b": np.zeros(out_channels),
        }

    def _windows(self, xp: np.ndarray) -> np.ndarray:
        k, s = self.kernel_size, self.stride
        win = sliding_window_view(xp, (k, k), axis=(2, 3))
        return win[:, :, ::s, ::s, :, :]

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        x = _as4d("Conv2D input", x)
        if x.shape[1] != self.in_channels:
            raise shape_mismatch("Conv2D input", ("batch", self.in_channels, "h", "w"), x.shape)
        k, p = self.kernel_size, self.padding
        if x.shape[2] + 2 * p < k or x.shape[3] + 2 * p < k:
            raise shape_mismatch("Conv2D input smaller than kernel", (k, k), x.shape[2:])
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        win = self._windows(xp)
        out = np.einsum("nchwij,ocij->nohw", win, self.params["W"], optimize=True)
        out += self.params["b"][:, None, None]
        self._cache = (x.shape, xp)
        return out

    def backward(self, dout: np.ndarray) -> np.ndarray:
        x_shape, xp = self._take_cache()
        dout = np.asarray(dout, dtype=np.float64)
        win = self._windows(xp)
        self.grads = {
            "W": np.einsum("nchwij,nohw->ocij", win, dout, optimize=True),
            "b": dout.sum(axis=(0, 2, 3)),
        }
        k, s, p = self.kernel_size, self.stride, self.padding
        h_out, w_out = dout.shape[2], dout.shape[3]
        contrib = np.einsum("nohw,ocij->nchwij", dout, self.params["W"], optimize=True)
        dxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + h_out * s:s, j:j + w_out * s:s] += contrib[:, :, :, :, i, j]
        if p:
            return dxp[:, :, p:p + x_shape[2], p:p + x_shape[3]]
        return dxp


class MaxPool(Layer):
    """Max pooling with square windows; routes gradient to the argmax."""

    def __init__(self, size: int = 2, stride: int | None = None) -> None:
        super().__init__()
        if size <= 0:
            raise ValueError(f"MaxPool size must be positive, got {size}")
        self.size = size
        self.stride = stride if stride is not None else size

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        x = _as4d("MaxPool input", x)
        k, s = self.size, self.stride
        if x.shape[2] < k or x.shape[3] < k:
            raise shape_mismatch("MaxPool input smaller than window", (k, k), x.shape[2:])
        win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s, :, :]
        n, c, h_out, w_out = win.shape[:4]
        flat = win.reshape(n, c, h_out, w_out, k * k)
        idx = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
        self._cache = (x.shape, idx)
        return out

    def backward(self, dout: np.ndarray) -> np.ndarray:
        x_shape, idx = self._take_cache()
        dout = np.asarray(dout, dtype=np.float64)
        k, s = self.size, self.stride
        n, c, h_out, w_out = idx.shape
        ni, ci, hi, wi = np.ogrid[:n, :c, :h_out, :w_out]
        rows = hi * s + idx // k
        cols = wi * s + idx % k
        dx = np.zeros(x_shape)
        # overlapping windows (stride < size) accumulate, so use unbuffered add
        np.add.at(dx, (ni + 0 * idx, ci + 0 * idx, rows, cols), dout)
        return dx


class BatchNorm(Layer):
    """Batch normalization over the channel axis of 2-d or 4-d inputs.

    Train mode normalizes with batch statistics and updates running stats
    (running variance uses the unbiased estimate).  Eval mode, and any frozen
    layer regardless of mode, normalizes with the running statistics.
    """

    def __init__(self, num_features: int, eps: float = 1e-5, momentum: float = 0.1) -> None:
        super().__init__()
        if num_features <= 0:
            raise ValueError(f"BatchNorm needs a positive feature count, got {num_features}")
        self.num_features = num_features
        self.eps = eps
        self.momentum = momentum
        self.params = {"gamma": np.ones(num_features), "beta": np.zeros(num_features)}
        self.buffers = {
            "running_mean": np.zeros(num_features),
            "running_var": np.ones(num_features),
        }

    def _check(self, x: np.ndarray) -> tuple[np.ndarray, tuple[int, ...], tuple[int, ...]]:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            axes, bshape = (0,), (1, self.num_features)
        elif x.ndim == 4:
            axes, bshape = (0, 2, 3), (1, self.num_features, 1, 1)
        else:
            raise ShapeMismatchError(f"BatchNorm input: expected 2-d or 4-d, got shape {x.shape}")
        if x.shape[1] != self.num_features:
            raise shape_mismatch("BatchNorm input", ("batch", self.num_features, "..."), x.shape)
        return x, axes, bshape

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        x, axes, bshape = self._check(x)
        gamma = self.params["gamma"].reshape(bshape)
        beta = self.params["beta"].reshape(bshape)
        use_batch_stats = train and not self.frozen
        if use_batch_stats:
            mu = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = x.size // self.num_features
            mom = self.momentum
            self.buffers["running_mean"] = (1 - mom) * self.buffers["running_mean"] + mom * mu
            unbiased = var * m / (m - 1) if m > 1 else var
            self.buffers["running_var"] = (1 - mom) * self.buffers["running_var"] + mom * unbiased
        else:
            mu = self.buffers["running_mean"]
            var = self.buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var.reshape(bshape) + self.eps)
        xhat = (x - mu.reshape(bshape)) * inv_std
        self._cache = (xhat, inv_std, axes, bshape, use_batch_stats)
        return gamma * xhat + beta

    def backward(self, dout: np.ndarray) -> np.ndarray:
        xhat, inv_std, axes, bshape, used_batch_stats = self._take_cache()
        dout = np.asarray(dout, dtype=np.float64)
        gamma = self.params["gamma"].reshape(bshape)
        self.grads = {
            "gamma": (dout * xhat).sum(axis=axes),
            "beta": dout.sum(axis=axes),
        }
        dxhat = dout * gamma
        if not used_batch_stats:
            return dxhat * inv_std
        m = dout.size // self.num_features
        term = dxhat - dxhat.mean(axis=axes, keepdims=True) \
            - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True) / m
        return term * inv_std


class ResidualBlock(Layer):
    """Conv-BN-ReLU-Conv-BN plus a shortcut, then ReLU after the addition.

    The shortcut is the identity when shapes already match; otherwise
    ``projection=True`` must be set, which inserts a 1x1 conv + BN.
    """

    def __init__(self, in_channels: int, out_channels: int | None = None, stride: int = 1,
                 projection: bool = False, rng: np.random.Generator | None = None) -> None:
        super().__init__()
        out_channels = out_channels if out_channels is not None else in_channels
        needs_projection = out_channels != in_channels or stride != 1
        if needs_projection and not projection:
            raise ShapeMismatchError(
                f"ResidualBlock shortcut cannot match {in_channels}ch/stride1 input to "
                f"{out_channels}ch/stride{stride} output without projection=True")
        rng = rng or np.random.default_rng()
        self.conv1 = Conv2D(in_channels, out_channels, 3, stride=stride, padding=1, rng=rng)
        self.bn1 = BatchNorm(out_channels)
        self.relu1 = ReLU()
        self.conv2 = Conv2D(out_channels, out_channels, 3, stride=1, padding=1, rng=rng)
        self.bn2 = BatchNorm(out_channels)
        self.out_relu = ReLU()
        if needs_projection:
            self.proj_conv = Conv2D(in_channels, out_channels, 1, stride=stride, rng=rng)
            self.proj_bn = BatchNorm(out_channels)
        else:
            self.proj_conv = None
            self.proj_bn = None

    def _sublayers(self) -> list[tuple[str, Layer]]:
        named = [("conv1", self.conv1), ("bn1", self.bn1), ("conv2", self.conv2),
                 ("bn2", self.bn2)]
        if self.proj_conv is not None:
            named += [("proj_conv", self.proj_conv), ("proj_bn", self.proj_bn)]
        return named

    @property
    def params(self) -> dict[str, np.ndarray]:
        return {f"{name}.{k}": v for name, sub in self._sublayers() for k, v in sub.params.items()}

    @params.setter
    def params(self, value) -> None:
        if value:  # base-class constructor assigns {} before sublayers exist
            raise UsageError("ResidualBlock params are owned by its sublayers")

    @property
    def grads(self) -> dict[str, np.ndarray]:
        return {f"{name}.{k}": v for name, sub in self._sublayers() for k, v in sub.grads.items()}

    @grads.setter
    def grads(self, value) -> None:
        if value:
            raise UsageError("ResidualBlock grads are owned by its sublayers")

    @property
    def buffers(self) -> dict[str, np.ndarray]:
        return {f"{name}.{k}": v for name, sub in self._sublayers() for k, v in sub.buffers.items()}

    @buffers.setter
    def buffers(self, value) -> None:
        if value:
            raise UsageError("ResidualBlock buffers are owned by its sublayers")

    def set_frozen(self, frozen: bool) -> None:
        self.frozen = frozen
        for _, sub in self._sublayers():
            sub.set_frozen(frozen)

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        x = _as4d("ResidualBlock input", x)
        h = self.conv1(x, train)
        h = self.bn1(h, train)
        h = self.relu1(h, train)
        h = self.conv2(h, train)
        h = self.bn2(h, train)
        if self.proj_conv is not None:
            shortcut = self.proj_bn(self.proj_conv(x, train), train)
        else:
            shortcut = x
        if h.shape != shortcut.shape:
            raise shape_mismatch("ResidualBlock branch outputs", h.shape, shortcut.shape)
        return self.out_relu(h + shortcut, train)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        d = self.out_relu.backward(dout)
        dh = self.conv1.backward(self.bn1.backward(self.relu1.backward(
            self.conv2.backward(self.bn2.backward(d)))))
        if self.proj_conv is not None:
            dshort = self.proj_conv.backward(self.proj_bn.backward(d))
        else:
            dshort = d
        return dh + dshort
