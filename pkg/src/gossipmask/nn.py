"""Dense float64 networks evaluated under element-wise masking.

A model is an ordered list of layer specs (conv2d / relu / maxpool2d /
flatten / linear). Only conv2d and linear layers own parameters, and no
layer carries a bias term. A masked layer is evaluated with the effective
tensor ``v = w * m`` where ``w`` is the real-valued parameter tensor and
``m`` a binary mask of identical shape; every gradient returned here is
taken with respect to ``v``.

Tensors are plain numpy float64 arrays in row-major order. All functions
are pure: no global state, no randomness outside :func:`init_params`.
"""

from dataclasses import dataclass

import numpy as np

__all__ = [
    "LayerSpec",
    "ModelArch",
    "conv2d",
    "linear",
    "relu",
    "maxpool2d",
    "flatten",
    "desk_arch",
    "shape_chain",
    "init_params",
    "identity_masks",
    "forward",
    "loss_and_grad_v",
    "grad_z",
    "finite_diff_check",
]


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a model; only the fields for ``kind`` are meaningful."""

    kind: str
    in_channels: int = 0
    out_channels: int = 0
    kernel: tuple = ()
    padding: int = 0
    window: tuple = ()
    stride: int = 0
    in_features: int = 0
    out_features: int = 0


def _pair(x):
    return (int(x), int(x)) if np.isscalar(x) else (int(x[0]), int(x[1]))


def conv2d(in_channels, out_channels, kernel, padding=0):
    """Stride-1 biasless 2-d convolution with symmetric zero padding."""
    return LayerSpec("conv2d", in_channels=int(in_channels),
                     out_channels=int(out_channels), kernel=_pair(kernel),
                     padding=int(padding))


def linear(in_features, out_features):
    """Biasless fully connected layer, weight shape (out, in)."""
    return LayerSpec("linear", in_features=int(in_features),
                     out_features=int(out_features))


def relu():
    return LayerSpec("relu")


def maxpool2d(window, stride):
    return LayerSpec("maxpool2d", window=_pair(window), stride=int(stride))


def flatten():
    return LayerSpec("flatten")


def shape_chain(layers, input_shape):
    """Per-sample shapes before and after each layer.

    Raises ValueError as soon as two consecutive layers are incompatible.
    """
    shapes = [tuple(int(e) for e in input_shape)]
    for pos, layer in enumerate(layers):
        s = shapes[-1]
        if layer.kind == "conv2d":
            if len(s) != 3 or s[0] != layer.in_channels:
                raise ValueError(
                    f"layer {pos}: conv2d expects {layer.in_channels} input "
                    f"channels, got shape {s}")
            kh, kw = layer.kernel
            oh = s[1] + 2 * layer.padding - kh + 1
            ow = s[2] + 2 * layer.padding - kw + 1
            if oh < 1 or ow < 1:
                raise ValueError(f"layer {pos}: conv2d output collapses on {s}")
            shapes.append((layer.out_channels, oh, ow))
        elif layer.kind == "maxpool2d":
            if len(s) != 3:
                raise ValueError(f"layer {pos}: maxpool2d needs a 3-d input, got {s}")
            wh, ww = layer.window
            if s[1] < wh or s[2] < ww:
                raise ValueError(f"layer {pos}: pool window {layer.window} exceeds {s}")
            shapes.append((s[0], (s[1] - wh) // layer.stride + 1,
                           (s[2] - ww) // layer.stride + 1))
        elif layer.kind == "relu":
            shapes.append(s)
        elif layer.kind == "flatten":
            shapes.append((int(np.prod(s)),))
        elif layer.kind == "linear":
            if len(s) != 1 or s[0] != layer.in_features:
                raise ValueError(
                    f"layer {pos}: linear expects ({layer.in_features},), got {s}")
            shapes.append((layer.out_features,))
        else:
            raise ValueError(f"layer {pos}: unknown layer kind '{layer.kind}'")
    return shapes


@dataclass(frozen=True)
class ModelArch:
    """Layer list plus the per-sample input shape and the class count."""

    layers: tuple
    input_shape: tuple
    num_classes: int

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape",
                           tuple(int(e) for e in self.input_shape))
        chain = shape_chain(self.layers, self.input_shape)
        if chain[-1] != (self.num_classes,):
            raise ValueError(
                f"model output shape {chain[-1]} does not match "
                f"{self.num_classes} classes")

    def param_shapes(self):
        """Parameter tensor shape per parameterized layer index."""
        shapes = {}
        for idx, layer in enumerate(self.layers):
            if layer.kind == "conv2d":
                shapes[idx] = (layer.out_channels, layer.in_channels) + layer.kernel
            elif layer.kind == "linear":
                shapes[idx] = (layer.out_features, layer.in_features)
        return shapes

    def param_count(self):
        return int(sum(np.prod(s) for s in self.param_shapes().values()))


def desk_arch(input_shape=(3, 16, 16), num_classes=4, conv_channels=(16, 32),
              hidden=128):
    """Small biasless conv/pool stack: per conv block a 5x5 convolution
    (zero padding 2), relu and 3x3/2 max pooling, then two linear layers."""
    layers = []
    in_ch = input_shape[0]
    for ch in conv_channels:
        layers += [conv2d(in_ch, ch, 5, padding=2), relu(), maxpool2d(3, 2)]
        in_ch = ch
    flat = int(np.prod(shape_chain(layers, input_shape)[-1]))
    layers += [flatten(), linear(flat, hidden), relu(), linear(hidden, num_classes)]
    return ModelArch(tuple(layers), tuple(input_shape), int(num_classes))


def init_params(arch, seed):
    """Parameter set with every entry i.i.d. uniform on [-1, 1].

    Each layer draws from its own stream keyed by (seed, layer index), so
    identical (arch, seed) pairs yield bit-identical tensors.
    """
    base = list(seed) if isinstance(seed, (tuple, list)) else [int(seed)]
    params = {}
    for idx, shape in arch.param_shapes().items():
        rng = np.random.default_rng(base + [idx])
        params[idx] = rng.uniform(-1.0, 1.0, size=shape)
    return params


def identity_masks(arch):
    """All-ones mask set matching the parameter shapes."""
    return {idx: np.ones(shape) for idx, shape in arch.param_shapes().items()}


# ----------------------------------------------------------- layer kernels

def _conv_forward(x, v, padding):
    n = x.shape[0]
    o, _, kh, kw = v.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    oh, ow = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n, oh, ow, -1)
    out = cols @ v.reshape(o, -1).T
    return out.transpose(0, 3, 1, 2), (cols, x.shape, padding)


def _conv_backward(grad_out, v, cache):
    cols, x_shape, padding = cache
    n, c, h, w = x_shape
    o, _, kh, kw = v.shape
    oh, ow = grad_out.shape[2], grad_out.shape[3]
    g = grad_out.transpose(0, 2, 3, 1)
    grad_v = (g.reshape(-1, o).T @ cols.reshape(-1, cols.shape[-1])).reshape(v.shape)
    gc = (g @ v.reshape(o, -1)).reshape(n, oh, ow, c, kh, kw)
    gxp = np.zeros((n, c, h + 2 * padding, w + 2 * padding))
    for a in range(kh):
        for b in range(kw):
            gxp[:, :, a:a + oh, b:b + ow] += gc[:, :, :, :, a, b].transpose(0, 3, 1, 2)
    if padding:
        gxp = gxp[:, :, padding:padding + h, padding:padding + w]
    return gxp, grad_v


def _maxpool_forward(x, window, stride):
    wh, ww = window
    win = np.lib.stride_tricks.sliding_window_view(x, (wh, ww), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    n, c, oh, ow = win.shape[:4]
    flat = win.reshape(n, c, oh, ow, wh * ww)
    # argmax takes the first maximum, i.e. the lowest flat index in the window
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    return out, (idx, x.shape, window, stride)


def _maxpool_backward(grad_out, cache):
    idx, x_shape, window, stride = cache
    n, c, oh, ow = grad_out.shape
    ww = window[1]
    gx = np.zeros(x_shape)
    ni = np.arange(n)[:, None, None, None]
    ci = np.arange(c)[None, :, None, None]
    ri = np.arange(oh)[None, None, :, None] * stride + idx // ww
    cj = np.arange(ow)[None, None, None, :] * stride + idx % ww
    # overlapping windows may select the same source entry; accumulate
    np.add.at(gx, (np.broadcast_to(ni, idx.shape), np.broadcast_to(ci, idx.shape),
                   ri, cj), grad_out)
    return gx


def _softmax_cross_entropy(logits, labels):
    n = logits.shape[0]
    shift = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shift).sum(axis=1, keepdims=True))
    logp = shift - logz
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


# ------------------------------------------------------------- public ops

def _effective(w, m, idx, shape):
    if w[idx].shape != shape:
        raise ValueError(f"layer {idx}: parameter shape {w[idx].shape} != {shape}")
    if m is None:
        return w[idx]
    if idx not in m or m[idx].shape != shape:
        raise ValueError(f"layer {idx}: mask missing or shape mismatch")
    return w[idx] * m[idx]


def forward(arch, w, m, batch):
    """Run the masked network on a batch.

    ``m`` may be None for an unmasked evaluation. Returns the (N, classes)
    logits and the cache consumed by the internal backward pass.
    """
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != len(arch.input_shape) + 1 or x.shape[1:] != arch.input_shape:
        raise ValueError(
            f"batch shape {x.shape} does not match input {arch.input_shape}")
    shapes = arch.param_shapes()
    caches = []
    for idx, layer in enumerate(arch.layers):
        if layer.kind == "conv2d":
            v = _effective(w, m, idx, shapes[idx])
            x, cache = _conv_forward(x, v, layer.padding)
            caches.append(("conv2d", idx, v, cache))
        elif layer.kind == "linear":
            v = _effective(w, m, idx, shapes[idx])
            caches.append(("linear", idx, v, x))
            x = x @ v.T
        elif layer.kind == "relu":
            caches.append(("relu", idx, x > 0))
            x = np.maximum(x, 0.0)
        elif layer.kind == "maxpool2d":
            x, cache = _maxpool_forward(x, layer.window, layer.stride)
            caches.append(("maxpool2d", idx, cache))
        elif layer.kind == "flatten":
            caches.append(("flatten", idx, x.shape))
            x = x.reshape(x.shape[0], -1)
    return x, caches


def _backward(caches, grad_logits):
    g = grad_logits
    grad_v = {}
    for entry in reversed(caches):
        kind = entry[0]
        if kind == "linear":
            _, idx, v, xin = entry
            grad_v[idx] = g.T @ xin
            g = g @ v
        elif kind == "conv2d":
            _, idx, v, cache = entry
            g, gv = _conv_backward(g, v, cache)
            grad_v[idx] = gv
        elif kind == "relu":
            g = g * entry[2]
        elif kind == "maxpool2d":
            g = _maxpool_backward(g, entry[2])
        elif kind == "flatten":
            g = g.reshape(entry[2])
    return dict(sorted(grad_v.items()))


def loss_and_grad_v(arch, w, m, batch, labels):
    """Mean softmax cross-entropy over the batch and its gradient.

    The gradient is taken with respect to the effective parameters
    ``v = w * m`` of each parameterized layer, one tensor per layer.
    """
    y = np.asarray(labels)
    x = np.asarray(batch, dtype=np.float64)
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    if y.shape[0] != x.shape[0]:
        raise ValueError("batch and labels disagree in length")
    if y.size and (y.min() < 0 or y.max() >= arch.num_classes):
        raise ValueError(f"labels must lie in [0, {arch.num_classes})")
    logits, caches = forward(arch, w, m, x)
    loss, grad_logits = _softmax_cross_entropy(logits, y)
    return loss, _backward(caches, grad_logits)


def grad_z(grad_v, w, z):
    """Chain the loss gradient back to the score tensor.

    ``v = w * m`` makes dv/dm equal to ``w`` element-wise; the step from the
    binary mask to the score tensor is approximated by ``sign(z)``, with
    sign(0) = 0.
    """
    if grad_v.shape != w.shape or w.shape != z.shape:
        raise ValueError(
            f"shape mismatch: {grad_v.shape} vs {w.shape} vs {z.shape}")
    return grad_v * w * np.sign(z)


def finite_diff_check(fn, point, step, num_coords=None, seed=0):
    """Max relative error of fn's analytic gradient vs central differences.

    ``fn(point)`` must return ``(value, gradient)`` with the gradient shaped
    like ``point``. At most ``num_coords`` coordinates are probed (all when
    None), drawn without replacement from a fixed-seed stream. Relative
    error is |a - b| / max(|a|, |b|, 1e-8).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    point = np.asarray(point, dtype=np.float64)
    _, grad = fn(point)
    grad = np.asarray(grad).ravel()
    size = point.size
    coords = np.arange(size)
    if num_coords is not None and num_coords < size:
        coords = np.random.default_rng(seed).choice(size, num_coords, replace=False)
    worst = 0.0
    flat = point.ravel()
    for c in coords:
        bumped = flat.copy()
        bumped[c] = flat[c] + step
        hi, _ = fn(bumped.reshape(point.shape))
        bumped[c] = flat[c] - step
        lo, _ = fn(bumped.reshape(point.shape))
        fd = (hi - lo) / (2.0 * step)
        err = abs(fd - grad[c]) / max(abs(fd), abs(grad[c]), 1e-8)
        worst = max(worst, err)
    return worst
