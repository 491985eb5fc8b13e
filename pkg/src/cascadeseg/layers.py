"""From-scratch differentiable layer kernels on 5-axis arrays.

Tensors are laid out ``(n, c, z, y, x)``.  Every forward kernel takes an
optional ``cache`` dict; when supplied it is filled with exactly what the
matching backward kernel needs.  Kernels preserve dtype: float32 is the
training/inference path, float64 is used for finite-difference verification.

Convolutions follow the cross-correlation convention (no kernel flip) and are
evaluated as im2col plus one BLAS matmul; the column buffer is kept in the
cache so the backward pass reuses it for the weight gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError


@dataclass
class Tensor5:
    """A 5-axis value array with an optional gradient buffer of equal shape."""

    values: np.ndarray
    grad: np.ndarray | None = None


@dataclass
class Parameter:
    """Named learnable array with an accumulating gradient buffer."""

    name: str
    value: np.ndarray
    grad: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad[...] = 0


def _require_5d(x: np.ndarray, what: str) -> None:
    if x.ndim != 5:
        raise ShapeError(f"{what} must have 5 axes (n, c, z, y, x), got {x.ndim}")


# 3x3x3 (or any) valid convolution --------------------------------------------


def conv3d_valid_fwd(x, w, b, cache: dict | None = None):
    """Valid (unpadded) cross-correlation; w is (c_out, c_in, kz, ky, kx)."""
    _require_5d(x, "conv input")
    _require_5d(w, "conv weight")
    n, ci, D, H, W = x.shape
    co, ci_w, kd, kh, kw = w.shape
    if ci != ci_w:
        raise ShapeError(f"conv input has {ci} channels, weight expects {ci_w}")
    if b.shape != (co,):
        raise ShapeError(f"conv bias shape {b.shape}, expected ({co},)")
    if D < kd or H < kh or W < kw:
        raise ShapeError(f"conv input {x.shape[2:]} smaller than kernel {w.shape[2:]}")
    do, ho, wo = D - kd + 1, H - kh + 1, W - kw + 1
    win = sliding_window_view(x, (kd, kh, kw), axis=(2, 3, 4))
    cols = win.transpose(0, 2, 3, 4, 1, 5, 6, 7).reshape(n * do * ho * wo, ci * kd * kh * kw)
    out = cols @ w.reshape(co, -1).T
    out += b
    out = out.reshape(n, do, ho, wo, co).transpose(0, 4, 1, 2, 3)
    if cache is not None:
        cache.update(x_shape=x.shape, w=w, cols=cols, out_spatial=(do, ho, wo))
    return np.ascontiguousarray(out)


def conv3d_valid_bwd(cache: dict, gout):
    """Returns (grad_input, grad_weight, grad_bias)."""
    w, cols = cache["w"], cache["cols"]
    n, ci, D, H, W = cache["x_shape"]
    co, _, kd, kh, kw = w.shape
    do, ho, wo = cache["out_spatial"]
    gmat = gout.transpose(0, 2, 3, 4, 1).reshape(n * do * ho * wo, co)
    gb = gmat.sum(axis=0)
    gw = (gmat.T @ cols).reshape(w.shape)
    gcols = (gmat @ w.reshape(co, -1)).reshape(n, do, ho, wo, ci, kd, kh, kw)
    gx = np.zeros(cache["x_shape"], dtype=gout.dtype)
    for a in range(kd):
        for b_ in range(kh):
            for c in range(kw):
                gx[:, :, a : a + do, b_ : b_ + ho, c : c + wo] += np.moveaxis(
                    gcols[..., a, b_, c], -1, 1
                )
    return gx, gw, gb


# pointwise nonlinearity -------------------------------------------------------


def relu_fwd(x, cache: dict | None = None):
    out = np.maximum(x, 0)
    if cache is not None:
        cache["mask"] = x > 0
    return out


def relu_bwd(cache: dict, gout):
    return gout * cache["mask"]


# 2x2x2 max pooling, stride 2 --------------------------------------------------

_POOL_FWD_PERM = (0, 1, 2, 4, 6, 3, 5, 7)
_POOL_BWD_PERM = (0, 1, 2, 5, 3, 6, 4, 7)


def maxpool2_fwd(x, cache: dict | None = None):
    """Max over 2x2x2 blocks; ties resolve to the first voxel in scan order."""
    _require_5d(x, "pool input")
    n, c, D, H, W = x.shape
    if D % 2 or H % 2 or W % 2:
        raise ShapeError(f"pool input spatial dims {x.shape[2:]} must be even")
    win = x.reshape(n, c, D // 2, 2, H // 2, 2, W // 2, 2).transpose(_POOL_FWD_PERM)
    win8 = win.reshape(n, c, D // 2, H // 2, W // 2, 8)
    idx = win8.argmax(axis=-1)
    out = np.take_along_axis(win8, idx[..., None], axis=-1)[..., 0]
    if cache is not None:
        cache.update(idx=idx, x_shape=x.shape)
    return out


def maxpool2_bwd(cache: dict, gout):
    n, c, D, H, W = cache["x_shape"]
    g8 = np.zeros((n, c, D // 2, H // 2, W // 2, 8), dtype=gout.dtype)
    np.put_along_axis(g8, cache["idx"][..., None], gout[..., None], axis=-1)
    g = g8.reshape(n, c, D // 2, H // 2, W // 2, 2, 2, 2).transpose(_POOL_BWD_PERM)
    return g.reshape(n, c, D, H, W)


# 2x2x2 transposed convolution, stride 2 ----------------------------------------


def upconv2_fwd(x, w, b, cache: dict | None = None):
    """Doubles each spatial dim; w is (c_in, c_out, 2, 2, 2).

    With stride equal to the kernel size each output voxel receives exactly
    one contribution, so the op is a channel matmul plus an interleave.
    """
    _require_5d(x, "upconv input")
    n, ci, D, H, W = x.shape
    ci_w, co = w.shape[:2]
    if ci != ci_w:
        raise ShapeError(f"upconv input has {ci} channels, weight expects {ci_w}")
    if w.shape[2:] != (2, 2, 2):
        raise ShapeError(f"upconv kernel must be 2x2x2, got {w.shape[2:]}")
    if b.shape != (co,):
        raise ShapeError(f"upconv bias shape {b.shape}, expected ({co},)")
    y = np.tensordot(x, w, axes=([1], [0]))  # (n, D, H, W, co, 2, 2, 2)
    out = np.empty((n, co, 2 * D, 2 * H, 2 * W), dtype=x.dtype)
    for dz in range(2):
        for dy in range(2):
            for dx in range(2):
                out[:, :, dz::2, dy::2, dx::2] = np.moveaxis(y[..., dz, dy, dx], -1, 1)
    out += b.reshape(1, co, 1, 1, 1)
    if cache is not None:
        cache.update(x=x, w=w)
    return out


def upconv2_bwd(cache: dict, gout):
    x, w = cache["x"], cache["w"]
    n, ci, D, H, W = x.shape
    co = w.shape[1]
    g8 = np.empty((n, D, H, W, co, 2, 2, 2), dtype=gout.dtype)
    for dz in range(2):
        for dy in range(2):
            for dx in range(2):
                g8[..., dz, dy, dx] = np.moveaxis(gout[:, :, dz::2, dy::2, dx::2], 1, -1)
    gx = np.moveaxis(np.tensordot(g8, w, axes=([4, 5, 6, 7], [1, 2, 3, 4])), -1, 1)
    gw = np.tensordot(x, g8, axes=([0, 2, 3, 4], [0, 1, 2, 3]))
    gb = gout.sum(axis=(0, 2, 3, 4))
    return np.ascontiguousarray(gx), gw, gb


# batch normalization ----------------------------------------------------------


def batchnorm_fwd(
    x,
    gamma,
    beta,
    running_mean,
    running_var,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
    cache: dict | None = None,
):
    """Per-channel normalization over (n, z, y, x).

    Training mode uses biased batch statistics and updates the running
    buffers in place: run = (1 - momentum) * run + momentum * batch.
    """
    _require_5d(x, "batchnorm input")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm affine shape mismatch for {c} channels")
    axes = (0, 2, 3, 4)
    if training:
        mu = x.mean(axis=axes)
        var = x.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mu, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu.reshape(1, c, 1, 1, 1)) * inv_std.reshape(1, c, 1, 1, 1)
    out = gamma.reshape(1, c, 1, 1, 1) * xhat + beta.reshape(1, c, 1, 1, 1)
    if cache is not None:
        cache.update(xhat=xhat, inv_std=inv_std, gamma=gamma, training=training)
    return out


def batchnorm_bwd(cache: dict, gout):
    """Returns (grad_input, grad_gamma, grad_beta)."""
    xhat, inv_std, gamma = cache["xhat"], cache["inv_std"], cache["gamma"]
    c = xhat.shape[1]
    axes = (0, 2, 3, 4)
    gbeta = gout.sum(axis=axes)
    ggamma = (gout * xhat).sum(axis=axes)
    gshape = (1, c, 1, 1, 1)
    gxhat = gout * gamma.reshape(gshape)
    if not cache["training"]:
        return gxhat * inv_std.reshape(gshape), ggamma, gbeta
    m = xhat.size // c
    gx = (
        gxhat - gxhat.mean(axis=axes).reshape(gshape) - xhat * ((gxhat * xhat).sum(axis=axes) / m).reshape(gshape)
    ) * inv_std.reshape(gshape)
    return gx, ggamma, gbeta


# skip connection: center crop + channel concat ----------------------------------


def concat_crop_fwd(skip, up, cache: dict | None = None):
    """Center-crop ``skip`` to ``up``'s spatial size and concat channels
    (skip first).  The size surplus must be non-negative and even."""
    _require_5d(skip, "skip tensor")
    _require_5d(up, "upsampled tensor")
    if skip.shape[0] != up.shape[0]:
        raise ShapeError("skip/up batch sizes differ")
    offs = []
    for s, u in zip(skip.shape[2:], up.shape[2:]):
        d = s - u
        if d < 0 or d % 2:
            raise ShapeError(f"skip size {skip.shape[2:]} not center-croppable to {up.shape[2:]}")
        offs.append(d // 2)
    oz, oy, ox = offs
    uz, uy, ux = up.shape[2:]
    cropped = skip[:, :, oz : oz + uz, oy : oy + uy, ox : ox + ux]
    out = np.concatenate([cropped, up], axis=1)
    if cache is not None:
        cache.update(skip_shape=skip.shape, offs=offs, up_channels=up.shape[1])
    return out


def concat_crop_bwd(cache: dict, gout):
    """Returns (grad_skip, grad_up)."""
    n, cs = cache["skip_shape"][:2]
    oz, oy, ox = cache["offs"]
    gskip = np.zeros(cache["skip_shape"], dtype=gout.dtype)
    gpart = gout[:, :cs]
    uz, uy, ux = gout.shape[2:]
    gskip[:, :, oz : oz + uz, oy : oy + uy, ox : ox + ux] = gpart
    gup = gout[:, cs:]
    return gskip, np.ascontiguousarray(gup)
