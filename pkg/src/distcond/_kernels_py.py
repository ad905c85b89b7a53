"""Pure-numpy kernel primitives (fallback backend).

Layout contract shared with the compiled backend:
  - padded activations `xp` are (N, C, Hp, Wp) C-contiguous
  - patch buffers `cols` are (N, C, k, k, Ho, Wo) C-contiguous
All functions write into caller-allocated output buffers so the chunking
driver in `kernels.py` can reuse scratch memory.
"""

import numpy as np


def pack_patches(xp: np.ndarray, cols: np.ndarray, k: int, stride: int) -> None:
    """Fill cols[n,c,ki,kj,i,j] = xp[n,c,i*stride+ki, j*stride+kj]."""
    ho, wo = cols.shape[4], cols.shape[5]
    for ki in range(k):
        hs = slice(ki, ki + (ho - 1) * stride + 1, stride)
        for kj in range(k):
            ws = slice(kj, kj + (wo - 1) * stride + 1, stride)
            cols[:, :, ki, kj] = xp[:, :, hs, ws]


def unpack_patches_add(cols: np.ndarray, xp: np.ndarray, k: int, stride: int) -> None:
    """Scatter-add cols back onto xp (transpose of pack_patches)."""
    ho, wo = cols.shape[4], cols.shape[5]
    for ki in range(k):
        hs = slice(ki, ki + (ho - 1) * stride + 1, stride)
        for kj in range(k):
            ws = slice(kj, kj + (wo - 1) * stride + 1, stride)
            xp[:, :, hs, ws] += cols[:, :, ki, kj]


def pool_sum(xp: np.ndarray, out: np.ndarray, k: int, stride: int) -> None:
    """Sum of each k*k window of xp into out (caller divides by k*k)."""
    ho, wo = out.shape[2], out.shape[3]
    out[:] = 0
    for ki in range(k):
        hs = slice(ki, ki + (ho - 1) * stride + 1, stride)
        for kj in range(k):
            ws = slice(kj, kj + (wo - 1) * stride + 1, stride)
            out += xp[:, :, hs, ws]


def pool_backward_add(g: np.ndarray, gxp: np.ndarray, k: int, stride: int) -> None:
    """Scatter-add g (already scaled by 1/k^2) over each window of gxp."""
    ho, wo = g.shape[2], g.shape[3]
    for ki in range(k):
        hs = slice(ki, ki + (ho - 1) * stride + 1, stride)
        for kj in range(k):
            ws = slice(kj, kj + (wo - 1) * stride + 1, stride)
            gxp[:, :, hs, ws] += g


def upsample_bilinear(
    x: np.ndarray,
    y: np.ndarray,
    hi0: np.ndarray,
    hi1: np.ndarray,
    hf: np.ndarray,
    wi0: np.ndarray,
    wi1: np.ndarray,
    wf: np.ndarray,
) -> None:
    """Bilinear upsample using precomputed per-axis taps (see kernels._lin_taps)."""
    rh = _tap_matrix(hi0, hi1, hf, x.shape[2], x.dtype)
    rw = _tap_matrix(wi0, wi1, wf, x.shape[3], x.dtype)
    n, c = x.shape[0], x.shape[1]
    flat = x.reshape(n * c, x.shape[2], x.shape[3])
    np.matmul(rh @ flat, rw.T, out=y.reshape(n * c, y.shape[2], y.shape[3]))


def upsample_bilinear_backward(
    g: np.ndarray,
    gx: np.ndarray,
    hi0: np.ndarray,
    hi1: np.ndarray,
    hf: np.ndarray,
    wi0: np.ndarray,
    wi1: np.ndarray,
    wf: np.ndarray,
) -> None:
    """Transpose of upsample_bilinear; accumulates into gx."""
    rh = _tap_matrix(hi0, hi1, hf, gx.shape[2], g.dtype)
    rw = _tap_matrix(wi0, wi1, wf, gx.shape[3], g.dtype)
    n, c = g.shape[0], g.shape[1]
    flat = g.reshape(n * c, g.shape[2], g.shape[3])
    gx.reshape(n * c, gx.shape[2], gx.shape[3])[:] += np.matmul(rh.T @ flat, rw)


def _tap_matrix(i0: np.ndarray, i1: np.ndarray, frac: np.ndarray, size: int, dtype) -> np.ndarray:
    m = np.zeros((len(i0), size), dtype=dtype)
    rows = np.arange(len(i0))
    np.add.at(m, (rows, i0), (1.0 - frac).astype(dtype))
    np.add.at(m, (rows, i1), frac.astype(dtype))
    return m
