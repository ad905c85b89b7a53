"""Dense kernels for the tensor ops: conv2d, average pooling, bilinear resize.

Two interchangeable primitive backends exist: `_kernels_c` (Cython) and
`_kernels_py` (numpy). The compiled one is used when importable unless
DISTCOND_BACKEND=python forces the fallback. GEMMs always go through
numpy/BLAS; the backends only differ in how patches are packed/unpacked.

Convolutions run in batch chunks sized so the patch buffer stays cache
resident, which matters far more here than the GEMM itself.
"""

import os
from functools import lru_cache

import numpy as np

from . import _kernels_py

try:
    from . import _kernels_c
except ImportError:  # extension not built; numpy fallback
    _kernels_c = None

_FORCED = os.environ.get("DISTCOND_BACKEND", "")
if _FORCED not in ("", "python", "compiled"):
    raise RuntimeError(f"DISTCOND_BACKEND must be 'python' or 'compiled', got {_FORCED!r}")
if _FORCED == "compiled" and _kernels_c is None:
    raise RuntimeError("DISTCOND_BACKEND=compiled but the extension is not built")

_impl = _kernels_py if (_FORCED == "python" or _kernels_c is None) else _kernels_c

# Target size of one chunk's patch buffer; keeps pack + GEMM in L2/L3.
_CHUNK_BYTES = 4 << 20


def backend_name() -> str:
    return "compiled" if _impl is _kernels_c else "python"


def available_backends() -> list:
    return ["python"] + (["compiled"] if _kernels_c is not None else [])


def use_backend(name: str) -> None:
    """Switch primitive backend at runtime (used by tests and benchmarks)."""
    global _impl
    if name == "python":
        _impl = _kernels_py
    elif name == "compiled":
        if _kernels_c is None:
            raise RuntimeError("compiled backend not available")
        _impl = _kernels_c
    else:
        raise ValueError(f"unknown backend {name!r}")


def _chunk_rows(per_row_elems: int, itemsize: int) -> int:
    return max(1, _CHUNK_BYTES // max(1, per_row_elems * itemsize))


def out_extent(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def pad_nchw(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def unpad_nchw(xp: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return xp
    return np.ascontiguousarray(xp[:, :, padding:-padding, padding:-padding])


def conv2d_forward(xp: np.ndarray, w: np.ndarray, stride: int) -> np.ndarray:
    """Cross-correlate padded input xp (N,C,Hp,Wp) with w (Co,C,k,k). No bias."""
    n, c, hp, wp = xp.shape
    co, _, k, _ = w.shape
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    w2 = w.reshape(co, c * k * k)
    out = np.empty((n, co, ho, wo), dtype=xp.dtype)
    chunk = _chunk_rows(c * k * k * ho * wo, xp.itemsize)
    cols = np.empty((min(chunk, n), c, k, k, ho, wo), dtype=xp.dtype)
    for s in range(0, n, chunk):
        e = min(s + chunk, n)
        cc = cols[: e - s]
        _impl.pack_patches(xp[s:e], cc, k, stride)
        np.matmul(
            w2[None],
            cc.reshape(e - s, c * k * k, ho * wo),
            out=out[s:e].reshape(e - s, co, ho * wo),
        )
    return out


def conv2d_input_grad(
    g: np.ndarray, w: np.ndarray, hp: int, wp: int, stride: int
) -> np.ndarray:
    """Gradient w.r.t. the padded input; g is (N,Co,Ho,Wo)."""
    n, co, ho, wo = g.shape
    _, c, k, _ = w.shape
    w2 = w.reshape(co, c * k * k)
    gxp = np.zeros((n, c, hp, wp), dtype=g.dtype)
    chunk = _chunk_rows(c * k * k * ho * wo, g.itemsize)
    cols = np.empty((min(chunk, n), c, k, k, ho, wo), dtype=g.dtype)
    for s in range(0, n, chunk):
        e = min(s + chunk, n)
        cc = cols[: e - s]
        np.matmul(
            w2.T[None],
            g[s:e].reshape(e - s, co, ho * wo),
            out=cc.reshape(e - s, c * k * k, ho * wo),
        )
        _impl.unpack_patches_add(cc, gxp[s:e], k, stride)
    return gxp


def conv2d_weight_grad(xp: np.ndarray, g: np.ndarray, k: int, stride: int) -> np.ndarray:
    """Gradient w.r.t. the kernel; accumulated in the input dtype."""
    n, c, hp, wp = xp.shape
    co, ho, wo = g.shape[1], g.shape[2], g.shape[3]
    gw2 = np.zeros((co, c * k * k), dtype=xp.dtype)
    chunk = _chunk_rows(c * k * k * ho * wo, xp.itemsize)
    cols = np.empty((min(chunk, n), c, k, k, ho, wo), dtype=xp.dtype)
    for s in range(0, n, chunk):
        e = min(s + chunk, n)
        cc = cols[: e - s]
        _impl.pack_patches(xp[s:e], cc, k, stride)
        # one GEMM per chunk: (Co, m*HoWo) @ (m*HoWo, Ckk)
        gflat = np.ascontiguousarray(g[s:e].transpose(1, 0, 2, 3)).reshape(co, -1)
        cflat = cc.transpose(1, 2, 3, 0, 4, 5).reshape(c * k * k, -1)
        gw2 += gflat @ cflat.T
    return gw2.reshape(co, c, k, k)


def avgpool_forward(xp: np.ndarray, k: int, stride: int) -> np.ndarray:
    """Window mean with fixed divisor k*k (padding zeros count)."""
    n, c, hp, wp = xp.shape
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    out = np.empty((n, c, ho, wo), dtype=xp.dtype)
    _impl.pool_sum(xp, out, k, stride)
    out *= xp.dtype.type(1.0 / (k * k))
    return out


def avgpool_input_grad(g: np.ndarray, hp: int, wp: int, k: int, stride: int) -> np.ndarray:
    gxp = np.zeros((g.shape[0], g.shape[1], hp, wp), dtype=g.dtype)
    gs = g * g.dtype.type(1.0 / (k * k))
    _impl.pool_backward_add(np.ascontiguousarray(gs), gxp, k, stride)
    return gxp


@lru_cache(maxsize=64)
def _lin_taps(size_in: int, size_out: int):
    """Half-pixel-center taps: output i samples input at (i+0.5)*in/out-0.5."""
    src = (np.arange(size_out, dtype=np.float64) + 0.5) * (size_in / size_out) - 0.5
    src = np.clip(src, 0.0, size_in - 1.0)
    i0 = np.floor(src).astype(np.int64)
    i0 = np.minimum(i0, size_in - 1)
    frac = src - i0
    i1 = np.minimum(i0 + 1, size_in - 1)
    frac[i1 == i0] = 0.0
    return i0, i1, frac


def upsample_forward(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    hi0, hi1, hf = _lin_taps(x.shape[2], out_h)
    wi0, wi1, wf = _lin_taps(x.shape[3], out_w)
    y = np.empty((x.shape[0], x.shape[1], out_h, out_w), dtype=x.dtype)
    _impl.upsample_bilinear(x, y, hi0, hi1, hf, wi0, wi1, wf)
    return y


def upsample_input_grad(g: np.ndarray, in_h: int, in_w: int) -> np.ndarray:
    hi0, hi1, hf = _lin_taps(in_h, g.shape[2])
    wi0, wi1, wf = _lin_taps(in_w, g.shape[3])
    gx = np.zeros((g.shape[0], g.shape[1], in_h, in_w), dtype=g.dtype)
    _impl.upsample_bilinear_backward(np.ascontiguousarray(g), gx, hi0, hi1, hf, wi0, wi1, wf)
    return gx
