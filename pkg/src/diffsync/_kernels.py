"""Hot inner loops, with a numba path and a pure-numpy fallback.

The numba path is used when numba imports and ``DIFFSYNC_DISABLE_NUMBA`` is
unset (or ``0``). Both paths are always importable as ``*_numpy`` /
``*_numba`` so tests and the benchmark can compare them directly.
"""

import math
import os

import numpy as np

_flag = os.environ.get("DIFFSYNC_DISABLE_NUMBA", "").strip().lower()
_DISABLED = _flag not in ("", "0", "false", "no")

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _DISABLED


# ---------------------------------------------------------------------------
# pixelwise Gaussian-mixture posterior mean
# ---------------------------------------------------------------------------

def pixelwise_posterior_mean_numpy(x, sqrt_ab, one_minus_ab, log_w, means, variances):
    """E[x0 | x_t] for independent per-pixel 1-D mixtures.

    ``x`` is flat (P,), ``means`` is (K, P), ``log_w`` and ``variances`` are (K,).
    """
    marg_var = sqrt_ab * sqrt_ab * variances + one_minus_ab  # (K,)
    resid = x[None, :] - sqrt_ab * means  # (K, P)
    logits = (log_w - 0.5 * np.log(marg_var))[:, None] - 0.5 * resid * resid / marg_var[:, None]
    top = logits.max(axis=0)
    r = np.exp(logits - top)
    r /= r.sum(axis=0)
    gain = (sqrt_ab * variances / marg_var)[:, None]
    post = means + gain * resid
    return (r * post).sum(axis=0)


def scatter_mean_numpy(values, index, size):
    """Average ``values`` into ``size`` bins given by ``index``; returns (means, counts)."""
    sums = np.bincount(index, weights=values, minlength=size)
    counts = np.bincount(index, minlength=size)
    out = np.zeros(size)
    hit = counts > 0
    out[hit] = sums[hit] / counts[hit]
    return out, counts


def rotation_source_table_numpy(height, width, angle_deg):
    """Nearest-neighbour source index for an inner-circle rotation.

    Pixels inside the inscribed circle read the canonical pixel nearest to
    their pre-image under the rotation; pixels outside read themselves. Ties
    round half down, which picks the lexicographically smallest grid point.
    """
    rows, cols = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    cy = (height - 1) / 2.0
    cx = (width - 1) / 2.0
    # integer inside-circle test on doubled coordinates
    dr2 = 2 * rows - (height - 1)
    dc2 = 2 * cols - (width - 1)
    d = min(height, width) - 1
    inside = dr2 * dr2 + dc2 * dc2 <= d * d

    theta = angle_deg * math.pi / 180.0
    c, s = math.cos(theta), math.sin(theta)
    dy = rows - cy
    dx = cols - cx
    # pre-image: rotate by -theta
    sy = c * dy - s * dx + cy
    sx = s * dy + c * dx + cx
    ny = np.ceil(sy - 0.5).astype(np.int64)
    nx = np.ceil(sx - 0.5).astype(np.int64)
    np.clip(ny, 0, height - 1, out=ny)
    np.clip(nx, 0, width - 1, out=nx)
    src = np.where(inside, ny * width + nx, rows * width + cols)
    return src.ravel().astype(np.int64)


if HAVE_NUMBA:

    @njit(cache=True)
    def pixelwise_posterior_mean_numba(x, sqrt_ab, one_minus_ab, log_w, means, variances):
        n_comp, n_pix = means.shape
        marg_var = np.empty(n_comp)
        gain = np.empty(n_comp)
        base = np.empty(n_comp)
        for k in range(n_comp):
            marg_var[k] = sqrt_ab * sqrt_ab * variances[k] + one_minus_ab
            gain[k] = sqrt_ab * variances[k] / marg_var[k]
            base[k] = log_w[k] - 0.5 * math.log(marg_var[k])
        logits = np.empty(n_comp)
        out = np.empty(n_pix)
        for p in range(n_pix):
            top = -np.inf
            for k in range(n_comp):
                r = x[p] - sqrt_ab * means[k, p]
                logits[k] = base[k] - 0.5 * r * r / marg_var[k]
                if logits[k] > top:
                    top = logits[k]
            norm = 0.0
            acc = 0.0
            for k in range(n_comp):
                e = math.exp(logits[k] - top)
                norm += e
                acc += e * (means[k, p] + gain[k] * (x[p] - sqrt_ab * means[k, p]))
            out[p] = acc / norm
        return out

    @njit(cache=True)
    def scatter_mean_numba(values, index, size):
        sums = np.zeros(size)
        counts = np.zeros(size, dtype=np.int64)
        for i in range(index.shape[0]):
            sums[index[i]] += values[i]
            counts[index[i]] += 1
        out = np.zeros(size)
        for q in range(size):
            if counts[q] > 0:
                out[q] = sums[q] / counts[q]
        return out, counts

    @njit(cache=True)
    def rotation_source_table_numba(height, width, angle_deg):
        cy = (height - 1) / 2.0
        cx = (width - 1) / 2.0
        d = min(height, width) - 1
        theta = angle_deg * math.pi / 180.0
        c = math.cos(theta)
        s = math.sin(theta)
        src = np.empty(height * width, dtype=np.int64)
        for r in range(height):
            for col in range(width):
                dr2 = 2 * r - (height - 1)
                dc2 = 2 * col - (width - 1)
                if dr2 * dr2 + dc2 * dc2 <= d * d:
                    dy = r - cy
                    dx = col - cx
                    ny = int(math.ceil(c * dy - s * dx + cy - 0.5))
                    nx = int(math.ceil(s * dy + c * dx + cx - 0.5))
                    ny = min(max(ny, 0), height - 1)
                    nx = min(max(nx, 0), width - 1)
                    src[r * width + col] = ny * width + nx
                else:
                    src[r * width + col] = r * width + col
        return src

else:  # pragma: no cover
    pixelwise_posterior_mean_numba = pixelwise_posterior_mean_numpy
    scatter_mean_numba = scatter_mean_numpy
    rotation_source_table_numba = rotation_source_table_numpy


if USE_NUMBA:
    pixelwise_posterior_mean = pixelwise_posterior_mean_numba
    scatter_mean = scatter_mean_numba
    rotation_source_table = rotation_source_table_numba
else:
    pixelwise_posterior_mean = pixelwise_posterior_mean_numpy
    scatter_mean = scatter_mean_numpy
    rotation_source_table = rotation_source_table_numpy


def backend():
    """Name of the active kernel backend."""
    return "numba" if USE_NUMBA else "numpy"
