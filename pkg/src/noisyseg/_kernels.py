"""Compiled inner loops for the spatially-varying smoothing pass.

The kernel writes each output row independently (no shared accumulators), so
results are bit-identical for any thread count and any schedule.
"""
import os

# Allow thread counts up to 8 even on small hosts, and skip numba's TBB probe
# (noisy on old TBB installs); respected only when the user has not configured
# the pool themselves.  Must happen before the first numba import in the process.
os.environ.setdefault("NUMBA_NUM_THREADS", str(max(8, os.cpu_count() or 1)))
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

import numpy as np
from numba import get_num_threads, njit, prange, set_num_threads  # noqa: E402

__all__ = ["ball_offsets", "build_weight_segments", "smooth_kernel", "run_threads"]


def ball_offsets(radius: int):
    """Integer offsets with Euclidean norm <= radius, in x-fastest scan order."""
    r = int(radius)
    rng = np.arange(-r, r + 1, dtype=np.int64)
    dx, dy, dz = np.meshgrid(rng, rng, rng, indexing="ij")
    d2 = dx * dx + dy * dy + dz * dz
    keep = d2 <= r * r
    offs = np.stack([dx[keep], dy[keep], dz[keep]], axis=1)
    order = np.lexsort((offs[:, 0], offs[:, 1], offs[:, 2]))
    offs = offs[order]
    dist = np.sqrt((offs.astype(np.float64) ** 2).sum(axis=1))
    return offs, dist


def build_weight_segments(max_radius: int, tau_override: float | None = None):
    """Packed offset/weight tables for every ball radius in 1..max_radius.

    Radius r occupies rows seg[r]:seg[r+1]; weights are exp(-dist/tau) with
    tau = r unless overridden.  Normalization happens in the kernel, after
    border clipping.
    """
    seg = np.zeros(max_radius + 2, dtype=np.int64)
    all_offs, all_w = [], []
    for r in range(1, max_radius + 1):
        offs, dist = ball_offsets(r)
        tau = float(r) if tau_override is None else float(tau_override)
        all_offs.append(offs)
        all_w.append(np.exp(-dist / tau))
        seg[r + 1] = seg[r] + len(offs)
    if max_radius < 1:
        return np.zeros((0, 3), dtype=np.int64), np.zeros(0), seg
    return np.vstack(all_offs), np.concatenate(all_w), seg


@njit(cache=True, parallel=True)
def smooth_kernel(labels, nx, ny, nz, utab, big_r, offs_r, dflat_r,
                  offs_all, dflat_all, w_all, seg, probs, mask):
    n = labels.size
    k_r = offs_r.shape[0]
    num_labels = probs.shape[1]
    for i in prange(n):
        x = i % nx
        t = i // nx
        y = t % ny
        z = t // ny
        c = labels[i]
        interior = (
            x >= big_r and x < nx - big_r
            and y >= big_r and y < ny - big_r
            and z >= big_r and z < nz - big_r
        )

        # pass 1: homogeneity of the clipped R-ball (all ids equal)
        hom = True
        if interior:
            for j in range(k_r):
                if labels[i + dflat_r[j]] != c:
                    hom = False
                    break
        else:
            for j in range(k_r):
                xx = x + offs_r[j, 0]
                yy = y + offs_r[j, 1]
                zz = z + offs_r[j, 2]
                if xx < 0 or xx >= nx or yy < 0 or yy >= ny or zz < 0 or zz >= nz:
                    continue
                if labels[xx + nx * (yy + ny * zz)] != c:
                    hom = False
                    break
        if hom:
            probs[i, c] = 1.0
            continue

        # pass 2: minimum tissue uncertainty over the clipped R-ball
        umin = utab[c]
        if umin > 0:
            if interior:
                for j in range(k_r):
                    u = utab[labels[i + dflat_r[j]]]
                    if u < umin:
                        umin = u
                        if umin == 0:
                            break
            else:
                for j in range(k_r):
                    xx = x + offs_r[j, 0]
                    yy = y + offs_r[j, 1]
                    zz = z + offs_r[j, 2]
                    if xx < 0 or xx >= nx or yy < 0 or yy >= ny or zz < 0 or zz >= nz:
                        continue
                    u = utab[labels[xx + nx * (yy + ny * zz)]]
                    if u < umin:
                        umin = u
                        if umin == 0:
                            break
        if umin == 0:
            probs[i, c] = 1.0
            continue

        # pass 3: exp-weighted label histogram over the clipped r_u-ball
        wsum = 0.0
        changed = False
        if interior:
            for j in range(seg[umin], seg[umin + 1]):
                lab = labels[i + dflat_all[j]]
                w = w_all[j]
                wsum += w
                probs[i, lab] += w
                if lab != c:
                    changed = True
        else:
            for j in range(seg[umin], seg[umin + 1]):
                xx = x + offs_all[j, 0]
                yy = y + offs_all[j, 1]
                zz = z + offs_all[j, 2]
                if xx < 0 or xx >= nx or yy < 0 or yy >= ny or zz < 0 or zz >= nz:
                    continue
                lab = labels[xx + nx * (yy + ny * zz)]
                w = w_all[j]
                wsum += w
                probs[i, lab] += w
                if lab != c:
                    changed = True
        # division keeps a homogeneous r_u-ball exactly one-hot (wsum/wsum == 1.0)
        for l in range(num_labels):
            probs[i, l] /= wsum
        if changed:
            mask[i] = 1


class run_threads:
    """Context manager pinning numba's thread count; 0/None leaves it alone."""

    def __init__(self, threads):
        self.threads = int(threads) if threads else 0
        self._saved = None

    def __enter__(self):
        if self.threads > 0:
            self._saved = get_num_threads()
            set_num_threads(self.threads)
        return self

    def __exit__(self, *exc):
        if self._saved is not None:
            set_num_threads(self._saved)
        return False
