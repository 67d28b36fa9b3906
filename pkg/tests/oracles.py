"""Brute-force reference implementations used only by tests.

Everything here is written as literally as possible (per-voxel enumeration,
no shared code with the package internals) so each routine is an independent
oracle for the optimized path it checks.
"""
import math

import numpy as np


def brute_ball(center, radius, dims):
    """In-bounds (x, y, z) triples within Euclidean distance radius of center."""
    cx, cy, cz = center
    nx, ny, nz = dims
    out = []
    reach = int(math.floor(radius))
    for z in range(max(0, cz - reach), min(nz, cz + reach + 1)):
        for y in range(max(0, cy - reach), min(ny, cy + reach + 1)):
            for x in range(max(0, cx - reach), min(nx, cx + reach + 1)):
                if math.dist((x, y, z), (cx, cy, cz)) <= radius:
                    out.append((x, y, z))
    return out


def brute_smooth(labels_grid, utable, tau_override=None):
    """Literal re-implementation of the smoothing rule, one voxel at a time.

    labels_grid: (nx, ny, nz) integer array indexed [x, y, z].
    utable: dict label id -> uncertainty in voxels.
    Returns (probs, mask) with probs shaped (nx, ny, nz, L) and mask binary.
    """
    nx, ny, nz = labels_grid.shape
    num_labels = max(utable) + 1
    big_r = max(utable.values())
    probs = np.zeros((nx, ny, nz, num_labels), dtype=np.float64)
    mask = np.zeros((nx, ny, nz), dtype=np.int64)

    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                center_label = int(labels_grid[x, y, z])
                ball_r = brute_ball((x, y, z), big_r, (nx, ny, nz))
                ball_labels = [int(labels_grid[p]) for p in ball_r]
                homogeneous = len(set(ball_labels)) == 1
                umin = min(utable[l] for l in ball_labels)
                if homogeneous or umin == 0:
                    probs[x, y, z, center_label] = 1.0
                    continue
                r_u = umin
                tau = r_u if tau_override is None else tau_override
                ball_u = brute_ball((x, y, z), r_u, (nx, ny, nz))
                raw = np.array(
                    [math.exp(-math.dist(p, (x, y, z)) / tau) for p in ball_u]
                )
                weights = raw / raw.sum()
                for w, p in zip(weights, ball_u):
                    probs[x, y, z, int(labels_grid[p])] += w
                # in exact arithmetic the row differs from the one-hot input
                # exactly when the r_u-ball is heterogeneous
                if any(int(labels_grid[p]) != center_label for p in ball_u):
                    mask[x, y, z] = 1
    return probs, mask


def brute_transition(volumes):
    """Second accumulation pass for the label transition matrix.

    volumes: iterable of (hard_labels_flat, probs_rows, mask_flat) with a
    shared label count L.  Returns the column-normalized L x L matrix.
    """
    num_labels = volumes[0][1].shape[1]
    acc = np.zeros((num_labels, num_labels), dtype=np.float64)
    for hard, probs, mask in volumes:
        for i in range(len(hard)):
            if mask[i] != 1:
                continue
            j = int(hard[i])
            for k in range(num_labels):
                acc[k, j] += probs[i, k]
    out = np.zeros_like(acc)
    for j in range(num_labels):
        col = acc[:, j]
        total = col.sum()
        if total == 0.0:
            out[j, j] = 1.0
        else:
            out[:, j] = col / total
    return out


def brute_dsc(pred_grid, ref_grid, label):
    """Set-based Dice computation."""
    a = {tuple(p) for p in np.argwhere(pred_grid == label)}
    b = {tuple(p) for p in np.argwhere(ref_grid == label)}
    if not a and not b:
        return 1.0
    if not a or not b:
        return 0.0
    return 2.0 * len(a & b) / (len(a) + len(b))


def brute_edt(mask_grid, spacing):
    """O(N^2) nearest-foreground-voxel search; distances in mm."""
    nx, ny, nz = mask_grid.shape
    seeds = np.argwhere(mask_grid)
    if len(seeds) == 0:
        raise ValueError("empty foreground")
    sx, sy, sz = spacing
    out = np.zeros((nx, ny, nz), dtype=np.float64)
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                dx = (seeds[:, 0] - x) * sx
                dy = (seeds[:, 1] - y) * sy
                dz = (seeds[:, 2] - z) * sz
                out[x, y, z] = np.sqrt(dx * dx + dy * dy + dz * dz).min()
    return out


def brute_surface(label_grid, label):
    """Voxels of the label with a 6-neighbor of another label or on the border."""
    nx, ny, nz = label_grid.shape
    out = set()
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                if label_grid[x, y, z] != label:
                    continue
                on_border = x in (0, nx - 1) or y in (0, ny - 1) or z in (0, nz - 1)
                differs = False
                for dx, dy, dz in ((1, 0, 0), (-1, 0, 0), (0, 1, 0),
                                   (0, -1, 0), (0, 0, 1), (0, 0, -1)):
                    px, py, pz = x + dx, y + dy, z + dz
                    if 0 <= px < nx and 0 <= py < ny and 0 <= pz < nz:
                        if label_grid[px, py, pz] != label:
                            differs = True
                            break
                if on_border or differs:
                    out.add((x, y, z))
    return out


def brute_hd95_assd(pred_grid, ref_grid, label, spacing):
    """Pooled symmetric surface distances via pairwise search."""
    surf_a = sorted(brute_surface(pred_grid, label))
    surf_b = sorted(brute_surface(ref_grid, label))
    if not surf_a or not surf_b:
        raise ValueError(f"label {label} missing a surface")
    sp = np.asarray(spacing, dtype=np.float64)
    pts_a = np.asarray(surf_a, dtype=np.float64) * sp
    pts_b = np.asarray(surf_b, dtype=np.float64) * sp
    d_ab = [np.sqrt(((pts_b - a) ** 2).sum(axis=1)).min() for a in pts_a]
    d_ba = [np.sqrt(((pts_a - b) ** 2).sum(axis=1)).min() for b in pts_b]
    pooled = np.array(d_ab + d_ba)
    return float(np.percentile(pooled, 95)), float(pooled.mean())


def fd_gradient(fn, scores, h=1e-4):
    """Central finite differences of a scalar function over every coordinate."""
    grad = np.zeros_like(scores, dtype=np.float64)
    it = np.nditer(scores, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        bumped = scores.copy()
        bumped[idx] += h
        hi = fn(bumped)
        bumped[idx] -= 2 * h
        lo = fn(bumped)
        grad[idx] = (hi - lo) / (2 * h)
        it.iternext()
    return grad
