"""Pure numpy/Python implementations of the hot kernels.

Same signatures and results as the compiled ``_ext`` module; used when the
extension is not built or ``MVNAD_PURE_PYTHON=1`` is set.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

PCG_MULT = 6364136223846793005
MASK64 = (1 << 64) - 1
_BLOCK = 2048


@lru_cache(maxsize=16)
def _jump_tables(inc: int) -> tuple[np.ndarray, np.ndarray, int, int]:
    # state_{k+j} = A[j] * state_k + C[j]  (mod 2**64)
    a_tab = np.empty(_BLOCK, dtype=np.uint64)
    c_tab = np.empty(_BLOCK, dtype=np.uint64)
    a, c = 1, 0
    for j in range(_BLOCK):
        a_tab[j] = a
        c_tab[j] = c
        a = (a * PCG_MULT) & MASK64
        c = (c * PCG_MULT + inc) & MASK64
    return a_tab, c_tab, a, c


def _output(old: np.ndarray) -> np.ndarray:
    xorshifted = (((old >> np.uint64(18)) ^ old) >> np.uint64(27)) & np.uint64(0xFFFFFFFF)
    rot = (old >> np.uint64(59)).astype(np.uint32)
    x = xorshifted.astype(np.uint32)
    return (x >> rot) | (x << ((np.uint32(32) - rot) & np.uint32(31)))


def pcg32_fill(state: int, inc: int, n: int) -> tuple[np.ndarray, int]:
    """Return ``n`` successive PCG32 outputs and the advanced state."""
    out = np.empty(n, dtype=np.uint32)
    if n == 0:
        return out, state
    a_tab, c_tab, a_blk, c_blk = _jump_tables(inc)
    s = state
    with np.errstate(over="ignore"):
        for start in range(0, n, _BLOCK):
            m = min(_BLOCK, n - start)
            olds = a_tab[:m] * np.uint64(s) + c_tab[:m]
            out[start : start + m] = _output(olds)
            if m == _BLOCK:
                s = (a_blk * s + c_blk) & MASK64
            else:
                s = (int(a_tab[m]) * s + int(c_tab[m])) & MASK64
    return out, s


def label_components(mask: np.ndarray) -> tuple[np.ndarray, int]:
    """8-connected labeling; labels 1..n numbered by row-major first pixel."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    provisional = np.zeros((h, w), dtype=np.int64)
    parent = [0]

    def find(a: int) -> int:
        root = a
        while parent[root] != root:
            root = parent[root]
        while parent[a] != root:
            parent[a], a = root, parent[a]
        return root

    rows, cols = np.nonzero(mask)
    for r, c in zip(rows.tolist(), cols.tolist()):
        neigh = []
        if c > 0 and provisional[r, c - 1]:
            neigh.append(provisional[r, c - 1])
        if r > 0:
            for dc in (-1, 0, 1):
                cc = c + dc
                if 0 <= cc < w and provisional[r - 1, cc]:
                    neigh.append(provisional[r - 1, cc])
        if not neigh:
            parent.append(len(parent))
            provisional[r, c] = len(parent) - 1
            continue
        roots = {find(int(x)) for x in neigh}
        keep = min(roots)
        for other in roots:
            parent[other] = keep
        provisional[r, c] = keep

    labels = np.zeros((h, w), dtype=np.int32)
    remap: dict[int, int] = {}
    for r, c in zip(rows.tolist(), cols.tolist()):
        root = find(int(provisional[r, c]))
        if root not in remap:
            remap[root] = len(remap) + 1
        labels[r, c] = remap[root]
    return labels, len(remap)


def _solve_group(lights: np.ndarray, obs: np.ndarray) -> np.ndarray:
    # obs: P x k ; returns P x 3 least-squares g via Cholesky of L^T L
    ata = lights.T @ lights
    chol = np.linalg.cholesky(ata)
    rhs = obs @ lights
    y = np.linalg.solve(chol, rhs.T)
    return np.linalg.solve(chol.T, y).T


def ps_solve(lights: np.ndarray, intensities: np.ndarray, trim: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel Lambertian least squares.

    lights: K x 3, intensities: K x P. With ``trim=1`` the dimmest observation
    of each pixel (lowest index on ties) is excluded. Returns (g: P x 3,
    residual: P).
    """
    lights = np.asarray(lights, dtype=np.float64)
    obs = np.asarray(intensities, dtype=np.float64).T
    n_pix, k = obs.shape
    g = np.empty((n_pix, 3))
    resid = np.empty(n_pix)
    if not trim:
        g[:] = _solve_group(lights, obs)
        resid[:] = np.linalg.norm(g @ lights.T - obs, axis=1)
        return g, resid
    drop = np.argmin(obs, axis=1)
    for j in range(k):
        sel = np.nonzero(drop == j)[0]
        if sel.size == 0:
            continue
        keep = np.array([i for i in range(k) if i != j])
        sub = obs[np.ix_(sel, keep)]
        gs = _solve_group(lights[keep], sub)
        g[sel] = gs
        resid[sel] = np.linalg.norm(gs @ lights[keep].T - sub, axis=1)
    return g, resid
