"""Jitted inner loops (numba when available, numpy fallback otherwise)."""

import warnings

import numpy as np

try:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        from numba import njit, prange
        from numba.core.errors import NumbaWarning

    warnings.filterwarnings("ignore", category=NumbaWarning)
    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False


if _HAVE_NUMBA:

    @njit(parallel=True, fastmath=True, cache=True)
    def gradslp_sum(xs, nodes, wg, c):
        """sum_j c (x - y_j) |x - y_j|^{-3} (w g)_j for each row of xs."""
        out = np.zeros((xs.shape[0], 3))
        for p in prange(xs.shape[0]):
            a0 = 0.0
            a1 = 0.0
            a2 = 0.0
            for j in range(nodes.shape[0]):
                d0 = xs[p, 0] - nodes[j, 0]
                d1 = xs[p, 1] - nodes[j, 1]
                d2 = xs[p, 2] - nodes[j, 2]
                r2 = d0 * d0 + d1 * d1 + d2 * d2
                f = c * wg[j] / (r2 * np.sqrt(r2))
                a0 += f * d0
                a1 += f * d1
                a2 += f * d2
            out[p, 0] = a0
            out[p, 1] = a1
            out[p, 2] = a2
        return out

    @njit(parallel=True, fastmath=True, cache=True)
    def dir_gradslp_rows(xs, dirs, nodes, weights, c):
        """Rows of the lattice operator d_p . sum_j c (x_p - y_j)|.|^{-3} w_j."""
        out = np.zeros((xs.shape[0], nodes.shape[0]))
        for p in prange(xs.shape[0]):
            for j in range(nodes.shape[0]):
                d0 = xs[p, 0] - nodes[j, 0]
                d1 = xs[p, 1] - nodes[j, 1]
                d2 = xs[p, 2] - nodes[j, 2]
                r2 = d0 * d0 + d1 * d1 + d2 * d2
                if r2 > 1e-28:
                    f = c * weights[j] / (r2 * np.sqrt(r2))
                    out[p, j] = f * (d0 * dirs[p, 0] + d1 * dirs[p, 1] + d2 * dirs[p, 2])
        return out

    @njit(parallel=True, fastmath=True, cache=True)
    def gagliardo_pairs(coords, vals, mu):
        """sum_{i != j} (v_i - v_j)^2 |x_i - x_j|^{-3} mu_i mu_j."""
        m = coords.shape[0]
        total = 0.0
        for i in prange(m):
            acc = 0.0
            for j in range(m):
                if i == j:
                    continue
                d0 = coords[i, 0] - coords[j, 0]
                d1 = coords[i, 1] - coords[j, 1]
                d2 = coords[i, 2] - coords[j, 2]
                r2 = d0 * d0 + d1 * d1 + d2 * d2
                dv = vals[i] - vals[j]
                acc += dv * dv / (r2 * np.sqrt(r2)) * mu[j]
            total += acc * mu[i]
        return total

    @njit(parallel=True, fastmath=True, cache=True)
    def closest_on_grid(xp, xn, cand, ch):
        """Index of the closest (cand_j, ch_j) surface sample per point."""
        out = np.empty(xp.shape[0], dtype=np.int64)
        for p in prange(xp.shape[0]):
            best = 1e300
            arg = 0
            for j in range(cand.shape[0]):
                d0 = xp[p, 0] - cand[j, 0]
                d1 = xp[p, 1] - cand[j, 1]
                dz = xn[p] - ch[j]
                d2 = d0 * d0 + d1 * d1 + dz * dz
                if d2 < best:
                    best = d2
                    arg = j
            out[p] = arg
        return out

else:  # numpy fallbacks, identical semantics

    def gradslp_sum(xs, nodes, wg, c):
        out = np.empty((xs.shape[0], 3))
        n2 = np.sum(nodes * nodes, axis=1)
        block = max(1, (1 << 22) // max(len(nodes), 1))
        for a in range(0, len(xs), block):
            sl = slice(a, min(a + block, len(xs)))
            xb = xs[sl]
            rho2 = np.sum(xb * xb, 1)[:, None] - 2.0 * (xb @ nodes.T) + n2[None, :]
            t = c / (rho2 * np.sqrt(rho2)) * wg[None, :]
            out[sl] = xb * t.sum(1)[:, None] - t @ nodes
        return out

    def dir_gradslp_rows(xs, dirs, nodes, weights, c):
        out = np.zeros((xs.shape[0], nodes.shape[0]))
        for p in range(xs.shape[0]):
            diff = xs[p][None, :] - nodes
            rho2 = np.sum(diff * diff, axis=1)
            keep = rho2 > 1e-28
            f = np.zeros(len(nodes))
            f[keep] = c * weights[keep] / (rho2[keep] * np.sqrt(rho2[keep]))
            out[p] = f * (diff @ dirs[p])
        return out

    def closest_on_grid(xp, xn, cand, ch):
        out = np.empty(xp.shape[0], dtype=np.int64)
        block = max(1, (1 << 22) // max(len(cand), 1))
        for a in range(0, len(xp), block):
            sl = slice(a, min(a + block, len(xp)))
            d2 = (np.sum((xp[sl, None, :] - cand[None, :, :]) ** 2, axis=-1)
                  + (xn[sl, None] - ch[None, :]) ** 2)
            out[sl] = np.argmin(d2, axis=1)
        return out

    def gagliardo_pairs(coords, vals, mu, block=512):
        m = coords.shape[0]
        total = 0.0
        for a in range(0, m, block):
            sl = slice(a, min(a + block, m))
            diff = coords[sl, None, :] - coords[None, :, :]
            dist = np.sqrt(np.sum(diff * diff, axis=-1))
            ii = np.arange(sl.start, sl.stop)
            dist[ii - a, ii] = 1.0
            num = (vals[sl, None] - vals[None, :]) ** 2
            num[ii - a, ii] = 0.0
            total += float(np.sum(num / dist**3 * mu[sl, None] * mu[None, :]))
        return total
