"""Pure-Python/NumPy kernels; same API and arithmetic order as ``_core``."""
from __future__ import annotations

import math

import numpy as np

NAME = "python"


def _costs(x, atoms, sphere):
    if sphere:
        ip = atoms @ x
        np.clip(ip, -1.0, 1.0, out=ip)
        ang = np.arccos(ip)
        return ang * ang
    diff = atoms[:, 0] - x[0]
    acc = diff * diff
    for k in range(1, atoms.shape[1]):
        diff = atoms[:, k] - x[k]
        acc += diff * diff
    return acc


def c_transform_argmin(x, atoms, v, sphere):
    """Return ``(i, h)`` with ``i = argmin_i c(x, y_i) - v_i`` (lowest index on ties)."""
    vals = _costs(np.asarray(x, dtype=float), atoms, sphere) - v
    i = int(np.argmin(vals))
    return i, float(vals[i])


def c_transform_batch(X, atoms, v, sphere):
    X = np.asarray(X, dtype=float)
    idx = np.empty(X.shape[0], dtype=np.int64)
    vals = np.empty(X.shape[0])
    chunk = max(1, 2_000_000 // max(atoms.shape[0], 1))
    for lo in range(0, X.shape[0], chunk):
        blk = X[lo:lo + chunk]
        if sphere:
            ang = np.arccos(np.clip(blk @ atoms.T, -1.0, 1.0))
            c = ang * ang
        else:
            diff = atoms[None, :, 0] - blk[:, 0, None]
            c = diff * diff
            for k in range(1, atoms.shape[1]):
                diff = atoms[None, :, k] - blk[:, k, None]
                c += diff * diff
        c -= v[None, :]
        i = np.argmin(c, axis=1)
        idx[lo:lo + chunk] = i
        vals[lo:lo + chunk] = c[np.arange(c.shape[0]), i]
    return idx, vals


class MinTracker:
    """Indexed binary min-heap over a shared key buffer.

    ``update`` writes through to the caller's array. Order is lexicographic
    on ``(key, index)``, so ``argmin`` breaks ties by lowest index.
    """

    def __init__(self, keys):
        if len(keys) < 1:
            raise ValueError("MinTracker needs at least one key")
        self._keys = keys
        self._n = len(keys)
        self._heap = list(range(self._n))
        self._pos = list(range(self._n))
        self.ops = 0
        for i in range(self._n // 2 - 1, -1, -1):
            self._sift_down(i)
        self.ops = 0

    def _less(self, a, b):
        ka = self._keys[a]
        kb = self._keys[b]
        return ka < kb or (ka == kb and a < b)

    def _swap(self, p, q):
        h = self._heap
        a, b = h[p], h[q]
        h[p], h[q] = b, a
        self._pos[b] = p
        self._pos[a] = q

    def _sift_up(self, p):
        h = self._heap
        while p > 0:
            parent = (p - 1) >> 1
            self.ops += 1
            if self._less(h[p], h[parent]):
                self._swap(p, parent)
                p = parent
            else:
                break

    def _sift_down(self, p):
        h = self._heap
        n = self._n
        while True:
            left = 2 * p + 1
            if left >= n:
                break
            right = left + 1
            best = left
            self.ops += 1
            if right < n and self._less(h[right], h[left]):
                best = right
            self.ops += 1
            if self._less(h[best], h[p]):
                self._swap(best, p)
                p = best
            else:
                break

    def argmin(self):
        return self._heap[0]

    def min_key(self):
        return float(self._keys[self._heap[0]])

    def update(self, i, delta):
        if i < 0 or i >= self._n:
            raise IndexError(i)
        self._keys[i] += delta
        if delta < 0:
            self._sift_up(self._pos[i])
        elif delta > 0:
            self._sift_down(self._pos[i])

    @property
    def keys(self):
        return self._keys

    def __len__(self):
        return self._n

    def check(self):
        h = self._heap
        for p in range(1, self._n):
            if self._less(h[p], h[(p - 1) >> 1]):
                return False
        return all(self._pos[h[p]] == p for p in range(self._n))


def run_steps(s, V, tracker, atoms, sphere, js, X, gamma, J, iw_out, im_out, l1, l1max):
    """Apply ``len(js)`` serial subgradient steps in place; see ``_core.run_steps``."""
    up = gamma / (2.0 * J)
    down = gamma / 2.0
    for t in range(len(js)):
        j = int(js[t])
        vrow = V[j]
        iw, _ = c_transform_argmin(X[t], atoms, vrow, sphere)
        im = tracker.argmin()
        l1 -= abs(vrow[im])
        vrow[im] += up
        l1 += abs(vrow[im])
        l1 -= abs(vrow[iw])
        vrow[iw] -= down
        l1 += abs(vrow[iw])
        l1 -= abs(s[im])
        tracker.update(im, up)
        l1 += abs(s[im])
        l1 -= abs(s[iw])
        tracker.update(iw, -down)
        l1 += abs(s[iw])
        if l1 > l1max:
            l1max = l1
        iw_out[t] = iw
        im_out[t] = im
    return float(l1), float(l1max)


def dual_ascent(v, vsum, w, atoms, sphere, X, eta0, t0, accumulate):
    for t in range(X.shape[0]):
        eta = eta0 / math.sqrt(t0 + t + 1)
        i, _ = c_transform_argmin(X[t], atoms, v, sphere)
        v += eta * w
        v[i] -= eta
        if accumulate:
            vsum += v


def min_cost_flow(C, supply, demand):
    """Successive shortest paths; see ``_core.min_cost_flow``."""
    C = np.asarray(C, dtype=float)
    m, n = C.shape
    F = np.zeros((m, n), dtype=np.int64)
    ps = np.zeros(m)
    pt = np.zeros(n)
    sl = np.array(supply, dtype=np.int64)
    dl = np.array(demand, dtype=np.int64)
    remaining = int(sl.sum())
    inf = np.inf
    while remaining > 0:
        ds = np.where(sl > 0, 0.0, inf)
        dt = np.full(n, inf)
        dones = np.zeros(m, dtype=bool)
        donet = np.zeros(n, dtype=bool)
        preds = np.full(m, -1, dtype=np.intp)
        predt = np.full(n, -1, dtype=np.intp)
        target = -1
        D = 0.0
        while True:
            cs = np.where(dones, inf, ds)
            ct = np.where(donet, inf, dt)
            i = int(np.argmin(cs))
            k = int(np.argmin(ct))
            # sources win ties, as in the compiled scan order
            if cs[i] == inf and ct[k] == inf:
                break
            if ct[k] < cs[i]:
                best = ct[k]
                donet[k] = True
                if dl[k] > 0:
                    target = k
                    D = best
                    break
                cand = (F[:, k] > 0) & ~dones
                if cand.any():
                    rc = np.maximum(-C[:, k] + pt[k] - ps, 0.0)
                    nd = best + rc
                    upd = cand & (nd < ds)
                    ds[upd] = nd[upd]
                    preds[upd] = k
            else:
                best = cs[i]
                dones[i] = True
                rc = np.maximum(C[i] + ps[i] - pt, 0.0)
                nd = best + rc
                upd = ~donet & (nd < dt)
                dt[upd] = nd[upd]
                predt[upd] = i
        if target < 0:
            break
        ps += np.where(dones, ds, D)
        pt += np.where(donet, dt, D)
        theta = dl[target]
        k = target
        while True:
            i = predt[k]
            if preds[i] < 0:
                root = i
                break
            kk = preds[i]
            theta = min(theta, F[i, kk])
            k = kk
        theta = min(theta, sl[root])
        k = target
        while True:
            i = predt[k]
            F[i, k] += theta
            if preds[i] < 0:
                break
            kk = preds[i]
            F[i, kk] -= theta
            k = kk
        sl[root] -= theta
        dl[target] -= theta
        remaining -= int(theta)
    if remaining > 0:
        raise RuntimeError("min_cost_flow: no augmenting path (unbalanced instance)")
    return F, ps, pt
