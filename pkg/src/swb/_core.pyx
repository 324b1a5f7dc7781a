# cython: language_level=3
"""Compiled hot kernels.

Mirrors ``swb._pure`` function for function; ``swb._backend`` picks one at
import time. Euclidean costs accumulate coordinate by coordinate in index
order so that both backends produce bit-identical c-transforms.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport acos, fabs, sqrt, INFINITY

cnp.import_array()

NAME = "cython"


cdef inline double _cost(const double* x, const double* y, Py_ssize_t d, bint sphere) noexcept nogil:
    cdef double acc = 0.0
    cdef double diff
    cdef Py_ssize_t k
    if sphere:
        for k in range(d):
            acc += x[k] * y[k]
        if acc > 1.0:
            acc = 1.0
        elif acc < -1.0:
            acc = -1.0
        acc = acos(acc)
        return acc * acc
    for k in range(d):
        diff = x[k] - y[k]
        acc += diff * diff
    return acc


cdef inline Py_ssize_t _argmin_ct(const double* x, const double* atoms, const double* v,
                                  Py_ssize_t n, Py_ssize_t d, bint sphere,
                                  double* out) noexcept nogil:
    cdef double best = INFINITY
    cdef double val, ip
    cdef Py_ssize_t i, k, bi = 0
    for i in range(n):
        if sphere:
            # arc >= chord, so 2 - 2<x,y> - v_i bounds the value from below;
            # the margin keeps the skip exact under rounding
            ip = 0.0
            for k in range(d):
                ip += x[k] * atoms[i * d + k]
            if 2.0 - 2.0 * ip - v[i] > best + 1e-9 * (1.0 + fabs(best)):
                continue
        val = _cost(x, atoms + i * d, d, sphere) - v[i]
        if val < best:
            best = val
            bi = i
    out[0] = best
    return bi


def c_transform_argmin(const double[::1] x, const double[:, ::1] atoms,
                       const double[::1] v, bint sphere):
    """Return ``(i, h)`` with ``i = argmin_i c(x, y_i) - v_i`` (lowest index on ties)."""
    cdef double val
    cdef Py_ssize_t i
    with nogil:
        i = _argmin_ct(&x[0], &atoms[0, 0], &v[0], atoms.shape[0], atoms.shape[1], sphere, &val)
    return int(i), float(val)


def c_transform_batch(const double[:, ::1] X, const double[:, ::1] atoms,
                      const double[::1] v, bint sphere):
    """Vectorized c-transform over the rows of ``X``."""
    cdef Py_ssize_t m = X.shape[0], n = atoms.shape[0], d = atoms.shape[1], r
    idx = np.empty(m, dtype=np.int64)
    vals = np.empty(m, dtype=np.float64)
    cdef cnp.int64_t[::1] idx_v = idx
    cdef double[::1] vals_v = vals
    with nogil:
        for r in range(m):
            idx_v[r] = _argmin_ct(&X[r, 0], &atoms[0, 0], &v[0], n, d, sphere, &vals_v[r])
    return idx, vals


cdef class MinTracker:
    """Indexed binary min-heap over a shared key buffer.

    The tracker does not copy ``keys``: ``update`` writes through to the
    caller's array, which must not be modified by other means. Order is
    lexicographic on ``(key, index)`` so ``argmin`` breaks ties by lowest index.
    """

    cdef double[::1] _keys
    cdef cnp.intp_t[::1] _heap
    cdef cnp.intp_t[::1] _pos
    cdef Py_ssize_t _n
    cdef public long long ops

    def __init__(self, double[::1] keys):
        cdef Py_ssize_t i
        if keys.shape[0] < 1:
            raise ValueError("MinTracker needs at least one key")
        self._keys = keys
        self._n = keys.shape[0]
        self._heap = np.arange(self._n, dtype=np.intp)
        self._pos = np.arange(self._n, dtype=np.intp)
        self.ops = 0
        for i in range(self._n // 2 - 1, -1, -1):
            self._sift_down(i)
        self.ops = 0

    cdef inline bint _less(self, Py_ssize_t a, Py_ssize_t b) noexcept nogil:
        cdef double ka = self._keys[a], kb = self._keys[b]
        return ka < kb or (ka == kb and a < b)

    cdef inline void _swap(self, Py_ssize_t p, Py_ssize_t q) noexcept nogil:
        cdef cnp.intp_t a = self._heap[p], b = self._heap[q]
        self._heap[p] = b
        self._heap[q] = a
        self._pos[b] = p
        self._pos[a] = q

    cdef void _sift_up(self, Py_ssize_t p) noexcept nogil:
        cdef Py_ssize_t parent
        while p > 0:
            parent = (p - 1) >> 1
            self.ops += 1
            if self._less(self._heap[p], self._heap[parent]):
                self._swap(p, parent)
                p = parent
            else:
                break

    cdef void _sift_down(self, Py_ssize_t p) noexcept nogil:
        cdef Py_ssize_t left, right, best
        while True:
            left = 2 * p + 1
            if left >= self._n:
                break
            right = left + 1
            best = left
            self.ops += 1
            if right < self._n and self._less(self._heap[right], self._heap[left]):
                best = right
            self.ops += 1
            if self._less(self._heap[best], self._heap[p]):
                self._swap(best, p)
                p = best
            else:
                break

    cdef inline void _update(self, Py_ssize_t i, double delta) noexcept nogil:
        self._keys[i] += delta
        if delta < 0:
            self._sift_up(self._pos[i])
        elif delta > 0:
            self._sift_down(self._pos[i])

    cpdef Py_ssize_t argmin(self):
        return self._heap[0]

    cpdef double min_key(self):
        return self._keys[self._heap[0]]

    cpdef void update(self, Py_ssize_t i, double delta):
        if i < 0 or i >= self._n:
            raise IndexError(i)
        self._update(i, delta)

    @property
    def keys(self):
        return np.asarray(self._keys)

    def __len__(self):
        return self._n

    def check(self):
        """Verify the heap invariant (testing aid)."""
        cdef Py_ssize_t p
        for p in range(1, self._n):
            if self._less(self._heap[p], self._heap[(p - 1) >> 1]):
                return False
        for p in range(self._n):
            if self._pos[self._heap[p]] != p:
                return False
        return True


cdef inline double _absdiff_update(double* entry, double delta, double l1) noexcept nogil:
    l1 -= fabs(entry[0])
    entry[0] += delta
    return l1 + fabs(entry[0])


def run_steps(double[::1] s, double[:, ::1] V, MinTracker tracker,
              const double[:, ::1] atoms, bint sphere,
              const cnp.int64_t[::1] js, const double[:, ::1] X,
              double gamma, Py_ssize_t J,
              cnp.int64_t[::1] iw_out, cnp.int64_t[::1] im_out,
              double l1, double l1max):
    """Apply ``len(js)`` serial subgradient steps in place.

    ``tracker`` must wrap ``s``. Returns the updated ``(l1, l1max)`` where
    ``l1`` is the running l1 norm of ``(s, V)``.
    """
    cdef Py_ssize_t T = js.shape[0], n = atoms.shape[0], d = atoms.shape[1]
    cdef Py_ssize_t t, j, iw, im
    cdef double up = gamma / (2.0 * J), down = gamma / 2.0, val
    cdef double* vrow
    for t in range(T):
        j = js[t]
        vrow = &V[j, 0]
        iw = _argmin_ct(&X[t, 0], &atoms[0, 0], vrow, n, d, sphere, &val)
        im = tracker._heap[0]
        # worker-side update, then master-side update (same order as the runtime)
        l1 = _absdiff_update(vrow + im, up, l1)
        l1 = _absdiff_update(vrow + iw, -down, l1)
        l1 -= fabs(s[im])
        tracker._update(im, up)
        l1 += fabs(s[im])
        l1 -= fabs(s[iw])
        tracker._update(iw, -down)
        l1 += fabs(s[iw])
        if l1 > l1max:
            l1max = l1
        iw_out[t] = iw
        im_out[t] = im
    return l1, l1max


def dual_ascent(double[::1] v, double[::1] vsum, const double[::1] w,
                const double[:, ::1] atoms, bint sphere,
                const double[:, ::1] X, double eta0, Py_ssize_t t0, bint accumulate):
    """Stochastic ascent on the semi-discrete dual ``<w, v> + E h(X, v)``.

    Step ``eta0 / sqrt(t)`` with ``t`` counted from ``t0 + 1``; when
    ``accumulate`` is set every post-step iterate is added into ``vsum``.
    """
    cdef Py_ssize_t T = X.shape[0], n = atoms.shape[0], d = atoms.shape[1]
    cdef Py_ssize_t t, i, k
    cdef double eta, val
    for t in range(T):
        eta = eta0 / sqrt(<double>(t0 + t + 1))
        i = _argmin_ct(&X[t, 0], &atoms[0, 0], &v[0], n, d, sphere, &val)
        for k in range(n):
            v[k] += eta * w[k]
        v[i] -= eta
        if accumulate:
            for k in range(n):
                vsum[k] += v[k]


def min_cost_flow(const double[:, ::1] C, const cnp.int64_t[::1] supply,
                  const cnp.int64_t[::1] demand):
    """Successive shortest paths on the complete bipartite transport graph.

    Integer supplies/demands with equal totals. Returns ``(flow, ps, pt)``
    where forward reduced costs ``C[i,k] + ps[i] - pt[k]`` are nonnegative
    and vanish on every edge carrying flow.
    """
    cdef Py_ssize_t m = C.shape[0], n = C.shape[1]
    cdef Py_ssize_t i, k, bi, target, root, kk
    cdef bint bsink
    cdef double best, nd, D, rc
    cdef cnp.int64_t theta, remaining = 0

    flow_arr = np.zeros((m, n), dtype=np.int64)
    ps_arr = np.zeros(m)
    pt_arr = np.zeros(n)
    sl_arr = np.array(supply, dtype=np.int64)
    dl_arr = np.array(demand, dtype=np.int64)
    cdef cnp.int64_t[:, ::1] F = flow_arr
    cdef double[::1] ps = ps_arr, pt = pt_arr
    cdef cnp.int64_t[::1] sl = sl_arr, dl = dl_arr
    cdef double[::1] ds = np.empty(m), dt = np.empty(n)
    cdef unsigned char[::1] dones = np.empty(m, dtype=np.uint8)
    cdef unsigned char[::1] donet = np.empty(n, dtype=np.uint8)
    cdef cnp.intp_t[::1] preds = np.empty(m, dtype=np.intp)
    cdef cnp.intp_t[::1] predt = np.empty(n, dtype=np.intp)

    for i in range(m):
        remaining += sl[i]

    with nogil:
        while remaining > 0:
            for i in range(m):
                ds[i] = 0.0 if sl[i] > 0 else INFINITY
                dones[i] = 0
                preds[i] = -1
            for k in range(n):
                dt[k] = INFINITY
                donet[k] = 0
                predt[k] = -1
            target = -1
            D = 0.0
            while True:
                best = INFINITY
                bi = -1
                bsink = False
                for i in range(m):
                    if not dones[i] and ds[i] < best:
                        best = ds[i]
                        bi = i
                for k in range(n):
                    if not donet[k] and dt[k] < best:
                        best = dt[k]
                        bi = k
                        bsink = True
                if bi < 0:
                    break
                if bsink:
                    donet[bi] = 1
                    if dl[bi] > 0:
                        target = bi
                        D = best
                        break
                    for i in range(m):
                        if F[i, bi] > 0 and not dones[i]:
                            rc = -C[i, bi] + pt[bi] - ps[i]
                            if rc < 0.0:
                                rc = 0.0
                            nd = best + rc
                            if nd < ds[i]:
                                ds[i] = nd
                                preds[i] = bi
                else:
                    dones[bi] = 1
                    for k in range(n):
                        if not donet[k]:
                            rc = C[bi, k] + ps[bi] - pt[k]
                            if rc < 0.0:
                                rc = 0.0
                            nd = best + rc
                            if nd < dt[k]:
                                dt[k] = nd
                                predt[k] = bi
            if target < 0:
                break
            for i in range(m):
                ps[i] += ds[i] if dones[i] else D
            for k in range(n):
                pt[k] += dt[k] if donet[k] else D
            theta = dl[target]
            k = target
            while True:
                i = predt[k]
                if preds[i] < 0:
                    root = i
                    break
                kk = preds[i]
                if F[i, kk] < theta:
                    theta = F[i, kk]
                k = kk
            if sl[root] < theta:
                theta = sl[root]
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
            remaining -= theta
    if remaining > 0:
        raise RuntimeError("min_cost_flow: no augmenting path (unbalanced instance)")
    return flow_arr, ps_arr, pt_arr
