# cython: language_level=3
"""Compiled forest kernels.

Same signatures and arithmetic order as ``_pykernels``; see that module for
the reference semantics.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport ceil, fabs, fmax, isfinite, sqrt, NAN
from libc.stdint cimport uint64_t, int64_t, uint8_t

cnp.import_array()

cdef double GAIN_SLACK = 1e-10


cdef inline uint64_t _sm_next(uint64_t* state) nogil:
    state[0] += <uint64_t>0x9E3779B97F4A7C15
    cdef uint64_t z = state[0]
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EB
    return z ^ (z >> 31)


cdef int _relabel(int mode, const int64_t[::1] canon, Py_ssize_t s, Py_ssize_t e,
                  const double[::1] y, const double[::1] a, const double[::1] b,
                  const double[::1] w, const int64_t[::1] tidx, const double[::1] event,
                  const double[::1] pre, double[::1] rho, double[::1] dn, double[::1] ex,
                  double[::1] ea, double[::1] haz) nogil:
    """Fill ``rho[i]`` for node samples; return 0 if the node cannot split."""
    cdef Py_ssize_t t, i, k, kmin, kmax
    cdef double sw, swy, sa, sb, sabs, tau, y0, den, acc
    if mode == 0:
        y0 = y[canon[s]]
        k = 0
        for t in range(s + 1, e):
            if y[canon[t]] != y0:
                k = 1
                break
        if k == 0:
            return 0
        swy = 0.0
        sw = 0.0
        for t in range(s, e):
            i = canon[t]
            swy = swy + w[i] * y[i]
        for t in range(s, e):
            sw = sw + w[canon[t]]
        tau = swy / sw
        for t in range(s, e):
            i = canon[t]
            rho[i] = y[i] - tau
        return 1
    elif mode == 1:
        sa = 0.0
        sb = 0.0
        sabs = 0.0
        for t in range(s, e):
            i = canon[t]
            sa = sa + w[i] * a[i]
        for t in range(s, e):
            i = canon[t]
            sb = sb + w[i] * b[i]
        for t in range(s, e):
            i = canon[t]
            sabs = sabs + w[i] * fabs(b[i])
        if sabs == 0.0 or fabs(sb) <= 1e-12 * sabs:
            return 0
        tau = sa / sb
        for t in range(s, e):
            i = canon[t]
            rho[i] = (a[i] - tau * b[i]) / sb
        return 1
    else:
        kmin = tidx[canon[s]]
        kmax = kmin
        for t in range(s, e):
            k = tidx[canon[t]]
            if k < kmin:
                kmin = k
            if k > kmax:
                kmax = k
        for k in range(kmin, kmax + 1):
            dn[k] = 0.0
            ex[k] = 0.0
            ea[k] = 0.0
        for t in range(s, e):
            i = canon[t]
            k = tidx[i]
            dn[k] = dn[k] + w[i] * event[i]
            ex[k] = ex[k] + w[i]
            ea[k] = ea[k] + w[i] * pre[i]
        # reverse cumulative risk set, then forward cumulative hazard
        acc = 0.0
        for k in range(kmax, kmin - 1, -1):
            acc = acc + ex[k]
            ex[k] = acc
        acc = 0.0
        for k in range(kmin, kmax + 1):
            den = ex[k] - ea[k]
            if den > 0:
                acc = acc + dn[k] / den
            else:
                acc = acc + 0.0
            haz[k] = acc
        for t in range(s, e):
            i = canon[t]
            rho[i] = event[i] - haz[tidx[i]]
        return 1


def grow_tree(const double[:, ::1] X, const int64_t[:, ::1] order, split_idx, int mode,
              const double[::1] y, const double[::1] a, const double[::1] b,
              const double[::1] w, const int64_t[::1] tidx, const double[::1] event,
              const double[::1] pre, Py_ssize_t n_grid, Py_ssize_t min_node_size,
              Py_ssize_t mtry, double child_balance, uint64_t seed):
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t p = X.shape[1]
    cdef int64_t[::1] sidx = np.ascontiguousarray(split_idx, dtype=np.int64)
    cdef Py_ssize_t ns = sidx.shape[0]
    cdef Py_ssize_t cap = 2 * ns + 1
    feature_a = np.full(cap, -1, dtype=np.int64)
    threshold_a = np.zeros(cap, dtype=np.float64)
    left_a = np.full(cap, -1, dtype=np.int64)
    right_a = np.full(cap, -1, dtype=np.int64)
    cdef int64_t[::1] feature = feature_a
    cdef double[::1] threshold = threshold_a
    cdef int64_t[::1] left = left_a
    cdef int64_t[::1] right = right_a
    cdef int64_t[::1] nstart = np.zeros(cap, dtype=np.int64)
    cdef int64_t[::1] nend = np.zeros(cap, dtype=np.int64)

    cdef uint8_t[::1] member = np.zeros(n, dtype=np.uint8)
    cdef uint8_t[::1] goleft = np.zeros(n, dtype=np.uint8)
    cdef int64_t[:, ::1] seg = np.empty((p, ns), dtype=np.int64)
    cdef int64_t[::1] canon = np.empty(ns, dtype=np.int64)
    cdef int64_t[::1] tmp = np.empty(ns, dtype=np.int64)
    cdef double[::1] rho = np.zeros(n, dtype=np.float64)
    cdef double[::1] contrib = np.zeros(n, dtype=np.float64)
    cdef Py_ssize_t gcap = n_grid if n_grid > 0 else 1
    cdef double[::1] dn = np.zeros(gcap)
    cdef double[::1] ex = np.zeros(gcap)
    cdef double[::1] ea = np.zeros(gcap)
    cdef double[::1] haz = np.zeros(gcap)
    cdef int64_t[::1] feats = np.empty(p, dtype=np.int64)

    cdef Py_ssize_t t, f, i, j, q, r, c, nl, nr, cnt, minc, head, n_nodes, s, e, best_f, jj
    cdef int64_t sw_tmp
    cdef uint64_t state = seed
    cdef double total_s, total_w, nosplit, best, sl, wl, sr, wr, gain, xv, xn, thr, best_thr

    for t in range(ns):
        member[sidx[t]] = 1
    canon_sorted = np.sort(np.asarray(sidx))
    for t in range(ns):
        canon[t] = canon_sorted[t]
    with nogil:
        for f in range(p):
            c = 0
            for t in range(n):
                i = order[f, t]
                if member[i]:
                    seg[f, c] = i
                    c += 1

        nstart[0] = 0
        nend[0] = ns
        n_nodes = 1
        head = 0
        while head < n_nodes:
            s = nstart[head]
            e = nend[head]
            cnt = e - s
            head += 1
            if cnt < 2 * min_node_size:
                continue
            for f in range(p):
                feats[f] = f
            for q in range(mtry):
                r = q + <Py_ssize_t>(_sm_next(&state) % <uint64_t>(p - q))
                sw_tmp = feats[q]
                feats[q] = feats[r]
                feats[r] = sw_tmp
            if not _relabel(mode, canon, s, e, y, a, b, w, tidx, event, pre, rho, dn, ex, ea, haz):
                continue
            total_s = 0.0
            total_w = 0.0
            for t in range(s, e):
                i = canon[t]
                contrib[i] = w[i] * rho[i]
            for t in range(s, e):
                total_s = total_s + contrib[canon[t]]
            for t in range(s, e):
                total_w = total_w + w[canon[t]]
            nosplit = total_s * total_s / total_w
            best = nosplit + GAIN_SLACK * nosplit
            minc = <Py_ssize_t>ceil(child_balance * cnt)
            if minc < min_node_size:
                minc = min_node_size
            if cnt - 1 < minc or minc > cnt - minc:
                continue
            best_f = -1
            best_thr = 0.0
            for q in range(mtry):
                f = feats[q]
                sl = 0.0
                wl = 0.0
                for t in range(s, e - 1):
                    i = seg[f, t]
                    sl = sl + contrib[i]
                    wl = wl + w[i]
                    nl = t - s + 1
                    if nl < minc or cnt - nl < minc:
                        continue
                    xv = X[i, f]
                    xn = X[seg[f, t + 1], f]
                    if not (xv < xn):
                        continue
                    sr = total_s - sl
                    wr = total_w - wl
                    gain = sl * sl / wl + sr * sr / wr
                    if gain > best:
                        best = gain
                        best_f = f
                        thr = xv + (xn - xv) * 0.5
                        if not (thr < xn):
                            thr = xv
                        best_thr = thr
            if best_f < 0:
                continue
            # partition every sorted segment and the canonical segment
            nl = 0
            for t in range(s, e):
                i = canon[t]
                if X[i, best_f] <= best_thr:
                    goleft[i] = 1
                    nl += 1
                else:
                    goleft[i] = 0
            for f in range(p + 1):
                j = 0
                jj = nl
                for t in range(s, e):
                    i = seg[f, t] if f < p else canon[t]
                    if goleft[i]:
                        tmp[j] = i
                        j += 1
                    else:
                        tmp[jj] = i
                        jj += 1
                for t in range(cnt):
                    if f < p:
                        seg[f, s + t] = tmp[t]
                    else:
                        canon[s + t] = tmp[t]
            feature[head - 1] = best_f
            threshold[head - 1] = best_thr
            left[head - 1] = n_nodes
            right[head - 1] = n_nodes + 1
            nstart[n_nodes] = s
            nend[n_nodes] = s + nl
            nstart[n_nodes + 1] = s + nl
            nend[n_nodes + 1] = e
            n_nodes += 2
    return (feature_a[:n_nodes].copy(), threshold_a[:n_nodes].copy(),
            left_a[:n_nodes].copy(), right_a[:n_nodes].copy())


cdef inline int64_t _route_one(const int64_t[::1] feature, const double[::1] threshold,
                               const int64_t[::1] left, const int64_t[::1] right,
                               const double[:, ::1] X, Py_ssize_t row, int64_t root) nogil:
    cdef int64_t node = root
    cdef int64_t f
    while True:
        f = feature[node]
        if f < 0:
            return node
        if X[row, f] <= threshold[node]:
            node = root + left[node]
        else:
            node = root + right[node]


def route_tree(const int64_t[::1] feature, const double[::1] threshold,
               const int64_t[::1] left, const int64_t[::1] right, X, rows=None):
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X if rows is None else np.asarray(X)[rows], dtype=np.float64)
    cdef Py_ssize_t m = Xv.shape[0]
    out_a = np.empty(m, dtype=np.int64)
    cdef int64_t[::1] out = out_a
    cdef Py_ssize_t r
    with nogil:
        for r in range(m):
            out[r] = _route_one(feature, threshold, left, right, Xv, r, 0)
    return out_a


def route_forest(const int64_t[::1] node_ptr, const int64_t[::1] feature,
                 const double[::1] threshold, const int64_t[::1] left,
                 const int64_t[::1] right, Xq):
    cdef const double[:, ::1] Xv = np.ascontiguousarray(Xq, dtype=np.float64)
    cdef Py_ssize_t m = Xv.shape[0]
    cdef Py_ssize_t B = node_ptr.shape[0] - 1
    out_a = np.empty((m, B), dtype=np.int64)
    cdef int64_t[:, ::1] out = out_a
    cdef Py_ssize_t r, t
    with nogil:
        for r in range(m):
            for t in range(B):
                out[r, t] = _route_one(feature, threshold, left, right, Xv, r, node_ptr[t])
    return out_a


def predict_ratio(const int64_t[::1] node_ptr, const int64_t[::1] feature,
                  const double[::1] threshold, const int64_t[::1] left,
                  const int64_t[::1] right, const double[::1] leaf_num,
                  const double[::1] leaf_den, const int64_t[::1] leaf_cnt,
                  Xq, exclude, inbag, Py_ssize_t ci_group_size, bint want_var):
    cdef const double[:, ::1] Xv = np.ascontiguousarray(Xq, dtype=np.float64)
    cdef Py_ssize_t m = Xv.shape[0]
    cdef Py_ssize_t B = node_ptr.shape[0] - 1
    cdef bint use_ex = exclude is not None and inbag is not None and np.asarray(inbag).size > 0
    cdef const int64_t[::1] exv = np.ascontiguousarray(exclude if use_ex else np.full(m, -1), dtype=np.int64)
    cdef const uint8_t[:, ::1] inb = np.ascontiguousarray(inbag if use_ex else np.zeros((1, 1)), dtype=np.uint8)
    est_a = np.full(m, np.nan)
    den_a = np.full(m, np.nan)
    h_a = np.full(m, np.nan)
    se_a = np.full(m, np.nan)
    used_a = np.zeros(m, dtype=np.int64)
    cdef double[::1] est = est_a
    cdef double[::1] denm = den_a
    cdef double[::1] hv = h_a
    cdef double[::1] sev = se_a
    cdef int64_t[::1] used = used_a
    cdef double[::1] nb = np.zeros(B if B > 0 else 1)
    cdef double[::1] db = np.zeros(B if B > 0 else 1)
    cdef uint8_t[::1] okb = np.zeros(B if B > 0 else 1, dtype=np.uint8)
    cdef Py_ssize_t r, t, g, k, ng, n_groups, nu
    cdef int64_t leaf, ex
    cdef double cntd, snum, sden, tau, avg, psi_sq, grp, grp_sq, res, vb, vt, gn
    cdef bint good
    g = ci_group_size
    with nogil:
        for r in range(m):
            ex = exv[r]
            nu = 0
            snum = 0.0
            sden = 0.0
            for t in range(B):
                leaf = _route_one(feature, threshold, left, right, Xv, r, node_ptr[t])
                okb[t] = 0
                nb[t] = 0.0
                db[t] = 0.0
                if leaf_cnt[leaf] <= 0:
                    continue
                if use_ex and ex >= 0 and inb[t, ex]:
                    continue
                okb[t] = 1
                cntd = <double>leaf_cnt[leaf]
                nb[t] = leaf_num[leaf] / cntd
                db[t] = leaf_den[leaf] / cntd
                nu += 1
            for t in range(B):
                snum = snum + nb[t]
            for t in range(B):
                sden = sden + db[t]
            used[r] = nu
            if nu == 0:
                continue
            est[r] = snum / sden
            denm[r] = sden / nu
            if not want_var or g < 2 or not isfinite(est[r]):
                continue
            tau = est[r]
            n_groups = B // g
            ng = 0
            avg = 0.0
            psi_sq = 0.0
            grp_sq = 0.0
            for k in range(n_groups):
                good = True
                for t in range(k * g, k * g + g):
                    if not okb[t]:
                        good = False
                if good:
                    ng += 1
            if ng < 2:
                continue
            for k in range(n_groups):
                good = True
                for t in range(k * g, k * g + g):
                    if not okb[t]:
                        good = False
                if not good:
                    continue
                for t in range(k * g, k * g + g):
                    res = nb[t] - tau * db[t]
                    avg = avg + res
            for k in range(n_groups):
                good = True
                for t in range(k * g, k * g + g):
                    if not okb[t]:
                        good = False
                if not good:
                    continue
                for t in range(k * g, k * g + g):
                    res = nb[t] - tau * db[t]
                    psi_sq = psi_sq + res * res
            for k in range(n_groups):
                good = True
                for t in range(k * g, k * g + g):
                    if not okb[t]:
                        good = False
                if not good:
                    continue
                grp = 0.0
                for t in range(k * g, k * g + g):
                    grp = grp + (nb[t] - tau * db[t])
                grp = grp / g
                grp_sq = grp_sq + grp * grp
            avg = avg / (ng * g)
            psi_sq = psi_sq / (ng * g)
            grp_sq = grp_sq / ng
            vb = grp_sq - avg * avg
            vt = psi_sq - avg * avg
            gn = (vt - vb) / (g - 1)
            hv[r] = vb - gn
            sev[r] = fmax(vb, gn) * sqrt(2.0 / ng)
    return est_a, den_a, h_a, se_a, used_a


def weighted_km(const int64_t[::1] node_ptr, const int64_t[::1] feature,
                const double[::1] threshold, const int64_t[::1] left,
                const int64_t[::1] right, const int64_t[::1] leaf_ptr,
                const int64_t[::1] leaf_members, const int64_t[::1] leaf_cnt,
                Xq, exclude, inbag, const int64_t[::1] tidx, const double[::1] event,
                const double[::1] pre, Py_ssize_t n_grid):
    cdef const double[:, ::1] Xv = np.ascontiguousarray(Xq, dtype=np.float64)
    cdef Py_ssize_t m = Xv.shape[0]
    cdef Py_ssize_t B = node_ptr.shape[0] - 1
    cdef bint use_ex = exclude is not None and inbag is not None and np.asarray(inbag).size > 0
    cdef const int64_t[::1] exv = np.ascontiguousarray(exclude if use_ex else np.full(m, -1), dtype=np.int64)
    cdef const uint8_t[:, ::1] inb = np.ascontiguousarray(inbag if use_ex else np.zeros((1, 1)), dtype=np.uint8)
    out_a = np.ones((m, n_grid))
    cdef double[:, ::1] out = out_a
    cdef double[::1] dn = np.zeros(n_grid)
    cdef double[::1] ex_ = np.zeros(n_grid)
    cdef double[::1] ea = np.zeros(n_grid)
    cdef Py_ssize_t r, t, k, u, i
    cdef int64_t leaf, exi
    cdef double wt, acc, den, h, surv
    with nogil:
        for r in range(m):
            for k in range(n_grid):
                dn[k] = 0.0
                ex_[k] = 0.0
                ea[k] = 0.0
            exi = exv[r]
            for t in range(B):
                leaf = _route_one(feature, threshold, left, right, Xv, r, node_ptr[t])
                if leaf_cnt[leaf] <= 0:
                    continue
                if use_ex and exi >= 0 and inb[t, exi]:
                    continue
                wt = 1.0 / <double>leaf_cnt[leaf]
                for u in range(leaf_ptr[leaf], leaf_ptr[leaf + 1]):
                    i = leaf_members[u]
                    k = tidx[i]
                    dn[k] += wt * event[i]
                    ex_[k] += wt
                    ea[k] += wt * pre[i]
            acc = 0.0
            for k in range(n_grid - 1, -1, -1):
                acc = acc + ex_[k]
                ex_[k] = acc
            surv = 1.0
            for k in range(n_grid):
                den = ex_[k] - ea[k]
                if den > 1e-12:
                    h = dn[k] / den
                    if h > 1.0:
                        h = 1.0
                    surv = surv * (1.0 - h)
                out[r, k] = surv
    return out_a
