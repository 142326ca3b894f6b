"""Pure-numpy forest kernels.

Mirrors ``_kernels.pyx`` function for function. Tree growth follows the same
node order, RNG stream and floating-point summation order as the compiled
kernel, so both backends grow identical trees. Prediction kernels agree to
rounding.
"""
from __future__ import annotations

import math

import numpy as np

MODE_REGRESSION = 0
MODE_CAUSAL = 1
MODE_SURVIVAL = 2

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
# relative slack on the no-split value; absorbs rounding when rho is constant
GAIN_SLACK = 1e-10


class SplitMix64:
    def __init__(self, seed: int):
        self.state = int(seed) & _MASK

    def next(self) -> int:
        self.state = (self.state + _GOLDEN) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK
        return z ^ (z >> 31)


def draw_features(rng: SplitMix64, p: int, mtry: int) -> list[int]:
    feats = list(range(p))
    for q in range(mtry):
        j = q + rng.next() % (p - q)
        feats[q], feats[j] = feats[j], feats[q]
    return feats[:mtry]


def _seqsum(v: np.ndarray) -> float:
    # left-to-right accumulation, matching the compiled loops
    return float(np.cumsum(v)[-1]) if v.size else 0.0


def relabel_regression(idx, y, w):
    yy = y[idx]
    if yy.min() == yy.max():
        return None
    ww = w[idx]
    mean = _seqsum(ww * yy) / _seqsum(ww)
    return yy - mean


def relabel_causal(idx, a, b, w):
    ww = w[idx]
    aa = a[idx]
    bb = b[idx]
    sa = _seqsum(ww * aa)
    sb = _seqsum(ww * bb)
    sabs = _seqsum(ww * np.abs(bb))
    if sabs == 0.0 or abs(sb) <= 1e-12 * sabs:
        return None
    tau = sa / sb
    return (aa - tau * bb) / sb


def relabel_survival(idx, tidx, event, pre, w, n_grid):
    k = tidx[idx]
    ww = w[idx]
    ev = event[idx]
    d_n = np.bincount(k, weights=ww * ev, minlength=n_grid)
    exits = np.bincount(k, weights=ww, minlength=n_grid)
    early = np.bincount(k, weights=ww * pre[idx], minlength=n_grid)
    at_risk = np.cumsum(exits[::-1])[::-1]
    den = at_risk - early
    haz = np.zeros(n_grid)
    np.divide(d_n, den, out=haz, where=den > 0)
    cumhaz = np.cumsum(haz)
    return ev - cumhaz[k]


def relabel(mode, idx, y, a, b, w, tidx, event, pre, n_grid):
    if mode == MODE_REGRESSION:
        return relabel_regression(idx, y, w)
    if mode == MODE_CAUSAL:
        return relabel_causal(idx, a, b, w)
    if mode == MODE_SURVIVAL:
        return relabel_survival(idx, tidx, event, pre, w, n_grid)
    raise ValueError(f"unknown split mode {mode}")


def scan_split(X, idx, rho, w_node, feats, min_node_size, child_balance):
    """Best ``(feature, threshold, gain, n_left)`` over ``feats`` or ``None``.

    ``idx`` must be ascending; ``rho`` and ``w_node`` are aligned with it.
    """
    cnt = idx.size
    contrib = w_node * rho
    total_s = _seqsum(contrib)
    total_w = _seqsum(w_node)
    nosplit = total_s * total_s / total_w
    best = nosplit + GAIN_SLACK * nosplit
    minc = max(min_node_size, int(math.ceil(child_balance * cnt)))
    n_left = np.arange(1, cnt)
    size_ok = (n_left >= minc) & (cnt - n_left >= minc)
    if not size_ok.any():
        return None
    found = None
    for f in feats:
        xv = X[idx, f]
        o = np.argsort(xv, kind="stable")
        xs = xv[o]
        s_left = np.cumsum(contrib[o])[:-1]
        w_left = np.cumsum(w_node[o])[:-1]
        s_right = total_s - s_left
        w_right = total_w - w_left
        valid = size_ok & (xs[:-1] < xs[1:])
        if not valid.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            gains = s_left * s_left / w_left + s_right * s_right / w_right
        gains = np.where(valid, gains, -np.inf)
        j = int(np.argmax(gains))
        if gains[j] > best:
            best = gains[j]
            lo, hi = xs[j], xs[j + 1]
            thr = lo + (hi - lo) * 0.5
            if not thr < hi:
                thr = lo
            found = (int(f), float(thr), float(best), j + 1)
    return found


def grow_tree(X, order, split_idx, mode, y, a, b, w, tidx, event, pre, n_grid,
              min_node_size, mtry, child_balance, seed):
    rng = SplitMix64(seed)
    p = X.shape[1]
    nodes = [np.asarray(split_idx, dtype=np.int64)]
    feature, threshold, left, right = [-1], [0.0], [-1], [-1]
    head = 0
    while head < len(nodes):
        node = head
        idx = nodes[node]
        head += 1
        if idx.size < 2 * min_node_size:
            continue
        feats = draw_features(rng, p, mtry)
        rho = relabel(mode, idx, y, a, b, w, tidx, event, pre, n_grid)
        if rho is None:
            continue
        dec = scan_split(X, idx, rho, w[idx], feats, min_node_size, child_balance)
        if dec is None:
            continue
        f, thr, _, _ = dec
        go_left = X[idx, f] <= thr
        feature[node] = f
        threshold[node] = thr
        left[node] = len(nodes)
        right[node] = len(nodes) + 1
        for child in (idx[go_left], idx[~go_left]):
            nodes.append(child)
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
    return (np.array(feature, dtype=np.int64), np.array(threshold, dtype=float),
            np.array(left, dtype=np.int64), np.array(right, dtype=np.int64))


def route_tree(feature, threshold, left, right, X, rows=None):
    Xr = X if rows is None else X[rows]
    node = np.zeros(Xr.shape[0], dtype=np.int64)
    active = feature[node] >= 0
    while active.any():
        cur = node[active]
        f = feature[cur]
        vals = Xr[np.flatnonzero(active), f]
        node[active] = np.where(vals <= threshold[cur], left[cur], right[cur])
        active = feature[node] >= 0
    return node


def route_forest(node_ptr, feature, threshold, left, right, Xq):
    B = node_ptr.size - 1
    out = np.empty((Xq.shape[0], B), dtype=np.int64)
    for t in range(B):
        s, e = node_ptr[t], node_ptr[t + 1]
        out[:, t] = route_tree(feature[s:e], threshold[s:e], left[s:e], right[s:e], Xq) + s
    return out


def _tree_mask(leaves, leaf_cnt, exclude, inbag):
    ok = leaf_cnt[leaves] > 0
    if exclude is not None and inbag is not None and inbag.size:
        has = exclude >= 0
        if has.any():
            B = leaves.shape[1]
            ex = np.where(has, exclude, 0)
            inb = inbag[np.arange(B)[None, :], ex[:, None]].astype(bool)
            ok &= ~(inb & has[:, None])
    return ok


def predict_ratio(node_ptr, feature, threshold, left, right, leaf_num, leaf_den, leaf_cnt,
                  Xq, exclude, inbag, ci_group_size, want_var):
    """Forest-weighted ratio ``sum(alpha*num) / sum(alpha*den)`` per query.

    Returns ``(est, den_mean, h_raw, h_se, n_trees)``; ``h_raw`` is the
    little-bags variance of the per-tree residual ``num_b - est * den_b`` and
    ``h_se`` the Monte Carlo scale of that estimate (both NaN when fewer than
    two complete bags are available).
    """
    leaves = route_forest(node_ptr, feature, threshold, left, right, Xq)
    ok = _tree_mask(leaves, leaf_cnt, exclude, inbag)
    cnt = np.where(ok, leaf_cnt[leaves], 1).astype(float)
    num_b = np.where(ok, leaf_num[leaves] / cnt, 0.0)
    den_b = np.where(ok, leaf_den[leaves] / cnt, 0.0)
    n_used = ok.sum(axis=1)
    m = Xq.shape[0]
    if leaves.shape[1]:
        s_num = np.cumsum(num_b, axis=1)[:, -1]
        s_den = np.cumsum(den_b, axis=1)[:, -1]
    else:
        s_num = s_den = np.zeros(m)
    with np.errstate(divide="ignore", invalid="ignore"):
        est = np.where(n_used > 0, s_num / s_den, np.nan)
        den_mean = np.where(n_used > 0, s_den / np.maximum(n_used, 1), np.nan)
    h_raw = np.full(m, np.nan)
    h_se = np.full(m, np.nan)
    if want_var and ci_group_size >= 2:
        g = ci_group_size
        n_groups = leaves.shape[1] // g
        for q in range(m):
            okq = ok[q, : n_groups * g].reshape(n_groups, g)
            good = okq.all(axis=1)
            ng = int(good.sum())
            if ng < 2 or not np.isfinite(est[q]):
                continue
            resid = (num_b[q, : n_groups * g] - est[q] * den_b[q, : n_groups * g]).reshape(n_groups, g)[good]
            h_raw[q], h_se[q] = _little_bags(resid, g)
    return est, den_mean, h_raw, h_se, n_used


def _little_bags(resid, g):
    # resid: (n_good_groups, g) per-tree residuals
    ng = resid.shape[0]
    flat = resid.reshape(-1)
    avg = _seqsum(flat) / (ng * g)
    psi_sq = _seqsum(flat * flat) / (ng * g)
    grp = np.cumsum(resid, axis=1)[:, -1] / g
    grp_sq = _seqsum(grp * grp) / ng
    var_between = grp_sq - avg * avg
    var_total = psi_sq - avg * avg
    group_noise = (var_total - var_between) / (g - 1)
    return var_between - group_noise, max(var_between, group_noise) * np.sqrt(2.0 / ng)


def weighted_km(node_ptr, feature, threshold, left, right, leaf_ptr, leaf_members, leaf_cnt,
                Xq, exclude, inbag, tidx, event, pre, n_grid):
    """Forest-weighted Kaplan-Meier curves on the grid, one row per query.

    ``pre`` marks samples that leave the risk set just before the target
    event at their own grid time (failures when estimating censoring).
    Queries with no contributing tree get the constant curve 1.
    """
    m = Xq.shape[0]
    n = tidx.size
    leaves = route_forest(node_ptr, feature, threshold, left, right, Xq)
    ok = _tree_mask(leaves, leaf_cnt, exclude, inbag)
    out = np.ones((m, n_grid))
    chunk = max(1, int(4_000_000 // max(n, 1)))
    for s in range(0, m, chunk):
        qs = np.arange(s, min(m, s + chunk))
        alpha = np.zeros((qs.size, n))
        for t in range(leaves.shape[1]):
            lv = leaves[qs, t]
            okt = ok[qs, t]
            for g in np.unique(lv[okt]):
                rows = np.flatnonzero((lv == g) & okt)
                mem = leaf_members[leaf_ptr[g]: leaf_ptr[g + 1]]
                # bootstrap leaves may repeat a sample
                contrib = np.bincount(mem, minlength=n) / mem.size
                alpha[rows] += contrib
        d_n = np.zeros((qs.size, n_grid))
        exits = np.zeros((qs.size, n_grid))
        early = np.zeros((qs.size, n_grid))
        np.add.at(d_n.T, tidx, (alpha * event).T)
        np.add.at(exits.T, tidx, alpha.T)
        np.add.at(early.T, tidx, (alpha * pre).T)
        at_risk = np.cumsum(exits[:, ::-1], axis=1)[:, ::-1]
        den = at_risk - early
        haz = np.zeros_like(d_n)
        np.divide(d_n, den, out=haz, where=den > 1e-12)
        np.minimum(haz, 1.0, out=haz)
        out[qs] = np.cumprod(1.0 - haz, axis=1)
    return out
