"""Compiled inner loops: column sampling and sparse forward/dual evolution.

Fields live on a dense index grid (a bounding box with margin) but only the
active sites are visited, so the work per step is proportional to the support.
"""

from __future__ import annotations

import math

import numba as nb
import numpy as np

from .rng import pack_bits, site_key_packed, time_key, uniform

GOSP, GOBP, DPRE, BCPP, VM = 0, 1, 2, 3, 4

OK, CAP_EXCEEDED, GRID_EXCEEDED = 0, 1, 2

_TWO64 = 2.0**64
_TWOM64 = 2.0**-64
_LN2 = math.log(2.0)
_EAGER_CELLS = 1 << 23


@nb.njit(inline="always")
def _dir_index(r):
    return r + 1


@nb.njit(inline="always")
def _neg_index(k):
    if k == 0:
        return 0
    if k % 2 == 1:
        return k + 1
    return k - 1


@nb.njit(inline="always")
def column_mask(kind, d, params, key):
    """One column as (mask, v): bit k of mask marks a nonzero entry at offset
    index k, and every nonzero entry equals v (true for the whole catalogue).

    Offset indices: 0 origin, 2j+1 -> +e_j, 2j+2 -> -e_j, for u = x - y.
    """
    p = params[0]
    q = params[1]
    nb_ = 2 * d
    full = (1 << (nb_ + 1)) - 2
    mask = 0
    v = 1.0
    if kind == GOSP:
        if uniform(key, 0) < p:
            mask = full
        if q > 0.0 and uniform(key, 1) < q:
            mask |= 1
    elif kind == GOBP:
        if q > 0.0 and uniform(key, 0) < q:
            mask = 1
        for k in range(1, nb_ + 1):
            if uniform(key, k) < p:
                mask |= 1 << k
    elif kind == DPRE:
        if params[4] == 0.0:
            omega = 1.0 if uniform(key, 0) < params[3] else 0.0
        else:
            u0 = uniform(key, 0)
            u1 = uniform(key, 1)
            omega = math.sqrt(-2.0 * math.log1p(-u0)) * math.cos(2.0 * math.pi * u1)
        v = math.exp(params[2] * omega) / nb_
        mask = full
    elif kind == BCPP:
        if uniform(key, 0) < p:
            r = int(uniform(key, 1) * nb_)
            mask = 1 << _neg_index(_dir_index(r))
        if q > 0.0 and uniform(key, 2) < q:
            mask |= 1
    else:  # VM
        if uniform(key, 0) < p:
            mask = 1 << _dir_index(int(uniform(key, 1) * nb_))
        else:
            mask = 1
    return mask, v


@nb.njit(inline="always")
def has_self_offset(kind, params):
    if kind == VM:
        return params[0] < 1.0
    if kind == DPRE:
        return False
    return params[1] > 0.0


@nb.njit(nogil=True, cache=True)
def sample_column_kernel(kind, d, params, key, ks, vs):
    """Fill (ks[i], vs[i]) with the nonzero entries of one column; returns
    the number of entries."""
    mask, v = column_mask(kind, d, params, key)
    n = 0
    for k in range(2 * d + 1):
        if (mask >> k) & 1:
            ks[n] = k
            vs[n] = v
            n += 1
    return n


@nb.njit(inline="always")
def _unpack(g, bits, bias, mask, d, out):
    for j in range(d - 1, -1, -1):
        out[j] = (g & mask) - bias
        g >>= bits


@nb.njit(inline="always")
def _encode(c, lo, shape):
    f = 0
    for j in range(lo.shape[0]):
        f = f * shape[j] + (c[j] - lo[j])
    return f


@nb.njit(cache=True)
def _grid_for(amin, amax, margin):
    d = amin.shape[0]
    lo = np.empty(d, np.int64)
    shape = np.empty(d, np.int64)
    size = 1
    for j in range(d):
        lo[j] = amin[j] - margin
        shape[j] = amax[j] - amin[j] + 1 + 2 * margin
        size *= shape[j]
    return lo, shape, size


@nb.njit(cache=True)
def _flat_offsets(shape):
    d = shape.shape[0]
    strides = np.empty(d, np.int64)
    s = 1
    for j in range(d - 1, -1, -1):
        strides[j] = s
        s *= shape[j]
    off = np.zeros(2 * d + 1, np.int64)
    for j in range(d):
        off[2 * j + 1] = strides[j]
        off[2 * j + 2] = -strides[j]
    return off


@nb.njit(cache=True)
def _packed_offsets(d):
    bits = pack_bits(d)
    off = np.zeros(2 * d + 1, np.int64)
    for j in range(d):
        s = np.int64(1) << (bits * (d - 1 - j))
        off[2 * j + 1] = s
        off[2 * j + 2] = -s
    return off


@nb.njit(nogil=True, cache=True)
def evolve(kind, d, params, a_total, seed, direction, reverse_T,
           coords0, vals0, log_scale0, t0, T, cap, grid_cap,
           use_cone, cone_lo, cone_hi, cone_T):
    """Advance a field T steps.

    direction 0: N_t = N_{t-1} A_t (columns at destinations are sampled);
    direction 1: M_t = A_t M_{t-1} (columns at occupied sites scatter).
    Column randomness at step t is keyed by (seed, t), or by
    (seed, reverse_T + 1 - t) when reverse_T > 0.

    Each active site carries its grid index and its packed site index; the
    packed index feeds the hash and is decoded only for bounding boxes.

    Returns (status, norms, logs, occupied, ext_time, t_end,
             coords, values, log_scale), where norms[i] is the stored l1 mass
    after i steps and logs[i] the matching log scale.
    """
    n0 = vals0.shape[0]
    nk = 2 * d + 1
    norms = np.zeros(T + 1)
    logs = np.zeros(T + 1)
    occ = np.zeros(T + 1, np.int64)
    ext_time = -1
    log_scale = log_scale0
    status = OK

    amin = np.empty(d, np.int64)
    amax = np.empty(d, np.int64)
    c = np.empty(d, np.int64)
    k0 = 0 if has_self_offset(kind, params) else 1
    bits = pack_bits(d)
    bias = np.int64(1) << (bits - 1)
    mask = (np.int64(1) << bits) - 1
    goff = _packed_offsets(d)

    if n0 == 0:
        ext_time = t0
        return (status, norms, logs, occ, ext_time, t0,
                np.zeros((0, d), np.int64), np.zeros(0), log_scale)

    for j in range(d):
        amin[j] = coords0[0, j]
        amax[j] = coords0[0, j]
    for i in range(n0):
        for j in range(d):
            if coords0[i, j] < amin[j]:
                amin[j] = coords0[i, j]
            if coords0[i, j] > amax[j]:
                amax[j] = coords0[i, j]
    for j in range(d):
        if amin[j] - T - 1 < -bias or amax[j] + T + 1 >= bias:
            return (GRID_EXCEEDED, norms, logs, occ, ext_time, t0,
                    coords0.copy(), vals0.copy(), log_scale)
    # allocate for the whole run when the light cone fits in a modest grid
    margin = T + 2
    lo, shape, size = _grid_for(amin, amax, margin)
    if size > min(grid_cap, _EAGER_CELLS):
        margin = 8
        lo, shape, size = _grid_for(amin, amax, margin)
    if size > grid_cap:
        return (GRID_EXCEEDED, norms, logs, occ, ext_time, t0,
                coords0.copy(), vals0.copy(), log_scale)
    val = np.zeros(size)
    stamp = np.full(size, -1, np.int32)
    foff = _flat_offsets(shape)

    cap0 = max(16, 2 * n0)
    act = np.empty(cap0, np.int64)
    actg = np.empty(cap0, np.int64)
    nact = 0
    for i in range(n0):
        f = _encode(coords0[i], lo, shape)
        if val[f] == 0.0 and vals0[i] > 0.0:
            act[nact] = f
            g = np.int64(0)
            for j in range(d):
                g = (g << bits) | (coords0[i, j] + bias)
            actg[nact] = g
            nact += 1
        val[f] += vals0[i]

    s = 0.0
    for i in range(nact):
        s += val[act[i]]
    norms[0] = s
    logs[0] = log_scale
    occ[0] = nact

    ncap = max(64, nk * nact)
    cand = np.empty(ncap, np.int64)
    candg = np.empty(ncap, np.int64)
    newv = np.empty(ncap)
    oldv = np.empty(act.shape[0])
    t_end = t0

    for step in range(1, T + 1):
        t = t0 + step
        kt = t if reverse_T <= 0 else reverse_T + 1 - t
        tkey = time_key(seed, kt)

        # keep two free layers between the support and the grid boundary
        regrow = False
        for j in range(d):
            if amin[j] - lo[j] < 2 or lo[j] + shape[j] - 1 - amax[j] < 2:
                regrow = True
        if regrow:
            margin = 4
            for j in range(d):
                m_j = (amax[j] - amin[j]) // 2 + 4
                if m_j > margin:
                    margin = m_j
            margin = min(margin, T - step + 3)
            nlo, nshape, nsize = _grid_for(amin, amax, margin)
            if nsize > grid_cap:
                status = GRID_EXCEEDED
                break
            nval = np.zeros(nsize)
            for i in range(nact):
                _unpack(actg[i], bits, bias, mask, d, c)
                f = _encode(c, nlo, nshape)
                nval[f] = val[act[i]]
                act[i] = f
            val = nval
            stamp = np.full(nsize, -1, np.int32)
            lo = nlo
            shape = nshape
            foff = _flat_offsets(shape)

        need = nk * nact
        if need > cand.shape[0]:
            cand = np.empty(2 * need, np.int64)
            candg = np.empty(2 * need, np.int64)
            newv = np.empty(2 * need)
        if nact > oldv.shape[0]:
            oldv = np.empty(2 * nact)

        nc = 0
        if direction == 0:
            # discover each candidate once and pull its column immediately;
            # val still holds N_{t-1} until the commit below
            for i in range(nact):
                a = act[i]
                ga = actg[i]
                for k in range(k0, nk):
                    y = a + foff[k]
                    if stamp[y] != t:
                        stamp[y] = t
                        gy = ga + goff[k]
                        if use_cone:
                            _unpack(gy, bits, bias, mask, d, c)
                            dist = 0
                            for j in range(d):
                                if c[j] < cone_lo[j]:
                                    dist += cone_lo[j] - c[j]
                                elif c[j] > cone_hi[j]:
                                    dist += c[j] - cone_hi[j]
                            if dist > cone_T - t:
                                continue
                        cm, v = column_mask(kind, d, params, site_key_packed(tkey, gy))
                        if cm == 0:
                            continue
                        acc = 0.0
                        for kk in range(k0, nk):
                            acc += val[y + foff[kk]] * ((cm >> kk) & 1)
                        cand[nc] = y
                        candg[nc] = gy
                        newv[nc] = acc * v / a_total
                        nc += 1
                if nc > cap:
                    break
            if nc > cap:
                status = CAP_EXCEEDED
                break
            for i in range(nact):
                val[act[i]] = 0.0
        else:
            for i in range(nact):
                oldv[i] = val[act[i]]
                val[act[i]] = 0.0
            for i in range(nact):
                x = act[i]
                gx = actg[i]
                cm, v = column_mask(kind, d, params, site_key_packed(tkey, gx))
                w = oldv[i] * v / a_total
                for k in range(k0, nk):
                    if (cm >> k) & 1:
                        y = x + foff[k]
                        if stamp[y] != t:
                            stamp[y] = t
                            cand[nc] = y
                            candg[nc] = gx + goff[k]
                            nc += 1
                        val[y] += w
            if nc > cap:
                status = CAP_EXCEEDED
                for i in range(nc):
                    val[cand[i]] = 0.0
                for i in range(nact):
                    val[act[i]] = oldv[i]
                break
            for i in range(nc):
                newv[i] = val[cand[i]]
                val[cand[i]] = 0.0

        # commit
        if nc > act.shape[0]:
            act = np.empty(2 * nc, np.int64)
            actg = np.empty(2 * nc, np.int64)
        nact = 0
        vmax = 0.0
        for i in range(nc):
            v = newv[i]
            if v > 0.0:
                y = cand[i]
                val[y] = v
                act[nact] = y
                actg[nact] = candg[i]
                nact += 1
                if v > vmax:
                    vmax = v
        if vmax > _TWO64 or (vmax > 0.0 and vmax < _TWOM64):
            _, ex = math.frexp(vmax)
            for i in range(nact):
                val[act[i]] = math.ldexp(val[act[i]], -ex)
            log_scale += ex * _LN2
        s = 0.0
        for i in range(nact):
            s += val[act[i]]
        # bounding box from packed indices: coordinate j is a bit field
        for j in range(d):
            sh = bits * (d - 1 - j)
            mn = bias
            mx = -bias
            for i in range(nact):
                cj = ((actg[i] >> sh) & mask) - bias
                if cj < mn:
                    mn = cj
                if cj > mx:
                    mx = cj
            amin[j] = mn
            amax[j] = mx
        norms[step] = s
        logs[step] = log_scale
        occ[step] = nact
        t_end = t
        if nact == 0:
            ext_time = t
            for r in range(step + 1, T + 1):
                logs[r] = log_scale
            break

    coords = np.empty((nact, d), np.int64)
    values = np.empty(nact)
    for i in range(nact):
        _unpack(actg[i], bits, bias, mask, d, c)
        for j in range(d):
            coords[i, j] = c[j]
        values[i] = val[act[i]]
    return (status, norms, logs, occ, ext_time, t_end, coords, values, log_scale)
