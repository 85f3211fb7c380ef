"""Compiled inner loops for slice propagation and GRAPE gradients.

Every function here has a twin in ``_kernels_numpy`` with the same signature
and the same results to rounding; ``sordor._accel`` picks one at import time.
"""
import math

import numpy as np
from numba import njit

# Taylor core runs on matrices scaled below this infinity norm; the series is
# truncated once the norm bound ||M||^k / k! drops below _TERM_TOL.
_THETA = 0.5
_MAX_TERMS = 40
_TERM_TOL = 2.0 ** -60


@njit(cache=True)
def _taylor_degree(norm):
    bound = 1.0
    for k in range(1, _MAX_TERMS):
        bound *= norm / k
        if bound <= _TERM_TOL:
            return k
    return _MAX_TERMS


@njit(cache=True)
def _inf_norm(a):
    n, m = a.shape
    best = 0.0
    for i in range(n):
        row = 0.0
        for j in range(m):
            row += abs(a[i, j])
        if row > best:
            best = row
    return best


@njit(cache=True)
def _matmul_into(a, b, out):
    n = a.shape[0]
    m = b.shape[1]
    inner = a.shape[1]
    for i in range(n):
        for j in range(m):
            acc = 0j
            for k in range(inner):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc


@njit(cache=True)
def expm(m):
    """Scaling-and-squaring Taylor exponential of a small dense matrix."""
    n = m.shape[0]
    norm = _inf_norm(m)
    squarings = 0
    if norm > _THETA:
        squarings = int(math.ceil(math.log2(norm / _THETA)))
    scale = 2.0 ** -squarings
    a = m * scale
    result = np.eye(n, dtype=np.complex128)
    term = np.eye(n, dtype=np.complex128)
    work = np.empty((n, n), dtype=np.complex128)
    for k in range(1, _taylor_degree(norm * scale) + 1):
        _matmul_into(term, a, work)
        inv_k = 1.0 / k
        for i in range(n):
            for j in range(n):
                term[i, j] = work[i, j] * inv_k
                result[i, j] += term[i, j]
    for _ in range(squarings):
        _matmul_into(result, result, work)
        result[:, :] = work
    return result


@njit(cache=True)
def _block_expm(x, y, p, d, t_x, t_y, w1, w2):
    """Exponential of ``[[x, y], [0, x]]`` written into ``p`` and ``d``.

    Same scaling-and-squaring Taylor scheme as :func:`expm`, carried out on the
    4x4 blocks: every power of a block upper-triangular matrix keeps the form
    ``[[X^k, D_k], [0, X^k]]``.
    """
    n = x.shape[0]
    norm = 0.0
    for i in range(n):
        row = 0.0
        for j in range(n):
            row += abs(x[i, j]) + abs(y[i, j])
        if row > norm:
            norm = row
    squarings = 0
    if norm > _THETA:
        squarings = int(math.ceil(math.log2(norm / _THETA)))
    scale = 2.0 ** -squarings
    for i in range(n):
        for j in range(n):
            x[i, j] *= scale
            y[i, j] *= scale
            t_x[i, j] = 1.0 if i == j else 0.0
            t_y[i, j] = 0.0
            p[i, j] = t_x[i, j]
            d[i, j] = 0.0
    for k in range(1, _taylor_degree(norm * scale) + 1):
        # [[A, B], [0, A]] @ [[x, y], [0, x]] = [[A x, A y + B x], [0, A x]]
        _matmul_into(t_x, x, w1)
        _matmul_into(t_x, y, w2)
        for i in range(n):
            for j in range(n):
                acc = w2[i, j]
                for m in range(n):
                    acc += t_y[i, m] * x[m, j]
                w2[i, j] = acc
        inv_k = 1.0 / k
        for i in range(n):
            for j in range(n):
                t_y[i, j] = w2[i, j] * inv_k
                t_x[i, j] = w1[i, j] * inv_k
                p[i, j] += t_x[i, j]
                d[i, j] += t_y[i, j]
    for _ in range(squarings):
        # [[P, D], [0, P]]^2 = [[P P, P D + D P], [0, P P]]
        _matmul_into(p, d, w1)
        _matmul_into(d, p, w2)
        for i in range(n):
            for j in range(n):
                d[i, j] = w1[i, j] + w2[i, j]
        _matmul_into(p, p, w1)
        p[:, :] = w1


@njit(cache=True)
def _slice_blocks(phases, amplitude, dt, omega, lx, ly, lz, props, derivs):
    """Fill step propagators and their phase derivatives for one member.

    The derivative direction is the phase tangent
    ``A (cos(phi) Ly - sin(phi) Lx)``, so one 8x8 block exponential yields
    ``dP/dphi`` directly.
    """
    nslices = phases.shape[0]
    x = np.empty((4, 4), dtype=np.complex128)
    y = np.empty((4, 4), dtype=np.complex128)
    t_x = np.empty((4, 4), dtype=np.complex128)
    t_y = np.empty((4, 4), dtype=np.complex128)
    w1 = np.empty((4, 4), dtype=np.complex128)
    w2 = np.empty((4, 4), dtype=np.complex128)
    for n in range(nslices):
        c = math.cos(phases[n])
        s = math.sin(phases[n])
        for i in range(4):
            for j in range(4):
                gen = omega * lz[i, j] + amplitude * (c * lx[i, j] + s * ly[i, j])
                tangent = amplitude * (c * ly[i, j] - s * lx[i, j])
                x[i, j] = -1j * dt * gen
                y[i, j] = -1j * dt * tangent
        _block_expm(x, y, props[n], derivs[n], t_x, t_y, w1, w2)


@njit(cache=True)
def _slice_props(phases, amplitude, dt, omega, lx, ly, lz, props):
    nslices = phases.shape[0]
    gen = np.empty((4, 4), dtype=np.complex128)
    for n in range(nslices):
        c = math.cos(phases[n])
        s = math.sin(phases[n])
        for i in range(4):
            for j in range(4):
                gen[i, j] = -1j * dt * (
                    omega * lz[i, j] + amplitude * (c * lx[i, j] + s * ly[i, j])
                )
        props[n] = expm(gen)


@njit(cache=True)
def _overlap(a, b):
    # Re tr(a^dagger b)
    acc = 0.0
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            acc += (a[i, j].conjugate() * b[i, j]).real
    return acc


@njit(cache=True)
def slice_propagators(phases, amplitude, dt, offsets, lx, ly, lz):
    """Step propagators ``P[k, n]`` for every member and slice."""
    nmem = offsets.shape[0]
    out = np.empty((nmem, phases.shape[0], 4, 4), dtype=np.complex128)
    for k in range(nmem):
        _slice_props(phases, amplitude, dt, offsets[k], lx, ly, lz, out[k])
    return out


@njit(cache=True)
def member_fidelities(phases, amplitude, dt, offsets, lx, ly, lz, targets):
    nmem = offsets.shape[0]
    nslices = phases.shape[0]
    fid = np.empty(nmem)
    props = np.empty((nslices, 4, 4), dtype=np.complex128)
    u = np.empty((4, 4), dtype=np.complex128)
    work = np.empty((4, 4), dtype=np.complex128)
    for k in range(nmem):
        _slice_props(phases, amplitude, dt, offsets[k], lx, ly, lz, props)
        u[:, :] = 0.0
        for i in range(4):
            u[i, i] = 1.0
        for n in range(nslices):
            _matmul_into(props[n], u, work)
            u[:, :] = work
        fid[k] = _overlap(targets[k], u) / 4.0
    return fid


@njit(cache=True)
def member_gradients(phases, amplitude, dt, offsets, lx, ly, lz, targets):
    """Per-member fidelities ``f[k]`` and gradients ``g[k, n]``."""
    nmem = offsets.shape[0]
    nslices = phases.shape[0]
    fid = np.empty(nmem)
    grad = np.empty((nmem, nslices))
    props = np.empty((nslices, 4, 4), dtype=np.complex128)
    derivs = np.empty((nslices, 4, 4), dtype=np.complex128)
    fwd = np.empty((nslices + 1, 4, 4), dtype=np.complex128)
    back = np.empty((4, 4), dtype=np.complex128)
    work = np.empty((4, 4), dtype=np.complex128)
    for k in range(nmem):
        _slice_blocks(phases, amplitude, dt, offsets[k], lx, ly, lz, props, derivs)
        fwd[0] = 0.0
        for i in range(4):
            fwd[0, i, i] = 1.0
        for n in range(nslices):
            _matmul_into(props[n], fwd[n], fwd[n + 1])
        fid[k] = _overlap(targets[k], fwd[nslices]) / 4.0
        back[:, :] = targets[k]
        for n in range(nslices - 1, -1, -1):
            _matmul_into(derivs[n], fwd[n], work)
            grad[k, n] = _overlap(back, work) / 4.0
            # back <- P_n^dagger back
            for i in range(4):
                for j in range(4):
                    acc = 0j
                    for m in range(4):
                        acc += props[n, m, i].conjugate() * back[m, j]
                    work[i, j] = acc
            back[:, :] = work
    return fid, grad
