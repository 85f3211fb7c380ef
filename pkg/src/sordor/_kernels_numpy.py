"""Vectorised numpy versions of the compiled kernels.

Batches run over a leading stack axis; members are processed in chunks so the
(K, N, 8, 8) block stack stays bounded in memory.
"""
import numpy as np

_THETA = 0.5
_MAX_TERMS = 40
_TERM_TOL = 2.0 ** -60
_CHUNK_ELEMENTS = 2_000_000


def _inf_norm(a):
    return np.abs(a).sum(axis=-1).max(axis=-1)


def _taylor_degree(norm):
    bound = 1.0
    for k in range(1, _MAX_TERMS):
        bound *= norm / k
        if bound <= _TERM_TOL:
            return k
    return _MAX_TERMS


def expm_batch(m):
    """Exponentiate every matrix in a ``(..., n, n)`` stack."""
    m = np.asarray(m, dtype=np.complex128)
    shape = m.shape
    flat = m.reshape(-1, shape[-2], shape[-1])
    norms = _inf_norm(flat)
    squarings = np.where(
        norms > _THETA, np.ceil(np.log2(np.maximum(norms, _THETA) / _THETA)), 0
    ).astype(int)
    scale = 2.0 ** -squarings
    a = flat * scale[:, None, None]
    eye = np.broadcast_to(np.eye(shape[-1], dtype=np.complex128), flat.shape)
    result = eye.copy()
    term = eye.copy()
    degree = _taylor_degree(float(np.max(norms * scale, initial=0.0)))
    for k in range(1, degree + 1):
        term = term @ a / k
        result += term
    for level in range(int(squarings.max(initial=0))):
        sel = squarings > level
        result[sel] = result[sel] @ result[sel]
    return result.reshape(shape)


def expm(m):
    return expm_batch(m[None])[0]


def _generators(phases, amplitude, dt, offsets, lx, ly, lz):
    c = np.cos(phases)[None, :, None, None]
    s = np.sin(phases)[None, :, None, None]
    w = offsets[:, None, None, None]
    gen = w * lz + amplitude * (c * lx + s * ly)
    return -1j * dt * gen, c, s


def slice_propagators(phases, amplitude, dt, offsets, lx, ly, lz):
    gen, _, _ = _generators(phases, amplitude, dt, offsets, lx, ly, lz)
    return expm_batch(gen)


def _chunks(nmem, nslices):
    size = max(1, _CHUNK_ELEMENTS // max(1, nslices * 64))
    for start in range(0, nmem, size):
        yield slice(start, min(nmem, start + size))


def _forward(props):
    nmem, nslices = props.shape[:2]
    fwd = np.empty((nmem, nslices + 1, 4, 4), dtype=np.complex128)
    fwd[:, 0] = np.eye(4)
    for n in range(nslices):
        fwd[:, n + 1] = props[:, n] @ fwd[:, n]
    return fwd


def member_fidelities(phases, amplitude, dt, offsets, lx, ly, lz, targets):
    fid = np.empty(offsets.shape[0])
    for sl in _chunks(offsets.shape[0], phases.shape[0]):
        props = slice_propagators(phases, amplitude, dt, offsets[sl], lx, ly, lz)
        u = np.broadcast_to(np.eye(4, dtype=np.complex128), (props.shape[0], 4, 4))
        for n in range(phases.shape[0]):
            u = props[:, n] @ u
        fid[sl] = np.einsum("kij,kij->k", targets[sl].conj(), u).real / 4.0
    return fid


def member_gradients(phases, amplitude, dt, offsets, lx, ly, lz, targets):
    nmem = offsets.shape[0]
    nslices = phases.shape[0]
    fid = np.empty(nmem)
    grad = np.empty((nmem, nslices))
    for sl in _chunks(nmem, nslices):
        gen, c, s = _generators(phases, amplitude, dt, offsets[sl], lx, ly, lz)
        tangent = -1j * dt * amplitude * (c * ly - s * lx)
        tangent = np.broadcast_to(tangent, gen.shape)
        blk = np.zeros(gen.shape[:2] + (8, 8), dtype=np.complex128)
        blk[..., :4, :4] = gen
        blk[..., 4:, 4:] = gen
        blk[..., :4, 4:] = tangent
        e = expm_batch(blk)
        props = e[..., :4, :4]
        derivs = e[..., :4, 4:]
        fwd = _forward(props)
        tgt = targets[sl]
        fid[sl] = np.einsum("kij,kij->k", tgt.conj(), fwd[:, -1]).real / 4.0
        back = np.empty_like(fwd[:, 1:])
        v = tgt.copy()
        for n in range(nslices - 1, -1, -1):
            back[:, n] = v
            v = props[:, n].conj().transpose(0, 2, 1) @ v
        sandwiched = derivs @ fwd[:, :-1]
        grad[sl] = np.einsum("knij,knij->kn", back.conj(), sandwiched).real / 4.0
    return fid, grad
