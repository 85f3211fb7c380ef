"""Two-level-system linear algebra: Hamiltonians, commutation superoperators,
small matrix exponentials and step propagators with directional derivatives.

Operators are spin-1/2 operators ``S = sigma / 2`` so that an on-resonance
pulse with ``A * T = pi`` is a Bloch-sphere pi rotation. Density matrices are
vectorised by column stacking, ``vec(rho) = rho.flatten(order="F")``.
"""
from dataclasses import dataclass

import numpy as np

from ._accel import kernels
from .errors import InvalidArgumentError

PAULI_X = np.array([[0, 1], [1, 0]], dtype=np.complex128)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=np.complex128)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=np.complex128)
IDENTITY2 = np.eye(2, dtype=np.complex128)

SX = PAULI_X / 2
SY = PAULI_Y / 2
SZ = PAULI_Z / 2


def vec(rho):
    """Column-stacked vectorisation of a 2x2 operator."""
    return np.asarray(rho).flatten(order="F")


def unvec(v):
    return np.asarray(v).reshape(2, 2, order="F")


def member_hamiltonian(phase, amplitude, offset):
    """Hamiltonian of one ensemble member, in rad/s.

    ``H = offset * Sz + amplitude * (cos(phase) * Sx + sin(phase) * Sy)``
    """
    vals = np.array([phase, amplitude, offset], dtype=float)
    if not np.all(np.isfinite(vals)):
        raise InvalidArgumentError(
            f"non-finite Hamiltonian argument: phase={phase}, "
            f"amplitude={amplitude}, offset={offset}"
        )
    return offset * SZ + amplitude * (np.cos(phase) * SX + np.sin(phase) * SY)


def commutation_superoperator(h):
    """Return ``L`` with ``L @ vec(rho) == vec(h @ rho - rho @ h)``."""
    h = np.asarray(h, dtype=np.complex128)
    eye = np.eye(h.shape[0], dtype=np.complex128)
    return np.kron(eye, h) - np.kron(h.T, eye)


LX = commutation_superoperator(SX)
LY = commutation_superoperator(SY)
LZ = commutation_superoperator(SZ)


def expm(m):
    """Matrix exponential by scaling and squaring with a Taylor core.

    Parameters
    ----------
    m : array_like, shape (n, n)
        Complex square matrix. The accuracy contract (1e-12 relative in the
        max norm) is stated for ``n`` in {4, 8} and ``||m|| <= 1e3`` but any
        small square matrix works.
    """
    m = np.asarray(m, dtype=np.complex128)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InvalidArgumentError(f"expm needs a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidArgumentError("expm argument has non-finite entries")
    return kernels.expm(np.ascontiguousarray(m))


def propagator(liouvillian, dt):
    """Step propagator ``exp(-i L dt)``."""
    return expm(-1j * dt * np.asarray(liouvillian))


@dataclass
class StepDerivatives:
    """Step propagator with its derivatives along the x and y controls."""

    propagator: np.ndarray
    d_dx: np.ndarray
    d_dy: np.ndarray


def directional_derivative(liouvillian, direction, dt):
    """Exponentiate ``-i dt [[L, D], [0, L]]`` and return ``(P, dP/dD)``."""
    n = liouvillian.shape[0]
    blk = np.zeros((2 * n, 2 * n), dtype=np.complex128)
    blk[:n, :n] = liouvillian
    blk[n:, n:] = liouvillian
    blk[:n, n:] = direction
    e = expm(-1j * dt * blk)
    return e[:n, :n], e[:n, n:]


def step_with_derivatives(liouvillian, dx=LX, dy=LY, dt=1.0):
    """Step propagator and directional derivatives via block exponentials.

    One 8x8 block-triangular exponential per direction; the diagonal blocks
    are ``exp(-i L dt)`` and the upper-right block is the derivative of that
    propagator in the direction of ``dx`` (resp. ``dy``).
    """
    if dt < 0:
        raise InvalidArgumentError(f"time step must be non-negative, got {dt}")
    liouvillian = np.asarray(liouvillian, dtype=np.complex128)
    prop, d_dx = directional_derivative(liouvillian, np.asarray(dx), dt)
    _, d_dy = directional_derivative(liouvillian, np.asarray(dy), dt)
    return StepDerivatives(prop, d_dx, d_dy)
