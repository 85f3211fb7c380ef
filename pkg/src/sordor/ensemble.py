"""Offset grids, bandwidth/scaling relations and quadratic-dispersion targets."""
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import spin
from .errors import InvalidArgumentError, OutOfBandError

logger = logging.getLogger(__name__)

# Slices per unit bandwidth factor and members per unit bandwidth factor.
SLICES_PER_B = 50
MEMBERS_PER_B = 10


def _snap(x, digits=9):
    # keeps grid values such as 3 * 0.2 from tipping ceil/round
    return round(x, digits)


def default_member_count(b):
    return 1 + math.ceil(_snap(MEMBERS_PER_B * b))


@dataclass
class EnsembleSpec:
    """Linearly spaced resonance offsets spanning ``+-pi * bandwidth`` rad/s."""

    bandwidth: float
    b: float
    offsets: np.ndarray

    @property
    def member_count(self):
        return len(self.offsets)

    @property
    def offsets_hz(self):
        return self.offsets / (2 * np.pi)


def build_ensemble(b, bandwidth, members=None):
    """Offset ensemble for bandwidth factor ``b`` and bandwidth in Hz.

    ``members`` defaults to ``1 + ceil(10 b)``.
    """
    if not (b > 0 and bandwidth > 0):
        raise InvalidArgumentError(f"need b > 0 and bandwidth > 0, got {b}, {bandwidth}")
    if members is None:
        members = default_member_count(b)
    elif members < 2:
        raise InvalidArgumentError(f"member count override must be >= 2, got {members}")
    edge = np.pi * bandwidth
    offsets = np.linspace(-edge, edge, int(members))
    if members % 2:
        offsets[members // 2] = 0.0
    return EnsembleSpec(bandwidth=float(bandwidth), b=float(b), offsets=offsets)


@dataclass
class ScalingParams:
    beta: float
    b: float
    bandwidth: float
    duration: float
    amplitude: float
    slices: int
    dt: float
    scaling_factor: float
    adjustments: list = field(default_factory=list)


def scaling_from_bandwidth(b, beta, bandwidth):
    """Pulse duration, amplitude and slicing for a bandwidth factor.

    Uses ``T = b / bandwidth``, ``s = 2 beta / (pi b)``, ``A = beta / (s T)``
    and ``N = 50 b`` (rounded, with the rounding recorded in ``adjustments``).
    """
    if not (b > 0 and beta > 0 and bandwidth > 0):
        raise InvalidArgumentError(
            f"need b, beta, bandwidth > 0, got {b}, {beta}, {bandwidth}"
        )
    duration = b / bandwidth
    s = 2 * beta / (np.pi * b)
    amplitude = beta / (s * duration)
    exact = SLICES_PER_B * b
    slices = max(1, int(round(_snap(exact))))
    adjustments = []
    if abs(_snap(exact) - slices) > 1e-9:
        adjustments.append(f"slice count 50*b={exact!r} rounded to {slices}")
        logger.info(adjustments[-1])
    return ScalingParams(
        beta=float(beta),
        b=float(b),
        bandwidth=float(bandwidth),
        duration=duration,
        amplitude=amplitude,
        slices=slices,
        dt=duration / slices,
        scaling_factor=s,
        adjustments=adjustments,
    )


def phase_dispersion(offset, bandwidth, b, q):
    """Axis phase ``pi b Q (1 - u^2)`` with ``u = offset / (pi bandwidth)``.

    Works elementwise on arrays of offsets.
    """
    edge = np.pi * bandwidth
    u = np.asarray(offset, dtype=float) / edge
    if np.any(np.abs(u) > 1 + 1e-12):
        raise OutOfBandError(f"offset outside [-pi*bandwidth, pi*bandwidth] = +-{edge}")
    u = np.clip(u, -1.0, 1.0)
    alpha = np.pi * b * q * (1.0 - u * u)
    return alpha if alpha.ndim else float(alpha)


def rotation_unitary(alpha, beta):
    """Hilbert-space rotation ``exp(-i beta (cos a Sx + sin a Sy))``."""
    n = np.cos(alpha) * spin.SX + np.sin(alpha) * spin.SY
    # n has eigenvalues +-1/2, so the exponential is closed form
    return np.cos(beta / 2) * spin.IDENTITY2 - 2j * np.sin(beta / 2) * n


def target_rotation(alpha, beta):
    """Superoperator of a Bloch rotation by ``beta`` about the transverse axis
    at angle ``alpha`` from x."""
    n = np.cos(alpha) * spin.SX + np.sin(alpha) * spin.SY
    return spin.propagator(spin.commutation_superoperator(n), beta)


@dataclass
class TargetSet:
    q: float
    beta: float
    alphas: np.ndarray
    rotations: np.ndarray  # (K, 4, 4)

    def __len__(self):
        return len(self.alphas)


def build_targets(ensemble, q, beta, b=None):
    """Per-member rotation targets for dispersion coefficient ``q``.

    ``b`` defaults to the ensemble's bandwidth factor.
    """
    if not 0.0 <= q <= 1.0 + 1e-12:
        raise InvalidArgumentError(f"Q must lie in [0, 1], got {q}")
    b = ensemble.b if b is None else b
    alphas = np.atleast_1d(phase_dispersion(ensemble.offsets, ensemble.bandwidth, b, q))
    rotations = np.stack([target_rotation(a, beta) for a in alphas])
    return TargetSet(q=float(q), beta=float(beta), alphas=alphas, rotations=rotations)
