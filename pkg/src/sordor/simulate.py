"""Offset-resolved Bloch-sphere simulation of pulses and pulse sequences."""
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import spin
from ._accel import kernels
from .ensemble import phase_dispersion, target_rotation
from .errors import InvalidArgumentError
from .grape import FidelityReport

logger = logging.getLogger(__name__)

INITIAL_STATES = {
    "x": (1.0, 0.0, 0.0),
    "y": (0.0, 1.0, 0.0),
    "z": (0.0, 0.0, 1.0),
}


@dataclass(frozen=True)
class BlochState:
    x: float
    y: float
    z: float

    def __post_init__(self):
        if np.linalg.norm(self.as_array()) > 1 + 1e-9:
            raise InvalidArgumentError(f"Bloch vector longer than 1: {self}")

    def as_array(self):
        return np.array([self.x, self.y, self.z], dtype=float)

    def density_vector(self):
        rho = (spin.IDENTITY2 + self.x * spin.PAULI_X + self.y * spin.PAULI_Y
               + self.z * spin.PAULI_Z) / 2
        return spin.vec(rho)


def bloch_components(vec_rho):
    """``(x, y, z) = tr(sigma rho)`` for a stack of vectorised states."""
    vec_rho = np.asarray(vec_rho)
    # column stacking: a C-order reshape of the last axis gives rho transposed
    rho = np.swapaxes(vec_rho.reshape(vec_rho.shape[:-1] + (2, 2)), -1, -2)
    out = np.stack([
        np.einsum("ij,...ji->...", p, rho).real
        for p in (spin.PAULI_X, spin.PAULI_Y, spin.PAULI_Z)
    ], axis=-1)
    return out


def phase_shift_pulse(waveform, shift):
    """Copy of ``waveform`` with every slice phase advanced by ``shift``."""
    return waveform.with_phases(waveform.phases + shift)


@dataclass
class SequenceElement:
    pulse: object  # PulseWaveform
    shift: float = 0.0
    ideal: bool = False


@dataclass
class SequenceSpec:
    elements: list = field(default_factory=list)

    def __post_init__(self):
        if not self.elements:
            raise InvalidArgumentError("a pulse sequence needs at least one element")

    def __len__(self):
        return len(self.elements)

    def as_ideal(self):
        return SequenceSpec([replace(e, ideal=True) for e in self.elements])


def ideal_propagators(pulse, ensemble, shift=0.0):
    """Target rotation superoperators of ``pulse`` at the ensemble offsets."""
    meta = pulse.metadata
    alphas = np.atleast_1d(
        phase_dispersion(ensemble.offsets, meta["bandwidth"], meta["b"], meta["Q"])
    )
    return np.stack([target_rotation(a + shift, meta["beta"]) for a in alphas])


def pulse_propagators(pulse, ensemble, shift=0.0):
    """Full-pulse superoperator per member."""
    steps = kernels.slice_propagators(
        pulse.phases + shift, float(pulse.amplitude), float(pulse.dt),
        ensemble.offsets, spin.LX, spin.LY, spin.LZ,
    )
    u = np.broadcast_to(np.eye(4, dtype=np.complex128), (ensemble.member_count, 4, 4))
    for n in range(steps.shape[1]):
        u = steps[:, n] @ u
    return np.ascontiguousarray(u)


def element_propagators(element, ensemble):
    if element.ideal:
        return ideal_propagators(element.pulse, ensemble, element.shift)
    return pulse_propagators(element.pulse, ensemble, element.shift)


def _check_bandwidth(sequence, ensemble, warnings):
    for i, e in enumerate(sequence.elements):
        bw = e.pulse.metadata.get("bandwidth")
        if bw is not None and not np.isclose(bw, ensemble.bandwidth, rtol=1e-9):
            msg = (f"element {i}: pulse bandwidth {bw} Hz differs from "
                   f"ensemble bandwidth {ensemble.bandwidth} Hz")
            logger.warning(msg)
            warnings.append(msg)


def sequence_propagators(sequence, ensemble):
    """Product of element superoperators, later elements on the left."""
    total = np.broadcast_to(np.eye(4, dtype=np.complex128), (ensemble.member_count, 4, 4))
    for element in sequence.elements:
        total = element_propagators(element, ensemble) @ total
    return np.ascontiguousarray(total)


@dataclass
class BlochResult:
    offsets: np.ndarray  # rad/s
    states: np.ndarray  # (K, 3)
    trajectory: np.ndarray | None = None  # (K, steps + 1, 3)
    warnings: list = field(default_factory=list)

    @property
    def offsets_hz(self):
        return self.offsets / (2 * np.pi)


def _trajectory(sequence, ensemble, rho0):
    points = [np.broadcast_to(rho0, (ensemble.member_count, 4))]
    state = points[0]
    for element in sequence.elements:
        if element.ideal:
            props = element_propagators(element, ensemble)[:, None]
        else:
            p = element.pulse
            props = kernels.slice_propagators(
                p.phases + element.shift, float(p.amplitude), float(p.dt),
                ensemble.offsets, spin.LX, spin.LY, spin.LZ,
            )
        for n in range(props.shape[1]):
            state = np.einsum("kij,kj->ki", props[:, n], state)
            points.append(state)
    return bloch_components(np.stack(points, axis=1))


def bloch_trajectory(sequence, initial, ensemble, time_resolved=False):
    """Final Bloch vectors per offset after applying ``sequence`` to ``initial``.

    Pulses follow each other without delays. With ``time_resolved`` the
    state after every slice (every ideal element counts as one step) is
    returned too.
    """
    if not isinstance(initial, BlochState):
        initial = BlochState(*initial)
    warnings = []
    _check_bandwidth(sequence, ensemble, warnings)
    rho0 = initial.density_vector()
    total = sequence_propagators(sequence, ensemble)
    final = bloch_components(total @ rho0)
    traj = _trajectory(sequence, ensemble, rho0) if time_resolved else None
    return BlochResult(offsets=ensemble.offsets.copy(), states=final, trajectory=traj,
                       warnings=warnings)


def propagator_fidelity(actual, ideal):
    """Per-member ``Re<R|U>/4`` for stacks of superoperators."""
    return np.einsum("kij,kij->k", ideal.conj(), actual).real / 4.0


def sequence_fidelity(actual, ideal, ensemble):
    """Fidelity of an actual sequence against an ideal-target sequence."""
    if len(actual) != len(ideal):
        raise InvalidArgumentError("sequences must have the same number of elements")
    members = propagator_fidelity(
        sequence_propagators(actual, ensemble), sequence_propagators(ideal, ensemble)
    )
    return FidelityReport(total=float(members.mean()), members=members)


HALF_PI = np.pi / 2
# (rotation, axis shift) per element; rotation 90 or 180 selects the pulse
NAMED_SEQUENCES = {
    "single90": [(90, 0.0)],
    "single180": [(180, 0.0)],
    "hahn": [(90, 0.0), (180, 0.0)],
    "inept": [(90, 0.0), (180, 0.0), (90, 0.0)],
    "perfect-echo": [(90, 0.0), (180, HALF_PI), (90, HALF_PI), (180, HALF_PI), (90, np.pi)],
}


def named_sequence(name, p90, p180, ideal=False):
    """Build one of the standard sequences from a pi/2 and a pi pulse.

    ``perfect-echo`` is 90_x, 180_y, 90_y, 180_y, 90_-x.
    """
    try:
        recipe = NAMED_SEQUENCES[name]
    except KeyError:
        raise InvalidArgumentError(
            f"unknown sequence {name!r}; choose from {sorted(NAMED_SEQUENCES)}"
        ) from None
    pulses = {90: p90, 180: p180}
    elements = []
    for angle, shift in recipe:
        if pulses[angle] is None:
            raise InvalidArgumentError(f"sequence {name!r} needs a {angle} degree pulse")
        elements.append(SequenceElement(pulses[angle], shift, ideal))
    return SequenceSpec(elements)


def fidelity_profile(pulse, ensemble):
    """Per-offset fidelity of a single pulse against its own target."""
    seq = SequenceSpec([SequenceElement(pulse)])
    return sequence_fidelity(seq, seq.as_ideal(), ensemble)
