import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sordor import spin
from sordor.chirp import ChirpReference, chirp_residual
from sordor.ensemble import EnsembleSpec, build_ensemble, build_targets
from sordor.errors import InvalidArgumentError
from sordor.grape import PulseWaveform, fidelity, propagate
from sordor.simulate import (
    BlochState,
    SequenceElement,
    SequenceSpec,
    bloch_components,
    bloch_trajectory,
    fidelity_profile,
    named_sequence,
    phase_shift_pulse,
    sequence_fidelity,
    sequence_propagators,
)

import _oracles


def hard(beta, phase=0.0, slices=8, duration=1e-4, b=4.0, q=0.0):
    return PulseWaveform(np.full(slices, phase), beta / duration, duration / slices,
                         {"b": b, "Q": q, "beta": beta, "bandwidth": 40e3})


def random_pulse(rng, beta, b=1.0, q=0.0):
    n = int(50 * b)
    dt = b / 40e3 / n
    return PulseWaveform(rng.uniform(0, 2 * np.pi, n), np.pi * b / (2 * b / 40e3), dt,
                         {"b": b, "Q": q, "beta": beta, "bandwidth": 40e3})


ON_RES = EnsembleSpec(bandwidth=40e3, b=4.0, offsets=np.array([0.0]))


class TestPhaseShift:
    def test_zero(self):
        p = hard(np.pi)
        np.testing.assert_array_equal(phase_shift_pulse(p, 0.0).phases, p.phases)

    def test_quarter_turn_gives_y_rotation(self):
        p = phase_shift_pulse(hard(np.pi / 2), np.pi / 2)
        u = sequence_propagators(SequenceSpec([SequenceElement(p)]), ON_RES)[0]
        want = _oracles.superop(_oracles.hilbert_target(np.pi / 2, np.pi / 2))
        np.testing.assert_allclose(u, want, atol=1e-12)

    @given(st.floats(-10, 10), st.floats(-10, 10))
    def test_additive(self, a, b):
        p = hard(np.pi, phase=0.3)
        np.testing.assert_allclose(
            phase_shift_pulse(phase_shift_pulse(p, a), b).phases,
            phase_shift_pulse(p, a + b).phases, atol=1e-12,
        )


class TestBlochState:
    def test_too_long(self):
        with pytest.raises(InvalidArgumentError):
            BlochState(1.0, 0.1, 0.0)

    @given(st.floats(-0.57, 0.57), st.floats(-0.57, 0.57), st.floats(-0.57, 0.57))
    def test_density_round_trip(self, x, y, z):
        got = bloch_components(BlochState(x, y, z).density_vector())
        np.testing.assert_allclose(got, [x, y, z], atol=1e-15)


class TestBlochTrajectory:
    def test_zero_amplitude_keeps_z(self):
        p = hard(np.pi)
        p.amplitude = 0.0
        res = bloch_trajectory(SequenceSpec([SequenceElement(p)]), (0, 0, 1), ON_RES)
        np.testing.assert_allclose(res.states, [[0, 0, 1]], atol=1e-15)

    def test_ideal_pi_inverts_everywhere(self):
        ens = build_ensemble(4, 40e3, members=41)
        seq = SequenceSpec([SequenceElement(hard(np.pi), ideal=True)])
        res = bloch_trajectory(seq, (0, 0, 1), ens)
        np.testing.assert_allclose(res.states, np.tile([0, 0, -1], (41, 1)), atol=1e-12)

    def test_ideal_pair_matches_product(self):
        ens = build_ensemble(2, 40e3, members=21)
        p90, p180 = hard(np.pi / 2, b=2, q=0.4), hard(np.pi, b=2, q=0.2)
        seq = named_sequence("hahn", p90, p180, ideal=True)
        res = bloch_trajectory(seq, (0, 0, 1), ens)
        for k, w in enumerate(ens.offsets):
            u = np.eye(2)
            for pulse in (p90, p180):
                a = np.pi * 2 * pulse.metadata["Q"] * (1 - (w / (np.pi * 40e3)) ** 2)
                u = _oracles.hilbert_target(a, pulse.metadata["beta"]) @ u
            rho = u @ np.diag([1, 0]).astype(complex) @ u.conj().T
            want = [np.trace(p @ rho).real for p in (spin.PAULI_X, spin.PAULI_Y, spin.PAULI_Z)]
            np.testing.assert_allclose(res.states[k], want, atol=1e-12)

    def test_hard_pulse_matches_hilbert_oracle(self, rng):
        p = random_pulse(rng, np.pi)
        ens = build_ensemble(1, 40e3, members=9)
        res = bloch_trajectory(SequenceSpec([SequenceElement(p)]), (1, 0, 0), ens)
        for k, w in enumerate(ens.offsets):
            u = _oracles.hilbert_pulse(p.phases, p.amplitude, p.dt, w)
            rho = u @ (np.eye(2) + spin.PAULI_X) / 2 @ u.conj().T
            want = [np.trace(s @ rho).real for s in (spin.PAULI_X, spin.PAULI_Y, spin.PAULI_Z)]
            np.testing.assert_allclose(res.states[k], want, atol=1e-12)

    def test_concatenation_is_product(self, rng):
        ens = build_ensemble(1, 40e3, members=7)
        p1, p2 = random_pulse(rng, np.pi / 2), random_pulse(rng, np.pi)
        both = sequence_propagators(SequenceSpec([SequenceElement(p1), SequenceElement(p2, 0.4)]), ens)
        u1 = sequence_propagators(SequenceSpec([SequenceElement(p1)]), ens)
        u2 = sequence_propagators(SequenceSpec([SequenceElement(phase_shift_pulse(p2, 0.4))]), ens)
        np.testing.assert_allclose(both, u2 @ u1, atol=1e-10)

    def test_ideal_single_pulse_is_target(self):
        ens = build_ensemble(2, 40e3, members=15)
        p = hard(np.pi / 2, b=2, q=0.35)
        got = sequence_propagators(SequenceSpec([SequenceElement(p, ideal=True)]), ens)
        np.testing.assert_allclose(got, build_targets(ens, 0.35, np.pi / 2).rotations, atol=0)

    def test_time_resolved(self, rng):
        p = random_pulse(rng, np.pi)
        ens = build_ensemble(1, 40e3, members=5)
        seq = SequenceSpec([SequenceElement(p), SequenceElement(hard(np.pi), ideal=True)])
        res = bloch_trajectory(seq, (0, 0, 1), ens, time_resolved=True)
        assert res.trajectory.shape == (5, p.slices + 2, 3)
        np.testing.assert_allclose(res.trajectory[:, -1], res.states, atol=1e-12)
        np.testing.assert_allclose(np.linalg.norm(res.trajectory, axis=-1), 1.0, atol=1e-10)

    def test_bandwidth_mismatch_warns(self):
        ens = build_ensemble(4, 20e3, members=5)
        res = bloch_trajectory(SequenceSpec([SequenceElement(hard(np.pi))]), (0, 0, 1), ens)
        assert res.warnings

    @given(st.integers(0, 2**32 - 1), st.floats(0, 2 * np.pi), st.floats(-1, 1))
    def test_norm_preserved(self, seed, theta, c):
        rng = np.random.default_rng(seed)
        p = random_pulse(rng, np.pi, b=0.5)
        s = np.sqrt(1 - c * c)
        res = bloch_trajectory(SequenceSpec([SequenceElement(p)]),
                               BlochState(s * np.cos(theta), s * np.sin(theta), c),
                               build_ensemble(0.5, 40e3))
        np.testing.assert_allclose(np.linalg.norm(res.states, axis=1), 1.0, atol=1e-10)


class TestSequenceFidelity:
    def test_ideal_against_ideal(self):
        ens = build_ensemble(2, 40e3)
        seq = named_sequence("perfect-echo", hard(np.pi / 2, b=2, q=0.2), hard(np.pi, b=2, q=0.1), ideal=True)
        assert sequence_fidelity(seq, seq, ens).total == pytest.approx(1.0, abs=1e-12)

    def test_single_pulse_equals_own_report(self, rng):
        p = random_pulse(rng, np.pi, q=0.3)
        ens = build_ensemble(1, 40e3)
        want = fidelity(propagate(p, ens, build_targets(ens, 0.3, np.pi)), build_targets(ens, 0.3, np.pi))
        got = fidelity_profile(p, ens)
        np.testing.assert_allclose(got.members, want.members, atol=1e-12)

    def test_length_mismatch(self):
        ens = build_ensemble(2, 40e3)
        a = named_sequence("hahn", hard(np.pi / 2), hard(np.pi))
        b = named_sequence("single90", hard(np.pi / 2), None)
        with pytest.raises(InvalidArgumentError):
            sequence_fidelity(a, b, ens)

    def test_named_sequences(self):
        p90, p180 = hard(np.pi / 2), hard(np.pi)
        echo = named_sequence("perfect-echo", p90, p180)
        assert [e.pulse is p90 for e in echo.elements] == [True, False, True, False, True]
        np.testing.assert_allclose([e.shift for e in echo.elements],
                                   [0, np.pi / 2, np.pi / 2, np.pi / 2, np.pi])
        with pytest.raises(InvalidArgumentError):
            named_sequence("hahn", p90, None)
        with pytest.raises(InvalidArgumentError):
            named_sequence("nope", p90, p180)

    def test_empty_sequence(self):
        with pytest.raises(InvalidArgumentError):
            SequenceSpec([])


class TestChirp:
    def test_reference_pulse_has_zero_residual(self):
        p = hard(np.pi, slices=100, duration=450e-6)
        ref = ChirpReference.for_pulse(p)
        t = (np.arange(100) + 0.5) * p.dt
        _, residual, _ = chirp_residual(p.with_phases(ref.phase(t)))
        np.testing.assert_allclose(residual, 0.0, atol=1e-12)

    def test_constant_phase(self):
        p = hard(np.pi, slices=100, duration=450e-6)
        _, residual, reference = chirp_residual(p.with_phases(np.zeros(100)))
        np.testing.assert_allclose(residual, -reference, atol=0)

    def test_default_sweep(self):
        # 10 kHz amplitude over 450 us
        p = PulseWaveform(np.zeros(900), 2 * np.pi * 1e4, 0.5e-6)
        assert ChirpReference.for_pulse(p).sweep == pytest.approx(45e3, rel=1e-12)
        assert ChirpReference.for_pulse(p, sweep=40e3).sweep == 40e3
