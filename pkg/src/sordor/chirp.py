"""Quadratic (chirp) reference phase and residual-phase analysis."""
from dataclasses import dataclass

import numpy as np


@dataclass
class ChirpReference:
    """Linear-sweep reference ``phi(t) = pi * sweep * T * (t/T - 1/2)^2``.

    ``sweep`` is the swept bandwidth in Hz. By default it is tied to the pulse
    amplitude as ``sweep = (A / 2 pi)^2 * T``: a 10 kHz, 450 us pulse then
    sweeps 45 kHz.
    """

    sweep: float  # Hz
    duration: float  # s
    amplitude: float  # rad/s

    @classmethod
    def for_pulse(cls, waveform, sweep=None):
        amp_hz = waveform.amplitude / (2 * np.pi)
        duration = waveform.duration
        if sweep is None:
            sweep = amp_hz * amp_hz * duration
        return cls(sweep=float(sweep), duration=duration, amplitude=waveform.amplitude)

    def phase(self, t):
        t = np.asarray(t, dtype=float)
        return np.pi * self.sweep * self.duration * (t / self.duration - 0.5) ** 2


def slice_midpoints(waveform):
    return (np.arange(waveform.slices) + 0.5) * waveform.dt


def chirp_residual(waveform, sweep=None):
    """Unwrapped pulse phase minus the chirp reference at slice midpoints.

    Returns ``(t, residual, reference)``.
    """
    ref = ChirpReference.for_pulse(waveform, sweep)
    t = slice_midpoints(waveform)
    reference = ref.phase(t)
    return t, np.unwrap(waveform.phases) - reference, reference
