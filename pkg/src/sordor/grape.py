"""Phase-only GRAPE: propagation, fidelity, exact gradients and L-BFGS ascent."""
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import spin
from ._accel import kernels
from .ensemble import build_ensemble, build_targets, scaling_from_bandwidth
from .errors import InvalidArgumentError

logger = logging.getLogger(__name__)


@dataclass
class PulseWaveform:
    """Piecewise-constant phase-modulated pulse of constant amplitude.

    Attributes
    ----------
    phases : ndarray
        Slice phases in rad; unbounded, never wrapped.
    amplitude : float
        rad/s.
    dt : float
        Slice duration in s.
    metadata : dict
        ``b``, ``Q``, ``beta`` (rad) and ``bandwidth`` (Hz) of the problem the
        pulse was made for.
    """

    phases: np.ndarray
    amplitude: float
    dt: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.phases = np.asarray(self.phases, dtype=float)
        if self.phases.ndim != 1 or self.phases.size < 1:
            raise InvalidArgumentError("a waveform needs at least one slice")
        if not np.all(np.isfinite(self.phases)):
            raise InvalidArgumentError("waveform phases must be finite")

    @property
    def slices(self):
        return self.phases.size

    @property
    def duration(self):
        return self.slices * self.dt

    def with_phases(self, phases):
        return replace(self, phases=np.array(phases, dtype=float), metadata=dict(self.metadata))


def _check(waveform, ensemble, targets):
    if len(targets) != ensemble.member_count:
        raise InvalidArgumentError(
            f"{len(targets)} targets for {ensemble.member_count} ensemble members"
        )


@dataclass
class PropagatorCache:
    """Per-member step, forward and backward propagators.

    ``forward[k, n]`` is the product of the first ``n`` steps (``forward[k, 0]``
    is the identity) and ``backward[k, n]`` is the target propagated back
    through steps ``n+1 .. N`` (so ``backward[k, N]`` is the target).
    """

    steps: np.ndarray  # (K, N, 4, 4)
    forward: np.ndarray  # (K, N+1, 4, 4)
    backward: np.ndarray  # (K, N+1, 4, 4)

    @property
    def final(self):
        return self.forward[:, -1]

    def slice_fidelities(self, n):
        """Per-member fidelity evaluated from the split at slice boundary ``n``."""
        return np.einsum("kij,kij->k", self.backward[:, n].conj(), self.forward[:, n]).real / 4.0


def propagate(waveform, ensemble, targets):
    _check(waveform, ensemble, targets)
    steps = kernels.slice_propagators(
        waveform.phases, float(waveform.amplitude), float(waveform.dt),
        ensemble.offsets, spin.LX, spin.LY, spin.LZ,
    )
    nmem, nslices = steps.shape[:2]
    forward = np.empty((nmem, nslices + 1, 4, 4), dtype=np.complex128)
    forward[:, 0] = np.eye(4)
    for n in range(nslices):
        forward[:, n + 1] = steps[:, n] @ forward[:, n]
    backward = np.empty_like(forward)
    backward[:, nslices] = targets.rotations
    for n in range(nslices, 0, -1):
        backward[:, n - 1] = steps[:, n - 1].conj().transpose(0, 2, 1) @ backward[:, n]
    return PropagatorCache(steps=steps, forward=forward, backward=backward)


@dataclass
class FidelityReport:
    total: float
    members: np.ndarray
    gradient_norm: float = float("nan")


def fidelity(cache, targets):
    """Mean over members of ``Re<R_k|U_k> / 4``."""
    members = np.einsum("kij,kij->k", targets.rotations.conj(), cache.final).real / 4.0
    return FidelityReport(total=float(np.mean(members)), members=members)


def member_fidelities(waveform, ensemble, targets):
    _check(waveform, ensemble, targets)
    return kernels.member_fidelities(
        waveform.phases, float(waveform.amplitude), float(waveform.dt),
        ensemble.offsets, spin.LX, spin.LY, spin.LZ, targets.rotations,
    )


def fidelity_and_gradient(waveform, ensemble, targets):
    """Return ``(F, dF/dphi, per-member f)``; gradient averaged over members."""
    _check(waveform, ensemble, targets)
    fid, grad = kernels.member_gradients(
        waveform.phases, float(waveform.amplitude), float(waveform.dt),
        ensemble.offsets, spin.LX, spin.LY, spin.LZ, targets.rotations,
    )
    return float(fid.mean()), grad.mean(axis=0), fid


def gradient(waveform, ensemble, targets):
    return fidelity_and_gradient(waveform, ensemble, targets)[1]


def gradient_reference(waveform, ensemble, targets):
    """Slow gradient built from separate x and y directional derivatives.

    Evaluates ``Re<V_n|(A cos(phi_n) dP/dSy - A sin(phi_n) dP/dSx) U_{n-1}>``
    slice by slice with :func:`sordor.spin.step_with_derivatives`; used to
    cross-check the fused kernels.
    """
    cache = propagate(waveform, ensemble, targets)
    amp = waveform.amplitude
    grad = np.zeros(waveform.slices)
    for k, omega in enumerate(ensemble.offsets):
        for n, phi in enumerate(waveform.phases):
            h = spin.member_hamiltonian(phi, amp, omega)
            step = spin.step_with_derivatives(
                spin.commutation_superoperator(h), spin.LX, spin.LY, waveform.dt
            )
            dp = amp * math.cos(phi) * step.d_dy - amp * math.sin(phi) * step.d_dx
            grad[n] += np.vdot(cache.backward[k, n + 1], dp @ cache.forward[k, n]).real / 4.0
    return grad / ensemble.member_count


def convergence_tolerance(b):
    """Gradient-norm threshold ``min(1e-4, 10**(-5 (210/583 + b/36)))``."""
    if not b > 0:
        raise InvalidArgumentError(f"b must be positive, got {b}")
    return min(1e-4, 10.0 ** (-5.0 * (210.0 / 583.0 + b / 36.0)))


@dataclass
class OptimizerSettings:
    memory: int = 20
    max_iterations: int = 2000
    tolerance: float | None = None  # None: convergence_tolerance(b)
    c1: float = 1e-4
    c2: float = 0.9
    max_line_search: int = 30
    initial_step: float = 0.1  # first-iteration max phase change, rad


@dataclass
class OptimizeResult:
    waveform: PulseWaveform
    fidelity: float
    gradient_norm: float
    fidelity_trace: list
    gradient_norm_trace: list
    gradient_calls: int
    iterations: int
    status: str  # converged | max_iterations | line_search_failed

    @property
    def converged(self):
        return self.status == "converged"


class _Objective:
    """Negated fidelity with gradient, counting evaluations."""

    def __init__(self, template, ensemble, targets):
        self.template = template
        self.ensemble = ensemble
        self.targets = targets
        self.calls = 0

    def __call__(self, x):
        self.calls += 1
        f, g, _ = fidelity_and_gradient(
            self.template.with_phases(x), self.ensemble, self.targets
        )
        return -f, -g


def _cubic_min(a, fa, ga, b, fb, gb):
    """Minimiser of the cubic through (a, fa, ga) and (b, fb, gb), or None."""
    d1 = ga + gb - 3 * (fa - fb) / (a - b)
    disc = d1 * d1 - ga * gb
    if disc < 0:
        return None
    d2 = math.copysign(math.sqrt(disc), b - a)
    denom = gb - ga + 2 * d2
    if denom == 0:
        return None
    return b - (b - a) * (gb + d2 - d1) / denom


def _zoom(phi, lo, hi, f0, g0, c1, c2, budget):
    (a_lo, f_lo, g_lo, pt_lo), (a_hi, f_hi, g_hi, _) = lo, hi
    for _ in range(budget):
        trial = _cubic_min(a_lo, f_lo, g_lo, a_hi, f_hi, g_hi)
        left, right = min(a_lo, a_hi), max(a_lo, a_hi)
        width = right - left
        if trial is None or not (left + 0.1 * width <= trial <= right - 0.1 * width):
            trial = 0.5 * (a_lo + a_hi)
        f_t, g_t, pt = phi(trial)
        if f_t > f0 + c1 * trial * g0 or f_t >= f_lo:
            a_hi, f_hi, g_hi = trial, f_t, g_t
        else:
            if abs(g_t) <= -c2 * g0:
                return trial, pt
            if g_t * (a_hi - a_lo) >= 0:
                a_hi, f_hi, g_hi = a_lo, f_lo, g_lo
            a_lo, f_lo, g_lo, pt_lo = trial, f_t, g_t, pt
        if abs(a_hi - a_lo) < 1e-14 * max(1.0, abs(a_lo)):
            break
    # best sufficient-decrease point found, if it moved at all
    if a_lo > 0:
        return a_lo, pt_lo
    return None, None


def strong_wolfe(objective, x, f0, g, direction, alpha0, c1=1e-4, c2=0.9, budget=30):
    """Strong-Wolfe line search along ``direction`` with cubic interpolation.

    Returns ``(alpha, (f, grad))`` or ``(None, None)`` when no acceptable step
    was found. ``objective`` returns ``(value, gradient)``.
    """
    slope0 = float(g @ direction)
    if slope0 >= 0:
        return None, None

    def phi(a):
        fa, ga = objective(x + a * direction)
        return fa, float(ga @ direction), (fa, ga)

    prev = (0.0, f0, slope0, (f0, g))
    alpha = alpha0
    for i in range(budget):
        f_a, g_a, pt = phi(alpha)
        if f_a > f0 + c1 * alpha * slope0 or (i > 0 and f_a >= prev[1]):
            return _zoom(phi, prev, (alpha, f_a, g_a, pt), f0, slope0, c1, c2, budget)
        if abs(g_a) <= -c2 * slope0:
            return alpha, pt
        if g_a >= 0:
            return _zoom(phi, (alpha, f_a, g_a, pt), prev, f0, slope0, c1, c2, budget)
        prev = (alpha, f_a, g_a, pt)
        alpha *= 2.0
    # still descending steeply after the expansion budget: take the last step
    if prev[0] > 0:
        return prev[0], prev[3]
    return None, None


def _two_loop(g, s_hist, y_hist):
    q = g.copy()
    rhos = [1.0 / float(y @ s) for s, y in zip(s_hist, y_hist)]
    alphas = []
    for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rhos)):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    s, y = s_hist[-1], y_hist[-1]
    q *= float(s @ y) / float(y @ y)
    for (s, y, rho), a in zip(zip(s_hist, y_hist, rhos), reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return -q


def optimize(initial, ensemble, targets, settings=None):
    """Maximise fidelity over the slice phases with L-BFGS.

    Never raises on numerical trouble: a failed line search ends the run with
    ``status="line_search_failed"`` and the best iterate so far.
    """
    settings = settings or OptimizerSettings()
    tol = settings.tolerance
    if tol is None:
        tol = convergence_tolerance(initial.metadata.get("b", ensemble.b))
    objective = _Objective(initial, ensemble, targets)
    x = initial.phases.copy()
    f, g = objective(x)
    gnorm = float(np.linalg.norm(g))
    f_trace, g_trace = [-f], [gnorm]
    s_hist, y_hist = [], []
    status = "max_iterations"
    iterations = 0
    while True:
        if gnorm <= tol:
            status = "converged"
            break
        if iterations >= settings.max_iterations:
            break
        if s_hist:
            direction = _two_loop(g, s_hist, y_hist)
            alpha0 = 1.0
        else:
            direction = -g
            alpha0 = settings.initial_step / max(float(np.max(np.abs(g))), 1e-300)
        alpha, point = strong_wolfe(
            objective, x, f, g, direction, alpha0,
            settings.c1, settings.c2, settings.max_line_search,
        )
        if alpha is None and s_hist:
            # drop the curvature memory and retry along steepest ascent
            s_hist.clear()
            y_hist.clear()
            direction = -g
            alpha0 = settings.initial_step / max(float(np.max(np.abs(g))), 1e-300)
            alpha, point = strong_wolfe(
                objective, x, f, g, direction, alpha0,
                settings.c1, settings.c2, settings.max_line_search,
            )
        if alpha is None:
            status = "line_search_failed"
            break
        f_new, g_new = point
        step = alpha * direction
        y = g_new - g
        sy = float(step @ y)
        if sy > 1e-12 * float(np.linalg.norm(step) * np.linalg.norm(y)):
            s_hist.append(step)
            y_hist.append(y)
            if len(s_hist) > settings.memory:
                s_hist.pop(0)
                y_hist.pop(0)
        x = x + step
        f, g = f_new, g_new
        gnorm = float(np.linalg.norm(g))
        iterations += 1
        f_trace.append(-f)
        g_trace.append(gnorm)
    logger.debug(
        "optimize: F=%.12f |grad|=%.3e iterations=%d calls=%d status=%s",
        -f, gnorm, iterations, objective.calls, status,
    )
    return OptimizeResult(
        waveform=initial.with_phases(x),
        fidelity=-f,
        gradient_norm=gnorm,
        fidelity_trace=f_trace,
        gradient_norm_trace=g_trace,
        gradient_calls=objective.calls,
        iterations=iterations,
        status=status,
    )


def chirp_phases(slices, duration, sweep):
    """Quadratic phase ``pi * sweep * T * (t/T - 1/2)^2`` at slice midpoints.

    ``sweep`` is the swept bandwidth in Hz.
    """
    t = (np.arange(slices) + 0.5) / slices
    return np.pi * sweep * duration * (t - 0.5) ** 2


def initial_waveform(b, q, beta, bandwidth, seed=None, perturbation=0.0):
    """Chirp-like starting pulse sweeping the band, plus optional seeded noise."""
    scaling = scaling_from_bandwidth(b, beta, bandwidth)
    phases = chirp_phases(scaling.slices, scaling.duration, bandwidth)
    if perturbation:
        rng = np.random.default_rng(seed)
        phases = phases + rng.uniform(-perturbation, perturbation, scaling.slices)
    return PulseWaveform(
        phases=phases,
        amplitude=scaling.amplitude,
        dt=scaling.dt,
        metadata={"b": float(b), "Q": float(q), "beta": float(beta), "bandwidth": float(bandwidth)},
    )


def problem(b, q, beta, bandwidth, members=None):
    """Ensemble and targets for one grid cell."""
    ensemble = build_ensemble(b, bandwidth, members)
    return ensemble, build_targets(ensemble, q, beta)
