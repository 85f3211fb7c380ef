"""Morphic GRAPE over a (Q, b) grid with per-cell checkpoints.

The recipe runs five stages in order:

* ``1a`` forward morphs in Q from an optimised Q=0 pulse at ``b_max``,
* ``1b`` backward morphs in Q from Q=q_max at ``b_max``,
* ``2``  smoothing morphs at ``b_max`` from the largest dF/dQ extrema,
* ``3a`` compressed morphs in b from ``b_max`` down to ``db``,
* ``3b`` expanded morphs in b from ``db`` up to ``b_max``.

Each morph re-optimises the source cell's pulse against the destination
targets; a cell only ever takes a strictly better result.
"""
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import STAGES, RunConfig
from .ensemble import build_ensemble, build_targets, scaling_from_bandwidth
from .errors import CheckpointError, InvalidArgumentError, MissingDependencyError
from .grape import PulseWaveform, initial_waveform, optimize
from .io import atomic_write_text, dumps_json, environment_versions, waveform_from_dict, waveform_to_dict

logger = logging.getLogger(__name__)

DIRECTIONS = ("seed", "forward", "backward", "compressed", "expanded", "smoothing")


@dataclass
class CellResult:
    waveform: PulseWaveform
    fidelity: float
    gradient_norm: float
    gradient_calls: int
    iterations: int
    status: str
    stage: str
    source: tuple | None = None  # (Q index, b index) the morph started from

    def to_dict(self, q, b):
        return {
            "Q": q,
            "b": b,
            "fidelity": self.fidelity,
            "gradient_norm": self.gradient_norm,
            "gradient_calls": self.gradient_calls,
            "iterations": self.iterations,
            "status": self.status,
            "stage": self.stage,
            "source": list(self.source) if self.source is not None else None,
            "waveform": waveform_to_dict(self.waveform),
        }

    @classmethod
    def from_dict(cls, data):
        source = data["source"]
        return cls(
            waveform=waveform_from_dict(data["waveform"]),
            fidelity=float(data["fidelity"]),
            gradient_norm=float(data["gradient_norm"]),
            gradient_calls=int(data["gradient_calls"]),
            iterations=int(data["iterations"]),
            status=str(data["status"]),
            stage=str(data["stage"]),
            source=tuple(source) if source is not None else None,
        )


class MorphGrid:
    """Best result found so far for every (Q, b) lattice cell.

    Cells are addressed by integer indices ``(iq, ib)``; ``q_values[iq]`` and
    ``b_values[ib]`` give the coordinates.
    """

    def __init__(self, q_values, b_values):
        self.q_values = [float(q) for q in q_values]
        self.b_values = [float(b) for b in b_values]
        self.cells = {}

    @classmethod
    def from_config(cls, config):
        nq = int(round(config.q_max / config.dq)) + 1
        nb = int(round(config.b_max / config.db))
        q_values = [round(i * config.dq, 12) for i in range(nq)]
        b_values = [round(j * config.db, 12) for j in range(1, nb + 1)]
        return cls(q_values, b_values)

    def __contains__(self, key):
        return key in self.cells

    def get(self, iq, ib):
        return self.cells.get((iq, ib))

    def offer(self, iq, ib, result):
        """Store ``result`` if the cell is empty or it is strictly better."""
        current = self.cells.get((iq, ib))
        if current is not None and not result.fidelity > current.fidelity:
            return False
        self.cells[(iq, ib)] = result
        return True

    def profile(self, ib):
        """Fidelity along Q at b index ``ib`` (nan where unpopulated)."""
        return np.array([
            self.cells[(iq, ib)].fidelity if (iq, ib) in self.cells else np.nan
            for iq in range(len(self.q_values))
        ])

    def surface(self):
        """Fidelity array of shape (len(Q), len(b))."""
        return np.stack([self.profile(ib) for ib in range(len(self.b_values))], axis=1)

    def best_per_b(self):
        out = []
        for ib, b in enumerate(self.b_values):
            prof = self.profile(ib)
            if np.all(np.isnan(prof)):
                continue
            iq = int(np.nanargmax(prof))
            out.append((b, self.q_values[iq], float(prof[iq])))
        return out

    def matched_cells(self, m):
        """Populated cell pairs with ``b1 = m b2`` and ``Q2 = m Q1``.

        Matching is done on lattice indices, so the relation holds exactly on
        the grid (b starts at one spacing, Q at zero).
        """
        if not m > 0:
            raise InvalidArgumentError("multiplier must be positive")
        pairs = []
        for (iq1, ib1) in sorted(self.cells):
            # b index j corresponds to (j + 1) * db
            jb2 = (ib1 + 1) / m - 1
            iq2 = m * iq1
            if abs(jb2 - round(jb2)) > 1e-9 or abs(iq2 - round(iq2)) > 1e-9:
                continue
            jb2, iq2 = int(round(jb2)), int(round(iq2))
            if (iq2, jb2) in self.cells:
                pairs.append(((iq1, ib1), (iq2, jb2)))
        return pairs


@dataclass
class MorphJob:
    source: tuple | None  # None for the seed optimisation
    destination: tuple
    direction: str
    stage: str
    chain: str = ""  # disambiguates smoothing chains that revisit a transition

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise InvalidArgumentError(f"unknown morph direction {self.direction!r}")
        if self.source is None:
            return
        dq = self.destination[0] - self.source[0]
        db = self.destination[1] - self.source[1]
        expected = {
            "forward": (dq == 1 or dq == 0) and db == 0,
            "backward": dq == -1 and db == 0,
            "compressed": dq == 0 and db == -1,
            "expanded": dq == 0 and db == 1,
            "smoothing": abs(dq) == 1 and db == 0,
        }.get(self.direction, True)
        if not expected:
            raise InvalidArgumentError(
                f"{self.direction} morph cannot go from {self.source} to {self.destination}"
            )

    @property
    def job_id(self):
        src = "seed" if self.source is None else f"{self.source[0]},{self.source[1]}"
        chain = f"#{self.chain}" if self.chain else ""
        return f"{self.stage}{chain}:{src}->{self.destination[0]},{self.destination[1]}"


def resample_waveform(waveform, n_new, scaling):
    """Linear interpolation of the unwrapped phases onto ``n_new`` slices.

    Slice ``j`` of the new pulse sits at fraction ``j / (n_new - 1)`` of the
    source slice index range. Amplitude and slice length come from
    ``scaling``.
    """
    if n_new < 2:
        raise InvalidArgumentError(f"need at least 2 slices, got {n_new}")
    if n_new == waveform.slices:
        new = waveform.phases.copy()
    else:
        phases = np.unwrap(waveform.phases)
        src = np.linspace(0.0, 1.0, phases.size)
        new = np.interp(np.linspace(0.0, 1.0, n_new), src, phases)
    meta = dict(waveform.metadata)
    meta.update(b=scaling.b, beta=scaling.beta, bandwidth=scaling.bandwidth)
    return PulseWaveform(phases=new, amplitude=scaling.amplitude, dt=scaling.dt, metadata=meta)


def solve_cell(config, waveform, q, b):
    """Optimise ``waveform`` against the targets of cell (q, b)."""
    ensemble = build_ensemble(b, config.bandwidth, config.members)
    targets = build_targets(ensemble, q, config.beta)
    start = waveform.with_phases(waveform.phases)
    start.metadata.update(Q=q, b=b)
    return optimize(start, ensemble, targets, config.optimizer_settings())


def morph_step(grid, job, config):
    """Run one morph job; returns ``(improved, CellResult)``."""
    q = grid.q_values[job.destination[0]]
    b = grid.b_values[job.destination[1]]
    if job.source is None:
        start = initial_waveform(
            b, q, config.beta, config.bandwidth, config.seed, config.perturbation
        )
    else:
        src = grid.get(*job.source)
        if src is None:
            raise MissingDependencyError(f"source cell {job.source} has no result ({job.job_id})")
        start = src.waveform
        if job.source[1] != job.destination[1]:
            scaling = scaling_from_bandwidth(b, config.beta, config.bandwidth)
            start = resample_waveform(start, scaling.slices, scaling)
    res = solve_cell(config, start, q, b)
    cell = CellResult(
        waveform=res.waveform,
        fidelity=res.fidelity,
        gradient_norm=res.gradient_norm,
        gradient_calls=res.gradient_calls,
        iterations=res.iterations,
        status=res.status,
        stage=job.stage,
        source=job.source,
    )
    improved = grid.offer(*job.destination, cell)
    return improved, cell


@dataclass
class SmoothingStart:
    index: int
    q: float
    direction: int  # +1 forward, -1 backward
    magnitude: float


def smoothing_starts(profile, q_values=None, count=11):
    """Start points for smoothing morphs from spikes in ``|dF/dQ|``.

    Centred differences are taken at interior points; a (possibly flat) run of
    equal magnitudes is a peak when both neighbouring interior points are
    strictly lower. Endpoints and runs touching them never qualify. Each
    start sits on the higher-fidelity side of its run and morphs toward the
    lower side.
    """
    f = np.asarray(profile, dtype=float)
    if np.any(np.isnan(f)):
        raise InvalidArgumentError("smoothing needs a fully populated Q profile")
    if q_values is None:
        q_values = np.arange(f.size, dtype=float)
    q_values = np.asarray(q_values, dtype=float)
    n = f.size
    if n < 5:
        return []
    slope = np.zeros(n)
    slope[1:-1] = (f[2:] - f[:-2]) / (q_values[2:] - q_values[:-2])
    mag = np.abs(slope)
    tol = 1e-12 * max(float(mag.max()), 1e-300)
    starts = []
    i = 1
    while i <= n - 2:
        j = i
        while j + 1 <= n - 2 and abs(mag[j + 1] - mag[i]) <= tol:
            j += 1
        if i > 1 and j < n - 2 and mag[i] > 0:
            if mag[i - 1] < mag[i] - tol and mag[j + 1] < mag[i] - tol:
                run = range(i, j + 1)
                best = max(run, key=lambda k: (f[k], -k))
                left, right = f[max(i - 1, 0)], f[min(j + 1, n - 1)]
                direction = -1 if left < right else 1
                if left == right:
                    direction = -1 if slope[best] > 0 else 1
                starts.append(SmoothingStart(best, float(q_values[best]), direction, float(mag[i])))
        i = j + 1
    starts.sort(key=lambda s: (-s.magnitude, s.index))
    return starts[:count]


class RecipeInterrupted(Exception):
    """Raised internally when ``stop_after`` jobs have run."""


def _cell_tag(q, b):
    return f"Q{int(round(q * 1000)):04d}_b{int(round(b * 100)):04d}"


def _beta_tag(beta):
    return f"beta{int(round(math.degrees(beta))):03d}"


class Checkpoint:
    """On-disk layout ``grid/<beta_tag>/Q####_b####.json`` plus ``manifest.json``.

    Q is stored in thousandths and b in hundredths.
    """

    def __init__(self, root, config):
        self.root = Path(root)
        self.config = config
        self.cell_dir = self.root / "grid" / _beta_tag(config.beta)
        self.manifest_path = self.root / "manifest.json"

    def cell_path(self, q, b):
        return self.cell_dir / f"{_cell_tag(q, b)}.json"

    def exists(self):
        return self.manifest_path.exists()

    def save_cell(self, grid, iq, ib):
        q, b = grid.q_values[iq], grid.b_values[ib]
        atomic_write_text(self.cell_path(q, b), dumps_json(grid.get(iq, ib).to_dict(q, b)))

    def save_manifest(self, state):
        doc = {
            "schema": "sordor.morph-manifest",
            "version": 1,
            "config": self.config.to_dict(),
            "config_hash": self.config.problem_hash(),
            "seeds": {"seed": self.config.seed, "perturbation": self.config.perturbation},
            "stage_cursor": state.stage_cursor,
            "finished": state.finished,
            "completed": [{"id": k, "improved": v} for k, v in state.completed.items()],
            "stage_gradient_calls": state.stage_calls,
            "log": state.log,
            "versions": environment_versions(),
        }
        atomic_write_text(self.manifest_path, dumps_json(doc))

    def load(self, grid):
        problems = []
        try:
            doc = json.loads(self.manifest_path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"corrupted checkpoint manifest {self.manifest_path}: {exc}") from exc
        for key in ("config_hash", "completed", "stage_gradient_calls", "log", "stage_cursor"):
            if key not in doc:
                problems.append(f"manifest missing {key!r}")
        if problems:
            raise CheckpointError("corrupted checkpoint: " + "; ".join(problems))
        if doc["config_hash"] != self.config.problem_hash():
            raise CheckpointError(
                f"checkpoint at {self.root} was written for a different configuration"
            )
        index = {_cell_tag(q, b): (iq, ib)
                 for iq, q in enumerate(grid.q_values) for ib, b in enumerate(grid.b_values)}
        if self.cell_dir.exists():
            for path in sorted(self.cell_dir.glob("*.json")):
                if path.stem not in index:
                    problems.append(f"{path.name}: not a cell of this grid")
                    continue
                try:
                    cell = CellResult.from_dict(json.loads(path.read_text()))
                except Exception as exc:  # any parse or schema failure
                    problems.append(f"{path.name}: {type(exc).__name__}: {exc}")
                    continue
                grid.cells[index[path.stem]] = cell
        if problems:
            raise CheckpointError("corrupted checkpoint:\n  " + "\n  ".join(problems))
        state = _RunState()
        state.completed = {c["id"]: bool(c["improved"]) for c in doc["completed"]}
        state.stage_calls = dict(doc["stage_gradient_calls"])
        state.log = list(doc["log"])
        state.stage_cursor = doc["stage_cursor"]
        state.finished = bool(doc.get("finished", False))
        return state


@dataclass
class _RunState:
    completed: dict = field(default_factory=dict)
    stage_calls: dict = field(default_factory=dict)
    log: list = field(default_factory=list)
    stage_cursor: str = STAGES[0]
    finished: bool = False


def _row_worker(config, grid, jobs, completed):
    """Run a dependent chain of jobs on a private grid (for process pools)."""
    out = []
    for job in jobs:
        if job.job_id in completed:
            continue
        improved, cell = morph_step(grid, job, config)
        out.append((job, improved, cell))
    return out


class RecipeRunner:
    """Executes the morph recipe, checkpointing after every job.

    Parameters
    ----------
    config : RunConfig
    checkpoint_dir : path, optional
        Resumes from an existing checkpoint there.
    stop_after : int, optional
        Stop (as if killed) after this many newly executed jobs.
    workers : int, optional
        Processes for independent stage-3 rows; defaults to ``$SORDOR_WORKERS``
        or 1.
    """

    def __init__(self, config, checkpoint_dir=None, stop_after=None, workers=None):
        self.config = config
        self.grid = MorphGrid.from_config(config)
        self.checkpoint = Checkpoint(checkpoint_dir, config) if checkpoint_dir else None
        self.stop_after = stop_after
        self.workers = workers or int(os.environ.get("SORDOR_WORKERS", "1"))
        self.state = _RunState()
        self.executed = 0
        if self.checkpoint is not None and self.checkpoint.exists():
            self.state = self.checkpoint.load(self.grid)
            logger.info("resumed %d completed jobs from %s", len(self.state.completed), checkpoint_dir)

    # bookkeeping -----------------------------------------------------

    def _record(self, job, improved, cell):
        stage = job.stage
        self.state.stage_calls[stage] = self.state.stage_calls.get(stage, 0) + cell.gradient_calls
        total = sum(self.state.stage_calls.values())
        iq, ib = job.destination
        self.state.log.append({
            "event": "job",
            "stage": stage,
            "job": job.job_id,
            "direction": job.direction,
            "Q": self.grid.q_values[iq],
            "b": self.grid.b_values[ib],
            "fidelity": cell.fidelity,
            "gradient_norm": cell.gradient_norm,
            "gradient_calls": cell.gradient_calls,
            "cumulative_gradient_calls": total,
            "status": cell.status,
            "improved": improved,
        })
        self.state.completed[job.job_id] = improved
        if self.checkpoint is not None:
            if improved:
                self.checkpoint.save_cell(self.grid, iq, ib)
            self.checkpoint.save_manifest(self.state)

    def _run_job(self, job):
        if job.job_id in self.state.completed:
            return self.state.completed[job.job_id]
        if self.stop_after is not None and self.executed >= self.stop_after:
            raise RecipeInterrupted
        improved, cell = morph_step(self.grid, job, self.config)
        self.executed += 1
        self._record(job, improved, cell)
        return improved

    def _enter_stage(self, stage):
        self.state.stage_cursor = stage
        self.state.stage_calls.setdefault(stage, 0)
        # stages without jobs still show up; a resumed run does not repeat them
        if not any(e["event"] == "stage" and e["stage"] == stage for e in self.state.log):
            self.state.log.append({"event": "stage", "stage": stage})

    # stages ----------------------------------------------------------

    def _stage_forward(self, top):
        self._enter_stage("1a")
        self._run_job(MorphJob(None, (0, top), "seed", "1a"))
        for iq in range(1, len(self.grid.q_values)):
            self._run_job(MorphJob((iq - 1, top), (iq, top), "forward", "1a"))

    def _stage_backward(self, top):
        self._enter_stage("1b")
        for iq in range(len(self.grid.q_values) - 1, 0, -1):
            self._run_job(MorphJob((iq, top), (iq - 1, top), "backward", "1b"))

    def _smooth_row(self, ib, stage):
        prof = self.grid.profile(ib)
        if np.any(np.isnan(prof)):
            return
        starts = smoothing_starts(prof, self.grid.q_values, self.config.smoothing_count)
        for rank, start in enumerate(starts):
            cur = start.index
            while 0 <= cur + start.direction < len(self.grid.q_values):
                nxt = cur + start.direction
                job = MorphJob((cur, ib), (nxt, ib), "smoothing", stage, chain=str(rank))
                if not self._run_job(job):
                    break
                cur = nxt

    def _rows(self, stage, direction, ib_pairs):
        if not ib_pairs:
            return
        chains = []
        for iq in range(len(self.grid.q_values)):
            chains.append([MorphJob((iq, a), (iq, b), direction, stage) for a, b in ib_pairs])
        if self.workers <= 1 or len(chains) < 2:
            for chain in chains:
                for job in chain:
                    self._run_job(job)
            return
        self._rows_parallel(chains)

    def _rows_parallel(self, chains):
        # rows touch disjoint cells, so each chain runs on a private copy
        snapshots = []
        for chain in chains:
            iq = chain[0].source[0]
            sub = MorphGrid(self.grid.q_values, self.grid.b_values)
            sub.cells = {k: v for k, v in self.grid.cells.items() if k[0] == iq}
            snapshots.append(sub)
        completed = set(self.state.completed)
        with ProcessPoolExecutor(max_workers=self.workers) as pool:
            futures = [pool.submit(_row_worker, self.config, sub, chain, completed)
                       for sub, chain in zip(snapshots, chains)]
            for fut in futures:
                for job, improved, cell in fut.result():
                    if self.stop_after is not None and self.executed >= self.stop_after:
                        raise RecipeInterrupted
                    if improved:
                        self.grid.cells[job.destination] = cell
                    self.executed += 1
                    self._record(job, improved, cell)

    def run(self):
        """Run (or resume) the recipe; returns the grid.

        When ``stop_after`` interrupts the run the partial grid is returned and
        ``self.finished`` is False.
        """
        top = len(self.grid.b_values) - 1
        try:
            self._stage_forward(top)
            self._stage_backward(top)
            self._enter_stage("2")
            self._smooth_row(top, "2")
            self._enter_stage("3a")
            self._rows("3a", "compressed", [(ib + 1, ib) for ib in range(top - 1, -1, -1)])
            self._enter_stage("3b")
            self._rows("3b", "expanded", [(ib, ib + 1) for ib in range(top)])
            if self.config.smoothing_all_b:
                self._enter_stage("smooth-rows")
                for ib in range(len(self.grid.b_values)):
                    self._smooth_row(ib, "smooth-rows")
        except RecipeInterrupted:
            return self.grid
        self.state.finished = True
        if self.checkpoint is not None:
            self.checkpoint.save_manifest(self.state)
        return self.grid

    @property
    def finished(self):
        return self.state.finished

    @property
    def log(self):
        return self.state.log

    @property
    def stage_order(self):
        """Stages in the order they were entered."""
        return [e["stage"] for e in self.state.log if e["event"] == "stage"]

    @property
    def stage_gradient_calls(self):
        return self.state.stage_calls


def run_recipe(config, checkpoint_dir=None, stop_after=None, workers=None):
    runner = RecipeRunner(config, checkpoint_dir, stop_after, workers)
    runner.run()
    return runner
