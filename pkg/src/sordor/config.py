"""Run configuration shared by the morph recipe and the CLI."""
import hashlib
import json
import math
from dataclasses import asdict, dataclass, fields

from .errors import InvalidArgumentError
from .grape import OptimizerSettings

STAGES = ("1a", "1b", "2", "3a", "3b")


@dataclass
class RunConfig:
    """Morphic recipe parameters.

    Defaults: ``dq=0.01``, ``db=0.2``, L-BFGS
    memory 20, ``N = 50 b`` slices and ``1 + ceil(10 b)`` members per cell.
    """

    beta: float = math.pi
    bandwidth: float = 40e3  # Hz
    b_max: float = 18.0
    dq: float = 0.01
    db: float = 0.2
    q_max: float = 1.0
    members: int | None = None  # fixed K for every cell; None -> 1 + ceil(10 b)
    memory: int = 20
    max_iterations: int = 2000
    tolerance: float | None = None  # None -> convergence_tolerance(b)
    seed: int = 0
    perturbation: float = 0.0  # uniform noise on the Q=0 seed, rad
    smoothing_count: int = 11
    smoothing_all_b: bool = False
    output_dir: str | None = None

    def __post_init__(self):
        if not (self.beta > 0 and self.bandwidth > 0 and self.b_max > 0):
            raise InvalidArgumentError("beta, bandwidth and b_max must be positive")
        if not (self.db > 0 and self.dq > 0):
            raise InvalidArgumentError("grid spacings must be positive")
        if abs(self.b_max / self.db - round(self.b_max / self.db)) > 1e-9:
            raise InvalidArgumentError(f"b_max={self.b_max} is not a multiple of db={self.db}")
        if abs(self.q_max / self.dq - round(self.q_max / self.dq)) > 1e-9:
            raise InvalidArgumentError(f"q_max={self.q_max} is not a multiple of dq={self.dq}")
        if not 0 <= self.q_max <= 1:
            raise InvalidArgumentError("q_max must lie in [0, 1]")

    def optimizer_settings(self):
        return OptimizerSettings(
            memory=self.memory,
            max_iterations=self.max_iterations,
            tolerance=self.tolerance,
        )

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidArgumentError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def problem_hash(self):
        """Hash of everything that affects results (output location excluded)."""
        data = self.to_dict()
        data.pop("output_dir")
        blob = json.dumps(data, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()
