"""Core state-space model abstractions and weighted particle ensembles.

A model is specified by sample-only access to its transition kernel plus one
observation density per sensor. Transition densities are never required in
closed form: everything downstream works from samples and from pointwise
evaluation of the per-sensor non-fault observation densities.

All types are immutable value objects; operations are pure functions of
their arguments and the explicit `RandomStream` addresses, so they are safe
to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ContractViolationError, DegenerateEnsembleError
from .rng import RandomStream

__all__ = [
    "StateVector",
    "TransitionModel",
    "SensorModel",
    "FaultPrior",
    "SensorReading",
    "MeasurementBatch",
    "ParticleEnsemble",
    "sample_transition",
    "density_nonfaulty",
    "normalize_weights",
    "effective_sample_size",
]

# A state is a finite 1-D float vector; veh/m per link for the traffic model.
StateVector = np.ndarray

# Weights must sum to 1 within this tolerance wherever normalization is a
# precondition. numpy's pairwise summation keeps the residual well below
# this even for 1e5 particles.
WEIGHT_SUM_TOL = 1e-12

# normalize_weights returns its input unchanged when the sum is already this
# close to 1, which makes normalization bit-for-bit idempotent.
_ALREADY_NORMALIZED_TOL = 1e-13


@dataclass(frozen=True)
class TransitionModel:
    """Sample-only Markov transition kernel.

    `sampler` draws one successor state for one particle. Models that can
    propagate a whole ensemble with vectorized draws may also provide
    `propagate_batch(particles, stream) -> (P, N)`; it must be a pure
    function of (particles, stream address, P) so results never depend on
    evaluation order or worker count.
    """

    state_dim: int
    sampler: Callable[[StateVector, RandomStream], StateVector]
    propagate_batch: Optional[Callable[[np.ndarray, RandomStream], np.ndarray]] = None

    def __post_init__(self):
        if self.state_dim < 1:
            raise ContractViolationError("state_dim must be positive")


@dataclass(frozen=True)
class SensorModel:
    """Observation density of one correctly operating sensor.

    `log_density(reading, particles)` evaluates the log of the non-fault
    density at `reading` for a (P, N) block of states and returns shape (P,).
    The density must integrate to 1 over reading space for every fixed
    state; shipped models verify this analytically or by quadrature in the
    test suite.
    """

    sensor_id: str
    reading_dim: int
    log_density: Callable[[np.ndarray, np.ndarray], np.ndarray]

    @classmethod
    def from_scalar_density(
        cls,
        sensor_id: str,
        reading_dim: int,
        density_fn: Callable[[np.ndarray, StateVector], float],
    ) -> "SensorModel":
        """Wrap a scalar density(reading, state) -> float into a model."""

        def log_density(reading: np.ndarray, particles: np.ndarray) -> np.ndarray:
            vals = np.array([density_fn(reading, p) for p in particles], dtype=float)
            with np.errstate(divide="ignore"):
                return np.log(vals)

        return cls(sensor_id=sensor_id, reading_dim=reading_dim, log_density=log_density)

    def density(self, reading: np.ndarray, state: StateVector) -> float:
        """Non-fault density value at `reading` given a single state."""
        reading = np.atleast_1d(np.asarray(reading, dtype=float))
        if reading.shape != (self.reading_dim,):
            raise ContractViolationError(
                f"sensor {self.sensor_id}: reading has shape {reading.shape}, "
                f"expected ({self.reading_dim},)"
            )
        out = self.log_density(reading, np.asarray(state, dtype=float)[None, :])
        return float(np.exp(out[0]))

    def log_density_batch(self, reading: np.ndarray, particles: np.ndarray) -> np.ndarray:
        reading = np.atleast_1d(np.asarray(reading, dtype=float))
        if reading.shape != (self.reading_dim,):
            raise ContractViolationError(
                f"sensor {self.sensor_id}: reading has shape {reading.shape}, "
                f"expected ({self.reading_dim},)"
            )
        return np.asarray(self.log_density(reading, particles), dtype=float)


@dataclass(frozen=True)
class FaultPrior:
    """Prior probability that a given sensor reading is non-faulty.

    `phi(sensor_id, k, state) -> [0, 1]`. May depend on the state, which
    lets some regions of state space carry higher fault rates. For the
    common state-independent case use `FaultPrior.constant`.
    """

    phi: Callable[[str, int, StateVector], float]
    phi_batch: Optional[Callable[[str, int, np.ndarray], np.ndarray]] = None

    @classmethod
    def constant(cls, value: float) -> "FaultPrior":
        if not 0.0 <= value <= 1.0:
            raise ContractViolationError(f"constant fault prior {value} outside [0, 1]")

        def phi(sensor_id: str, k: int, state: StateVector) -> float:
            return value

        def phi_batch(sensor_id: str, k: int, particles: np.ndarray) -> np.ndarray:
            return np.full(particles.shape[0], value)

        return cls(phi=phi, phi_batch=phi_batch)

    def evaluate_batch(self, sensor_id: str, k: int, particles: np.ndarray) -> np.ndarray:
        if self.phi_batch is not None:
            vals = np.asarray(self.phi_batch(sensor_id, k, particles), dtype=float)
        else:
            vals = np.array([self.phi(sensor_id, k, p) for p in particles], dtype=float)
        if vals.min(initial=0.0) < 0.0 or vals.max(initial=0.0) > 1.0:
            raise ContractViolationError(
                f"fault prior for sensor {sensor_id} returned values outside [0, 1]"
            )
        return vals


@dataclass(frozen=True)
class SensorReading:
    """One reading from one sensor at one step.

    `truth_faulty` is the simulation ground-truth tag; it exists only for
    scoring and is never visible to the filter. `kind` and `link` are
    optional routing metadata used by the traffic harness.
    """

    sensor_id: str
    value: np.ndarray
    truth_faulty: Optional[bool] = None
    kind: Optional[str] = None
    link: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "value", np.atleast_1d(np.asarray(self.value, dtype=float)))


@dataclass(frozen=True)
class MeasurementBatch:
    """All readings received at one time step."""

    time: int
    readings: tuple[SensorReading, ...]

    def __post_init__(self):
        object.__setattr__(self, "readings", tuple(self.readings))
        ids = [r.sensor_id for r in self.readings]
        if len(set(ids)) != len(ids):
            raise ContractViolationError(f"duplicate sensor_ids in batch at k={self.time}")


@dataclass(frozen=True)
class ParticleEnsemble:
    """Weighted set of P particles approximating a state distribution.

    Weights are nonnegative; they sum to 1 after `normalize_weights`, and
    every filtering operation both requires and restores that invariant.
    """

    particles: np.ndarray  # (P, N)
    weights: np.ndarray  # (P,)

    def __post_init__(self):
        particles = np.asarray(self.particles, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if particles.ndim != 2:
            raise ContractViolationError("particles must be a (P, N) array")
        if weights.shape != (particles.shape[0],):
            raise ContractViolationError("weights must have shape (P,)")
        if particles.shape[0] < 1:
            raise ContractViolationError("ensemble needs at least one particle")
        if np.any(weights < 0.0) or not np.all(np.isfinite(weights)):
            raise ContractViolationError("weights must be finite and nonnegative")
        object.__setattr__(self, "particles", particles)
        object.__setattr__(self, "weights", weights)

    @property
    def count(self) -> int:
        return self.particles.shape[0]

    @property
    def state_dim(self) -> int:
        return self.particles.shape[1]

    def is_normalized(self, tol: float = WEIGHT_SUM_TOL) -> bool:
        return abs(float(self.weights.sum()) - 1.0) <= tol

    def require_normalized(self, op: str) -> None:
        if not self.is_normalized():
            raise ContractViolationError(
                f"{op} requires normalized weights (sum={float(self.weights.sum())!r})"
            )

    @classmethod
    def uniform(cls, particles: np.ndarray) -> "ParticleEnsemble":
        particles = np.asarray(particles, dtype=float)
        P = particles.shape[0]
        return cls(particles=particles, weights=np.full(P, 1.0 / P))


def sample_transition(
    model: TransitionModel, state: StateVector, stream: RandomStream
) -> StateVector:
    """Draw one successor state from the transition kernel."""
    state = np.asarray(state, dtype=float)
    if state.shape != (model.state_dim,):
        raise ContractViolationError(
            f"state has shape {state.shape}, model expects ({model.state_dim},)"
        )
    out = np.asarray(model.sampler(state, stream), dtype=float)
    if out.shape != (model.state_dim,):
        raise ContractViolationError(
            f"sampler returned shape {out.shape}, expected ({model.state_dim},)"
        )
    return out


def density_nonfaulty(model: SensorModel, reading: np.ndarray, state: StateVector) -> float:
    """Evaluate the sensor's non-fault density at `reading` for one state."""
    val = model.density(reading, state)
    if not np.isfinite(val) or val < 0.0:
        raise ContractViolationError(
            f"sensor {model.sensor_id} density returned invalid value {val!r}"
        )
    return val


def normalize_weights(ensemble: ParticleEnsemble) -> ParticleEnsemble:
    """Rescale weights to sum to 1, preserving proportions.

    Already-normalized input is returned unchanged, which makes the
    operation idempotent bit-for-bit.
    """
    total = float(ensemble.weights.sum())
    if total <= 0.0:
        raise DegenerateEnsembleError(
            "all particle weights are zero; measurements and prior have no overlap"
        )
    if abs(total - 1.0) <= _ALREADY_NORMALIZED_TOL:
        return ensemble
    return ParticleEnsemble(particles=ensemble.particles, weights=ensemble.weights / total)


def effective_sample_size(ensemble: ParticleEnsemble) -> float:
    """ESS = 1 / sum(w^2); P for uniform weights, 1 for a point mass."""
    ensemble.require_normalized("effective_sample_size")
    return float(1.0 / np.sum(ensemble.weights**2))
