"""Particle filtering with per-sensor fault screening.

Each step runs: (1) prediction through the transition kernel; (2) for every
reporting sensor, a particle estimate of the measurement density under the
non-fault hypothesis, evaluated at the received reading; (3) a significance
test that rejects the sensor when that density falls below the threshold
alpha; (4) a Bayesian weight update using only the surviving sensors; and
(5) ESS-triggered systematic resampling.

The screening test needs no model of faulty behavior: a reading landing
where the non-fault predictive density is below alpha is rejected no matter
what produced it. All sensors are tested against the same predicted
ensemble, never against a partially updated posterior.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from typing import Deque, Mapping, Optional, Sequence

import numpy as np

from .errors import (
    ContractViolationError,
    DegenerateEnsembleError,
    NoValidSupportError,
    ParticleInvalidError,
    UnregisteredSensorError,
)
from .rng import RandomStream
from .ssm import (
    FaultPrior,
    MeasurementBatch,
    ParticleEnsemble,
    SensorModel,
    StateVector,
    TransitionModel,
    effective_sample_size,
    normalize_weights,
    sample_transition,
)

__all__ = [
    "DetectorConfig",
    "FaultDecision",
    "FilterState",
    "predict",
    "nonfault_density",
    "test_sensor",
    "update",
    "resample",
    "step",
    "posterior_mean",
]


@dataclass(frozen=True)
class DetectorConfig:
    """Detector and filter settings.

    alpha is the significance level of the screening test: the maximum
    acceptable probability of rejecting a sensor that is operating
    correctly. alpha = 0.0 is allowed as an explicit "never reject"
    setting used by accept-all baseline runs.
    """

    alpha: float
    particle_count: int
    fault_prior: FaultPrior
    resample_threshold: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.alpha < 1.0:
            raise ContractViolationError(f"alpha {self.alpha} outside [0, 1)")
        if self.particle_count < 1:
            raise ContractViolationError("particle_count must be >= 1")
        if not 0.0 < self.resample_threshold <= 1.0:
            raise ContractViolationError(
                f"resample_threshold {self.resample_threshold} outside (0, 1]"
            )


@dataclass(frozen=True)
class FaultDecision:
    """Outcome of the screening test for one reading.

    density_value is the particle estimate of the non-fault measurement
    density at the observed reading; normalizer is the estimated prior
    probability that this sensor is non-faulty. `undecidable` marks
    sensors whose fault prior was zero on every particle: the density is
    undefined there and the sensor is rejected.
    """

    sensor_id: str
    time: int
    density_value: float
    rejected: bool
    normalizer: float
    undecidable: bool = False


@dataclass(frozen=True)
class FilterState:
    """Filter posterior at time k plus a log of past fault decisions.

    The decision history is an append-only ring buffer shared across the
    states of one filter run (step() is single-writer); bound its length
    with `history_limit` in service-style deployments.
    """

    ensemble: ParticleEnsemble
    time: int = 0
    history: Deque[FaultDecision] = field(default_factory=deque, compare=False)

    @classmethod
    def initial(
        cls,
        ensemble: ParticleEnsemble,
        time: int = 0,
        history_limit: Optional[int] = None,
    ) -> "FilterState":
        return cls(ensemble=ensemble, time=time, history=deque(maxlen=history_limit))


def predict(
    state: FilterState, model: TransitionModel, stream: RandomStream
) -> FilterState:
    """Propagate every particle one step; weights carry over unchanged.

    The proposal is the transition prior, so prior weights remain the
    correct importance weights after propagation.
    """
    state.ensemble.require_normalized("predict")
    k_next = state.time + 1
    particles = state.ensemble.particles

    if model.propagate_batch is not None:
        block_stream = stream.substream(purpose=f"{stream.purpose}/predict", k=k_next)
        propagated = np.asarray(model.propagate_batch(particles, block_stream), dtype=float)
        if propagated.shape != particles.shape:
            raise ContractViolationError(
                f"propagate_batch returned shape {propagated.shape}, "
                f"expected {particles.shape}"
            )
    else:
        propagated = np.empty_like(particles)
        for p in range(particles.shape[0]):
            sub = stream.substream(purpose=f"{stream.purpose}/predict", k=k_next, index=p)
            propagated[p] = sample_transition(model, particles[p], sub)

    bad = ~np.all(np.isfinite(propagated), axis=1)
    if np.any(bad):
        raise ParticleInvalidError(int(np.argmax(bad)))

    ensemble = ParticleEnsemble(particles=propagated, weights=state.ensemble.weights)
    return replace(state, ensemble=ensemble, time=k_next)


def nonfault_density(
    state: FilterState,
    model: SensorModel,
    prior: FaultPrior,
    reading: np.ndarray,
) -> tuple[float, float]:
    """Particle estimate of the non-fault measurement density at `reading`.

    Returns (density_value, normalizer) where

        density_value = sum_p g(y | x_p) phi(x_p) w_p / sum_p phi(x_p) w_p
        normalizer    = sum_p phi(x_p) w_p

    The estimate is a phi-weighted mixture of the per-particle observation
    densities, i.e. a kernel-density-style estimate whose kernels are the
    sensor's own noise densities centered on each particle's predicted
    reading.

    Raises NoValidSupportError when the normalizer is zero (the prior
    asserts certain fault everywhere); callers must treat the sensor as
    undecidable and reject it.
    """
    state.ensemble.require_normalized("nonfault_density")
    particles = state.ensemble.particles
    weights = state.ensemble.weights

    phi = prior.evaluate_batch(model.sensor_id, state.time, particles)
    phi_w = phi * weights
    normalizer = float(phi_w.sum())
    if normalizer <= 0.0:
        raise NoValidSupportError(
            f"sensor {model.sensor_id} at k={state.time}: fault prior is zero on "
            "every particle"
        )

    g = np.exp(model.log_density_batch(reading, particles))
    density_value = float(np.dot(g, phi_w) / normalizer)
    return density_value, normalizer


def test_sensor(density_value: float, config: DetectorConfig) -> bool:
    """True (reject as faulty) iff the density falls strictly below alpha.

    Ties at exactly alpha are accepted: rejection requires strict evidence.
    """
    if density_value < 0.0:
        raise ContractViolationError(f"density_value {density_value} is negative")
    return density_value < config.alpha


def update(
    state: FilterState,
    accepted: Sequence[tuple[SensorModel, np.ndarray]],
) -> FilterState:
    """Bayesian weight update with the accepted sensors' readings.

    New weights are proportional to w_p * prod_j g_j(y_j | x_p). The
    product is accumulated in log scale so that many simultaneous sensors
    cannot underflow it. An empty accepted list leaves weights unchanged.
    """
    state.ensemble.require_normalized("update")
    if not accepted:
        return state

    particles = state.ensemble.particles
    with np.errstate(divide="ignore"):
        log_w = np.log(state.ensemble.weights)
    for model, reading in accepted:
        log_w = log_w + model.log_density_batch(reading, particles)

    peak = float(np.max(log_w))
    if not np.isfinite(peak):
        raise DegenerateEnsembleError(
            f"all posterior weights are zero at k={state.time}"
        )
    weights = np.exp(log_w - peak)
    ensemble = normalize_weights(
        ParticleEnsemble(particles=particles, weights=weights)
    )
    return replace(state, ensemble=ensemble)


def resample(
    state: FilterState, config: DetectorConfig, stream: RandomStream
) -> FilterState:
    """Systematic resampling when ESS falls below threshold * P.

    The expected copy count of particle p is P * w_p, exact to within one
    copy under the systematic scheme. Above the threshold the state is
    returned unchanged.
    """
    state.ensemble.require_normalized("resample")
    P = state.ensemble.count
    if effective_sample_size(state.ensemble) >= config.resample_threshold * P:
        return state

    gen = stream.substream(purpose=f"{stream.purpose}/resample", k=state.time).generator()
    offset = gen.random()
    positions = (np.arange(P) + offset) / P
    cumulative = np.cumsum(state.ensemble.weights)
    cumulative[-1] = 1.0  # guard against rounding shortfall
    indices = np.searchsorted(cumulative, positions)

    ensemble = ParticleEnsemble(
        particles=state.ensemble.particles[indices],
        weights=np.full(P, 1.0 / P),
    )
    return replace(state, ensemble=ensemble)


def step(
    state: FilterState,
    batch: MeasurementBatch,
    transition: TransitionModel,
    sensors: Mapping[str, SensorModel],
    config: DetectorConfig,
    stream: RandomStream,
) -> tuple[FilterState, list[FaultDecision]]:
    """One full predict / screen / update / resample cycle.

    Every reading is screened against the same predicted ensemble; the
    update then uses exactly the non-rejected readings. Returns the new
    state and one FaultDecision per reading, in batch order.
    """
    if batch.time != state.time + 1:
        raise ContractViolationError(
            f"batch time {batch.time} does not follow filter time {state.time}"
        )
    for reading in batch.readings:
        if reading.sensor_id not in sensors:
            raise UnregisteredSensorError(reading.sensor_id)

    new_state = predict(state, transition, stream)

    decisions: list[FaultDecision] = []
    accepted: list[tuple[SensorModel, np.ndarray]] = []
    for reading in batch.readings:
        model = sensors[reading.sensor_id]
        try:
            density_value, normalizer = nonfault_density(
                new_state, model, config.fault_prior, reading.value
            )
            rejected = test_sensor(density_value, config)
            undecidable = False
        except NoValidSupportError:
            density_value, normalizer = 0.0, 0.0
            rejected = True
            undecidable = True
        decisions.append(
            FaultDecision(
                sensor_id=reading.sensor_id,
                time=batch.time,
                density_value=density_value,
                rejected=rejected,
                normalizer=normalizer,
                undecidable=undecidable,
            )
        )
        if not rejected:
            accepted.append((model, reading.value))

    new_state = update(new_state, accepted)
    new_state = resample(new_state, config, stream)
    new_state.history.extend(decisions)
    return new_state, decisions


def posterior_mean(state: FilterState) -> StateVector:
    """Weighted mean of the posterior particle distribution."""
    state.ensemble.require_normalized("posterior_mean")
    return state.ensemble.weights @ state.ensemble.particles
