"""Stochastic cell-transmission dynamics for a freeway corridor.

The corridor is a chain of links exchanging flows through demand/supply
minimums. Link speeds are normalized as CFL ratios (speed * dt / length),
which makes the update unconditionally stable and keeps the dynamics free
of an explicit timestep; physical speeds are recovered as v = q / (rho*dt).

Randomness enters only through onramp and upstream boundary demands, drawn
per step from `RampFlowModel`; given those draws the update is exact and
conserves vehicles to floating-point accuracy.

All flow computations broadcast over a leading batch axis, so one call
propagates either a single ground-truth state or a whole particle block.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import ContractViolationError
from .rng import RandomStream
from .ssm import TransitionModel

__all__ = [
    "LinkParams",
    "Corridor",
    "CtmState",
    "DemandProfile",
    "RampFlowModel",
    "interlink_flow",
    "merge_supply_split",
    "ctm_step",
    "ctm_step_batch",
    "link_speed",
    "speed_field",
    "make_ctm_transition",
]


@dataclass(frozen=True)
class LinkParams:
    """Static parameters of one link.

    vf_norm and w_norm are the freeflow and congestion-wave CFL ratios
    (speed * dt / length); vf_norm in (0, 1] and w_norm in (0, 1) keep the
    update stable and densities inside [0, rho_jam]. offramp_split is the
    fraction of the link's total outflow diverted to its offramp.
    """

    length: float  # m
    vf_norm: float
    w_norm: float
    qmax: float  # veh per step
    rho_jam: float  # veh/m
    onramp: bool = False
    offramp_split: float = 0.0

    def __post_init__(self):
        problems = []
        if self.length <= 0:
            problems.append("length must be positive")
        if not 0.0 < self.vf_norm <= 1.0:
            problems.append(f"vf_norm {self.vf_norm} outside (0, 1]")
        if not 0.0 < self.w_norm < 1.0:
            problems.append(f"w_norm {self.w_norm} outside (0, 1)")
        if self.qmax <= 0:
            problems.append("qmax must be positive")
        if self.rho_jam <= 0:
            problems.append("rho_jam must be positive")
        if not 0.0 <= self.offramp_split < 1.0:
            problems.append(f"offramp_split {self.offramp_split} outside [0, 1)")
        if problems:
            raise ContractViolationError("; ".join(problems))


class Corridor:
    """A chain of links with per-link parameter arrays for vectorized math."""

    def __init__(self, links: Sequence[LinkParams]):
        if not links:
            raise ContractViolationError("corridor needs at least one link")
        self.links = tuple(links)
        self.n_links = len(self.links)
        self.length = np.array([l.length for l in self.links])
        self.vf_norm = np.array([l.vf_norm for l in self.links])
        self.w_norm = np.array([l.w_norm for l in self.links])
        self.qmax = np.array([l.qmax for l in self.links])
        self.rho_jam = np.array([l.rho_jam for l in self.links])
        self.beta = np.array([l.offramp_split for l in self.links])
        self.onramp_mask = np.array([l.onramp for l in self.links])
        self.onramp_links = tuple(int(i) for i in np.nonzero(self.onramp_mask)[0])

    def freeflow_speed(self, dt: float) -> np.ndarray:
        """Physical freeflow speed per link, m/s."""
        return self.vf_norm * self.length / dt

    def check_state(self, rho: np.ndarray) -> None:
        if rho.shape[-1] != self.n_links:
            raise ContractViolationError(
                f"state has {rho.shape[-1]} links, corridor has {self.n_links}"
            )


@dataclass(frozen=True)
class CtmState:
    """Link densities (veh/m) at one time step."""

    densities: np.ndarray
    time: int = 0

    def __post_init__(self):
        rho = np.atleast_1d(np.asarray(self.densities, dtype=float))
        if rho.ndim != 1:
            raise ContractViolationError("densities must be a 1-D vector")
        if np.any(rho < 0.0) or not np.all(np.isfinite(rho)):
            raise ContractViolationError("densities must be finite and nonnegative")
        object.__setattr__(self, "densities", rho)


@dataclass(frozen=True)
class DemandProfile:
    """Piecewise-linear mean demand (veh/step) by time of day."""

    times_hr: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.times_hr) != len(self.values) or not self.times_hr:
            raise ContractViolationError("profile needs matching, nonempty knot lists")
        if any(b <= a for a, b in zip(self.times_hr, self.times_hr[1:])):
            raise ContractViolationError("profile times must be strictly increasing")
        if any(v < 0 for v in self.values):
            raise ContractViolationError("profile values must be nonnegative")

    def mean_at(self, k: int, dt: float) -> float:
        return float(np.interp(k * dt / 3600.0, self.times_hr, self.values))


@dataclass(frozen=True)
class RampFlowModel:
    """Random onramp and upstream boundary demand draws.

    Demands are Gaussian around the profile mean, clipped to stay
    nonnegative; onramp demands are additionally capped at the declared
    ramp capacity.
    """

    boundary: DemandProfile
    onramps: Mapping[int, DemandProfile]  # by link index
    boundary_noise: float = 0.0  # veh/step std
    onramp_noise: float = 0.0
    ramp_capacity: float = np.inf

    def expected_onramp_demand(self, corridor: Corridor, k: int, dt: float) -> np.ndarray:
        """Mean onramp demand per link (zero where there is no onramp)."""
        demand = np.zeros(corridor.n_links)
        for link, profile in self.onramps.items():
            demand[link] = min(profile.mean_at(k, dt), self.ramp_capacity)
        return demand

    def sample_demands(
        self, corridor: Corridor, k: int, dt: float, stream: RandomStream, batch: int
    ) -> tuple[np.ndarray, np.ndarray]:
        """Draw (onramp_demand (batch, L), boundary_demand (batch,)) for step k."""
        gen = stream.generator()
        boundary_mean = self.boundary.mean_at(k, dt)
        boundary = np.clip(
            boundary_mean + self.boundary_noise * gen.standard_normal(batch), 0.0, None
        )
        onramp = np.zeros((batch, corridor.n_links))
        for link in sorted(self.onramps):
            mean = self.onramps[link].mean_at(k, dt)
            draws = mean + self.onramp_noise * gen.standard_normal(batch)
            onramp[:, link] = np.clip(draws, 0.0, self.ramp_capacity)
        return onramp, boundary


def interlink_flow(
    rho_up: float, rho_down: float, up: LinkParams, down: LinkParams
) -> float:
    """Flow across a plain junction: min(upstream demand, capacity, downstream supply)."""
    if not 0.0 <= rho_up <= up.rho_jam or not 0.0 <= rho_down <= down.rho_jam:
        raise ContractViolationError("densities must lie within [0, rho_jam]")
    demand = min(up.vf_norm * rho_up * up.length, up.qmax)
    supply = down.w_norm * down.length * (down.rho_jam - rho_down)
    return max(min(demand, supply), 0.0)


def merge_supply_split(
    supply: float, mainline_demand: float, onramp_demand: float
) -> tuple[float, float]:
    """Allocate downstream supply between mainline and onramp demands.

    Both are fully served when they fit; otherwise the supply is split in
    proportion to the demands. Replaces a full junction model; it is the
    simplest allocation that conserves vehicles and never overfills the
    receiving link.
    """
    if supply < 0 or mainline_demand < 0 or onramp_demand < 0:
        raise ContractViolationError("merge arguments must be nonnegative")
    total = mainline_demand + onramp_demand
    if total <= supply or total == 0.0:
        return mainline_demand, onramp_demand
    scale = supply / total
    return mainline_demand * scale, onramp_demand * scale


def _corridor_flows(
    rho: np.ndarray,
    corridor: Corridor,
    onramp_demand: np.ndarray,
    boundary_demand: np.ndarray,
) -> dict[str, np.ndarray]:
    """All realized flows for one step, broadcasting over a batch axis.

    Returns mainline inflow per link (boundary inflow for link 0), onramp
    inflow, mainline outflow, and offramp outflow, each shaped like rho.
    """
    demand_total = np.minimum(corridor.vf_norm * rho * corridor.length, corridor.qmax)
    demand_main = (1.0 - corridor.beta) * demand_total
    supply = corridor.w_norm * corridor.length * (corridor.rho_jam - rho)

    # Demand arriving at each link's upstream junction.
    arriving = np.concatenate(
        [boundary_demand[..., None], demand_main[..., :-1]], axis=-1
    )
    ramp_demand = np.where(corridor.onramp_mask, onramp_demand, 0.0)

    total = arriving + ramp_demand
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(total > supply, np.where(total > 0, supply / total, 0.0), 1.0)
    inflow_main = arriving * scale
    onramp_flow = ramp_demand * scale

    # Outflow of link l equals the inflow accepted by link l+1; the last
    # link discharges freely at its own demand.
    outflow_main = np.concatenate(
        [inflow_main[..., 1:], demand_main[..., -1:]], axis=-1
    )
    with np.errstate(divide="ignore", invalid="ignore"):
        offramp_flow = np.where(
            corridor.beta > 0,
            outflow_main * corridor.beta / (1.0 - corridor.beta),
            0.0,
        )
    return {
        "inflow_main": inflow_main,
        "onramp": onramp_flow,
        "outflow_main": outflow_main,
        "offramp": offramp_flow,
    }


def ctm_step_batch(
    rho: np.ndarray,
    corridor: Corridor,
    onramp_demand: np.ndarray,
    boundary_demand: np.ndarray,
) -> np.ndarray:
    """Advance a (batch, L) density block one step given demand draws."""
    corridor.check_state(rho)
    flows = _corridor_flows(rho, corridor, onramp_demand, boundary_demand)
    net = (
        flows["inflow_main"]
        + flows["onramp"]
        - flows["outflow_main"]
        - flows["offramp"]
    )
    rho_next = rho + net / corridor.length
    # Exact bounds hold analytically; clipping only absorbs last-ulp rounding.
    return np.clip(rho_next, 0.0, corridor.rho_jam)


def ctm_step(
    state: CtmState,
    corridor: Corridor,
    onramp_demand: np.ndarray,
    boundary_demand: float,
) -> CtmState:
    """Advance one ground-truth state given this step's demand draws."""
    onramp_demand = np.asarray(onramp_demand, dtype=float)
    if onramp_demand.shape != (corridor.n_links,):
        raise ContractViolationError(
            f"onramp_demand has shape {onramp_demand.shape}, "
            f"expected ({corridor.n_links},)"
        )
    rho_next = ctm_step_batch(
        state.densities[None, :],
        corridor,
        onramp_demand[None, :],
        np.asarray([boundary_demand], dtype=float),
    )[0]
    return CtmState(densities=rho_next, time=state.time + 1)


def step_flows(
    rho: np.ndarray,
    corridor: Corridor,
    onramp_demand: np.ndarray,
    boundary_demand: np.ndarray,
) -> dict[str, np.ndarray]:
    """Public view of the realized flows (used for speeds and accounting)."""
    corridor.check_state(rho)
    return _corridor_flows(rho, corridor, onramp_demand, boundary_demand)


def link_speed(rho: float, q_out: float, params: LinkParams, dt: float) -> float:
    """Physical speed (m/s) implied by a link's density and total outflow.

    v = q / (rho * dt), capped at the freeflow speed; an empty link moves
    at freeflow by convention, a blocked one (q = 0, rho > 0) stands still.
    """
    if rho < 0:
        raise ContractViolationError("rho must be nonnegative")
    vf = params.vf_norm * params.length / dt
    if rho == 0.0:
        return vf
    return float(np.clip(q_out / (rho * dt), 0.0, vf))


def speed_field(
    rho: np.ndarray,
    corridor: Corridor,
    dt: float,
    onramp_demand: Optional[np.ndarray] = None,
    boundary_demand: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Per-link speeds implied by a density state (batched).

    Computes the flows the densities would produce this step and converts
    the total outflow of each link to a speed. Onramp demands matter only
    through merge competition for downstream supply; pass the expected
    demands when evaluating a model-implied speed, or realized flows are
    available via `step_flows` for the ground truth.
    """
    corridor.check_state(rho)
    if onramp_demand is None:
        onramp_demand = np.zeros_like(rho)
    if boundary_demand is None:
        boundary_demand = np.zeros(rho.shape[:-1])
    flows = _corridor_flows(rho, corridor, onramp_demand, boundary_demand)
    return speeds_from_flows(rho, flows, corridor, dt)


def speeds_from_flows(
    rho: np.ndarray,
    flows: dict[str, np.ndarray],
    corridor: Corridor,
    dt: float,
) -> np.ndarray:
    """Convert realized flows to per-link speeds (m/s)."""
    total_out = flows["outflow_main"] + flows["offramp"]
    vf = corridor.vf_norm * corridor.length / dt
    with np.errstate(divide="ignore", invalid="ignore"):
        v = np.where(rho > 0.0, total_out / (rho * dt), vf)
    return np.clip(v, 0.0, vf)


def make_ctm_transition(
    corridor: Corridor, ramps: RampFlowModel, dt: float
) -> TransitionModel:
    """Bundle the corridor dynamics as a sample-only transition kernel.

    The batch propagator draws one demand block per (stream, step) and is
    what the filter uses; the per-particle sampler draws from the fully
    indexed stream address and exists for the generic single-state
    contract.
    """

    def propagate_batch(particles: np.ndarray, stream: RandomStream) -> np.ndarray:
        onramp, boundary = ramps.sample_demands(
            corridor, stream.k, dt, stream, particles.shape[0]
        )
        return ctm_step_batch(particles, corridor, onramp, boundary)

    def sampler(state: np.ndarray, stream: RandomStream) -> np.ndarray:
        onramp, boundary = ramps.sample_demands(corridor, stream.k, dt, stream, 1)
        return ctm_step_batch(state[None, :], corridor, onramp, boundary)[0]

    return TransitionModel(
        state_dim=corridor.n_links, sampler=sampler, propagate_batch=propagate_batch
    )
