"""Stochastic cascade dynamics on a borrower network.

One time-step is one day.  Within a step, recoveries happen first, then
every active agent fails intrinsically with probability p_int(t); an
active agent that escaped the intrinsic coin and whose fraction of
inactive neighbors strictly exceeds t_h fails extrinsically with
probability p_ext.  Failure decisions are evaluated against neighbor
statuses frozen after the recovery phase, so the update is synchronous.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .network import Network

__all__ = [
    "AgentState",
    "SimParams",
    "ForcingSchedule",
    "SimState",
    "StepRecord",
    "Trajectory",
    "sample_recovery_time",
    "init_state",
    "step",
    "advance",
    "run",
    "critical_neighborhood_prob",
]

TRAJECTORY_COLUMNS = ("t", "f", "n_int", "n_ext", "F_int", "F_ext", "R_int", "R_ext", "E")


def as_rng(seed_or_rng) -> np.random.Generator:
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)


def spawn_rng(master_seed: int, *key: int) -> np.random.Generator:
    """Generator for a (master seed, index...) coordinate, scheduling-independent."""
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), *map(int, key)]))


class AgentState(enum.IntEnum):
    ACTIVE = _kernels.STATUS_ACTIVE
    FAILED_INTRINSIC = _kernels.STATUS_INT
    FAILED_EXTRINSIC = _kernels.STATUS_EXT


@dataclass(frozen=True)
class SimParams:
    """Model parameters: threshold, extrinsic probability, recovery times.

    tau0 is the minimum recovery time in days; sigma is both the standard
    deviation and the mean of the exponential recovery component, so the
    mean recovery time is tau_bar = tau0 + sigma.
    """

    t_h: float
    p_ext: float
    tau0: float
    sigma: float

    def __post_init__(self):
        if not (0.0 <= self.t_h <= 1.0):
            raise ValueError(f"t_h must lie in [0,1], got {self.t_h}")
        if not (0.0 <= self.p_ext <= 1.0):
            raise ValueError(f"p_ext must lie in [0,1], got {self.p_ext}")
        if self.tau0 < 0:
            raise ValueError(f"tau0 must be >= 0, got {self.tau0}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")

    @property
    def tau_bar(self) -> float:
        return self.tau0 + self.sigma


@dataclass(frozen=True)
class ForcingSchedule:
    """Per-step intrinsic failure probabilities, clipped to [0,1]."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.clip(np.asarray(self.values, dtype=np.float64), 0.0, 1.0)
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return int(self.values.size)

    def __getitem__(self, t: int) -> float:
        return float(self.values[t])

    @classmethod
    def constant(cls, p_int: float, horizon: int) -> "ForcingSchedule":
        return cls(np.full(int(horizon), p_int))

    @classmethod
    def ramp(cls, rate: float, horizon: int, base: float = 0.0) -> "ForcingSchedule":
        """Triangle forcing: rises at ``rate`` per step through the first
        half of the horizon and falls at the same rate through the second."""
        if rate <= 0:
            raise ValueError(f"ramp rate must be positive, got {rate}")
        t = np.arange(int(horizon), dtype=np.float64)
        return cls(base + rate * np.minimum(t, horizon - t))

    @classmethod
    def from_values(cls, values) -> "ForcingSchedule":
        return cls(np.asarray(values, dtype=np.float64).copy())


def sample_recovery_time(tau0: float, sigma: float, rng, size: int | None = None):
    """Recovery delay tau0 + Exp(mean sigma), rounded up to >= 1 whole step."""
    if tau0 < 0 or sigma < 0:
        raise ValueError("tau0 and sigma must be non-negative")
    rng = as_rng(rng)
    delta = rng.standard_exponential(size=size)
    tau = np.ceil(tau0 + sigma * delta)
    tau = np.maximum(tau, 1.0)
    if size is None:
        return int(tau)
    return tau.astype(np.int64)


@dataclass
class SimState:
    """Mutable per-agent simulation state plus the clock."""

    clock: int
    status: np.ndarray  # int8
    recover_at: np.ndarray  # int64, meaningful where status != ACTIVE
    inactive_neighbors: np.ndarray  # int64 cache

    @property
    def n_agents(self) -> int:
        return int(self.status.size)

    @property
    def counts(self) -> tuple[int, int, int]:
        """(active, failed intrinsic, failed extrinsic) agent counts."""
        n_int = int(np.count_nonzero(self.status == AgentState.FAILED_INTRINSIC))
        n_ext = int(np.count_nonzero(self.status == AgentState.FAILED_EXTRINSIC))
        return (self.n_agents - n_int - n_ext, n_int, n_ext)

    @property
    def fraction_active(self) -> float:
        return self.counts[0] / self.n_agents

    def agent_status(self, i: int) -> tuple[AgentState, int | None]:
        st = AgentState(int(self.status[i]))
        return (st, None if st is AgentState.ACTIVE else int(self.recover_at[i]))

    def validate(self, network: Network) -> None:
        """Recompute the inactive-neighbor cache and compare."""
        fresh = _kernels.recount_inactive_neighbors(
            network.indptr, network.indices, self.status
        )
        if not np.array_equal(fresh, self.inactive_neighbors):
            raise AssertionError("inactive-neighbor cache out of sync")

    def copy(self) -> "SimState":
        return SimState(
            clock=self.clock,
            status=self.status.copy(),
            recover_at=self.recover_at.copy(),
            inactive_neighbors=self.inactive_neighbors.copy(),
        )


def init_state(
    network: Network,
    inactive_fraction: float,
    params: SimParams,
    rng,
) -> SimState:
    """Initial state with a uniformly chosen set of intrinsically failed agents.

    The failed agents receive recovery times drawn the same way as during
    the simulation, measured from clock 0.
    """
    if not (0.0 <= inactive_fraction <= 1.0):
        raise ValueError(f"inactive_fraction must lie in [0,1], got {inactive_fraction}")
    rng = as_rng(rng)
    n = network.n_agents
    # Guard against float underestimation of an exact product.
    k = int(math.floor(inactive_fraction * n + 1e-9))
    status = np.zeros(n, dtype=np.int8)
    recover_at = np.zeros(n, dtype=np.int64)
    if k > 0:
        chosen = rng.choice(n, size=k, replace=False)
        status[chosen] = AgentState.FAILED_INTRINSIC
        recover_at[chosen] = sample_recovery_time(params.tau0, params.sigma, rng, size=k)
    inact = _kernels.recount_inactive_neighbors(network.indptr, network.indices, status)
    return SimState(clock=0, status=status, recover_at=recover_at, inactive_neighbors=inact)


@dataclass(frozen=True)
class StepRecord:
    active: int
    failed_int: int
    failed_ext: int
    events_int: int
    events_ext: int
    recoveries_int: int
    recoveries_ext: int
    critical_prob: float


@dataclass
class Trajectory:
    """Per-step records of one run.

    ``active``, ``failed_int`` and ``failed_ext`` are post-step agent
    counts (so conservation is exact on integers); the event arrays count
    failures and recoveries inside each step; ``critical_prob`` is the
    fraction of agents with a critically inactive neighborhood at the end
    of the step; ``p_int`` echoes the applied forcing.
    """

    n_agents: int
    active: np.ndarray
    failed_int: np.ndarray
    failed_ext: np.ndarray
    events_int: np.ndarray
    events_ext: np.ndarray
    recoveries_int: np.ndarray
    recoveries_ext: np.ndarray
    critical_prob: np.ndarray
    p_int: np.ndarray

    @property
    def horizon(self) -> int:
        return int(self.active.size)

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.horizon)

    @property
    def f(self) -> np.ndarray:
        return self.active / self.n_agents

    @property
    def n_int(self) -> np.ndarray:
        return self.failed_int / self.n_agents

    @property
    def n_ext(self) -> np.ndarray:
        return self.failed_ext / self.n_agents

    def validate(self) -> None:
        """Conservation and per-cause flow balance, exact on counts."""
        total = self.active + self.failed_int + self.failed_ext
        if not np.all(total == self.n_agents):
            raise AssertionError("f + n_int + n_ext != 1 somewhere")
        # cumulative failures - cumulative recoveries == current inactive count
        bal_int = np.cumsum(self.events_int) - np.cumsum(self.recoveries_int)
        bal_ext = np.cumsum(self.events_ext) - np.cumsum(self.recoveries_ext)
        start_int = self.failed_int[0] - self.events_int[0] + self.recoveries_int[0]
        start_ext = self.failed_ext[0] - self.events_ext[0] + self.recoveries_ext[0]
        if not np.all(start_int + bal_int == self.failed_int):
            raise AssertionError("intrinsic flow balance violated")
        if not np.all(start_ext + bal_ext == self.failed_ext):
            raise AssertionError("extrinsic flow balance violated")

    def tail_mean_f(self, frac: float = 0.25) -> float:
        k = max(1, int(self.horizon * frac))
        return float(self.f[-k:].mean())

    def to_csv(self, path, extra_header: tuple[str, ...] = ()) -> None:
        with open(path, "w") as fh:
            for line in extra_header:
                fh.write(f"# {line}\n")
            fh.write(",".join(TRAJECTORY_COLUMNS) + "\n")
            n = self.n_agents
            for s in range(self.horizon):
                fh.write(
                    f"{s},{float(self.active[s] / n)!r},{float(self.failed_int[s] / n)!r},"
                    f"{float(self.failed_ext[s] / n)!r},{self.events_int[s]},{self.events_ext[s]},"
                    f"{self.recoveries_int[s]},{self.recoveries_ext[s]},"
                    f"{float(self.critical_prob[s])!r}\n"
                )


def _run_kernel(state: SimState, network: Network, params: SimParams, sched: np.ndarray, rng):
    horizon = sched.size
    out = {
        name: np.empty(horizon, dtype=np.int64)
        for name in ("active", "nint", "next", "fint", "fext", "rint", "rext")
    }
    crit = np.empty(horizon, dtype=np.int64)
    _kernels.run_steps(
        network.indptr,
        network.indices,
        state.status,
        state.recover_at,
        state.inactive_neighbors,
        state.clock,
        np.ascontiguousarray(sched, dtype=np.float64),
        params.p_ext,
        params.t_h,
        float(params.tau0),
        float(params.sigma),
        rng,
        out["active"],
        out["nint"],
        out["next"],
        out["fint"],
        out["fext"],
        out["rint"],
        out["rext"],
        crit,
    )
    state.clock += horizon
    return out, crit


def step(state: SimState, network: Network, params: SimParams, p_int_now: float, rng) -> StepRecord:
    """One synchronous update; mutates ``state`` and advances its clock."""
    rng = as_rng(rng)
    out, crit = _run_kernel(state, network, params, np.array([p_int_now]), rng)
    return StepRecord(
        active=int(out["active"][0]),
        failed_int=int(out["nint"][0]),
        failed_ext=int(out["next"][0]),
        events_int=int(out["fint"][0]),
        events_ext=int(out["fext"][0]),
        recoveries_int=int(out["rint"][0]),
        recoveries_ext=int(out["rext"][0]),
        critical_prob=float(crit[0]) / network.n_agents,
    )


def advance(
    state: SimState,
    network: Network,
    params: SimParams,
    forcing: ForcingSchedule | float,
    horizon: int,
    rng,
) -> Trajectory:
    """Advance ``state`` by ``horizon`` steps and record a trajectory."""
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    rng = as_rng(rng)
    if isinstance(forcing, (int, float)):
        sched = np.full(horizon, float(forcing))
    else:
        if len(forcing) < state.clock + horizon:
            raise ValueError(
                f"forcing covers {len(forcing)} steps, need {state.clock + horizon}"
            )
        sched = forcing.values[state.clock : state.clock + horizon]
    out, crit = _run_kernel(state, network, params, sched, rng)
    traj = Trajectory(
        n_agents=network.n_agents,
        active=out["active"],
        failed_int=out["nint"],
        failed_ext=out["next"],
        events_int=out["fint"],
        events_ext=out["fext"],
        recoveries_int=out["rint"],
        recoveries_ext=out["rext"],
        critical_prob=crit / network.n_agents,
        p_int=np.asarray(sched, dtype=np.float64).copy(),
    )
    traj.validate()
    return traj


def run(
    network: Network,
    params: SimParams,
    forcing: ForcingSchedule | float,
    horizon: int,
    initial_inactive_fraction: float = 0.0,
    rng=None,
) -> Trajectory:
    """Simulate ``horizon`` steps from a fresh initial state.

    Identical (network, params, forcing, seed) give identical trajectories.
    """
    rng = as_rng(rng)
    state = init_state(network, initial_inactive_fraction, params, rng)
    return advance(state, network, params, forcing, horizon, rng)


def critical_neighborhood_prob(state: SimState, network: Network, t_h: float) -> float:
    """Fraction of all agents whose inactive-neighbor fraction exceeds t_h.

    Degree-0 agents are never critical.
    """
    degs = network.degrees
    crit = (degs > 0) & (state.inactive_neighbors > t_h * degs)
    return float(np.count_nonzero(crit)) / network.n_agents
