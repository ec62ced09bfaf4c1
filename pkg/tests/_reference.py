"""Slow pure-Python re-implementation of the step rule, used as an
independent oracle.  It consumes the RNG in exactly the same order as the
production kernel, so trajectories must match bit for bit on any network.
"""

import math

import numpy as np

from borrownet.dynamics import AgentState, SimState
from borrownet.network import Network


def reference_step(state: SimState, network: Network, params, p_int: float, rng) -> dict:
    status = state.status
    recover_at = state.recover_at
    inact = state.inactive_neighbors
    t = state.clock
    n = network.n_agents
    r_int = r_ext = 0
    for i in range(n):
        st = int(status[i])
        if st != AgentState.ACTIVE and recover_at[i] <= t:
            if st == AgentState.FAILED_INTRINSIC:
                r_int += 1
            else:
                r_ext += 1
            status[i] = AgentState.ACTIVE
            for j in network.neighbors(i):
                inact[j] -= 1

    frozen = inact.copy()
    new: list[tuple[int, int]] = []
    for i in range(n):
        if status[i] != AgentState.ACTIVE:
            continue
        if rng.random() < p_int:
            new.append((i, int(AgentState.FAILED_INTRINSIC)))
        else:
            deg = network.indptr[i + 1] - network.indptr[i]
            if deg > 0 and frozen[i] > params.t_h * deg:
                if rng.random() < params.p_ext:
                    new.append((i, int(AgentState.FAILED_EXTRINSIC)))

    f_int = f_ext = 0
    for i, kind in new:
        status[i] = kind
        tau = int(math.ceil(params.tau0 + params.sigma * rng.standard_exponential()))
        tau = max(tau, 1)
        recover_at[i] = t + tau
        if kind == AgentState.FAILED_INTRINSIC:
            f_int += 1
        else:
            f_ext += 1
        for j in network.neighbors(i):
            inact[j] += 1

    state.clock = t + 1
    n_int = int(np.count_nonzero(status == AgentState.FAILED_INTRINSIC))
    n_ext = int(np.count_nonzero(status == AgentState.FAILED_EXTRINSIC))
    degs = network.degrees
    crit = int(np.count_nonzero((degs > 0) & (inact > params.t_h * degs)))
    return {
        "active": n - n_int - n_ext,
        "failed_int": n_int,
        "failed_ext": n_ext,
        "events_int": f_int,
        "events_ext": f_ext,
        "recoveries_int": r_int,
        "recoveries_ext": r_ext,
        "critical": crit,
    }
