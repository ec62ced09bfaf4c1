"""Numba kernels for the per-step cascade dynamics.

Status codes: 0 active, 1 failed intrinsically, 2 failed extrinsically.
An agent i is critical when inact[i] > t_h * degree(i) (strict), with
degree-0 agents never critical.

RNG draw order per step (the pure-Python reference in the test suite
mirrors it exactly):
  1. recovery pass, agents in index order (no draws);
  2. failure pass, agents in index order: one uniform per active agent
     for the intrinsic coin, then one more for the extrinsic coin only
     if the agent survived the intrinsic coin and is critical;
  3. one standard exponential per newly failed agent, in index order.
"""

import numpy as np
from numba import njit

STATUS_ACTIVE = 0
STATUS_INT = 1
STATUS_EXT = 2


@njit(cache=True)
def recount_inactive_neighbors(indptr, indices, status):
    n = status.size
    counts = np.zeros(n, dtype=np.int64)
    for i in range(n):
        if status[i] != STATUS_ACTIVE:
            for k in range(indptr[i], indptr[i + 1]):
                counts[indices[k]] += 1
    return counts


@njit(cache=True)
def count_critical(indptr, inact, t_h):
    n = inact.size
    ncrit = 0
    for i in range(n):
        deg = indptr[i + 1] - indptr[i]
        if deg > 0 and inact[i] > t_h * deg:
            ncrit += 1
    return ncrit


@njit(cache=True)
def run_steps(
    indptr,
    indices,
    status,
    recover_at,
    inact,
    clock0,
    p_int_sched,
    p_ext,
    t_h,
    tau0,
    sigma,
    rng,
    out_active,
    out_nint,
    out_next,
    out_fint,
    out_fext,
    out_rint,
    out_rext,
    out_crit,
):
    """Advance the state by len(p_int_sched) synchronous steps in place.

    Per step: recoveries first, then failures evaluated against the
    post-recovery counts frozen at the start of the failure phase, then
    recovery-time assignment for the new failures.  Output arrays record
    the post-step state and the event counts of each step.
    """
    n = status.size
    horizon = p_int_sched.size
    n_active = 0
    n_int = 0
    n_ext = 0
    for i in range(n):
        if status[i] == STATUS_ACTIVE:
            n_active += 1
        elif status[i] == STATUS_INT:
            n_int += 1
        else:
            n_ext += 1
    new_agent = np.empty(n, dtype=np.int64)
    new_kind = np.empty(n, dtype=np.int8)

    for s in range(horizon):
        t = clock0 + s
        p_int = p_int_sched[s]
        r_int = 0
        r_ext = 0
        for i in range(n):
            st = status[i]
            if st != STATUS_ACTIVE and recover_at[i] <= t:
                if st == STATUS_INT:
                    r_int += 1
                    n_int -= 1
                else:
                    r_ext += 1
                    n_ext -= 1
                status[i] = STATUS_ACTIVE
                n_active += 1
                for k in range(indptr[i], indptr[i + 1]):
                    inact[indices[k]] -= 1

        # Failure decisions read the frozen post-recovery counts; the
        # count updates are applied only after all decisions are made.
        n_new = 0
        f_int = 0
        f_ext = 0
        for i in range(n):
            if status[i] != STATUS_ACTIVE:
                continue
            if rng.random() < p_int:
                new_agent[n_new] = i
                new_kind[n_new] = STATUS_INT
                n_new += 1
                f_int += 1
            else:
                deg = indptr[i + 1] - indptr[i]
                if deg > 0 and inact[i] > t_h * deg:
                    if rng.random() < p_ext:
                        new_agent[n_new] = i
                        new_kind[n_new] = STATUS_EXT
                        n_new += 1
                        f_ext += 1

        for m in range(n_new):
            i = new_agent[m]
            kind = new_kind[m]
            status[i] = kind
            tau = int(np.ceil(tau0 + sigma * rng.standard_exponential()))
            if tau < 1:
                tau = 1
            recover_at[i] = t + tau
            n_active -= 1
            if kind == STATUS_INT:
                n_int += 1
            else:
                n_ext += 1
            for k in range(indptr[i], indptr[i + 1]):
                inact[indices[k]] += 1

        out_active[s] = n_active
        out_nint[s] = n_int
        out_next[s] = n_ext
        out_fint[s] = f_int
        out_fext[s] = f_ext
        out_rint[s] = r_int
        out_rext[s] = r_ext
        out_crit[s] = count_critical(indptr, inact, t_h)
