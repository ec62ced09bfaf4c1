"""Deterministic task fan-out over a process pool.

Results are returned in task order, so parallel and serial execution
produce identical output.  On Linux the pool forks, which lets workers
inherit anything already placed in the module-level network cache.
"""

from concurrent.futures import ProcessPoolExecutor

from .network import NetworkConfig, Network, build_hierarchy

_NETWORK_CACHE: dict[NetworkConfig, Network] = {}


def cached_network(config: NetworkConfig) -> Network:
    """Build (or reuse) the network for a config; keyed by the config itself."""
    config = config.resolved()
    net = _NETWORK_CACHE.get(config)
    if net is None:
        net = build_hierarchy(config)
        _NETWORK_CACHE[config] = net
    return net


def run_tasks(fn, tasks, workers: int = 1, chunksize: int = 1):
    tasks = list(tasks)
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, tasks, chunksize=chunksize))
