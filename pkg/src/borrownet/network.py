"""Four-tier hierarchical random graph of borrowers.

Agents are assigned to groups, units and branches by contiguous index
blocks.  Each unordered pair of agents is linked independently with the
connection probability of the closest tier the two agents share: q1 for
the same group, q2 for the same unit but different groups, q3 for the
same branch but different units, and q4 otherwise.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "NetworkConfig",
    "Network",
    "DegreeSummary",
    "TierStats",
    "expected_degree",
    "solve_q4",
    "build_hierarchy",
    "degree_summary",
    "save_network",
    "load_network",
]

TIER_NAMES = ("group", "unit", "branch", "institution")


@dataclass(frozen=True)
class NetworkConfig:
    """Tier sizes, connection probabilities and the construction seed.

    Tier sizes must nest exactly (n1 | n2 | n3 | n4, non-decreasing) and
    the probabilities must satisfy q1 >= q2 >= q3 >= q4.  ``q4=None``
    means "solve from target_degree at build time".
    """

    n1: int
    n2: int
    n3: int
    n4: int
    q1: float
    q2: float
    q3: float
    q4: float | None = None
    target_degree: float | None = None
    seed: int = 0

    def __post_init__(self):
        sizes = (self.n1, self.n2, self.n3, self.n4)
        if any(int(n) != n or n < 1 for n in sizes):
            raise ValueError(f"tier sizes must be positive integers, got {sizes}")
        if not (self.n1 <= self.n2 <= self.n3 <= self.n4):
            raise ValueError(f"tier sizes must be non-decreasing, got {sizes}")
        if self.n2 % self.n1 or self.n3 % self.n2 or self.n4 % self.n3:
            raise ValueError(f"tier sizes must nest exactly (n1|n2|n3|n4), got {sizes}")
        probs = [self.q1, self.q2, self.q3] + ([self.q4] if self.q4 is not None else [])
        if any(not (0.0 <= q <= 1.0) for q in probs):
            raise ValueError(f"connection probabilities must lie in [0,1], got {probs}")
        if not (self.q1 >= self.q2 >= self.q3):
            raise ValueError(
                f"probabilities must be non-increasing, got q1={self.q1}, q2={self.q2}, q3={self.q3}"
            )
        if self.q4 is not None and self.q4 > self.q3:
            warnings.warn(
                f"q4={self.q4} exceeds q3={self.q3}; tier ordering is violated",
                stacklevel=2,
            )

    @property
    def tier_pair_counts(self) -> tuple[int, int, int, int]:
        """Number of unordered agent pairs whose closest shared tier is 1..4."""
        n1, n2, n3, n4 = self.n1, self.n2, self.n3, self.n4
        c1 = n4 // n1 * (n1 * (n1 - 1) // 2)
        c2 = n4 // n2 * (n2 * (n2 - 1) // 2) - c1
        c3 = n4 // n3 * (n3 * (n3 - 1) // 2) - c1 - c2
        c4 = n4 * (n4 - 1) // 2 - c1 - c2 - c3
        return (c1, c2, c3, c4)

    def resolved(self) -> "NetworkConfig":
        """Config with q4 filled in from target_degree if it was unset."""
        if self.q4 is not None:
            return self
        if self.target_degree is None:
            raise ValueError("either q4 or target_degree must be set")
        return replace(self, q4=solve_q4(self, self.target_degree))


def expected_degree(config: NetworkConfig) -> float:
    """Analytic expected number of neighbors of one agent."""
    if config.q4 is None:
        raise ValueError("q4 is unset; call resolved() first")
    n1, n2, n3, n4 = config.n1, config.n2, config.n3, config.n4
    return (
        (n1 - 1) * config.q1
        + (n2 - n1) * config.q2
        + (n3 - n2) * config.q3
        + (n4 - n3) * config.q4
    )


def solve_q4(config: NetworkConfig, target_degree: float | None = None) -> float:
    """Solve the cross-branch probability so the expected degree hits the target.

    Balances (n1-1)q1 + (n2-n1)q2 + (n3-n2)q3 + (n4-n3)q4 = target_degree
    and clips the result to [0,1], warning when clipping occurs.  If the
    within-branch tiers alone already exceed the target, returns 0.
    """
    if target_degree is None:
        target_degree = config.target_degree
    if target_degree is None or target_degree <= 0:
        raise ValueError(f"target_degree must be positive, got {target_degree}")
    n1, n2, n3, n4 = config.n1, config.n2, config.n3, config.n4
    within = (n1 - 1) * config.q1 + (n2 - n1) * config.q2 + (n3 - n2) * config.q3
    if n4 == n3:
        if abs(within - target_degree) > 1e-9:
            warnings.warn(
                f"no cross-branch pairs exist; expected degree is fixed at {within}",
                stacklevel=2,
            )
        return 0.0
    q4 = (target_degree - within) / (n4 - n3)
    if q4 < 0.0:
        warnings.warn(
            f"within-branch tiers give expected degree {within:.4g} > target "
            f"{target_degree:.4g}; q4 clipped to 0",
            stacklevel=2,
        )
        return 0.0
    if q4 > 1.0:
        warnings.warn(f"solved q4={q4:.4g} > 1; clipped to 1", stacklevel=2)
        return 1.0
    return q4


@dataclass(frozen=True)
class Network:
    """Immutable borrower network: block membership plus CSR adjacency.

    ``indices[indptr[i]:indptr[i+1]]`` are the sorted neighbors of agent i.
    """

    n_agents: int
    indptr: np.ndarray  # int64, len n_agents+1
    indices: np.ndarray  # int32, sorted within each agent's slice
    group: np.ndarray
    unit: np.ndarray
    branch: np.ndarray
    config: NetworkConfig | None = None

    @property
    def n_edges(self) -> int:
        return int(self.indices.size // 2)

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i] : self.indptr[i + 1]]

    def edge_array(self) -> np.ndarray:
        """(n_edges, 2) array of edges with i < j, lexicographically sorted."""
        src = np.repeat(np.arange(self.n_agents, dtype=np.int64), self.degrees)
        mask = src < self.indices
        return np.column_stack([src[mask], self.indices[mask].astype(np.int64)])

    def validate(self) -> None:
        """Check symmetry and irreflexivity of the adjacency."""
        src = np.repeat(np.arange(self.n_agents, dtype=np.int64), self.degrees)
        if np.any(src == self.indices):
            raise AssertionError("self-loop found")
        fwd = set(map(tuple, np.column_stack([src, self.indices])))
        for a, b in list(fwd):
            if (b, a) not in fwd:
                raise AssertionError(f"edge ({a},{b}) lacks its reverse")

    @classmethod
    def from_edges(
        cls,
        n_agents: int,
        edges: np.ndarray,
        config: NetworkConfig | None = None,
        membership_sizes: tuple[int, int, int] | None = None,
    ) -> "Network":
        """Build a network from an (m, 2) edge array.

        Membership defaults to the config's block sizes, or to a single
        group/unit/branch when neither is given (ad-hoc test graphs).
        """
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if edges.size and (edges.min() < 0 or edges.max() >= n_agents):
            raise ValueError("edge endpoint out of range")
        if np.any(edges[:, 0] == edges[:, 1]):
            raise ValueError("self-loops are not allowed")
        if membership_sizes is None:
            if config is not None:
                membership_sizes = (config.n1, config.n2, config.n3)
            else:
                membership_sizes = (n_agents, n_agents, n_agents)
        ids = np.arange(n_agents, dtype=np.int64)
        both = np.concatenate([edges, edges[:, ::-1]])
        order = np.lexsort((both[:, 1], both[:, 0]))
        both = both[order]
        counts = np.bincount(both[:, 0], minlength=n_agents)
        indptr = np.zeros(n_agents + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        return cls(
            n_agents=n_agents,
            indptr=indptr,
            indices=both[:, 1].astype(np.int32),
            group=ids // membership_sizes[0],
            unit=ids // membership_sizes[1],
            branch=ids // membership_sizes[2],
            config=config,
        )


def _sample_block_pairs(n_cells: int, q: float, rng: np.random.Generator) -> np.ndarray:
    """Linear indices of the cells kept by independent Bernoulli(q) draws."""
    if q <= 0.0 or n_cells == 0:
        return np.empty(0, dtype=np.int64)
    if q >= 1.0:
        return np.arange(n_cells, dtype=np.int64)
    k = rng.binomial(n_cells, q)
    if k == 0:
        return np.empty(0, dtype=np.int64)
    return rng.choice(n_cells, size=k, replace=False).astype(np.int64)


def build_hierarchy(config: NetworkConfig, seed: int | None = None) -> Network:
    """Sample the hierarchical random graph described by ``config``.

    Deterministic for a fixed seed (the config's seed unless overridden).
    Iterates tier blocks in a fixed order: within-group pairs, group pairs
    inside each unit, unit pairs inside each branch, then branch pairs.
    """
    config = config.resolved()
    if expected_degree(config) > config.n4 - 1 + 1e-9:
        raise ValueError("expected degree exceeds n4 - 1")
    if seed is None:
        seed = config.seed
    rng = np.random.default_rng(seed)
    n1, n2, n3, n4 = config.n1, config.n2, config.n3, config.n4

    chunks: list[np.ndarray] = []

    # Tier 1: pairs inside each group.
    tri_i, tri_j = np.triu_indices(n1, k=1)
    n_cells = tri_i.size
    for g in range(n4 // n1):
        cells = _sample_block_pairs(n_cells, config.q1, rng)
        if cells.size:
            base = g * n1
            chunks.append(np.column_stack([base + tri_i[cells], base + tri_j[cells]]))

    def bipartite(starts_a, starts_b, size, q):
        cells_per_block = size * size
        for a, b in zip(starts_a, starts_b):
            cells = _sample_block_pairs(cells_per_block, q, rng)
            if cells.size:
                rows, cols = np.divmod(cells, size)
                chunks.append(np.column_stack([a + rows, b + cols]))

    # Tier 2: group pairs inside each unit.
    if config.q2 > 0 and n2 > n1:
        per_unit = n2 // n1
        ga, gb = np.triu_indices(per_unit, k=1)
        for u in range(n4 // n2):
            base = u * n2
            bipartite(base + ga * n1, base + gb * n1, n1, config.q2)

    # Tier 3: unit pairs inside each branch.
    if config.q3 > 0 and n3 > n2:
        per_branch = n3 // n2
        ua, ub = np.triu_indices(per_branch, k=1)
        for br in range(n4 // n3):
            base = br * n3
            bipartite(base + ua * n2, base + ub * n2, n2, config.q3)

    # Tier 4: branch pairs.
    if config.q4 > 0 and n4 > n3:
        n_branches = n4 // n3
        ba, bb = np.triu_indices(n_branches, k=1)
        bipartite(ba * n3, bb * n3, n3, config.q4)

    if chunks:
        edges = np.concatenate(chunks)
    else:
        edges = np.empty((0, 2), dtype=np.int64)
    return Network.from_edges(n4, edges, config=config)


@dataclass(frozen=True)
class TierStats:
    tier: int
    name: str
    pairs: int
    probability: float | None
    expected_edges: float | None
    realized_edges: int


@dataclass(frozen=True)
class DegreeSummary:
    mean_degree: float
    min_degree: int
    max_degree: int
    tiers: tuple[TierStats, ...]

    def __str__(self) -> str:
        lines = [
            f"agents with mean degree {self.mean_degree:.3f} "
            f"(min {self.min_degree}, max {self.max_degree})"
        ]
        for t in self.tiers:
            exp = "n/a" if t.expected_edges is None else f"{t.expected_edges:.1f}"
            lines.append(
                f"  tier {t.tier} ({t.name}): {t.realized_edges} edges (expected {exp})"
            )
        return "\n".join(lines)


def degree_summary(network: Network) -> DegreeSummary:
    """Exact degree statistics plus per-tier expected vs realized edge counts."""
    degs = network.degrees
    n = network.n_agents
    mean = 2.0 * network.n_edges / n if n else 0.0
    edges = network.edge_array()
    if edges.size:
        a, b = edges[:, 0], edges[:, 1]
        tier = np.full(a.size, 4, dtype=np.int64)
        tier[network.branch[a] == network.branch[b]] = 3
        tier[network.unit[a] == network.unit[b]] = 2
        tier[network.group[a] == network.group[b]] = 1
        realized = np.bincount(tier, minlength=5)[1:5]
    else:
        realized = np.zeros(4, dtype=np.int64)
    cfg = network.config
    if cfg is not None and cfg.q4 is not None:
        pair_counts = cfg.tier_pair_counts
        probs: tuple[float | None, ...] = (cfg.q1, cfg.q2, cfg.q3, cfg.q4)
    else:
        pair_counts = (0, 0, 0, 0)
        probs = (None, None, None, None)
    tiers = tuple(
        TierStats(
            tier=k + 1,
            name=TIER_NAMES[k],
            pairs=pair_counts[k],
            probability=probs[k],
            expected_edges=None if probs[k] is None else pair_counts[k] * probs[k],
            realized_edges=int(realized[k]),
        )
        for k in range(4)
    )
    return DegreeSummary(
        mean_degree=float(mean),
        min_degree=int(degs.min()) if n else 0,
        max_degree=int(degs.max()) if n else 0,
        tiers=tiers,
    )


_FORMAT_TAG = "borrownet-edges v1"


def save_network(network: Network, path) -> None:
    """Write a replayable plain-text edge list with a config header block."""
    cfg = network.config
    lines = [f"# {_FORMAT_TAG}"]
    if cfg is not None:
        lines.append(f"# n1={cfg.n1} n2={cfg.n2} n3={cfg.n3} n4={cfg.n4}")
        q4 = "auto" if cfg.q4 is None else repr(cfg.q4)
        lines.append(f"# q1={cfg.q1!r} q2={cfg.q2!r} q3={cfg.q3!r} q4={q4}")
        tgt = "none" if cfg.target_degree is None else repr(cfg.target_degree)
        lines.append(f"# target_degree={tgt} seed={cfg.seed}")
    lines.append(f"# agents={network.n_agents} edges={network.n_edges}")
    for a, b in network.edge_array():
        lines.append(f"{a} {b}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_network(path) -> Network:
    """Read a network written by :func:`save_network`."""
    meta: dict[str, str] = {}
    edges: list[tuple[int, int]] = []
    n_agents = None
    with open(path) as fh:
        first = fh.readline().strip()
        if first != f"# {_FORMAT_TAG}":
            raise ValueError(f"unrecognized network file header: {first!r}")
        for lineno, raw in enumerate(fh, start=2):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                for token in line[1:].split():
                    if "=" in token:
                        k, v = token.split("=", 1)
                        meta[k] = v
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"line {lineno}: expected 'i j', got {line!r}")
            edges.append((int(parts[0]), int(parts[1])))
    if "agents" in meta:
        n_agents = int(meta["agents"])
    if n_agents is None:
        raise ValueError("header lacks the agent count")
    config = None
    if all(k in meta for k in ("n1", "n2", "n3", "n4", "q1", "q2", "q3", "q4")):
        config = NetworkConfig(
            n1=int(meta["n1"]),
            n2=int(meta["n2"]),
            n3=int(meta["n3"]),
            n4=int(meta["n4"]),
            q1=float(meta["q1"]),
            q2=float(meta["q2"]),
            q3=float(meta["q3"]),
            q4=None if meta["q4"] == "auto" else float(meta["q4"]),
            target_degree=None if meta.get("target_degree", "none") == "none" else float(meta["target_degree"]),
            seed=int(meta.get("seed", 0)),
        )
    net = Network.from_edges(n_agents, np.array(edges, dtype=np.int64).reshape(-1, 2), config=config)
    if "edges" in meta and net.n_edges != int(meta["edges"]):
        raise ValueError(f"edge count mismatch: header {meta['edges']}, file {net.n_edges}")
    return net
