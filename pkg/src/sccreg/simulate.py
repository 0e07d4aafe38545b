"""Synthetic data generation over a spatial partition, plus bundled fixtures.

The bundled graph is the contiguity graph of the 50 US states plus DC, with
two pragmatic island links (AK-WA, HI-CA) so that partitions with fully
connected clusters exist; boundary point contacts are excluded. Two bundled
three-cluster partitions accompany it: ``disjoint`` (one cluster splits into
an eastern and a western component) and ``contiguous`` (every cluster is one
connected piece). Both are constructed fixtures, not recovered maps.

Per replicate, with a generator seeded by :func:`derive_seed`, draws happen
in this order: one (n, parts) standard-gamma block normalized row-wise into
compositions, one (n, p) uniform block for the plain covariates, one (n,)
standard-normal block scaled to the noise. The response adds the log
compositions times the location's cluster coefficients, the covariate term,
and the noise.
"""

import csv
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .composition import CompositionMatrix, CompositionalDataset
from .errors import InputError
from .graph import SpatialGraph

_ZERO_SUM_TOL = 1e-10


def derive_seed(seed, *key):
    """Deterministic child seed: SeedSequence(entropy=seed, spawn_key=key)."""
    if int(seed) != seed or not 0 <= seed < 2**64:
        raise InputError(f"seed must be an unsigned 64-bit integer, got {seed}")
    for part in key:
        if int(part) != part or part < 0:
            raise InputError(f"seed key parts must be nonnegative integers, got {key}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def sample_dirichlet(alpha, rng, size=None):
    """Dirichlet draws via normalized independent gamma variates."""
    alpha = np.asarray(alpha, dtype=float)
    if alpha.ndim != 1 or alpha.size < 2:
        raise InputError(f"alpha must be a vector with at least 2 parts, got shape {alpha.shape}")
    if not np.all(alpha > 0):
        raise InputError("alpha entries must be positive")
    shape = (alpha.size,) if size is None else (size, alpha.size)
    g = rng.standard_gamma(np.broadcast_to(alpha, shape))
    return g / g.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class SimulationDesign:
    """Ground truth for one simulation study."""

    ids: tuple
    partition: np.ndarray      # labels 1..k per location
    beta_tilde: np.ndarray     # (k, parts), zero-sum rows
    eta: np.ndarray            # (p,)
    dirichlet_alpha: np.ndarray
    x2_low: float
    x2_high: float
    noise_sd: float
    replicates: int
    seed: int

    def __post_init__(self):
        ids = tuple(str(s) for s in self.ids)
        part = np.asarray(self.partition, dtype=np.int64)
        bt = np.asarray(self.beta_tilde, dtype=float)
        eta = np.asarray(self.eta, dtype=float).reshape(-1)
        alpha = np.asarray(self.dirichlet_alpha, dtype=float)
        if part.shape != (len(ids),):
            raise InputError(f"partition has shape {part.shape}, expected ({len(ids)},)")
        k = int(part.max(initial=0))
        if part.min(initial=1) < 1 or np.unique(part).size != k:
            raise InputError("partition labels must cover 1..k with no gaps")
        if bt.ndim != 2 or bt.shape[0] != k:
            raise InputError(f"need one coefficient row per cluster: {bt.shape} vs k={k}")
        if bt.shape[1] != alpha.size:
            raise InputError(
                f"coefficient rows have {bt.shape[1]} parts but alpha has {alpha.size}"
            )
        if np.any(np.abs(bt.sum(axis=1)) > _ZERO_SUM_TOL):
            raise InputError("cluster coefficient rows must each sum to zero")
        if not np.all(alpha > 0):
            raise InputError("alpha entries must be positive")
        if not self.x2_low < self.x2_high:
            raise InputError(f"need x2_low < x2_high, got [{self.x2_low}, {self.x2_high}]")
        if not (self.noise_sd >= 0 and math.isfinite(self.noise_sd)):
            raise InputError(f"noise_sd must be nonnegative and finite, got {self.noise_sd}")
        if int(self.replicates) != self.replicates or self.replicates < 1:
            raise InputError(f"replicates must be a positive integer, got {self.replicates}")
        if int(self.seed) != self.seed or not 0 <= self.seed < 2**64:
            raise InputError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        for a in (part, bt, eta, alpha):
            a.flags.writeable = False
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "partition", part)
        object.__setattr__(self, "beta_tilde", bt)
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "dirichlet_alpha", alpha)
        object.__setattr__(self, "replicates", int(self.replicates))
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def n(self):
        return len(self.ids)

    @property
    def n_clusters(self):
        return self.beta_tilde.shape[0]


@dataclass(frozen=True)
class ReplicateTruth:
    """What generate_dataset actually used for one replicate."""

    replicate_index: int
    seed: int
    z: np.ndarray
    beta_tilde: np.ndarray
    eta: np.ndarray
    noise_sd: float


def generate_dataset(design, replicate_index):
    """One replicate's dataset and its ground truth, deterministic per index."""
    if not 0 <= replicate_index < design.replicates:
        raise InputError(
            f"replicate_index must be in 0..{design.replicates - 1}, got {replicate_index}"
        )
    seed = derive_seed(design.seed, replicate_index)
    rng = np.random.default_rng(seed)
    n, p = design.n, design.eta.shape[0]
    comp = sample_dirichlet(design.dirichlet_alpha, rng, size=n)
    x2 = design.x2_low + (design.x2_high - design.x2_low) * rng.random((n, p))
    eps = design.noise_sd * rng.standard_normal(n)
    z = np.log(comp)
    y = np.einsum("ij,ij->i", z, design.beta_tilde[design.partition - 1])
    if p:
        y = y + x2 @ design.eta
    y = y + eps
    dataset = CompositionalDataset(
        ids=design.ids, y=y, composition=CompositionMatrix(comp), covariates=x2
    )
    truth = ReplicateTruth(
        replicate_index=replicate_index,
        seed=seed,
        z=design.partition.copy(),
        beta_tilde=design.beta_tilde.copy(),
        eta=design.eta.copy(),
        noise_sd=design.noise_sd,
    )
    return dataset, truth


def _data_path(name):
    return resources.files("sccreg").joinpath("data").joinpath(name)


def us_state_graph():
    """Bundled 51-vertex contiguity graph (see module docstring for caveats)."""
    edges = []
    with _data_path("us_state_edges.csv").open() as fh:
        reader = csv.reader(fh)
        header = next(reader)
        assert header == ["src", "dst"]
        edges = [(row[0], row[1]) for row in reader]
    vertices = sorted({v for e in edges for v in e})
    return SpatialGraph.from_edge_list(edges, vertices)


def builtin_partitions():
    """Bundled three-cluster partitions aligned with us_state_graph().labels."""
    graph = us_state_graph()
    out = {}
    for name in ("disjoint", "contiguous"):
        with _data_path(f"partition_{name}.csv").open() as fh:
            reader = csv.reader(fh)
            header = next(reader)
            assert header == ["id", "cluster"]
            mapping = {row[0]: int(row[1]) for row in reader}
        out[name] = np.array([mapping[s] for s in graph.labels], dtype=np.int64)
    return out


_SETTING_ONE_BETA = np.array(
    [
        [1.0, -2.0, 1.0],
        [-4.0, -3.0, 7.0],
        [10.0, -9.0, -1.0],
    ]
)
_SETTING_TWO_BETA = np.array(
    [
        [1.0, 1.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0, -1.0],
        [-2.0, 5.0, -3.0, -2.0, 5.0, -3.0, -3.0, 6.0, -1.0, -2.0],
        [3.0, -3.0, -2.0, 8.0, -4.0, -2.0, 8.0, -2.0, -4.0, -2.0],
    ]
)


def setting_one(partition="disjoint", replicates=100, seed=0):
    """Three-part compositions, three clusters, unit noise, covariates U(-1, 1)."""
    graph = us_state_graph()
    return SimulationDesign(
        ids=graph.labels,
        partition=builtin_partitions()[partition],
        beta_tilde=_SETTING_ONE_BETA,
        eta=np.array([1.0, 2.0, 1.0]),
        dirichlet_alpha=np.array([1.0, 3.0, 6.0]),
        x2_low=-1.0,
        x2_high=1.0,
        noise_sd=1.0,
        replicates=replicates,
        seed=seed,
    )


def setting_two(partition="disjoint", replicates=100, seed=0):
    """Ten-part compositions, three clusters, covariates U(-10, 10)."""
    graph = us_state_graph()
    return SimulationDesign(
        ids=graph.labels,
        partition=builtin_partitions()[partition],
        beta_tilde=_SETTING_TWO_BETA,
        eta=np.array([1.0, 2.0, 1.0]),
        dirichlet_alpha=np.array([1.0, 4.0, 5.0, 3.0, 8.0, 7.0, 1.0, 3.0, 2.0, 6.0]),
        x2_low=-10.0,
        x2_high=10.0,
        noise_sd=1.0,
        replicates=replicates,
        seed=seed,
    )
