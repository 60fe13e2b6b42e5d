"""Tree builders, trait simulation, and the convergence experiments.

Simulation is seeded per edge: every edge derives its own Gaussian stream
from (seed, stream tag, stable edge key), where the key is the child node's
label when present and its structural address otherwise.  Extending a tree
by attaching new subtrees therefore never perturbs existing increments, and
replicate r always consumes draw r of each stream.  This gives bit-identical
nested simulations (the construction behind the convergence trajectories)
and common random numbers across sample sizes for free.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky, solve_triangular, LinAlgError

from .covariance import bm_covariance, scaled_ess_pruning
from .errors import ConfigError, TreeError
from .tree import PhyloTree

__all__ = [
    "SymmetricTreeSpec",
    "ReplicationSpec",
    "ConvergenceConfig",
    "ConvergenceReport",
    "PhasePoint",
    "star_tree",
    "random_tree",
    "make_symmetric_tree",
    "make_replicated_tree",
    "symmetric_intercept_variance",
    "replicated_intercept_variance",
    "phase_transition_curve",
    "power_law_slope",
    "log_corrected_slope",
    "simulate_bm",
    "simulate_traits",
    "convergence_experiment",
]


# --------------------------------------------------------------------- #
# tree builders
# --------------------------------------------------------------------- #


def star_tree(n: int, edge: float = 1.0, prefix: str = "t") -> PhyloTree:
    """Star tree: n tips attached to the root, all edges equal (i.i.d. case)."""
    if n < 1:
        raise TreeError("star tree needs at least one tip")
    parent = [-1] + [0] * n
    edges = [0.0] + [float(edge)] * n
    names = ["root"] + [f"{prefix}{i + 1}" for i in range(n)]
    return PhyloTree(parent, edges, names)


@dataclass(frozen=True)
class SymmetricTreeSpec:
    """Level-homogeneous tree: level i nodes have d_i children at edge t_i."""

    d: tuple[int, ...]
    t: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "d", tuple(int(x) for x in self.d))
        object.__setattr__(self, "t", tuple(float(x) for x in self.t))
        if len(self.d) == 0 or len(self.d) != len(self.t):
            raise ConfigError("d and t must be nonempty and of equal length")
        if any(x < 2 for x in self.d):
            raise ConfigError("all level counts must be >= 2")
        if any(x <= 0 for x in self.t):
            raise ConfigError("all level lengths must be positive")

    @property
    def m(self) -> int:
        return len(self.d)

    @property
    def n_tips(self) -> int:
        return math.prod(self.d)


@dataclass(frozen=True)
class ReplicationSpec:
    """Root-replication family: d-fold splits, proportion q kept at the root.

    Implied level lengths: t_1 = q^(m-1), t_i = (1-q) q^(m-i) for i >= 2;
    they sum to 1, so the tree height is 1.  The variance decay rate of the
    root-state estimate switches regimes at q = 1/d.
    """

    d: int
    q: float
    m: int

    def __post_init__(self):
        if self.d < 2:
            raise ConfigError("d must be >= 2")
        if not 0.0 < self.q < 1.0:
            raise ConfigError("q must be in (0, 1)")
        if self.m < 1:
            raise ConfigError("m must be >= 1")

    def lengths(self) -> tuple[float, ...]:
        m, q = self.m, self.q
        out = [q ** (m - 1)]
        out.extend((1.0 - q) * q ** (m - i) for i in range(2, m + 1))
        return tuple(out)

    @property
    def alpha(self) -> float:
        """ln(q)/ln(d), the variance decay exponent in the slow regime."""
        return math.log(self.q) / math.log(self.d)


def make_symmetric_tree(spec: SymmetricTreeSpec) -> PhyloTree:
    """Materialize a symmetric tree; nodes carry stable path-based names."""
    parent = [-1]
    edges = [0.0]
    names: list = ["root"]
    level_nodes = [0]
    paths = {0: ""}
    for lvl, (d, t) in enumerate(zip(spec.d, spec.t)):
        is_last = lvl == spec.m - 1
        nxt = []
        for u in level_nodes:
            for j in range(d):
                idx = len(parent)
                parent.append(u)
                edges.append(t)
                path = f"{paths[u]}-{j}" if paths[u] else str(j)
                paths[idx] = path
                names.append(("t" if is_last else "n") + path)
                nxt.append(idx)
        level_nodes = nxt
    return PhyloTree(parent, edges, names)


def make_replicated_tree(spec: ReplicationSpec) -> PhyloTree:
    """Symmetric tree with uniform splits d and root-replication lengths."""
    return make_symmetric_tree(
        SymmetricTreeSpec(d=(spec.d,) * spec.m, t=spec.lengths())
    )


def symmetric_intercept_variance(d, t) -> float:
    """(1'V^{-1}1)^{-1} of the symmetric tree: sum of t_i / (d_1 ... d_i)."""
    spec = SymmetricTreeSpec(tuple(d), tuple(t))
    acc = 0.0
    prod = 1.0
    for di, ti in zip(spec.d, spec.t):
        prod *= di
        acc += ti / prod
    return acc


def replicated_intercept_variance(d: int, q: float, m: int) -> float:
    """Closed-form root-state variance for the replication family."""
    return symmetric_intercept_variance((d,) * m, ReplicationSpec(d, q, m).lengths())


def random_tree(
    n: int, seed: int, ultrametric: bool = False, polytomy_prob: float = 0.0
) -> PhyloTree:
    """Random rooted tree by successive coalescence of lineages.

    ``ultrametric=True`` places all tips at the same height (contemporaneous
    sampling); otherwise edges are drawn independently.  ``polytomy_prob``
    merges three lineages instead of two with that probability.
    """
    if n < 1:
        raise TreeError("need at least one tip")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    parent = [-1] * (2 * n)  # generous preallocation, trimmed at the end
    edges = [0.0] * (2 * n)
    names: list = [None] * (2 * n)
    for i in range(n):
        names[i] = f"t{i + 1}"
    used = n

    if n == 1:
        return PhyloTree([-1, 0], [0.0, float(rng.uniform(0.5, 1.5))], ["root", "t1"])

    lineages = list(range(n))
    height = {i: 0.0 for i in range(n)}
    now = 0.0
    while len(lineages) > 1:
        k = len(lineages)
        merge = 3 if (k > 2 and rng.random() < polytomy_prob) else 2
        now += float(rng.exponential(2.0 / (k * (k - 1))))
        picks = sorted(rng.choice(k, size=merge, replace=False))
        nodes = [lineages[i] for i in picks]
        for i in reversed(picks):
            lineages.pop(i)
        u = used
        used += 1
        height[u] = now
        for c in nodes:
            parent[c] = u
            edges[c] = (
                now - height[c]
                if ultrametric
                else float(rng.uniform(0.05, 1.0))
            )
        lineages.append(u)
    root = lineages[0]
    keep = list(range(used))
    names[root] = "root"
    return PhyloTree(
        [parent[i] for i in keep], [edges[i] for i in keep], [names[i] for i in keep]
    )


# --------------------------------------------------------------------- #
# seeded simulation
# --------------------------------------------------------------------- #

_STREAM_BM = 0
_STREAM_COVARIATES = 1
_STREAM_NOISE = 2


def _edge_keys(tree: PhyloTree) -> list[str]:
    """Stable per-node stream key: label if named, structural address else."""
    keys = [""] * tree.n_nodes
    child_pos = [0] * tree.n_nodes
    for u in tree.postorder[::-1]:  # preorder
        u = int(u)
        p = int(tree.parent[u])
        name = tree.names[u]
        if name is not None:
            keys[u] = "#" + name
        elif p < 0:
            keys[u] = "@"
        else:
            pos = tree.children[p].index(u)
            keys[u] = f"{keys[p]}.{pos}"
    return keys


def _edge_rng(seed: int, stream: int, key: str) -> np.random.Generator:
    digest = hashlib.blake2b(key.encode(), digest_size=8).digest()
    key_int = int.from_bytes(digest, "big")
    ss = np.random.SeedSequence([int(seed), int(stream), key_int])
    return np.random.Generator(np.random.PCG64(ss))


def simulate_bm(tree: PhyloTree, mu: float, sigma2: float, seed: int, reps=None):
    """Brownian tip values: root state ``mu``, per-edge variance sigma2 * t.

    Returns shape (n,) or (reps, n) in canonical tip order; bit-reproducible
    under ``seed`` and stable under tree extension (per-edge streams).
    """
    values = _bm_node_values(tree, sigma2, seed, _STREAM_BM, reps)
    tips = list(tree.tip_ids)
    out = mu + values[tips]
    return out[:, 0] if reps is None else out.T


def _bm_node_values(tree, sigma2, seed, stream, reps, n_columns=1, mixer=None):
    """Per-node BM states, zero at the root; shape (n_nodes, R * n_columns)."""
    if sigma2 <= 0:
        raise ConfigError("sigma2 must be positive")
    R = 1 if reps is None else int(reps)
    if R < 1:
        raise ConfigError("reps must be >= 1")
    keys = _edge_keys(tree)
    n_nodes = tree.n_nodes
    vals = np.zeros((n_nodes, R * n_columns))
    order = tree.postorder[::-1]  # preorder: parents first
    for u in order:
        u = int(u)
        p = int(tree.parent[u])
        if p < 0:
            continue
        t = float(tree.edge_length[u])
        rng = _edge_rng(seed, stream, keys[u])
        z = rng.standard_normal((R, n_columns))
        if mixer is not None:
            z = z @ mixer.T
        inc = math.sqrt(sigma2 * t) * z if t > 0 else np.zeros((R, n_columns))
        vals[u] = vals[p] + inc.reshape(-1)
    return vals


def simulate_traits(
    tree: PhyloTree,
    beta,
    Sigma,
    sigma2: float,
    seed: int,
    reps=None,
    mu_x=None,
):
    """Correlated Brownian covariates plus a linear response.

    Covariate columns accumulate covariance t * Sigma per edge of length t;
    the response is Y = 1 b0 + X b1 + eps with eps an independent Brownian
    noise of rate ``sigma2``.  Returns (X, Y) with shapes (n, q), (n,) or,
    with ``reps``, (reps, n, q), (reps, n).
    """
    beta = np.asarray(beta, dtype=float).ravel()
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    q = Sigma.shape[0]
    if Sigma.shape != (q, q) or q < 1:
        raise ConfigError("Sigma must be a square nonempty matrix")
    if beta.shape[0] != q + 1:
        raise ConfigError(f"beta must have {q + 1} entries (intercept first)")
    try:
        L = cholesky(Sigma, lower=True)
    except LinAlgError:
        raise ConfigError("Sigma must be symmetric positive definite") from None

    R = 1 if reps is None else int(reps)
    n = tree.n_tips
    tips = list(tree.tip_ids)

    xv = _bm_node_values(
        tree, 1.0, seed, _STREAM_COVARIATES, R, n_columns=q, mixer=L
    )
    X = xv[tips].reshape(n, R, q).transpose(1, 0, 2)
    if mu_x is not None:
        X = X + np.asarray(mu_x, dtype=float).reshape(1, 1, q)

    ev = _bm_node_values(tree, sigma2, seed, _STREAM_NOISE, R)
    eps = ev[tips].reshape(n, R).T

    Y = beta[0] + np.einsum("rnq,q->rn", X, beta[1:]) + eps
    if reps is None:
        return X[0], Y[0]
    return X, Y


# --------------------------------------------------------------------- #
# phase transition (root replication)
# --------------------------------------------------------------------- #


@dataclass(frozen=True)
class PhasePoint:
    m: int
    n: int
    var_closed: float
    var_pruning: float | None


def phase_transition_curve(
    d: int, q: float, m_max: int, pruning_limit: int = 2 ** 16
) -> list[PhasePoint]:
    """Root-state variance along the replication family, m = 1..m_max.

    Emits the closed form for every m and, while n = d^m stays within
    ``pruning_limit``, the single-traversal value on the materialized tree;
    the two agree to tight tolerance.
    """
    if m_max < 1:
        raise ConfigError("m_max must be >= 1")
    out = []
    for m in range(1, m_max + 1):
        spec = ReplicationSpec(d, q, m)
        n = d ** m
        vc = replicated_intercept_variance(d, q, m)
        vp = None
        if n <= pruning_limit:
            tree = make_replicated_tree(spec)
            vp = 1.0 / scaled_ess_pruning(tree)
        out.append(PhasePoint(m=m, n=n, var_closed=vc, var_pruning=vp))
    return out


def power_law_slope(ns, values) -> float:
    """Least-squares slope of ln(value) against ln(n)."""
    x = np.log(np.asarray(ns, dtype=float))
    y = np.log(np.asarray(values, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


def log_corrected_slope(ns, values) -> float:
    """Least-squares slope of ln(n * value) against ln(ln n)."""
    ns = np.asarray(ns, dtype=float)
    values = np.asarray(values, dtype=float)
    x = np.log(np.log(ns))
    y = np.log(ns * values)
    return float(np.polyfit(x, y, 1)[0])


# --------------------------------------------------------------------- #
# convergence experiment
# --------------------------------------------------------------------- #


@dataclass(frozen=True)
class ConvergenceConfig:
    """Growing-family experiment configuration.

    Families (both nested, fixed root):

    * ``star``: n tips attached to the root at the full height (i.i.d.).
    * ``fixed_root``: two root edges of length ``root_edge``; half the tips
      attach below each at the remaining height.  The root-state variance
      then cannot drop below sigma2 * root_edge / 2.

    ``beta`` is (intercept, covariate effects...); covariates evolve as
    independent unit-rate Brownian motions.
    """

    family: str
    sizes: tuple[int, ...]
    beta: tuple[float, ...]
    sigma2: float = 1.0
    root_edge: float = 0.25
    height: float = 1.0
    reps: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.family not in ("star", "fixed_root"):
            raise ConfigError(
                f"unknown family {self.family!r}; nested families are "
                "'star' and 'fixed_root'"
            )
        sizes = tuple(int(s) for s in self.sizes)
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        if not sizes or any(b >= a for a, b in zip(sizes[1:], sizes)):
            raise ConfigError("sizes must be strictly increasing")
        if self.family == "fixed_root":
            if any(s % 2 for s in sizes):
                raise ConfigError("fixed_root sizes must be even")
            if not 0 < self.root_edge < self.height:
                raise ConfigError("need 0 < root_edge < height")
        if self.sigma2 <= 0:
            raise ConfigError("sigma2 must be positive")
        if self.reps < 2:
            raise ConfigError("reps must be >= 2")
        if len(self.beta) < 1:
            raise ConfigError("beta must include the intercept")

    @property
    def n_covariates(self) -> int:
        return len(self.beta) - 1

    def to_text(self) -> str:
        lines = [
            f"family={self.family}",
            "sizes=" + ",".join(str(s) for s in self.sizes),
            "beta=" + ",".join(repr(b) for b in self.beta),
            f"sigma2={self.sigma2!r}",
            f"root_edge={self.root_edge!r}",
            f"height={self.height!r}",
            f"reps={self.reps}",
            f"seed={self.seed}",
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ConvergenceConfig":
        kv = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"expected key=value, got {line!r}", location=lineno)
            key, value = line.split("=", 1)
            kv[key.strip()] = value.strip()
        try:
            config = cls(
                family=kv.pop("family"),
                sizes=tuple(int(s) for s in kv.pop("sizes").split(",")),
                beta=tuple(float(b) for b in kv.pop("beta").split(",")),
                sigma2=float(kv.pop("sigma2", "1.0")),
                root_edge=float(kv.pop("root_edge", "0.25")),
                height=float(kv.pop("height", "1.0")),
                reps=int(kv.pop("reps", "1000")),
                seed=int(kv.pop("seed", "0")),
            )
        except KeyError as exc:
            raise ConfigError(f"missing config key {exc.args[0]!r}") from None
        except ValueError as exc:
            raise ConfigError(f"bad config value: {exc}") from None
        if kv:
            raise ConfigError(f"unknown config keys: {sorted(kv)}")
        return config


@dataclass(frozen=True)
class ConvergenceReport:
    """Variance-vs-n table, trajectory increments, and sample paths."""

    config: ConvergenceConfig
    components: tuple[str, ...]
    variance_rows: tuple[tuple[int, str, float, float], ...]
    floor_intercept: float | None
    increment_rows: tuple[tuple[int, int, str, float], ...]
    sample_paths: dict

    def variance_table(self) -> list[dict]:
        return [
            {"n": n, "component": c, "mc_var": v, "theory": t}
            for (n, c, v, t) in self.variance_rows
        ]

    def variance_csv(self) -> str:
        lines = ["n,component,mc_var,theory"]
        lines += [
            f"{n},{c},{v:.17g},{t:.17g}" for (n, c, v, t) in self.variance_rows
        ]
        return "\n".join(lines) + "\n"

    def increment_csv(self) -> str:
        lines = ["n_from,n_to,component,mean_abs_delta"]
        lines += [
            f"{a},{b},{c},{d:.17g}" for (a, b, c, d) in self.increment_rows
        ]
        return "\n".join(lines) + "\n"


def family_tree(config: ConvergenceConfig, n: int) -> PhyloTree:
    """The size-n member of the configured nested family."""
    if config.family == "star":
        return star_tree(n, edge=config.height, prefix="s")
    half = n // 2
    t, h = config.root_edge, config.height
    parent = [-1, 0, 0]
    edges = [0.0, t, t]
    names: list = ["root", "L", "R"]
    for i in range(half):
        parent.append(1)
        edges.append(h - t)
        names.append(f"l{i + 1}")
    for i in range(half):
        parent.append(2)
        edges.append(h - t)
        names.append(f"r{i + 1}")
    return PhyloTree(parent, edges, names)


def convergence_experiment(config: ConvergenceConfig) -> ConvergenceReport:
    """Refit the model along the nested family, one shared realization.

    Per-edge seeding extends the same realization as n grows, so replicate r
    traces one path of the estimator; the report carries Monte Carlo
    variances against their finite-sample references, mean absolute
    trajectory increments (which shrink as estimates settle), and a few
    sample paths.
    """
    q = config.n_covariates
    comps = ("intercept",) + tuple(f"x{j + 1}" for j in range(q))
    p = 1 + q
    beta = np.asarray(config.beta)
    Sigma = np.eye(q) if q else None

    betas_by_n = {}
    theory_by_n = {}
    for n in config.sizes:
        tree = family_tree(config, n)
        if q:
            X, Y = simulate_traits(
                tree, beta, Sigma, config.sigma2, config.seed, reps=config.reps
            )
        else:
            X = np.zeros((config.reps, n, 0))
            Y = beta[0] + np.asarray(
                simulate_bm(tree, 0.0, config.sigma2, config.seed, reps=config.reps)
            )
        est = _batched_gls(tree, X, Y)
        betas_by_n[n] = est

        s = scaled_ess_pruning(tree)
        th = [config.sigma2 / s]
        if q:
            denom = n - q - 2
            slope_var = config.sigma2 / denom if denom > 0 else math.inf
            th.extend([slope_var] * q)
        theory_by_n[n] = th

    variance_rows = []
    for n in config.sizes:
        est = betas_by_n[n]
        for j, comp in enumerate(comps):
            variance_rows.append(
                (n, comp, float(est[:, j].var(ddof=1)), float(theory_by_n[n][j]))
            )

    increment_rows = []
    for a, b in zip(config.sizes, config.sizes[1:]):
        delta = np.abs(betas_by_n[b] - betas_by_n[a])
        for j, comp in enumerate(comps):
            increment_rows.append((a, b, comp, float(delta[:, j].mean())))

    n_paths = min(8, config.reps)
    sample_paths = {
        comp: [
            [float(betas_by_n[n][r, j]) for n in config.sizes]
            for r in range(n_paths)
        ]
        for j, comp in enumerate(comps)
    }

    if config.family == "fixed_root":
        floor = config.sigma2 * config.root_edge / 2.0
    else:
        floor = None

    return ConvergenceReport(
        config=config,
        components=comps,
        variance_rows=tuple(variance_rows),
        floor_intercept=floor,
        increment_rows=tuple(increment_rows),
        sample_paths=sample_paths,
    )


def _batched_gls(tree: PhyloTree, X_stack: np.ndarray, Y_stack: np.ndarray):
    """GLS coefficient estimates for stacked replicates on one tree.

    Whiten once with the Cholesky factor of V, then solve the per-replicate
    normal equations in a single batched call.  X_stack holds covariates
    only; the intercept column is prepended here.
    """
    R, n, q = X_stack.shape
    V = bm_covariance(tree)
    L = cholesky(V, lower=True)
    ones_w = solve_triangular(L, np.ones(n), lower=True)
    Xw = solve_triangular(
        L, X_stack.transpose(1, 0, 2).reshape(n, R * q), lower=True
    ).reshape(n, R, q).transpose(1, 0, 2) if q else np.zeros((R, n, 0))
    Yw = solve_triangular(L, Y_stack.T, lower=True).T
    D = np.concatenate([np.broadcast_to(ones_w[None, :, None], (R, n, 1)), Xw], axis=2)
    G = np.einsum("rnp,rnq->rpq", D, D)
    b = np.einsum("rnp,rn->rp", D, Yw)
    return np.linalg.solve(G, b[:, :, None])[:, :, 0]
