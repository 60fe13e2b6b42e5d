"""Tree covariance structures and their quadratic forms.

Two permanent code paths evaluate the forms X'V^{-1}X, X'V^{-1}Y, Y'V^{-1}Y,
1'V^{-1}1 and log det V:

* a dense path factorizing an explicit covariance matrix (the verification
  oracle, also the only path for user-supplied or OU covariances), and
* a single-traversal pruning path for the Brownian structure that runs in
  O(n p^2) time and never materializes V.

Numerical policy: symmetric factorizations fail loudly when a pivot drops
below ``PIVOT_RTOL`` times the largest diagonal entry; nothing is silently
regularized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .errors import SingularCovarianceError, TreeError
from .tree import PhyloTree

PIVOT_RTOL = 1e-12


@dataclass(frozen=True)
class CovarianceSpec:
    """Which covariance structure to put on the tree.

    ``kind`` is one of ``"bm"``, ``"ou-stationary"``, ``"ou-conditioned"``.
    ``alpha`` is the (known) selection strength, used by the OU kinds only.
    ``scale`` multiplies the whole matrix and defaults to 1; the residual
    variance is always estimated on top of it.
    """

    kind: str = "bm"
    alpha: float | None = None
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("bm", "ou-stationary", "ou-conditioned"):
            raise TreeError(f"unknown covariance kind {self.kind!r}")
        if self.kind != "bm":
            if self.alpha is None or self.alpha <= 0:
                raise TreeError("OU covariance requires alpha > 0")
        if not self.scale > 0:
            raise TreeError("scale must be positive")

    @classmethod
    def bm(cls, scale: float = 1.0) -> "CovarianceSpec":
        return cls("bm", None, scale)

    @classmethod
    def ou(cls, alpha: float, stationary: bool = False, scale: float = 1.0):
        kind = "ou-stationary" if stationary else "ou-conditioned"
        return cls(kind, alpha, scale)


@dataclass(frozen=True)
class QuadraticForms:
    """Quadratic forms of a design (X, Y) against a covariance V."""

    xtvix: np.ndarray
    xtviy: np.ndarray
    ytviy: float
    logdet_v: float
    one_tvi_one: float
    n: int


# --------------------------------------------------------------------- #
# covariance matrices
# --------------------------------------------------------------------- #


def bm_covariance(tree: PhyloTree) -> np.ndarray:
    """Brownian covariance: V[i, j] is the shared root-path length of tips i, j.

    Raises :class:`SingularCovarianceError` when two tips occupy the same
    position (zero-length separation), which makes V exactly singular.
    """
    n = tree.n_tips
    depths = tree.depths
    heights = tree.tip_heights
    V = np.zeros((n, n))
    rng = tree.tip_range
    for u in tree.postorder:
        ch = tree.children[u]
        if not ch:
            continue
        du = depths[u]
        spans = [rng[c] for c in ch]
        for a in range(len(ch)):
            la, ha = spans[a]
            for b in range(a + 1, len(ch)):
                lb, hb = spans[b]
                V[la:ha, lb:hb] = du
                V[lb:hb, la:ha] = du
        # Two tips sitting exactly at u (all-zero chains via different
        # children) are fully dependent.
        groups_at_u = sum(
            1
            for (lo, hi) in spans
            if np.any(heights[lo:hi] == du)
        )
        if groups_at_u >= 2:
            raise SingularCovarianceError(
                "two tips occupy the same position (zero-length separation)",
                min_eigenvalue=0.0,
            )
    np.fill_diagonal(V, heights)
    return V


def ou_covariance(tree: PhyloTree, alpha: float, stationary: bool = False) -> np.ndarray:
    """Ornstein-Uhlenbeck covariance with known selection strength ``alpha``.

    ``stationary=True`` gives exp(-alpha * d_ij); otherwise the form
    conditioned on the root state, (1 - exp(-2 alpha t_ij)) exp(-alpha d_ij),
    where d_ij is the tree distance between tips and t_ij their shared
    ancestry time.
    """
    if alpha <= 0:
        raise TreeError("alpha must be positive")
    t_shared = bm_covariance(tree)
    h = tree.tip_heights
    d = h[:, None] + h[None, :] - 2.0 * t_shared
    if stationary:
        return np.exp(-alpha * d)
    return (1.0 - np.exp(-2.0 * alpha * t_shared)) * np.exp(-alpha * d)


def covariance_matrix(tree: PhyloTree, spec: CovarianceSpec) -> np.ndarray:
    """Materialize the covariance matrix described by ``spec``."""
    if spec.kind == "bm":
        V = bm_covariance(tree)
    else:
        V = ou_covariance(tree, spec.alpha, stationary=spec.kind == "ou-stationary")
    if spec.scale != 1.0:
        V = spec.scale * V
    return V


# --------------------------------------------------------------------- #
# dense path
# --------------------------------------------------------------------- #


def _factor_spd(V: np.ndarray, what: str):
    """Cholesky with the package pivot policy; returns (factor, logdet)."""
    try:
        c, low = cho_factor(V, lower=True)
    except LinAlgError:
        min_eig = float(np.linalg.eigvalsh(V)[0])
        raise SingularCovarianceError(
            f"{what} is not positive definite (smallest eigenvalue ~ {min_eig:.3e})",
            min_eigenvalue=min_eig,
        ) from None
    diag = np.diag(c)
    pivots = diag * diag
    threshold = PIVOT_RTOL * float(np.max(np.diag(V)))
    if float(np.min(pivots)) < threshold:
        min_eig = float(np.linalg.eigvalsh(V)[0])
        raise SingularCovarianceError(
            f"{what} is numerically singular: pivot {float(np.min(pivots)):.3e} "
            f"below {threshold:.3e} (smallest eigenvalue ~ {min_eig:.3e})",
            min_eigenvalue=min_eig,
        )
    logdet = 2.0 * float(np.sum(np.log(diag)))
    return (c, low), logdet


def quadratic_forms_dense(V: np.ndarray, X: np.ndarray, Y: np.ndarray) -> QuadraticForms:
    """Exact quadratic forms through a symmetric factorization of V."""
    V = np.asarray(V, dtype=float)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] == 1 and X.shape[1] == V.shape[0] and V.shape[0] != 1:
        X = X.T
    Y = np.asarray(Y, dtype=float).ravel()
    n = V.shape[0]
    if V.shape != (n, n):
        raise TreeError("V must be square")
    if not np.allclose(V, V.T, rtol=0.0, atol=1e-8 * max(1.0, float(np.abs(V).max()))):
        raise TreeError("V must be symmetric")
    if X.shape[0] != n or Y.shape[0] != n:
        raise TreeError("X and Y must have one row per tip")

    factor, logdet = _factor_spd(V, "covariance matrix")
    p = X.shape[1]
    Z = np.empty((n, p + 2))
    Z[:, :p] = X
    Z[:, p] = Y
    Z[:, p + 1] = 1.0
    A = cho_solve(factor, Z)
    G = Z.T @ A
    G = 0.5 * (G + G.T)
    return QuadraticForms(
        xtvix=G[:p, :p].copy(),
        xtviy=G[:p, p].copy(),
        ytviy=float(G[p, p]),
        logdet_v=logdet,
        one_tvi_one=float(G[p + 1, p + 1]),
        n=n,
    )


# --------------------------------------------------------------------- #
# pruning path
# --------------------------------------------------------------------- #
#
# Subtree messages.  For a subtree whose covariance (about its own root,
# including the subtending edge) is V_s with tip data Z_s, the message is
#     s = 1'V_s^{-1}1,   w = 1'V_s^{-1}Z_s,   Q = Z_s'V_s^{-1}Z_s,
#     ld = log det V_s.
# Lengthening the subtending edge by t maps V_s -> V_s + t J, i.e.
#     r = 1 + t s,  s -> s/r,  w -> w/r,  Q -> Q - t w'w / r,  ld -> ld + log r,
# and a join over children adds the messages (block-diagonal V).  A tip is a
# point mass (a "delta" with value z); a delta shifted by t > 0 becomes the
# regular message (1/t, z/t, z'z/t, log t).  A delta that reaches a join
# pins the node state, so sibling messages collapse to constants.


def quadratic_forms_pruning(tree: PhyloTree, X: np.ndarray, Y: np.ndarray) -> QuadraticForms:
    """Brownian-covariance quadratic forms in one post-order traversal."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] == 1 and X.shape[1] == tree.n_tips and tree.n_tips != 1:
        X = X.T
    Y = np.asarray(Y, dtype=float).ravel()
    n = tree.n_tips
    if tree.n_nodes == 1:
        raise SingularCovarianceError(
            "single-node tree has no covariance", min_eigenvalue=0.0
        )
    if X.shape[0] != n or Y.shape[0] != n:
        raise TreeError("X and Y must have one row per tip")
    p = X.shape[1]
    Z = np.empty((n, p + 2))
    Z[:, :p] = X
    Z[:, p] = Y
    Z[:, p + 1] = 1.0

    if np.all(tree.edge_length[_nonroot_mask(tree)] > 0.0):
        s, w, Q, ld = _prune_level_vectorized(tree, Z)
    else:
        s, w, Q, ld = _prune_sequential(tree, Z)

    Q = 0.5 * (Q + Q.T)
    return QuadraticForms(
        xtvix=Q[:p, :p].copy(),
        xtviy=Q[:p, p].copy(),
        ytviy=float(Q[p, p]),
        logdet_v=float(ld),
        one_tvi_one=float(Q[p + 1, p + 1]),
        n=n,
    )


def _nonroot_mask(tree: PhyloTree) -> np.ndarray:
    mask = np.ones(tree.n_nodes, dtype=bool)
    mask[tree.root] = False
    return mask


def _prune_level_vectorized(tree: PhyloTree, Z: np.ndarray):
    """Level-synchronous sweep; requires strictly positive non-root edges."""
    n_nodes = tree.n_nodes
    q = Z.shape[1]
    levels = tree.levels
    parents = tree.parent
    edges = tree.edge_length

    s = np.zeros(n_nodes)
    w = np.zeros((n_nodes, q))
    Q = np.zeros((n_nodes, q, q))
    ld = np.zeros(n_nodes)

    tip_ids = np.fromiter(tree.tip_ids, dtype=np.int64, count=tree.n_tips)
    t_tip = edges[tip_ids]
    s[tip_ids] = 1.0 / t_tip
    w[tip_ids] = Z / t_tip[:, None]
    Q[tip_ids] = Z[:, :, None] * Z[:, None, :] / t_tip[:, None, None]
    ld[tip_ids] = np.log(t_tip)

    is_tip = np.zeros(n_nodes, dtype=bool)
    is_tip[tip_ids] = True

    order = np.argsort(levels, kind="stable")
    max_level = int(levels.max()) if n_nodes > 1 else 0
    # Nodes grouped by level; process deepest first.
    boundaries = np.searchsorted(levels[order], np.arange(max_level + 2))
    for lvl in range(max_level, 0, -1):
        ids = order[boundaries[lvl]:boundaries[lvl + 1]]
        internal = ids[~is_tip[ids]]
        if internal.size:
            t = edges[internal]
            r = 1.0 + t * s[internal]
            ld[internal] += np.log(r)
            Q[internal] -= (
                (t / r)[:, None, None]
                * w[internal][:, :, None]
                * w[internal][:, None, :]
            )
            w[internal] /= r[:, None]
            s[internal] /= r
        par = parents[ids]
        np.add.at(s, par, s[ids])
        np.add.at(w, par, w[ids])
        np.add.at(Q, par, Q[ids])
        np.add.at(ld, par, ld[ids])

    root = tree.root
    if s[root] <= 0.0:
        raise SingularCovarianceError(
            "tree covariance is singular", min_eigenvalue=0.0
        )
    return s[root], w[root], Q[root], ld[root]


def _prune_sequential(tree: PhyloTree, Z: np.ndarray):
    """Post-order message passing with exact handling of zero-length edges."""
    q = Z.shape[1]
    n_nodes = tree.n_nodes
    tip_index = {t: i for i, t in enumerate(tree.tip_ids)}
    parents = tree.parent
    edges = tree.edge_length

    # Message per node: ("reg", s, w, Q, ld) or ("delta", z).
    msgs: list = [None] * n_nodes
    acc_Q = np.zeros((q, q))
    acc_ld = 0.0

    def shift(msg, t):
        kind = msg[0]
        if kind == "delta":
            if t == 0.0:
                return msg
            z = msg[1]
            return ("reg", 1.0 / t, z / t, np.outer(z, z) / t, math.log(t))
        _, s, w, Q, ld = msg
        if t == 0.0:
            return msg
        r = 1.0 + t * s
        return ("reg", s / r, w / r, Q - (t / r) * np.outer(w, w), ld + math.log(r))

    for u in tree.postorder:
        u = int(u)
        if tree.is_tip(u):
            msgs[u] = ("delta", Z[tip_index[u]])
        else:
            deltas = []
            regs = []
            for c in tree.children[u]:
                m = shift(msgs[c], float(edges[c]))
                msgs[c] = None
                (deltas if m[0] == "delta" else regs).append(m)
            if len(deltas) >= 2:
                raise SingularCovarianceError(
                    "two tips occupy the same position "
                    "(zero-length separation makes V singular)",
                    min_eigenvalue=0.0,
                )
            if deltas:
                z = deltas[0][1]
                for _, s, w, Q, ld in regs:
                    acc_Q += Q - np.outer(w, z) - np.outer(z, w) + s * np.outer(z, z)
                    acc_ld += ld
                msgs[u] = ("delta", z)
            elif regs:
                s = sum(m[1] for m in regs)
                w = sum(m[2] for m in regs)
                Q = sum(m[3] for m in regs)
                ld = sum(m[4] for m in regs)
                msgs[u] = ("reg", s, w, Q, ld)
            else:
                raise TreeError("internal node with no children")

    m = msgs[tree.root]
    if m[0] == "delta":
        raise SingularCovarianceError(
            "a tip sits at the root (zero variance row)", min_eigenvalue=0.0
        )
    _, s, w, Q, ld = m
    return s, w, Q + acc_Q, ld + acc_ld


def scaled_ess_pruning(tree: PhyloTree, keep_mask=None) -> float:
    """1'V^{-1}1 under the Brownian covariance, optionally on a tip subset.

    ``keep_mask`` is a boolean array over canonical tip indices; masked-out
    tips are pruned implicitly (this equals the scaled ESS of the restricted
    tree with the original root retained).  Scalar post-order pass, O(n).
    """
    parents = tree.parent
    edges = tree.edge_length
    n_nodes = tree.n_nodes
    s = [0.0] * n_nodes
    # Delta states: -1 none, 1 pinned (value is always 1 for the ones column).
    pinned = [False] * n_nodes

    if keep_mask is None:
        kept = None
    else:
        keep_mask = np.asarray(keep_mask, dtype=bool)
        if keep_mask.shape != (tree.n_tips,):
            raise TreeError("keep_mask must have one entry per tip")
        if not keep_mask.any():
            raise TreeError("keep_mask must keep at least one tip")
        kept = {t for t, k in zip(tree.tip_ids, keep_mask) if k}

    for u in tree.postorder:
        u = int(u)
        if tree.is_tip(u):
            if kept is not None and u not in kept:
                continue
            t = float(edges[u])
            if u == tree.root:
                raise SingularCovarianceError(
                    "single-node tree has no covariance", min_eigenvalue=0.0
                )
            if t == 0.0:
                pinned[u] = True
            else:
                s[u] = 1.0 / t
            p = int(parents[u])
            if pinned[u]:
                if pinned[p]:
                    raise SingularCovarianceError(
                        "two tips occupy the same position", min_eigenvalue=0.0
                    )
                pinned[p] = True
            else:
                s[p] += s[u]
        else:
            # Shift this node's combined message and add it to the parent.
            if u == tree.root:
                continue
            t = float(edges[u])
            p = int(parents[u])
            if pinned[u]:
                if t > 0.0:
                    s_val = 1.0 / t
                    s[p] += s_val
                else:
                    if pinned[p]:
                        raise SingularCovarianceError(
                            "two tips occupy the same position",
                            min_eigenvalue=0.0,
                        )
                    pinned[p] = True
            else:
                if s[u] > 0.0:
                    s[p] += s[u] / (1.0 + t * s[u])

    root = tree.root
    if pinned[root]:
        raise SingularCovarianceError(
            "a tip sits at the root (zero variance row)", min_eigenvalue=0.0
        )
    if s[root] <= 0.0:
        raise SingularCovarianceError("tree covariance is singular", min_eigenvalue=0.0)
    return float(s[root])


# --------------------------------------------------------------------- #
# symmetric-tree spectra
# --------------------------------------------------------------------- #


def symmetric_tree_eigenvalues(d, t) -> list[tuple[float, int]]:
    """Closed-form spectrum of the Brownian covariance of a symmetric tree.

    For level counts ``d = (d_1, ..., d_m)`` and level edge lengths
    ``t = (t_1, ..., t_m)`` the eigenvalues are

        lambda_i = n (t_i / (d_1...d_i) + ... + t_m / (d_1...d_m)),

    with multiplicity ``d_1`` for i = 1 and ``d_1...d_{i-1} (d_i - 1)`` for
    i >= 2.  Multiplicities sum to n = d_1...d_m and the trace identity
    sum(lambda_i mult_i) = n (t_1 + ... + t_m) holds.
    """
    d = [int(x) for x in d]
    t = [float(x) for x in t]
    if len(d) == 0 or len(d) != len(t):
        raise TreeError("d and t must be nonempty sequences of equal length")
    if any(x < 2 for x in d):
        raise TreeError("all level counts must be >= 2")
    if any(x <= 0 for x in t):
        raise TreeError("all level lengths must be positive")
    m = len(d)
    n = math.prod(d)
    cumprod = np.cumprod(d)
    # tails[i] = sum_{j >= i} t_j / (d_1...d_j)
    terms = np.array(t) / cumprod
    tails = np.cumsum(terms[::-1])[::-1]
    out = []
    for i in range(m):
        lam = n * float(tails[i])
        mult = int(d[0]) if i == 0 else int(cumprod[i - 1] * (d[i] - 1))
        out.append((lam, mult))
    return out
