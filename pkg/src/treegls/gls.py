"""Generalized least squares under a tree covariance.

Fits Y = X beta + eps with eps ~ N(0, sigma^2 V), where V comes from the
tree (Brownian by default, OU optionally).  Also: the covariate-covariance
estimator, posterior-mean shrinkage of the coefficients, and the two
lineage-shift model variants (pure shift "S" on the full covariance, actual
change "SB" on the block covariance obtained by cutting the subtending
branch).

Conventions: the intercept column is always first; for shift models the
subtree indicator is second.  Two variance estimates are kept: the unbiased
RSS/(n-rank) for reporting and the ML RSS/n for likelihoods and information
criteria.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .covariance import (
    CovarianceSpec,
    QuadraticForms,
    bm_covariance,
    covariance_matrix,
    quadratic_forms_dense,
    quadratic_forms_pruning,
)
from .errors import (
    DegenerateFitError,
    RankDeficientError,
    TraitTableError,
    TreeError,
)
from .tree import PhyloTree, extract_subtree, restrict_to_tips

RANK_RTOL = 1e-10


@dataclass(frozen=True)
class ShiftSpec:
    """A lineage effect: which subtree shifts, and in which sense.

    ``mode`` is ``"S"`` (pure shift added to the Brownian noise; full tree
    covariance) or ``"SB"`` (actual ancestral change; observations conditioned
    on both subtree roots, giving a block-diagonal covariance).

    ``subtending_length`` and ``top_height`` are derived from the tree when
    the shift is resolved against it; pass them only for reporting.
    """

    focal_node: int | str
    mode: str
    subtending_length: float | None = None
    top_height: float | None = None

    def __post_init__(self):
        if self.mode not in ("S", "SB"):
            raise TreeError(f"shift mode must be 'S' or 'SB', got {self.mode!r}")

    @classmethod
    def from_tree(cls, tree: PhyloTree, focal_node, mode: str) -> "ShiftSpec":
        res = _resolve_shift(tree, cls(focal_node, mode))
        return cls(
            focal_node=res.focal,
            mode=mode,
            subtending_length=res.t1,
            top_height=res.top_height,
        )


@dataclass(frozen=True)
class _ResolvedShift:
    focal: int
    mode: str
    t1: float
    k_top: int
    t_top_min: float
    top_height: float
    top_lo: int
    top_hi: int
    top_tree: PhyloTree
    bottom_tree: PhyloTree


def _resolve_shift(tree: PhyloTree, spec: ShiftSpec) -> _ResolvedShift:
    focal = tree.node_id(spec.focal_node)
    if tree.is_tip(focal):
        raise TreeError("focal node of a shift must be internal, not a tip")
    if focal == tree.root:
        raise TreeError("focal node of a shift must not be the root")
    lo, hi = tree.tip_range[focal]
    lo, hi = int(lo), int(hi)
    if hi - lo >= tree.n_tips:
        raise TreeError(
            "shift indicator is collinear with the intercept "
            "(focal subtree contains every tip)"
        )
    t1 = float(tree.edge_length[focal])
    kids = tree.children[focal]
    k_top = len(kids)
    t_top_min = float(min(tree.edge_length[c] for c in kids))
    top_tree = extract_subtree(tree, focal)
    bottom_labels = tree.tip_labels[:lo] + tree.tip_labels[hi:]
    bottom_tree = restrict_to_tips(tree, bottom_labels)
    top_height = float(top_tree.tip_heights.mean())
    return _ResolvedShift(
        focal=focal,
        mode=spec.mode,
        t1=t1,
        k_top=k_top,
        t_top_min=t_top_min,
        top_height=top_height,
        top_lo=lo,
        top_hi=hi,
        top_tree=top_tree,
        bottom_tree=bottom_tree,
    )


@dataclass(frozen=True)
class ShiftInfo:
    """Shift-fit metadata carried on the fit for reporting and scoring."""

    mode: str
    focal_node: int
    subtending_length: float
    k_top: int
    t_top_min: float
    top_height: float
    n_top: int
    top_tips: tuple[str, ...]


@dataclass(frozen=True)
class GlsFit:
    """A fitted tree-GLS model.

    ``beta`` follows the column order of the design (intercept first);
    ``xtvix_inv`` is (X'V^{-1}X)^{-1}, the coefficient covariance at unit
    residual variance.  ``sigma2_hat`` is the unbiased RSS/(n - rank);
    ``sigma2_ml`` is RSS/n and feeds the log-likelihood.
    """

    beta: np.ndarray
    xtvix: np.ndarray
    xtvix_inv: np.ndarray
    rss: float
    sigma2_hat: float
    sigma2_ml: float
    dof: int
    n: int
    rank: int
    logdet_v: float
    shift: ShiftInfo | None = None

    @property
    def beta_cov(self) -> np.ndarray:
        """sigma2_hat * (X'V^{-1}X)^{-1}."""
        return self.sigma2_hat * self.xtvix_inv

    @property
    def loglik(self) -> float:
        """Exact Gaussian log-density at (beta_hat, sigma2_ml)."""
        if self.sigma2_ml <= 0.0:
            raise DegenerateFitError(
                "log-likelihood undefined: RSS is zero (sigma2_ml = 0)"
            )
        n = self.n
        return -0.5 * (
            n * math.log(2.0 * math.pi * self.sigma2_ml) + self.logdet_v + n
        )

    def to_dict(self) -> dict:
        try:
            ll = self.loglik
        except DegenerateFitError:
            ll = None
        out = {
            "beta": [float(b) for b in self.beta],
            "beta_cov": [[float(v) for v in row] for row in self.beta_cov],
            "sigma2_hat": float(self.sigma2_hat),
            "sigma2_ml": float(self.sigma2_ml),
            "rss": float(self.rss),
            "dof": int(self.dof),
            "loglik": ll,
            "n": int(self.n),
            "rank": int(self.rank),
            "logdet_v": float(self.logdet_v),
        }
        if self.shift is not None:
            out["shift"] = {
                "mode": self.shift.mode,
                "focal_node": self.shift.focal_node,
                "subtending_length": float(self.shift.subtending_length),
                "k_top": int(self.shift.k_top),
                "t_top_min": float(self.shift.t_top_min),
                "top_height": float(self.shift.top_height),
                "n_top": int(self.shift.n_top),
                "top_tips": list(self.shift.top_tips),
            }
        return out


def _as_design(X, n: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] != n:
        raise TreeError(f"design matrix must have {n} rows")
    return X


def _forms_for(tree: PhyloTree, X, Y, cov: CovarianceSpec | None) -> QuadraticForms:
    if cov is None:
        cov = CovarianceSpec.bm()
    if cov.kind == "bm":
        f = quadratic_forms_pruning(tree, X, Y)
        if cov.scale != 1.0:
            c = cov.scale
            f = QuadraticForms(
                xtvix=f.xtvix / c,
                xtviy=f.xtviy / c,
                ytviy=f.ytviy / c,
                logdet_v=f.logdet_v + f.n * math.log(c),
                one_tvi_one=f.one_tvi_one / c,
                n=f.n,
            )
        return f
    V = covariance_matrix(tree, cov)
    return quadratic_forms_dense(V, X, Y)


def _solve_normal_equations(forms: QuadraticForms):
    """beta-hat, (X'V^{-1}X)^{-1} and RSS with the rank policy applied."""
    A = forms.xtvix
    p = A.shape[0]
    try:
        factor = cho_factor(A, lower=True)
    except LinAlgError:
        raise RankDeficientError(
            "design matrix is rank deficient under V^{-1}"
        ) from None
    diag = np.diag(factor[0])
    if float(np.min(diag * diag)) < RANK_RTOL * float(np.max(np.diag(A))):
        raise RankDeficientError(
            "design matrix is rank deficient at relative tolerance 1e-10"
        )
    beta = cho_solve(factor, forms.xtviy)
    xtvix_inv = cho_solve(factor, np.eye(p))
    xtvix_inv = 0.5 * (xtvix_inv + xtvix_inv.T)
    rss = float(forms.ytviy - beta @ forms.xtviy)
    # The subtraction cancels catastrophically on an exact fit; residuals
    # below roundoff scale are a true zero.
    if rss <= 1e-12 * abs(forms.ytviy):
        rss = 0.0
    return beta, xtvix_inv, rss


def _fit_from_forms(forms: QuadraticForms, shift: ShiftInfo | None = None) -> GlsFit:
    beta, xtvix_inv, rss = _solve_normal_equations(forms)
    n = forms.n
    rank = forms.xtvix.shape[0]
    if n <= rank:
        raise DegenerateFitError(
            f"need more observations than parameters (n={n}, rank={rank})"
        )
    dof = n - rank
    return GlsFit(
        beta=beta,
        xtvix=forms.xtvix,
        xtvix_inv=xtvix_inv,
        rss=rss,
        sigma2_hat=rss / dof,
        sigma2_ml=rss / n,
        dof=dof,
        n=n,
        rank=rank,
        logdet_v=forms.logdet_v,
        shift=shift,
    )


def gls_fit(tree: PhyloTree, X, Y, cov: CovarianceSpec | None = None) -> GlsFit:
    """Fit Y = X beta + eps, eps ~ N(0, sigma^2 V(tree, cov)).

    ``X`` is the full design including the intercept column (first).  Rows
    follow the canonical tip order.  The pruning path is used for Brownian
    covariances, the dense path otherwise; the two agree to tight tolerance.
    """
    n = tree.n_tips
    X = _as_design(X, n)
    Y = np.asarray(Y, dtype=float).ravel()
    if Y.shape[0] != n:
        raise TreeError(f"response must have {n} entries")
    forms = _forms_for(tree, X, Y, cov)
    return _fit_from_forms(forms)


def covariate_sigma_hat(tree: PhyloTree, X) -> np.ndarray:
    """Estimate the per-edge covariance of random covariates evolving on the tree.

    Sigma-hat = (X - 1 mu_X)' V^{-1} (X - 1 mu_X) / (n - 1) with mu_X the
    GLS ancestral-state row vector.  ``X`` holds random covariates only (no
    intercept column).
    """
    n = tree.n_tips
    X = _as_design(X, n)
    if n < 2:
        raise DegenerateFitError("need at least two tips to estimate Sigma")
    aug = np.column_stack([np.ones(n), X])
    forms = _forms_for(tree, aug, np.zeros(n), None)
    G = forms.xtvix
    s = G[0, 0]
    w = G[0, 1:]
    Sg = (G[1:, 1:] - np.outer(w, w) / s) / (n - 1)
    return 0.5 * (Sg + Sg.T)


def shrinkage_estimate(fit: GlsFit) -> np.ndarray:
    """Posterior-mean contraction (I + (X'V^{-1}X)^{-1})^{-1} beta-hat.

    Shrinks toward zero; approaches beta-hat as the information matrix grows.
    """
    A = fit.xtvix
    try:
        factor = cho_factor(A + np.eye(A.shape[0]), lower=True)
    except LinAlgError:
        raise RankDeficientError("X'V^{-1}X is singular") from None
    return cho_solve(factor, A @ fit.beta)


def shift_design(tree: PhyloTree, spec: ShiftSpec, X=None) -> np.ndarray:
    """Design matrix [1, indicator(top subtree), covariates...]."""
    res = _resolve_shift(tree, spec)
    n = tree.n_tips
    cols = [np.ones(n), _indicator(n, res)]
    if X is not None:
        Xm = _as_design(X, n)
        cols.extend(Xm.T)
    return np.column_stack(cols)


def _indicator(n: int, res: _ResolvedShift) -> np.ndarray:
    ind = np.zeros(n)
    ind[res.top_lo:res.top_hi] = 1.0
    return ind


def fit_shift_model(tree: PhyloTree, X, Y, spec: ShiftSpec) -> GlsFit:
    """Fit the lineage-shift model Y = 1 b0 + ind_top b1 + X b + eps.

    Mode "S" keeps the full Brownian covariance (the shift is displacement
    beyond the Brownian noise); mode "SB" conditions on both subtree root
    states, so the covariance is block diagonal over the two subtrees cut at
    the subtending branch, and the intercept is the bottom-subtree root state.
    Covariates are accepted in both modes.
    """
    res = _resolve_shift(tree, spec)
    n = tree.n_tips
    Y = np.asarray(Y, dtype=float).ravel()
    if Y.shape[0] != n:
        raise TreeError(f"response must have {n} entries")
    if X is None:
        Xm = np.empty((n, 0))
    else:
        Xm = _as_design(X, n)
    design = np.column_stack([np.ones(n), _indicator(n, res), Xm])

    if spec.mode == "S":
        forms = _forms_for(tree, design, Y, None)
    else:
        forms = _sb_forms(tree, res, design, Y)

    info = ShiftInfo(
        mode=spec.mode,
        focal_node=res.focal,
        subtending_length=res.t1,
        k_top=res.k_top,
        t_top_min=res.t_top_min,
        top_height=res.top_height,
        n_top=res.top_hi - res.top_lo,
        top_tips=tree.tip_labels[res.top_lo:res.top_hi],
    )
    return _fit_from_forms(forms, shift=info)


def _sb_forms(tree, res: _ResolvedShift, design, Y) -> QuadraticForms:
    """Forms against diag(V_top, V_bot): the two subtree passes simply add."""
    n = tree.n_tips
    top_rows = _subtree_row_indices(tree, res.top_tree)
    bot_rows = _subtree_row_indices(tree, res.bottom_tree)
    f_top = quadratic_forms_pruning(res.top_tree, design[top_rows], Y[top_rows])
    f_bot = quadratic_forms_pruning(res.bottom_tree, design[bot_rows], Y[bot_rows])
    return QuadraticForms(
        xtvix=f_top.xtvix + f_bot.xtvix,
        xtviy=f_top.xtviy + f_bot.xtviy,
        ytviy=f_top.ytviy + f_bot.ytviy,
        logdet_v=f_top.logdet_v + f_bot.logdet_v,
        one_tvi_one=f_top.one_tvi_one + f_bot.one_tvi_one,
        n=n,
    )


def _subtree_row_indices(tree: PhyloTree, sub: PhyloTree) -> np.ndarray:
    pos = {lab: i for i, lab in enumerate(tree.tip_labels)}
    return np.array([pos[lab] for lab in sub.tip_labels], dtype=np.int64)


def sb_covariance(tree: PhyloTree, spec: ShiftSpec) -> np.ndarray:
    """Dense block covariance of the "SB" model, in canonical tip order."""
    res = _resolve_shift(tree, spec)
    V = bm_covariance(tree)
    lo, hi = res.top_lo, res.top_hi
    depth_focal = float(tree.depths[res.focal])
    out = V.copy()
    out[lo:hi, :lo] = 0.0
    out[lo:hi, hi:] = 0.0
    out[:lo, lo:hi] = 0.0
    out[hi:, lo:hi] = 0.0
    out[lo:hi, lo:hi] = V[lo:hi, lo:hi] - depth_focal
    return out


# --------------------------------------------------------------------- #
# trait tables
# --------------------------------------------------------------------- #


@dataclass(frozen=True)
class TraitData:
    """Trait table aligned to a tree's canonical tip order."""

    y_name: str
    x_names: tuple[str, ...]
    Y: np.ndarray
    X: np.ndarray  # covariates only, no intercept column
    tip_labels: tuple[str, ...] = field(default=())

    def design(self) -> np.ndarray:
        """Intercept-first design matrix [1, X]."""
        return np.column_stack([np.ones(len(self.Y)), self.X])


def load_traits(path, tree: PhyloTree) -> TraitData:
    """Read a trait CSV ``tip,<y-name>,<x1-name>,...`` aligned against ``tree``.

    One row per tip; the first data column is the response.  Tips missing
    from the file, or rows naming tips absent from the tree, are errors.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TraitTableError("empty trait table", location=0) from None
        header = [h.strip() for h in header]
        if len(header) < 2 or header[0] != "tip":
            raise TraitTableError(
                "header must be 'tip,<y-name>[,<x-names>...]'", location=0
            )
        y_name = header[1]
        x_names = tuple(header[2:])
        rows: dict[str, list[float]] = {}
        for lineno, row in enumerate(reader, start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise TraitTableError(
                    f"row has {len(row)} fields, expected {len(header)}",
                    location=lineno,
                )
            tip = row[0].strip()
            if tip in rows:
                raise TraitTableError(f"duplicate row for tip {tip!r}", location=lineno)
            try:
                rows[tip] = [float(v) for v in row[1:]]
            except ValueError:
                raise TraitTableError(
                    f"non-numeric value in row for tip {tip!r}", location=lineno
                ) from None

    tree_tips = set(tree.tip_labels)
    extra = sorted(set(rows) - tree_tips)
    missing = sorted(tree_tips - set(rows))
    if extra:
        raise TraitTableError(f"rows for tips not in the tree: {extra}")
    if missing:
        raise TraitTableError(f"missing rows for tips: {missing}")

    data = np.array([rows[lab] for lab in tree.tip_labels])
    return TraitData(
        y_name=y_name,
        x_names=x_names,
        Y=data[:, 0].copy(),
        X=data[:, 1:].copy(),
        tip_labels=tree.tip_labels,
    )
