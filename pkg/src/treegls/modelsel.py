"""Model scores: log-likelihood based AIC, BIC, and the corrected BIC.

The standard BIC charges every parameter ln(n).  Under tree-structured
dependence the intercept and lineage effects carry bounded information, so
their penalty is replaced by ln(1 + n_e) with the matching effective sample
size; consistently estimated parameters (the k random-covariate coefficients
and sigma) keep the (k+1) ln(n) charge.  AIC needs no correction.

All scores use the maximized likelihood at sigma2_ml = RSS/n.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateFitError, TreeError
from .ess import EssReport, ess_intercept, ess_lineage
from .gls import GlsFit, ShiftSpec, fit_shift_model, gls_fit
from .tree import PhyloTree, reroot


@dataclass(frozen=True)
class ModelScore:
    """Scorecard for one fitted model.

    ``penalties`` maps term names to their additive contribution to the
    corrected BIC beyond -2 loglik; the map sums to exactly
    ``bic_corrected + 2 loglik``.
    """

    model: str
    loglik: float
    n: int
    p_consistent: int
    aic: float
    bic_standard: float
    bic_corrected: float
    penalties: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "loglik": float(self.loglik),
            "aic": float(self.aic),
            "bic_standard": float(self.bic_standard),
            "bic_corrected": float(self.bic_corrected),
            "penalties": {k: float(v) for k, v in self.penalties.items()},
        }


def aic(fit: GlsFit) -> float:
    """2 p - 2 loglik with p = rank(X) + 1 (sigma counted)."""
    p = fit.rank + 1
    return 2.0 * p - 2.0 * fit.loglik


def bic_standard(fit: GlsFit) -> float:
    """-2 loglik + p ln(n) with p = rank(X) + 1."""
    if fit.n < 2:
        raise DegenerateFitError("BIC requires n >= 2")
    p = fit.rank + 1
    return -2.0 * fit.loglik + p * math.log(fit.n)


def corrected_penalty_m0(k: int, n: int, n_e: float) -> dict[str, float]:
    """Penalty terms for the intercept + k random covariates model."""
    if n < 1:
        raise ConfigError("n must be positive")
    if not n_e > 0:
        raise ConfigError("n_e must be positive")
    return {
        "consistent": (k + 1) * math.log(n),
        "intercept": math.log1p(n_e),
    }


def corrected_penalty_m1(k: int, n: int, n_e_bot: float, n_e_top: float) -> dict[str, float]:
    """Penalty terms for the model with a lineage effect."""
    if n < 1:
        raise ConfigError("n must be positive")
    if not (n_e_bot > 0 and n_e_top > 0):
        raise ConfigError("effective sample sizes must be positive")
    return {
        "consistent": (k + 1) * math.log(n),
        "intercept": math.log1p(n_e_bot),
        "shift": math.log1p(n_e_top),
    }


def _score(model: str, fit: GlsFit, p_consistent: int, penalties: dict) -> ModelScore:
    ll = fit.loglik
    return ModelScore(
        model=model,
        loglik=ll,
        n=fit.n,
        p_consistent=p_consistent,
        aic=aic(fit),
        bic_standard=bic_standard(fit),
        bic_corrected=-2.0 * ll + sum(penalties.values()),
        penalties=dict(penalties),
    )


def bic_corrected_m0(fit: GlsFit, ess: EssReport) -> ModelScore:
    """Corrected BIC for the no-shift model: (k+1) ln n + ln(1 + n_e)."""
    if fit.shift is not None:
        raise ConfigError("fit carries a shift; use bic_corrected_m1")
    if ess.n != fit.n:
        raise ConfigError(
            f"fit has n={fit.n} but the ESS report has n={ess.n}"
        )
    k = fit.rank - 1
    if k < 0:
        raise ConfigError("model must include an intercept")
    penalties = corrected_penalty_m0(k, fit.n, ess.n_e)
    return _score("M0", fit, k + 1, penalties)


def bic_corrected_m1(fit: GlsFit, ess_top: float, ess_bot: float) -> ModelScore:
    """Corrected BIC for the lineage-effect model.

    The fit must follow the rooting convention (intercept at the base of the
    focal lineage); :func:`score_models` performs that reparametrization.
    """
    if fit.shift is None:
        raise ConfigError("fit does not carry a shift; use bic_corrected_m0")
    for name, v in (("ess_top", ess_top), ("ess_bot", ess_bot)):
        if not (np.isfinite(v) and v > 0):
            raise ConfigError(f"{name} must be positive and finite, got {v}")
    k = fit.rank - 2
    if k < 0:
        raise ConfigError("shift model must include intercept and indicator")
    penalties = corrected_penalty_m1(k, fit.n, ess_bot, ess_top)
    return _score(f"M1({fit.shift.mode})", fit, k + 1, penalties)


def score_models(
    tree: PhyloTree,
    X,
    Y,
    spec: ShiftSpec | None = None,
    t_policy: str = "mean",
) -> list[ModelScore]:
    """Score the no-shift model and, optionally, a lineage-effect model.

    ``X`` holds random covariates only (no intercept column).  For the shift
    model the tree is rerooted at the base of the focal lineage before
    fitting and scoring, so the intercept is the ancestral state there and
    the ESS pair matches the penalty's derivation.
    """
    n = tree.n_tips
    X = np.asarray(X, dtype=float) if X is not None else np.empty((n, 0))
    if X.ndim == 1:
        X = X[:, None]
    Y = np.asarray(Y, dtype=float).ravel()

    design0 = np.column_stack([np.ones(n), X])
    fit0 = gls_fit(tree, design0, Y)
    scores = [bic_corrected_m0(fit0, ess_intercept(tree, t_policy))]

    if spec is not None:
        r_tree, r_X, r_Y, r_spec = _reroot_at_lineage_base(tree, X, Y, spec)
        fit1 = fit_shift_model(r_tree, r_X if r_X.shape[1] else None, r_Y, r_spec)
        pair = ess_lineage(r_tree, r_spec, t_policy)
        scores.append(bic_corrected_m1(fit1, pair.top, pair.bot))
    return scores


def _reroot_at_lineage_base(tree: PhyloTree, X, Y, spec: ShiftSpec):
    """Reroot at the parent of the focal node and realign data rows."""
    focal = tree.node_id(spec.focal_node)
    if tree.is_tip(focal) or focal == tree.root:
        raise TreeError("focal node of a shift must be internal and not the root")
    base = int(tree.parent[focal])
    top_tips = tree.tips_below(focal)
    if base == tree.root:
        new_tree = tree
    else:
        new_tree = reroot(tree, base)
    new_focal = _find_subtree_root(new_tree, top_tips)
    new_spec = ShiftSpec(new_focal, spec.mode)
    pos = {lab: i for i, lab in enumerate(tree.tip_labels)}
    perm = np.array([pos[lab] for lab in new_tree.tip_labels], dtype=np.int64)
    return new_tree, X[perm], Y[perm], new_spec


def _find_subtree_root(tree: PhyloTree, top_tips) -> int:
    """Highest node whose tip set equals ``top_tips`` (handles unary chains)."""
    node = tree.mrca(top_tips)
    want = len(top_tips)
    while True:
        p = int(tree.parent[node])
        if p < 0:
            break
        lo, hi = tree.tip_range[p]
        if hi - lo != want:
            break
        node = p
    return node
