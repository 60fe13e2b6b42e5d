"""Command-line front end.

Thin shell over the library: every command's output equals the matching
library call.  Reports go to standard output (JSON by default, CSV for the
tabular commands); errors go to standard error as a structured JSON object
``{"error": {"code", "message", "location"}}`` with exit status 1.  All
floating-point output uses 17 significant digits so byte-level
reproducibility checks are exact.  Stochastic commands require ``--seed``.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field

import numpy as np

from . import design as design_mod
from . import simlab
from .covariance import CovarianceSpec, covariance_matrix, symmetric_tree_eigenvalues
from .errors import ConfigError, TreeGlsError
from .ess import ess_intercept, ess_lineage
from .gls import ShiftSpec, fit_shift_model, gls_fit, load_traits, sb_covariance
from .modelsel import score_models
from .tree import PhyloTree, parse_newick

COMMANDS = ("ess", "fit", "shift", "design", "score", "simulate", "phase", "eigs")


@dataclass(frozen=True)
class RunConfig:
    """Parsed invocation; ``options`` holds the command-specific values."""

    command: str
    options: dict = field(default_factory=dict)


# --------------------------------------------------------------------- #
# deterministic serialization (17 significant digits)
# --------------------------------------------------------------------- #


def fmt_float(x) -> str:
    x = float(x)
    if x != x:
        return '"nan"'
    if x in (float("inf"), float("-inf")):
        return '"inf"' if x > 0 else '"-inf"'
    return format(x, ".17g")


def _json(obj) -> str:
    if obj is None:
        return "null"
    if obj is True:
        return "true"
    if obj is False:
        return "false"
    if isinstance(obj, str):
        out = obj.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{out}"'
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt_float(obj)
    if isinstance(obj, dict):
        inner = ",".join(f"{_json(str(k))}:{_json(v)}" for k, v in obj.items())
        return "{" + inner + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(_json(v) for v in obj) + "]"
    if isinstance(obj, np.ndarray):
        return _json(obj.tolist())
    raise ConfigError(f"cannot serialize {type(obj).__name__}")


def emit_json(obj, out) -> None:
    out.write(_json(obj) + "\n")


def _csv_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def emit_csv(header, rows, out) -> None:
    out.write(",".join(header) + "\n")
    for row in rows:
        out.write(",".join(_csv_cell(v) for v in row) + "\n")


# --------------------------------------------------------------------- #
# argument parsing
# --------------------------------------------------------------------- #


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="treegls",
        description="Tree-structured GLS, effective sample sizes, corrected "
        "information criteria, and subsampling design.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--format", choices=("json", "csv"), default="json")
        p.add_argument("--threads", type=int, default=1)
        return p

    p = add("ess", "effective sample size of the root-state estimate")
    p.add_argument("--tree", required=True)
    p.add_argument("--t-policy", choices=("mean", "max"), default="mean")
    p.add_argument("--dump-cov", metavar="PATH")

    p = add("fit", "GLS fit of a trait table")
    p.add_argument("--tree", required=True)
    p.add_argument("--traits", required=True)
    p.add_argument("--model", choices=("bm", "ou"), default="bm")
    p.add_argument("--alpha", type=float)
    p.add_argument("--stationary", action="store_true")
    p.add_argument("--dump-cov", metavar="PATH")

    p = add("shift", "lineage-shift fit (S or SB) with its ESS pair")
    p.add_argument("--tree", required=True)
    p.add_argument("--traits", required=True)
    p.add_argument("--shift-node", required=True)
    p.add_argument("--shift-mode", choices=("S", "SB"), default="S")
    p.add_argument("--t-policy", choices=("mean", "max"), default="mean")
    p.add_argument("--dump-cov", metavar="PATH")

    p = add("design", "tip-subset search maximizing the scaled ESS")
    p.add_argument("--tree", required=True)
    p.add_argument("--size", type=int)
    p.add_argument(
        "--method",
        choices=("forward", "backward", "exhaustive", "random"),
        default="forward",
    )
    p.add_argument("--reps", type=int, default=1000)
    p.add_argument("--seed", type=int)

    p = add("score", "model scorecard (AIC, BIC, corrected BIC)")
    p.add_argument("--tree", required=True)
    p.add_argument("--traits", required=True)
    p.add_argument("--shift-node")
    p.add_argument("--shift-mode", choices=("S", "SB"), default="S")
    p.add_argument("--t-policy", choices=("mean", "max"), default="mean")

    p = add("simulate", "Brownian simulation on a tree (root 0, rate 1)")
    p.add_argument("--tree", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--reps", type=int, default=1)

    p = add("phase", "root-replication variance curve (closed form + pruning)")
    p.add_argument("--d", required=True)
    p.add_argument("--q", type=float, required=True)
    p.add_argument("--m-max", type=int, required=True)

    p = add("eigs", "closed-form spectrum of a symmetric tree covariance")
    p.add_argument("--d", required=True, help="level count, or comma list of counts")
    p.add_argument("--q", type=float, help="replication proportion for level lengths")
    p.add_argument("--m-max", type=int, help="levels when --d is a single count")

    return parser


def parse_args(argv) -> RunConfig:
    args = build_parser().parse_args(argv)
    options = {k: v for k, v in vars(args).items() if k != "command"}
    return RunConfig(command=args.command, options=options)


# --------------------------------------------------------------------- #
# command implementations
# --------------------------------------------------------------------- #


def _load_tree(path) -> PhyloTree:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read tree file: {exc}") from None
    return parse_newick(text.strip())


def _resolve_node_flag(tree: PhyloTree, value: str):
    """A node reference: internal label, node id, or comma list of tip labels
    whose most recent common ancestor is meant."""
    if "," in value:
        return tree.mrca([v.strip() for v in value.split(",")])
    try:
        return int(value)
    except ValueError:
        return value


def _dump_cov(tree, V, path) -> None:
    with open(path, "w") as fh:
        for row in V:
            fh.write(",".join(format(float(v), ".17g") for v in row) + "\n")


def _cov_spec(opt) -> CovarianceSpec:
    if opt.get("model", "bm") == "ou":
        if opt.get("alpha") is None:
            raise ConfigError("--model ou requires --alpha")
        return CovarianceSpec.ou(opt["alpha"], stationary=bool(opt.get("stationary")))
    return CovarianceSpec.bm()


def _require_seed(opt, why: str) -> int:
    if opt.get("seed") is None:
        raise ConfigError(f"--seed is required for {why}")
    return int(opt["seed"])


def _cmd_ess(opt, out):
    tree = _load_tree(opt["tree"])
    report = ess_intercept(tree, t_policy=opt["t_policy"])
    if opt.get("dump_cov"):
        _dump_cov(tree, covariance_matrix(tree, CovarianceSpec.bm()), opt["dump_cov"])
    emit_json(report.to_dict(), out)


def _cmd_fit(opt, out):
    tree = _load_tree(opt["tree"])
    traits = load_traits(opt["traits"], tree)
    cov = _cov_spec(opt)
    fit = gls_fit(tree, traits.design(), traits.Y, cov)
    if opt.get("dump_cov"):
        _dump_cov(tree, covariance_matrix(tree, cov), opt["dump_cov"])
    result = fit.to_dict()
    result["response"] = traits.y_name
    result["covariates"] = list(traits.x_names)
    emit_json(result, out)


def _cmd_shift(opt, out):
    tree = _load_tree(opt["tree"])
    traits = load_traits(opt["traits"], tree)
    node = _resolve_node_flag(tree, opt["shift_node"])
    spec = ShiftSpec(node, opt["shift_mode"])
    X = traits.X if traits.X.shape[1] else None
    fit = fit_shift_model(tree, X, traits.Y, spec)
    pair = ess_lineage(tree, spec, t_policy=opt["t_policy"])
    if opt.get("dump_cov"):
        if spec.mode == "SB":
            V = sb_covariance(tree, spec)
        else:
            V = covariance_matrix(tree, CovarianceSpec.bm())
        _dump_cov(tree, V, opt["dump_cov"])
    result = fit.to_dict()
    result["n_e_top"] = pair.top
    result["n_e_bot"] = pair.bot
    emit_json(result, out)


def _cmd_design(opt, out):
    tree = _load_tree(opt["tree"])
    method = opt["method"]
    threads = opt["threads"]
    if method == "random":
        seed = _require_seed(opt, "random subsampling")
        if opt["format"] == "csv":
            rows = design_mod.band_table(tree, opt["reps"], seed, threads=threads)
            emit_csv(
                ("k", "q025", "median", "q975", "optimum"),
                [(r["k"], r["q025"], r["median"], r["q975"], r["optimum"]) for r in rows],
                out,
            )
            return
        if opt.get("size") is None:
            raise ConfigError("--size is required for a single random band")
        band = design_mod.random_design_bands(
            tree, opt["size"], opt["reps"], seed, threads=threads
        )
        emit_json(band.to_dict(), out)
        return
    if opt.get("size") is None:
        raise ConfigError("--size is required")
    if method == "exhaustive":
        result = design_mod.exhaustive_design(tree, opt["size"], threads=threads)
    else:
        result = design_mod.stepwise_design(tree, opt["size"], method, threads=threads)
    emit_json(result.to_dict(), out)


def _cmd_score(opt, out):
    tree = _load_tree(opt["tree"])
    traits = load_traits(opt["traits"], tree)
    spec = None
    if opt.get("shift_node"):
        node = _resolve_node_flag(tree, opt["shift_node"])
        spec = ShiftSpec(node, opt["shift_mode"])
    scores = score_models(
        tree,
        traits.X if traits.X.shape[1] else None,
        traits.Y,
        spec,
        t_policy=opt["t_policy"],
    )
    if opt["format"] == "csv":
        emit_csv(
            ("model", "loglik", "aic", "bic_standard", "bic_corrected"),
            [
                (s.model, s.loglik, s.aic, s.bic_standard, s.bic_corrected)
                for s in scores
            ],
            out,
        )
    else:
        emit_json([s.to_dict() for s in scores], out)


def _cmd_simulate(opt, out):
    tree = _load_tree(opt["tree"])
    seed = _require_seed(opt, "simulation")
    reps = opt["reps"]
    values = simlab.simulate_bm(tree, 0.0, 1.0, seed, reps=reps)
    values = np.atleast_2d(values)
    if opt["format"] == "csv":
        header = ("tip",) + tuple(f"rep{r + 1}" for r in range(values.shape[0]))
        rows = [
            (lab,) + tuple(values[:, i]) for i, lab in enumerate(tree.tip_labels)
        ]
        emit_csv(header, rows, out)
    else:
        emit_json(
            {
                "tips": list(tree.tip_labels),
                "values": values.tolist(),
                "seed": seed,
            },
            out,
        )


def _cmd_phase(opt, out):
    d = int(opt["d"])
    curve = simlab.phase_transition_curve(d, opt["q"], opt["m_max"])
    if opt["format"] == "json":
        emit_json(
            [
                {
                    "m": p.m,
                    "n": p.n,
                    "var_closed": p.var_closed,
                    "var_pruning": p.var_pruning,
                }
                for p in curve
            ],
            out,
        )
    else:
        emit_csv(
            ("n", "var_closed", "var_pruning"),
            [(p.n, p.var_closed, p.var_pruning) for p in curve],
            out,
        )


def _cmd_eigs(opt, out):
    raw = str(opt["d"])
    if "," in raw:
        d = tuple(int(v) for v in raw.split(","))
    else:
        if not opt.get("m_max"):
            raise ConfigError("--m-max is required when --d is a single count")
        d = (int(raw),) * opt["m_max"]
    m = len(d)
    if opt.get("q") is not None:
        if len(set(d)) != 1:
            raise ConfigError("--q lengths are defined for uniform level counts")
        t = simlab.ReplicationSpec(d[0], opt["q"], m).lengths()
    else:
        t = (1.0 / m,) * m
    pairs = symmetric_tree_eigenvalues(d, t)
    if opt["format"] == "csv":
        emit_csv(("eigenvalue", "multiplicity"), pairs, out)
    else:
        emit_json(
            [{"eigenvalue": lam, "multiplicity": mult} for lam, mult in pairs], out
        )


_HANDLERS = {
    "ess": _cmd_ess,
    "fit": _cmd_fit,
    "shift": _cmd_shift,
    "design": _cmd_design,
    "score": _cmd_score,
    "simulate": _cmd_simulate,
    "phase": _cmd_phase,
    "eigs": _cmd_eigs,
}


def run(config: RunConfig, out=None, err=None) -> int:
    """Execute one parsed command; returns the process exit status."""
    out = out if out is not None else sys.stdout
    err = err if err is not None else sys.stderr
    handler = _HANDLERS.get(config.command)
    if handler is None:
        emit_json({"error": {"code": "config", "message": "unknown command",
                             "location": None}}, err)
        return 1
    try:
        handler(config.options, out)
    except TreeGlsError as exc:
        emit_json(
            {
                "error": {
                    "code": exc.code,
                    "message": str(exc),
                    "location": exc.location,
                }
            },
            err,
        )
        return 1
    return 0


def main(argv=None) -> int:
    return run(parse_args(argv))


if __name__ == "__main__":
    sys.exit(main())
