"""How much does a correlated sample really tell you about its root state?

A tree full of closely related tips behaves like far fewer independent
observations.  This walk-through computes the scaled effective sample size
1'V^{-1}1, the effective sample size n_e = T * 1'V^{-1}1, and the two
structural ceilings: k T / t from the root's branching, and L / T from the
total branch length (ultrametric trees only).
"""

import numpy as np

from treegls import bm_covariance, ess_intercept, parse_newick, tree_stats

# A comb-like tree: most splits happen early, then lineages just get longer.
newick = "(((A:0.2,B:0.2):0.3,(C:0.1,D:0.4):0.4):0.5,(E:0.6,F:0.6):0.4);"
tree = parse_newick(newick)

print("tree:", newick)
print("tips:", ", ".join(tree.tip_labels))

stats = tree_stats(tree)
print(f"\nheight T = {stats.height_mean:.3f}  total length L = {stats.total_length:.3f}")
print(f"root degree k = {stats.root_degree}  shortest root edge t = {stats.min_root_edge:.3f}")

report = ess_intercept(tree)
print(f"\nscaled ESS 1'V^-1 1 = {report.scaled_ess:.4f}")
print(f"effective sample size n_e = {report.n_e:.4f}  (n = {report.n})")
print(f"root bound  k T / t = {report.bound_root:.4f}")
if report.bound_length is not None:
    print(f"length bound L / T = {report.bound_length:.4f}")

# Six tips act like fewer than three independent ones.  A star tree with the
# same height has no shared history, so there n_e equals n exactly:
star = parse_newick("(A:1,B:1,C:1,D:1,E:1,F:1);")
print(f"\nstar tree n_e = {ess_intercept(star).n_e:.4f} (the i.i.d. case)")

# The covariance matrix behind all of this: entries are shared root-path
# lengths, so sister tips share almost their full height.
V = bm_covariance(tree)
with np.printoptions(precision=2, suppress=True):
    print("\nV =\n", V)
