"""Estimators settle down as tips are added, but not always to the truth.

One realization of evolution is extended tip by tip (per-edge seeding keeps
earlier values bit-identical), and the model is refit at each size.  Slope
estimates concentrate at the i.i.d.-like rate; the intercept's variance
flattens against its structural floor sigma2 * t / k, so each path settles
on its own random limit instead of the true value.
"""

from treegls import ConvergenceConfig, convergence_experiment

config = ConvergenceConfig.from_text(
    """
    family=fixed_root
    sizes=8,16,32,64,128
    beta=1.0,0.5
    sigma2=1.0
    root_edge=0.25
    height=1.0
    reps=2000
    seed=7
    """
)
report = convergence_experiment(config)

print("variance of the estimates vs n (MC over 2000 replicates):")
print(f"{'n':>5} {'component':>10} {'mc_var':>10} {'reference':>10}")
for n, comp, mc, theory in report.variance_rows:
    print(f"{n:>5} {comp:>10} {mc:>10.4f} {theory:>10.4f}")
print(f"\nintercept floor sigma2 t / k = {report.floor_intercept:.4f}: "
      "the intercept column flattens against it while the slope keeps falling.")

print("\nmean |change| of the estimate when the sample doubles:")
for a, b, comp, delta in report.increment_rows:
    print(f"  {comp:>10}: n {a:>3} -> {b:>3}: {delta:.4f}")
print("shrinking increments are the almost-sure settling, path by path.")

print("\nfirst three intercept paths (one row per replicate):")
for path in report.sample_paths["intercept"][:3]:
    print("  " + " -> ".join(f"{v:+.3f}" for v in path))
print("(true intercept is 1.0; each path converges, to its own limit)")
