"""Mobile/immobile column: how fast the splitting schemes approach the exact solution.

A Gaussian pulse of the parent species sits in the mobile pores and is carried
downstream while exchanging with the stagnant pores and decaying into its
daughter. Each scheme is run for k = 1..6 iterations per step and compared
against the matrix exponential of the coupled operator.
"""
from poroheat.scenarios import TwoPhaseBenchmark, run_two_phase_comparison

bench = TwoPhaseBenchmark()
print(f"I={bench.I} cells, v={bench.v}, g={bench.g}, tau={bench.tau}, {bench.n_steps} steps\n")

report = run_two_phase_comparison(bench)
print(f"{'k':>3} {'one-side A':>12} {'one-side B':>12} {'iterative':>12}")
series = [report.series(s) for s in ("one_side_a", "one_side_b", "iterative")]
for k, errs in enumerate(zip(*series), start=1):
    print(f"{k:>3} " + " ".join(f"{e:12.3e}" for e in errs))

# One-side B re-solves the stiff exchange/decay part and keeps transport as
# forcing; here that pays off.
print(f"\none-side B ends at least as accurate as one-side A: {report.flags['one_side_b_best']}")
print(f"iterative error decreases with every extra iteration: "
      f"{report.flags['iterative_strictly_decreasing']}")
