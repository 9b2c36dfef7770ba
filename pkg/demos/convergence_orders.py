"""Observed order of iterative splitting versus the number of iterations.

Two random noncommuting stable 8x8 matrices are split and integrated to T = 1
with a trapezoidal inner solver. Each iteration adds one order until the inner
solver's second order caps it.
"""
from poroheat.integrators import StepperConfig
from poroheat.scenarios import convergence_study, random_stable_pair
from poroheat.splitting import SplitConfig

system = random_stable_pair(8, seed=0)
taus = [0.2, 0.1, 0.05, 0.025, 0.0125]

for mode, start in (("local", "zero"), ("global", "frozen")):
    print(f"{mode} error, starting iterate '{start}'")
    for q in (1, 2, 3):
        cfg = SplitConfig("iterative", iterations=q, tau=taus[0],
                          inner=StepperConfig("trapezoidal", taus[0]), initial_iterate=start)
        rep = convergence_study(system, cfg, taus, mode=mode)
        errs = " ".join(f"{e:.2e}" for e in rep.series("iterative"))
        print(f"  q={q}: slope {rep.order('iterative'):.2f}   errors {errs}")

unsplit = SplitConfig("unsplit", tau=taus[0], inner=StepperConfig("trapezoidal", taus[0]))
print(f"\nunsplit trapezoidal reference: slope "
      f"{convergence_study(system, unsplit, taus).order('unsplit'):.2f}")
