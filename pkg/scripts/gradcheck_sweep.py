"""Run the finite-difference check over several seeds and print the worst errors."""

import sys

from bytexformer.gradcheck import run_gradcheck

seeds = [int(s) for s in sys.argv[1:]] or [0, 1, 2]
for seed in seeds:
    for res in run_gradcheck(seed=seed).values():
        print(f"seed={seed} loss={res.loss:5s} max_rel_error={res.max_rel_error:.3e} "
              f"worst={res.worst_param} passed={res.passed}")
