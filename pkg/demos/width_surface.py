"""Width of the identified set as the instrument strengthens.

Sweeps the single-instrument design (pi = 0, binary instrument) over the
instrument coefficient gamma and the error dependence rho, printing the
widest-possible bound width on a small text grid.  Width falls as |gamma|
grows and, with a positive treatment effect, rises with rho.
"""

from dataclasses import replace

import numpy as np

from ivpower.bounds import widest_bounds
from ivpower.simulation import model2_spec

X0 = np.array([0.0])


def sweep(alpha=1.0, beta=0.25):
    gammas = np.round(np.arange(0.0, 4.01, 0.5), 10)
    rhos = (-0.8, -0.4, 0.0, 0.4, 0.8)
    base = model2_spec(beta=beta)
    print(f"\nwidest width, alpha={alpha}, beta={beta} (rows: gamma, cols: rho)")
    print(" " * 7 + "".join(f"{r:>8.1f}" for r in rhos))
    for g in gammas:
        if g == 0.0:
            # no instrument variation: nothing is removable
            print(f"{g:>5.1f}  " + "".join(f"{1.0:>8.3f}" for _ in rhos))
            continue
        row = [widest_bounds(replace(base, alpha=alpha, gamma=(g,), rho=r), X0).width
               for r in rhos]
        print(f"{g:>5.1f}  " + "".join(f"{w:>8.3f}" for w in row))


if __name__ == "__main__":
    sweep(alpha=1.0)
    sweep(alpha=-1.0)
    print("\nFlipping the sign of the effect mirrors the rho direction: the")
    print("width column that grew with rho now shrinks, and vice versa.")
