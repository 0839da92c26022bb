"""A tour of the loss-space repulsion terms on a few small ensembles.

For each column of log-likelihoods we print the mean, every repulsion
term and the BMA value, so the ordering mean <= mean + R <= BMA can be
read off directly.

    python3 demos/jensen_chain_tour.py
"""

import numpy as np

from pvi_jensen import jensen
from pvi_jensen.numerics import make_rng


def show(L):
    v = jensen.chain_values(L)
    print(f"L = {np.array2string(np.asarray(L), precision=3)}")
    print(f"  mean {v['mean']:+.5f}   bma {v['bma']:+.5f}   gap {v['bma'] - v['mean']:.5f}")
    for name in ("R_h", "R_hm", "R_hmedian", "R_c", "R_w", "R_g", "R_d_upper", "R_d_lower"):
        print(f"  {name:<10} {v[name]:+.6f}")
    bad = jensen.chain_violations(v)
    print("  orderings:", "all hold" if not bad else f"violated {bad}")
    t = jensen.gfsf_term(L)
    print(f"  GFSF constant tilde_h={t.tilde_h:g}, ridge={t.eps:.4f}, "
          f"extra doublings={t.certified_doublings}")
    print()


if __name__ == "__main__":
    show([0.0, -2.0])
    show([-1.0, -1.2, -5.0])
    show(make_rng(0).uniform(-10, 0, 8))
    # a unit ridge in the log-det form overshoots the Jensen gap's floor
    print("log-det term with unit ridge on [0, -2]:",
          jensen.gfsf_term([0.0, -2.0], eps=1.0, certify=False).value)
