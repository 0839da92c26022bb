"""Train a VAR(h) ensemble on the 1-d toy problem and print its intervals.

The data lie in [0, 0.8]; the 95% interval of the ensemble mean should
widen away from it. A CSV with the whole grid is written to
``toy_intervals.csv``. Takes about a minute.

    python3 demos/toy_intervals.py [epochs]
"""

import sys

from pvi_jensen.harness import config, experiments

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
cfg = config.load_config(preset=config.TOY, overrides={"training": {"epochs": epochs}})
res = experiments.run_regression_experiment(cfg)
grid = res.grid
print(f"trained {cfg['training']['particles']} particles for {epochs} epochs")
print(f"{'x':>6} {'mean':>8} {'mean 95%':>20} {'predictive 95%':>20}")
for x in (-0.4, 0.0, 0.3, 0.6, 0.8, 1.0, 1.2, 1.4):
    k = abs(grid[:, 0] - x).argmin()
    _, m, plo, phi, mlo, mhi = grid[k]
    print(f"{x:6.2f} {m:8.3f}  [{mlo:7.3f}, {mhi:7.3f}]  [{plo:7.3f}, {phi:7.3f}]")
experiments.table_csv(grid, experiments.GRID_COLUMNS, "toy_intervals.csv")
print("repulsion diagnostics on the training points:", res.report.summary())
