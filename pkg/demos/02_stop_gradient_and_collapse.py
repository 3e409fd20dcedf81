"""Why the stop-gradient matters: train the same siamese setup with and without it.

With the prediction loss switched off (weights (1, 0)) the only objective is
agreement between the two views. Without the stop-gradient both branches can
meet at a constant output, and the collapse metric falls toward zero. With it,
the representations keep their spread.

Run:  python3 demos/02_stop_gradient_and_collapse.py
"""

import tempfile
from pathlib import Path

import numpy as np

from c3rl import parse_config, run_experiment, synthetic_sine
from c3rl.data import write_csv

horizon, channels = 12, 4
with tempfile.TemporaryDirectory() as tmp:
    path = write_csv(synthetic_sine(400, channels, seed=0), Path(tmp) / "sine.csv")
    cfg = parse_config(None, dict(dataset=str(path), model="DLinear", lookback=24, horizon=horizon, kernel=5,
                                  mode="c3rl", lambda_simsia=1.0, lambda_pred=0.0, lr=1e-2,
                                  epochs=30, patience=30))
    guarded = run_experiment(cfg)
    sabotaged = run_experiment(cfg, stop_grad=False)

healthy = 1 / np.sqrt(horizon * channels)
print(f"healthy spread is about {healthy:.4f}; collapse alarm below {0.1 * healthy:.4f}\n")
print("epoch   with stop-grad   without")
for e, (a, b) in enumerate(zip(guarded.curves["collapse_std"], sabotaged.curves["collapse_std"]), 1):
    if e == 1 or e % 5 == 0:
        print(f"{e:5d}   {a:14.4f}   {b:7.4f}")
