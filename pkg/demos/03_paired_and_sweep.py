"""Paired baseline vs C3RL run, then a loss-weight sweep, on a synthetic dataset.

Both arms share the seed, so the only difference between them is the
contrastive term. Result files land in ``demo_results/``.

Run:  python3 demos/03_paired_and_sweep.py
"""

import tempfile
from pathlib import Path

from c3rl import emit_results, parse_config, run_paired, synthetic_sine
from c3rl.data import write_csv
from c3rl.runner import run_lambda_sweep, sweep_summary, sweep_trend

out = Path("demo_results")
with tempfile.TemporaryDirectory() as tmp:
    path = write_csv(synthetic_sine(600, 3, seed=1), Path(tmp) / "sine.csv")
    cfg = parse_config(None, dict(dataset=str(path), model="DLinear", lookback=48, horizon=12, epochs=10))

    base, c3, delta = run_paired(cfg)
    print(f"baseline mse {base.test_mse:.4f}  c3rl mse {c3.test_mse:.4f}  "
          f"weights {c3.weights}  delta {delta['delta_mse']:+.4f}")

    sweep = run_lambda_sweep(cfg, (0.05, 0.5, 0.95))
    summary = sweep_summary(sweep)
    for row in summary:
        print(f"lambda_simsia {row['lambda_simsia']:.2f}  test mse {row['test_mse']:.4f}")
    print("trend:", sweep_trend(sweep))

    emit_results([base, c3, *sweep], out, {"deltas": [delta], "sweep": summary})
print(f"wrote {sorted(p.name for p in out.iterdir())[:6]} ... to {out}/")
