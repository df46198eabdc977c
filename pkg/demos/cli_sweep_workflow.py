#!/usr/bin/env python3
"""Drive a hyperparameter sweep through the command-line interface.

Everything the library does is reachable from three subcommands, so a sweep
is just a loop over config files. This script writes one config per KL
strength, then runs the exact commands a shell user would:

    lpirec train    --config <cfg>                      # one run per beta
    lpirec eval     --config <cfg> --checkpoint <ckpt> --split test
    lpirec diagnose --config <cfg> --checkpoints <ckpt> <ckpt> <ckpt>

`train` leaves behind a checkpoint, a metadata sidecar, the fitted
logging-policy estimate, a per-epoch log, and the resolved config. `eval`
re-scores any checkpoint on a chosen split. `diagnose` reads the sidecars,
works out which single hyperparameter the sweep varied, and emits a CSV
table ordered by that hyperparameter — ready for a plotting tool.
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

from lpirec.cli import main as lpirec
from lpirec.config import RunConfig

LINE = "=" * 72


def run(argv: list[str]) -> None:
    print(f"$ lpirec {' '.join(argv)}")
    code = lpirec(argv)
    if code != 0:
        raise SystemExit(f"command failed with exit code {code}")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--output", default="demo_runs", help="root for all run artifacts")
    args = parser.parse_args()

    root = Path(args.output)
    root.mkdir(parents=True, exist_ok=True)
    betas = (0.05, 0.5, 5.0)

    checkpoints: list[str] = []
    config_paths: dict[float, Path] = {}
    for beta in betas:
        cfg = RunConfig(
            data_source="synthetic",
            synthetic_states=6,
            synthetic_catalog=10,
            synthetic_sessions=2000,
            synthetic_horizon=4,
            synthetic_seed=3,
            dim=16,
            batch_size=256,
            learning_rate=0.05,
            behavior_learning_rate=0.05,
            epochs=2,
            behavior_epochs=2,
            objective="lpi",
            beta=beta,
            td_weight=1.0,
            discount=0.0,
            seed=args.seed,
            eval_ks="5,10,20",
            output_dir=str(root / f"beta_{beta}"),
        )
        config_path = root / f"beta_{beta}.cfg"
        config_path.write_text(cfg.to_text())
        config_paths[beta] = config_path

        print(LINE)
        print(f"train with KL strength beta = {beta}")
        run(["train", "--config", str(config_path)])
        checkpoints.append(str(root / f"beta_{beta}" / "model.ckpt"))

    middle = betas[len(betas) // 2]
    print(LINE)
    print(f"evaluate the beta = {middle} checkpoint on the held-out test split")
    report_path = root / "test_report.json"
    run([
        "eval", "--config", str(config_paths[middle]),
        "--checkpoint", str(root / f"beta_{middle}" / "model.ckpt"),
        "--split", "test", "--output", str(report_path),
    ])
    report = json.loads(report_path.read_text())
    print("\nheadline test metrics:")
    for key in ("hr_at_5", "ndcg_at_10", "ar_at_1", "js_vs_behavior"):
        if key in report:
            print(f"  {key:>16} = {report[key]['value']:.6f}")

    print(LINE)
    print("compare the sweep in one table (CSV on stdout)")
    run(["diagnose", "--config", str(config_paths[middle]), "--checkpoints", *checkpoints])

    print(LINE)
    print(f"all artifacts are under {root}/ — each run directory holds the")
    print("checkpoint, its metadata sidecar, the logging-policy estimate,")
    print("the per-epoch training log, and the exact config that produced it.")


if __name__ == "__main__":
    main()
