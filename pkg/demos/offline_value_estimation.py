#!/usr/bin/env python3
"""Estimate a target policy's value from logs of a different policy.

Logged interactions only show the reward of the action the logging policy
chose, so judging a new policy offline needs a correction. This script
demonstrates the two estimators the library carries and the one inequality
the training objective leans on:

  1. inverse-propensity scoring is unbiased when the logging probabilities
     are exact — the estimate's mean over many resamples lands within a few
     standard errors of the exact value,
  2. clipping the importance weights trades that unbiasedness for variance:
     the clipped estimate is systematically low but much steadier, and
  3. the importance-weighted value dominates its log-surrogate lower bound
     E[r * (1 + log(pi/mu))], with equality exactly when pi = mu — which is
     why maximizing the cheap surrogate still pushes the true value up.
"""

from __future__ import annotations

import argparse

import numpy as np

from lpirec.estimators import ips_value_estimate, tabular_value
from lpirec.synth import random_instance, sample_bandit_logs

LINE = "-" * 72


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--resamples", type=int, default=150)
    parser.add_argument("--log-size", type=int, default=2000)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    instance = random_instance(rng, 5, 8, concentration=5.0)
    target = rng.dirichlet(np.full(8, 5.0), size=5)
    truth = tabular_value(instance, target)

    print(LINE)
    print(f"5 contexts x 8 actions; exact target value J(pi) = {truth:.6f}")
    print(f"each resample logs {args.log_size} (context, action, reward) triplets")
    print(LINE)

    print(f"{'estimator':>16}  {'mean':>10}  {'bias':>10}  {'spread':>10}  {'|z|':>6}")
    for label, clip in (("plain IPS", None), ("clipped at 2", 2.0)):
        estimates = np.array([
            ips_value_estimate(
                sample_bandit_logs(
                    instance, args.log_size, np.random.default_rng(args.seed + 1 + r)
                ),
                target,
                instance.behavior,
                clip=clip,
            ).estimate
            for r in range(args.resamples)
        ])
        bias = estimates.mean() - truth
        spread = estimates.std(ddof=1)
        z = abs(bias) / (spread / np.sqrt(args.resamples))
        print(f"{label:>16}  {estimates.mean():>10.6f}  {bias:>+10.6f}  "
              f"{spread:>10.6f}  {z:>6.2f}")
    print("plain IPS: bias consistent with zero (|z| < 3); clipping: lower spread,")
    print("but a bias that no number of resamples averages away")

    print(LINE)
    print("lower bound: E_mu[(pi/mu) r]  >=  E_mu[r (1 + log(pi/mu))]")
    print(f"{'policy':>16}  {'weighted value':>14}  {'surrogate bound':>16}  {'slack':>10}")
    for label, policy in (
        ("random tilt", rng.dirichlet(np.full(8, 2.0), size=5)),
        ("sharper tilt", rng.dirichlet(np.full(8, 0.5), size=5)),
        ("pi = mu", instance.behavior),
    ):
        ratio = policy / instance.behavior
        weighted = float(instance.context_probs @ (instance.behavior * ratio
                                                   * instance.rewards).sum(axis=1))
        bound = float(instance.context_probs @ (instance.behavior * instance.rewards
                                                * (1.0 + np.log(ratio))).sum(axis=1))
        assert weighted >= bound - 1e-12
        print(f"{label:>16}  {weighted:>14.6f}  {bound:>16.6f}  {weighted - bound:>10.2e}")
    print("slack vanishes at pi = mu: the bound is tight where training starts.")
    print(LINE)


if __name__ == "__main__":
    main()
