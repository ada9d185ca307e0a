"""Run the acceptance suite, optionally with the sign-flip debug hook.

Equivalent to `renormlab accept` but exposes the flip_sign_of hook, which
negates one named term of the renormalized ledger before the residual is
formed.  Flipping any live term must turn the renormalized-residual check
red; running this with --flip-sign g_div_b is the quickest way to convince
yourself the suite is actually wired to the term signs and not vacuously
green.
"""

from __future__ import annotations

import argparse

from renormlab.lab import ExperimentConfig, ScalarConfig, acceptance_suite


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--master-seed", type=int, default=0)
    parser.add_argument(
        "--flip-sign", default=None, metavar="TERM",
        help="negate this renormalized-ledger term (debug; expect failures)",
    )
    args = parser.parse_args()

    cfg = ExperimentConfig(
        experiment="acceptance_all",
        scalars=ScalarConfig(master_seed=args.master_seed),
    )
    report = acceptance_suite(cfg, flip_sign_of=args.flip_sign)
    for line in report.summary_lines():
        print(line)
    passed = sum(c.passed for c in report.checks)
    print(f"{passed}/{len(report.checks)} checks passed")
    return 0 if report.passed else 1


if __name__ == "__main__":
    raise SystemExit(main())
