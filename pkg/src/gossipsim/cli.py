"""Command-line entry point.

Subcommands: ``sim run <config>``, ``sim sweep <config>``,
``sim verify [--instances K --seed S]``, ``sim baseline <config>``.
Exit codes: 0 success, 2 config errors, 3 numerical errors, 4 i/o errors,
1 anything else (including verify finding violations).
"""

from __future__ import annotations

import argparse
import json
import sys

from gossipsim import harness, verify
from gossipsim.errors import ConfigError, GossipSimError, NumericalOverflowError

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="sim",
        description="Asynchronous decentralized-SGD simulator and bound verifier.")
    sub = p.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one simulation from a config file")
    run_p.add_argument("config")
    run_p.add_argument("--out", default=None, help="output directory override")

    sweep_p = sub.add_parser("sweep", help="run the sweep declared in the config")
    sweep_p.add_argument("config")
    sweep_p.add_argument("--out", default=None)

    verify_p = sub.add_parser("verify", help="fuzz the analysis inequalities")
    verify_p.add_argument("--instances", type=int, default=1000)
    verify_p.add_argument("--seed", type=int, default=0)
    verify_p.add_argument("--json", default=None, help="write the JSON report here")

    base_p = sub.add_parser("baseline", help="compare against the synchronous baseline")
    base_p.add_argument("config")
    base_p.add_argument("--out", default=None)
    return p


def _cmd_run(args) -> int:
    spec = harness.parse_config(args.config)
    outdir = harness.run_single(spec, args.out)
    print(f"wrote {outdir}/trace.csv and summary.json")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    spec = harness.parse_config(args.config)
    outdir = harness.run_experiment(spec, args.out)
    print(f"wrote sweep artifacts under {outdir}")
    return EXIT_OK


def _cmd_verify(args) -> int:
    report = verify.run_fuzz(n_instances=args.instances, seed=args.seed)
    print(f"{'check':<20} {'instances':>9} {'violations':>10} "
          f"{'worst_slack':>14} {'status':>7}")
    for name in ("deviation_mixing", "weighted_gap"):
        r = report[name]
        status = "pass" if r["passed"] else "FAIL"
        print(f"{name:<20} {report['instances_per_check']:>9} "
              f"{r['violations']:>10} {r['worst_slack']:>14.6g} {status:>7}")
    payload = json.dumps(report, sort_keys=True)
    if args.json:
        with open(args.json, "w") as fh:
            fh.write(payload + "\n")
        print(f"report written to {args.json}")
    else:
        print(payload)
    return EXIT_OK if report["passed"] else EXIT_FAIL


def _cmd_baseline(args) -> int:
    spec = harness.parse_config(args.config)
    paired = harness.compare_baseline(spec, args.out)
    for variant, row in paired.items():
        print(f"{variant:>6}: final_global_loss={row['final_global_loss']:.6g} "
              f"final_mixed_grad_sq={row['final_mixed_grad_sq']:.6g}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {"run": _cmd_run, "sweep": _cmd_sweep,
                "verify": _cmd_verify, "baseline": _cmd_baseline}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalOverflowError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except GossipSimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
