"""Command-line entry point: ``pfedhpo <stage> [flags]``.

Exit codes: 0 success, 2 config error, 3 numeric failure, 4 missing artifact.
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Sequence

from pfedhpo.datagen import CsvFormatError, PartitionError
from pfedhpo.fl import DivergenceError
from pfedhpo.harness.artifacts import MissingArtifact
from pfedhpo.harness.config import ConfigError
from pfedhpo.harness import pipeline
from pfedhpo.problem import BudgetExceeded

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_MISSING = 0, 2, 3, 4

log = logging.getLogger("pfedhpo")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (YAML)")
    common.add_argument("--seed", type=int, help="master seed; overrides the config")
    common.add_argument("--out", help="run directory (default: the config's output_dir)")
    common.add_argument("--threads", type=int, default=1, help="client-parallel worker threads")
    common.add_argument("--force", action="store_true", help="overwrite this stage's outputs")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="pfedhpo", description="Personalized federated HPO experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("partition", parents=[common], help="build the federation and client encodings")
    sub.add_parser("pretrain", parents=[common], help="run the checkpointed reference course")
    for name, help_text in (("tune", "run a tuning method to budget exhaustion"),
                            ("evaluate", "full-fidelity evaluation of a tuned method")):
        sp = sub.add_parser(name, parents=[common], help=help_text)
        sp.add_argument("--method", required=True, choices=sorted(pipeline.METHODS))
        if name == "tune":
            sp.add_argument("--paper-faithful", action="store_true",
                            help="plain REINFORCE: no reward baseline, no entropy bonus")
    rp = sub.add_parser("report", help="compare evaluated runs")
    rp.add_argument("runs", nargs="+", help="run directories")
    rp.add_argument("--out", required=True, help="directory for the comparison CSVs")
    rp.add_argument("--force", action="store_true")
    return p


def run(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "partition":
            if not args.config:
                raise ConfigError("--config: missing field")
            r = pipeline.cmd_partition(args.config, args.out, args.seed, args.force)
            print(f"partition: {len(r.manifest.artifacts())} files in {r.run_dir}")
        elif args.command == "report":
            paths = pipeline.cmd_report(args.runs, args.out, args.force)
            print("report: " + ", ".join(str(p) for p in paths))
        else:
            if args.threads < 1:
                raise ConfigError("--threads: must be >= 1")
            r = pipeline.open_run(args.out, args.config, args.seed)
            if args.command == "pretrain":
                out = pipeline.cmd_pretrain(r, args.force, args.threads)
                print(f"pretrain: {r.cfg.rst.T} rounds in {out}")
            elif args.command == "tune":
                out = pipeline.cmd_tune(r, args.method, args.paper_faithful, args.force, args.threads)
                print(f"tune: {pipeline.method_name(args.method)} results in {out}")
            else:
                rep = pipeline.cmd_evaluate(r, args.method, args.force, args.threads)
                print(f"evaluate: {rep['method']} weighted test accuracy "
                      f"{rep['weighted_test_accuracy']:.4f} after {rep['rounds_consumed']} tuning rounds")
    except MissingArtifact as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MISSING
    except (DivergenceError, PartitionError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, CsvFormatError, BudgetExceeded) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as e:
        # Remaining validation errors from the library (e.g. budget infeasible).
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MISSING
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
