"""``scorebayes estimate|sample|prior-eval|reproduce <example> --config <path> --out <dir> --seed <u64>``."""
import argparse
import hashlib
import json
import os
import sys
from importlib import resources

import numpy as np

from .config import EXAMPLES, U64_MAX, ExperimentConfig
from .errors import ConfigError, ScoreBayesError
from .io import json_text
from .pipelines import COMMANDS, run

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
RESULT_FILE = "result.json"


def load_schema():
    return json.loads(resources.files("scorebayes").joinpath("data/result_schema.json").read_text())


def _u64(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if not 0 <= v <= U64_MAX:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message, "cli")


def build_parser():
    p = _Parser(prog="scorebayes", description=__doc__)
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("example", choices=EXAMPLES)
    p.add_argument("--config", required=True, help="flat key = value file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=_u64, help="overrides the config seed")
    return p


def execute(argv):
    """Run one command; returns ``(bundle, files)`` without writing anything."""
    args = build_parser().parse_args(argv)
    overrides = {} if args.seed is None else {"seed": args.seed}
    cfg = ExperimentConfig.load(args.config, overrides)
    declared = cfg.values.get("example")
    if declared is not None and declared != args.example:
        raise ConfigError(f"config is for example {declared!r}, command line asks for {args.example!r}",
                          "config")
    result = run(args.command, args.example, cfg)
    return args, result


def write_outputs(out_dir, result):
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for name in sorted(result.files):
        text = result.files[name]
        with open(os.path.join(out_dir, name), "w", newline="") as fh:
            fh.write(text)
        lines = text.splitlines()
        entries.append({"name": name, "sha256": hashlib.sha256(text.encode()).hexdigest(),
                        "columns": lines[0].split(","), "rows": len(lines) - 1})
    bundle = dict(result.bundle, files=entries)
    text = json_text(bundle)
    with open(os.path.join(out_dir, RESULT_FILE), "w") as fh:
        fh.write(text)
    return json.loads(text)


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    try:
        args, result = execute(argv)
        with np.errstate(all="ignore"):
            write_outputs(args.out, result)
    except ConfigError as exc:
        print(f"scorebayes: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ScoreBayesError as exc:
        op = exc.operation or "unknown"
        print(f"scorebayes: numerical failure in {op}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ArithmeticError, np.linalg.LinAlgError, ValueError) as exc:
        print(f"scorebayes: numerical failure in {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
