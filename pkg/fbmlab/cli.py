"""fbmlab command line.

Exit codes: 0 pass, 1 acceptance failure, 2 usage or config error.
"""
import argparse
import logging
from pathlib import Path
from typing import Dict, Optional, Sequence

from fbmlab import __version__
from fbmlab.config import ExperimentConfig, ExperimentKind, config_record, load_config, parse_config
from fbmlab.errors import ConfigError, CorruptReportError, FbmLabError
from fbmlab.fbm import SamplingMethod, TimeGrid, sample_fbm
from fbmlab.harness import replay, run_experiment, suite
from fbmlab.sde import Scheme, solve_sde
from fbmlab.vector_fields import VECTOR_FIELD_BUILDERS, build_vector_fields

logger = logging.getLogger(__name__)

EXIT_PASS, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

FAMILIES = {
    "localtime": (ExperimentKind.LOCALTIME_IDENTITY,),
    "holder": (
        ExperimentKind.HOLDER_TIME,
        ExperimentKind.HOLDER_SPACE,
        ExperimentKind.HOLDER_CALIBRATION,
        ExperimentKind.PATH_HOLDER,
    ),
    "density": (ExperimentKind.DENSITY_SCALING, ExperimentKind.TAIL_CHECK, ExperimentKind.EXISTENCE),
    "run": tuple(ExperimentKind),
}


def _write_path(path, out: Path):
    if out.suffix == ".csv":
        path.to_csv(out)
    else:
        path.to_binary(out)
    logger.info(f"Wrote {out}")


def _grid(args) -> TimeGrid:
    return TimeGrid(0.0, args.t_end, args.n_steps)


def _cmd_fbm(args) -> int:
    path = sample_fbm(args.h, _grid(args), args.dim, args.seed, SamplingMethod(args.method))
    _write_path(path, Path(args.out))
    return EXIT_PASS


def _cmd_solve(args) -> int:
    vf = build_vector_fields(args.field, args.dim)
    x0 = args.x0 if len(args.x0) == args.dim else args.x0 * args.dim
    driver = sample_fbm(args.h, _grid(args), args.dim, args.seed, SamplingMethod(args.method))
    solution = solve_sde(vf, x0, driver, Scheme(args.scheme), args.substeps)
    _write_path(solution, Path(args.out))
    return EXIT_PASS


def _load(args, command: str) -> ExperimentConfig:
    config = load_config(args.config)
    if config.kind not in FAMILIES[command]:
        allowed = [k.value for k in FAMILIES[command]]
        raise ConfigError([f"kind: {command} runs {allowed}, got {config.kind.value}"])
    if args.seed is not None:
        # re-parsed so that the seed goes through the same gates as the file
        config = parse_config({**config_record(config), "master_seed": args.seed})
    return config


def _cmd_experiment(args) -> int:
    config = _load(args, args.command)
    out = Path(args.out) if args.out else Path(config.output_dir) / config.label
    report = run_experiment(config, args.threads, out, progress=True)
    return EXIT_PASS if report.passed else EXIT_FAIL


def _overrides(items: Sequence[str]) -> Dict[str, str]:
    malformed = [item for item in items if "=" not in item]
    if malformed:
        raise ConfigError([f"--set: expected KEY=VALUE, got {item!r}" for item in malformed])
    return dict(item.split("=", 1) for item in items)


def _cmd_replay(args) -> int:
    overrides = _overrides(args.set)
    report = replay(args.report, args.threads, overrides, args.out)
    return EXIT_PASS if report.passed else EXIT_FAIL


def _cmd_suite(args) -> int:
    result = suite(args.manifest, args.threads, args.out or "out", progress=True)
    for row in result.rows:
        print(f"{row['status']:8} {row['name']:32} {row['message']}")
    return result.exit_code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fbmlab", description="SDEs driven by fractional Brownian motion")
    parser.add_argument("--version", action="version", version=f"fbmlab {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    commands = parser.add_subparsers(dest="command", required=True)

    def sampling(sub):
        sub.add_argument("--h", type=float, required=True)
        sub.add_argument("--n-steps", type=int, default=1024)
        sub.add_argument("--t-end", type=float, default=1.0)
        sub.add_argument("--dim", type=int, default=1)
        sub.add_argument("--seed", type=int, default=0)
        sub.add_argument("--method", choices=[m.value for m in SamplingMethod], default="davies_harte")
        sub.add_argument("--out", required=True, help="output file, .csv for CSV, anything else for binary")

    fbm = commands.add_parser("fbm", help="sample one fBm path")
    sampling(fbm)
    fbm.set_defaults(handler=_cmd_fbm)

    solve = commands.add_parser("solve", help="solve the SDE along one sampled driver")
    sampling(solve)
    solve.add_argument("--field", choices=sorted(VECTOR_FIELD_BUILDERS), default="two_plus_sin")
    solve.add_argument("--x0", type=float, nargs="+", default=[0.0])
    solve.add_argument("--scheme", choices=[s.value for s in Scheme], default="wong_zakai")
    solve.add_argument("--substeps", type=int, default=None)
    solve.set_defaults(handler=_cmd_solve)

    for name, help_text in [
        ("localtime", "run a localtime_identity config"),
        ("holder", "run a holder_time, holder_space, holder_calibration or path_holder config"),
        ("density", "run a density_scaling, tail_check or existence config"),
        ("run", "run any experiment config"),
    ]:
        sub = commands.add_parser(name, help=help_text)
        sub.add_argument("--config", required=True)
        sub.add_argument("--seed", type=int, default=None, help="override master_seed")
        sub.add_argument("--threads", type=int, default=1)
        sub.add_argument("--out", default=None)
        sub.set_defaults(handler=_cmd_experiment)

    rerun = commands.add_parser("replay", help="re-run the config embedded in a report")
    rerun.add_argument("report")
    rerun.add_argument("--threads", type=int, default=1)
    rerun.add_argument("--out", default=None)
    rerun.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="rejected on replay")
    rerun.set_defaults(handler=_cmd_replay)

    manifest = commands.add_parser("suite", help="run every [[experiment]] of a manifest")
    manifest.add_argument("manifest")
    manifest.add_argument("--threads", type=int, default=1)
    manifest.add_argument("--out", default=None)
    manifest.set_defaults(handler=_cmd_suite)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO)
    try:
        return args.handler(args)
    except (ConfigError, CorruptReportError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_USAGE
    except FbmLabError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_FAIL
