"""Multi-way spectral clustering toolkit - Entry Point."""
import argparse
import logging
import sys
from pathlib import Path
from types import TracebackType

from config import ExperimentConfig
from errors import ConfigError, DcmtfError
from matrix_io import MatrixFormat, write_labels, write_matrix
from reports import dumps_report, emit_report
from runner import ExperimentRunner, chains_from_report, evaluate_report
from synth import generate, four_entity_plant_spec
from utils import get_version

DEFAULT_LOG_FILE = "LatestLog.txt"
DEFAULT_REPORT = "report.json"

# subcommand -> method forced onto the configuration (None keeps [experiment] method)
RUN_COMMANDS = {
    "run": None,
    "train-dcmtf": "dcmtf",
    "run-cfrm": "cfrm",
    "spectral": "spectral",
}


def setup_logging(log_file: str | Path = DEFAULT_LOG_FILE, verbose: bool = False) -> Path:
    log_file = Path(log_file)
    log_file.parent.mkdir(parents=True, exist_ok=True)
    console = logging.StreamHandler(sys.stderr)
    console.setLevel(logging.DEBUG if verbose else logging.INFO)
    logging.basicConfig(
        level=logging.DEBUG,
        format='%(asctime)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(log_file, mode='w', encoding='utf-8'),
            console,
        ],
        force=True,
    )
    return log_file


def global_exception_handler(
    exc_type: type[BaseException],
    exc_value: BaseException,
    exc_traceback: TracebackType | None
):
    """Global handler for uncaught exceptions."""
    if issubclass(exc_type, KeyboardInterrupt):
        sys.__excepthook__(exc_type, exc_value, exc_traceback)
        return

    logging.critical(
        "Uncaught exception",
        exc_info=(exc_type, exc_value, exc_traceback)
    )
    print(f"Uncaught exception: {exc_value}\nSee the log file for details.", file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--seed', type=int, help='Override [experiment] seed')
    common.add_argument('--threads', type=int, help='Worker threads (default: physical cores)')
    common.add_argument('--out', type=Path, help='Output file or directory')
    common.add_argument('-v', '--verbose', action='store_true', help='Debug output on the console')
    common.add_argument('--log-file', type=Path, default=Path(DEFAULT_LOG_FILE), help='Log file path')

    parser = argparse.ArgumentParser(description="Multi-way spectral clustering of relational matrices")
    parser.add_argument('--version', action='version', version=f"%(prog)s {get_version()}")
    sub = parser.add_subparsers(dest='command', required=True)

    synth = sub.add_parser('synth', parents=[common], help='Generate planted data and a runnable config')
    synth.add_argument('--config', type=Path, help='Config with a [synth] section (default: the four-entity plant)')
    synth.add_argument('--strength', type=float, help='Association strength for the default plant')

    for name, method in RUN_COMMANDS.items():
        helptext = f"Run {method}" if method else "Run the configured method"
        cmd = sub.add_parser(name, parents=[common], help=helptext)
        cmd.add_argument('--config', type=Path, required=True, help='Experiment INI file')

    sweep = sub.add_parser('sweep', parents=[common], help='One run per [sweep] value plus a summary')
    sweep.add_argument('--config', type=Path, required=True, help='Experiment INI file')

    evaluate = sub.add_parser('evaluate', parents=[common], help='Score a report against truth labels')
    evaluate.add_argument('--report', type=Path, required=True)
    evaluate.add_argument('--labels', action='append', default=[], metavar='ENTITY=PATH',
                          help='Label file for one entity (repeatable)')

    chains = sub.add_parser('chains', parents=[common], help='Follow cluster chains over a report')
    chains.add_argument('--report', type=Path, required=True)
    chains.add_argument('--start', required=True, metavar='MATRIX,U,V', help='Starting block')
    chains.add_argument('--max-len', type=int)
    return parser


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    config = ExperimentConfig(args.config)
    if args.seed is not None:
        config.Seed.set(args.seed)
    if args.threads is not None:
        config.Threads.set(args.threads)
    return config


def _print_or_emit(payload: dict, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(dumps_report(payload))
    else:
        emit_report(payload, out)


def cmd_synth(args: argparse.Namespace) -> None:
    if args.config:
        config = load_config(args)
        spec = config.plant_spec()
        if spec is None:
            raise ConfigError(f"{args.config} has no [synth] section")
    else:
        config = ExperimentConfig()
        seed = args.seed if args.seed is not None else 0
        spec = four_entity_plant_spec(seed) if args.strength is None else four_entity_plant_spec(seed, args.strength)
        config.Seed.set(seed)
    out = args.out or Path("synth")
    matrices, truth = generate(spec)
    names = spec.names()

    run_config = ExperimentConfig()
    run_config.Method.set(config.Method.get() or "dcmtf")
    run_config.Seed.set(config.seed())
    for e, (name, count, k) in enumerate(zip(names, spec.entity_sizes, spec.ks), start=1):
        label_path = write_labels(out / f"{name}.labels.csv", truth.indicators[e].assignments)
        section = f"entity:{name}"
        run_config.config.add_section(section)
        run_config.config.set(section, "count", str(count))
        run_config.config.set(section, "k", str(k))
        run_config.config.set(section, "labels", label_path.name)
    for mat in matrices:
        path = write_matrix(out / f"m{mat.id}.mtx", mat, MatrixFormat.MTX)
        section = f"matrix:m{mat.id}"
        run_config.config.add_section(section)
        run_config.config.set(section, "rows", names[mat.rows - 1])
        run_config.config.set(section, "cols", names[mat.cols - 1])
        run_config.config.set(section, "path", path.name)
        run_config.config.set(section, "format", MatrixFormat.MTX.value)
        run_config.config.set(section, "datatype", mat.datatype.value)
    run_config.save(out / "experiment.ini")

    emit_report(
        {
            "version": get_version(),
            "seed": spec.seed,
            "strength": spec.strength,
            "noise": spec.noise,
            "entities": {name: truth.indicators[e].assignments for e, name in enumerate(names, start=1)},
            "entity_perms": {name: truth.entity_perms[e] for e, name in enumerate(names, start=1)},
            "associations": {f"m{m}": a for m, a in truth.associations.items()},
        },
        out / "truth.json",
    )
    logging.info(f"Planted data written to {out}")


def cmd_run(args: argparse.Namespace) -> None:
    config = load_config(args)
    method = RUN_COMMANDS[args.command]
    if method:
        config.Method.set(method)
    out = args.out or config.resolve_path(config.Output.get() or DEFAULT_REPORT)
    runner = ExperimentRunner(config, log=logging.info)
    runner.run_to(out)


def cmd_sweep(args: argparse.Namespace) -> None:
    config = load_config(args)
    out = args.out or config.resolve_path(config.Output.get() or "sweep")
    runner = ExperimentRunner(config, log=logging.info)
    runner.sweep(out)


def cmd_evaluate(args: argparse.Namespace) -> None:
    labels = {}
    for item in args.labels:
        name, sep, path = item.partition("=")
        if not sep or not name or not path:
            raise ConfigError(f"--labels expects ENTITY=PATH, got '{item}'")
        labels[name] = Path(path)
    metrics = evaluate_report(args.report, labels or None)
    _print_or_emit(metrics, args.out)


def cmd_chains(args: argparse.Namespace) -> None:
    parts = args.start.split(",")
    if len(parts) != 3:
        raise ConfigError(f"--start expects MATRIX,U,V, got '{args.start}'")
    try:
        start = (parts[0].strip(), int(parts[1]), int(parts[2]))
    except ValueError:
        raise ConfigError(f"--start cluster indices must be integers, got '{args.start}'") from None
    chain = chains_from_report(args.report, start, args.max_len)
    _print_or_emit(chain, args.out)


COMMANDS = {
    "synth": cmd_synth,
    "sweep": cmd_sweep,
    "evaluate": cmd_evaluate,
    "chains": cmd_chains,
    **{name: cmd_run for name in RUN_COMMANDS},
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    log_file = setup_logging(args.log_file, args.verbose)
    sys.excepthook = global_exception_handler

    try:
        logging.info(f"Starting '{args.command}' (version {get_version()})")
        COMMANDS[args.command](args)
    except DcmtfError as e:
        logging.error(f"{type(e).__name__}: {e}")
        print(f"Error: {e}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logging.critical(f"Fatal error: {e}", exc_info=True)
        print(f"Fatal error: {e}\n\nLog file: {log_file}", file=sys.stderr)
        return 1
    logging.info(f"'{args.command}' finished")
    return 0


if __name__ == "__main__":
    sys.exit(main())
