"""Command-line entry point.

Subcommands follow the diagnostic workflow: generate data, train, attribute,
diagnose (screen, optionally confirm with a Z-test), build the DASH
consensus, run canned experiments and render the disclosure report.

Exit codes: 0 success (no instability), 2 usage or parameter error,
3 instability detected (``diagnose`` only), 4 I/O or dataset parse error.
"""
import argparse
import json
import logging
import re
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import structlog

from dashlab import __version__
from dashlab.attribution import (AttributionMethod, load_attribution_matrix, save_attribution_matrix,
                                 train_and_attribute)
from dashlab.boost import TrainConfig, fit, save_model
from dashlab.dash import (ConsensusMethod, ProgressiveThresholds, consensus, consensus_ranking,
                          group_attribution, progressive_dash)
from dashlab.errors import DatasetParseError, ParameterError
from dashlab.experiments import EXPERIMENTS, ExperimentConfig, run_named, write_outputs
from dashlab.schemas import ConsensusReport
from dashlab.settings import Settings, load_settings, settings
from dashlab.stability import (CorrelationGroups, Verdict, correlate_groups, diagnose_pairs, diagnostic_report,
                               screen)
from dashlab.synthdata import Dataset, DgpConfig, GroupSpec, default_betas, load_csv, sample_dataset, save_csv

logger = structlog.get_logger()

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_UNSTABLE = 3
EXIT_IO = 4

PACKAGE_ROOT = Path(__file__).resolve().parent.parent


def configure_logging(level: str = "INFO", fmt: str = "console"):
    """Configure structlog over stdlib logging; records go to stderr."""
    renderer = structlog.processors.JSONRenderer() if fmt == "json" else structlog.dev.ConsoleRenderer()
    structlog.configure(
        processors=[
            structlog.stdlib.filter_by_level,
            structlog.stdlib.add_logger_name,
            structlog.stdlib.add_log_level,
            structlog.stdlib.PositionalArgumentsFormatter(),
            structlog.processors.TimeStamper(fmt="iso"),
            renderer,
        ],
        context_class=dict,
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=False,
    )
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(message)s",
        stream=sys.stderr,
        force=True,
    )


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _group_shape(text: str):
    match = re.fullmatch(r"\s*(\d+)\s*[xX]\s*(\d+)\s*", text)
    if not match:
        raise argparse.ArgumentTypeError(f"expected LxM such as 4x5, got {text!r}")
    return int(match.group(1)), int(match.group(2))


def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _training_flags() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    group = parent.add_argument_group("training")
    group.add_argument("--rounds", type=int, dest="rounds", help="boosting rounds T")
    group.add_argument("--depth", type=int, dest="max_depth", help="maximum tree depth")
    group.add_argument("--eta", type=float, dest="learning_rate", help="learning rate")
    group.add_argument("--subsample", type=float, help="row subsample fraction")
    group.add_argument("--colsample", type=float, help="column subsample fraction")
    group.add_argument("--min-leaf", type=int, dest="min_leaf", help="minimum rows per leaf")
    group.add_argument("--seed", type=int, help="base seed")
    return parent


def _data_flags() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--data", required=True, help="dataset CSV")
    parent.add_argument("--target", default="y", help="target column name or index (default: y)")
    return parent


def _attribution_flags() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    group = parent.add_argument_group("attribution")
    group.add_argument("--background-size", type=int, dest="background_size")
    group.add_argument("--background-seed", type=int, dest="background_seed")
    group.add_argument("--eval-size", type=int, dest="eval_size")
    group.add_argument("--eval-seed", type=int, dest="eval_seed")
    return parent


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dashlab", description="Attribution stability laboratory")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="YAML run configuration")
    parser.add_argument("--threads", type=int, help="worker processes for model fan-out")
    parser.add_argument("--log-level", dest="log_level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    parser.add_argument("--log-format", dest="log_format", choices=["console", "json"])
    sub = parser.add_subparsers(dest="command", required=True)

    training, data, attribution = _training_flags(), _data_flags(), _attribution_flags()

    p = sub.add_parser("generate", help="sample a synthetic dataset")
    p.add_argument("--groups", type=_group_shape, required=True, help="LxM: L groups of M features")
    p.add_argument("--rho", type=float, required=True, help="within-group correlation")
    p.add_argument("--extras", type=int, help="independent features outside any group")
    p.add_argument("--n", type=int, dest="n_samples", help="rows")
    p.add_argument("--noise-sd", type=float, dest="noise_sd")
    p.add_argument("--beta-mode", dest="beta_mode", choices=["symmetric", "graded"])
    p.add_argument("--beta-base", type=float, dest="beta_base")
    p.add_argument("--beta-spread", type=float, dest="beta_spread")
    p.add_argument("--seed", type=int)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(handler=cmd_generate)

    p = sub.add_parser("train", parents=[data, training], help="fit one ensemble")
    p.add_argument("-o", "--output", required=True, help="model JSON")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("attribute", parents=[data, training, attribution], help="build an attribution matrix")
    p.add_argument("-M", "--models", type=int, default=25)
    p.add_argument("--method", choices=[m.value for m in AttributionMethod], default="shap")
    p.add_argument("-o", "--output", required=True, help="matrix CSV (sidecar written next to it)")
    p.set_defaults(handler=cmd_attribute)

    p = sub.add_parser("diagnose", parents=[data, training, attribution], help="screen correlated pairs")
    p.add_argument("--threshold", type=float, dest="correlation_threshold")
    p.add_argument("--z", type=float, dest="z_threshold")
    p.add_argument("--confirm", action="store_true", help="add a Z-test from screen_models models")
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.add_argument("-o", "--output", help="report path (default: stdout)")
    p.set_defaults(handler=cmd_diagnose)

    p = sub.add_parser("dash", parents=[training, attribution], help="DASH consensus attribution")
    p.add_argument("--data", help="dataset CSV")
    p.add_argument("--target", default="y", help="target column name or index (default: y)")
    p.add_argument("-M", "--models", type=int, default=25)
    p.add_argument("--method", choices=[m.value for m in ConsensusMethod], default="mean")
    p.add_argument("--trim", type=float, default=0.1)
    p.add_argument("--matrix", help="aggregate an existing attribution matrix instead of training")
    p.add_argument("--progressive", action="store_true", help="size the ensemble with screen/confirm/resolve")
    p.add_argument("--threshold", type=float, dest="correlation_threshold")
    p.add_argument("--z", type=float, dest="z_threshold")
    p.add_argument("-o", "--output", help="consensus JSON (default: stdout)")
    p.set_defaults(handler=cmd_dash)

    p = sub.add_parser("experiment", parents=[training], help="run a canned experiment")
    p.add_argument("name", choices=sorted(EXPERIMENTS))
    p.add_argument("--out", default="results", help="output directory")
    p.add_argument("--rhos", type=_float_list)
    p.add_argument("--rho", type=float)
    p.add_argument("--depths", type=_int_list)
    p.add_argument("--seeds", type=int, help="seeds per cell")
    p.add_argument("-M", "--models", type=int, dest="M")
    p.add_argument("--Ms", type=_int_list)
    p.add_argument("--delta-betas", type=_float_list, dest="delta_betas")
    p.add_argument("--n", type=int, dest="n_samples")
    p.set_defaults(handler=cmd_experiment)

    p = sub.add_parser("report", parents=[data, training, attribution], help="human-readable disclosure")
    p.add_argument("-M", "--models", type=int, default=25)
    p.add_argument("--threshold", type=float, dest="correlation_threshold")
    p.add_argument("--z", type=float, dest="z_threshold")
    p.add_argument("--template", dest="disclosure_template")
    p.add_argument("-o", "--output", help="report path (default: stdout)")
    p.set_defaults(handler=cmd_report)
    return parser


def _settings_from(args: argparse.Namespace) -> Settings:
    overrides = {k: v for k, v in vars(args).items() if k in Settings.model_fields}
    if getattr(args, "groups", None):
        overrides["group_count"], overrides["group_size"] = args.groups
    return load_settings(args.config, **overrides)


def _train_config(s: Settings) -> TrainConfig:
    return TrainConfig(rounds=s.rounds, max_depth=s.max_depth, learning_rate=s.learning_rate,
                       subsample=s.subsample, colsample=s.colsample, min_leaf=s.min_leaf, seed=s.seed)


def _attribution_kwargs(s: Settings) -> Dict[str, int]:
    return dict(background_size=s.background_size, background_seed=s.background_seed,
                eval_size=s.eval_size, eval_seed=s.eval_seed, threads=s.threads)


def _emit(text: str, output: Optional[str]):
    if output:
        Path(output).write_text(text, encoding="utf-8")
        logger.info("output_written", path=output)
    else:
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_generate(args: argparse.Namespace, s: Settings) -> int:
    spec = GroupSpec(s.group_count, s.group_size, s.rho, s.extras)
    betas = default_betas(spec, s.beta_mode, s.beta_base, s.beta_spread)
    dataset = sample_dataset(DgpConfig(groups=spec, betas=tuple(betas), noise_sd=s.noise_sd,
                                       n_samples=s.n_samples, seed=s.seed))
    save_csv(dataset, args.output)
    logger.info("dataset_generated", path=args.output, n=dataset.n_samples, p=dataset.n_features)
    return EXIT_OK


def cmd_train(args: argparse.Namespace, s: Settings) -> int:
    dataset = load_csv(args.data, args.target)
    ensemble = fit(dataset, _train_config(s))
    save_model(ensemble, args.output)
    return EXIT_OK


def _load_grouped(args: argparse.Namespace, s: Settings) -> Tuple[Dataset, CorrelationGroups]:
    """Dataset labelled with its detected correlation groups, so first-movers are recorded."""
    dataset = load_csv(args.data, args.target)
    groups = correlate_groups(dataset.features, s.correlation_threshold)
    return dataset.with_groups(groups.group_of(dataset.n_features)), groups


def cmd_attribute(args: argparse.Namespace, s: Settings) -> int:
    dataset, _ = _load_grouped(args, s)
    matrix, _ = train_and_attribute(dataset, _train_config(s), args.models, s.seed, args.method,
                                    **_attribution_kwargs(s))
    save_attribution_matrix(matrix, args.output)
    return EXIT_OK


def cmd_diagnose(args: argparse.Namespace, s: Settings) -> int:
    dataset, groups = _load_grouped(args, s)
    pairs = groups.within_pairs()
    screens, diagnostics = [], []
    if pairs:
        ensemble = fit(dataset, _train_config(s))
        screens = [screen(ensemble, pair, z_threshold=s.z_threshold) for pair in pairs]
        if args.confirm:
            matrix, _ = train_and_attribute(dataset, _train_config(s), s.screen_models, s.seed,
                                            **_attribution_kwargs(s))
            diagnostics = diagnose_pairs(matrix, pairs, s.z_threshold)
    report = diagnostic_report(groups, screens, diagnostics, dataset.names)

    if args.confirm and diagnostics:
        unstable = [(d.j, d.k) for d in diagnostics if d.verdict != Verdict.STABLE]
    else:
        unstable = [(r.j, r.k) for r in screens if r.flagged]

    if args.format == "json":
        _emit(json.dumps(report.model_dump(), indent=2), args.output)
    else:
        frame = pd.DataFrame([doc.model_dump() for doc in report.screens])
        if report.pairs:
            z_cols = pd.DataFrame([doc.model_dump() for doc in report.pairs])[
                ["j", "k", "M", "z", "snr", "flip_empirical", "flip_predicted", "verdict"]]
            frame = frame.merge(z_cols, on=["j", "k"], how="left")
        _emit(frame.to_csv(index=False, float_format="%.17g", lineterminator="\n"), args.output)

    logger.info("diagnosis_finished", groups=len(groups.groups), pairs=len(pairs), unstable=len(unstable))
    return EXIT_UNSTABLE if unstable else EXIT_OK


def _consensus_report(result, ranking) -> ConsensusReport:
    return ConsensusReport(
        method=result.method.value, trim=result.trim, M=result.M, values=[float(v) for v in result.values],
        feature_names=list(result.names), tied_groups=[list(g) for g in result.tied_groups],
        balanced=result.balanced, first_mover_counts=[int(c) for c in result.first_mover_counts],
        ranking=ranking,
    )


def cmd_dash(args: argparse.Namespace, s: Settings) -> int:
    if args.matrix:
        matrix = load_attribution_matrix(args.matrix)
        groups = None
    elif not args.data:
        raise ParameterError("dash needs --data or --matrix")
    else:
        dataset, groups = _load_grouped(args, s)
        if args.progressive:
            thresholds = ProgressiveThresholds(
                screen_models=s.screen_models, confirm_models=s.confirm_models,
                resolve_models=s.resolve_models, z_threshold=s.z_threshold,
                borderline_low=s.borderline_low, borderline_high=s.borderline_high,
            )
            kwargs = _attribution_kwargs(s)
            threads = kwargs.pop("threads")
            outcome = progressive_dash(dataset, _train_config(s), thresholds=thresholds,
                                       correlation_threshold=s.correlation_threshold, seed_base=s.seed,
                                       threads=threads, **kwargs)
            logger.info("progressive_stage", stage=outcome.stage_reached.value, models=outcome.total_models)
            result = outcome.consensus
            if args.method != ConsensusMethod.MEAN.value:
                logger.warning("progressive_uses_mean", requested=args.method)
            _emit(json.dumps(_consensus_report(result, consensus_ranking(result)).model_dump(), indent=2),
                  args.output)
            return EXIT_OK
        matrix, _ = train_and_attribute(dataset, _train_config(s), args.models, s.seed,
                                        **_attribution_kwargs(s))
    result = consensus(matrix, args.method, args.trim, groups=groups, z_threshold=s.z_threshold)
    _emit(json.dumps(_consensus_report(result, consensus_ranking(result)).model_dump(), indent=2), args.output)
    return EXIT_OK


def cmd_experiment(args: argparse.Namespace, s: Settings) -> int:
    options = {k: getattr(args, k) for k in ("rhos", "rho", "depths", "seeds", "M", "Ms", "delta_betas")}
    result = run_named(args.name, options, ExperimentConfig.from_settings(s))
    for note in result.notes:
        logger.warning("experiment_note", experiment=args.name, note=note)
    write_outputs(result, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Disclosure report
# ---------------------------------------------------------------------------

SECTION_MARKER = re.compile(r"<!--\s*section:\s*(\w+)\s*-->")

BUILTIN_TEMPLATE = {
    "header": "# Attribution stability report\n\n"
              "Dataset: {dataset} ({n_features} features, {n_samples} rows). "
              "Consensus over M = {models} models ({method}).",
    "unstable_group": "Features [{features}] form a correlated group (|ρ| > {threshold}). "
                      "Their relative ranking is unstable across training seeds "
                      "(estimated flip rate: {flip_rate}%). "
                      "They should be interpreted as interchangeable contributors.",
    "between_stable": "The between-group ranking is stable (Z > {z_threshold}).",
    "between_unstable": "Some between-group orderings are not resolved at M = {models} "
                        "(smallest Z = {min_z}); train more models before ranking those groups.",
    "no_instability": "No unstable groups were detected: every within-group ordering passed "
                      "the Z-test (Z > {z_threshold}).",
    "groups_header": "## Group-level attribution",
    "group_line": "The correlated group {{{features}}} contributes a total DASH attribution of {mass} "
                  "to the prediction ({share}% of total).",
    "group_unstable": "Within this group, individual feature rankings are unstable across training seeds "
                      "(estimated flip rate: {flip_rate}%). The group's total importance is stable; "
                      "individual feature importance within the group should be interpreted as "
                      "interchangeable. For variable selection, any feature from this group may be chosen; "
                      "the choice is arbitrary with respect to model quality.",
    "ranking_header": "## Consensus ranking",
    "ranking_line": "{position}. {features} ({value})",
}


def load_template(path: Optional[str]) -> Dict[str, str]:
    """Sections of the disclosure template; the built-in text fills any gap."""
    sections = dict(BUILTIN_TEMPLATE)
    if not path:
        return sections
    candidate = Path(path)
    if not candidate.is_absolute() and not candidate.exists():
        candidate = PACKAGE_ROOT / candidate
    if not candidate.exists():
        logger.warning("disclosure_template_missing", path=str(path))
        return sections
    parts = SECTION_MARKER.split(candidate.read_text(encoding="utf-8"))
    for name, body in zip(parts[1::2], parts[2::2]):
        sections[name] = body.strip()
    return sections


def render_report(template: Dict[str, str], *, dataset_name: str, names: Sequence[str], n_samples: int,
                  groups: Sequence[Sequence[int]], within, between, result, threshold: float,
                  z_threshold: float) -> str:
    def label(members):
        return ", ".join(names[j] for j in members)

    blocks = [template["header"].format(dataset=dataset_name, n_features=len(names), n_samples=n_samples,
                                        models=result.M, method=result.method.value)]
    flips_by_group = {}
    for d in within:
        for g, members in enumerate(groups):
            if d.j in members and d.k in members and d.verdict != Verdict.STABLE:
                flips_by_group.setdefault(g, []).append(d.flip_empirical)

    flip_text = {g: f"{100.0 * max(flips):.0f}" for g, flips in flips_by_group.items()}

    # No between-group pairs means nothing to claim about their ordering.
    between_text = ""
    if between:
        if all(d.verdict == Verdict.STABLE for d in between):
            between_text = " " + template["between_stable"].format(z_threshold=f"{z_threshold:g}")
        else:
            min_z = min(d.z for d in between)
            between_text = " " + template["between_unstable"].format(models=result.M, min_z=f"{min_z:.2f}")

    if flips_by_group:
        for g in sorted(flips_by_group):
            text = template["unstable_group"].format(features=label(groups[g]), threshold=f"{threshold:g}",
                                                     flip_rate=flip_text[g])
            blocks.append(text + between_text)
    else:
        blocks.append(template["no_instability"].format(z_threshold=f"{z_threshold:g}") + between_text)

    if groups:
        blocks.append(template["groups_header"])
        for g, (members, (mass, share)) in enumerate(zip(groups, group_attribution(result, groups))):
            text = template["group_line"].format(features=label(members), mass=f"{mass:.4g}",
                                                 share=f"{100 * share:.1f}")
            if g in flip_text:
                text += " " + template["group_unstable"].format(flip_rate=flip_text[g])
            blocks.append(text)

    lines = [template["ranking_header"]]
    for position, block in enumerate(consensus_ranking(result), start=1):
        value = float(np.mean(result.values[block]))
        lines.append(template["ranking_line"].format(position=position, features=label(block),
                                                     value=f"{value:.4g}"))
    blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


def cmd_report(args: argparse.Namespace, s: Settings) -> int:
    dataset, groups = _load_grouped(args, s)
    matrix, _ = train_and_attribute(dataset, _train_config(s), args.models, s.seed, **_attribution_kwargs(s))
    within = diagnose_pairs(matrix, groups.within_pairs(), s.z_threshold) if matrix.M >= 2 else []
    between = diagnose_pairs(matrix, groups.between_pairs(), s.z_threshold) if matrix.M >= 2 else []
    result = consensus(matrix, groups=groups, z_threshold=s.z_threshold)
    text = render_report(load_template(s.disclosure_template), dataset_name=Path(args.data).name,
                         names=dataset.names, n_samples=dataset.n_samples, groups=groups.groups,
                         within=within, between=between, result=result,
                         threshold=s.correlation_threshold, z_threshold=s.z_threshold)
    _emit(text, args.output)
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        s = _settings_from(args)
    except ParameterError as e:
        configure_logging(settings.log_level, settings.log_format)
        logger.error("invalid_configuration", error=str(e))
        return EXIT_USAGE
    except OSError as e:
        configure_logging(settings.log_level, settings.log_format)
        logger.error("configuration_unreadable", error=str(e))
        return EXIT_IO
    configure_logging(s.log_level, s.log_format)

    try:
        return args.handler(args, s)
    except ParameterError as e:
        logger.error("parameter_error", command=args.command, error=str(e))
        return EXIT_USAGE
    except DatasetParseError as e:
        logger.error("dataset_parse_error", command=args.command, error=str(e), row=e.row, column=e.column)
        return EXIT_IO
    except OSError as e:
        logger.error("io_error", command=args.command, error=str(e))
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
