"""
Command-line front end running the cold-start pipeline in stages.

    frostfactor stats      review distributions per user and per business
    frostfactor split      training set and the two cold-start test sets
    frostfactor train-mf   SVD++ on the training set and on all reviews
    frostfactor prep       tokenized business descriptions
    frostfactor train-cnn  description network regressing item factors
    frostfactor evaluate   RMSE report of the selected methods
    frostfactor pipeline   all of the above in order

Every stage writes its artifacts into the work directory together with a
metadata sidecar; later stages refuse to run on missing or outdated
artifacts.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .coldstart import (
    FactorSource,
    SourceKind,
    compute_bounds,
    rate_test_set,
    run_baseline_trials,
    set_outcome,
)
from .config import PipelineConfig, load_config
from .convnet import history_frame, load_cnn, save_cnn, train_cnn
from .corpus import (
    SPLIT_PARTS,
    ReviewSet,
    Split,
    load_reviews,
    read_split,
    review_distribution,
    select_descriptions,
    split_dataset,
    summarize,
    write_split,
)
from .errors import FrostFactorError, InputError, ParameterError
from .evaluation import EvalReport, SetOutcome, build_report
from .svdpp import item_factors, load_mf, save_mf, train_mf
from .textprep import compact_table, load_docs, load_embeddings, prepare_docs, save_docs
from .workspace import Workspace, file_digest

__all__ = [
    "METHODS",
    "cmd_evaluate",
    "cmd_pipeline",
    "cmd_prep",
    "cmd_split",
    "cmd_stats",
    "cmd_train_cnn",
    "cmd_train_mf",
    "main",
    "run",
]

logger = logging.getLogger(__name__)

# Report row order.
METHODS = ("random1", "random2", "cnn", "oracle")
TEST_SETS = ("test1", "test2")

# Configuration sections every stage depends on.
_STAGE_SECTIONS = {
    "stats": ("corpus",),
    "split": ("corpus", "output"),
    "train-mf": ("corpus", "output", "svdpp"),
    "prep": ("corpus", "textprep"),
    "train-cnn": ("corpus", "output", "svdpp", "textprep", "cnn"),
    "evaluate": ("corpus", "output", "svdpp", "textprep", "cnn", "baselines"),
}

MF_TRAIN = "mf_train.ckpt"
MF_FULL = "mf_full.ckpt"
DOCS = "docs.bin"
CNN = "cnn.ckpt"
CNN_HISTORY = "cnn_history.csv"


def _stage_digest(config: PipelineConfig, command: str) -> str:
    return config.digest(_STAGE_SECTIONS[command])


def _load_corpus(config: PipelineConfig) -> ReviewSet:
    return load_reviews(
        config.paths.reviews,
        strict=config.corpus.strict,
        fields=config.corpus.fields,
        vote_categories=config.corpus.vote_categories,
    )


def _split_files(workspace: Workspace, config: PipelineConfig) -> Dict[str, Path]:
    suffix = "idx" if config.output.split_format == "lines" else "jsonl"
    return {part: workspace.path("split", f"{part}.{suffix}") for part in SPLIT_PARTS}


def _load_split(config: PipelineConfig, workspace: Workspace) -> Split:
    workspace.require("split", _stage_digest(config, "split"))
    corpus = _load_corpus(config) if config.output.split_format == "lines" else None
    return read_split(
        workspace.path("split"),
        corpus,
        fmt=config.output.split_format,
        fields=config.corpus.fields,
    )


def cmd_stats(
    config: PipelineConfig, workspace: Workspace, out_dir: Optional[Path] = None
) -> Dict[str, Path]:
    """Write the number of reviews per user and per business as CSV files."""
    corpus = _load_corpus(config)
    out_dir = Path(out_dir) if out_dir is not None else workspace.path("stats")
    out_dir.mkdir(parents=True, exist_ok=True)

    outputs = {"users": out_dir / "users.csv", "businesses": out_dir / "businesses.csv"}
    review_distribution(corpus, "user").to_csv(outputs["users"], index=False)
    review_distribution(corpus, "business").to_csv(outputs["businesses"], index=False)

    summary = summarize(corpus)
    logger.info(
        "%d reviews, %d users, %d businesses, rating matrix density %.3g",
        summary.num_reviews,
        summary.num_users,
        summary.num_businesses,
        summary.density,
    )
    workspace.record(
        "stats",
        config_digest=_stage_digest(config, "stats"),
        seed=config.seed,
        inputs={"reviews": config.paths.reviews},
        outputs=outputs,
        extra={"skipped_lines": corpus.skipped},
    )
    return outputs


def cmd_split(config: PipelineConfig, workspace: Workspace) -> Dict[str, Path]:
    """Split the corpus and write one manifest per part."""
    corpus = _load_corpus(config)
    split = split_dataset(
        corpus,
        test1_frac=config.corpus.test1_frac,
        test2_band=config.corpus.test2_band,
        min_votes=config.corpus.min_votes,
    )
    outputs = write_split(
        split,
        workspace.path("split"),
        fmt=config.output.split_format,
        fields=config.corpus.fields,
    )
    workspace.record(
        "split",
        config_digest=_stage_digest(config, "split"),
        seed=config.seed,
        inputs={"reviews": config.paths.reviews},
        outputs=outputs,
        extra={part: len(reviews) for part, reviews in split.parts().items()},
    )
    return outputs


def cmd_train_mf(config: PipelineConfig, workspace: Workspace) -> Dict[str, Path]:
    """
    Factorise the training set, and all reviews of the split for the
    oracle.
    """
    split = _load_split(config, workspace)
    everything = ReviewSet(
        list(split.train) + list(split.test1) + list(split.test2)
    )

    outputs = {"mf_train": workspace.path(MF_TRAIN), "mf_full": workspace.path(MF_FULL)}
    model = train_mf(split.train, config.svdpp)
    save_mf(model, outputs["mf_train"])
    oracle = train_mf(everything, config.svdpp)
    save_mf(oracle, outputs["mf_full"])

    workspace.record(
        "train-mf",
        config_digest=_stage_digest(config, "train-mf"),
        seed=config.seed,
        inputs=_split_files(workspace, config),
        outputs=outputs,
        extra={"train_rmse": model.final_rmse, "full_rmse": oracle.final_rmse},
    )
    return outputs


def cmd_prep(config: PipelineConfig, workspace: Workspace) -> Dict[str, Path]:
    """Tokenize the description of every business of the corpus."""
    if config.paths.embeddings is None:
        raise ParameterError("The ‘prep’ command needs ‘paths.embeddings’.")

    corpus = _load_corpus(config)
    table = load_embeddings(config.paths.embeddings, config.textprep.dim)
    descriptions = select_descriptions(corpus)
    docs = prepare_docs(
        [(business_id, review.text) for business_id, review in descriptions.items()],
        table,
        np.random.default_rng(config.textprep.seed),
        max_length=config.textprep.max_length,
        max_distance=config.textprep.max_distance,
        init_range=config.textprep.init_range,
    )
    counts = {kind.value: n for kind, n in sorted(table.provenance_counts().items())}
    docs, table = compact_table(docs, table)

    outputs = {"docs": workspace.path(DOCS)}
    save_docs(outputs["docs"], docs, table)
    workspace.record(
        "prep",
        config_digest=_stage_digest(config, "prep"),
        seed=config.seed,
        inputs={"reviews": config.paths.reviews, "embeddings": config.paths.embeddings},
        outputs=outputs,
        extra={"vocabulary": counts, "rows": len(table)},
    )
    return outputs


def cmd_train_cnn(config: PipelineConfig, workspace: Workspace) -> Dict[str, Path]:
    """Train the description network on the factors of the training items."""
    workspace.require("train-mf", _stage_digest(config, "train-mf"))
    workspace.require("prep", _stage_digest(config, "prep"))

    model = load_mf(workspace.path(MF_TRAIN))
    targets = {item_id: item_factors(model, item_id) for item_id in model.item_ids}
    docs, table = load_docs(workspace.path(DOCS))
    training = [doc for doc in docs if doc.business_id in targets]

    network, history = train_cnn(training, targets, config.cnn, table)

    outputs = {"cnn": workspace.path(CNN), "history": workspace.path(CNN_HISTORY)}
    save_cnn(network, outputs["cnn"], history)
    history_frame(history).to_csv(outputs["history"], index=False)
    workspace.record(
        "train-cnn",
        config_digest=_stage_digest(config, "train-cnn"),
        seed=config.seed,
        inputs={"mf_train": workspace.path(MF_TRAIN), "docs": workspace.path(DOCS)},
        outputs=outputs,
        extra={"best_epoch": network.epoch},
    )
    return outputs


def cmd_evaluate(
    config: PipelineConfig,
    workspace: Workspace,
    methods: Sequence[str] = METHODS,
    out_dir: Optional[Path] = None,
) -> EvalReport:
    """
    Rate both test sets with every selected method and write the report as
    `report.csv` and `report.json`, plus `trials_<method>_<set>.csv` for
    random baselines when enabled.
    """
    unknown = sorted(set(methods) - set(METHODS))
    if unknown or not methods:
        raise ParameterError(
            f"Methods must be a non-empty subset of {', '.join(METHODS)}; "
            f"got {', '.join(methods) or 'none'}."
        )
    selected = [method for method in METHODS if method in methods]

    split = _load_split(config, workspace)
    workspace.require("train-mf", _stage_digest(config, "train-mf"))
    inputs = dict(_split_files(workspace, config))
    inputs["mf_train"] = workspace.path(MF_TRAIN)
    model = load_mf(inputs["mf_train"])

    sources: Dict[str, FactorSource] = {}
    descriptions = {}
    if "cnn" in selected:
        workspace.require("prep", _stage_digest(config, "prep"))
        workspace.require("train-cnn", _stage_digest(config, "train-cnn"))
        inputs["docs"] = workspace.path(DOCS)
        inputs["cnn"] = workspace.path(CNN)
        docs, _ = load_docs(inputs["docs"])
        descriptions = {doc.business_id: doc for doc in docs}
        sources["cnn"] = FactorSource.cnn(load_cnn(inputs["cnn"])[0])
    if "oracle" in selected:
        inputs["mf_full"] = workspace.path(MF_FULL)
        sources["oracle"] = FactorSource.upper_bound(load_mf(inputs["mf_full"]))

    test_sets = {name: getattr(split, name) for name in TEST_SETS}
    for name in [name for name, reviews in test_sets.items() if len(reviews) == 0]:
        logger.warning("%s is empty and is left out of the report", name)
        del test_sets[name]
    if not test_sets:
        raise ParameterError("Both test sets are empty; adjust the split settings.")

    out_dir = Path(out_dir) if out_dir is not None else workspace.path("report")
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs: Dict[str, Path] = {}

    results: Dict[str, Dict[str, SetOutcome]] = {}
    bounds = compute_bounds(model)
    for method in selected:
        results[method] = {}
        for name, test in test_sets.items():
            if SourceKind(method).stochastic:
                trials = run_baseline_trials(
                    test,
                    model,
                    SourceKind(method),
                    config.baselines.n_runs,
                    config.baselines.seed,
                    bounds,
                    stream=TEST_SETS.index(name),
                )
                results[method][name] = trials.outcome()
                if config.output.trial_csv:
                    path = out_dir / f"trials_{method}_{name}.csv"
                    trials.to_frame().to_csv(path, index=False)
                    outputs[path.stem] = path
            else:
                rated = rate_test_set(
                    test,
                    model,
                    sources[method],
                    descriptions,
                    np.random.default_rng(config.baselines.seed),
                )
                results[method][name] = set_outcome(rated)

    metadata = {
        "config_digest": config.digest(),
        "seeds": {
            "master": config.seed,
            "svdpp": config.svdpp.seed,
            "textprep": config.textprep.seed,
            "cnn": config.cnn.seed,
            "baselines": config.baselines.seed,
        },
        "n_runs": config.baselines.n_runs,
        "methods": selected,
        "inputs": {name: file_digest(path) for name, path in sorted(inputs.items())},
        "version": __version__,
    }
    report = build_report(results, metadata)

    outputs["report_csv"] = out_dir / "report.csv"
    outputs["report_json"] = out_dir / "report.json"
    report.to_csv(outputs["report_csv"])
    report.to_json(outputs["report_json"])
    workspace.record(
        "evaluate",
        config_digest=_stage_digest(config, "evaluate"),
        seed=config.seed,
        inputs=inputs,
        outputs=outputs,
        extra={"methods": selected},
    )

    print(report.format_table())
    return report


def cmd_pipeline(
    config: PipelineConfig,
    workspace: Workspace,
    methods: Sequence[str] = METHODS,
    out_dir: Optional[Path] = None,
) -> EvalReport:
    """Run every stage in order."""
    cmd_stats(config, workspace)
    cmd_split(config, workspace)
    cmd_train_mf(config, workspace)
    cmd_prep(config, workspace)
    cmd_train_cnn(config, workspace)
    return cmd_evaluate(config, workspace, methods, out_dir)


def _method_list(value: str) -> List[str]:
    methods = [method.strip() for method in value.split(",") if method.strip()]
    unknown = [method for method in methods if method not in METHODS]
    if unknown or not methods:
        raise argparse.ArgumentTypeError(
            f"choose from {', '.join(METHODS)}, separated by commas"
        )
    return methods


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config", required=True, type=Path, help="pipeline configuration (YAML)"
    )
    common.add_argument("--seed", type=int, help="replace the master seed")
    common.add_argument(
        "--workdir",
        type=Path,
        help="work directory (default: $FROSTFACTOR_WORKDIR or paths.workdir)",
    )
    strictness = common.add_mutually_exclusive_group()
    strictness.add_argument(
        "--strict",
        dest="strict",
        action="store_true",
        default=None,
        help="stop at the first malformed review",
    )
    strictness.add_argument(
        "--lenient",
        dest="strict",
        action="store_false",
        default=None,
        help="skip malformed reviews",
    )
    common.add_argument(
        "-v", "--verbose", action="count", default=0, help="log more details"
    )
    common.add_argument("-q", "--quiet", action="count", default=0, help="log less")

    parser = argparse.ArgumentParser(
        prog="frostfactor",
        description="Item cold-start rating prediction from business descriptions.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    commands = parser.add_subparsers(dest="command", required=True)

    stats = commands.add_parser(
        "stats", parents=[common], help="review distributions per user and business"
    )
    stats.add_argument("--out", type=Path, help="directory of the CSV files")

    commands.add_parser("split", parents=[common], help="split the corpus")
    commands.add_parser("train-mf", parents=[common], help="train SVD++")
    commands.add_parser("prep", parents=[common], help="tokenize descriptions")
    commands.add_parser("train-cnn", parents=[common], help="train the network")

    for name, description in (
        ("evaluate", "evaluate cold-start methods"),
        ("pipeline", "run every stage"),
    ):
        command = commands.add_parser(name, parents=[common], help=description)
        command.add_argument(
            "--methods",
            type=_method_list,
            default=list(METHODS),
            help=f"comma-separated subset of {', '.join(METHODS)}",
        )
        command.add_argument("--runs", type=int, help="runs of random baselines")
        command.add_argument("--out", type=Path, help="directory of the report")

    return parser


_Handler = Callable[[PipelineConfig, Workspace, argparse.Namespace], object]

_COMMANDS: Dict[str, _Handler] = {
    "stats": lambda config, workspace, args: cmd_stats(config, workspace, args.out),
    "split": lambda config, workspace, args: cmd_split(config, workspace),
    "train-mf": lambda config, workspace, args: cmd_train_mf(config, workspace),
    "prep": lambda config, workspace, args: cmd_prep(config, workspace),
    "train-cnn": lambda config, workspace, args: cmd_train_cnn(config, workspace),
    "evaluate": lambda config, workspace, args: cmd_evaluate(
        config, workspace, args.methods, args.out
    ),
    "pipeline": lambda config, workspace, args: cmd_pipeline(
        config, workspace, args.methods, args.out
    ),
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run a command and return the process exit status: 0 on success,
    otherwise the exit code of the raised error.
    """
    args = build_parser().parse_args(argv)

    level = logging.INFO + 10 * (args.quiet - args.verbose)
    logging.basicConfig(
        level=min(max(level, logging.DEBUG), logging.CRITICAL),
        format="%(levelname)s %(name)s: %(message)s",
    )

    try:
        config = load_config(
            args.config,
            seed=args.seed,
            workdir=args.workdir,
            strict=args.strict,
            n_runs=getattr(args, "runs", None),
        )
        workspace = Workspace(config.paths.workdir)
        with workspace.locked():
            _COMMANDS[args.command](config, workspace, args)
    except FrostFactorError as error:
        logger.error("%s", error)
        return error.exit_code
    except OSError as error:
        logger.error("%s", error)
        return InputError.exit_code
    return 0


def run() -> None:
    sys.exit(main())
