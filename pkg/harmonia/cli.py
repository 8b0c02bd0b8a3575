"""harmonia command line."""

import functools
import json
import logging
from pathlib import Path
from typing import Any, Callable, Dict, Optional

import click
import numpy as np

from harmonia import analysis, evaluation, tonality
from harmonia.autodiff import as_value
from harmonia.config import (
    ANALYZE_SCHEMA,
    EVAL_SCHEMA,
    INGEST_SCHEMA,
    SAMPLE_SCHEMA,
    SPLIT_SCHEMA,
    TONIC_SCHEMA,
    TRAIN_SCHEMA,
    echo_settings,
    load_settings,
)
from harmonia.distributions import assemble, synthetic_distribution
from harmonia.exceptions import HarmoniaError
from harmonia.model import HarmonicModel
from harmonia.score_ingest import (
    normalize_transposition,
    parse_event_file,
    read_gold_labels,
    split_folds,
    write_event_file,
)
from harmonia.store import load_checkpoint, save_checkpoint
from harmonia.theory import N_KEYS, QUALITY_LABELS
from harmonia.trainer import TrainingConfig, sample_corpus, train_phase, train_seeds

logger = logging.getLogger("harmonia")

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def handle_errors(func: Callable[..., Any]) -> Callable[..., Any]:
    """Turn library errors into a one-line message and exit status 1."""

    @functools.wraps(func)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return func(*args, **kwargs)
        except HarmoniaError as err:
            raise click.ClickException(f"{type(err).__name__}: {err}") from err

    return wrapper


config_option = click.option(
    "--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
    help="key = value settings file.",
)
threads_option = click.option("--threads", type=int, default=None, help="Worker threads (env HARMONIA_THREADS).")


@click.group()
@click.option("--log-level", default="INFO", show_default=True,
              type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False))
def cli(log_level: str) -> None:
    """Unsupervised harmonic analysis with a neural hidden semi-Markov model."""
    logging.basicConfig(level=getattr(logging, log_level.upper()), format=LOG_FORMAT)


@cli.command()
@click.argument("events", type=click.Path(exists=True, dir_okay=False))
@click.argument("out", type=click.Path(dir_okay=False))
@click.option("--normalize/--no-normalize", default=None, help="Transpose to the no-accidental set.")
@config_option
@handle_errors
def ingest(events: str, out: str, normalize: Optional[bool], config_path: Optional[str]) -> None:
    """Segment EVENTS at fermatas and write the canonical sequence file OUT."""
    settings = load_settings(config_path, {"normalize": normalize}, INGEST_SCHEMA)
    sequences = parse_event_file(events)
    if settings["normalize"]:
        sequences = [normalize_transposition(s) for s in sequences]
    write_event_file(sequences, out)
    pieces = len({s.piece_id for s in sequences})
    logger.info(f"Wrote {len(sequences)} sequences from {pieces} pieces to {out}")


@cli.command()
@click.argument("train_events", type=click.Path(exists=True, dir_okay=False))
@click.argument("dev_events", type=click.Path(exists=True, dir_okay=False))
@click.argument("output_dir", type=click.Path(file_okay=False))
@click.option("--phase", type=click.IntRange(1, 2), default=None, help="Run a single phase instead of both.")
@click.option("--init-checkpoint", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Phase-1 checkpoint (required with --phase 2).")
@click.option("--seed", "seeds", type=int, multiple=True, help="Repeat for several seeds.")
@click.option("--epochs-phase1", type=int, default=None)
@click.option("--epochs-phase2", type=int, default=None)
@click.option("--patience", type=int, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--beta-cap", type=float, default=None)
@click.option("--template-weight", type=float, default=None)
@threads_option
@config_option
@handle_errors
def train(train_events: str, dev_events: str, output_dir: str, phase: Optional[int],
          init_checkpoint: Optional[str], seeds: tuple, config_path: Optional[str], **flags: Any) -> None:
    """Train on TRAIN_EVENTS with model selection on DEV_EVENTS."""
    overrides: Dict[str, Any] = dict(flags, phase=phase, init_checkpoint=init_checkpoint,
                                     seeds=list(seeds) or None)
    settings = load_settings(config_path, overrides, TRAIN_SCHEMA)
    echo_settings(settings, output_dir)
    train_set, dev_set = parse_event_file(train_events), parse_event_file(dev_events)
    out = Path(output_dir)

    if settings.get("phase") is None:
        summary = train_seeds(settings, train_set, dev_set, out)
        click.echo(json.dumps(summary, indent=4))
        return

    seed = settings["seeds"][0]
    config = TrainingConfig.from_settings(settings, settings["phase"], seed)
    if config.phase == 1:
        checkpoint = train_phase(
            config,
            [normalize_transposition(s) for s in train_set],
            [normalize_transposition(s) for s in dev_set],
            log_path=out / "phase1.jsonl",
        )
    else:
        if not settings.get("init_checkpoint"):
            raise click.UsageError("--phase 2 needs --init-checkpoint pointing at a phase-1 checkpoint")
        checkpoint = train_phase(config, train_set, dev_set, load_checkpoint(settings["init_checkpoint"]),
                                 log_path=out / "phase2.jsonl")
    save_checkpoint(checkpoint, out / f"phase{config.phase}.ckpt")
    click.echo(json.dumps(checkpoint.train_state, indent=4))


@cli.command()
@click.argument("checkpoint", type=click.Path(exists=True, dir_okay=False))
@click.argument("events", type=click.Path(exists=True, dir_okay=False))
@click.argument("output_dir", type=click.Path(file_okay=False))
@click.option("--tonic-offset/--no-tonic-offset", default=None, help="Degrees relative to the learned tonic.")
@click.option("--diminished-marker/--no-diminished-marker", default=None)
@click.option("--tsv/--no-tsv", default=None, help="Also write analysis.tsv.")
@threads_option
@config_option
@handle_errors
def analyze(checkpoint: str, events: str, output_dir: str, config_path: Optional[str], **flags: Any) -> None:
    """Decode EVENTS with CHECKPOINT and write per-frame analysis records."""
    settings = load_settings(config_path, flags, ANALYZE_SCHEMA)
    echo_settings(settings, output_dir)
    sequences = parse_event_file(events)
    results = analysis.analyze_corpus(
        sequences, load_checkpoint(checkpoint), settings["tonic_offset"], settings["diminished_marker"],
        settings["threads"],
    )
    out = Path(output_dir)
    analysis.write_analysis_jsonl(results, out / "analysis.jsonl")
    if settings["tsv"]:
        analysis.write_analysis_tsv(results, out / "analysis.tsv")
    for seq, records in zip(sequences, results):
        logger.debug(f"{seq.sequence_id}: {analysis.degree_string(records, settings['diminished_marker'])}")


@cli.command()
@click.argument("checkpoint", type=click.Path(exists=True, dir_okay=False))
@click.argument("output_dir", type=click.Path(file_okay=False))
@click.option("--csv/--no-csv", "write_csv", default=None, help="Also write tonality.csv.")
@config_option
@handle_errors
def tonic(checkpoint: str, output_dir: str, write_csv: Optional[bool], config_path: Optional[str]) -> None:
    """Stationary root distribution, tonic and pitch-class profile of each mode."""
    settings = load_settings(config_path, {"csv": write_csv}, TONIC_SCHEMA)
    reports = tonality.report_tonality(load_checkpoint(checkpoint))
    payload = [r.to_dict() for r in reports]
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "tonality.json", "w") as outfile:
        json.dump(payload, outfile, indent=4)
    if settings["csv"]:
        tonality.write_tonality_csv(reports, out / "tonality.csv")
    click.echo(json.dumps(payload, indent=4))


@cli.command(name="eval")
@click.argument("predictions", type=click.Path(exists=True, dir_okay=False))
@click.argument("gold", type=click.Path(exists=True, dir_okay=False))
@click.option("--kind", type=click.Choice(["chord", "roman"]), default=None)
@click.option("--output-dir", type=click.Path(file_okay=False), default=None)
@config_option
@handle_errors
def evaluate(predictions: str, gold: str, kind: Optional[str], output_dir: Optional[str],
             config_path: Optional[str]) -> None:
    """Frame accuracy of PREDICTIONS (analysis.jsonl) against GOLD labels."""
    settings = load_settings(config_path, {"kind": kind, "output_dir": output_dir}, EVAL_SCHEMA)
    records = analysis.read_analysis_jsonl(predictions)
    pairs = evaluation.align_predictions(records, read_gold_labels(gold))
    report = evaluation.evaluate_corpus(pairs, settings["kind"])
    payload = report.to_dict()
    if settings.get("output_dir"):
        out = Path(settings["output_dir"])
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "eval.json", "w") as outfile:
            json.dump(payload, outfile, indent=4)
    click.echo(json.dumps(payload, indent=4))
    click.echo(report.table())


@cli.command()
@click.argument("output_dir", type=click.Path(file_okay=False))
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Sample from a trained model instead of random synthetic tables.")
@click.option("--n-sequences", type=int, default=None)
@click.option("--min-length", type=int, default=None)
@click.option("--max-length", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--template-weight", type=float, default=None)
@config_option
@handle_errors
def sample(output_dir: str, checkpoint: Optional[str], config_path: Optional[str], **flags: Any) -> None:
    """Write a synthetic corpus (events.jsonl) and its generating labels (gold.jsonl)."""
    settings = load_settings(config_path, flags, SAMPLE_SCHEMA)
    if settings["min_length"] > settings["max_length"]:
        raise click.UsageError("--min-length exceeds --max-length")
    echo_settings(settings, output_dir)
    rng = np.random.default_rng(settings["seed"])
    if checkpoint:
        model = HarmonicModel.from_checkpoint(load_checkpoint(checkpoint))
        tables = model.tables()
        uniform = as_value(np.full(N_KEYS, -np.log(N_KEYS)))
        dist = assemble(tables, uniform, model.key_ids)
    else:
        dist = synthetic_distribution(rng, settings["template_weight"])
    sequences, paths = sample_corpus(
        dist, settings["n_sequences"], (settings["min_length"], settings["max_length"]),
        int(rng.integers(2 ** 31)),
    )
    out = Path(output_dir)
    write_event_file(sequences, out / "events.jsonl")
    with open(out / "gold.jsonl", "w") as outfile:
        for seq, path in zip(sequences, paths):
            for frame, root, quality in zip(seq.frames, path.frame_roots(), path.qualities):
                label: Dict[str, Any] = {}
                if quality is not None:
                    label = {"root": root, "quality": QUALITY_LABELS[quality]}
                outfile.write(json.dumps({"piece": seq.piece_id, "frame": frame.onset_index,
                                          "labels": [label]}, sort_keys=True) + "\n")
    logger.info(f"Sampled {len(sequences)} sequences into {out}")


@cli.command()
@click.argument("events", type=click.Path(exists=True, dir_okay=False))
@click.argument("output_dir", type=click.Path(file_okay=False))
@click.option("--folds", type=int, default=None)
@click.option("--test-fold", type=int, default=None)
@click.option("--seed", type=int, default=None)
@config_option
@handle_errors
def split(events: str, output_dir: str, config_path: Optional[str], **flags: Any) -> None:
    """Piece-level train/dev/test split of EVENTS."""
    settings = load_settings(config_path, flags, SPLIT_SCHEMA)
    train_set, dev_set, test_set = split_folds(
        parse_event_file(events), settings["folds"], settings["test_fold"], settings["seed"]
    )
    out = Path(output_dir)
    for name, part in (("train", train_set), ("dev", dev_set), ("test", test_set)):
        write_event_file(part, out / f"{name}.jsonl")
        logger.info(f"{name}: {len(part)} sequences")
