"""Unsupervised two-phase training, evaluation of NLL and ancestral sampling."""

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from harmonia import autodiff as ad
from harmonia.distributions import DistributionSet
from harmonia.exceptions import ContractError, TrainingAbortedError
from harmonia.hsmm import Segment, StatePath
from harmonia.model import DEFAULT_BETA_CAP, HarmonicModel
from harmonia.score_ingest import EventSequence, FrameEvent, normalize_transposition
from harmonia.store import (
    Checkpoint,
    adam_step,
    checkpoint_from_store,
    clip_grad_norm,
    copy_store,
    save_checkpoint,
)
from harmonia.theory import N_PITCH_CLASSES, REST_ROOT

DEFAULT_EPOCHS = {1: 480, 2: 240}


@dataclass
class TrainingConfig:
    phase: int = 1
    epochs: Optional[int] = None
    patience: int = 80
    lr: float = 1e-3
    batch_size: int = 8
    seed: int = 123
    beta_cap: Optional[float] = None
    clip_norm: float = 5.0
    template_weight: float = 5.0
    threads: int = 1

    def __post_init__(self) -> None:
        if self.phase not in (1, 2):
            raise ContractError(f"phase must be 1 or 2, got {self.phase}")
        if self.epochs is None:
            self.epochs = DEFAULT_EPOCHS[self.phase]
        if self.beta_cap is None:
            self.beta_cap = DEFAULT_BETA_CAP[self.phase]
        if self.epochs <= 0 or self.patience <= 0 or self.batch_size <= 0:
            raise ContractError(
                f"epochs, patience and batch_size must be positive "
                f"(got {self.epochs}, {self.patience}, {self.batch_size})"
            )
        if self.lr < 0:
            raise ContractError(f"learning rate must be non-negative, got {self.lr}")
        if (self.beta_cap == 0) != (self.phase == 1):
            raise ContractError(f"beta_cap {self.beta_cap} is invalid for phase {self.phase}")

    @classmethod
    def from_settings(cls, settings: Dict[str, Any], phase: int, seed: int) -> "TrainingConfig":
        return cls(
            phase=phase,
            epochs=settings.get(f"epochs_phase{phase}"),
            patience=settings.get("patience", 80),
            lr=settings.get("lr", 1e-3),
            batch_size=settings.get("batch_size", 8),
            seed=seed,
            beta_cap=settings.get("beta_cap") if phase == 2 else 0.0,
            clip_norm=settings.get("clip_norm", 5.0),
            template_weight=settings.get("template_weight", 5.0),
            threads=settings.get("threads", 1),
        )


@dataclass
class TrainState:
    best_dev_nll: float = math.inf
    best_epoch: int = 0
    epochs_since_best: int = 0
    epoch: int = 0
    initial_dev_nll: float = math.inf
    history: List[Dict[str, float]] = field(default_factory=list)


def evaluate_nll(model: HarmonicModel, sequences: Sequence[EventSequence], threads: int = 1) -> Tuple[float, float]:
    """Mean NLL per sequence and NLL per frame, computed without touching gradients."""
    if not sequences:
        raise ContractError("cannot evaluate NLL of an empty set")
    tables = model.tables()

    def nll(seq: EventSequence) -> float:
        return -model.log_likelihood(seq, tables).item()

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            values = list(pool.map(nll, sequences))
    else:
        values = [nll(seq) for seq in sequences]
    total = float(sum(values))
    return total / len(values), total / sum(len(s) for s in sequences)


class Trainer:
    """Minibatch Adam on the summed-over-paths NLL with dev-based model selection."""

    def __init__(self, config: TrainingConfig, log_path: Optional[Union[str, Path]] = None) -> None:
        self.config = config
        self.log_path = Path(log_path) if log_path else None
        self.logger = logging.getLogger(__name__)
        self.state = TrainState()

    def _model(self, init: Optional[Checkpoint]) -> HarmonicModel:
        config = self.config
        if config.phase == 1:
            if init is not None:
                raise ContractError("phase 1 starts from fresh parameters; do not pass a checkpoint")
            return HarmonicModel.initialize(config.seed, 1, config.template_weight, config.beta_cap)
        if init is None:
            raise ContractError("phase 2 needs the phase-1 checkpoint as its starting point")
        store = copy_store(init.store, optimizer_state=False)
        store.reset_optimizer()
        return HarmonicModel(store, 2, config.template_weight, config.beta_cap)

    def _batch_loss(self, model: HarmonicModel, batch: Sequence[EventSequence]) -> ad.Value:
        tables = model.tables()
        total = ad.as_value(0.0)
        for seq in batch:
            log_likelihood = model.log_likelihood(seq, tables)
            if not np.isfinite(log_likelihood.data):
                self.logger.error("=" * 80)
                self.logger.error(f"Non-finite log-likelihood {log_likelihood.item()} on {seq.sequence_id}")
                self.logger.error("=" * 80)
                raise TrainingAbortedError(
                    f"log-likelihood became {log_likelihood.item()} at epoch {self.state.epoch}", seq.sequence_id
                )
            total = total - log_likelihood
        return total / float(len(batch))

    def _write_log(self, record: Dict[str, float]) -> None:
        if self.log_path is None:
            return
        with open(self.log_path, "a") as outfile:
            outfile.write(json.dumps(record) + "\n")

    def train_phase(
        self,
        train: Sequence[EventSequence],
        dev: Sequence[EventSequence],
        init: Optional[Checkpoint] = None,
    ) -> Checkpoint:
        config = self.config
        if not train or not dev:
            raise ContractError(f"need non-empty train and dev sets (got {len(train)} and {len(dev)})")
        model = self._model(init)
        store = model.store
        self.state = TrainState()
        rng = np.random.default_rng(config.seed)
        if self.log_path is not None:
            self.log_path.parent.mkdir(parents=True, exist_ok=True)
            self.log_path.write_text("")

        self.logger.info("=" * 80)
        self.logger.info(
            f"Phase {config.phase}: {len(train)} train / {len(dev)} dev sequences, seed {config.seed}, "
            f"up to {config.epochs} epochs"
        )
        self.logger.info("=" * 80)
        self.state.initial_dev_nll, _ = evaluate_nll(model, dev, config.threads)
        self.logger.info(f"Initial dev NLL {self.state.initial_dev_nll:.4f}")

        best = store.snapshot()
        started = time.monotonic()
        for epoch in range(1, config.epochs + 1):
            self.state.epoch = epoch
            order = rng.permutation(len(train))
            summed = 0.0
            for offset in range(0, len(order), config.batch_size):
                batch = [train[i] for i in order[offset:offset + config.batch_size]]
                loss = self._batch_loss(model, batch)
                ad.backward(loss, store.values())
                norm = clip_grad_norm(store, config.clip_norm)
                adam_step(store, config.lr)
                summed += loss.item() * len(batch)
                self.logger.debug(f"epoch {epoch} batch {offset // config.batch_size}: "
                                  f"loss {loss.item():.4f} grad norm {norm:.3f}")

            dev_nll, _ = evaluate_nll(model, dev, config.threads)
            record = {
                "epoch": epoch,
                "train_nll": summed / len(train),
                "dev_nll": dev_nll,
                "beta": model.beta(),
                "elapsed_s": round(time.monotonic() - started, 3),
            }
            self.state.history.append(record)
            self._write_log(record)

            if dev_nll < self.state.best_dev_nll:
                self.state.best_dev_nll = dev_nll
                self.state.best_epoch = epoch
                self.state.epochs_since_best = 0
                best = store.snapshot()
            else:
                self.state.epochs_since_best += 1
            self.logger.info(
                f"epoch {epoch}: train NLL {record['train_nll']:.4f}, dev NLL {dev_nll:.4f} "
                f"(best {self.state.best_dev_nll:.4f} at epoch {self.state.best_epoch})"
            )
            if self.state.epochs_since_best >= config.patience:
                self.logger.info(f"Early stop at epoch {epoch}: no improvement for {config.patience} epochs")
                break

        store.restore(best)
        train_state = {
            "best_dev_nll": self.state.best_dev_nll,
            "best_epoch": self.state.best_epoch,
            "epochs_run": self.state.epoch,
            "initial_dev_nll": self.state.initial_dev_nll,
        }
        return checkpoint_from_store(store, config.seed, config.phase, asdict(config), train_state)


def train_phase(
    config: TrainingConfig,
    train: Sequence[EventSequence],
    dev: Sequence[EventSequence],
    init: Optional[Checkpoint] = None,
    log_path: Optional[Union[str, Path]] = None,
) -> Checkpoint:
    return Trainer(config, log_path).train_phase(train, dev, init)


def train_seeds(
    settings: Dict[str, Any],
    train: Sequence[EventSequence],
    dev: Sequence[EventSequence],
    output_dir: Union[str, Path],
) -> Dict[str, Any]:
    """Run both phases once per configured seed and rank the seeds by phase-2 dev NLL.

    Phase 1 sees the key-normalized corpus, phase 2 the sequences as given.
    """
    output_dir = Path(output_dir)
    seeds = list(settings.get("seeds") or [])
    if not seeds:
        raise ContractError("no seeds configured")
    normalized_train = [normalize_transposition(s) for s in train]
    normalized_dev = [normalize_transposition(s) for s in dev]

    results = []
    for seed in seeds:
        run_dir = output_dir / f"seed_{seed}"
        run_dir.mkdir(parents=True, exist_ok=True)
        phase1 = train_phase(
            TrainingConfig.from_settings(settings, 1, seed), normalized_train, normalized_dev,
            log_path=run_dir / "phase1.jsonl",
        )
        save_checkpoint(phase1, run_dir / "phase1.ckpt")
        phase2 = train_phase(
            TrainingConfig.from_settings(settings, 2, seed), train, dev, init=phase1,
            log_path=run_dir / "phase2.jsonl",
        )
        save_checkpoint(phase2, run_dir / "phase2.ckpt")
        results.append({
            "seed": seed,
            "phase1_dev_nll": phase1.train_state["best_dev_nll"],
            "phase1_epochs": phase1.train_state["epochs_run"],
            "phase2_dev_nll": phase2.train_state["best_dev_nll"],
            "phase2_epochs": phase2.train_state["epochs_run"],
        })

    results.sort(key=lambda r: (r["phase2_dev_nll"], r["seed"]))
    summary = {"best_seed": results[0]["seed"], "runs": results}
    with open(output_dir / "summary.json", "w") as outfile:
        json.dump(summary, outfile, indent=4)
    logging.getLogger(__name__).info(f"Best seed {summary['best_seed']} (dev NLL {results[0]['phase2_dev_nll']:.4f})")
    return summary


# sampling


def sample_with_path(
    dist: DistributionSet, length: int, rng: np.random.Generator, piece_id: str = "synthetic", segment_index: int = 0
) -> Tuple[EventSequence, StatePath]:
    """Draw frames from the generative process together with the hidden path that produced them."""
    if length <= 0:
        raise ContractError(f"length must be positive, got {length}")
    duration, quality, mu = dist.duration, dist.quality, dist.emission_mu
    root_init, root_trans, key_init, key_trans = dist.root_init, dist.root_trans, dist.key_init, dist.key_trans

    def draw(p: np.ndarray) -> int:
        return int(rng.choice(len(p), p=p / p.sum()))

    frames: List[FrameEvent] = []
    qualities: List[Optional[int]] = []
    segments: List[Segment] = []
    key = draw(key_init)
    root = draw(root_init[key])
    remaining = draw(duration)
    start = 0
    for t in range(length):
        if t > 0 and remaining < 0:
            segments.append(Segment(dist.key_ids[key], root, start, t - start))
            start = t
            new_key = draw(key_trans[key])
            root = draw(root_trans[key, root]) if new_key == key else draw(root_init[new_key])
            key = new_key
            remaining = draw(duration)
        q = draw(quality[key, root])
        flags = (rng.random(N_PITCH_CLASSES) < mu[root, q]).astype(int)
        frames.append(FrameEvent(tuple(flags.tolist()), None, False, t))
        qualities.append(None if root == REST_ROOT else q)
        remaining -= 1
    segments.append(Segment(dist.key_ids[key], root, start, length - start))
    seq = EventSequence(tuple(frames), piece_id, segment_index)
    return seq, StatePath(tuple(segments), 0.0, tuple(qualities))


def sample_from_model(dist: DistributionSet, length: int, rng: np.random.Generator,
                      piece_id: str = "synthetic", segment_index: int = 0) -> EventSequence:
    return sample_with_path(dist, length, rng, piece_id, segment_index)[0]


def sample_corpus(dist: DistributionSet, n_sequences: int, lengths: Tuple[int, int], seed: int,
                  ) -> Tuple[List[EventSequence], List[StatePath]]:
    """``n_sequences`` samples with lengths drawn uniformly from the inclusive range ``lengths``."""
    rng = np.random.default_rng(seed)
    sequences, paths = [], []
    for i in range(n_sequences):
        length = int(rng.integers(lengths[0], lengths[1] + 1))
        seq, path = sample_with_path(dist, length, rng, f"synthetic-{i:04d}")
        sequences.append(seq)
        paths.append(path)
    return sequences, paths
