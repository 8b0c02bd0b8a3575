"""Named parameter storage, Adam updates and checkpoint files."""

import json
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, Optional, Tuple, Union

import numpy as np

from harmonia.autodiff import Value, parameter
from harmonia.exceptions import ContractError, HarmoniaError

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class ParameterStore:
    """Ordered map of parameter name to trainable :class:`Value` plus Adam state."""

    def __init__(self) -> None:
        self._params: "OrderedDict[str, Value]" = OrderedDict()
        self.first_moment: Dict[str, np.ndarray] = {}
        self.second_moment: Dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, data: np.ndarray) -> Value:
        if name in self._params:
            raise ContractError(f"parameter {name!r} declared twice")
        value = parameter(np.array(data, dtype=np.float64), name=name)
        self._params[name] = value
        self.first_moment[name] = np.zeros_like(value.data)
        self.second_moment[name] = np.zeros_like(value.data)
        return value

    def __getitem__(self, name: str) -> Value:
        return self._params[name]

    def __contains__(self, name: object) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def zero_grad(self) -> None:
        for value in self._params.values():
            value.zero_grad()

    def reset_optimizer(self) -> None:
        """Forget Adam moments and the step counter."""
        for name, value in self._params.items():
            self.first_moment[name] = np.zeros_like(value.data)
            self.second_moment[name] = np.zeros_like(value.data)
        self.step = 0

    def flat_data(self) -> np.ndarray:
        return np.concatenate([v.data.ravel() for v in self._params.values()])

    def snapshot(self) -> Dict[str, Any]:
        """Deep copy of parameter data and optimizer state."""
        return {
            "data": {n: v.data.copy() for n, v in self._params.items()},
            "m": {n: a.copy() for n, a in self.first_moment.items()},
            "v": {n: a.copy() for n, a in self.second_moment.items()},
            "step": self.step,
        }

    def restore(self, snap: Dict[str, Any]) -> None:
        for name, value in self._params.items():
            value.data = snap["data"][name].copy()
            value.zero_grad()
            self.first_moment[name] = snap["m"][name].copy()
            self.second_moment[name] = snap["v"][name].copy()
        self.step = snap["step"]


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def global_grad_norm(store: ParameterStore) -> float:
    return float(np.sqrt(sum(float(np.sum(v.grad * v.grad)) for v in store.values())))


def clip_grad_norm(store: ParameterStore, max_norm: float) -> float:
    """Scale every gradient so the global norm is at most ``max_norm``; return the norm before clipping."""
    norm = global_grad_norm(store)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for value in store.values():
            value.grad *= scale
    return norm


def adam_step(store: ParameterStore, lr: float) -> None:
    """One bias-corrected Adam update; clears gradients afterwards."""
    store.step += 1
    t = store.step
    correction1 = 1.0 - ADAM_BETA1 ** t
    correction2 = 1.0 - ADAM_BETA2 ** t
    for name, value in store.items():
        g = value.grad
        m = store.first_moment[name]
        v = store.second_moment[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        m_hat = m / correction1
        v_hat = v / correction2
        value.data = value.data - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        value.zero_grad()


@dataclass
class Checkpoint:
    """A saved parameter store with the run metadata needed to rebuild the model."""

    store: ParameterStore
    seed: int
    phase: int
    settings: Dict[str, Any] = field(default_factory=dict)
    train_state: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        store = self.store
        return {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "seed": self.seed,
            "phase": self.phase,
            "settings": self.settings,
            "train_state": self.train_state,
            # expand.weight rows are root-major: entry [i, r * 12 + pc]
            "parameters": {
                name: {"shape": list(v.shape), "data": v.data.ravel().tolist()}
                for name, v in store.items()
            },
            "adam_state": {
                "step": store.step,
                "m": {n: a.ravel().tolist() for n, a in store.first_moment.items()},
                "v": {n: a.ravel().tolist() for n, a in store.second_moment.items()},
            },
        }

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "Checkpoint":
        version = payload.get("format_version")
        if version != CHECKPOINT_FORMAT_VERSION:
            raise HarmoniaError(
                f"Unsupported checkpoint format_version {version!r}; expected {CHECKPOINT_FORMAT_VERSION}"
            )
        store = ParameterStore()
        for name, entry in payload["parameters"].items():
            shape: Tuple[int, ...] = tuple(entry["shape"])
            store.add(name, np.array(entry["data"], dtype=np.float64).reshape(shape))
        adam = payload.get("adam_state") or {}
        store.step = int(adam.get("step", 0))
        for name, value in store.items():
            if name in adam.get("m", {}):
                store.first_moment[name] = np.array(adam["m"][name]).reshape(value.shape)
                store.second_moment[name] = np.array(adam["v"][name]).reshape(value.shape)
        return cls(
            store=store,
            seed=int(payload["seed"]),
            phase=int(payload["phase"]),
            settings=dict(payload.get("settings") or {}),
            train_state=dict(payload.get("train_state") or {}),
        )


def save_checkpoint(checkpoint: Checkpoint, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as outfile:
        json.dump(checkpoint.to_dict(), outfile, sort_keys=True)
    logger.info(f"Checkpoint written to {path} (phase {checkpoint.phase}, seed {checkpoint.seed})")
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    try:
        with open(path) as infile:
            payload = json.load(infile)
    except (OSError, json.JSONDecodeError) as err:
        raise HarmoniaError(f"Cannot read checkpoint {path}: {err}") from err
    return Checkpoint.from_dict(payload)


def copy_store(store: ParameterStore, optimizer_state: bool = True) -> ParameterStore:
    clone = ParameterStore()
    for name, value in store.items():
        clone.add(name, value.data.copy())
    if optimizer_state:
        clone.restore(store.snapshot())
    return clone


def checkpoint_from_store(store: ParameterStore, seed: int, phase: int,
                          settings: Optional[Dict[str, Any]] = None,
                          train_state: Optional[Dict[str, Any]] = None) -> Checkpoint:
    return Checkpoint(copy_store(store), seed, phase, dict(settings or {}), dict(train_state or {}))
