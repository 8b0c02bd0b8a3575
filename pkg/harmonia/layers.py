"""Recurrent cell and one-hidden-layer perceptron built on :mod:`harmonia.autodiff`."""

from dataclasses import dataclass
from typing import Mapping, Tuple

import numpy as np

from harmonia import autodiff as ad
from harmonia.autodiff import Value
from harmonia.exceptions import ContractError
from harmonia.store import ParameterStore, xavier_uniform

State = Tuple[Value, Value]


def recurrent_cell(x: Value, state: State, params: Mapping[str, Value]) -> State:
    """One step of a long short-term memory cell.

    ``params`` holds ``w_ih`` [n_in, 4h], ``w_hh`` [h, 4h] and ``b`` [4h]; the
    gate blocks are ordered input, forget, output, candidate.
    """
    hidden, cell = state
    w_ih, w_hh, b = params["w_ih"], params["w_hh"], params["b"]
    size = w_hh.shape[0]
    if w_ih.shape[1] != 4 * size or w_hh.shape != (size, 4 * size) or b.shape != (4 * size,):
        raise ContractError(
            f"recurrent_cell: inconsistent shapes w_ih={w_ih.shape} w_hh={w_hh.shape} b={b.shape}"
        )
    gates = ad.matmul(x, w_ih) + ad.matmul(hidden, w_hh) + b
    i = ad.sigmoid(gates[0:size])
    f = ad.sigmoid(gates[size:2 * size])
    o = ad.sigmoid(gates[2 * size:3 * size])
    candidate = ad.tanh(gates[3 * size:4 * size])
    new_cell = f * cell + i * candidate
    new_hidden = o * ad.tanh(new_cell)
    return new_hidden, new_cell


def mlp2(x: Value, params: Mapping[str, Value]) -> Value:
    """affine -> tanh -> affine over the last axis of ``x``."""
    hidden = ad.tanh(ad.matmul(x, params["w1"]) + params["b1"])
    return ad.matmul(hidden, params["w2"]) + params["b2"]


@dataclass(frozen=True)
class LSTMCell:
    prefix: str
    input_size: int = 12
    hidden_size: int = 12

    def declare(self, store: ParameterStore, rng: np.random.Generator) -> None:
        gates = 4 * self.hidden_size
        store.add(f"{self.prefix}.w_ih", xavier_uniform(rng, self.input_size, gates))
        store.add(f"{self.prefix}.w_hh", xavier_uniform(rng, self.hidden_size, gates))
        store.add(f"{self.prefix}.b", np.zeros(gates))

    def params(self, store: ParameterStore) -> Mapping[str, Value]:
        return {k: store[f"{self.prefix}.{k}"] for k in ("w_ih", "w_hh", "b")}

    def zero_state(self) -> State:
        zeros = np.zeros(self.hidden_size)
        return ad.as_value(zeros), ad.as_value(zeros)

    def __call__(self, store: ParameterStore, x: Value, state: State) -> State:
        return recurrent_cell(x, state, self.params(store))


@dataclass(frozen=True)
class MLP2:
    prefix: str
    input_size: int
    output_size: int
    hidden_size: int = 12

    def declare(self, store: ParameterStore, rng: np.random.Generator) -> None:
        store.add(f"{self.prefix}.w1", xavier_uniform(rng, self.input_size, self.hidden_size))
        store.add(f"{self.prefix}.b1", np.zeros(self.hidden_size))
        store.add(f"{self.prefix}.w2", xavier_uniform(rng, self.hidden_size, self.output_size))
        store.add(f"{self.prefix}.b2", np.zeros(self.output_size))

    def params(self, store: ParameterStore) -> Mapping[str, Value]:
        return {k: store[f"{self.prefix}.{k}"] for k in ("w1", "b1", "w2", "b2")}

    def __call__(self, store: ParameterStore, x: Value) -> Value:
        if x.shape[-1] != self.input_size:
            raise ContractError(f"{self.prefix}: expected width {self.input_size}, got {x.shape}")
        return mlp2(x, self.params(store))
