"""Probability tables of the harmonic HSMM.

Sequence-independent tables (quality, duration, root transition, initial
root, modulation rate) are computed once per parameter state as
:class:`ModelTables`; the key distribution depends on the observed sequence
and is folded in by :func:`assemble`.
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from cached_property import cached_property
from scipy import special

from harmonia import autodiff as ad
from harmonia.autodiff import NEG_INF, Value
from harmonia.exceptions import ContractError
from harmonia.layers import MLP2, LSTMCell
from harmonia.store import ParameterStore, xavier_uniform
from harmonia.theory import (
    CHORD_TONES,
    MAX_DURATION,
    N_KEYS,
    N_MODES,
    N_PITCH_CLASSES,
    N_QUALITIES,
    N_ROOTS,
    N_SHIFTS,
    QUALITY_LABELS,
    REST_ROOT,
)

EMBED = 12

MODE_RNN = LSTMCell("mode_rnn", EMBED, EMBED)
OBS_RNN = LSTMCell("obs_rnn", EMBED, EMBED)
ROOT_TRANS_MLP = MLP2("root_trans_mlp", 3 * EMBED, 1)
ROOT_INIT_MLP = MLP2("root_init_mlp", 2 * EMBED, 1)
ATTENTION_MLP = MLP2("attention_mlp", EMBED + 1, 1)
SHIFT_MLP = MLP2("shift_mlp", 2 * EMBED, N_SHIFTS)


def init_parameters(seed: int) -> ParameterStore:
    """Declare every learnable array; matrices Xavier-uniform, biases and duration logits zero."""
    rng = np.random.default_rng(seed)
    store = ParameterStore()
    MODE_RNN.declare(store, rng)
    # row-major: column r * 12 + pc of the expansion feeds root r
    store.add("expand.weight", xavier_uniform(rng, EMBED, N_PITCH_CLASSES * EMBED))
    store.add("duration.logits", np.zeros(MAX_DURATION))
    ROOT_TRANS_MLP.declare(store, rng)
    ROOT_INIT_MLP.declare(store, rng)
    store.add("obs_proj.weight", xavier_uniform(rng, N_PITCH_CLASSES, EMBED))
    OBS_RNN.declare(store, rng)
    ATTENTION_MLP.declare(store, rng)
    SHIFT_MLP.declare(store, rng)
    store.add("beta.logit", np.zeros(1))
    return store


# chord quality templates


@dataclass(frozen=True)
class ChordQualityTemplates:
    logits: np.ndarray  # [13 roots, 7 qualities, 12 pcs]
    weight: float


def build_templates(w: float = 5.0) -> ChordQualityTemplates:
    if w <= 0:
        raise ContractError(f"template weight must be positive, got {w}")
    logits = np.full((N_ROOTS, N_QUALITIES, N_PITCH_CLASSES), -w)
    for q, label in enumerate(QUALITY_LABELS):
        for root in range(N_PITCH_CLASSES):
            for interval in CHORD_TONES[label]:
                logits[root, q, (root + interval) % N_PITCH_CLASSES] = w
    logits.setflags(write=False)
    return ChordQualityTemplates(logits, float(w))


def emission_log_prob(x: Sequence[float], q: int, r: int, templates: ChordQualityTemplates) -> float:
    """log p(x | q, r) as a product of 12 Bernoulli factors."""
    x = np.asarray(x, dtype=np.float64)
    v = templates.logits[r, q]
    return float(np.sum(x * special.log_expit(v) + (1.0 - x) * special.log_expit(-v)))


def emission_log_table(observations: np.ndarray, emission_logits: np.ndarray) -> np.ndarray:
    """[L, R, Q] table of log p(x_t | q, r)."""
    on = special.log_expit(emission_logits)
    off = special.log_expit(-emission_logits)
    return np.einsum("lp,rqp->lrq", observations, on) + np.einsum("lp,rqp->lrq", 1.0 - observations, off)


# per-mode tables


def mode_embeddings(store: ParameterStore, n_modes: int = N_MODES) -> Value:
    """[n_modes, 12]: e_m is the hidden output of step m, starting from zero input and state."""
    hidden, cell = MODE_RNN.zero_state()
    x = hidden
    outputs = []
    for _ in range(n_modes):
        hidden, cell = MODE_RNN(store, x, (hidden, cell))
        outputs.append(hidden)
        x = hidden
    return ad.stack(outputs)


def quality_distribution(mode_emb: Value, templates: ChordQualityTemplates, store: ParameterStore) -> Value:
    """[M, 13, 7] log p(q | m, r); the Rest row reads expanded row 0."""
    n_modes = mode_emb.shape[0]
    expanded = ad.matmul(mode_emb, store["expand.weight"]).reshape(n_modes, N_PITCH_CLASSES, EMBED)
    tpl = templates.logits
    pitched = ad.vsum(ad.as_value(tpl[None, :REST_ROOT]) * expanded.reshape(n_modes, N_PITCH_CLASSES, 1, EMBED),
                      axis=3)
    rest = ad.vsum(ad.as_value(tpl[None, REST_ROOT]) * expanded[:, 0:1, :], axis=2)
    logits = ad.concat([pitched, rest.reshape(n_modes, 1, N_QUALITIES)], axis=1)
    return ad.log_softmax(logits, axis=2)


def marginal_emission_logits(log_quality: Value, templates: ChordQualityTemplates) -> Value:
    """[M, 13, 12] v_{pc|r,m} = sum_q p(q|m,r) v_{pc|q,r}; the Rest row is fixed at -w."""
    n_modes = log_quality.shape[0]
    probs = ad.exp(log_quality[:, :REST_ROOT, :])
    pitched = ad.vsum(probs.reshape(n_modes, N_PITCH_CLASSES, N_QUALITIES, 1)
                      * ad.as_value(templates.logits[None, :REST_ROOT]), axis=2)
    rest = ad.as_value(np.full((n_modes, 1, N_PITCH_CLASSES), -templates.weight))
    return ad.concat([pitched, rest], axis=1)


def duration_distribution(store: ParameterStore) -> Value:
    """[16] log p(d); index d is a segment of d + 1 frames."""
    return ad.log_softmax(store["duration.logits"])


def _self_mask(n: int) -> np.ndarray:
    mask = np.zeros((n, n))
    np.fill_diagonal(mask, NEG_INF)
    return mask


def root_transition_distribution(mode_emb: Value, marginal: Value, store: ParameterStore) -> Value:
    """[M, 13, 13] log p(j | i, m) with self-transitions masked out."""
    n_modes = mode_emb.shape[0]
    grid = (n_modes, N_ROOTS, N_ROOTS, EMBED)
    features = ad.concat(
        [
            ad.broadcast_to(mode_emb.reshape(n_modes, 1, 1, EMBED), grid),
            ad.broadcast_to(marginal.reshape(n_modes, N_ROOTS, 1, EMBED), grid),
            ad.broadcast_to(marginal.reshape(n_modes, 1, N_ROOTS, EMBED), grid),
        ],
        axis=3,
    )
    logits = ROOT_TRANS_MLP(store, features).reshape(n_modes, N_ROOTS, N_ROOTS)
    return ad.log_softmax(logits + _self_mask(N_ROOTS), axis=2)


def initial_root_distribution(mode_emb: Value, marginal: Value, store: ParameterStore) -> Value:
    """[M, 13] log p(r | m)."""
    n_modes = mode_emb.shape[0]
    features = ad.concat(
        [ad.broadcast_to(mode_emb.reshape(n_modes, 1, EMBED), (n_modes, N_ROOTS, EMBED)), marginal], axis=2
    )
    return ad.log_softmax(ROOT_INIT_MLP(store, features).reshape(n_modes, N_ROOTS), axis=1)


def modulation_rate(store: ParameterStore, cap: float) -> Value:
    """beta = cap * sigmoid(v_beta), so beta never exceeds its cap."""
    return ad.sigmoid(store["beta.logit"]).reshape(()) * cap


# sequence encoder and key distribution


@dataclass
class EncodedObservation:
    embedding: Value  # [12]
    attention: Value  # [L]
    hidden: Value  # [L, 12]


def encode_observation(observations: np.ndarray, store: ParameterStore) -> EncodedObservation:
    """Attention-pooled recurrent embedding of a [L, 12] observation array."""
    length = observations.shape[0]
    if length == 0:
        raise ContractError("cannot encode an empty sequence")
    projected = ad.tanh(ad.matmul(ad.as_value(observations), store["obs_proj.weight"]))
    hidden, cell = OBS_RNN.zero_state()
    states = []
    for t in range(length):
        hidden, cell = OBS_RNN(store, projected[t], (hidden, cell))
        states.append(hidden)
    h = ad.stack(states)
    ratio = (np.arange(length, dtype=np.float64) / length).reshape(length, 1)
    scores = ATTENTION_MLP(store, ad.concat([h, ad.as_value(ratio)], axis=1)).reshape(length)
    attention = ad.softmax(scores)
    return EncodedObservation(ad.matmul(attention, h), attention, h)


def key_distribution(embedding: Value, mode_emb: Value, store: ParameterStore, shift_enabled: bool = True) -> Value:
    """[24] log p(k = (m, s)) = log p(m) + log p(s | m); shifts pinned to 0 when disabled."""
    n_modes = mode_emb.shape[0]
    log_mode = ad.log_softmax(ad.matmul(mode_emb, embedding))
    if shift_enabled:
        features = ad.concat(
            [mode_emb, ad.broadcast_to(embedding.reshape(1, EMBED), (n_modes, EMBED))], axis=1
        )
        log_shift = ad.log_softmax(SHIFT_MLP(store, features), axis=1)
    else:
        pinned = np.full((n_modes, N_SHIFTS), NEG_INF)
        pinned[:, 0] = 0.0
        log_shift = ad.as_value(pinned)
    return (log_mode.reshape(n_modes, 1) + log_shift).reshape(n_modes * N_SHIFTS)


@dataclass
class KeyTransition:
    """p(k_next | k_prev): stay with 1 - beta, otherwise move by the renormalized key prior."""

    log_stay: Value  # [K]
    log_move: Value  # [K_prev, K_next], diagonal NEG_INF

    def matrix(self) -> np.ndarray:
        probs = np.exp(self.log_move.data)
        np.fill_diagonal(probs, np.exp(self.log_stay.data))
        return probs

    def __call__(self, k_prev: int, k_next: int) -> float:
        if k_prev == k_next:
            return float(np.exp(self.log_stay.data[k_prev]))
        return float(np.exp(self.log_move.data[k_prev, k_next]))


def key_transition(beta: Value, log_key_init: Value, cap: float) -> KeyTransition:
    if isinstance(beta, Value):
        beta_value = beta
    else:
        beta_value = ad.as_value(beta)
    b = float(beta_value.data)
    if not 0.0 <= b <= cap + 1e-15:
        raise ContractError(f"beta {b} outside [0, {cap}]")
    n_keys = log_key_init.shape[0]
    if cap == 0.0 or b == 0.0:
        return KeyTransition(ad.as_value(np.zeros(n_keys)), ad.as_value(np.full((n_keys, n_keys), NEG_INF)))
    log_prior = ad.log_softmax(log_key_init.reshape(1, n_keys) + _self_mask(n_keys), axis=1)
    log_stay = ad.broadcast_to(ad.log(1.0 - beta_value), (n_keys,))
    return KeyTransition(log_stay, log_prior + ad.log(beta_value))


# rotation from modes to keys


def rotation_index(shift: int) -> np.ndarray:
    """Key-level root r reads mode-level root (r - s) mod 12; Rest maps to itself."""
    rot = [(r - shift) % N_PITCH_CLASSES for r in range(N_PITCH_CLASSES)]
    return np.array(rot + [REST_ROOT])


def _key_indices(key_ids: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
    modes = np.array([k // N_SHIFTS for k in key_ids])
    rot = np.stack([rotation_index(k % N_SHIFTS) for k in key_ids])
    return modes, rot


def rotate_quality(log_quality: Value, key_ids: Sequence[int]) -> Value:
    modes, rot = _key_indices(key_ids)
    return log_quality[modes[:, None], rot]


def rotate_root_init(log_root_init: Value, key_ids: Sequence[int]) -> Value:
    modes, rot = _key_indices(key_ids)
    return log_root_init[modes[:, None], rot]


def rotate_root_transition(log_root_trans: Value, key_ids: Sequence[int]) -> Value:
    modes, rot = _key_indices(key_ids)
    return log_root_trans[modes[:, None, None], rot[:, :, None], rot[:, None, :]]


# assembled tables


@dataclass
class ModelTables:
    """Everything that does not depend on the observed sequence."""

    templates: ChordQualityTemplates
    mode_emb: Value
    log_quality: Value  # [M, 13, 7]
    marginal: Value  # [M, 13, 12]
    log_duration: Value  # [16]
    log_root_trans: Value  # [M, 13, 13]
    log_root_init: Value  # [M, 13]
    beta: Value
    beta_cap: float


def build_tables(store: ParameterStore, templates: ChordQualityTemplates, beta_cap: float) -> ModelTables:
    mode_emb = mode_embeddings(store)
    log_quality = quality_distribution(mode_emb, templates, store)
    marginal = marginal_emission_logits(log_quality, templates)
    return ModelTables(
        templates=templates,
        mode_emb=mode_emb,
        log_quality=log_quality,
        marginal=marginal,
        log_duration=duration_distribution(store),
        log_root_trans=root_transition_distribution(mode_emb, marginal, store),
        log_root_init=initial_root_distribution(mode_emb, marginal, store),
        beta=modulation_rate(store, beta_cap),
        beta_cap=beta_cap,
    )


@dataclass
class DistributionSet:
    """The log-probability tables one HSMM evaluation consumes.

    Rows are indexed by position in ``key_ids``; ``key_ids`` maps them back to
    global keys k = m * 12 + s.
    """

    log_duration: Value  # [D]
    log_quality: Value  # [K, R, Q]
    emission_logits: np.ndarray  # [R, Q, 12]
    log_root_init: Value  # [K, R]
    log_root_trans: Value  # [K, R, R]
    log_key_init: Value  # [K]
    key_transition: KeyTransition
    beta: Value
    key_ids: Tuple[int, ...]
    marginal_emission_logits: Optional[Value] = None  # [M, 13, 12]

    @property
    def n_keys(self) -> int:
        return self.log_key_init.shape[0]

    @property
    def n_roots(self) -> int:
        return self.log_root_init.shape[1]

    @property
    def max_duration(self) -> int:
        return self.log_duration.shape[0]

    @cached_property
    def duration(self) -> np.ndarray:
        return np.exp(self.log_duration.data)

    @cached_property
    def quality(self) -> np.ndarray:
        return np.exp(self.log_quality.data)

    @cached_property
    def emission_mu(self) -> np.ndarray:
        return special.expit(self.emission_logits)

    @cached_property
    def root_init(self) -> np.ndarray:
        return np.exp(self.log_root_init.data)

    @cached_property
    def root_trans(self) -> np.ndarray:
        return np.exp(self.log_root_trans.data)

    @cached_property
    def key_init(self) -> np.ndarray:
        return np.exp(self.log_key_init.data)

    @cached_property
    def key_trans(self) -> np.ndarray:
        return self.key_transition.matrix()

    @classmethod
    def from_arrays(
        cls,
        duration: np.ndarray,
        quality: np.ndarray,
        emission_logits: np.ndarray,
        root_init: np.ndarray,
        root_trans: np.ndarray,
        key_init: np.ndarray,
        beta: float = 0.0,
        key_ids: Optional[Sequence[int]] = None,
    ) -> "DistributionSet":
        """Build constant tables from probabilities; zero entries become NEG_INF logs."""

        def logp(p: np.ndarray) -> Value:
            p = np.asarray(p, dtype=np.float64)
            with np.errstate(divide="ignore"):
                return ad.as_value(np.where(p > 0, np.log(np.where(p > 0, p, 1.0)), NEG_INF))

        log_key_init = logp(key_init)
        n_keys = log_key_init.shape[0]
        cap = max(beta, 0.0)
        return cls(
            log_duration=logp(duration),
            log_quality=logp(quality),
            emission_logits=np.asarray(emission_logits, dtype=np.float64),
            log_root_init=logp(root_init),
            log_root_trans=logp(root_trans),
            log_key_init=log_key_init,
            key_transition=key_transition(ad.as_value(beta), log_key_init, cap),
            beta=ad.as_value(beta),
            key_ids=tuple(key_ids) if key_ids is not None else tuple(range(n_keys)),
        )


def assemble(tables: ModelTables, log_key_init_full: Value, key_ids: Sequence[int]) -> DistributionSet:
    """Rotate per-mode tables onto ``key_ids`` and attach the sequence's key prior."""
    key_ids = tuple(key_ids)
    log_key_init = log_key_init_full[np.array(key_ids)]
    if len(key_ids) < N_KEYS:
        # keys outside key_ids carry no mass (shift pinned to 0)
        log_key_init = ad.log_softmax(log_key_init)
    return DistributionSet(
        log_duration=tables.log_duration,
        log_quality=rotate_quality(tables.log_quality, key_ids),
        emission_logits=tables.templates.logits,
        log_root_init=rotate_root_init(tables.log_root_init, key_ids),
        log_root_trans=rotate_root_transition(tables.log_root_trans, key_ids),
        log_key_init=log_key_init,
        key_transition=key_transition(tables.beta, log_key_init, tables.beta_cap),
        beta=tables.beta,
        key_ids=key_ids,
        marginal_emission_logits=tables.marginal,
    )


def synthetic_distribution(
    rng: np.random.Generator,
    template_weight: float = 5.0,
    key_ids: Sequence[int] = (0, N_SHIFTS),
    concentration: float = 0.3,
    rest_prob: float = 0.02,
) -> DistributionSet:
    """Random but sharply structured tables with no modulation, for generating test corpora.

    Every key gets its own sparse root-transition rows and peaked qualities;
    Rest is rare.
    """
    n_keys = len(key_ids)
    templates = build_templates(template_weight)

    duration = np.zeros(MAX_DURATION)
    duration[:4] = (0.1, 0.4, 0.3, 0.2)

    root_trans = np.zeros((n_keys, N_ROOTS, N_ROOTS))
    root_init = np.zeros((n_keys, N_ROOTS))
    quality = np.zeros((n_keys, N_ROOTS, N_QUALITIES))
    for k in range(n_keys):
        for i in range(N_ROOTS):
            row = rng.dirichlet(np.full(N_PITCH_CLASSES, concentration)) * (1.0 - rest_prob)
            row = np.append(row, rest_prob)
            row[i] = 0.0
            root_trans[k, i] = row / row.sum()
            quality[k, i] = rng.dirichlet(np.full(N_QUALITIES, concentration))
        init = rng.dirichlet(np.ones(N_PITCH_CLASSES)) * (1.0 - rest_prob)
        root_init[k] = np.append(init, rest_prob)

    return DistributionSet.from_arrays(
        duration=duration,
        quality=quality,
        emission_logits=templates.logits,
        root_init=root_init,
        root_trans=root_trans,
        key_init=np.full(n_keys, 1.0 / n_keys),
        beta=0.0,
        key_ids=key_ids,
    )
