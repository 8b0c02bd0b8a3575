"""Explicit-duration HSMM over (key, root) states.

The forward recursion keeps, per frame, a lattice ``alpha[k, r, d]`` where
``d`` counts the frames still to come in the current segment after this one.
A segment ends when ``d`` reaches 0; the next frame then either keeps the key
and moves to a different root, or changes key and draws a fresh initial root.
"""

import itertools
import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import special

from harmonia import autodiff as ad
from harmonia.autodiff import NEG_INF, Value
from harmonia.distributions import DistributionSet, emission_log_table
from harmonia.exceptions import ContractError, EnumerationLimitError
from harmonia.score_ingest import EventSequence
from harmonia.theory import N_PITCH_CLASSES

logger = logging.getLogger(__name__)

ENUMERATION_LIMIT = 10 ** 7

Observed = Union[EventSequence, np.ndarray]


@dataclass(frozen=True)
class Segment:
    key: int  # global key id
    root: int
    start: int
    length: int

    @property
    def stop(self) -> int:
        return self.start + self.length


@dataclass(frozen=True)
class StatePath:
    """A segmentation of a sequence with per-frame chord qualities (None on Rest or undecoded)."""

    segments: Tuple[Segment, ...]
    log_score: float = 0.0
    qualities: Tuple[Optional[int], ...] = field(default=())

    def __len__(self) -> int:
        return self.segments[-1].stop if self.segments else 0

    def frame_keys(self) -> List[int]:
        return [s.key for s in self.segments for _ in range(s.length)]

    def frame_roots(self) -> List[int]:
        return [s.root for s in self.segments for _ in range(s.length)]

    def with_qualities(self, qualities: Sequence[Optional[int]]) -> "StatePath":
        if len(qualities) != len(self):
            raise ContractError(f"{len(qualities)} qualities for a path of {len(self)} frames")
        return replace(self, qualities=tuple(qualities))


def _observations(seq: Observed) -> np.ndarray:
    obs = seq.observations if isinstance(seq, EventSequence) else np.asarray(seq, dtype=np.float64)
    if obs.ndim != 2 or obs.shape[1] != N_PITCH_CLASSES:
        raise ContractError(f"observations must be [L, 12], got {obs.shape}")
    if obs.shape[0] == 0:
        raise ContractError("empty sequence")
    return obs


def _check(dist: DistributionSet) -> None:
    n_keys, n_roots = dist.n_keys, dist.n_roots
    expected = {
        "log_quality": (n_keys, n_roots, dist.emission_logits.shape[1]),
        "log_root_trans": (n_keys, n_roots, n_roots),
        "log_key_init": (n_keys,),
    }
    for name, shape in expected.items():
        actual = getattr(dist, name).shape
        if actual != shape:
            raise ContractError(f"{name} has shape {actual}, expected {shape}")
    if dist.key_transition.log_move.shape != (n_keys, n_keys):
        raise ContractError(f"key transition shape {dist.key_transition.log_move.shape} for {n_keys} keys")


def emission_log_likelihoods(seq: Observed, dist: DistributionSet) -> Value:
    """[L, K, R] log e_t(k, r) = log sum_q p(q | k, r) p(x_t | q, r)."""
    obs = _observations(seq)
    table = emission_log_table(obs, dist.emission_logits)  # [L, R, Q]
    return ad.logsumexp(ad.as_value(table[:, None]) + dist.log_quality, axis=3)


def _forward(obs: np.ndarray, dist: DistributionSet, complete_segments: bool,
             record: Optional[List[np.ndarray]] = None) -> Value:
    _check(dist)
    log_e = emission_log_likelihoods(obs, dist)
    n_keys, n_roots, n_dur = dist.n_keys, dist.n_roots, dist.max_duration
    dur = dist.log_duration.reshape(1, 1, n_dur)
    stay = dist.key_transition.log_stay.reshape(n_keys, 1)
    move = dist.key_transition.log_move
    pad = np.full((n_keys, n_roots, 1), NEG_INF)

    alpha = (dist.log_key_init.reshape(n_keys, 1, 1) + dist.log_root_init.reshape(n_keys, n_roots, 1)
             + dur + log_e[0].reshape(n_keys, n_roots, 1))
    if record is not None:
        record.append(alpha.data.copy())
    for t in range(1, obs.shape[0]):
        ended = alpha[:, :, 0]
        same_key = ad.logsumexp(ended.reshape(n_keys, n_roots, 1) + dist.log_root_trans, axis=1) + stay
        into_key = ad.logsumexp(ad.logsumexp(ended, axis=1).reshape(n_keys, 1) + move, axis=0)
        entry = ad.logaddexp(same_key, into_key.reshape(n_keys, 1) + dist.log_root_init)
        carried = ad.concat([alpha[:, :, 1:], pad], axis=2) if n_dur > 1 else ad.as_value(pad)
        alpha = ad.logaddexp(carried, entry.reshape(n_keys, n_roots, 1) + dur) + log_e[t].reshape(
            n_keys, n_roots, 1)
        if record is not None:
            record.append(alpha.data.copy())
    final = alpha[:, :, 0] if complete_segments else alpha
    return ad.logsumexp(final)


def forward_log_likelihood(seq: Observed, dist: DistributionSet, complete_segments: bool = True) -> Value:
    """Differentiable log p(x) summed over every segmentation and state labelling.

    With ``complete_segments`` the last segment must end exactly on the last
    frame; otherwise a segment cut short by the end of the sequence counts too.
    """
    return _forward(_observations(seq), dist, complete_segments)


def forward_nll(seq: Observed, dist: DistributionSet, complete_segments: bool = True) -> Value:
    return -forward_log_likelihood(seq, dist, complete_segments)


def forward_lattice(seq: Observed, dist: DistributionSet) -> np.ndarray:
    """[L, K, R, D] forward log-probabilities, for inspection."""
    frames: List[np.ndarray] = []
    _forward(_observations(seq), dist, True, record=frames)
    return np.stack(frames)


def _tables(dist: DistributionSet, obs: np.ndarray) -> Tuple[np.ndarray, ...]:
    log_e = emission_log_likelihoods(obs, dist).data
    return (
        log_e,
        dist.log_duration.data,
        dist.log_root_init.data,
        dist.log_root_trans.data,
        dist.log_key_init.data,
        dist.key_transition.log_stay.data,
        dist.key_transition.log_move.data,
    )


def viterbi(seq: Observed, dist: DistributionSet, complete_segments: bool = True) -> StatePath:
    """Most probable segmentation with (key, root) labels.

    Without ``complete_segments`` the last segment may be cut short by the end
    of the sequence. It then scores log P(D >= n) for its observed length n,
    as in :func:`forward_log_likelihood` and :func:`brute_force_marginal`.

    Ties go to the predecessor with the smallest (key, root, remaining)
    index, and the final state is chosen the same way; a cut-off last
    segment prefers the shortest length.
    """
    obs = _observations(seq)
    _check(dist)
    log_e, dur, root_init, root_trans, key_init, stay, move = _tables(dist, obs)
    length = obs.shape[0]
    n_keys, n_roots, n_dur = dist.n_keys, dist.n_roots, dist.max_duration

    delta = key_init[:, None, None] + root_init[:, :, None] + dur[None, None, :] + log_e[0][:, :, None]
    entries = np.empty((length, n_keys, n_roots))
    entries[0] = key_init[:, None] + root_init
    from_carry = np.zeros((length, n_keys, n_roots, n_dur), dtype=bool)
    entry_from = np.zeros((length, n_keys, n_roots), dtype=np.int64)
    keys = np.arange(n_keys)[:, None]
    roots = np.arange(n_roots)[None, :]
    pad = np.full((n_keys, n_roots, 1), NEG_INF)

    for t in range(1, length):
        ended = delta[:, :, 0]
        # scores[k, r, k', r'] of entering (k, r) from a segment (k', r') that just ended
        scores = ended[None, None, :, :] + move.T[:, None, :, None] + root_init[:, :, None, None]
        for k in range(n_keys):
            scores[k, :, k, :] = (ended[k][:, None] + root_trans[k] + stay[k]).T
        flat = scores.reshape(n_keys, n_roots, n_keys * n_roots)
        best = np.argmax(flat, axis=2)
        entry = np.take_along_axis(flat, best[:, :, None], axis=2)[:, :, 0]
        prev_k, prev_r = np.divmod(best, n_roots)

        carried = np.concatenate([delta[:, :, 1:], pad], axis=2)
        fresh = entry[:, :, None] + dur[None, None, :]
        carry_first = (keys < prev_k) | ((keys == prev_k) & (roots < prev_r))
        take_carry = (carried > fresh) | ((carried == fresh) & carry_first[:, :, None])
        take_carry[:, :, n_dur - 1] = False
        from_carry[t] = take_carry
        entry_from[t] = best
        entries[t] = entry
        delta = np.where(take_carry, carried, fresh) + log_e[t][:, :, None]

    segments: List[Segment] = []
    if complete_segments:
        final = delta[:, :, 0]
        k, r = np.unravel_index(int(np.argmax(final)), final.shape)
        score = float(final[k, r])
        stop, t = length, length - 1
    else:
        cum = np.concatenate([np.zeros((1, n_keys, n_roots)), np.cumsum(log_e, axis=0)])
        lengths = np.arange(1, min(n_dur, length) + 1)
        starts = length - lengths
        tail = np.array([special.logsumexp(dur[n - 1:]) for n in lengths])
        last = entries[starts] + tail[:, None, None] + cum[length] - cum[starts]
        i, k, r = np.unravel_index(int(np.argmax(last)), last.shape)
        score = float(last[i, k, r])
        start = int(starts[i])
        segments.append(Segment(dist.key_ids[int(k)], int(r), start, length - start))
        if start == 0:
            return StatePath(tuple(segments), score)
        k, r = divmod(int(entry_from[start, k, r]), n_roots)
        stop, t = start, start - 1

    k, r, d = int(k), int(r), 0
    while t > 0:
        if from_carry[t, k, r, d]:
            d += 1
        else:
            segments.append(Segment(dist.key_ids[k], r, t, stop - t))
            stop = t
            k, r = divmod(int(entry_from[t, k, r]), n_roots)
            d = 0
        t -= 1
    segments.append(Segment(dist.key_ids[k], r, 0, stop))
    segments.reverse()
    return StatePath(tuple(segments), score)


# exhaustive enumeration, for checking the dynamic programmes on small inputs


def count_paths(length: int, n_states: int, max_duration: int, complete_segments: bool = True) -> int:
    ways = [0] * (length + 1)
    ways[0] = 1
    for t in range(1, length + 1):
        ways[t] = sum(ways[t - d] * n_states for d in range(1, min(max_duration, t) + 1))
    if complete_segments:
        return ways[length]
    # the last segment may be any length up to D and its drawn duration any value at least that long
    total = 0
    for last in range(1, min(max_duration, length) + 1):
        total += ways[length - last] * n_states * (max_duration - last + 1)
    return total


def _compositions(length: int, max_duration: int):
    if length == 0:
        yield ()
        return
    for first in range(1, min(max_duration, length) + 1):
        for rest in _compositions(length - first, max_duration):
            yield (first,) + rest


def brute_force_marginal(seq: Observed, dist: DistributionSet, complete_segments: bool = True,
                         limit: int = ENUMERATION_LIMIT) -> Tuple[float, StatePath]:
    """Sum and argmax over every path by explicit enumeration.

    Returns the log marginal and the best path; refuses inputs with more than
    ``limit`` paths. Without ``complete_segments`` a last segment of observed
    length n is scored with log P(D >= n), the same quantity
    :func:`viterbi` maximizes and :func:`forward_log_likelihood` sums.
    """
    obs = _observations(seq)
    _check(dist)
    log_e, dur, root_init, root_trans, key_init, stay, move = _tables(dist, obs)
    length = obs.shape[0]
    n_keys, n_roots, n_dur = dist.n_keys, dist.n_roots, dist.max_duration
    n_paths = count_paths(length, n_keys * n_roots, n_dur, complete_segments)
    if n_paths > limit:
        raise EnumerationLimitError(f"{n_paths} paths exceed the enumeration limit of {limit}")

    cum = np.concatenate([np.zeros((1, n_keys, n_roots)), np.cumsum(log_e, axis=0)])
    partial_dur = np.array([special.logsumexp(dur[d:]) for d in range(n_dur)])
    states = list(itertools.product(range(n_keys), range(n_roots)))

    scores: List[float] = []
    best_score, best_path = -np.inf, None
    for lengths in _compositions(length, n_dur):
        starts = np.concatenate([[0], np.cumsum(lengths)[:-1]])
        duration_terms = [dur[n - 1] for n in lengths]
        if not complete_segments:
            duration_terms[-1] = partial_dur[lengths[-1] - 1]
        for labels in itertools.product(states, repeat=len(lengths)):
            total = 0.0
            for i, ((k, r), start, n) in enumerate(zip(labels, starts, lengths)):
                if i == 0:
                    total += key_init[k] + root_init[k, r]
                else:
                    pk, pr = labels[i - 1]
                    total += stay[k] + root_trans[k, pr, r] if pk == k else move[pk, k] + root_init[k, r]
                total += duration_terms[i] + cum[start + n, k, r] - cum[start, k, r]
            scores.append(total)
            if total > best_score:
                best_score = total
                best_path = (labels, starts, lengths)
    if complete_segments:
        assert len(scores) == n_paths
    labels, starts, lengths = best_path
    segments = tuple(
        Segment(dist.key_ids[k], r, int(s), int(n)) for (k, r), s, n in zip(labels, starts, lengths)
    )
    return float(special.logsumexp(scores)), StatePath(segments, float(best_score))
