"""Tonic and scale-degree importance read off a trained model.

Each mode's root-transition table, slowed down by the average segment
duration, defines a Markov chain over the 13 roots; the tonic is the pitch
class with the largest stationary mass.
"""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple, Union

import numpy as np
from scipy import special
from scipy.sparse import csgraph

from harmonia.exceptions import ContractError, ConvergenceError, ReducibleChainError
from harmonia.model import HarmonicModel
from harmonia.store import Checkpoint
from harmonia.theory import N_MODES, N_PITCH_CLASSES, NOTE_NAMES, REST_LABEL, REST_ROOT

logger = logging.getLogger(__name__)

STATIONARY_TOL = 1e-12
MAX_ITERATIONS = 10 ** 6
POLISH_ITERATIONS = 100
LOW_CONFIDENCE_MARGIN = 0.02


@dataclass(frozen=True)
class StationaryResult:
    mode: int
    pi: np.ndarray  # [13]
    tonic_pc: int
    residual: float
    iterations: int = 0

    @property
    def rest_mass(self) -> float:
        return float(self.pi[REST_ROOT])

    @property
    def pi_no_rest(self) -> np.ndarray:
        pitched = self.pi[:N_PITCH_CLASSES]
        return pitched / pitched.sum()


@dataclass(frozen=True)
class PitchClassProfile:
    mode: int
    p_pc: np.ndarray  # [12] Bernoulli means, not a categorical


@dataclass(frozen=True)
class TonalityReport:
    stationary: StationaryResult
    profile: PitchClassProfile
    low_confidence: bool
    mode_class: str

    @property
    def mode(self) -> int:
        return self.stationary.mode

    @property
    def tonic_pc(self) -> int:
        return self.stationary.tonic_pc

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mode": self.mode,
            "stationary": self.stationary.pi.tolist(),
            "stationary_no_rest": self.stationary.pi_no_rest.tolist(),
            "rest_mass": self.stationary.rest_mass,
            "residual": self.stationary.residual,
            "tonic_pc": self.tonic_pc,
            "tonic_name": NOTE_NAMES[self.tonic_pc],
            "mode_class": self.mode_class,
            "low_confidence": self.low_confidence,
            "pitch_class_profile": self.profile.p_pc.tolist(),
        }


def average_duration(duration: np.ndarray) -> float:
    """Expected segment length in frames; index d is a segment of d + 1 frames."""
    duration = np.asarray(duration, dtype=np.float64)
    return float(np.sum((np.arange(duration.shape[0]) + 1) * duration))


def build_markov_matrix(duration: np.ndarray, root_trans: np.ndarray) -> np.ndarray:
    """Per-frame chain: stay with probability 1 - 1/a, otherwise follow ``root_trans``."""
    a = average_duration(duration)
    if a < 1.0:
        raise ContractError(f"average duration {a} is below one frame")
    root_trans = np.asarray(root_trans, dtype=np.float64)
    n = root_trans.shape[0]
    return (1.0 - 1.0 / a) * np.eye(n) + root_trans / a


def _check_stochastic(matrix: np.ndarray) -> None:
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ContractError(f"Markov matrix must be square, got {matrix.shape}")
    if np.any(matrix < 0) or not np.allclose(matrix.sum(axis=1), 1.0, atol=1e-9):
        raise ContractError("Markov matrix is not row-stochastic")
    off_diagonal = matrix * (1.0 - np.eye(matrix.shape[0]))
    n_components, _ = csgraph.connected_components(off_diagonal > 0, directed=True, connection="strong")
    if n_components > 1:
        raise ReducibleChainError(f"Markov chain splits into {n_components} closed classes")


def stationary_distribution(
    matrix: np.ndarray, tol: float = STATIONARY_TOL, max_iterations: int = MAX_ITERATIONS
) -> Tuple[np.ndarray, float, int]:
    """Power iteration from the uniform vector; returns (pi, residual, iterations).

    Once the residual drops below ``tol`` the iteration continues for as long
    as the residual keeps shrinking, up to a fixed number of extra steps.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    _check_stochastic(matrix)
    n = matrix.shape[0]
    pi = np.full(n, 1.0 / n)
    residual = np.inf
    iteration = 0
    while iteration < max_iterations:
        iteration += 1
        nxt = pi @ matrix
        nxt /= nxt.sum()
        residual = float(np.max(np.abs(nxt - pi)))
        pi = nxt
        if residual < tol:
            break
    else:
        raise ConvergenceError(f"power iteration did not converge in {max_iterations} iterations", residual)

    for _ in range(POLISH_ITERATIONS):
        nxt = pi @ matrix
        nxt /= nxt.sum()
        step = float(np.max(np.abs(nxt - pi)))
        if step >= residual:
            break
        pi, residual = nxt, step
        iteration += 1
    residual = float(np.max(np.abs(pi @ matrix - pi)))
    return pi, residual, iteration


def pitch_class_profile(mode: int, marginal_logits: np.ndarray, pi: np.ndarray) -> PitchClassProfile:
    """p(pc | m) = sum_r sigmoid(v_{pc|r,m}) pi_r."""
    return PitchClassProfile(mode, np.asarray(pi) @ special.expit(np.asarray(marginal_logits)))


def _as_model(source: Union[HarmonicModel, Checkpoint]) -> HarmonicModel:
    return source if isinstance(source, HarmonicModel) else HarmonicModel.from_checkpoint(source)


def mode_tables(source: Union[HarmonicModel, Checkpoint]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(duration [16], root transitions [M, 13, 13], marginal emission logits [M, 13, 12])."""
    tables = _as_model(source).tables()
    return (
        np.exp(tables.log_duration.data),
        np.exp(tables.log_root_trans.data),
        tables.marginal.data,
    )


def analyze_mode(mode: int, duration: np.ndarray, root_trans: np.ndarray, marginal_logits: np.ndarray) -> TonalityReport:
    pi, residual, iterations = stationary_distribution(build_markov_matrix(duration, root_trans))
    tonic = int(np.argmax(pi[:N_PITCH_CLASSES]))
    stationary = StationaryResult(mode, pi, tonic, residual, iterations)
    profile = pitch_class_profile(mode, marginal_logits, pi)
    pitched = stationary.pi_no_rest
    low_confidence = bool(pitched.max() - np.median(pitched) < LOW_CONFIDENCE_MARGIN)
    major = profile.p_pc[(tonic + 4) % N_PITCH_CLASSES] > profile.p_pc[(tonic + 3) % N_PITCH_CLASSES]
    return TonalityReport(stationary, profile, low_confidence, "major" if major else "minor")


def report_tonality(source: Union[HarmonicModel, Checkpoint]) -> List[TonalityReport]:
    duration, root_trans, marginal = mode_tables(source)
    reports = []
    for mode in range(N_MODES):
        report = analyze_mode(mode, duration, root_trans[mode], marginal[mode])
        flag = " (low confidence)" if report.low_confidence else ""
        logger.info(
            f"Mode {mode}: tonic {NOTE_NAMES[report.tonic_pc]} ({report.mode_class}){flag}, "
            f"rest mass {report.stationary.rest_mass:.3f}, residual {report.stationary.residual:.2e}"
        )
        reports.append(report)
    return reports


def tonic_table(source: Union[HarmonicModel, Checkpoint, Sequence[TonalityReport]]) -> Dict[int, Tuple[int, str]]:
    """mode -> (tonic pitch class, "major" | "minor")."""
    if isinstance(source, (HarmonicModel, Checkpoint)):
        source = report_tonality(source)
    return {r.mode: (r.tonic_pc, r.mode_class) for r in source}


def write_tonality_csv(reports: Sequence[TonalityReport], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as outfile:
        writer = csv.writer(outfile)
        writer.writerow(["mode", "index", "label", "stationary", "stationary_no_rest", "pitch_class_profile"])
        for report in reports:
            pitched = report.stationary.pi_no_rest
            for index in range(REST_ROOT + 1):
                if index == REST_ROOT:
                    row = [report.mode, index, REST_LABEL, report.stationary.pi[index], "", ""]
                else:
                    row = [report.mode, index, NOTE_NAMES[index], report.stationary.pi[index], pitched[index],
                           report.profile.p_pc[index]]
                writer.writerow(row)
    return path
