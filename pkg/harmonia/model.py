"""The neural HSMM: learnable parameters plus the phase-dependent key lattice."""

import logging
from typing import Any, Dict, Optional, Sequence, Tuple

from harmonia import autodiff as ad
from harmonia.autodiff import Value
from harmonia.distributions import (
    DistributionSet,
    ModelTables,
    assemble,
    build_tables,
    build_templates,
    encode_observation,
    init_parameters,
    key_distribution,
)
from harmonia.exceptions import ContractError
from harmonia.hsmm import Observed, _observations, forward_log_likelihood
from harmonia.store import Checkpoint, ParameterStore
from harmonia.theory import N_KEYS, N_SHIFTS

PHASE_ONE_KEYS: Tuple[int, ...] = (0, N_SHIFTS)
ALL_KEYS: Tuple[int, ...] = tuple(range(N_KEYS))

DEFAULT_BETA_CAP = {1: 0.0, 2: 0.01}


class HarmonicModel:
    """Parameters and hyperparameters of one training phase.

    Phase 1 fixes every key shift to 0 and disallows modulation, so only C
    major and C minor are reachable. Phase 2 opens all 24 keys.
    """

    def __init__(
        self,
        store: ParameterStore,
        phase: int = 1,
        template_weight: float = 5.0,
        beta_cap: Optional[float] = None,
    ) -> None:
        if phase not in (1, 2):
            raise ContractError(f"phase must be 1 or 2, got {phase}")
        if beta_cap is None:
            beta_cap = DEFAULT_BETA_CAP[phase]
        if beta_cap < 0 or beta_cap >= 1:
            raise ContractError(f"beta_cap must lie in [0, 1), got {beta_cap}")
        if phase == 1 and beta_cap != 0:
            raise ContractError("phase 1 does not allow modulation; beta_cap must be 0")
        self.store = store
        self.phase = phase
        self.beta_cap = float(beta_cap)
        self.templates = build_templates(template_weight)
        self.logger = logging.getLogger(__name__)

    @classmethod
    def initialize(cls, seed: int, phase: int = 1, template_weight: float = 5.0,
                   beta_cap: Optional[float] = None) -> "HarmonicModel":
        return cls(init_parameters(seed), phase, template_weight, beta_cap)

    @classmethod
    def from_checkpoint(cls, checkpoint: Checkpoint, phase: Optional[int] = None,
                        beta_cap: Optional[float] = None) -> "HarmonicModel":
        """Rebuild from a checkpoint; ``phase`` overrides the stored one (phase-2 warm start)."""
        settings: Dict[str, Any] = checkpoint.settings
        phase = checkpoint.phase if phase is None else phase
        if beta_cap is None and phase == checkpoint.phase:
            beta_cap = settings.get("beta_cap")
        return cls(checkpoint.store, phase, float(settings.get("template_weight", 5.0)), beta_cap)

    @property
    def shift_enabled(self) -> bool:
        return self.phase == 2

    @property
    def key_ids(self) -> Tuple[int, ...]:
        return ALL_KEYS if self.phase == 2 else PHASE_ONE_KEYS

    def tables(self) -> ModelTables:
        return build_tables(self.store, self.templates, self.beta_cap)

    def key_log_prior(self, seq: Observed, tables: Optional[ModelTables] = None) -> Value:
        """[24] log p(k | x) over all keys; shifts other than 0 get no mass in phase 1."""
        tables = tables or self.tables()
        encoded = encode_observation(_observations(seq), self.store)
        return key_distribution(encoded.embedding, tables.mode_emb, self.store, self.shift_enabled)

    def distribution_set(self, seq: Observed, tables: Optional[ModelTables] = None,
                         key_ids: Optional[Sequence[int]] = None) -> DistributionSet:
        tables = tables or self.tables()
        return assemble(tables, self.key_log_prior(seq, tables), key_ids or self.key_ids)

    def log_likelihood(self, seq: Observed, tables: Optional[ModelTables] = None,
                       complete_segments: bool = True) -> Value:
        return forward_log_likelihood(seq, self.distribution_set(seq, tables), complete_segments)

    def batch_nll(self, sequences: Sequence[Observed]) -> Value:
        """Mean negative log-likelihood over ``sequences`` on a single record."""
        if not sequences:
            raise ContractError("empty minibatch")
        tables = self.tables()
        total = ad.as_value(0.0)
        for seq in sequences:
            total = total - self.log_likelihood(seq, tables)
        return total / float(len(sequences))

    def beta(self) -> float:
        return float(self.tables().beta.data)
