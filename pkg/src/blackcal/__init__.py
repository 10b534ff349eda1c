"""Online calibrated forecasting via Blackwell approachability."""

from .blackwell import Certificate, miscalibration_report, play_step, run_game, step_rng
from .core_types import (
    ContractViolation,
    DomainError,
    GameState,
    PayoffVector,
    PiecewiseDensity,
    inner_product,
    update_average,
)
from .metrics import decision_loss, markov_coverage, optimal_commitment, qce, smape
from .oracles import AciOracle, AciPayoff, MomentGridOracle, MomentGridPayoff, QuantileStepOracle
from .orca import AdversaryFamily, OrcaConfig, OrcaOracle, orca_solve
from .payoffs import (
    MomentPayoff,
    QuantilePayoff,
    RegretPayoff,
    combine,
)
from .recalibration import OrcaRecalibrator, recalibration_payoff

__version__ = "0.1.0"
__all__ = [
    "AciOracle",
    "AciPayoff",
    "AdversaryFamily",
    "Certificate",
    "ContractViolation",
    "DomainError",
    "GameState",
    "MomentGridOracle",
    "MomentGridPayoff",
    "MomentPayoff",
    "OrcaConfig",
    "OrcaOracle",
    "OrcaRecalibrator",
    "PayoffVector",
    "PiecewiseDensity",
    "QuantilePayoff",
    "QuantileStepOracle",
    "RegretPayoff",
    "combine",
    "decision_loss",
    "inner_product",
    "markov_coverage",
    "miscalibration_report",
    "optimal_commitment",
    "orca_solve",
    "play_step",
    "qce",
    "recalibration_payoff",
    "run_game",
    "smape",
    "step_rng",
    "update_average",
]
