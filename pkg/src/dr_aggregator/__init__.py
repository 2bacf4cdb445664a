"""Online pricing and forward contracting for a demand-response aggregator."""

__version__ = "0.1.0"

from .demand_model import (  # noqa: E402
    ConfigError, CustomerSpec, DegenerateShock, DemandParams, DomainError, EmpiricalShock,
    ParamBox, ShockModel, SumOfCustomerShocks, TruncatedNormalShock, aggregate_reduction,
    build_population,
)
from .estimation import EstimatorState, EstimatorStateError, empirical_quantile, residuals, truncate  # noqa: E402
from .market import Decision, MarketEnv, critical_ratio, expected_profit, realized_profit  # noqa: E402
from .policies import PolicySpec, RpmpConfig, myopic_decision, oracle_decision, rpmp_decision  # noqa: E402
from .simulator import EpisodeTrace, MonteCarloSummary, run_episode, run_monte_carlo  # noqa: E402
from .config import ExperimentConfig  # noqa: E402
