"""Pricing, risk control, and simulation for overnight time-bound stablecoins.

A time-bound stablecoin is minted against a security at its official
close, pegged to that close overnight, and redeemed at the next open.
This package prices the discount such a coin should carry (the
liquidity-of-time premium), enforces the no-arbitrage band around it,
runs a proportional LTV controller to keep the observed premium in a
target band, simulates the full vault/mint/redeem/liquidation protocol
over agent-based overnight markets, and backtests against historical
close/open series. See the README for the CLI and file formats.
"""

__version__ = "0.1.0"

from .backtest import (
    BacktestReport,
    DynamicPolicy,
    OhlcRecord,
    StaticPolicy,
    compare_policies,
    generate_synthetic_series,
    load_bundled_series,
    load_series,
    replay,
)
from .errors import (
    DataError,
    DomainError,
    MarketError,
    ParameterError,
    PhaseError,
    PolicyError,
    StateError,
    TlpError,
    UndefinedConditionalError,
)
from .gap_model import (
    GapDistribution,
    LogMixtureGap,
    LognormalGap,
    MixtureComponent,
    default_prob,
    expected_loss_frac,
    expected_shortfall,
    gap_cdf,
    gap_distribution_from_dict,
    gap_distribution_to_dict,
    lognormal_zero_log_drift,
    sample_gaps,
)
from .ltv_controller import (
    ControllerConfig,
    ControllerState,
    in_band,
    initial_state,
    observe_tlp,
    step,
)
from .market_sim import (
    DayRecord,
    SimConfig,
    borrower_mint_fraction,
    clear_stablecoin_market,
    run_simulation,
    scenario_preset,
)
from .pricing import (
    PricingInputs,
    PricingResult,
    default_prob_closed_form,
    fair_price,
    max_ltv,
    mc_put_value,
    no_arb_band,
    price_stablecoin,
    put_value_closed_form,
    put_value_exact,
    stablecoin_payoff,
    term_structure,
    tlp_approx,
    tlp_exact,
)
from .proxies import (
    ProxyKind,
    ProxyObservation,
    adr_premium,
    aggregate_proxies,
    carry_factor,
    futures_basis,
    label_events,
    overnight_reversal,
)
from .vault_engine import (
    AuctionBid,
    AuctionOutcome,
    AuctionState,
    EngineConfig,
    LedgerTotals,
    OracleClosed,
    OracleOpen,
    VaultEngine,
    VaultPosition,
    VaultStatus,
)
