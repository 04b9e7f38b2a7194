"""Protocol state machine for time-bound stablecoin vaults.

Covers the full lifecycle: a borrower locks shares while the market is
closed and mints stablecoins against the anchor close, then either
repays in full at the open (getting exactly the locked shares back) or
defaults, in which case the collateral is sold in a descending-clock
auction anchored at the last close and the proceeds buy back and burn
the outstanding coins, with an insurance fund absorbing any shortfall
and any surplus routed to the borrower.

The engine is a single-threaded deterministic event processor: every
state transition is stamped with a monotone sequence number and appended
to an event log that can be replayed or emitted as newline-delimited
JSON (see ``write_event_log``; the record schema is documented in the
README).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum

from .errors import ParameterError, PhaseError, PolicyError, StateError

#: Full repayment must match the minted amount within this relative tolerance.
_REPAY_RTOL = 1e-12


@dataclass(frozen=True)
class OracleClosed:
    """Overnight phase: the feed is frozen at the official close."""

    anchor_close: float


@dataclass(frozen=True)
class OracleOpen:
    """Daytime phase: the official open has printed."""

    anchor_close: float
    open_price: float


OraclePhase = OracleClosed | OracleOpen


class VaultStatus(Enum):
    ACTIVE = "active"
    REPAID = "repaid"
    DEFAULTED = "defaulted"


class AuctionOutcome(Enum):
    PENDING = "pending"
    CLEARED = "cleared"
    FAILED = "failed"


@dataclass(frozen=True)
class AuctionBid:
    """A bidder's standing interest: quantity wanted at or below the limit."""

    bidder: str
    quantity: float
    limit_price: float


@dataclass
class VaultPosition:
    position_id: int
    shares_locked: float
    anchor_close: float
    minted: float
    ltv_at_mint: float
    fee_rate: float
    fee_owed: float
    status: VaultStatus = VaultStatus.ACTIVE
    auction_id: int | None = None
    settled: bool = False


@dataclass
class AuctionState:
    auction_id: int
    position_id: int
    shares: float
    start_price: float
    decrement_per_tick: float
    min_price: float
    bids: list[dict] = field(default_factory=list)
    outcome: AuctionOutcome = AuctionOutcome.PENDING
    clearing_price: float | None = None
    proceeds: float = 0.0
    shares_sold: float = 0.0


@dataclass
class LedgerTotals:
    stablecoins_outstanding: float = 0.0
    insurance_fund: float = 0.0
    fees_accrued: float = 0.0
    shares_in_custody: float = 0.0


@dataclass(frozen=True)
class EngineConfig:
    """Protocol policy knobs.

    The auction clock starts at the defaulted vault's anchor close and
    descends by ``auction_decrement_frac`` of the start price per tick
    down to ``auction_floor_frac`` of the start price. Surplus proceeds
    go to the borrower by default; set ``surplus_to_borrower=False`` to
    route them to the insurance fund instead.
    """

    ltv_ceiling: float = 1.0
    auction_decrement_frac: float = 0.005
    auction_floor_frac: float = 0.5
    surplus_to_borrower: bool = True

    def __post_init__(self) -> None:
        if not 0.0 < self.ltv_ceiling <= 1.0:
            raise ParameterError(f"ltv_ceiling must be in (0, 1], got {self.ltv_ceiling}")
        if not self.auction_decrement_frac > 0.0:
            raise ParameterError("auction_decrement_frac must be > 0")
        if not 0.0 <= self.auction_floor_frac < 1.0:
            raise ParameterError("auction_floor_frac must be in [0, 1)")


class VaultEngine:
    """Deterministic vault/mint/redeem/liquidation processor for one asset."""

    def __init__(self, config: EngineConfig | None = None,
                 insurance_fund_start: float = 0.0) -> None:
        if insurance_fund_start < 0.0:
            raise ParameterError("insurance_fund_start must be >= 0")
        self.config = config or EngineConfig()
        self.ledger = LedgerTotals(insurance_fund=insurance_fund_start)
        self.phase: OraclePhase | None = None
        self.events: list[dict] = []
        self._positions: dict[int, VaultPosition] = {}
        self._auctions: dict[int, AuctionState] = {}
        self._seq = 0
        self._next_position_id = 0
        self._next_auction_id = 0

    # -- event log ---------------------------------------------------------

    def _emit(self, event: str, **fields) -> None:
        self._seq += 1
        self.events.append({"seq": self._seq, "event": event, **fields})

    def write_event_log(self, path) -> None:
        """Emit the event log as newline-delimited JSON."""
        with open(path, "w", encoding="utf-8") as fh:
            for record in self.events:
                fh.write(json.dumps(record, sort_keys=True) + "\n")

    # -- oracle phase ------------------------------------------------------

    def close_market(self, close_price: float) -> None:
        """Anchor the oracle at the official close; opens the minting window."""
        if not close_price > 0.0:
            raise ParameterError(f"close_price must be > 0, got {close_price}")
        if isinstance(self.phase, OracleClosed):
            raise PhaseError("market is already closed")
        self.phase = OracleClosed(anchor_close=close_price)
        self._emit("market_closed", anchor_close=close_price)

    def open_market(self, open_price: float) -> None:
        """Publish the official open; starts the redemption window."""
        if not open_price > 0.0:
            raise ParameterError(f"open_price must be > 0, got {open_price}")
        if not isinstance(self.phase, OracleClosed):
            raise PhaseError("cannot open: market is not in the closed phase")
        self.phase = OracleOpen(anchor_close=self.phase.anchor_close, open_price=open_price)
        self._emit("market_opened", anchor_close=self.phase.anchor_close,
                   open_price=open_price)

    # -- lifecycle ---------------------------------------------------------

    def position(self, position_id: int) -> VaultPosition:
        return self._positions[position_id]

    def auction(self, auction_id: int) -> AuctionState:
        return self._auctions[auction_id]

    def active_positions(self) -> list[VaultPosition]:
        return [p for p in self._positions.values() if p.status is VaultStatus.ACTIVE]

    def all_positions(self) -> list[VaultPosition]:
        return list(self._positions.values())

    def mint(self, shares: float, ltv: float, fee_rate: float,
             utilization: float = 1.0) -> tuple[VaultPosition, float]:
        """Lock ``shares`` and mint against the anchor close.

        Mints ``utilization * ltv * shares * anchor_close`` stablecoin
        units (full utilization by default). Only allowed while the
        oracle is in the closed phase.
        """
        if not isinstance(self.phase, OracleClosed):
            raise PhaseError("minting is only allowed while the market is closed")
        if not shares > 0.0:
            raise ParameterError(f"shares must be > 0, got {shares}")
        if not 0.0 < ltv <= 1.0:
            raise ParameterError(f"ltv must be in (0, 1], got {ltv}")
        if ltv > self.config.ltv_ceiling + 1e-15:
            raise PolicyError(
                f"ltv {ltv} exceeds protocol ceiling {self.config.ltv_ceiling}")
        if fee_rate < 0.0:
            raise ParameterError(f"fee_rate must be >= 0, got {fee_rate}")
        if not 0.0 < utilization <= 1.0:
            raise ParameterError(f"utilization must be in (0, 1], got {utilization}")

        minted = utilization * ltv * shares * self.phase.anchor_close
        fee_owed = fee_rate * minted
        position = VaultPosition(
            position_id=self._next_position_id,
            shares_locked=shares,
            anchor_close=self.phase.anchor_close,
            minted=minted,
            ltv_at_mint=ltv,
            fee_rate=fee_rate,
            fee_owed=fee_owed,
        )
        self._next_position_id += 1
        self._positions[position.position_id] = position

        self.ledger.stablecoins_outstanding += minted
        self.ledger.shares_in_custody += shares
        self.ledger.fees_accrued += fee_owed
        self._emit("minted", position_id=position.position_id, shares=shares,
                   anchor_close=self.phase.anchor_close, ltv=ltv, minted=minted,
                   fee_owed=fee_owed)
        return position, minted

    def redeem(self, position_id: int, repayment: float, fee_payment: float) -> float:
        """Repay stablecoins; returns the share count released.

        Redemption is all-or-nothing: only an exact full repayment plus
        the owed fee releases the locked shares (exactly the number
        locked). Anything less is recorded and leaves the position
        active; overshooting the debt is rejected outright.
        """
        position = self._positions[position_id]
        if position.status is VaultStatus.DEFAULTED:
            raise StateError(f"position {position_id} already defaulted")
        if position.status is VaultStatus.REPAID:
            raise StateError(f"position {position_id} already repaid")
        if not isinstance(self.phase, OracleOpen):
            raise PhaseError("redemption window opens when the market opens")
        if repayment < 0.0 or fee_payment < 0.0:
            raise ParameterError("repayment and fee_payment must be >= 0")
        if repayment > position.minted * (1.0 + _REPAY_RTOL):
            raise ParameterError(
                f"over-repayment rejected: exactly {position.minted} required, "
                f"got {repayment}")

        full = math.isclose(repayment, position.minted, rel_tol=_REPAY_RTOL, abs_tol=0.0)
        if not full or fee_payment < position.fee_owed * (1.0 - _REPAY_RTOL):
            self._emit("repayment_rejected", position_id=position_id,
                       repayment=repayment, fee_payment=fee_payment,
                       required=position.minted, fee_owed=position.fee_owed)
            return 0.0

        position.status = VaultStatus.REPAID
        self.ledger.stablecoins_outstanding -= position.minted
        self.ledger.shares_in_custody -= position.shares_locked
        self.ledger.insurance_fund += position.fee_owed
        self._emit("redeemed", position_id=position_id, repayment=repayment,
                   fee_collected=position.fee_owed, shares_returned=position.shares_locked)
        return position.shares_locked

    def expire_and_detect_default(self, position_id: int,
                                  deadline_passed: bool) -> VaultStatus:
        """Evaluate a position at the open; spawns an auction on default.

        Defaults when the deadline passed without full repayment, or
        immediately when the open leaves the collateral worth less than
        the debt.
        """
        if not isinstance(self.phase, OracleOpen):
            raise PhaseError("default detection runs in the open phase")
        position = self._positions[position_id]
        if position.status is not VaultStatus.ACTIVE:
            return position.status

        undercollateralized = self.phase.open_price * position.shares_locked < position.minted
        if not (deadline_passed or undercollateralized):
            return VaultStatus.ACTIVE

        start = position.anchor_close
        auction = AuctionState(
            auction_id=self._next_auction_id,
            position_id=position_id,
            shares=position.shares_locked,
            start_price=start,
            decrement_per_tick=self.config.auction_decrement_frac * start,
            min_price=self.config.auction_floor_frac * start,
        )
        self._next_auction_id += 1
        self._auctions[auction.auction_id] = auction
        position.status = VaultStatus.DEFAULTED
        position.auction_id = auction.auction_id
        self._emit("defaulted", position_id=position_id, auction_id=auction.auction_id,
                   open_price=self.phase.open_price, minted=position.minted,
                   undercollateralized=undercollateralized,
                   deadline_passed=deadline_passed)
        return VaultStatus.DEFAULTED

    def run_dutch_auction(self, auction_id: int,
                          demand_schedule: list[AuctionBid]) -> AuctionState:
        """Run the descending clock against a static demand schedule.

        The clock starts at the anchor close and drops by a fixed
        decrement per tick; a bid joins once the clock price is at or
        below its limit. The auction clears at the first (highest-price)
        tick where cumulative joined quantity covers the shares, selling
        all shares at that single price; it fails if the clock reaches
        the floor uncovered.
        """
        auction = self._auctions[auction_id]
        if auction.outcome is not AuctionOutcome.PENDING:
            raise StateError(f"auction {auction_id} already resolved")
        for bid in demand_schedule:
            if bid.quantity < 0.0 or bid.limit_price < 0.0:
                raise ParameterError("bid quantities and limits must be >= 0")

        max_ticks = int(math.ceil(
            (auction.start_price - auction.min_price) / auction.decrement_per_tick)) + 1
        joined: set[int] = set()
        cumulative = 0.0
        for tick in range(max_ticks + 1):
            price = auction.start_price - tick * auction.decrement_per_tick
            if price < auction.min_price:
                break
            for i, bid in enumerate(demand_schedule):
                if i not in joined and bid.limit_price >= price:
                    joined.add(i)
                    cumulative += bid.quantity
                    auction.bids.append({"bidder": bid.bidder, "quantity": bid.quantity,
                                         "tick": tick})
            if cumulative >= auction.shares and auction.shares > 0.0:
                auction.outcome = AuctionOutcome.CLEARED
                auction.clearing_price = price
                auction.shares_sold = auction.shares
                auction.proceeds = price * auction.shares
                self._emit("auction_cleared", auction_id=auction_id, tick=tick,
                           clearing_price=price, proceeds=auction.proceeds)
                return auction

        auction.outcome = AuctionOutcome.FAILED
        self._emit("auction_failed", auction_id=auction_id,
                   min_price=auction.min_price)
        return auction

    def settle_default(self, position_id: int) -> float:
        """Settle a resolved auction; returns the holder payout per unit.

        Proceeds buy back and burn the outstanding coins. A shortfall
        draws the insurance fund down (never below zero); a surplus goes
        to the borrower (or the fund, per config). Holder payout per
        unit is ``min(minted, proceeds + fund draw) / minted``.
        """
        position = self._positions[position_id]
        if position.status is not VaultStatus.DEFAULTED:
            raise StateError(f"position {position_id} is not defaulted")
        if position.settled:
            raise StateError(f"position {position_id} already settled")
        auction = self._auctions[position.auction_id]
        if auction.outcome is AuctionOutcome.PENDING:
            raise StateError("cannot settle before the auction resolves")

        liability = position.minted
        proceeds = auction.proceeds
        shortfall = max(0.0, liability - proceeds)
        fund_draw = min(shortfall, self.ledger.insurance_fund)
        payout_per_unit = min(liability, proceeds + fund_draw) / liability
        surplus = max(0.0, proceeds - liability)

        self.ledger.insurance_fund -= fund_draw
        if surplus > 0.0 and not self.config.surplus_to_borrower:
            self.ledger.insurance_fund += surplus
        self.ledger.stablecoins_outstanding -= liability
        self.ledger.shares_in_custody -= auction.shares_sold
        position.settled = True

        self._emit("settled", position_id=position_id, auction_id=auction.auction_id,
                   proceeds=proceeds, fund_draw=fund_draw, surplus=surplus,
                   payout_per_unit=payout_per_unit,
                   surplus_to_borrower=self.config.surplus_to_borrower)
        return payout_per_unit

    # -- accounting checks ---------------------------------------------------

    def recompute_totals(self) -> LedgerTotals:
        """Recompute the ledger from first principles (for verification).

        Outstanding counts active positions plus defaulted ones whose
        settlement has not burned the coins yet; custody counts active
        collateral plus auction shares that have not been sold.
        """
        outstanding = sum(p.minted for p in self._positions.values()
                          if p.status is VaultStatus.ACTIVE
                          or (p.status is VaultStatus.DEFAULTED and not p.settled))
        custody = sum(p.shares_locked for p in self._positions.values()
                      if p.status is VaultStatus.ACTIVE)
        for auction in self._auctions.values():
            position = self._positions[auction.position_id]
            if position.settled:
                custody += auction.shares - auction.shares_sold
            else:
                custody += auction.shares
        return LedgerTotals(
            stablecoins_outstanding=outstanding,
            insurance_fund=self.ledger.insurance_fund,
            fees_accrued=self.ledger.fees_accrued,
            shares_in_custody=custody,
        )
