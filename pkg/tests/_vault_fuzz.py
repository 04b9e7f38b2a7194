"""Randomized vault lifecycle driver shared by the engine and acceptance tests.

Each night mints a few positions at random terms, applies random borrower
behavior at the open (full repayment when solvent, occasional partial
attempts), then defaults, auctions, and settles the rest, asserting the
ledger conservation laws and payout bounds after every state transition.
"""

import math

import numpy as np

from tlpsim.vault_engine import AuctionBid, VaultEngine, VaultStatus


def assert_conserved(engine: VaultEngine) -> None:
    ledger, recomputed = engine.ledger, engine.recompute_totals()
    for name in ("stablecoins_outstanding", "shares_in_custody",
                 "insurance_fund", "fees_accrued"):
        assert math.isclose(getattr(ledger, name), getattr(recomputed, name),
                            rel_tol=1e-9, abs_tol=1e-9), name
    assert ledger.stablecoins_outstanding >= -1e-9
    assert ledger.insurance_fund >= -1e-12
    assert ledger.shares_in_custody >= -1e-9


def run_random_night(engine: VaultEngine, rng: np.random.Generator,
                     close: float) -> float:
    engine.close_market(close)
    assert_conserved(engine)
    positions = []
    for _ in range(int(rng.integers(1, 4))):
        shares = float(rng.uniform(0.5, 3.0))
        ltv = float(rng.uniform(0.5, 1.0))
        fee = float(rng.uniform(0.0, 0.005))
        position, _ = engine.mint(shares, ltv, fee)
        positions.append(position)
        assert_conserved(engine)

    open_price = close * float(rng.lognormal(-0.002, 0.05))
    engine.open_market(open_price)
    for position in positions:
        action = rng.random()
        if action < 0.5 and open_price * position.shares_locked >= position.minted:
            shares = engine.redeem(position.position_id, position.minted,
                                   position.fee_owed)
            assert shares == position.shares_locked  # all-or-nothing release
        elif action < 0.6:
            returned = engine.redeem(position.position_id,
                                     position.minted * float(rng.uniform(0.1, 0.9)),
                                     position.fee_owed)
            assert returned == 0.0
        assert_conserved(engine)

    for position in positions:
        status = engine.expire_and_detect_default(position.position_id, True)
        assert_conserved(engine)
        if status is VaultStatus.DEFAULTED:
            schedule = [AuctionBid(f"b{i}", float(rng.uniform(0.0, 4.0)),
                                   open_price * float(rng.uniform(0.5, 1.2)))
                        for i in range(rng.integers(0, 4))]
            engine.run_dutch_auction(position.auction_id, schedule)
            payout = engine.settle_default(position.position_id)
            assert 0.0 <= payout <= 1.0 + 1e-12
            assert_conserved(engine)
    return open_price


def run_random_sequence(rng: np.random.Generator) -> VaultEngine:
    engine = VaultEngine(insurance_fund_start=float(rng.uniform(0.0, 5.0)))
    price = float(rng.uniform(20.0, 200.0))
    for _ in range(int(rng.integers(1, 4))):
        price = run_random_night(engine, rng, price) * float(rng.lognormal(0.0, 0.01))
    return engine
