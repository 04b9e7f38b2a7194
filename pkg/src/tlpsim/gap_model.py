"""Overnight price-gap distributions.

Models the gross overnight return ``G = S_open / S_close`` of the
collateral either as a lognormal or as a mixture of lognormals (a
Gaussian mixture in log space), and provides deterministic sampling plus
the analytic quantities the pricing and risk layers are built on:
``Pr(G <= x)``, the default probability at a given loan-to-value ratio,
and conditional/unconditional shortfall below a threshold.

Sampling uses the counter-based Philox4x64-10 generator (see
:data:`RNG_ALGORITHM`). Draws are produced in fixed-size chunks, each on
its own counter partition obtained with ``Philox.jumped(chunk_index)``,
so a thread pool mapping over chunks produces byte-identical output to a
serial loop.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._normal import norm_cdf
from .errors import DomainError, ParameterError, UndefinedConditionalError

RNG_ALGORITHM = "Philox4x64-10 (numpy.random.Philox); chunk c uses Philox(key=seed).jumped(c)"

#: Draws per counter partition; fixed so chunk boundaries never move.
SAMPLE_CHUNK = 1 << 16

_WEIGHT_TOL = 1e-12
_MAX_SEED = 1 << 64


@dataclass(frozen=True)
class MixtureComponent:
    """One lognormal mixture component, parametrized in log space."""

    weight: float
    mean_log: float
    sd_log: float

    def __post_init__(self) -> None:
        if not self.weight > 0.0:
            raise ParameterError(f"mixture weight must be > 0, got {self.weight}")
        if self.sd_log < 0.0:
            raise ParameterError(f"sd_log must be >= 0, got {self.sd_log}")
        if not (math.isfinite(self.weight) and math.isfinite(self.mean_log)
                and math.isfinite(self.sd_log)):
            raise ParameterError("mixture component parameters must be finite")


@dataclass(frozen=True)
class LognormalGap:
    """Lognormal gap over a closure of ``tau_years``.

    ``mu_annual`` is the annual drift of the *gross* return:
    ``E[G] = exp(mu_annual * tau_years)``, so the log return has mean
    ``(mu_annual - sigma_annual**2 / 2) * tau_years``. In particular
    ``mu_annual = 0`` means the open is an unbiased forecast of the
    close (``E[S_open] = S_close``), not that the log drift is zero; use
    :func:`lognormal_zero_log_drift` for the latter convention.
    """

    mu_annual: float
    sigma_annual: float
    tau_years: float

    def __post_init__(self) -> None:
        if self.sigma_annual < 0.0:
            raise ParameterError(f"sigma_annual must be >= 0, got {self.sigma_annual}")
        if not self.tau_years > 0.0:
            raise ParameterError(f"tau_years must be > 0, got {self.tau_years}")
        if not (math.isfinite(self.mu_annual) and math.isfinite(self.sigma_annual)
                and math.isfinite(self.tau_years)):
            raise ParameterError("lognormal parameters must be finite")

    @property
    def mean_log(self) -> float:
        return (self.mu_annual - 0.5 * self.sigma_annual ** 2) * self.tau_years

    @property
    def sd_log(self) -> float:
        return self.sigma_annual * math.sqrt(self.tau_years)


@dataclass(frozen=True)
class LogMixtureGap:
    """Mixture of lognormal components; weights must sum to 1."""

    components: tuple[MixtureComponent, ...]

    def __post_init__(self) -> None:
        if len(self.components) == 0:
            raise ParameterError("mixture needs at least one component")
        total = math.fsum(c.weight for c in self.components)
        if abs(total - 1.0) > _WEIGHT_TOL:
            raise ParameterError(f"mixture weights sum to {total!r}, expected 1 within {_WEIGHT_TOL}")


GapDistribution = LognormalGap | LogMixtureGap


def lognormal_zero_log_drift(sigma_annual: float, tau_years: float) -> LognormalGap:
    """Lognormal gap whose log return has mean exactly zero.

    Under this convention the median gap is 1 and ``Pr(G < 1) = 1/2``,
    which is the convention the loan-to-value closed forms in
    :mod:`tlpsim.pricing` are exact under. Equivalent to setting
    ``mu_annual = sigma_annual**2 / 2``.
    """
    return LognormalGap(mu_annual=0.5 * sigma_annual ** 2,
                        sigma_annual=sigma_annual, tau_years=tau_years)


def _components(dist: GapDistribution) -> list[tuple[float, float, float]]:
    """Normalize either variant to ``[(weight, mean_log, sd_log), ...]``."""
    if isinstance(dist, LognormalGap):
        return [(1.0, dist.mean_log, dist.sd_log)]
    if isinstance(dist, LogMixtureGap):
        return [(c.weight, c.mean_log, c.sd_log) for c in dist.components]
    raise ParameterError(f"not a gap distribution: {dist!r}")


def gap_distribution_to_dict(dist: GapDistribution) -> dict:
    """Tagged record for config files; inverse of :func:`gap_distribution_from_dict`."""
    if isinstance(dist, LognormalGap):
        return {"kind": "lognormal", "mu_annual": dist.mu_annual,
                "sigma_annual": dist.sigma_annual, "tau_years": dist.tau_years}
    if isinstance(dist, LogMixtureGap):
        return {"kind": "log_mixture",
                "components": [{"weight": c.weight, "mean_log": c.mean_log,
                                "sd_log": c.sd_log} for c in dist.components]}
    raise ParameterError(f"not a gap distribution: {dist!r}")


def gap_distribution_from_dict(record: dict) -> GapDistribution:
    """Build a distribution from its tagged config record."""
    try:
        kind = record["kind"]
    except (TypeError, KeyError):
        raise ParameterError(f"gap distribution record needs a 'kind' tag: {record!r}") from None
    if kind == "lognormal":
        return LognormalGap(mu_annual=float(record["mu_annual"]),
                            sigma_annual=float(record["sigma_annual"]),
                            tau_years=float(record["tau_years"]))
    if kind == "log_mixture":
        comps = tuple(MixtureComponent(weight=float(c["weight"]),
                                       mean_log=float(c["mean_log"]),
                                       sd_log=float(c["sd_log"]))
                      for c in record["components"])
        return LogMixtureGap(components=comps)
    raise ParameterError(f"unknown gap distribution kind {kind!r}")


def log_moments(dist: GapDistribution) -> tuple[float, float]:
    """Mean and standard deviation of ``ln G`` for any gap distribution."""
    comps = _components(dist)
    mean = math.fsum(w * m for w, m, _ in comps)
    second = math.fsum(w * (s * s + m * m) for w, m, s in comps)
    var = max(0.0, second - mean * mean)
    return mean, math.sqrt(var)


def _validate_seed(seed: int) -> int:
    if not isinstance(seed, (int, np.integer)):
        raise ParameterError(f"seed must be an integer, got {type(seed).__name__}")
    if not 0 <= int(seed) < _MAX_SEED:
        raise ParameterError(f"seed must be in [0, 2**64), got {seed}")
    return int(seed)


def _sample_chunk(comps: list[tuple[float, float, float]], cum_weights: np.ndarray,
                  seed: int, chunk: int, size: int) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(key=seed).jumped(chunk))
    u = rng.random(size)
    z = rng.standard_normal(size)
    idx = np.minimum(np.searchsorted(cum_weights, u, side="right"), len(comps) - 1)
    means = np.array([m for _, m, _ in comps])
    sds = np.array([s for _, _, s in comps])
    return np.exp(means[idx] + sds[idx] * z)


def sample_gaps(dist: GapDistribution, seed: int, n: int, workers: int = 1) -> np.ndarray:
    """Draw ``n`` gross overnight returns, strictly positive.

    The output is a pure function of ``(dist, seed, n)``: the chunked
    counter layout makes it independent of ``workers``.
    """
    seed = _validate_seed(seed)
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    comps = _components(dist)
    cum_weights = np.cumsum([w for w, _, _ in comps])

    n_chunks = (n + SAMPLE_CHUNK - 1) // SAMPLE_CHUNK
    sizes = [min(SAMPLE_CHUNK, n - c * SAMPLE_CHUNK) for c in range(n_chunks)]

    def draw(c: int) -> np.ndarray:
        return _sample_chunk(comps, cum_weights, seed, c, sizes[c])

    if workers > 1 and n_chunks > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(draw, range(n_chunks)))
    else:
        parts = [draw(c) for c in range(n_chunks)]
    return np.concatenate(parts) if len(parts) > 1 else parts[0]


def gap_cdf(dist: GapDistribution, x: float) -> float:
    """``Pr(G <= x)`` for a gross return level ``x > 0``.

    Weighted sum of component normal CDFs in log space; point-mass
    components (``sd_log == 0``) contribute their full weight when the
    mass sits at or below ``x``.
    """
    if not x > 0.0:
        raise DomainError(f"gross return level must be > 0, got {x}")
    if math.isinf(x):
        return 1.0
    lx = math.log(x)
    total = 0.0
    for w, m, s in _components(dist):
        if s > 0.0:
            total += w * norm_cdf((lx - m) / s)
        elif math.exp(m) <= x:
            total += w
    return min(1.0, total)


def default_prob(dist: GapDistribution, ltv: float) -> float:
    """Probability of the overnight default event at loan-to-value ``ltv``.

    Equals ``gap_cdf(dist, ltv)``: the liability per unit collateral
    value is ``ltv``, and the position defaults when the gap lands at or
    below it.
    """
    if not 0.0 < ltv <= 1.0:
        raise ParameterError(f"ltv must be in (0, 1], got {ltv}")
    return gap_cdf(dist, ltv)


def _strict_below_prob(comps: list[tuple[float, float, float]], threshold: float) -> float:
    lt = math.log(threshold)
    total = 0.0
    for w, m, s in comps:
        if s > 0.0:
            total += w * norm_cdf((lt - m) / s)
        elif math.exp(m) < threshold:
            total += w
    return min(1.0, total)


def expected_shortfall(dist: GapDistribution, threshold: float = 1.0) -> float:
    """Unconditional expected shortfall ``E[max(0, threshold - G)]``.

    Per component with ``sd_log = s > 0`` and ``mean_log = m`` this is
    ``t * Phi(d) - exp(m + s^2/2) * Phi(d - s)`` with
    ``d = (ln t - m) / s``; point masses contribute ``max(0, t - e^m)``.
    This is the product ``pi * ell`` without the conditional split, and
    is well defined even when the downside event has probability zero.
    """
    if not 0.0 < threshold <= 1.0:
        raise ParameterError(f"threshold must be in (0, 1], got {threshold}")
    total = 0.0
    for w, m, s in _components(dist):
        if s > 0.0:
            d = (math.log(threshold) - m) / s
            total += w * (threshold * norm_cdf(d) - math.exp(m + 0.5 * s * s) * norm_cdf(d - s))
        else:
            total += w * max(0.0, threshold - math.exp(m))
    return max(0.0, total)


def expected_loss_frac(dist: GapDistribution, threshold: float = 1.0) -> float:
    """Conditional loss fraction ``E[(threshold - G) | G < threshold]``.

    The shortfall is measured against the threshold (the liability per
    unit collateral value); with ``threshold = 1`` this is the classic
    loss given any drop below the anchor close. Raises
    :class:`UndefinedConditionalError` when ``Pr(G < threshold) = 0``.
    """
    if not 0.0 < threshold <= 1.0:
        raise ParameterError(f"threshold must be in (0, 1], got {threshold}")
    comps = _components(dist)
    p_below = _strict_below_prob(comps, threshold)
    if p_below <= 0.0:
        raise UndefinedConditionalError(
            f"Pr(G < {threshold}) = 0: conditional loss is undefined")
    return min(threshold, expected_shortfall(dist, threshold) / p_below)
