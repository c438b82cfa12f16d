"""Convergence diagnostics: split R-hat, effective sample size and per-coordinate summaries."""

import logging
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike, NDArray

from .exceptions import DiagnosticError
from .sampler import PosteriorDraws

logger = logging.getLogger(__name__)

MIN_CHAINS = 2
MIN_DRAWS = 4


def _as_chains(draws: ArrayLike) -> NDArray[np.float64]:
    array = np.asarray(draws, dtype=np.float64)
    if array.ndim == 1:
        array = array[np.newaxis, :]
    if array.ndim != 2:  # noqa: PLR2004
        msg = f"Expected draws shaped (chains, draws), got {array.shape}"
        raise DiagnosticError(msg)
    return array


def split_rhat(draws: ArrayLike, name: str = "parameter") -> float:
    """
    Split-chain potential scale reduction factor.

    Each chain is cut into halves (the middle draw of odd-length chains is
    dropped) and the classic between/within variance ratio is computed over
    the halves.

    Args:
        draws: Array of shape (chains, draws) for one coordinate
        name: Coordinate name used in warnings

    Returns:
        R-hat; ``nan`` when every half is constant at the same value and ``inf``
        when halves are constant at distinct values (both logged as warnings)

    Raises:
        DiagnosticError: With fewer than 2 chains or 4 draws per chain

    """
    chains = _as_chains(draws)
    n_chains, n_draws = chains.shape
    if n_chains < MIN_CHAINS or n_draws < MIN_DRAWS:
        msg = f"split R-hat needs at least {MIN_CHAINS} chains of {MIN_DRAWS} draws, got {chains.shape}"
        raise DiagnosticError(msg)
    half = n_draws // 2
    halves = np.concatenate([chains[:, :half], chains[:, n_draws - half :]], axis=0)
    within = float(np.mean(np.var(halves, axis=1, ddof=1)))
    between = float(half * np.var(np.mean(halves, axis=1), ddof=1))
    if within == 0.0:
        if between == 0.0:
            logger.warning("R-hat of %s undefined: zero within-chain variance", name)
            return float("nan")
        logger.warning("R-hat of %s infinite: chains are constant at different values", name)
        return float("inf")
    pooled = (half - 1) / half * within + between / half
    return float(np.sqrt(pooled / within))


def _autocovariance(chains: NDArray[np.float64]) -> NDArray[np.float64]:
    n_draws = chains.shape[1]
    centered = chains - chains.mean(axis=1, keepdims=True)
    size = 2 ** int(np.ceil(np.log2(2 * n_draws)))
    spectrum = np.fft.rfft(centered, n=size, axis=1)
    return np.fft.irfft(spectrum * np.conjugate(spectrum), n=size, axis=1)[:, :n_draws].real / n_draws


def effective_sample_size(draws: ArrayLike, name: str = "parameter") -> float:
    """
    Autocorrelation-based effective sample size over all chains.

    Autocorrelations are estimated by FFT, combined across chains, and
    truncated with Geyer's initial monotone sequence. The result is capped at
    the number of draws.

    Args:
        draws: Array of shape (chains, draws), or a single chain
        name: Coordinate name used in warnings

    Returns:
        ESS; 0 for a constant sequence (logged as a warning)

    Raises:
        DiagnosticError: With fewer than 4 draws per chain

    """
    chains = _as_chains(draws)
    n_chains, n_draws = chains.shape
    if n_draws < MIN_DRAWS:
        msg = f"ESS needs at least {MIN_DRAWS} draws per chain, got {n_draws}"
        raise DiagnosticError(msg)
    acov = _autocovariance(chains)
    chain_var = acov[:, 0] * n_draws / (n_draws - 1.0)
    within = float(np.mean(chain_var))
    pooled = within * (n_draws - 1.0) / n_draws
    if n_chains > 1:
        pooled += float(np.var(chains.mean(axis=1), ddof=1))
    if pooled <= 0.0:
        logger.warning("ESS of %s is 0: constant draws", name)
        return 0.0

    mean_acov = acov.mean(axis=0)
    rho = np.zeros(n_draws)
    rho[0] = 1.0
    rho_even = 1.0
    rho_odd = 1.0 - (within - mean_acov[1]) / pooled
    rho[1] = rho_odd
    t = 1
    while t < n_draws - 4 and rho_even + rho_odd > 0.0:
        rho_even = 1.0 - (within - mean_acov[t + 1]) / pooled
        rho_odd = 1.0 - (within - mean_acov[t + 2]) / pooled
        if rho_even + rho_odd >= 0.0:
            rho[t + 1] = rho_even
            rho[t + 2] = rho_odd
        t += 2
    max_t = t
    if rho_even > 0.0:
        rho[max_t + 1] = rho_even
    # initial monotone sequence
    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2.0
            rho[t + 2] = rho[t + 1]
        t += 2
    total = n_chains * n_draws
    tau = -1.0 + 2.0 * float(np.sum(rho[:max_t])) + rho[max_t + 1]
    tau = max(tau, 1.0 / np.log10(total))
    return float(min(total / tau, total))


@dataclass
class Diagnostics:
    """
    Convergence summary of a set of posterior draws.

    Args:
        table: One row per coordinate: mean, sd, 5/50/95% quantiles, rhat, ess
        divergences: Post-warmup divergences per chain
        mean_accept: Mean acceptance statistic per chain
        step_size: Adapted step size per chain

    """

    table: pd.DataFrame
    divergences: list[int] = field(default_factory=list)
    mean_accept: list[float] = field(default_factory=list)
    step_size: list[float] = field(default_factory=list)

    @property
    def max_rhat(self) -> float:
        return float(self.table["rhat"].max())

    @property
    def min_ess(self) -> float:
        return float(self.table["ess"].min())

    @property
    def flagged(self) -> list[str]:
        """Coordinates whose R-hat is undefined or infinite."""
        rhat = self.table["rhat"]
        return [str(n) for n in self.table.index[~np.isfinite(rhat)]]

    def to_dict(self) -> dict[str, Any]:
        """Compact summary for run manifests."""
        return {
            "max_rhat": self.max_rhat,
            "min_ess": self.min_ess,
            "divergences": self.divergences,
            "mean_accept": self.mean_accept,
            "step_size": self.step_size,
            "flagged": self.flagged,
        }


def summarize(draws: PosteriorDraws, *, include_generated: bool = False) -> Diagnostics:
    """
    Diagnostics for every coordinate (and optionally every generated quantity).

    R-hat is reported as ``nan`` for single-chain runs.
    """
    names = list(draws.names)
    columns = [draws.values[:, :, i] for i in range(len(names))]
    if include_generated and draws.generated is not None:
        names.extend(draws.generated_names)
        columns.extend(draws.generated[:, :, i] for i in range(len(draws.generated_names)))
    rows = []
    for name, column in zip(names, columns, strict=True):
        if draws.n_chains >= MIN_CHAINS and draws.n_draws >= MIN_DRAWS:
            rhat = split_rhat(column, name)
        else:
            rhat = float("nan")
        ess = effective_sample_size(column, name) if draws.n_draws >= MIN_DRAWS else float("nan")
        flat = column.ravel()
        q05, q50, q95 = np.quantile(flat, [0.05, 0.5, 0.95], method="linear")
        rows.append(
            {
                "name": name,
                "mean": float(flat.mean()),
                "sd": float(flat.std(ddof=1)) if flat.size > 1 else float("nan"),
                "q05": q05,
                "q50": q50,
                "q95": q95,
                "rhat": rhat,
                "ess": ess,
            }
        )
    table = pd.DataFrame(rows).set_index("name")
    return Diagnostics(
        table=table,
        divergences=[s.divergences for s in draws.chain_stats],
        mean_accept=[s.mean_accept for s in draws.chain_stats],
        step_size=[s.step_size for s in draws.chain_stats],
    )
