"""
No-U-turn Hamiltonian Monte Carlo with multinomial trajectory sampling.

Warmup adapts the step size by dual averaging toward the target acceptance
statistic and estimates a diagonal inverse metric in doubling windows between
an initial and a terminal buffer. After warmup the dynamics are frozen.
"""

import logging
from collections.abc import Callable
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial

import numpy as np
from numpy.typing import NDArray

from .config import SamplerConfig
from .exceptions import DomainError, InitializationError
from .protocol import GeneratedQuantities, LogDensity

logger = logging.getLogger(__name__)

INIT_BUFFER = 75
TERM_BUFFER = 50
BASE_WINDOW = 25
MIN_ADAPT_WARMUP = 20

DUAL_AVERAGING_GAMMA = 0.05
DUAL_AVERAGING_T0 = 10.0
DUAL_AVERAGING_KAPPA = 0.75

_MAX_STEP_SIZE_SEARCH = 100

InitStrategy = NDArray[np.float64] | Callable[[np.random.Generator], NDArray[np.float64]] | None


@dataclass(frozen=True)
class _Point:
    q: NDArray[np.float64]
    p: NDArray[np.float64]
    logp: float
    grad: NDArray[np.float64]


@dataclass
class _Subtree:
    """A contiguous stretch of trajectory, ends in time order."""

    minus: _Point
    plus: _Point
    sample: _Point
    log_weight: float
    rho: NDArray[np.float64]
    accept_sum: float
    n_leapfrog: int
    diverged: bool = False
    turned: bool = False

    @property
    def stopped(self) -> bool:
        return self.diverged or self.turned


@dataclass
class ChainStats:
    """
    Per-chain sampler statistics.

    Args:
        seed: Seed the chain's generator was built from
        step_size: Adapted step size used after warmup
        inverse_metric: Adapted diagonal inverse metric
        divergences: Divergent post-warmup transitions
        mean_accept: Mean acceptance statistic over post-warmup transitions
        max_depth_hits: Post-warmup transitions stopped by the depth cap
        mean_leapfrog: Mean leapfrog steps per post-warmup transition

    """

    seed: int
    step_size: float
    inverse_metric: NDArray[np.float64]
    divergences: int
    mean_accept: float
    max_depth_hits: int
    mean_leapfrog: float


@dataclass
class PosteriorDraws:
    """
    Retained draws of every chain.

    Args:
        names: Parameter coordinate names
        values: Array of shape (chains, draws, parameters)
        generated_names: Generated-quantity names
        generated: Array of shape (chains, draws, generated quantities)
        chain_stats: Sampler statistics in chain order

    """

    names: tuple[str, ...]
    values: NDArray[np.float64]
    generated_names: tuple[str, ...] = ()
    generated: NDArray[np.float64] | None = None
    chain_stats: list[ChainStats] = field(default_factory=list)

    @property
    def n_chains(self) -> int:
        return int(self.values.shape[0])

    @property
    def n_draws(self) -> int:
        """Retained draws per chain."""
        return int(self.values.shape[1])

    @property
    def total(self) -> int:
        return self.n_chains * self.n_draws

    def column(self, name: str) -> NDArray[np.float64]:
        """
        Draws of one coordinate or generated quantity, shape (chains, draws).

        Raises:
            KeyError: If the name is unknown

        """
        if name in self.names:
            return self.values[:, :, self.names.index(name)]
        if self.generated is not None and name in self.generated_names:
            return self.generated[:, :, self.generated_names.index(name)]
        msg = f"No draws named {name}"
        raise KeyError(msg)

    def flat(self) -> NDArray[np.float64]:
        """Parameter draws of all chains stacked in chain order, shape (total, parameters)."""
        return self.values.reshape(self.total, -1)

    def flat_generated(self, prefix: str = "") -> tuple[tuple[str, ...], NDArray[np.float64]]:
        """Generated quantities whose name starts with ``prefix``, stacked in chain order."""
        if self.generated is None:
            return (), np.empty((self.total, 0))
        picked = [i for i, n in enumerate(self.generated_names) if n.startswith(prefix)]
        names = tuple(self.generated_names[i] for i in picked)
        return names, self.generated.reshape(self.total, -1)[:, picked]


def adaptation_windows(n_warmup: int) -> list[tuple[int, int]]:
    """
    Metric-adaptation windows as inclusive (first, last) warmup iteration indices.

    Windows start after a 75-iteration buffer, begin 25 long and double, and
    the last one stretches to 50 iterations before the end of warmup. Short
    warmups use 15%/75%/10% splits; under 20 iterations the metric is not adapted.
    """
    if n_warmup < MIN_ADAPT_WARMUP:
        return []
    init, term, size = INIT_BUFFER, TERM_BUFFER, BASE_WINDOW
    if init + term + size > n_warmup:
        init = int(0.15 * n_warmup)
        term = int(0.1 * n_warmup)
        size = n_warmup - init - term
    last = n_warmup - term - 1
    windows = []
    start, end = init, init + size - 1
    while True:
        windows.append((start, end))
        if end >= last:
            break
        size *= 2
        start, end = end + 1, end + size
        if end + 2 * size >= n_warmup - term:
            end = last
    return windows


class StepSizeAdapter:
    """
    Dual-averaging step-size adaptation.

    Args:
        step_size: Initial step size; the shrinkage target is ten times it
        target_accept: Desired mean acceptance statistic

    """

    def __init__(self, step_size: float, target_accept: float) -> None:
        self.target_accept = target_accept
        self.restart(step_size)

    def restart(self, step_size: float) -> None:
        """Forget the history and shrink toward ``10·step_size``."""
        self.mu = float(np.log(10.0 * step_size))
        self.counter = 0
        self.s_bar = 0.0
        self.x_bar = 0.0

    def learn(self, accept_stat: float) -> float:
        """Update with one transition's acceptance statistic; returns the next step size."""
        self.counter += 1
        accept_stat = min(1.0, accept_stat)
        eta = 1.0 / (self.counter + DUAL_AVERAGING_T0)
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target_accept - accept_stat)
        x = self.mu - self.s_bar * np.sqrt(self.counter) / DUAL_AVERAGING_GAMMA
        x_eta = self.counter ** (-DUAL_AVERAGING_KAPPA)
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x
        return float(np.exp(x))

    @property
    def final_step_size(self) -> float:
        """Averaged step size used once warmup ends."""
        return float(np.exp(self.x_bar))


def regularized_variance(samples: NDArray[np.float64]) -> NDArray[np.float64]:
    """Window variance shrunk toward 1e-3 with weight 5/(n + 5)."""
    n = samples.shape[0]
    variance = np.var(samples, axis=0, ddof=1) if n > 1 else np.ones(samples.shape[1])
    return (n / (n + 5.0)) * variance + 1e-3 * (5.0 / (n + 5.0))


class NutsChain:
    """
    One chain of the no-U-turn sampler.

    Args:
        target: Log density with gradient
        config: Sampler settings
        rng: The chain's generator

    """

    def __init__(self, target: LogDensity, config: SamplerConfig, rng: np.random.Generator) -> None:
        self.target = target
        self.config = config
        self.rng = rng
        self.step_size = 1.0
        self.inverse_metric: NDArray[np.float64] = np.ones(0)

    def _evaluate(self, q: NDArray[np.float64]) -> tuple[float, NDArray[np.float64]]:
        logp, grad = self.target(q)
        logp = float(logp)
        if not np.isfinite(logp) or not np.all(np.isfinite(grad)):
            return -np.inf, np.zeros_like(q)
        return logp, np.asarray(grad, dtype=np.float64)

    def _hamiltonian(self, point: _Point) -> float:
        energy = -point.logp + 0.5 * float(point.p @ (self.inverse_metric * point.p))
        return np.inf if np.isnan(energy) else energy

    def _leapfrog(self, point: _Point, step: float) -> _Point:
        p = point.p + 0.5 * step * point.grad
        q = point.q + step * self.inverse_metric * p
        logp, grad = self._evaluate(q)
        p = p + 0.5 * step * grad
        return _Point(q, p, logp, grad)

    def _momentum(self, dimension: int) -> NDArray[np.float64]:
        return self.rng.standard_normal(dimension) / np.sqrt(self.inverse_metric)

    def _no_uturn(self, left: _Subtree, right: _Subtree, rho: NDArray[np.float64]) -> bool:
        def criterion(p_start: NDArray[np.float64], p_end: NDArray[np.float64], span: NDArray[np.float64]) -> bool:
            return bool((self.inverse_metric * p_start) @ span > 0 and (self.inverse_metric * p_end) @ span > 0)

        return (
            criterion(left.minus.p, right.plus.p, rho)
            and criterion(left.minus.p, right.minus.p, left.rho + right.minus.p)
            and criterion(left.plus.p, right.plus.p, right.rho + left.plus.p)
        )

    def _build_tree(self, start: _Point, direction: int, depth: int, energy0: float) -> _Subtree:
        if depth == 0:
            point = self._leapfrog(start, direction * self.step_size)
            energy = self._hamiltonian(point)
            delta = energy0 - energy if np.isfinite(energy) else -np.inf
            return _Subtree(
                minus=point,
                plus=point,
                sample=point,
                log_weight=delta,
                rho=point.p.copy(),
                accept_sum=float(min(1.0, np.exp(delta))),
                n_leapfrog=1,
                diverged=-delta > self.config.divergence_threshold,
            )

        first = self._build_tree(start, direction, depth - 1, energy0)
        if first.stopped:
            return first
        outer = first.plus if direction > 0 else first.minus
        second = self._build_tree(outer, direction, depth - 1, energy0)
        merged_weight = float(np.logaddexp(first.log_weight, second.log_weight))
        tree = _Subtree(
            minus=first.minus if direction > 0 else second.minus,
            plus=second.plus if direction > 0 else first.plus,
            sample=first.sample,
            log_weight=merged_weight,
            rho=first.rho + second.rho,
            accept_sum=first.accept_sum + second.accept_sum,
            n_leapfrog=first.n_leapfrog + second.n_leapfrog,
            diverged=second.diverged,
            turned=second.turned,
        )
        if second.stopped:
            return tree
        if np.log(self.rng.uniform()) < second.log_weight - merged_weight:
            tree.sample = second.sample
        left, right = (first, second) if direction > 0 else (second, first)
        tree.turned = not self._no_uturn(left, right, tree.rho)
        return tree

    def transition(self, q: NDArray[np.float64], logp: float, grad: NDArray[np.float64]) -> tuple[_Point, dict]:
        """
        One no-U-turn transition from ``q``.

        Returns:
            Tuple of (new point, statistics with ``accept``, ``diverged``,
            ``depth``, ``n_leapfrog`` and ``max_depth``)

        """
        start = _Point(q, self._momentum(q.shape[0]), logp, grad)
        energy0 = self._hamiltonian(start)
        tree = _Subtree(
            minus=start, plus=start, sample=start, log_weight=0.0, rho=start.p.copy(), accept_sum=0.0, n_leapfrog=0
        )
        diverged = False
        capped = True
        depth = 0
        while depth < self.config.max_depth:
            direction = 1 if self.rng.uniform() < 0.5 else -1  # noqa: PLR2004
            outer = tree.plus if direction > 0 else tree.minus
            subtree = self._build_tree(outer, direction, depth, energy0)
            depth += 1
            tree.accept_sum += subtree.accept_sum
            tree.n_leapfrog += subtree.n_leapfrog
            if subtree.stopped:
                diverged = subtree.diverged
                capped = False
                break
            if np.log(self.rng.uniform()) < subtree.log_weight - tree.log_weight:
                tree.sample = subtree.sample
            tree.log_weight = float(np.logaddexp(tree.log_weight, subtree.log_weight))
            left, right = (tree, subtree) if direction > 0 else (subtree, tree)
            rho = tree.rho + subtree.rho
            turned = not self._no_uturn(left, right, rho)
            if direction > 0:
                tree.plus = subtree.plus
            else:
                tree.minus = subtree.minus
            tree.rho = rho
            if turned:
                capped = False
                break
        stats = {
            "accept": tree.accept_sum / max(tree.n_leapfrog, 1),
            "diverged": diverged,
            "depth": depth,
            "n_leapfrog": tree.n_leapfrog,
            "max_depth": capped,
        }
        return tree.sample, stats

    def find_reasonable_step_size(self, q: NDArray[np.float64], logp: float, grad: NDArray[np.float64]) -> float:
        """Double or halve a trial step until a single leapfrog's acceptance crosses 0.5."""
        step = self.step_size
        start = _Point(q, self._momentum(q.shape[0]), logp, grad)
        energy0 = self._hamiltonian(start)

        def log_accept(step: float) -> float:
            energy = self._hamiltonian(self._leapfrog(start, step))
            return energy0 - energy if np.isfinite(energy) else -np.inf

        value = log_accept(step)
        direction = 1 if value > np.log(0.5) else -1
        for _ in range(_MAX_STEP_SIZE_SEARCH):
            if direction * value <= -direction * np.log(2.0):
                break
            step *= 2.0**direction
            value = log_accept(step)
        return step

    def initial_point(self, dimension: int, init: InitStrategy) -> tuple[NDArray[np.float64], float, NDArray]:
        """
        Starting point with a finite density.

        Raises:
            InitializationError: If no finite point is found within the retry budget

        """
        if init is not None and not callable(init):
            q = np.array(init, dtype=np.float64)
            logp, grad = self._evaluate(q)
            if not np.isfinite(logp):
                raise InitializationError("Supplied initial values have a non-finite log density")
            return q, logp, grad
        radius = self.config.init_radius
        for _ in range(self.config.init_retries):
            q = init(self.rng) if callable(init) else self.rng.uniform(-radius, radius, size=dimension)
            logp, grad = self._evaluate(q)
            if np.isfinite(logp):
                return q, logp, grad
        msg = f"No finite log density after {self.config.init_retries} initialization attempts"
        raise InitializationError(msg)

    def run(
        self, dimension: int, init: InitStrategy = None, generated: GeneratedQuantities | None = None
    ) -> tuple[NDArray[np.float64], NDArray[np.float64] | None, dict]:
        """
        Warm up and sample.

        Returns:
            Tuple of (retained draws, generated quantities or None, chain statistics)

        """
        config = self.config
        self.inverse_metric = np.ones(dimension)
        q, logp, grad = self.initial_point(dimension, init)
        self.step_size = self.find_reasonable_step_size(q, logp, grad)
        adapter = StepSizeAdapter(self.step_size, config.target_accept)

        windows = adaptation_windows(config.warmup)
        window_ends = {end: start for start, end in windows}
        window_samples: list[NDArray[np.float64]] = []
        in_window = {i for start, end in windows for i in range(start, end + 1)}

        draws = np.empty((config.retained, dimension))
        extras = None if generated is None else np.empty((config.retained, len(generated.names)))
        accept, divergences, depth_hits, leapfrogs = [], 0, 0, []
        for iteration in range(config.iterations):
            point, stats = self.transition(q, logp, grad)
            q, logp, grad = point.q, point.logp, point.grad
            if iteration < config.warmup:
                self.step_size = adapter.learn(stats["accept"])
                if iteration in in_window:
                    window_samples.append(q)
                if iteration in window_ends:
                    self.inverse_metric = regularized_variance(np.array(window_samples))
                    window_samples = []
                    self.step_size = self.find_reasonable_step_size(q, logp, grad)
                    adapter.restart(self.step_size)
                if iteration == config.warmup - 1:
                    self.step_size = adapter.final_step_size
                continue
            kept = iteration - config.warmup
            draws[kept] = q
            if extras is not None and generated is not None:
                extras[kept] = generated(q)
            accept.append(stats["accept"])
            leapfrogs.append(stats["n_leapfrog"])
            divergences += int(stats["diverged"])
            depth_hits += int(stats["max_depth"])
        summary = {
            "step_size": self.step_size,
            "inverse_metric": self.inverse_metric.copy(),
            "divergences": divergences,
            "mean_accept": float(np.mean(accept)),
            "max_depth_hits": depth_hits,
            "mean_leapfrog": float(np.mean(leapfrogs)),
        }
        return draws, extras, summary


def _run_chain(
    chain: int,
    target: LogDensity,
    dimension: int,
    config: SamplerConfig,
    init: InitStrategy,
    generated: GeneratedQuantities | None,
) -> tuple[NDArray[np.float64], NDArray[np.float64] | None, ChainStats]:
    seed = config.seed + chain
    sampler = NutsChain(target, config, np.random.default_rng(seed))
    draws, extras, summary = sampler.run(dimension, init, generated)
    stats = ChainStats(seed=seed, **summary)
    logger.info(
        "Chain %d finished: step size %.3g, mean accept %.3f, %d divergences",
        chain,
        stats.step_size,
        stats.mean_accept,
        stats.divergences,
    )
    if stats.divergences:
        logger.warning("Chain %d had %d divergent transitions after warmup", chain, stats.divergences)
    if stats.max_depth_hits:
        logger.warning("Chain %d hit the maximum tree depth %d times", chain, stats.max_depth_hits)
    return draws, extras, stats


def run_chains(
    target: LogDensity,
    dimension: int,
    config: SamplerConfig,
    *,
    init: InitStrategy = None,
    generated: GeneratedQuantities | None = None,
    names: tuple[str, ...] | None = None,
) -> PosteriorDraws:
    """
    Run independent chains and collect their retained draws.

    Chain ``k`` draws from ``numpy.random.default_rng(config.seed + k)``, so the
    output is identical whether chains run serially or in worker processes.

    Args:
        target: Log density with gradient (picklable when ``config.workers > 1``)
        dimension: Length of the parameter vector
        config: Sampler settings
        init: Initial vector, a callable drawing one from a generator, or None
            for uniform(-init_radius, init_radius)
        generated: Quantities computed for every retained draw
        names: Coordinate names (default ``q[0]``, ``q[1]``, ...)

    Returns:
        Draws merged in chain order

    Raises:
        InitializationError: If a chain cannot start

    """
    if dimension < 1:
        raise DomainError("dimension must be at least 1")
    names = names or tuple(f"q[{i}]" for i in range(dimension))
    if len(names) != dimension:
        msg = f"Got {len(names)} names for {dimension} coordinates"
        raise DomainError(msg)
    job = partial(_run_chain, target=target, dimension=dimension, config=config, init=init, generated=generated)
    workers = min(config.workers, config.chains)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, range(config.chains)))
    else:
        results = [job(chain) for chain in range(config.chains)]
    values = np.stack([draws for draws, _, _ in results])
    generated_values = None if generated is None else np.stack([extras for _, extras, _ in results])
    return PosteriorDraws(
        names=names,
        values=values,
        generated_names=() if generated is None else tuple(generated.names),
        generated=generated_values,
        chain_stats=[stats for _, _, stats in results],
    )
