"""Generational ant colony learning (GACL).

A colony forages over K sites. Within a generation, ``waves_per_gen``
recruitment waves each allocate ``n_ants`` ants multinomially according to
the pheromone field, observe noisy site qualities and deposit pheromone in
proportion to what they observed. Between generations the pheromone decays,
is reinforced by each site's share of the generation's fitness, and is
perturbed by exploration noise.

Pheromone fields are plain float64 arrays. Every update clamps them at
``tau_min`` so choice probabilities stay well defined.
"""

from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .errors import DimensionError, DomainError

TAU_MIN = 1e-6


@dataclass(frozen=True)
class Environment:
    """True site qualities plus the heuristic desirability of each site."""

    qualities: np.ndarray
    desirabilities: np.ndarray = None  # type: ignore[assignment]
    obs_noise_sigma: float = 0.05

    def __post_init__(self) -> None:
        q = np.asarray(self.qualities, dtype=float).copy()
        if q.ndim != 1 or q.size < 2:
            raise DimensionError(f"need at least 2 sites, got shape {q.shape}")
        if np.any(q < 0) or not np.all(np.isfinite(q)):
            raise DomainError("site qualities must be finite and >= 0")
        if self.desirabilities is None:
            d = np.ones_like(q)
        else:
            d = np.asarray(self.desirabilities, dtype=float).copy()
        if d.shape != q.shape:
            raise DimensionError(
                f"{d.size} desirabilities for {q.size} sites"
            )
        if np.any(d <= 0):
            raise DomainError("desirabilities must be > 0")
        if self.obs_noise_sigma < 0:
            raise DomainError("obs_noise_sigma must be >= 0")
        q.flags.writeable = False
        d.flags.writeable = False
        object.__setattr__(self, "qualities", q)
        object.__setattr__(self, "desirabilities", d)

    @property
    def n_sites(self) -> int:
        return int(self.qualities.size)

    def with_qualities(self, qualities) -> Environment:
        return Environment(qualities, self.desirabilities, self.obs_noise_sigma)


@dataclass(frozen=True)
class Anneal:
    """Exponential evaporation schedule ``rho0 * exp(-g / tau_anneal)``."""

    rho0: float
    tau_anneal: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.rho0 <= 1.0:
            raise DomainError(f"rho0={self.rho0} outside [0, 1]")
        if self.tau_anneal <= 0:
            raise DomainError("tau_anneal must be > 0")


@dataclass(frozen=True)
class ColonyConfig:
    n_ants: int = 100
    alpha: float = 1.0
    beta: float = 0.0
    gamma: float = 0.1
    rho_wave: float = 0.1
    rho_gen: float = 0.1
    waves_per_gen: int = 5
    explore_sigma: float = 0.01
    tau_min: float = TAU_MIN
    tau_init: float = 1.0
    anneal: Anneal | None = None

    def __post_init__(self) -> None:
        if self.n_ants < 1 or self.waves_per_gen < 1:
            raise DomainError("n_ants and waves_per_gen must be positive")
        for name in ("rho_wave", "rho_gen"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise DomainError(f"{name}={v} outside [0, 1]")
        if self.alpha < 0 or self.beta < 0:
            raise DomainError("alpha and beta must be >= 0")
        if self.gamma <= 0:
            raise DomainError("gamma must be > 0")
        if self.explore_sigma < 0:
            raise DomainError("explore_sigma must be >= 0")
        if self.tau_min <= 0:
            raise DomainError("tau_min must be > 0")
        if self.tau_init < self.tau_min:
            raise DomainError("tau_init below tau_min")

    def replace(self, **changes) -> ColonyConfig:
        return dataclasses.replace(self, **changes)


@dataclass
class GenerationOutcome:
    """What one generation of foraging produced.

    ``true_fitness`` is the visit-weighted mean of the noise-free qualities;
    it equals ``fitness`` whenever the observation noise is zero.
    """

    tau_end: np.ndarray
    fitness: float
    visit_counts: np.ndarray
    contribution: np.ndarray
    true_fitness: float = field(default=float("nan"))


EnvSource = Union[Environment, Callable[[int], Environment]]


def _check_tau(tau: np.ndarray, env: Environment) -> np.ndarray:
    tau = np.asarray(tau, dtype=float)
    if tau.shape != env.qualities.shape:
        raise DimensionError(
            f"pheromone field has {tau.size} sites, environment has {env.n_sites}"
        )
    return tau


def choice_probabilities(
    tau: np.ndarray,
    env: Environment,
    alpha: float,
    beta: float,
    pruned: np.ndarray | None = None,
) -> np.ndarray:
    """Site choice distribution ``tau^alpha * d^beta``, normalised.

    Sites flagged in ``pruned`` get probability zero.
    """
    tau = _check_tau(tau, env)
    # log-space keeps large exponents from overflowing
    logw = alpha * np.log(tau) + beta * np.log(env.desirabilities)
    if pruned is not None:
        pruned = np.asarray(pruned, dtype=bool)
        if pruned.shape != tau.shape:
            raise DimensionError("pruned mask does not match pheromone field")
        logw = np.where(pruned, -np.inf, logw)
    w = np.exp(logw - np.max(logw))
    return w / w.sum()


def sample_allocation(probs: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    probs = np.asarray(probs, dtype=float)
    if np.any(probs < 0):
        raise DomainError("negative choice probability")
    if abs(probs.sum() - 1.0) > 1e-9:
        raise DomainError(f"probabilities sum to {probs.sum()!r}, not 1")
    if n == 0:
        return np.zeros(probs.size, dtype=np.int64)
    # renormalise away the sub-1e-9 drift numpy's multinomial is picky about
    return rng.multinomial(n, probs / probs.sum()).astype(np.int64)


def observe_quality(site_index: int, env: Environment, rng: np.random.Generator) -> float:
    if not 0 <= site_index < env.n_sites:
        raise IndexError(f"site {site_index} out of range for {env.n_sites} sites")
    q = float(env.qualities[site_index])
    if env.obs_noise_sigma == 0:
        return q
    return max(0.0, q + env.obs_noise_sigma * float(rng.standard_normal()))


def observe_visits(
    counts: np.ndarray, env: Environment, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """One observation per visiting ant. Returns per-site (sum, sum of squares)."""
    counts = np.asarray(counts, dtype=np.int64)
    q = env.qualities
    if env.obs_noise_sigma == 0:
        return counts * q, counts * q * q
    sites = np.repeat(np.arange(env.n_sites), counts)
    obs = np.maximum(0.0, q[sites] + env.obs_noise_sigma * rng.standard_normal(sites.size))
    k = env.n_sites
    return (
        np.bincount(sites, weights=obs, minlength=k),
        np.bincount(sites, weights=obs * obs, minlength=k),
    )


def wave_update(
    tau: np.ndarray, deposits: np.ndarray, rho_wave: float, tau_min: float = TAU_MIN
) -> np.ndarray:
    if not 0.0 <= rho_wave <= 1.0:
        raise DomainError(f"rho_wave={rho_wave} outside [0, 1]")
    tau = np.asarray(tau, dtype=float)
    deposits = np.asarray(deposits, dtype=float)
    if deposits.shape != tau.shape:
        raise DimensionError("deposits do not match pheromone field")
    if np.any(deposits < 0):
        raise DomainError("deposits must be >= 0")
    return np.maximum(tau_min, (1.0 - rho_wave) * tau + deposits)


def run_generation(
    tau_start: np.ndarray,
    env: Environment,
    cfg: ColonyConfig,
    rng: np.random.Generator,
    pruned: np.ndarray | None = None,
) -> GenerationOutcome:
    tau = _check_tau(tau_start, env).copy()
    k = env.n_sites
    visits = np.zeros(k, dtype=np.int64)
    observed = np.zeros(k)
    for _ in range(cfg.waves_per_gen):
        p = choice_probabilities(tau, env, cfg.alpha, cfg.beta, pruned)
        counts = sample_allocation(p, cfg.n_ants, rng)
        sums, _ = observe_visits(counts, env, rng)
        tau = wave_update(tau, cfg.gamma * sums, cfg.rho_wave, cfg.tau_min)
        visits += counts
        observed += sums
    acts = cfg.n_ants * cfg.waves_per_gen
    contribution = observed / acts
    return GenerationOutcome(
        tau_end=tau,
        fitness=float(contribution.sum()),
        visit_counts=visits,
        contribution=contribution,
        true_fitness=float(visits @ env.qualities / acts),
    )


def anneal_rho(g: int, rho0: float, tau_anneal: float) -> float:
    if g < 0:
        raise DomainError("generation index must be >= 0")
    if tau_anneal <= 0:
        raise DomainError("tau_anneal must be > 0")
    return rho0 * math.exp(-g / tau_anneal)


def generation_update(
    outcome: GenerationOutcome, cfg: ColonyConfig, g: int, rng: np.random.Generator
) -> np.ndarray:
    """Carry generation ``g``'s pheromone into generation ``g + 1``.

    Decay, then fitness-proportional reinforcement ``gamma * u``, then
    Gaussian exploration noise. Reinforcement is positive in fitness.
    """
    if g < 1:
        raise DomainError("generations are numbered from 1")
    if cfg.anneal is not None:
        rho = anneal_rho(g, cfg.anneal.rho0, cfg.anneal.tau_anneal)
    else:
        rho = cfg.rho_gen
    tau = (1.0 - rho) * outcome.tau_end + cfg.gamma * outcome.contribution
    if cfg.explore_sigma > 0:
        tau = tau + cfg.explore_sigma * rng.standard_normal(tau.size)
    return np.maximum(cfg.tau_min, tau)


def run_gacl(
    env: EnvSource,
    cfg: ColonyConfig,
    generations: int,
    rng: np.random.Generator,
    tau_start: np.ndarray | None = None,
    pruned: np.ndarray | None = None,
    start_generation: int = 1,
) -> list[tuple[np.ndarray, GenerationOutcome]]:
    """Run GACL and return ``(tau at start of generation, outcome)`` pairs.

    ``env`` may be a callable mapping the generation number to the
    environment in force, which is how shifting environments are modelled.
    """
    if generations < 1:
        raise DomainError("generations must be >= 1")
    env_at = env if callable(env) else (lambda _g: env)
    first = env_at(start_generation)
    if tau_start is None:
        tau = np.full(first.n_sites, cfg.tau_init)
    else:
        tau = np.maximum(cfg.tau_min, _check_tau(tau_start, first).copy())
    out = []
    for g in range(start_generation, start_generation + generations):
        outcome = run_generation(tau, env_at(g), cfg, rng, pruned)
        out.append((tau, outcome))
        tau = generation_update(outcome, cfg, g, rng)
    return out


def fitness_series(trajectory) -> np.ndarray:
    return np.array([o.fitness for _, o in trajectory])


def true_fitness_series(trajectory) -> np.ndarray:
    return np.array([o.true_fitness for _, o in trajectory])


def final_tau(trajectory) -> np.ndarray:
    """End-of-run pheromone: the last generation's ``tau_end``."""
    return trajectory[-1][1].tau_end


# ---------------------------------------------------------------------------
# structural plasticity


def prune_sites(
    tau: np.ndarray, threshold: float, tau_min: float = TAU_MIN
) -> tuple[np.ndarray, np.ndarray]:
    """Flag sites whose pheromone sits strictly below ``threshold``.

    Pheromone values are kept so a pruned site can be respawned. At least
    the strongest site always survives.
    """
    if threshold < tau_min:
        raise DomainError(f"threshold {threshold} below tau_min {tau_min}")
    tau = np.asarray(tau, dtype=float)
    pruned = tau < threshold
    if pruned.all():
        pruned[int(np.argmax(tau))] = False
    return tau.copy(), pruned


def spawn_site(
    env: Environment,
    tau: np.ndarray,
    new_quality: float,
    new_desirability: float = 1.0,
    tau_init: float = 1.0,
    tau_min: float = TAU_MIN,
) -> tuple[Environment, np.ndarray]:
    if new_desirability <= 0:
        raise DomainError("new_desirability must be > 0")
    if tau_init < tau_min:
        raise DomainError("tau_init below tau_min")
    tau = _check_tau(tau, env)
    new_env = Environment(
        np.append(env.qualities, new_quality),
        np.append(env.desirabilities, new_desirability),
        env.obs_noise_sigma,
    )
    return new_env, np.append(tau, tau_init)


# ---------------------------------------------------------------------------
# expected fitness landscape


def expected_fitness(tau: np.ndarray, env: Environment, alpha: float, beta: float) -> float:
    """Closed-form ``E[F] = sum_j p_j(tau) Q_j`` for a single foraging act."""
    return float(choice_probabilities(tau, env, alpha, beta) @ env.qualities)


def expected_fitness_grad(
    tau: np.ndarray, env: Environment, alpha: float, beta: float
) -> np.ndarray:
    """Analytic gradient of :func:`expected_fitness` with respect to tau."""
    tau = _check_tau(tau, env)
    p = choice_probabilities(tau, env, alpha, beta)
    f = p @ env.qualities
    return alpha * p * (env.qualities - f) / tau


def fitness_gradient_mc(
    tau: np.ndarray,
    env: Environment,
    cfg: ColonyConfig,
    n_samples: int,
    fd_eps: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Compare the sampled reinforcement term with the true fitness gradient.

    ``mc_delta`` estimates ``E[gamma * u | tau]`` from ``n_samples``
    foraging acts at fixed tau. ``fd_grad`` is a central difference of the
    closed-form expected fitness. The cosine is taken after removing the
    mean of ``mc_delta``, since reinforcement adds a uniform component that
    the scale-invariant choice rule ignores.
    """
    tau = _check_tau(tau, env)
    p = choice_probabilities(tau, env, cfg.alpha, cfg.beta)
    counts = sample_allocation(p, n_samples, rng)
    sums, squares = observe_visits(counts, env, rng)
    mean = sums / n_samples
    mc_delta = cfg.gamma * mean
    se = cfg.gamma * np.sqrt(np.maximum(squares / n_samples - mean**2, 0.0) / n_samples)
    if np.linalg.norm(se) > 0.1 * np.linalg.norm(mc_delta):
        warnings.warn(
            f"n_samples={n_samples} too small: SE of reinforcement estimate "
            "exceeds 10% of its norm",
            RuntimeWarning,
            stacklevel=2,
        )

    fd_grad = np.empty_like(tau)
    for j in range(tau.size):
        up = tau.copy()
        dn = tau.copy()
        up[j] += fd_eps
        dn[j] -= fd_eps
        fd_grad[j] = (
            expected_fitness(up, env, cfg.alpha, cfg.beta)
            - expected_fitness(dn, env, cfg.alpha, cfg.beta)
        ) / (2 * fd_eps)

    centred = mc_delta - mc_delta.mean()
    denom = np.linalg.norm(centred) * np.linalg.norm(fd_grad)
    cosine = float(centred @ fd_grad / denom) if denom > 0 else 0.0
    return mc_delta, fd_grad, cosine
