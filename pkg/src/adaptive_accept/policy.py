"""Chunking-policy interface and reference Gaussian policies with exact conditionals.

A policy answers two kinds of query through a single ``forward`` entry point:
drawing K chunks for a base state, and re-decoding target positions with other
positions clamped to given values (inpainting). One ``forward`` call is one
forward pass for accounting purposes, however many chunks or contexts it
carries.

Flattened covariance index for step ``j`` and dimension ``a`` is ``j * d + a``.
"""

from __future__ import annotations

import abc
import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Sequence

import numpy as np

from .errors import ConditioningError, InsufficientData, InvalidInput
from .trajectory import Action, ActionChunk, State

if TYPE_CHECKING:
    from .verifier import VerifyContext

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PolicyQuery:
    """One forward pass: either ``k`` fresh samples or a batch of re-decode contexts."""

    base: State
    k: int = 0
    contexts: tuple = ()
    seed: object = None

    def __post_init__(self):
        if bool(self.k) == bool(self.contexts):
            raise InvalidInput("a query either samples k >= 1 chunks or re-decodes a non-empty context batch")
        if self.k < 0:
            raise InvalidInput(f"k must be positive, got {self.k}")

    @property
    def mode(self) -> str:
        return "sample" if self.k else "redecode"


class ChunkPolicy(abc.ABC):
    horizon: int
    dim: int

    def forward(self, query: PolicyQuery):
        """Answer a query: a list of chunks, or an ``(n, d)`` array of re-decoded deltas.

        Rows of the re-decode result are NaN where a query could not be conditioned.
        """
        if query.mode == "sample":
            deltas, gripper = self.sample_array(query.base, query.k, np.random.default_rng(query.seed))
            return [ActionChunk(deltas[i], gripper[i]) for i in range(query.k)]
        return self.redecode_batch(query.base, query.contexts, query.seed)

    @abc.abstractmethod
    def sample_array(self, base: State, k: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(k, H, d)`` deltas and ``(k, H)`` gripper flags."""

    @abc.abstractmethod
    def redecode_one(self, base: State, context: VerifyContext, seed=None) -> np.ndarray:
        """Re-decoded deltas at ``context.target``; raises ConditioningError when singular."""

    def redecode_batch(self, base: State, contexts: Sequence[VerifyContext], seed=None) -> np.ndarray:
        out = np.empty((len(contexts), self.dim))
        for n, ctx in enumerate(contexts):
            try:
                out[n] = self.redecode_one(base, ctx, seed)
            except ConditioningError as exc:
                log.warning("re-decode of step %d failed: %s", ctx.target, exc)
                out[n] = np.nan
        return out

    @abc.abstractmethod
    def gripper_at(self, base: State, step: int) -> bool:
        ...


class CountingPolicy(ChunkPolicy):
    """Transparent wrapper that counts ``forward`` invocations."""

    def __init__(self, inner: ChunkPolicy):
        self.inner = inner
        self.horizon = inner.horizon
        self.dim = inner.dim
        self.calls = 0
        self.queries: list[PolicyQuery] = []

    def forward(self, query: PolicyQuery):
        self.calls += 1
        self.queries.append(query)
        return self.inner.forward(query)

    def sample_array(self, base, k, rng):
        return self.inner.sample_array(base, k, rng)

    def redecode_one(self, base, context, seed=None):
        return self.inner.redecode_one(base, context, seed)

    def redecode_batch(self, base, contexts, seed=None):
        return self.inner.redecode_batch(base, contexts, seed)

    def gripper_at(self, base, step):
        return self.inner.gripper_at(base, step)


def ar1_covariance(horizon: int, dim: int, sigma0: float, rho: float, growth: float = 1.0, dim_scale=None) -> np.ndarray:
    """Joint ``(H*d, H*d)`` covariance with AR(1) temporal correlation and independent dimensions.

    Step ``j`` has marginal standard deviation ``sigma0 * growth**j * dim_scale[a]``
    and steps ``i, j`` correlate with ``rho**|i-j|``.
    """
    if horizon < 1 or dim < 1:
        raise InvalidInput("horizon and dim must be positive")
    if sigma0 < 0 or growth <= 0 or not -1 < rho < 1:
        raise InvalidInput(f"invalid AR(1) parameters sigma0={sigma0}, rho={rho}, growth={growth}")
    dim_scale = np.ones(dim) if dim_scale is None else np.asarray(dim_scale, dtype=float)
    steps = np.arange(horizon)
    sig = sigma0 * growth**steps
    temporal = np.outer(sig, sig) * rho ** np.abs(steps[:, None] - steps[None, :])
    return np.kron(temporal, np.diag(dim_scale**2))


def _flat(positions, dim: int) -> np.ndarray:
    positions = np.asarray(positions, dtype=int).reshape(-1)
    return (positions[:, None] * dim + np.arange(dim)[None, :]).reshape(-1)


def _matrix_sqrt(cov: np.ndarray) -> np.ndarray:
    if not np.any(cov):
        return np.zeros_like(cov)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(cov)
        return vecs * np.sqrt(np.clip(vals, 0.0, None))


@dataclass(eq=False)
class GaussianChunkPolicy(ChunkPolicy):
    """Chunks drawn from ``N(mean_plan(s), noise_scale(s)**2 * covariance)``.

    Re-decoding returns the exact Gaussian conditional mean of the target step
    given the clamped steps, or a seeded conditional draw when
    ``redecode_mode == "sample"``. The conditioning gain does not depend on
    ``noise_scale`` and is cached per (target, fixed set).
    """

    mean_plan: Callable[[State], np.ndarray]
    covariance: np.ndarray
    dim: int = 1
    gripper_plan: Callable[[State], np.ndarray] | np.ndarray | None = None
    noise_scale: Callable[[State], float] | None = None
    redecode_mode: str = "mean"
    horizon: int = field(init=False)

    def __post_init__(self):
        cov = np.array(self.covariance, dtype=float)
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
            raise InvalidInput(f"covariance must be square, got shape {cov.shape}")
        if not np.all(np.isfinite(cov)) or not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * max(1.0, np.abs(cov).max())):
            raise InvalidInput("covariance must be finite and symmetric")
        if np.linalg.eigvalsh(cov).min() < -1e-10 * max(1.0, np.abs(cov).max()):
            raise InvalidInput("covariance must be positive semi-definite")
        if self.dim < 1 or cov.shape[0] % self.dim:
            raise InvalidInput(f"covariance size {cov.shape[0]} is not a multiple of dim={self.dim}")
        if self.redecode_mode not in ("mean", "sample"):
            raise InvalidInput(f"unknown redecode_mode {self.redecode_mode!r}")
        self.covariance = cov
        self._sqrt = _matrix_sqrt(cov)
        self._deterministic = not np.any(cov)
        self._gain_cache: dict = {}
        self._density_cache: dict = {}
        self.horizon = cov.shape[0] // self.dim

    @classmethod
    def ar1(cls, mean_plan, horizon: int, dim: int, sigma0: float, rho: float, growth: float = 1.0, **kwargs):
        return cls(mean_plan, ar1_covariance(horizon, dim, sigma0, rho, growth), dim, **kwargs)

    @classmethod
    def constant(cls, plan, covariance=None, **kwargs) -> GaussianChunkPolicy:
        """Policy whose mean plan ignores the state."""
        plan = np.array(plan, dtype=float)
        if plan.ndim == 1:
            plan = plan[:, None]
        plan.setflags(write=False)
        cov = np.zeros((plan.size, plan.size)) if covariance is None else covariance
        return cls(lambda _s: plan, cov, plan.shape[1], **kwargs)

    def _plan(self, base: State) -> np.ndarray:
        mu = np.asarray(self.mean_plan(base), dtype=float)
        if mu.ndim == 1:
            mu = mu[:, None]
        if mu.shape != (self.horizon, self.dim):
            raise InvalidInput(f"mean plan of shape {mu.shape} does not match ({self.horizon}, {self.dim})")
        return mu

    def _scale(self, base: State) -> float:
        s = 1.0 if self.noise_scale is None else float(self.noise_scale(base))
        if not (math.isfinite(s) and s >= 0):
            raise InvalidInput(f"noise scale must be finite and non-negative, got {s}")
        return s

    def gripper_at(self, base: State, step: int) -> bool:
        return bool(self._gripper(base)[step])

    def _gripper(self, base: State) -> np.ndarray:
        if self.gripper_plan is None:
            return np.zeros(self._plan(base).shape[0], dtype=bool)
        g = self.gripper_plan(base) if callable(self.gripper_plan) else self.gripper_plan
        return np.asarray(g, dtype=bool)

    def sample_array(self, base: State, k: int, rng: np.random.Generator):
        mu = self._plan(base)
        z = rng.standard_normal((k, mu.size))
        noise = (z @ self._sqrt.T) * self._scale(base)
        deltas = mu[None] + noise.reshape(k, *mu.shape)
        gripper = np.broadcast_to(self._gripper(base), (k, mu.shape[0])).copy()
        return deltas, gripper

    def _gain(self, target: int, fixed: tuple[int, ...]):
        key = (target, fixed)
        hit = self._gain_cache.get(key)
        if hit is not None:
            return hit
        t = _flat([target], self.dim)
        f = _flat(fixed, self.dim)
        cov = self.covariance
        s_ff = cov[np.ix_(f, f)]
        s_tf = cov[np.ix_(t, f)]
        try:
            chol = np.linalg.cholesky(s_ff)
        except np.linalg.LinAlgError as exc:
            raise ConditioningError(f"fixed-position covariance for steps {fixed} is singular") from exc
        gain = np.linalg.solve(chol.T, np.linalg.solve(chol, s_tf.T)).T
        cond_cov = cov[np.ix_(t, t)] - gain @ s_tf.T
        self._gain_cache[key] = (t, f, gain, cond_cov)
        return self._gain_cache[key]

    def log_density(self, base: State, fixed: tuple[int, ...], values: np.ndarray, mu: np.ndarray | None = None) -> float:
        """Log marginal density of the clamped values (flattened) at the fixed steps."""
        if not fixed:
            return 0.0
        mu = self._plan(base) if mu is None else mu
        f = _flat(fixed, self.dim)
        resid = values - mu.reshape(-1)[f]
        scale = self._scale(base)
        if self._deterministic or scale == 0:
            return 0.0 if np.allclose(resid, 0.0) else -math.inf
        chol = self._density_cache.get(fixed)
        if chol is None:
            try:
                chol = np.linalg.cholesky(self.covariance[np.ix_(f, f)])
            except np.linalg.LinAlgError as exc:
                raise ConditioningError(f"fixed-position covariance for steps {fixed} is singular") from exc
            self._density_cache[fixed] = chol
        white = np.linalg.solve(chol, resid) / scale
        logdet = 2.0 * np.log(np.diag(chol)).sum() + 2.0 * f.size * math.log(scale)
        return float(-0.5 * (white @ white + logdet + f.size * math.log(2 * math.pi)))

    def _conditional(self, mu: np.ndarray, scale: float, context: VerifyContext, seed) -> np.ndarray:
        target = int(context.target)
        fixed = tuple(int(p) for p in context.fixed_positions)
        mu_t = mu[target]
        if not fixed or self._deterministic or scale == 0:
            mean, cond_cov = mu_t.copy(), self.covariance[np.ix_(_flat([target], self.dim), _flat([target], self.dim))]
        else:
            _, f, gain, cond_cov = self._gain(target, fixed)
            values = np.concatenate([np.asarray(context.value_at(p), dtype=float) for p in fixed])
            mean = mu_t + gain @ (values - mu.reshape(-1)[f])
        if self.redecode_mode == "mean":
            return mean
        rng = np.random.default_rng([0 if seed is None else int(seed), target, *fixed])
        return mean + scale * (_matrix_sqrt(cond_cov) @ rng.standard_normal(self.dim))

    def redecode_one(self, base: State, context: VerifyContext, seed=None) -> np.ndarray:
        return self._conditional(self._plan(base), self._scale(base), context, seed)

    def redecode_batch(self, base: State, contexts, seed=None) -> np.ndarray:
        mu = self._plan(base)
        scale = self._scale(base)
        out = np.empty((len(contexts), mu.shape[1]))
        for n, ctx in enumerate(contexts):
            try:
                out[n] = self._conditional(mu, scale, ctx, seed)
            except ConditioningError as exc:
                log.warning("re-decode of step %d failed: %s", ctx.target, exc)
                out[n] = np.nan
        return out


class MixturePolicy(ChunkPolicy):
    """Finite mixture of Gaussian chunk policies.

    Weights are static unless ``gate`` is given, in which case ``gate(state)``
    returns the (positive, normalised) component weights for that state.
    Re-decoding conditions inside the component with the highest posterior
    responsibility for the clamped values (lowest index on ties).
    """

    def __init__(self, components: Sequence[tuple[float, GaussianChunkPolicy]], gate: Callable[[State], Sequence[float]] | None = None):
        if not components:
            raise InvalidInput("a mixture needs at least one component")
        weights = np.array([w for w, _ in components], dtype=float)
        if np.any(weights <= 0) or not math.isclose(weights.sum(), 1.0, rel_tol=1e-9):
            raise InvalidInput(f"mixture weights must be positive and sum to 1, got {weights.tolist()}")
        self.weights = weights
        self.components = [p for _, p in components]
        self.gate = gate
        self.horizon = self.components[0].horizon
        self.dim = self.components[0].dim

    def weights_at(self, base: State) -> np.ndarray:
        if self.gate is None:
            return self.weights
        w = np.asarray(self.gate(base), dtype=float)
        if w.shape != self.weights.shape or np.any(w <= 0) or not math.isclose(w.sum(), 1.0, rel_tol=1e-9):
            raise InvalidInput(f"gate returned invalid weights {w.tolist()}")
        return w

    def sample_array(self, base: State, k: int, rng: np.random.Generator):
        picks = rng.choice(len(self.components), size=k, p=self.weights_at(base))
        draws = [comp.sample_array(base, k, rng) for comp in self.components]
        deltas = np.stack([draws[c][0][i] for i, c in enumerate(picks)])
        gripper = np.stack([draws[c][1][i] for i, c in enumerate(picks)])
        return deltas, gripper

    def responsible_component(self, base: State, context: VerifyContext, plans=None) -> int:
        fixed = tuple(int(p) for p in context.fixed_positions)
        weights = self.weights_at(base)
        if not fixed:
            return int(np.argmax(weights))
        values = np.concatenate([np.asarray(context.value_at(p), dtype=float) for p in fixed])
        logpost = [
            math.log(w) + comp.log_density(base, fixed, values, None if plans is None else plans[c])
            for c, (w, comp) in enumerate(zip(weights, self.components))
        ]
        return int(np.argmax(logpost))

    def redecode_one(self, base: State, context: VerifyContext, seed=None) -> np.ndarray:
        c = self.responsible_component(base, context)
        return self.components[c].redecode_one(base, context, seed)

    def redecode_batch(self, base: State, contexts, seed=None) -> np.ndarray:
        plans = [comp._plan(base) for comp in self.components]
        scales = [comp._scale(base) for comp in self.components]
        out = np.empty((len(contexts), self.dim))
        for n, ctx in enumerate(contexts):
            try:
                c = self.responsible_component(base, ctx, plans)
                out[n] = self.components[c]._conditional(plans[c], scales[c], ctx, seed)
            except ConditioningError as exc:
                log.warning("re-decode of step %d failed: %s", ctx.target, exc)
                out[n] = np.nan
        return out

    def gripper_at(self, base: State, step: int) -> bool:
        return self.components[int(np.argmax(self.weights_at(base)))].gripper_at(base, step)


def sample_chunks(policy: ChunkPolicy, base: State, k: int, seed=None) -> list[ActionChunk]:
    if k < 1:
        raise InvalidInput(f"need at least one sample, got k={k}")
    return policy.forward(PolicyQuery(base, k=k, seed=seed))


def redecode(policy: ChunkPolicy, base: State, context: VerifyContext, seed=None) -> Action:
    """Re-decode a single context; raises ConditioningError when it cannot be conditioned."""
    deltas = policy.redecode_one(base, context, seed)
    return Action(deltas, policy.gripper_at(base, context.target))


@dataclass(frozen=True)
class ConditionalEstimate:
    mean: np.ndarray
    stderr: np.ndarray
    accepted: int


def brute_force_conditional(policy: ChunkPolicy, base: State, context: VerifyContext, n_samples: int, band, seed=None) -> ConditionalEstimate:
    """Rejection-sampling estimate of the target step's conditional mean.

    Draws ``n_samples`` unconditional chunks, keeps those whose clamped steps
    all lie within ``band`` (per coordinate) of the clamped values, and
    averages the target step over the survivors.
    """
    band = np.asarray(band, dtype=float)
    if np.any(band <= 0):
        raise InvalidInput("band must be positive")
    rng = np.random.default_rng(seed)
    deltas, _ = policy.sample_array(base, n_samples, rng)
    keep = np.ones(n_samples, dtype=bool)
    for p in context.fixed_positions:
        value = np.asarray(context.value_at(p), dtype=float)
        keep &= np.all(np.abs(deltas[:, p, :] - value) <= band, axis=1)
    accepted = int(keep.sum())
    if accepted == 0:
        raise InsufficientData(f"no samples fell inside the band around steps {sorted(context.fixed_positions)}")
    target = deltas[keep, context.target, :]
    if accepted > 1:
        stderr = target.std(axis=0, ddof=1) / math.sqrt(accepted)
    else:
        stderr = np.full(target.shape[1], np.inf)
    return ConditionalEstimate(target.mean(axis=0), stderr, accepted)
