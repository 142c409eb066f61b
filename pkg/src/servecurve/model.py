"""Serve-advantage logistic model: parameters, constrained coefficients, densities.

The logit of a serve point won by server ``i`` against receiver ``j`` at
rally bucket ``x`` is ``f_i(x) + alpha_i - alpha_j`` (or the per-court
``alpha_{i,c} - alpha_{j,c}``), where ``f_i`` is a spline whose trailing
coefficients are built as a running sum of positive decrements.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import gammaln

from .splines import SplineSpec, basis_matrix, first_constrained_index, make_spec, spline_eval

LOG_2PI = float(np.log(2 * np.pi))
UNIFORM_UPPER = 10.0
BETA0_VAR = 100.0
ALPHA0_VAR = 100.0
PREC_SHAPE = 0.1
PREC_RATE = 0.1


class Variant(str, Enum):
    UNCONSTRAINED = "unconstrained"
    PARTIAL = "partial"
    FULL = "full"


@dataclass(frozen=True)
class ModelConfig:
    spec: SplineSpec
    court_effect: bool = False
    variant: Variant = Variant.PARTIAL

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))

    @property
    def n_free(self) -> int:
        """Number of unconstrained leading coefficients per server."""
        if self.variant is Variant.UNCONSTRAINED:
            return self.spec.M
        if self.variant is Variant.FULL:
            return 1
        return first_constrained_index(self.spec) - 1

    @property
    def n_eps(self) -> int:
        return self.spec.M - self.n_free

    @property
    def first_constrained(self) -> int | None:
        return None if self.n_eps == 0 else self.n_free + 1

    @property
    def n_courts(self) -> int:
        return 3 if self.court_effect else 1

    def to_dict(self) -> dict:
        return {"spline": self.spec.to_dict(), "court_effect": self.court_effect,
                "variant": self.variant.value}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        s = d["spline"]
        spec = make_spec(s["L"], s["U"], s["k"], s["interior_knots"], s["L0"])
        return cls(spec, bool(d.get("court_effect", False)), Variant(d.get("variant", "partial")))


@dataclass
class HyperParams:
    """Population-level parameters.

    ``tau2`` are precisions of the free coefficients; ``(r, s)`` pairs are the
    mean and variance of the gamma laws of ``tau2`` and of the decrements.
    """

    beta_mean: np.ndarray
    tau2: np.ndarray
    beta0: float
    sigma2_beta0: float
    r_tau: float
    s_tau: float
    r_eps: float
    s_eps: float
    alpha0: float
    sigma2_alpha: float

    def copy(self) -> "HyperParams":
        return HyperParams(self.beta_mean.copy(), self.tau2.copy(), self.beta0,
                           self.sigma2_beta0, self.r_tau, self.s_tau, self.r_eps,
                           self.s_eps, self.alpha0, self.sigma2_alpha)


@dataclass
class PlayerParams:
    """Per-server coefficients and per-player rally abilities.

    ``free_beta`` is (n_servers, n_free), ``eps`` is (n_servers, n_eps) and
    ``alpha`` is (n_players,) or (n_players, 3); rows follow the dataset's
    ``servers`` / ``players`` order.
    """

    free_beta: np.ndarray
    eps: np.ndarray
    alpha: np.ndarray

    @property
    def coeffs(self) -> np.ndarray:
        return reconstruct_coeffs(self.free_beta, self.eps)

    def copy(self) -> "PlayerParams":
        return PlayerParams(self.free_beta.copy(), self.eps.copy(), self.alpha.copy())


@dataclass
class State:
    players: PlayerParams
    hypers: HyperParams

    def copy(self) -> "State":
        return State(self.players.copy(), self.hypers.copy())


def reconstruct_coeffs(free_beta, eps) -> np.ndarray:
    """Full coefficient vectors from free leading values and positive decrements.

    Works on the last axis, so batches of servers or draws pass straight through.

    >>> reconstruct_coeffs([2.0, 1.0], [0.5, 0.25]).tolist()
    [2.0, 1.0, 0.5, 0.25]
    """
    free = np.asarray(free_beta, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if free.shape[-1] < 1:
        raise ValueError("need at least one free coefficient")
    if eps.size and not np.all(eps > 0):
        raise ValueError("decrements must be strictly positive")
    tail = free[..., -1:] - np.cumsum(eps, axis=-1)
    return np.concatenate([free, tail], axis=-1)


def decompose_coeffs(coeffs, n_free: int) -> tuple[np.ndarray, np.ndarray]:
    c = np.asarray(coeffs, dtype=float)
    return c[..., :n_free].copy(), -np.diff(c[..., n_free - 1:], axis=-1)


def gamma_mean_var(mean: float, var: float) -> tuple[float, float]:
    """Shape and rate of the gamma law with the given mean and variance."""
    mean, var = np.asarray(mean, dtype=float), np.asarray(var, dtype=float)
    if not (np.all(mean > 0) and np.all(var > 0)):
        raise ValueError("gamma mean and variance must be positive")
    shape, rate = mean * mean / var, mean / var
    return (float(shape), float(rate)) if shape.ndim == 0 else (shape, rate)


def gamma_logpdf(x, shape, rate):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = shape * np.log(rate) - gammaln(shape) + (shape - 1) * np.log(x) - rate * x
    return np.where(x > 0, out, -np.inf)


def normal_logpdf(x, mean, var):
    x = np.asarray(x, dtype=float)
    return -0.5 * (LOG_2PI + np.log(var) + (x - mean) ** 2 / var)


def apply_sum_to_zero(alphas) -> np.ndarray:
    """Set the last entry (in C order) to minus the sum of all the others."""
    a = np.array(alphas, dtype=float)
    flat = a.reshape(-1)
    if flat.size < 2:
        raise ValueError("sum-to-zero needs at least two rally abilities")
    flat[-1] = 0.0
    flat[-1] = -flat[:-1].sum()
    return a


def court_column(config: ModelConfig, court) -> np.ndarray:
    if not config.court_effect:
        return np.zeros_like(np.asarray(court), dtype=np.int64)
    c = np.asarray(court, dtype=np.int64)
    if np.any((c < 1) | (c > 3)):
        raise ValueError("court must be 1 (clay), 2 (grass) or 3 (hard)")
    return c - 1


def logit_p(config: ModelConfig, coeffs, alpha_server, alpha_receiver, x, court=None):
    """Log-odds that the server wins the point at rally bucket ``x``."""
    if config.court_effect:
        if court is None:
            raise ValueError("court is required when the court effect is on")
        c = int(court) - 1
        a_s, a_r = np.asarray(alpha_server)[c], np.asarray(alpha_receiver)[c]
    else:
        a_s, a_r = float(np.asarray(alpha_server)), float(np.asarray(alpha_receiver))
    return float(spline_eval(config.spec, coeffs, float(x))) + a_s - a_r


def point_logits(config: ModelConfig, dataset, params: PlayerParams, basis=None) -> np.ndarray:
    """Logit for every point of ``dataset``."""
    if len(dataset) == 0:
        return np.zeros(0)
    slot = dataset.server_slot
    if np.any(slot < 0):
        raise KeyError("point refers to a server without coefficients")
    coeffs = params.coeffs
    if basis is None:
        basis = basis_matrix(config.spec, np.arange(1, int(dataset.x.max()) + 1))
    f = np.einsum("nm,nm->n", coeffs[slot], basis[dataset.x - 1])
    alpha = params.alpha.reshape(params.alpha.shape[0], -1)
    c = court_column(config, dataset.court)
    return f + alpha[dataset.server, c] - alpha[dataset.receiver, c]


def bernoulli_loglik(logit, y):
    """``y log p + (1 - y) log(1 - p)`` from the logit, stable for large |logit|."""
    logit = np.asarray(logit, dtype=float)
    return np.asarray(y) * logit - np.logaddexp(0.0, logit)


def pointwise_log_likelihood(config: ModelConfig, dataset, params: PlayerParams) -> np.ndarray:
    if params.alpha.shape[0] != dataset.n_players:
        raise KeyError("rally abilities do not match the dataset's players")
    return bernoulli_loglik(point_logits(config, dataset, params), dataset.y)


def log_likelihood(config: ModelConfig, dataset, params: PlayerParams) -> float:
    if len(dataset) == 0:
        return 0.0
    return float(np.sum(pointwise_log_likelihood(config, dataset, params)))


def _uniform_logpdf(v: float) -> float:
    return -np.log(UNIFORM_UPPER) if 0.0 < v < UNIFORM_UPPER else -np.inf


def log_prior(config: ModelConfig, params: PlayerParams, hypers: HyperParams) -> float:
    """Joint log prior density; ``-inf`` outside the support."""
    h = hypers
    if min(h.sigma2_beta0, h.sigma2_alpha) <= 0 or np.any(h.tau2 <= 0):
        return -np.inf
    if params.eps.size and np.any(params.eps <= 0):
        return -np.inf
    lp = 0.0
    # free coefficients around their population means
    lp += np.sum(normal_logpdf(params.free_beta, h.beta_mean, 1.0 / h.tau2))
    lp += np.sum(normal_logpdf(h.beta_mean, h.beta0, h.sigma2_beta0))
    lp += np.sum(normal_logpdf(h.beta0, 0.0, BETA0_VAR))
    lp += gamma_logpdf(1.0 / h.sigma2_beta0, PREC_SHAPE, PREC_RATE)
    lp += _uniform_logpdf(h.r_tau) + _uniform_logpdf(h.s_tau)
    if not np.isfinite(lp):
        return -np.inf
    lp += np.sum(gamma_logpdf(h.tau2, *gamma_mean_var(h.r_tau, h.s_tau)))
    if config.n_eps:
        lp += _uniform_logpdf(h.r_eps) + _uniform_logpdf(h.s_eps)
        if not np.isfinite(lp):
            return -np.inf
        lp += np.sum(gamma_logpdf(params.eps, *gamma_mean_var(h.r_eps, h.s_eps)))
    free_alpha = params.alpha.reshape(-1)[:-1]
    lp += np.sum(normal_logpdf(free_alpha, h.alpha0, h.sigma2_alpha))
    lp += float(normal_logpdf(h.alpha0, 0.0, ALPHA0_VAR))
    lp += gamma_logpdf(1.0 / h.sigma2_alpha, PREC_SHAPE, PREC_RATE)
    return float(lp)


def log_posterior(config: ModelConfig, dataset, state: State) -> float:
    lp = log_prior(config, state.players, state.hypers)
    if not np.isfinite(lp):
        return -np.inf
    return lp + log_likelihood(config, dataset, state.players)


def state_to_dict(state: State) -> dict:
    """Flat JSON-ready mapping; floats keep their shortest round-trip repr."""
    p, h = state.players, state.hypers
    return {
        "free_beta": p.free_beta.tolist(),
        "eps": p.eps.tolist(),
        "alpha": p.alpha.tolist(),
        "beta_mean": h.beta_mean.tolist(),
        "tau2": h.tau2.tolist(),
        "beta0": float(h.beta0),
        "sigma2_beta0": float(h.sigma2_beta0),
        "r_tau": float(h.r_tau),
        "s_tau": float(h.s_tau),
        "r_eps": float(h.r_eps),
        "s_eps": float(h.s_eps),
        "alpha0": float(h.alpha0),
        "sigma2_alpha": float(h.sigma2_alpha),
    }


def state_from_dict(d: dict, n_free: int, n_eps: int) -> State:
    fb = np.asarray(d["free_beta"], dtype=float).reshape(-1, n_free)
    eps = np.asarray(d["eps"], dtype=float).reshape(fb.shape[0], n_eps)
    players = PlayerParams(fb, eps, np.asarray(d["alpha"], dtype=float))
    hypers = HyperParams(
        np.asarray(d["beta_mean"], dtype=float), np.asarray(d["tau2"], dtype=float),
        *(float(d[k]) for k in ("beta0", "sigma2_beta0", "r_tau", "s_tau", "r_eps",
                                "s_eps", "alpha0", "sigma2_alpha")),
    )
    return State(players, hypers)


def state_to_json(state: State) -> str:
    return json.dumps(state_to_dict(state))


def state_from_json(text: str, n_free: int, n_eps: int) -> State:
    return state_from_dict(json.loads(text), n_free, n_eps)
