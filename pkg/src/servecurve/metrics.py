"""Model-comparison criteria and MCMC convergence diagnostics.

The criteria take a (draws x observations) log-likelihood matrix. Identical
observations can be pooled into one column with a multiplicity weight, which
leaves every criterion unchanged and keeps the matrix small.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import logsumexp

from .model import PlayerParams, apply_sum_to_zero


class InsufficientDrawsError(ValueError):
    pass


def _check(ll, weights):
    ll = np.asarray(ll, dtype=float)
    if ll.ndim == 1:
        ll = ll[:, None]
    if ll.shape[0] < 2:
        raise InsufficientDrawsError("need at least 2 draws")
    w = np.ones(ll.shape[1]) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (ll.shape[1],):
        raise ValueError("one weight per observation column is required")
    return ll, w


def log_cpo(ll) -> np.ndarray:
    """Per-observation log CPO: log of the harmonic mean of the likelihoods."""
    ll, _ = _check(ll, None)
    return np.log(ll.shape[0]) - logsumexp(-ll, axis=0)


def lppd_terms(ll) -> np.ndarray:
    ll, _ = _check(ll, None)
    return logsumexp(ll, axis=0) - np.log(ll.shape[0])


def lpml(ll, weights=None) -> float:
    """Log pseudo marginal likelihood (higher is better).

    >>> round(lpml([[np.log(0.5)], [np.log(0.25)]]), 12) == round(np.log(1 / 3), 12)
    True
    """
    ll, w = _check(ll, weights)
    return float(np.sum(w * log_cpo(ll)))


def waic_terms(ll) -> tuple[np.ndarray, np.ndarray]:
    ll, _ = _check(ll, None)
    return lppd_terms(ll), np.var(ll, axis=0, ddof=1)


def waic(ll, weights=None) -> float:
    """WAIC on the deviance scale, ``-2 (lppd - p_waic)`` (lower is better)."""
    ll, w = _check(ll, weights)
    lppd, p = waic_terms(ll)
    return float(-2.0 * np.sum(w * (lppd - p)))


def p_waic(ll, weights=None) -> float:
    ll, w = _check(ll, weights)
    return float(np.sum(w * np.var(ll, axis=0, ddof=1)))


def dic(loglik_totals, loglik_at_posterior_mean) -> float:
    """``mean deviance + p_D`` with ``p_D = mean deviance - deviance at the mean``."""
    d_bar, p_d = dic_parts(loglik_totals, loglik_at_posterior_mean)
    return d_bar + p_d


def dic_parts(loglik_totals, loglik_at_posterior_mean) -> tuple[float, float]:
    totals = np.asarray(loglik_totals, dtype=float)
    if totals.size < 1:
        raise InsufficientDrawsError("need at least one draw")
    at_mean = float(loglik_at_posterior_mean)
    if not np.isfinite(at_mean):
        raise ValueError("deviance at the posterior mean is not finite")
    d_bar = float(np.mean(-2.0 * totals))
    return d_bar, d_bar + 2.0 * at_mean


def posterior_mean_params(draws, eps_scale: str = "natural") -> PlayerParams:
    """Plug-in point for DIC that satisfies every constraint.

    Free coefficients and free rally abilities are averaged directly. The
    decrements are averaged on their natural scale by default, which is the
    same as averaging whole coefficient vectors; the admissible set is convex,
    so the mean stays admissible. ``eps_scale="log"`` averages log-decrements
    instead, whose geometric mean sits far below the mean when the posterior
    piles up near zero and can push ``p_D`` negative.
    """
    fb = draws.flat(draws.free_beta).mean(axis=0)
    if not draws.eps.size:
        eps = np.zeros(fb.shape[:-1] + (0,))
    elif eps_scale == "natural":
        eps = draws.flat(draws.eps).mean(axis=0)
    elif eps_scale == "log":
        eps = np.exp(np.log(draws.flat(draws.eps)).mean(axis=0))
    else:
        raise ValueError("eps_scale must be 'natural' or 'log'")
    alpha = draws.flat(draws.alpha).mean(axis=0)
    if alpha.size >= 2:
        alpha = apply_sum_to_zero(alpha)
    return PlayerParams(fb, eps, alpha)


def loglik_at_posterior_mean(draws, eps_scale: str = "natural") -> float:
    eta = draws.cells.logits(draws.model, posterior_mean_params(draws, eps_scale))
    return float(np.sum(draws.cells.loglik(eta)))


def point_win_probability(draws) -> np.ndarray:
    """Posterior mean win probability for each cell of ``draws.cells``."""
    eta = draws.flat(draws.eta)
    return np.mean(1.0 / (1.0 + np.exp(-eta)), axis=0)


def rmse(draws, dataset=None) -> float:
    """Root mean squared error of win counts over observed (server, bucket) cells.

    Predicted wins in a cell are the sum of posterior mean win probabilities
    of its points.
    """
    if dataset is not None and draws.dataset_hash and dataset.content_hash() != draws.dataset_hash:
        raise ValueError("draws were fitted on a different dataset")
    cells = draws.cells
    if len(cells) == 0 or draws.n_draws == 0:
        raise ValueError("rmse needs data and draws")
    pred = cells.n * point_win_probability(draws)
    key = cells.slot * 64 + cells.x
    uniq, inv = np.unique(key, return_inverse=True)
    inv = inv.reshape(-1)
    obs = np.bincount(inv, weights=cells.k, minlength=uniq.size)
    exp = np.bincount(inv, weights=pred, minlength=uniq.size)
    return float(np.sqrt(np.mean((obs - exp) ** 2)))


# ---------------------------------------------------------------------------
# diagnostics


def _autocovariance(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance of each row, by FFT."""
    n = x.shape[-1]
    xc = x - x.mean(axis=-1, keepdims=True)
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, n=size, axis=-1)
    acov = np.fft.irfft(f * np.conj(f), n=size, axis=-1)[..., :n]
    return acov / n


def ess(chains) -> float:
    """Effective sample size from a (chain, draw) array.

    Autocorrelations are pooled across chains and summed in adjacent pairs
    while the pair sums stay positive, then made monotone (Geyer's initial
    positive and monotone sequence).
    """
    x = np.atleast_2d(np.asarray(chains, dtype=float))
    m, n = x.shape
    if n < 4:
        raise InsufficientDrawsError("need at least 4 draws per chain")
    acov = _autocovariance(x)
    chain_var = acov[:, 0] * n / (n - 1)
    W = chain_var.mean()
    var_plus = W * (n - 1) / n
    if m > 1:
        var_plus += np.var(x.mean(axis=1), ddof=1)
    if not var_plus > 0:
        warnings.warn("constant trace: effective sample size undefined", RuntimeWarning)
        return float("nan")
    rho = 1.0 - (W - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    n_pairs = n // 2
    pairs = rho[:2 * n_pairs].reshape(n_pairs, 2).sum(axis=1)
    stop = np.argmax(pairs <= 0) if np.any(pairs <= 0) else n_pairs
    pairs = np.minimum.accumulate(pairs[:stop])
    tau = -1.0 + 2.0 * pairs.sum() if stop else 1.0
    tau = max(tau, 1.0 / np.log10(m * n)) if m * n > 10 else max(tau, 1e-12)
    return float(m * n / tau)


def split_rhat(chains) -> float:
    """Split potential scale reduction factor from a (chain, draw) array."""
    x = np.atleast_2d(np.asarray(chains, dtype=float))
    m, n = x.shape
    if n < 4:
        raise InsufficientDrawsError("need at least 4 draws per chain")
    half = n // 2
    parts = np.concatenate([x[:, :half], x[:, n - half:]], axis=0)
    W = np.mean(np.var(parts, axis=1, ddof=1))
    if not W > 0:
        warnings.warn("constant trace: R-hat undefined", RuntimeWarning)
        return float("nan")
    B = half * np.var(parts.mean(axis=1), ddof=1)
    var_plus = (half - 1) / half * W + B / half
    return float(np.sqrt(var_plus / W))


def diagnostics(traces: dict[str, np.ndarray]) -> dict[str, dict[str, float]]:
    """ESS and split R-hat per named (chain, draw) trace."""
    out = {}
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        for name, x in traces.items():
            out[name] = {"ess": ess(x), "rhat": split_rhat(x)}
    undefined = sorted(k for k, v in out.items() if np.isnan(v["rhat"]))
    if caught and undefined:
        shown = ", ".join(undefined[:5]) + (" ..." if len(undefined) > 5 else "")
        warnings.warn(f"{len(undefined)} constant traces with undefined R-hat: {shown}",
                      RuntimeWarning, stacklevel=2)
    return out


# ---------------------------------------------------------------------------
# report


@dataclass
class FitReport:
    variant: str
    lpml: float
    waic: float
    dic: float
    rmse: float
    p_waic: float
    p_d: float
    n_points: int
    n_draws: int
    dataset_hash: str
    ess: dict = field(default_factory=dict)
    rhat: dict = field(default_factory=dict)
    acceptance: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    @property
    def max_rhat(self) -> float:
        vals = [v for v in self.rhat.values() if np.isfinite(v)]
        return max(vals) if vals else float("nan")

    @property
    def min_ess(self) -> float:
        vals = [v for v in self.ess.values() if np.isfinite(v)]
        return min(vals) if vals else float("nan")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "FitReport":
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "FitReport":
        return cls.from_dict(json.loads(text))


def fit_report(draws, dataset=None, with_diagnostics: bool = True) -> FitReport:
    ll, w = draws.loglik()
    totals = draws.loglik_totals()
    d_bar, p_d = dic_parts(totals, loglik_at_posterior_mean(draws))
    ess_d, rhat_d = {}, {}
    if with_diagnostics and draws.n_draws >= 4:
        for name, v in diagnostics(draws.scalar_traces()).items():
            ess_d[name], rhat_d[name] = v["ess"], v["rhat"]
    return FitReport(
        variant=draws.model.variant.value,
        lpml=lpml(ll, w),
        waic=waic(ll, w),
        dic=d_bar + p_d,
        rmse=rmse(draws, dataset),
        p_waic=p_waic(ll, w),
        p_d=p_d,
        n_points=int(draws.cells.n.sum()),
        n_draws=draws.n_chains * draws.n_draws,
        dataset_hash=draws.dataset_hash,
        ess=ess_d,
        rhat=rhat_d,
        acceptance=dict(draws.acceptance),
        config={"model": draws.model.to_dict(), "chain": draws.chain.to_dict()},
    )
