"""Metropolis-within-Gibbs posterior simulation.

One sweep updates, in order:

1. the conjugate hyper-layer (population means and precisions, ``beta0``,
   ``alpha0`` and their precisions);
2. every server's free coefficients, one coordinate at a time;
3. every server's log-decrements, one coordinate at a time;
4. each free rally ability, with the derived last entry recomputed;
5. ``(r_tau, s_tau)`` with the precisions integrated out, then the precisions;
6. ``(r_eps, s_eps)``.

Servers share no likelihood terms given the rally abilities, so steps 2 and 3
propose for all servers at once and accept or reject each independently.
Points are pooled into cells ``(server, receiver, bucket, court)`` with win
and trial counts, which is exact for a Bernoulli likelihood.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import gammaln

from .model import (
    ALPHA0_VAR,
    BETA0_VAR,
    PREC_RATE,
    PREC_SHAPE,
    UNIFORM_UPPER,
    HyperParams,
    ModelConfig,
    PlayerParams,
    State,
    apply_sum_to_zero,
    gamma_mean_var,
    log_posterior,
)
from .splines import basis_matrix

log = logging.getLogger(__name__)

TINY = np.finfo(float).tiny
SCALAR_NAMES = ("beta0", "sigma2_beta0", "r_tau", "s_tau", "r_eps", "s_eps",
                "alpha0", "sigma2_alpha")


class SamplerInitError(RuntimeError):
    pass


@dataclass
class ChainConfig:
    n_iter: int = 20_000
    burn_in: int = 1_000
    thin: int = 20
    n_chains: int = 1
    seed: int = 0
    adapt_window: int = 25
    target_accept: float = 0.44
    n_jobs: int = 1

    def __post_init__(self):
        if self.n_iter < 1 or not 0 <= self.burn_in < self.n_iter:
            raise ValueError("need 0 <= burn_in < n_iter")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.n_chains < 1:
            raise ValueError("n_chains must be >= 1")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.adapt_window < 1:
            raise ValueError("adapt_window must be >= 1")

    @property
    def n_draws(self) -> int:
        return (self.n_iter - self.burn_in) // self.thin

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# data layout


@dataclass(frozen=True)
class CellTable:
    """Points pooled by ``(server, receiver, bucket, court column)``."""

    server: np.ndarray       # player index
    receiver: np.ndarray     # player index
    slot: np.ndarray         # server row
    x: np.ndarray
    court: np.ndarray        # 0-based court column (always 0 without court effect)
    n: np.ndarray
    k: np.ndarray
    n_servers: int
    n_players: int

    @classmethod
    def from_dataset(cls, dataset, config: ModelConfig) -> "CellTable":
        n_courts = config.n_courts
        court = (dataset.court - 1) if config.court_effect else np.zeros(len(dataset), np.int64)
        N = max(dataset.n_players, 1)
        key = ((dataset.server * N + dataset.receiver) * 64 + dataset.x) * n_courts + court
        uniq, inv = np.unique(key, return_inverse=True)
        inv = inv.reshape(-1)
        n = np.bincount(inv, minlength=uniq.size).astype(np.int64)
        k = np.bincount(inv, weights=dataset.y, minlength=uniq.size).astype(np.int64)
        c = uniq % n_courts
        rest = uniq // n_courts
        x = rest % 64
        rest //= 64
        receiver, server = rest % N, rest // N
        slot = np.searchsorted(dataset.servers, server)
        return cls(server, receiver, slot, x, c, n, k, dataset.n_servers, dataset.n_players)

    def __len__(self) -> int:
        return int(self.n.size)

    def logits(self, config: ModelConfig, params: PlayerParams) -> np.ndarray:
        if len(self) == 0:
            return np.zeros(0)
        xs = np.arange(1, int(self.x.max()) + 1)
        B = basis_matrix(config.spec, xs)
        f = np.einsum("cm,cm->c", params.coeffs[self.slot], B[self.x - 1])
        a = params.alpha.reshape(self.n_players, -1)
        return f + a[self.server, self.court] - a[self.receiver, self.court]

    def loglik(self, eta) -> np.ndarray:
        """Binomial kernel per cell (no combinatorial constant); broadcasts over draws."""
        return self.k * eta - self.n * np.logaddexp(0.0, eta)

    def patterns(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(cell index, outcome, multiplicity) for every distinct observed point."""
        won = np.nonzero(self.k > 0)[0]
        lost = np.nonzero(self.n - self.k > 0)[0]
        cell = np.concatenate([won, lost])
        y = np.concatenate([np.ones(won.size, np.int64), np.zeros(lost.size, np.int64)])
        w = np.concatenate([self.k[won], (self.n - self.k)[lost]]).astype(float)
        return cell, y, w

    def to_arrays(self) -> dict:
        return {f"cell_{k}": getattr(self, k) for k in
                ("server", "receiver", "slot", "x", "court", "n", "k")}

    @classmethod
    def from_arrays(cls, arrays: dict, n_servers: int, n_players: int) -> "CellTable":
        return cls(*(np.asarray(arrays[f"cell_{k}"]) for k in
                     ("server", "receiver", "slot", "x", "court", "n", "k")),
                   n_servers, n_players)


def coefficient_map(n_free: int, M: int) -> np.ndarray:
    """Matrix ``T`` with ``beta = T @ (free_1..free_nf, eps_{nf+1}..eps_M)``."""
    T = np.zeros((M, M))
    T[:n_free, :n_free] = np.eye(n_free)
    for m in range(n_free, M):
        T[m, n_free - 1] = 1.0
        T[m, n_free:m + 1] = -1.0
    return T


# ---------------------------------------------------------------------------
# random helpers


def log_gamma_draw(rng, shape, rate):
    """``log`` of a gamma(shape, rate) draw, accurate for tiny shapes."""
    shape, rate = np.broadcast_arrays(np.asarray(shape, dtype=float),
                                      np.asarray(rate, dtype=float))
    small = shape < 1.0
    g = np.log(rng.gamma(np.where(small, shape + 1.0, shape)))
    u = rng.random(shape.shape)
    with np.errstate(divide="ignore"):
        g = np.where(small, g + np.log(u) / np.where(small, shape, 1.0), g)
    return g - np.log(rate)


def _logit10(v):
    p = np.asarray(v) / UNIFORM_UPPER
    return np.log(p) - np.log1p(-p)


def _expit10(z):
    return UNIFORM_UPPER / (1.0 + np.exp(-np.asarray(z)))


def _log_jacobian10(v):
    v = np.asarray(v, dtype=float)
    return np.log(v) + np.log1p(-v / UNIFORM_UPPER)


# ---------------------------------------------------------------------------
# initial state and conjugate layer


def init_state(config: ModelConfig, dataset, seed, max_tries: int = 100) -> State:
    """Overdispersed start: free coefficients N(0, 0.5^2), decrements Exp(1),
    rally abilities 0, hyperparameters at prior means (uniforms at 5)."""
    rng = np.random.default_rng(seed)
    n_s, nf, ne = dataset.n_servers, config.n_free, config.n_eps
    alpha_shape = (dataset.n_players, 3) if config.court_effect else (dataset.n_players,)
    for _ in range(max_tries):
        players = PlayerParams(
            rng.normal(0.0, 0.5, size=(n_s, nf)),
            rng.gamma(*_shape_scale(1.0, 1.0), size=(n_s, ne)),
            np.zeros(alpha_shape),
        )
        if players.alpha.size >= 2:
            players.alpha = apply_sum_to_zero(players.alpha)
        hypers = HyperParams(np.zeros(nf), np.full(nf, 5.0), 0.0, 1.0, 5.0, 5.0, 1.0, 1.0,
                             0.0, 1.0)
        state = State(players, hypers)
        if np.isfinite(log_posterior(config, dataset, state)):
            return state
    raise SamplerInitError(f"no finite starting point after {max_tries} attempts")


def _shape_scale(mean, var):
    shape, rate = gamma_mean_var(mean, var)
    return shape, 1.0 / rate


def normal_update(prior_mean, prior_prec, total, n, prec):
    """Mean and precision of a normal mean after ``n`` observations summing to
    ``total``, each with precision ``prec``."""
    post_prec = prior_prec + n * prec
    return (prior_prec * prior_mean + prec * total) / post_prec, post_prec


def draw_beta_layer(free_beta, tau2, prec0, rng) -> tuple[float, np.ndarray]:
    """Joint draw of ``beta0`` and the per-coefficient population means.

    ``beta0`` is drawn with the population means integrated out (each server
    average is then N(beta0, 1/prec0 + 1/(n tau2))), the means given ``beta0``.
    """
    n = free_beta.shape[0]
    if n > 0:
        v = 1.0 / prec0 + 1.0 / (n * tau2)
        P = 1.0 / BETA0_VAR + np.sum(1.0 / v)
        mean = np.sum(free_beta.mean(axis=0) / v) / P
    else:
        P, mean = 1.0 / BETA0_VAR, 0.0
    beta0 = float(mean + rng.normal() / np.sqrt(P))
    mm, Pm = normal_update(beta0, prec0, free_beta.sum(axis=0), n, tau2)
    return beta0, mm + rng.normal(size=mm.shape) / np.sqrt(Pm)


def draw_precision(deviations, rng) -> float:
    """Precision under the Gamma(0.1, 0.1) prior given centred normal deviations."""
    d = np.asarray(deviations, dtype=float)
    lg = log_gamma_draw(rng, PREC_SHAPE + d.size / 2, PREC_RATE + np.sum(d * d) / 2)
    return float(np.exp(lg))


def draw_tau2(free_beta, beta_mean, r, s, rng) -> np.ndarray:
    a, b = gamma_mean_var(r, s)
    ssm = np.sum((free_beta - beta_mean) ** 2, axis=0)
    lg = log_gamma_draw(rng, a + free_beta.shape[0] / 2, b + ssm / 2)
    return np.maximum(np.exp(lg), TINY)


def draw_alpha0(free_alpha, prec_alpha, rng) -> float:
    mean, P = normal_update(0.0, 1.0 / ALPHA0_VAR, np.sum(free_alpha), free_alpha.size,
                            prec_alpha)
    return float(mean + rng.normal() / np.sqrt(P))


def update_conjugate_hypers(config: ModelConfig, state: State, rng) -> State:
    """Exact draws for the normal/gamma hyper-layer; mutates and returns ``state``.

    Order: (beta0, population means), their precision, the coefficient
    precisions ``tau2``, ``alpha0``, the rally-ability precision.
    """
    p, h = state.players, state.hypers
    h.beta0, h.beta_mean = draw_beta_layer(p.free_beta, h.tau2, 1.0 / h.sigma2_beta0, rng)
    h.sigma2_beta0 = 1.0 / draw_precision(h.beta_mean - h.beta0, rng)
    h.tau2 = draw_tau2(p.free_beta, h.beta_mean, h.r_tau, h.s_tau, rng)
    free_alpha = p.alpha.reshape(-1)[:-1]
    h.alpha0 = draw_alpha0(free_alpha, 1.0 / h.sigma2_alpha, rng)
    h.sigma2_alpha = 1.0 / draw_precision(free_alpha - h.alpha0, rng)
    return state


def _collapsed_tau_logpost(r, s, ssm, n):
    a, b = gamma_mean_var(r, s)
    return float(np.sum(a * np.log(b) - gammaln(a) + gammaln(a + n / 2)
                        - (a + n / 2) * np.log(b + ssm / 2)))


def _eps_logpost(r, s, eps):
    if eps.size == 0:
        return 0.0
    a, b = gamma_mean_var(r, s)
    return float(eps.size * (a * np.log(b) - gammaln(a)) + (a - 1) * np.sum(np.log(eps))
                 - b * np.sum(eps))


# ---------------------------------------------------------------------------
# the sampler


class GibbsSampler:
    """Single-chain Metropolis-within-Gibbs kernel over a fixed dataset."""

    BLOCKS = ("beta", "eps", "alpha", "tau_hyper", "eps_hyper")

    def __init__(self, config: ModelConfig, dataset, state: State, rng,
                 target_accept: float = 0.44):
        self.config = config
        self.dataset = dataset
        self.rng = rng
        self.target = target_accept
        self.cells = CellTable.from_dataset(dataset, config)
        self.state = state.copy()
        nf, M = config.n_free, config.spec.M
        cells = self.cells
        if len(cells):
            B = basis_matrix(config.spec, np.arange(1, int(cells.x.max()) + 1))
            self._G = (B @ coefficient_map(nf, M))[cells.x - 1]   # (cells, M)
        else:
            self._G = np.zeros((0, M))
        n_s = dataset.n_servers
        n_alpha = self.state.players.alpha.size
        self.log_step = {
            "beta": np.full((n_s, nf), np.log(0.3)),
            "eps": np.full((n_s, M - nf), np.log(0.5)),
            "alpha": np.full(max(n_alpha - 1, 0), np.log(0.5)),
            "tau_hyper": np.full(2, np.log(0.5)),
            "eps_hyper": np.full(2, np.log(0.5)),
        }
        self._reset_counts()
        self._alpha_cells = self._alpha_neighbourhoods()
        self.refresh()

    # -- bookkeeping -------------------------------------------------------

    def _reset_counts(self):
        self.accepted = {k: np.zeros(v.shape[:1] if k in ("tau_hyper", "eps_hyper")
                                     else v.shape) for k, v in self.log_step.items()}
        self.accepted["tau_hyper"] = np.zeros(1)
        self.accepted["eps_hyper"] = np.zeros(1)
        self.proposed = 0

    def _alpha_neighbourhoods(self):
        """Per free rally-ability entry, the cells whose logit moves and by how much.

        Raising entry ``e`` by ``d`` lowers the derived last entry by ``d``.
        """
        cells = self.cells
        C = self.config.n_courts
        n_entries = self.state.players.alpha.size
        if n_entries < 2 or len(cells) == 0:
            return [(np.zeros(0, np.int64), np.zeros(0))] * max(n_entries - 1, 0)
        s_entry = cells.server * C + cells.court
        r_entry = cells.receiver * C + cells.court
        last = n_entries - 1
        order_s = np.argsort(s_entry, kind="stable")
        order_r = np.argsort(r_entry, kind="stable")
        bounds_s = np.searchsorted(s_entry[order_s], np.arange(n_entries + 1))
        bounds_r = np.searchsorted(r_entry[order_r], np.arange(n_entries + 1))

        def touching(e):
            return (order_s[bounds_s[e]:bounds_s[e + 1]], order_r[bounds_r[e]:bounds_r[e + 1]])

        last_s, last_r = touching(last)
        out = []
        for e in range(last):
            es, er = touching(e)
            idx = np.concatenate([es, er, last_s, last_r])
            coef = np.concatenate([np.ones(es.size), -np.ones(er.size),
                                   -np.ones(last_s.size), np.ones(last_r.size)])
            uniq, inv = np.unique(idx, return_inverse=True)
            summed = np.bincount(inv.reshape(-1), weights=coef, minlength=uniq.size)
            keep = summed != 0
            out.append((uniq[keep], summed[keep]))
        return out

    def refresh(self):
        """Recompute cached cell logits from the current state."""
        self.eta = self.cells.logits(self.config, self.state.players)

    def log_posterior(self) -> float:
        return log_posterior(self.config, self.dataset, self.state)

    # -- blocks ------------------------------------------------------------

    def update_conjugate(self):
        update_conjugate_hypers(self.config, self.state, self.rng)

    def update_block(self, block: str):
        getattr(self, f"_update_{block}")()

    def _server_ratio(self, d_eta):
        cells = self.cells
        ll_new = cells.loglik(self.eta + d_eta)
        ll_old = cells.loglik(self.eta)
        return np.bincount(cells.slot, weights=ll_new - ll_old, minlength=cells.n_servers)

    def _update_beta(self):
        p, h = self.state.players, self.state.hypers
        n_s = p.free_beta.shape[0]
        if n_s == 0:
            return
        cells = self.cells
        for j in range(self.config.n_free):
            step = np.exp(self.log_step["beta"][:, j])
            d = self.rng.normal(size=n_s) * step
            log_u = np.log(self.rng.random(n_s))
            d_eta = d[cells.slot] * self._G[:, j]
            old = p.free_beta[:, j]
            new = old + d
            ratio = self._server_ratio(d_eta) - 0.5 * h.tau2[j] * (
                (new - h.beta_mean[j]) ** 2 - (old - h.beta_mean[j]) ** 2)
            acc = log_u < ratio
            p.free_beta[acc, j] = new[acc]
            self.eta += d_eta * acc[cells.slot]
            self.accepted["beta"][:, j] += acc

    def _update_eps(self):
        p, h = self.state.players, self.state.hypers
        n_s, ne = p.eps.shape
        if n_s == 0 or ne == 0:
            return
        a, b = gamma_mean_var(h.r_eps, h.s_eps)
        cells, nf = self.cells, self.config.n_free
        for j in range(ne):
            step = np.exp(self.log_step["eps"][:, j])
            d = self.rng.normal(size=n_s) * step
            log_u = np.log(self.rng.random(n_s))
            old = p.eps[:, j]
            new = old * np.exp(d)
            ok = new > 0
            d_eta = (new - old)[cells.slot] * self._G[:, nf + j]
            # density of log(eps) includes the Jacobian eps
            ratio = self._server_ratio(d_eta) + a * d - b * (new - old)
            acc = ok & (log_u < ratio)
            p.eps[acc, j] = new[acc]
            self.eta += d_eta * acc[cells.slot]
            self.accepted["eps"][:, j] += acc

    def _update_alpha(self):
        p, h = self.state.players, self.state.hypers
        flat = p.alpha.reshape(-1)
        n_free = flat.size - 1
        if n_free < 1:
            return
        cells = self.cells
        sd = np.sqrt(h.sigma2_alpha)
        d_all = self.rng.normal(size=n_free) * np.exp(self.log_step["alpha"]) * sd
        log_u = np.log(self.rng.random(n_free))
        inv_var = 1.0 / h.sigma2_alpha
        a0 = h.alpha0
        k, n, eta = cells.k, cells.n, self.eta
        acc_counts = self.accepted["alpha"]
        for e in range(n_free):
            d = d_all[e]
            idx, coef = self._alpha_cells[e]
            old = flat[e]
            ratio = -0.5 * inv_var * ((old + d - a0) ** 2 - (old - a0) ** 2)
            if idx.size:
                eo = eta[idx]
                en = eo + coef * d
                kk, nn = k[idx], n[idx]
                ratio += float(np.sum(kk * (en - eo) - nn * (np.logaddexp(0.0, en)
                                                             - np.logaddexp(0.0, eo))))
            if log_u[e] < ratio:
                flat[e] = old + d
                flat[-1] -= d
                if idx.size:
                    eta[idx] = en
                acc_counts[e] += 1
        # keep the constraint exact despite accumulated rounding
        flat[-1] = -flat[:-1].sum()

    def _update_tau_hyper(self):
        p, h = self.state.players, self.state.hypers
        n = p.free_beta.shape[0]
        ssm = np.sum((p.free_beta - h.beta_mean) ** 2, axis=0)
        z = _logit10([h.r_tau, h.s_tau])
        z_new = z + self.rng.normal(size=2) * np.exp(self.log_step["tau_hyper"])
        r_new, s_new = _expit10(z_new)
        log_u = np.log(self.rng.random())
        if 0 < r_new < UNIFORM_UPPER and 0 < s_new < UNIFORM_UPPER:
            ratio = (_collapsed_tau_logpost(r_new, s_new, ssm, n)
                     - _collapsed_tau_logpost(h.r_tau, h.s_tau, ssm, n)
                     + np.sum(_log_jacobian10([r_new, s_new]))
                     - np.sum(_log_jacobian10([h.r_tau, h.s_tau])))
            if log_u < ratio:
                h.r_tau, h.s_tau = float(r_new), float(s_new)
                self.accepted["tau_hyper"] += 1
        h.tau2 = draw_tau2(p.free_beta, h.beta_mean, h.r_tau, h.s_tau, self.rng)

    def _update_eps_hyper(self):
        p, h = self.state.players, self.state.hypers
        if self.config.n_eps == 0:
            return
        z = _logit10([h.r_eps, h.s_eps])
        z_new = z + self.rng.normal(size=2) * np.exp(self.log_step["eps_hyper"])
        r_new, s_new = _expit10(z_new)
        log_u = np.log(self.rng.random())
        if not (0 < r_new < UNIFORM_UPPER and 0 < s_new < UNIFORM_UPPER):
            return
        ratio = (_eps_logpost(r_new, s_new, p.eps) - _eps_logpost(h.r_eps, h.s_eps, p.eps)
                 + np.sum(_log_jacobian10([r_new, s_new]))
                 - np.sum(_log_jacobian10([h.r_eps, h.s_eps])))
        if log_u < ratio:
            h.r_eps, h.s_eps = float(r_new), float(s_new)
            self.accepted["eps_hyper"] += 1

    # -- sweeps and adaptation --------------------------------------------

    def sweep(self):
        self.refresh()
        self.update_conjugate()
        for block in self.BLOCKS:
            self.update_block(block)
        self.proposed += 1

    def acceptance_rates(self) -> dict:
        if self.proposed == 0:
            return {k: np.full_like(v, np.nan, dtype=float) for k, v in self.accepted.items()}
        return {k: v / self.proposed for k, v in self.accepted.items()}

    def adapt(self, batch: int):
        """Robbins-Monro nudge of every log step size toward the target rate."""
        gain = min(1.0, 2.0 / np.sqrt(batch))
        for k, rate in self.acceptance_rates().items():
            rate = np.broadcast_to(rate, self.log_step[k].shape) if rate.size == 1 \
                else rate
            self.log_step[k] = np.clip(self.log_step[k] + gain * (rate - self.target),
                                       np.log(1e-4), np.log(50.0))
        self._reset_counts()


# ---------------------------------------------------------------------------
# chains


@dataclass
class PosteriorDraws:
    """Thinned post-burn-in draws of one or more chains.

    Array leading dimensions are (chain, draw). ``eta`` holds the cell logits
    of each stored state; per-point log-likelihoods are derived from it.
    """

    model: ModelConfig
    chain: ChainConfig
    players: tuple[str, ...]
    servers: np.ndarray
    free_beta: np.ndarray
    eps: np.ndarray
    alpha: np.ndarray
    beta_mean: np.ndarray
    tau2: np.ndarray
    scalars: dict
    eta: np.ndarray
    cells: CellTable
    acceptance: dict = field(default_factory=dict)
    seeds: list = field(default_factory=list)
    dataset_hash: str = ""

    @property
    def n_chains(self) -> int:
        return int(self.free_beta.shape[0])

    @property
    def n_draws(self) -> int:
        return int(self.free_beta.shape[1])

    @property
    def server_names(self) -> list[str]:
        return [self.players[i] for i in self.servers]

    def coeffs(self) -> np.ndarray:
        """(chain, draw, server, M) spline coefficients."""
        from .model import reconstruct_coeffs
        return reconstruct_coeffs(self.free_beta, self.eps)

    def flat(self, values: np.ndarray) -> np.ndarray:
        return values.reshape((-1,) + values.shape[2:])

    def state(self, chain: int, draw: int) -> State:
        s = {k: float(v[chain, draw]) for k, v in self.scalars.items()}
        return State(
            PlayerParams(self.free_beta[chain, draw].copy(), self.eps[chain, draw].copy(),
                         self.alpha[chain, draw].copy()),
            HyperParams(self.beta_mean[chain, draw].copy(), self.tau2[chain, draw].copy(),
                        **{k: s[k] for k in SCALAR_NAMES}),
        )

    def loglik(self) -> tuple[np.ndarray, np.ndarray]:
        """(draws x distinct observations) log-likelihoods and multiplicities."""
        cell, y, w = self.cells.patterns()
        eta = self.flat(self.eta)[:, cell]
        ll = np.where(y == 1, -np.logaddexp(0.0, -eta), -np.logaddexp(0.0, eta))
        return ll, w

    def loglik_totals(self) -> np.ndarray:
        eta = self.flat(self.eta)
        return np.sum(self.cells.loglik(eta), axis=1)

    def scalar_traces(self) -> dict[str, np.ndarray]:
        """Every scalar parameter as a (chain, draw) array, keyed by a readable name."""
        out = {k: self.scalars[k] for k in SCALAR_NAMES
               if not (self.model.n_eps == 0 and k in ("r_eps", "s_eps"))}
        for m in range(self.beta_mean.shape[2]):
            out[f"beta_mean[{m + 1}]"] = self.beta_mean[:, :, m]
            out[f"tau2[{m + 1}]"] = self.tau2[:, :, m]
        names = self.server_names
        for i, name in enumerate(names):
            for m in range(self.free_beta.shape[3]):
                out[f"beta[{name},{m + 1}]"] = self.free_beta[:, :, i, m]
            for j in range(self.eps.shape[3]):
                out[f"log_eps[{name},{self.model.n_free + j + 1}]"] = np.log(
                    self.eps[:, :, i, j])
        a = self.alpha
        for p, name in enumerate(self.players):
            if a.ndim == 4:
                for c, court in enumerate(("clay", "grass", "hard")):
                    out[f"alpha[{name},{court}]"] = a[:, :, p, c]
            else:
                out[f"alpha[{name}]"] = a[:, :, p]
        return out


def _run_single(args):
    model, chain, dataset, seed = args
    return _sample_chain(model, chain, dataset, seed)


def _sample_chain(model: ModelConfig, chain: ChainConfig, dataset, seed):
    state = init_state(model, dataset, seed)
    rng = np.random.default_rng([seed, 1])
    sampler = GibbsSampler(model, dataset, state, rng, chain.target_accept)
    D = chain.n_draws
    p, h = sampler.state.players, sampler.state.hypers
    store = {
        "free_beta": np.empty((D,) + p.free_beta.shape),
        "eps": np.empty((D,) + p.eps.shape),
        "alpha": np.empty((D,) + p.alpha.shape),
        "beta_mean": np.empty((D,) + h.beta_mean.shape),
        "tau2": np.empty((D,) + h.tau2.shape),
        "eta": np.empty((D, len(sampler.cells))),
    }
    scalars = {k: np.empty(D) for k in SCALAR_NAMES}
    batch = 0
    d = 0
    for t in range(1, chain.n_iter + 1):
        sampler.sweep()
        if t <= chain.burn_in:
            if t % chain.adapt_window == 0:
                batch += 1
                sampler.adapt(batch)
            if t == chain.burn_in:
                sampler._reset_counts()
            continue
        if (t - chain.burn_in) % chain.thin == 0 and d < D:
            sampler.refresh()
            p, h = sampler.state.players, sampler.state.hypers
            store["free_beta"][d] = p.free_beta
            store["eps"][d] = p.eps
            store["alpha"][d] = p.alpha
            store["beta_mean"][d] = h.beta_mean
            store["tau2"][d] = h.tau2
            store["eta"][d] = sampler.eta
            for k in SCALAR_NAMES:
                scalars[k][d] = getattr(h, k)
            d += 1
    return store, scalars, sampler.acceptance_rates(), sampler.cells


def run_chain(chain: ChainConfig, dataset, model: ModelConfig) -> PosteriorDraws:
    """Run ``chain.n_chains`` chains (seeds ``seed + c``) and stack their draws."""
    seeds = [int(chain.seed) + c for c in range(chain.n_chains)]
    jobs = [(model, chain, dataset, s) for s in seeds]
    if chain.n_jobs > 1 and chain.n_chains > 1:
        with ProcessPoolExecutor(max_workers=min(chain.n_jobs, chain.n_chains)) as ex:
            results = list(ex.map(_run_single, jobs))
    else:
        results = [_run_single(j) for j in jobs]
    stack = {k: np.stack([r[0][k] for r in results]) for k in results[0][0]}
    scalars = {k: np.stack([r[1][k] for r in results]) for k in SCALAR_NAMES}
    acceptance = {}
    for k in results[0][2]:
        rates = np.stack([r[2][k] for r in results])
        acceptance[k] = float(np.mean(rates)) if rates.size else float("nan")
    return PosteriorDraws(
        model=model, chain=chain, players=tuple(dataset.players),
        servers=np.asarray(dataset.servers), free_beta=stack["free_beta"], eps=stack["eps"],
        alpha=stack["alpha"], beta_mean=stack["beta_mean"], tau2=stack["tau2"],
        scalars=scalars, eta=stack["eta"], cells=results[0][3], acceptance=acceptance,
        seeds=seeds, dataset_hash=dataset.content_hash(),
    )
