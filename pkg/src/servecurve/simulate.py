"""Synthetic point-by-point data drawn from the model with known parameters."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .model import ModelConfig, Variant, gamma_mean_var, reconstruct_coeffs
from .splines import basis_matrix, is_nonincreasing_on, default_spec

# Serve advantage high on the first shot, a dip at bucket 2, then decay.
PARTIAL_TRUTH = np.array([1.6, 0.3, 1.1, 0.9, 0.6, 0.35, 0.2, 0.1, 0.05])


@dataclass
class SyntheticTruth:
    coeffs: np.ndarray        # (n_servers, M)
    alpha: np.ndarray         # (n_players,) or (n_players, 3)
    bucket_probs: np.ndarray  # (15,)


def bucket_distribution(decay: float = 0.72) -> np.ndarray:
    """Geometric-looking rally bucket frequencies, as in professional tennis."""
    p = decay ** np.arange(15)
    return p / p.sum()


def simulate_dataset(n_players: int = 20, n_points: int = 50_000, seed=0,
                     coeffs=PARTIAL_TRUTH, coeff_sd: float = 0.0,
                     alpha_spread: float = 0.5, court_effect: bool = False,
                     eps_law: tuple[float, float] | None = None,
                     config: ModelConfig | None = None) -> tuple[Dataset, SyntheticTruth]:
    """Draw points with every player serving and receiving.

    Each server's coefficients are ``coeffs`` plus optional N(0, coeff_sd^2)
    noise on the free part; with a constrained ``config`` the noisy vectors
    are re-sorted on the constrained range so the truth stays admissible.
    ``eps_law = (mean, var)`` instead draws every server's decrements from
    that gamma law, as the constrained model assumes.
    Rally abilities are uniform on ``[-alpha_spread, alpha_spread]`` and then
    mean-centred, which satisfies sum-to-zero without pushing one player out
    of the stated spread.
    """
    rng = np.random.default_rng(seed)
    config = config or ModelConfig(default_spec(), court_effect, Variant.PARTIAL)
    spec = config.spec
    base = np.asarray(coeffs, dtype=float)
    if base.shape != (spec.M,):
        raise ValueError(f"need {spec.M} coefficients")
    C = np.tile(base, (n_players, 1))
    if coeff_sd > 0:
        C[:, :config.n_free] += rng.normal(0.0, coeff_sd, size=(n_players, config.n_free))
        if config.n_eps:
            head = C[:, config.n_free - 1:config.n_free]
            C[:, config.n_free:] = np.minimum(C[:, config.n_free:], head)
            C[:, config.n_free - 1:] = -np.sort(-C[:, config.n_free - 1:], axis=1)
    if eps_law is not None and config.n_eps:
        shape, rate = gamma_mean_var(*eps_law)
        eps = rng.gamma(shape, 1.0 / rate, size=(n_players, config.n_eps))
        C = reconstruct_coeffs(C[:, :config.n_free], eps)
    if config.n_eps and not all(is_nonincreasing_on(spec, c) for c in C):
        raise ValueError("true coefficients violate the monotone constraint")

    shape = (n_players, 3) if court_effect else (n_players,)
    alpha = rng.uniform(-alpha_spread, alpha_spread, size=shape)
    alpha -= alpha.mean()

    server = rng.integers(0, n_players, size=n_points)
    receiver = (server + rng.integers(1, n_players, size=n_points)) % n_players
    probs = bucket_distribution()
    x = rng.choice(np.arange(1, 16), size=n_points, p=probs)
    court = rng.choice([1, 2, 3, 3], size=n_points)

    B = basis_matrix(spec, np.arange(1, 16))
    f = np.einsum("nm,nm->n", C[server], B[x - 1])
    if court_effect:
        eta = f + alpha[server, court - 1] - alpha[receiver, court - 1]
    else:
        eta = f + alpha[server] - alpha[receiver]
    y = (rng.random(n_points) < 1.0 / (1.0 + np.exp(-eta))).astype(np.int64)

    players = tuple(f"S{i:02d}" for i in range(n_players))
    ds = Dataset(players, server, receiver, x, y, court)
    return ds, SyntheticTruth(C, alpha, probs)
