"""Posterior summaries: win-probability curves, serve advantage, rankings and
curves for servers outside the training set.

Everything here returns plain tables (dataclasses, dicts, CSV rows) meant to
be handed to an external plotting tool.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .model import gamma_mean_var, reconstruct_coeffs
from .splines import basis_matrix

log = logging.getLogger(__name__)

COURTS = ("clay", "grass", "hard")
DEFAULT_GRID = np.linspace(1.0, 15.0, 57)
TINY = np.finfo(float).tiny


def _expit(z):
    return 1.0 / (1.0 + np.exp(-z))


def _interval(samples, axis=0):
    lo, hi = np.percentile(samples, [2.5, 97.5], axis=axis)
    return lo, hi


@dataclass
class CurveSummary:
    player: str
    grid: np.ndarray
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    advantage: float            # posterior median of f(L) - f(U)
    advantage_interval: tuple[float, float]
    source: str = "posterior"   # or "predictive"

    def rows(self):
        for s, m, lo, hi in zip(self.grid, self.mean, self.lower, self.upper):
            yield {"player": self.player, "s": float(s), "mean": float(m),
                   "lower": float(lo), "upper": float(hi)}

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("grid", "mean", "lower", "upper"):
            d[k] = np.asarray(d[k]).tolist()
        d["advantage_interval"] = list(self.advantage_interval)
        return d


def _summarize_curves(player, grid, probs, gaps, source) -> CurveSummary:
    lo, hi = _interval(probs)
    glo, ghi = _interval(gaps)
    return CurveSummary(player, np.asarray(grid, dtype=float), probs.mean(axis=0), lo, hi,
                        float(np.median(gaps)), (float(glo), float(ghi)), source)


def _server_row(draws, player: str) -> int:
    names = draws.server_names
    if player not in names:
        raise KeyError(f"{player!r} has no serve points in the fitted data")
    return names.index(player)


def _rally_term(alpha: np.ndarray, index: int | None, court: int | None) -> np.ndarray:
    """Per draw, ``alpha_i - mean_{j != i} alpha_j`` (0 for a brand-new player).

    ``alpha`` is (draws, players) or (draws, players, 3); without a court the
    per-court terms are averaged.
    """
    if index is None:
        return np.zeros(alpha.shape[0])
    if alpha.ndim == 3:
        alpha = alpha.mean(axis=2) if court is None else alpha[:, :, court - 1]
    n = alpha.shape[1]
    others = (alpha.sum(axis=1) - alpha[:, index]) / max(n - 1, 1)
    return alpha[:, index] - others


def curve_summary(draws, player: str, grid=None, court: int | None = None,
                  dataset=None) -> CurveSummary:
    """Win probability on serve against a per-draw averaged opponent."""
    if dataset is not None and draws.dataset_hash and dataset.content_hash() != draws.dataset_hash:
        raise ValueError("draws were fitted on a different dataset")
    if court is not None and draws.alpha.ndim != 4:
        raise ValueError("court-specific curves need a court-effect fit")
    grid = DEFAULT_GRID if grid is None else np.asarray(grid, dtype=float)
    row = _server_row(draws, player)
    coeffs = draws.flat(draws.coeffs())[:, row]
    B = basis_matrix(draws.model.spec, grid)
    f = coeffs @ B.T
    rally = _rally_term(draws.flat(draws.alpha), draws.players.index(player), court)
    gaps = _gap(draws, coeffs)
    return _summarize_curves(player, grid, _expit(f + rally[:, None]), gaps, "posterior")


def _gap(draws, coeffs) -> np.ndarray:
    spec = draws.model.spec
    B = basis_matrix(spec, [spec.L, spec.U])
    ends = coeffs @ B.T
    return ends[:, 0] - ends[:, 1]


def serve_advantage(draws, player: str) -> tuple[float, tuple[float, float]]:
    """Median and central 95% interval of ``f(L) - f(U)`` (domain ends)."""
    row = _server_row(draws, player)
    gaps = _gap(draws, draws.flat(draws.coeffs())[:, row])
    lo, hi = _interval(gaps)
    return float(np.median(gaps)), (float(lo), float(hi))


@dataclass
class RankRow:
    player: str
    median: float
    lower: float
    upper: float


def rank_rally_ability(draws, court: int | str | None = None) -> list[RankRow]:
    """Players by descending posterior median rally ability; ties by name."""
    alpha = draws.flat(draws.alpha)
    if court is not None:
        if alpha.ndim != 3:
            raise ValueError("court ranking requested on a model without court effect")
        c = COURTS.index(court) if isinstance(court, str) else int(court) - 1
        alpha = alpha[:, :, c]
    elif alpha.ndim == 3:
        alpha = alpha.mean(axis=2)
    med = np.median(alpha, axis=0)
    lo, hi = _interval(alpha)
    rows = [RankRow(p, float(m), float(a), float(b))
            for p, m, a, b in zip(draws.players, med, lo, hi)]
    return sorted(rows, key=lambda r: (-r.median, r.player))


def rally_ability_table(baseline=None, court=None) -> list[dict]:
    """One row per player with baseline and per-court medians and intervals.

    Either fit may be missing; its columns are then left empty.
    """
    players = sorted(set(baseline.players if baseline else ())
                     | set(court.players if court else ()))
    cols = {}
    if baseline is not None:
        cols["baseline"] = {r.player: r for r in rank_rally_ability(baseline)}
    if court is not None:
        for name in COURTS:
            cols[name] = {r.player: r for r in rank_rally_ability(court, name)}
    out = []
    for p in players:
        row = {"player": p}
        for name in ("baseline",) + COURTS:
            r = cols.get(name, {}).get(p)
            row[f"{name}_median"] = r.median if r else None
            row[f"{name}_lower"] = r.lower if r else None
            row[f"{name}_upper"] = r.upper if r else None
        out.append(row)
    key = "baseline_median" if baseline is not None else "hard_median"
    return sorted(out, key=lambda r: (-(r[key] if r[key] is not None else -np.inf),
                                      r["player"]))


def scatter_data(draws, exclude_zero_ci: bool = False) -> list[dict]:
    """Per server: median rally ability against median serve advantage.

    With ``exclude_zero_ci`` only servers whose rally-ability interval
    excludes zero are kept.
    """
    ranks = {r.player: r for r in rank_rally_ability(draws)}
    coeffs = draws.flat(draws.coeffs())
    out = []
    for row, name in enumerate(draws.server_names):
        r = ranks[name]
        if exclude_zero_ci and r.lower <= 0 <= r.upper:
            continue
        gaps = _gap(draws, coeffs[:, row])
        lo, hi = _interval(gaps)
        out.append({"player": name, "alpha_median": r.median, "alpha_lower": r.lower,
                    "alpha_upper": r.upper, "advantage_median": float(np.median(gaps)),
                    "advantage_lower": float(lo), "advantage_upper": float(hi)})
    return out


def predictive_coefficients(draws, rng) -> np.ndarray:
    """One fresh server's coefficients per posterior draw, from the population layer."""
    bm = draws.flat(draws.beta_mean)
    tau2 = draws.flat(draws.tau2)
    S = bm.shape[0]
    free = bm + rng.normal(size=bm.shape) / np.sqrt(tau2)
    n_eps = draws.model.n_eps
    if n_eps:
        r = draws.scalars["r_eps"].reshape(-1)
        s = draws.scalars["s_eps"].reshape(-1)
        shape, rate = gamma_mean_var(r, s)
        eps = rng.gamma(shape[:, None], 1.0 / rate[:, None], size=(S, n_eps))
        eps = np.maximum(eps, TINY)
    else:
        eps = np.zeros((S, 0))
    return reconstruct_coeffs(free, eps)


def predict_new_server(draws, test_dataset, rng, grid=None) -> dict[str, CurveSummary]:
    """Predictive curves for each server of ``test_dataset``.

    Coefficients come from the population layer of every posterior draw. A
    server seen during training keeps its trained rally-ability draws; a new
    one gets rally abilities from the population law, which averages to an
    even match against the training field.
    """
    for k in ("r_eps", "s_eps", "alpha0", "sigma2_alpha"):
        if k not in draws.scalars:
            raise ValueError(f"posterior draws lack the {k} trace")
    grid = DEFAULT_GRID if grid is None else np.asarray(grid, dtype=float)
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    B = basis_matrix(draws.model.spec, grid)
    alpha = draws.flat(draws.alpha)
    out = {}
    names = sorted(test_dataset.players[p] for p in test_dataset.servers)
    if not names:
        log.warning("test set has no servers; nothing to predict")
    for name in names:
        coeffs = predictive_coefficients(draws, rng)
        if name in draws.players:
            rally = _rally_term(alpha, draws.players.index(name), None)
        else:
            a0 = draws.scalars["alpha0"].reshape(-1)
            sd = np.sqrt(draws.scalars["sigma2_alpha"].reshape(-1))
            n_c = alpha.shape[2] if alpha.ndim == 3 else 1
            new = a0[:, None] + sd[:, None] * rng.normal(size=(a0.size, n_c))
            # the training field averages to zero under the sum-to-zero constraint
            rally = new.mean(axis=1)
        probs = _expit(coeffs @ B.T + rally[:, None])
        out[name] = _summarize_curves(name, grid, probs, _gap(draws, coeffs), "predictive")
    return out


def bucket_frequencies(dataset, player: str) -> tuple[np.ndarray, np.ndarray]:
    """Observed serve wins and totals per bucket for one server."""
    i = dataset.player_index(player)
    mask = dataset.server == i
    total = np.bincount(dataset.x[mask] - 1, minlength=15)
    wins = np.bincount(dataset.x[mask] - 1, weights=dataset.y[mask], minlength=15)
    return wins, total


def write_rows_csv(rows, path, fieldnames=None) -> Path:
    rows = [asdict(r) if hasattr(r, "__dataclass_fields__") else dict(r) for r in rows]
    path = Path(path)
    if fieldnames is None:
        fieldnames = list(rows[0]) if rows else []
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r[k] is None else repr(r[k]) if isinstance(r[k], float)
                            else r[k]) for k in fieldnames})
    return path


def curves_rows(summaries) -> list[dict]:
    return [row for s in summaries for row in s.rows()]
