import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from servecurve.data import split_train_test
from servecurve.model import ModelConfig, Variant, reconstruct_coeffs
from servecurve.report import (
    bucket_frequencies,
    curve_summary,
    curves_rows,
    predict_new_server,
    rally_ability_table,
    rank_rally_ability,
    scatter_data,
    serve_advantage,
    write_rows_csv,
)
from servecurve.sampler import ChainConfig, run_chain
from servecurve.simulate import simulate_dataset
from servecurve.splines import basis_matrix, default_spec, spline_eval

SPEC = default_spec()
GRID = np.linspace(1, 15, 29)


def expit(z):
    return 1 / (1 + np.exp(-z))


def fit(variant=Variant.PARTIAL, court=False, n_iter=40, seed=0, **sim):
    ds, truth = simulate_dataset(**{"n_players": 5, "n_points": 1500, "seed": seed,
                                    "court_effect": court, **sim})
    config = ModelConfig(SPEC, court, variant)
    return ds, truth, run_chain(ChainConfig(n_iter=n_iter, burn_in=n_iter // 2, thin=1,
                                            seed=seed), ds, config)


@pytest.fixture(scope="module")
def base():
    return fit()


@pytest.fixture(scope="module")
def court_fit():
    return fit(court=True)


class TestCurveSummary:
    def test_single_draw(self):
        ds, _, d = fit(n_iter=2)
        d = dataclasses.replace(d, **{k: getattr(d, k)[:, :1] for k in
                                      ("free_beta", "eps", "alpha", "eta")})
        s = curve_summary(d, "S02", GRID)
        assert np.allclose(s.lower, s.upper) and np.allclose(s.mean, s.lower)
        coeffs = d.coeffs()[0, 0, 2]
        a = d.alpha[0, 0]
        rally = a[2] - np.delete(a, 2).mean()
        assert np.allclose(s.mean, expit(spline_eval(SPEC, coeffs, GRID) + rally))

    def test_equal_alphas_cancel(self, base):
        _, _, d = base
        d = dataclasses.replace(d, alpha=np.zeros_like(d.alpha))
        s = curve_summary(d, "S01", GRID)
        f = d.flat(d.coeffs())[:, 1] @ basis_matrix(SPEC, GRID).T
        assert np.allclose(s.mean, expit(f).mean(axis=0))

    def test_band_ordering(self, base):
        _, _, d = base
        for p in d.server_names:
            s = curve_summary(d, p)
            assert np.all(s.lower <= s.mean + 1e-12) and np.all(s.mean <= s.upper + 1e-12)
            assert np.all((s.lower > 0) & (s.upper < 1))
            assert np.all(s.upper > s.lower)

    def test_unknown_player(self, base):
        with pytest.raises(KeyError):
            curve_summary(base[2], "nobody")

    def test_court_curves(self, court_fit):
        _, _, d = court_fit
        clay = curve_summary(d, "S00", GRID, court=1)
        hard = curve_summary(d, "S00", GRID, court=3)
        assert not np.allclose(clay.mean, hard.mean)
        with pytest.raises(ValueError):
            curve_summary(fit(n_iter=2)[2], "S00", court=1)

    def test_full_variant_peaks_at_first_bucket(self):
        _, _, d = fit(Variant.FULL)
        for p in d.server_names:
            s = curve_summary(d, p, GRID)
            assert s.mean[0] == s.mean.max()
            assert s.upper[0] == s.upper.max() and s.lower[0] == s.lower.max()

    def test_rows(self, base):
        s = curve_summary(base[2], "S00", GRID)
        rows = list(curves_rows([s]))
        assert len(rows) == GRID.size and rows[0]["player"] == "S00"


class TestServeAdvantage:
    def test_flat_curves(self):
        _, _, d = fit(Variant.UNCONSTRAINED, n_iter=4)
        flat = np.broadcast_to(d.free_beta[..., :1], d.free_beta.shape).copy()
        d = dataclasses.replace(d, free_beta=flat)
        med, (lo, hi) = serve_advantage(d, "S00")
        assert abs(med) < 1e-12 and abs(lo) < 1e-12 and abs(hi) < 1e-12

    def test_monotone_draws_positive(self):
        _, _, d = fit(Variant.FULL)
        for p in d.server_names:
            med, (lo, _) = serve_advantage(d, p)
            assert lo > 0 and med > 0

    def test_matches_curve_summary(self, base):
        _, _, d = base
        s = curve_summary(d, "S03")
        assert serve_advantage(d, "S03") == (s.advantage, s.advantage_interval)


class TestRanking:
    def test_tie_broken_by_name(self, base):
        _, _, d = base
        a = d.alpha.copy()
        a[..., 3] = a[..., 1]
        rows = rank_rally_ability(dataclasses.replace(d, alpha=a))
        names = [r.player for r in rows]
        assert names.index("S01") < names.index("S03")
        assert np.all(np.diff([r.median for r in rows]) <= 0)

    # dyadic values keep shifting and re-centring exact, so ties stay ties
    @given(st.integers(-24, 24).map(lambda i: i / 8),
           arrays(float, (6, 4), elements=st.integers(-16, 16).map(lambda i: i / 8)))
    def test_shift_invariance(self, c, base_alpha):
        from servecurve.sampler import PosteriorDraws
        shifted = base_alpha + c
        shifted -= shifted.mean(axis=1, keepdims=True)
        recentred = base_alpha - base_alpha.mean(axis=1, keepdims=True)

        def order(a):
            stub = PosteriorDraws.__new__(PosteriorDraws)
            stub.alpha = a[None]
            stub.players = ("a", "b", "c", "d")
            return [r.player for r in rank_rally_ability(stub)]

        assert order(shifted) == order(recentred)

    def test_court_errors(self, base, court_fit):
        with pytest.raises(ValueError):
            rank_rally_ability(base[2], "clay")
        assert len(rank_rally_ability(court_fit[2], "grass")) == 5

    def test_recovers_order(self):
        ds, truth, d = fit(n_players=8, n_points=12_000, n_iter=300, seed=2)
        rows = rank_rally_ability(d)
        from scipy.stats import kendalltau
        est = [r.median for r in sorted(rows, key=lambda r: r.player)]
        assert kendalltau(est, truth.alpha).statistic > 0.6

    def test_table_layout(self, base, court_fit, tmp_path):
        table = rally_ability_table(base[2], court_fit[2])
        assert len(table) == 5
        assert list(table[0])[:4] == ["player", "baseline_median", "baseline_lower",
                                      "baseline_upper"]
        assert {"clay_median", "grass_upper", "hard_lower"} <= set(table[0])
        only_court = rally_ability_table(None, court_fit[2])
        assert only_court[0]["baseline_median"] is None
        path = write_rows_csv(only_court, tmp_path / "t.csv")
        assert path.read_text().splitlines()[1].split(",")[1] == ""


def test_scatter_filter(base):
    _, _, d = base
    everyone = scatter_data(d)
    kept = scatter_data(d, exclude_zero_ci=True)
    assert len(everyone) == d.free_beta.shape[2]
    assert all(not (r["alpha_lower"] <= 0 <= r["alpha_upper"]) for r in kept)


class TestPrediction:
    def test_seen_player_uses_trained_alpha(self, base):
        ds, _, d = base
        preds = predict_new_server(d, ds, np.random.default_rng(0), GRID)
        assert set(preds) == set(d.server_names)
        assert all(s.source == "predictive" for s in preds.values())
        strong = np.full_like(d.alpha, -0.5)
        strong[..., 0] = 2.0
        boosted = predict_new_server(dataclasses.replace(d, alpha=strong), ds,
                                     np.random.default_rng(0), GRID)["S00"]
        # same rng stream, so only the rally term differs: +2.5 on the logit
        logit = np.log(preds["S00"].mean / (1 - preds["S00"].mean))
        assert np.all(boosted.mean > preds["S00"].mean)
        assert np.all(np.log(boosted.upper / (1 - boosted.upper)) > logit)

    def test_degenerate_hyper_state(self, base):
        ds, _, d = base
        h = {k: np.full_like(v, v[0, 0]) for k, v in d.scalars.items()}
        h["s_eps"] = np.full_like(h["s_eps"], 1e-12)
        d = dataclasses.replace(
            d, scalars=h, tau2=np.full_like(d.tau2, 1e12),
            beta_mean=np.broadcast_to(d.beta_mean[:1, :1], d.beta_mean.shape).copy(),
            alpha=np.zeros_like(d.alpha))
        s = predict_new_server(d, ds, 1, GRID)["S00"]
        coeffs = reconstruct_coeffs(d.beta_mean[0, 0], np.full(6, h["r_eps"][0, 0]))
        assert np.allclose(s.mean, expit(spline_eval(SPEC, coeffs, GRID)), atol=1e-5)
        assert np.all(s.upper - s.lower < 1e-4)

    def test_unseen_player(self, base):
        from servecurve.data import Dataset
        _, _, d = base
        one = np.zeros(3, dtype=np.int64)
        newcomer = Dataset(("Zed", "S00"), one, one + 1, one + 2, one, one + 1)
        s = predict_new_server(d, newcomer, 0, GRID)["Zed"]
        assert np.all((s.lower > 0) & (s.upper < 1))

    def test_empty_test_set(self, base, caplog):
        ds, _, d = base
        assert predict_new_server(d, ds.subset(np.zeros(len(ds), bool)), 0) == {}

    def test_missing_traces(self, base):
        ds, _, d = base
        scal = dict(d.scalars)
        del scal["alpha0"]
        with pytest.raises(ValueError):
            predict_new_server(dataclasses.replace(d, scalars=scal), ds, 0)

    def test_holdout_calibration(self):
        ds, _ = simulate_dataset(n_players=12, n_points=30_000, seed=6, coeff_sd=0.3)
        train, test = split_train_test(ds, 3, seed=6)
        config = ModelConfig(SPEC, False, Variant.PARTIAL)
        d = run_chain(ChainConfig(n_iter=500, burn_in=250, thin=2, seed=6), train, config)
        preds = predict_new_server(d, test, 6, np.arange(1, 16))
        hits = total = 0
        for name, s in preds.items():
            wins, n = bucket_frequencies(test, name)
            ok = n >= 30
            freq = wins[ok] / n[ok]
            hits += np.sum((s.lower[ok] <= freq) & (freq <= s.upper[ok]))
            total += ok.sum()
        assert total > 0 and hits / total >= 0.9
