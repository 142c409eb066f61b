import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from servecurve.cli import RunConfig, compare_reports, main, selected_by_lpml
from servecurve.metrics import FitReport

DATA = Path(__file__).parent / "data"
GOLDEN = DATA / "golden"
FAST_CHAIN = {"n_iter": 40, "burn_in": 20, "thin": 2, "seed": 3}


def write_config(tmp_path, **overrides):
    cfg = {"input": str(DATA / "tiny_points.csv"), "out": "run",
           "data": {"min_matches": 1}, "chain": FAST_CHAIN}
    cfg.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


def synthetic_csv(path, n_players=6, n_points=1500, seed=0):
    from servecurve.simulate import simulate_dataset
    ds, _ = simulate_dataset(n_players=n_players, n_points=n_points, seed=seed)
    slams = {1: "frenchopen", 2: "wimbledon", 3: "usopen"}
    rng = np.random.default_rng(seed)
    with open(path, "w") as fh:
        fh.write("match_id,tour,tournament,server,receiver,rally_count,point_winner\n")
        for s, r, x, y, c in zip(ds.server, ds.receiver, ds.x, ds.y, ds.court):
            raw = 2 * (x - 1) + int(rng.integers(2)) if x < 15 else 28
            match = f"2019-{slams[c]}-{min(s, r)}{max(s, r)}-{int(rng.integers(3))}"
            fh.write(f"{match},ATP,2019-{slams[c]},{ds.players[s]},{ds.players[r]},{raw},"
                     f"{'server' if y else 'receiver'}\n")
    return path


class TestIngest:
    def test_golden(self, tmp_path):
        cfg = write_config(tmp_path)
        assert main(["ingest", "--config", str(cfg)]) == 0
        out = tmp_path / "run"
        for name in ("train_points.csv", "train_players.json"):
            assert (out / name).read_text() == (GOLDEN / name).read_text()
        summary = json.loads((out / "summary.json").read_text())
        assert summary.pop("config")["data"]["min_matches"] == 1
        assert summary == json.loads((GOLDEN / "summary.json").read_text())
        manifest = json.loads((out / "manifest.json").read_text())
        assert set(manifest["ingest"]["files"]) >= {"train_points.csv", "summary.json"}

    def test_idempotent(self, tmp_path):
        cfg = write_config(tmp_path)
        main(["ingest", "--config", str(cfg)])
        first = {p.name: p.read_bytes() for p in (tmp_path / "run").iterdir()}
        main(["ingest", "--config", str(cfg)])
        assert first == {p.name: p.read_bytes() for p in (tmp_path / "run").iterdir()}

    def test_missing_column(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("match_id,tournament,server,receiver,point_winner\nm,Wimbledon,a,b,a\n")
        assert main(["ingest", "--config", str(write_config(tmp_path)),
                     "--input", str(bad)]) == 2
        assert "rally_count" in capsys.readouterr().err

    def test_empty_after_filters(self, tmp_path):
        cfg = write_config(tmp_path, data={"min_matches": 5})
        assert main(["ingest", "--config", str(cfg)]) == 3

    def test_tour_filter_empty(self, tmp_path):
        assert main(["ingest", "--config", str(write_config(tmp_path)), "--tour", "wta"]) == 3

    def test_bad_config(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text('{"model": {"L0": 99}}')
        assert main(["ingest", "--config", str(path)]) == 2
        path.write_text('{"modle": {}}')
        assert main(["ingest", "--config", str(path)]) == 2
        assert main(["ingest", "--config", str(tmp_path / "none.json")]) == 2


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("pipe")
    csv_path = synthetic_csv(tmp / "points.csv")
    cfg = write_config(tmp, input=str(csv_path), data={"min_matches": 1, "n_test_servers": 2})
    assert main(["ingest", "--config", str(cfg)]) == 0
    for variant in ("unconstrained", "partial", "full"):
        assert main(["fit", "--config", str(cfg), "--variant", variant]) == 0
    return tmp, cfg


class TestFitCompare:
    def test_fit_outputs(self, pipeline):
        tmp, _ = pipeline
        fit = tmp / "run" / "fit-partial"
        for name in ("draws.npz", "draws.json", "fit_report.json", "traces.csv"):
            assert (fit / name).exists()
        report = json.loads((fit / "fit_report.json").read_text())
        assert report["config"]["chain"]["n_iter"] == 40
        assert report["n_draws"] == 10

    def test_fit_byte_identical(self, pipeline, tmp_path):
        tmp, cfg = pipeline
        first = (tmp / "run" / "fit-partial" / "draws.npz").read_bytes()
        assert main(["fit", "--config", str(cfg)]) == 0
        assert (tmp / "run" / "fit-partial" / "draws.npz").read_bytes() == first

    def test_seed_changes_draws(self, pipeline, tmp_path):
        tmp, cfg = pipeline
        first = (tmp / "run" / "fit-partial" / "draws.npz").read_bytes()
        out = tmp_path / "other"
        import shutil
        shutil.copytree(tmp / "run", out)
        assert main(["fit", "--config", str(cfg), "--out", str(out), "--seed", "99"]) == 0
        assert (out / "fit-partial" / "draws.npz").read_bytes() != first

    def test_strict(self, pipeline):
        # 10 draws from a 40-iteration run cannot pass a 1.1 R-hat threshold
        _, cfg = pipeline
        assert main(["fit", "--config", str(cfg), "--strict", "--variant", "full"]) == 1

    def test_compare(self, pipeline):
        tmp, cfg = pipeline
        assert main(["compare", "--config", str(cfg)]) == 0
        lines = (tmp / "run" / "compare" / "comparison.csv").read_text().splitlines()
        assert lines[0].startswith("model,lpml,waic,dic,rmse,best_lpml")
        assert sorted(line.split(",")[0] for line in lines[1:]) == \
            ["full", "partial", "unconstrained"]
        assert sum(line.split(",")[5] == "True" for line in lines[1:]) == 1

    def test_compare_mismatch(self, pipeline, tmp_path):
        tmp, cfg = pipeline
        rep = json.loads((tmp / "run" / "fit-partial" / "fit_report.json").read_text())
        rep["dataset_hash"] = "0" * 64
        other = tmp_path / "fit-x" / "fit_report.json"
        other.parent.mkdir()
        other.write_text(json.dumps(rep))
        assert main(["compare", "--config", str(cfg),
                     str(tmp / "run" / "fit-partial" / "fit_report.json"), str(other)]) == 5

    def test_duplicate_reports_tie(self, pipeline):
        tmp, _ = pipeline
        rep = FitReport.from_json((tmp / "run" / "fit-partial" / "fit_report.json").read_text())
        rows = compare_reports([rep, rep], ["a", "b"])
        assert rows[0] | {"model": "b"} == rows[1]
        assert rows[0]["tie_lpml"] and rows[0]["tie_rmse"]
        assert selected_by_lpml(rows) == "a"

    def test_compare_needs_two(self, pipeline):
        tmp, cfg = pipeline
        assert main(["compare", "--config", str(cfg),
                     str(tmp / "run" / "fit-partial" / "fit_report.json")]) == 2


class TestPredictReport:
    def test_predict(self, pipeline):
        tmp, cfg = pipeline
        assert main(["predict", "--config", str(cfg)]) == 0
        pred = json.loads((tmp / "run" / "fit-partial" / "predictions.json").read_text())
        assert len(pred["servers"]) == 2
        assert pred["seen_in_training"] == sorted(pred["servers"])
        rows = (tmp / "run" / "fit-partial" / "predicted_curves.csv").read_text().splitlines()
        assert rows[0] == "player,s,mean,lower,upper" and len(rows) == 1 + 2 * 57

    def test_report(self, pipeline):
        tmp, cfg = pipeline
        assert main(["report", "--config", str(cfg)]) == 0
        fit = tmp / "run" / "fit-partial"
        for name in ("curves.csv", "scatter.csv", "ranking.csv", "rally_ability_table.csv",
                     "report.json"):
            assert (fit / name).exists()
        ranking = (fit / "ranking.csv").read_text().splitlines()
        medians = [float(r.split(",")[1]) for r in ranking[1:]]
        assert medians == sorted(medians, reverse=True)
        manifest = json.loads((tmp / "run" / "manifest.json").read_text())
        assert {"ingest", "fit:fit-partial", "report:fit-partial"} <= set(manifest)

    def test_missing_draws(self, pipeline):
        _, cfg = pipeline
        assert main(["predict", "--config", str(cfg), "--court-effect"]) == 6
        assert main(["report", "--config", str(cfg), "--court-effect"]) == 6

    def test_empty_test_set(self, tmp_path, caplog):
        cfg = write_config(tmp_path)
        main(["ingest", "--config", str(cfg)])
        main(["fit", "--config", str(cfg)])
        assert main(["predict", "--config", str(cfg)]) == 0
        rows = (tmp_path / "run" / "fit-partial" / "predicted_curves.csv").read_text()
        assert rows.splitlines() == ["player,s,mean,lower,upper"]
        assert "empty" in caplog.text


def test_fit_without_ingest(tmp_path):
    assert main(["fit", "--config", str(write_config(tmp_path))]) == 2


def test_init_failure(tmp_path, monkeypatch):
    from servecurve.sampler import SamplerInitError
    cfg = write_config(tmp_path)
    main(["ingest", "--config", str(cfg)])

    def boom(*a, **k):
        raise SamplerInitError("no finite start")

    monkeypatch.setattr("servecurve.cli.run_chain", boom)
    assert main(["fit", "--config", str(cfg)]) == 4


def test_config_roundtrip(tmp_path):
    cfg = RunConfig.from_dict(json.loads(write_config(tmp_path).read_text()))
    again = RunConfig.from_dict(cfg.to_dict())
    assert again.to_dict() == cfg.to_dict()
    assert cfg.model.build().n_free == 3


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "servecurve", "--help"], capture_output=True,
                         text=True)
    assert res.returncode == 0 and "ingest" in res.stdout
