"""``servecurve`` command line: ingest, fit, compare, predict, report.

All commands read one JSON run configuration and write under ``--out``
(default: the configuration's ``out``). Every command records its inputs,
outputs and configuration in ``<out>/manifest.json``.

Exit codes: 0 success, 1 convergence check failed under ``--strict``,
2 configuration or schema error, 3 no data left after filtering, 4 sampler
could not start, 5 reports come from different datasets, 6 missing draws.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import (
    MAX_RALLY,
    DataError,
    SchemaConfig,
    SchemaError,
    dataset_from_records,
    filter_players,
    filter_rallies,
    filter_tour,
    parse_points_csv,
    read_dataset,
    split_summary,
    split_train_test,
    summarize,
    write_dataset,
)
from .metrics import FitReport, fit_report
from .model import ModelConfig, Variant
from .report import (
    COURTS,
    curve_summary,
    curves_rows,
    predict_new_server,
    rally_ability_table,
    rank_rally_ability,
    scatter_data,
    write_rows_csv,
)
from .sampler import ChainConfig, SamplerInitError, run_chain
from .splines import make_spec
from .storage import DrawsNotFoundError, load_draws, save_draws, write_traces_csv

log = logging.getLogger("servecurve")

EXIT_STRICT, EXIT_CONFIG, EXIT_EMPTY, EXIT_INIT, EXIT_MISMATCH, EXIT_NO_DRAWS = 1, 2, 3, 4, 5, 6
RHAT_LIMIT = 1.1


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# configuration


@dataclass
class DataOptions:
    tour: str | None = None
    min_matches: int = 3
    max_rally: int = MAX_RALLY
    n_test_servers: int = 0
    seed: int = 0


@dataclass
class ModelOptions:
    variant: str = "partial"
    court_effect: bool = False
    L: float = 1.0
    U: float = 15.0
    k: int = 4
    interior_knots: list = field(default_factory=lambda: [2.0, 3.0, 4.0, 7.0, 11.0])
    L0: float = 3.0

    def build(self) -> ModelConfig:
        spec = make_spec(self.L, self.U, self.k, self.interior_knots, self.L0)
        return ModelConfig(spec, bool(self.court_effect), Variant(self.variant))


@dataclass
class RunConfig:
    input: str | None = None
    out: str = "servecurve-out"
    schema: SchemaConfig = field(default_factory=SchemaConfig)
    data: DataOptions = field(default_factory=DataOptions)
    model: ModelOptions = field(default_factory=ModelOptions)
    chain: ChainConfig = field(default_factory=ChainConfig)

    @classmethod
    def from_dict(cls, d: dict, base: Path | None = None) -> "RunConfig":
        known = {"input", "out", "schema", "data", "model", "chain"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown configuration keys: {sorted(unknown)}")
        cfg = cls(
            input=d.get("input"),
            out=d.get("out", "servecurve-out"),
            schema=SchemaConfig.from_dict(d.get("schema")),
            data=DataOptions(**d.get("data", {})),
            model=ModelOptions(**d.get("model", {})),
            chain=ChainConfig(**d.get("chain", {})),
        )
        if base is not None:
            if cfg.input is not None and not Path(cfg.input).is_absolute():
                cfg.input = str(base / cfg.input)
            if not Path(cfg.out).is_absolute():
                cfg.out = str(base / cfg.out)
        cfg.model.build()
        return cfg

    def to_dict(self) -> dict:
        return {"input": self.input, "out": self.out, "schema": self.schema.to_dict(),
                "data": asdict(self.data), "model": asdict(self.model),
                "chain": self.chain.to_dict()}


def load_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise CliError(f"configuration file {path} not found", EXIT_CONFIG) from None
    except json.JSONDecodeError as e:
        raise CliError(f"configuration file {path} is not valid JSON: {e}", EXIT_CONFIG) from None
    try:
        return RunConfig.from_dict(raw, path.parent)
    except (TypeError, ValueError) as e:
        raise CliError(f"invalid configuration: {e}", EXIT_CONFIG) from None


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "out", None):
        cfg.out = args.out
    if getattr(args, "input", None):
        cfg.input = args.input
    if getattr(args, "tour", None):
        cfg.data.tour = args.tour
    if getattr(args, "variant", None):
        cfg.model.variant = args.variant
    if getattr(args, "court_effect", False):
        cfg.model.court_effect = True
    if getattr(args, "seed", None) is not None:
        cfg.chain.seed = args.seed
        cfg.data.seed = args.seed
    return cfg


# ---------------------------------------------------------------------------
# artifacts


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def _record(out: Path, command: str, cfg: RunConfig, files, extra=None) -> None:
    """Merge one command's provenance entry into ``<out>/manifest.json``."""
    manifest_path = out / "manifest.json"
    manifest = json.loads(manifest_path.read_text()) if manifest_path.exists() else {}
    manifest[command] = {
        "config": cfg.to_dict(),
        "files": {str(Path(f).relative_to(out)): _sha256(Path(f)) for f in sorted(map(str, files))},
        **(extra or {}),
    }
    _write_json(manifest_path, manifest)


def fit_dir(out: Path, model: ModelOptions) -> Path:
    return out / (f"fit-{model.variant}" + ("-court" if model.court_effect else ""))


# ---------------------------------------------------------------------------
# commands


def cmd_ingest(cfg: RunConfig) -> int:
    if cfg.input is None:
        raise CliError("no input CSV given (config 'input' or --input)", EXIT_CONFIG)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        records = parse_points_csv(cfg.input, cfg.schema)
    except SchemaError as e:
        raise CliError(f"schema error: {e}", EXIT_CONFIG) from None
    except FileNotFoundError:
        raise CliError(f"input {cfg.input} not found", EXIT_CONFIG) from None
    except DataError as e:
        raise CliError(str(e), EXIT_EMPTY) from None
    n_read = len(records)
    kept = filter_rallies(records, cfg.data.max_rally)
    kept = filter_tour(kept, cfg.data.tour)
    kept = filter_players(kept, cfg.data.min_matches)
    if not kept:
        raise CliError("no points left after filtering", EXIT_EMPTY)
    ds = dataset_from_records(kept)
    files = []
    if cfg.data.n_test_servers:
        try:
            train, test = split_train_test(ds, cfg.data.n_test_servers, cfg.data.seed)
        except ValueError as e:
            raise CliError(str(e), EXIT_CONFIG) from None
    else:
        train, test = ds, ds.subset(np.zeros(len(ds), dtype=bool))
    for stem, part in (("train", train), ("test", test)):
        files += write_dataset(part, out, stem).values()
    summary = {
        "config": cfg.to_dict(),
        "rows_read": n_read,
        "rows_dropped": records.n_dropped,
        "drop_reasons": dict(records.drop_reasons),
        "points_after_filters": len(ds),
        "summary": summarize(ds),
        "split": split_summary(train, test),
        "dataset_hash": {"train": train.content_hash(), "test": test.content_hash()},
    }
    files.append(_write_json(out / "summary.json", summary))
    _record(out, "ingest", cfg, files, {"dataset_hash": summary["dataset_hash"]})
    log.info("ingested %d points (%d servers) into %s", len(ds), ds.n_servers, out)
    return 0


def _load_split(out: Path, stem: str):
    try:
        return read_dataset(out, stem)
    except FileNotFoundError:
        raise CliError(f"no {stem} dataset in {out}; run 'ingest' first", EXIT_CONFIG) from None


def cmd_fit(cfg: RunConfig, strict: bool = False) -> int:
    out = Path(cfg.out)
    train = _load_split(out, "train")
    if len(train) == 0:
        raise CliError("training set is empty", EXIT_EMPTY)
    model = cfg.model.build()
    try:
        draws = run_chain(cfg.chain, train, model)
    except SamplerInitError as e:
        raise CliError(str(e), EXIT_INIT) from None
    target = fit_dir(out, cfg.model)
    files = list(save_draws(draws, target).values())
    report = fit_report(draws, train)
    report.config = cfg.to_dict()
    files.append(target / "fit_report.json")
    (target / "fit_report.json").write_text(report.to_json() + "\n")
    files.append(write_traces_csv(draws, target / "traces.csv"))
    _record(out, f"fit:{target.name}", cfg, files, {"dataset_hash": draws.dataset_hash})
    log.info("%s: LPML %.2f WAIC %.2f DIC %.2f RMSE %.3f max R-hat %.3f", target.name,
             report.lpml, report.waic, report.dic, report.rmse, report.max_rhat)
    if strict and report.max_rhat > RHAT_LIMIT:
        bad = sorted(k for k, v in report.rhat.items() if v > RHAT_LIMIT)
        log.error("R-hat above %.2f for %d parameters, e.g. %s", RHAT_LIMIT, len(bad), bad[:5])
        return EXIT_STRICT
    return 0


COMPARE_COLUMNS = ("lpml", "waic", "dic", "rmse")


def compare_reports(reports: list[FitReport], labels: list[str]) -> list[dict]:
    """Criterion table with best-row marks (max LPML, min WAIC/DIC/RMSE)."""
    if len(reports) < 2:
        raise CliError("compare needs at least two fit reports", EXIT_CONFIG)
    hashes = {r.dataset_hash for r in reports}
    if len(hashes) > 1:
        raise CliError("fit reports come from different datasets", EXIT_MISMATCH)
    rows = [{"model": lab, **{c: getattr(r, c) for c in COMPARE_COLUMNS}}
            for lab, r in zip(labels, reports)]
    for c in COMPARE_COLUMNS:
        vals = np.array([row[c] for row in rows])
        best = vals.max() if c == "lpml" else vals.min()
        winners = vals == best
        for row, w in zip(rows, winners):
            row[f"best_{c}"] = bool(w)
            row[f"tie_{c}"] = bool(w and winners.sum() > 1)
    return rows


def selected_by_lpml(rows: list[dict]) -> str:
    return next(r["model"] for r in rows if r["best_lpml"])


def cmd_compare(cfg: RunConfig, report_paths: list[str]) -> int:
    out = Path(cfg.out)
    paths = [Path(p) for p in report_paths] or sorted(out.glob("fit-*/fit_report.json"))
    reports, labels = [], []
    for p in paths:
        try:
            reports.append(FitReport.from_json(p.read_text()))
        except FileNotFoundError:
            raise CliError(f"fit report {p} not found", EXIT_NO_DRAWS) from None
        labels.append(p.parent.name.removeprefix("fit-"))
    rows = compare_reports(reports, labels)
    target = out / "compare"
    target.mkdir(parents=True, exist_ok=True)
    fields = ["model", *COMPARE_COLUMNS] + [f"{p}_{c}" for c in COMPARE_COLUMNS
                                             for p in ("best", "tie")]
    table = write_rows_csv(rows, target / "comparison.csv", fields)
    _record(out, "compare", cfg, [table],
            {"reports": [str(p) for p in paths], "selected_by_lpml": selected_by_lpml(rows)})
    for r in rows:
        log.info("%-22s LPML %12.2f WAIC %12.2f DIC %12.2f RMSE %8.3f", r["model"],
                 r["lpml"], r["waic"], r["dic"], r["rmse"])
    return 0


def _load_fit(out: Path, model: ModelOptions):
    try:
        return load_draws(fit_dir(out, model))
    except DrawsNotFoundError as e:
        raise CliError(f"{e}; run 'fit' first", EXIT_NO_DRAWS) from None


def cmd_predict(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    draws = _load_fit(out, cfg.model)
    test = _load_split(out, "test")
    rng = np.random.default_rng([cfg.chain.seed, 2])
    preds = predict_new_server(draws, test, rng)
    if not preds:
        log.warning("test set is empty; writing empty prediction files")
    target = fit_dir(out, cfg.model)
    curves = write_rows_csv(curves_rows(preds.values()), target / "predicted_curves.csv",
                            ["player", "s", "mean", "lower", "upper"])
    summary = _write_json(target / "predictions.json", {
        "config": cfg.to_dict(),
        "servers": {k: v.to_dict() for k, v in preds.items()},
        "seen_in_training": sorted(k for k in preds if k in draws.players),
    })
    _record(out, f"predict:{target.name}", cfg, [curves, summary])
    return 0


def cmd_report(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    draws = _load_fit(out, cfg.model)
    target = fit_dir(out, cfg.model)
    summaries = [curve_summary(draws, p) for p in draws.server_names]
    files = [
        write_rows_csv(curves_rows(summaries), target / "curves.csv",
                       ["player", "s", "mean", "lower", "upper"]),
        write_rows_csv(scatter_data(draws), target / "scatter.csv",
                       ["player", "alpha_median", "alpha_lower", "alpha_upper",
                        "advantage_median", "advantage_lower", "advantage_upper"]),
        write_rows_csv(rank_rally_ability(draws), target / "ranking.csv",
                       ["player", "median", "lower", "upper"]),
    ]
    if cfg.model.court_effect:
        for court in COURTS:
            files.append(write_rows_csv(rank_rally_ability(draws, court),
                                        target / f"ranking_{court}.csv",
                                        ["player", "median", "lower", "upper"]))
    # pair the baseline and court fits of this variant when both exist
    other_opts = ModelOptions(**{**asdict(cfg.model), "court_effect": not cfg.model.court_effect})
    other = None
    if (fit_dir(out, other_opts) / "draws.npz").exists():
        other = load_draws(fit_dir(out, other_opts))
    baseline, court = (other, draws) if cfg.model.court_effect else (draws, other)
    table = rally_ability_table(baseline, court)
    cols = ["player"] + [f"{n}_{s}" for n in ("baseline",) + COURTS
                         for s in ("median", "lower", "upper")]
    files.append(write_rows_csv(table, target / "rally_ability_table.csv", cols))
    files.append(_write_json(target / "report.json", {
        "config": cfg.to_dict(),
        "advantage": {s.player: {"median": s.advantage, "interval": list(s.advantage_interval)}
                      for s in summaries},
    }))
    _record(out, f"report:{target.name}", cfg, files)
    return 0


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="servecurve", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--out", help="output directory (overrides the configuration)")
        p.add_argument("--seed", type=int)
        return p

    ing = common(sub.add_parser("ingest", help="parse, filter and aggregate a points CSV"))
    ing.add_argument("--input", help="points CSV (overrides the configuration)")
    ing.add_argument("--tour", type=str.upper, choices=["ATP", "WTA"])

    for name, helptext in (("fit", "run the sampler on the training set"),
                           ("predict", "predictive curves for the test servers"),
                           ("report", "curves, scatter data and rankings")):
        p = common(sub.add_parser(name, help=helptext))
        p.add_argument("--variant", choices=[v.value for v in Variant])
        p.add_argument("--court-effect", action="store_true",
                       help="per-surface rally abilities")
        if name == "fit":
            p.add_argument("--strict", action="store_true",
                           help=f"exit 1 when any split R-hat exceeds {RHAT_LIMIT}")

    cmp_ = common(sub.add_parser("compare", help="tabulate criteria over fit reports"))
    cmp_.add_argument("reports", nargs="*", help="fit_report.json files (default: all fits)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        try:
            cfg.model.build()
        except ValueError as e:
            raise CliError(f"invalid model options: {e}", EXIT_CONFIG) from None
        if args.command == "ingest":
            return cmd_ingest(cfg)
        if args.command == "fit":
            return cmd_fit(cfg, args.strict)
        if args.command == "compare":
            return cmd_compare(cfg, args.reports)
        if args.command == "predict":
            return cmd_predict(cfg)
        return cmd_report(cfg)
    except CliError as e:
        print(f"servecurve {args.command}: {e}", file=sys.stderr)
        return e.code


if __name__ == "__main__":
    sys.exit(main())
