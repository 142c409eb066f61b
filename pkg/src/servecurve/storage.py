"""Reading and writing posterior draws.

Draws go to ``draws.npz`` (one array per member, stored uncompressed with a
fixed timestamp so identical draws give identical bytes), alongside
``draws.json`` with names, shapes, seeds and the configuration echo.
"""

from __future__ import annotations

import csv
import io
import json
import zipfile
from pathlib import Path

import numpy as np

from .model import ModelConfig
from .sampler import SCALAR_NAMES, CellTable, ChainConfig, PosteriorDraws

ARRAY_FILE = "draws.npz"
MANIFEST_FILE = "draws.json"
TRACE_FILE = "traces.csv"
_FIXED_TIME = (1980, 1, 1, 0, 0, 0)


class DrawsNotFoundError(FileNotFoundError):
    pass


def _arrays(draws: PosteriorDraws) -> dict[str, np.ndarray]:
    out = {
        "servers": draws.servers,
        "free_beta": draws.free_beta,
        "eps": draws.eps,
        "alpha": draws.alpha,
        "beta_mean": draws.beta_mean,
        "tau2": draws.tau2,
        "eta": draws.eta,
    }
    out.update({f"scalar_{k}": v for k, v in draws.scalars.items()})
    out.update(draws.cells.to_arrays())
    return out


def write_npz(path, arrays: dict[str, np.ndarray]) -> None:
    """Deterministic ``.npz``: sorted members, fixed timestamps, no compression."""
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]),
                                      allow_pickle=False)
            info = zipfile.ZipInfo(f"{name}.npy", date_time=_FIXED_TIME)
            info.external_attr = 0o644 << 16
            zf.writestr(info, buf.getvalue())


def save_draws(draws: PosteriorDraws, directory) -> dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    arrays = _arrays(draws)
    write_npz(directory / ARRAY_FILE, arrays)
    manifest = {
        "format": 1,
        "players": list(draws.players),
        "arrays": {k: list(v.shape) for k, v in sorted(arrays.items())},
        "model": draws.model.to_dict(),
        "chain": draws.chain.to_dict(),
        "seeds": list(draws.seeds),
        "acceptance": draws.acceptance,
        "dataset_hash": draws.dataset_hash,
        "n_servers": draws.cells.n_servers,
    }
    (directory / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return {"arrays": directory / ARRAY_FILE, "manifest": directory / MANIFEST_FILE}


def load_draws(directory) -> PosteriorDraws:
    directory = Path(directory)
    if not (directory / ARRAY_FILE).exists() or not (directory / MANIFEST_FILE).exists():
        raise DrawsNotFoundError(f"no posterior draws in {directory}")
    manifest = json.loads((directory / MANIFEST_FILE).read_text())
    with np.load(directory / ARRAY_FILE, allow_pickle=False) as z:
        arrays = {k: z[k] for k in z.files}
    players = tuple(manifest["players"])
    return PosteriorDraws(
        model=ModelConfig.from_dict(manifest["model"]),
        chain=ChainConfig(**manifest["chain"]),
        players=players,
        servers=arrays["servers"],
        free_beta=arrays["free_beta"],
        eps=arrays["eps"],
        alpha=arrays["alpha"],
        beta_mean=arrays["beta_mean"],
        tau2=arrays["tau2"],
        scalars={k: arrays[f"scalar_{k}"] for k in SCALAR_NAMES},
        eta=arrays["eta"],
        cells=CellTable.from_arrays(arrays, manifest["n_servers"], len(players)),
        acceptance=manifest["acceptance"],
        seeds=manifest["seeds"],
        dataset_hash=manifest["dataset_hash"],
    )


def write_traces_csv(draws: PosteriorDraws, path, include_players: bool = False) -> Path:
    """Scalar traces in long-to-wide form: one row per (chain, draw)."""
    traces = draws.scalar_traces()
    if not include_players:
        traces = {k: v for k, v in traces.items()
                  if not k.startswith(("beta[", "log_eps[", "alpha["))}
    names = list(traces)
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["chain", "draw"] + names)
        for c in range(draws.n_chains):
            for d in range(draws.n_draws):
                w.writerow([c, d] + [repr(float(traces[k][c, d])) for k in names])
    return path
