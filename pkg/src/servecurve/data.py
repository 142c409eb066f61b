"""Point-by-point ingestion: parsing, filtering, rally buckets, indexing, splits."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

MAX_RALLY = 30
N_BUCKETS = 15


class SchemaError(ValueError):
    """Input file does not have the configured layout."""


class DataError(ValueError):
    """Input is well-formed but unusable (empty, mostly unparseable, ...)."""


class Tournament(str, Enum):
    AUS_OPEN = "AusOpen"
    FRENCH_OPEN = "FrenchOpen"
    US_OPEN = "USOpen"
    WIMBLEDON = "Wimbledon"


class Tour(str, Enum):
    ATP = "ATP"
    WTA = "WTA"


class Court(IntEnum):
    CLAY = 1
    GRASS = 2
    HARD = 3


_TOURNAMENT_ALIASES = {
    "ausopen": Tournament.AUS_OPEN,
    "australianopen": Tournament.AUS_OPEN,
    "ao": Tournament.AUS_OPEN,
    "frenchopen": Tournament.FRENCH_OPEN,
    "rolandgarros": Tournament.FRENCH_OPEN,
    "rg": Tournament.FRENCH_OPEN,
    "usopen": Tournament.US_OPEN,
    "uso": Tournament.US_OPEN,
    "wimbledon": Tournament.WIMBLEDON,
    "wimb": Tournament.WIMBLEDON,
}


def parse_tournament(value) -> Tournament:
    if isinstance(value, Tournament):
        return value
    key = re.sub(r"[^a-z]", "", str(value).lower())
    # scrape file names carry a year prefix, e.g. "2017-wimbledon"
    for alias, tournament in _TOURNAMENT_ALIASES.items():
        if key == alias or (len(alias) > 3 and alias in key):
            return tournament
    raise ValueError(f"unknown tournament {value!r}")


def court_of(tournament) -> Court:
    t = parse_tournament(tournament)
    if t is Tournament.FRENCH_OPEN:
        return Court.CLAY
    if t is Tournament.WIMBLEDON:
        return Court.GRASS
    return Court.HARD


def aggregate_rally(raw_rally):
    """Pair odd/even rally lengths: 0,1 -> 1; 2,3 -> 2; ...; 28,29,30 -> 15."""
    r = np.asarray(raw_rally)
    if np.any(r < 0) or np.any(r > MAX_RALLY):
        raise ValueError(f"raw rally length outside [0, {MAX_RALLY}]")
    out = np.minimum(r // 2 + 1, N_BUCKETS)
    return int(out) if out.ndim == 0 else out.astype(np.int64)


@dataclass(frozen=True)
class RawPointRecord:
    server_id: str
    receiver_id: str
    rally_length: int
    server_won: bool
    tournament: Tournament
    tour: Tour | None
    match_id: str


@dataclass
class SchemaConfig:
    """Column names and value encodings of the input CSV.

    ``point_winner`` may hold either the winner's name (compared against the
    server and receiver columns) or a token from ``server_values`` /
    ``receiver_values``. Matching is case-insensitive.
    """

    server: str = "server"
    receiver: str = "receiver"
    rally_count: str = "rally_count"
    point_winner: str = "point_winner"
    tournament: str = "tournament"
    match_id: str = "match_id"
    tour: str | None = "tour"
    default_tour: str | None = None
    server_values: tuple[str, ...] = ("server", "s", "1", "true", "yes")
    receiver_values: tuple[str, ...] = ("receiver", "r", "0", "false", "no")

    @classmethod
    def from_dict(cls, d: dict | None) -> "SchemaConfig":
        d = dict(d or {})
        for key in ("server_values", "receiver_values"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


class RecordList(list):
    """List of records that remembers how many input rows were dropped."""

    n_rows: int = 0
    n_dropped: int = 0
    drop_reasons: Counter


def _winner(value: str, server: str, receiver: str, schema: SchemaConfig):
    v = value.strip()
    if not v:
        return None
    if v == server:
        return True
    if v == receiver:
        return False
    low = v.lower()
    if low in {s.lower() for s in schema.server_values}:
        return True
    if low in {s.lower() for s in schema.receiver_values}:
        return False
    return None


def parse_points_csv(path, schema: SchemaConfig | None = None) -> RecordList:
    """Read one point per row; drop rows with missing or unparseable fields.

    Raises
    ------
    FileNotFoundError
        Missing file.
    SchemaError
        Header lacks a configured column.
    DataError
        Empty file, or more than half of the rows were dropped.
    """
    schema = schema or SchemaConfig()
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames
        if not header:
            raise DataError(f"{path} is empty")
        required = [schema.server, schema.receiver, schema.rally_count,
                    schema.point_winner, schema.tournament, schema.match_id]
        missing = [c for c in required if c not in header]
        if missing:
            raise SchemaError(f"missing required column(s): {', '.join(missing)}")
        has_tour = schema.tour is not None and schema.tour in header
        default_tour = Tour(schema.default_tour.upper()) if schema.default_tour else None

        out = RecordList()
        reasons: Counter = Counter()
        n_rows = 0
        for row in reader:
            n_rows += 1
            server = (row[schema.server] or "").strip()
            receiver = (row[schema.receiver] or "").strip()
            if not server or not receiver or server == receiver:
                reasons["players"] += 1
                continue
            raw = (row[schema.rally_count] or "").strip()
            if not raw:
                reasons["missing_rally"] += 1
                continue
            try:
                rally = float(raw)
            except ValueError:
                reasons["bad_rally"] += 1
                continue
            if not rally.is_integer() or rally < 0:
                reasons["bad_rally"] += 1
                continue
            won = _winner(row[schema.point_winner] or "", server, receiver, schema)
            if won is None:
                reasons["winner"] += 1
                continue
            try:
                tournament = parse_tournament(row[schema.tournament])
            except ValueError:
                reasons["tournament"] += 1
                continue
            tour = default_tour
            if has_tour and (row[schema.tour] or "").strip():
                try:
                    tour = Tour(row[schema.tour].strip().upper())
                except ValueError:
                    reasons["tour"] += 1
                    continue
            out.append(RawPointRecord(server, receiver, int(rally), won, tournament,
                                      tour, str(row[schema.match_id]).strip()))
    if n_rows == 0:
        raise DataError(f"{path} has no data rows")
    out.n_rows = n_rows
    out.n_dropped = n_rows - len(out)
    out.drop_reasons = reasons
    if out.n_dropped:
        log.warning("dropped %d of %d rows: %s", out.n_dropped, n_rows, dict(reasons))
    if out.n_dropped > 0.5 * n_rows:
        raise DataError(f"{out.n_dropped} of {n_rows} rows could not be parsed")
    return out


def filter_rallies(records: Iterable[RawPointRecord], max_rally: int = MAX_RALLY):
    return [r for r in records if 0 <= r.rally_length <= max_rally]


def filter_tour(records: Iterable[RawPointRecord], tour):
    if tour is None:
        return list(records)
    tour = Tour(str(tour.value if isinstance(tour, Tour) else tour).upper())
    return [r for r in records if r.tour is tour]


def filter_players(records: Sequence[RawPointRecord], min_matches: int):
    """Keep serve points of servers with at least ``min_matches`` matches on serve."""
    if min_matches < 1:
        raise ValueError("min_matches must be >= 1")
    matches = defaultdict(set)
    for r in records:
        matches[r.server_id].add(r.match_id)
    keep = {s for s, m in matches.items() if len(m) >= min_matches}
    return [r for r in records if r.server_id in keep]


@dataclass(frozen=True, eq=False)
class Dataset:
    """Aggregated points with compact player indices.

    ``server`` and ``receiver`` index ``players`` (sorted names); ``servers``
    lists the player indices that serve at least once, which is also the row
    order of the per-server spline coefficients.
    """

    players: tuple[str, ...]
    server: np.ndarray
    receiver: np.ndarray
    x: np.ndarray
    y: np.ndarray
    court: np.ndarray
    meta: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        n = len(self.players)
        for name in ("server", "receiver", "x", "y", "court"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.int64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if len(self.server) and (self.server.max() >= n or self.receiver.max() >= n
                                 or min(self.server.min(), self.receiver.min()) < 0):
            raise ValueError("player index out of range")
        servers = np.unique(self.server)
        slot = np.full(n, -1, dtype=np.int64)
        slot[servers] = np.arange(servers.size)
        object.__setattr__(self, "servers", servers)
        object.__setattr__(self, "_slot", slot)

    def __len__(self) -> int:
        return int(self.server.size)

    @property
    def n_players(self) -> int:
        return len(self.players)

    @property
    def n_servers(self) -> int:
        return int(self.servers.size)

    @property
    def server_slot(self) -> np.ndarray:
        """Per point, the row of its server among ``servers``."""
        return self._slot[self.server]

    @property
    def server_names(self) -> dict[int, str]:
        return {i: self.players[p] for i, p in enumerate(self.servers)}

    @property
    def player_names(self) -> dict[int, str]:
        return dict(enumerate(self.players))

    def player_index(self, name: str) -> int:
        try:
            return self.players.index(name)
        except ValueError:
            raise KeyError(f"unknown player {name!r}") from None

    def counts(self) -> tuple[np.ndarray, np.ndarray]:
        """Win and total tallies per (server row, bucket index x-1)."""
        shape = (self.n_servers, N_BUCKETS)
        wins = np.zeros(shape, dtype=np.int64)
        total = np.zeros(shape, dtype=np.int64)
        np.add.at(total, (self.server_slot, self.x - 1), 1)
        np.add.at(wins, (self.server_slot, self.x - 1), self.y)
        return wins, total

    def subset(self, mask) -> "Dataset":
        """Select points and re-index players to those still present."""
        mask = np.asarray(mask, dtype=bool)
        s, r = self.server[mask], self.receiver[mask]
        present = np.unique(np.concatenate([s, r]))
        remap = np.full(self.n_players, -1, dtype=np.int64)
        remap[present] = np.arange(present.size)
        meta = {k: np.asarray(v)[mask] for k, v in self.meta.items()}
        return Dataset(tuple(self.players[p] for p in present), remap[s], remap[r],
                       self.x[mask], self.y[mask], self.court[mask], meta)

    def canonical_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["server_index", "receiver_index", "x", "y", "court"])
        w.writerows(zip(self.server.tolist(), self.receiver.tolist(), self.x.tolist(),
                        self.y.tolist(), self.court.tolist()))
        return buf.getvalue()

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(list(self.players)).encode())
        h.update(self.canonical_csv().encode())
        return h.hexdigest()


def dataset_from_records(records: Sequence[RawPointRecord]) -> Dataset:
    players = tuple(sorted({r.server_id for r in records} | {r.receiver_id for r in records}))
    index = {p: i for i, p in enumerate(players)}
    n = len(records)
    raw = np.fromiter((r.rally_length for r in records), dtype=np.int64, count=n)
    meta = {
        "raw_rally": raw,
        "match_id": np.array([r.match_id for r in records], dtype=object),
        "tournament": np.array([r.tournament.value for r in records], dtype=object),
        "tour": np.array([r.tour.value if r.tour else "" for r in records], dtype=object),
    }
    return Dataset(
        players,
        np.fromiter((index[r.server_id] for r in records), dtype=np.int64, count=n),
        np.fromiter((index[r.receiver_id] for r in records), dtype=np.int64, count=n),
        aggregate_rally(raw) if n else np.zeros(0, dtype=np.int64),
        np.fromiter((int(r.server_won) for r in records), dtype=np.int64, count=n),
        np.fromiter((int(court_of(r.tournament)) for r in records), dtype=np.int64, count=n),
        meta,
    )


def split_train_test(dataset: Dataset, n_test_servers: int, seed) -> tuple[Dataset, Dataset]:
    """Hold out every serve point of ``n_test_servers`` randomly chosen servers."""
    if n_test_servers < 0 or n_test_servers >= dataset.n_servers:
        raise ValueError(
            f"n_test_servers={n_test_servers} must be in [0, {dataset.n_servers})")
    rng = np.random.default_rng(seed)
    held = rng.choice(dataset.servers, size=n_test_servers, replace=False)
    test_mask = np.isin(dataset.server, held)
    return dataset.subset(~test_mask), dataset.subset(test_mask)


def split_summary(train: Dataset, test: Dataset) -> dict:
    def side(d: Dataset):
        return {"points": len(d), "servers": d.n_servers,
                "receivers": int(np.unique(d.receiver).size)}
    return {"train": side(train), "test": side(test)}


def summarize(dataset: Dataset, short_max: int = 4) -> dict:
    """Table-1/Table-2 style counts plus per-bucket server win frequencies."""
    if len(dataset) == 0:
        raise DataError("cannot summarise an empty dataset")
    out: dict = {"points": len(dataset), "players": dataset.n_players,
                 "servers": dataset.n_servers}
    meta = dataset.meta
    if "tour" in meta and "tournament" in meta:
        per = {}
        tours = sorted(set(meta["tour"].tolist()))
        for tour in tours:
            row = {}
            for t in Tournament:
                m = (meta["tour"] == tour) & (meta["tournament"] == t.value)
                if not m.any():
                    continue
                who = np.unique(np.concatenate([dataset.server[m], dataset.receiver[m]]))
                row[t.value] = {"matches": int(np.unique(meta["match_id"][m]).size),
                                "players": int(who.size)}
            per[tour or "unknown"] = row
        out["by_tour"] = per
    if "raw_rally" in meta:
        raw = meta["raw_rally"]
        short = int(np.sum(raw <= short_max))
        rallies = {"short": short, "long": int(raw.size - short), "total": int(raw.size),
                   "short_fraction": short / raw.size}
        if "tour" in meta:
            for tour in sorted(set(meta["tour"].tolist())):
                m = meta["tour"] == tour
                s = int(np.sum(raw[m] <= short_max))
                rallies[tour or "unknown"] = {"short": s, "long": int(m.sum() - s),
                                              "total": int(m.sum())}
        out["rallies"] = rallies
    wins = np.bincount(dataset.x - 1, weights=dataset.y, minlength=N_BUCKETS)
    total = np.bincount(dataset.x - 1, minlength=N_BUCKETS)
    with np.errstate(invalid="ignore", divide="ignore"):
        freq = np.where(total > 0, wins / np.maximum(total, 1), np.nan)
    out["buckets"] = [
        {"x": i + 1, "wins": int(wins[i]), "total": int(total[i]),
         "frequency": None if total[i] == 0 else float(freq[i])}
        for i in range(N_BUCKETS)
    ]
    return out


def write_dataset(dataset: Dataset, directory, stem: str) -> dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    points = directory / f"{stem}_points.csv"
    players = directory / f"{stem}_players.json"
    points.write_text(dataset.canonical_csv())
    players.write_text(json.dumps({"players": list(dataset.players)}, indent=1) + "\n")
    return {"points": points, "players": players}


def read_dataset(directory, stem: str) -> Dataset:
    directory = Path(directory)
    points = directory / f"{stem}_points.csv"
    players = directory / f"{stem}_players.json"
    names = tuple(json.loads(players.read_text())["players"])
    with open(points, newline="") as fh:
        rows = list(csv.reader(fh))
    if rows[0] != ["server_index", "receiver_index", "x", "y", "court"]:
        raise SchemaError(f"{points} is not a canonical points file")
    arr = np.array(rows[1:], dtype=np.int64).reshape(-1, 5)
    return Dataset(names, arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], arr[:, 4])
