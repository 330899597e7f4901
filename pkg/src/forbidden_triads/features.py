"""Session-level covariates and the regression table."""

from __future__ import annotations

import csv
import math
from collections import Counter, OrderedDict
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .graph import CoPlayIndex, session_weight_matrix
from .records import Dataset, SessionRecord
from .triads import SessionCensus

# exclusion reasons, in the order they are checked
CENSORED = "right-censoring window"
EXCLUDED_LEADER = "excluded leader"
NO_RELEASES = "no releases"
NO_CONNECTED = "no connected triads"
MISSING = "missing covariates"
REASONS = (CENSORED, EXCLUDED_LEADER, NO_RELEASES, NO_CONNECTED, MISSING)


@dataclass(frozen=True)
class FeatureRow:
    session_id: str
    leader_id: str
    releases: int
    log10_releases: float
    d_forbidden: float
    d_forbidden_sq: float
    d_closed: float
    d_closed_sq: float
    d_open: float
    median_tie_strength: float
    median_tie_strength_sq: float
    distinctiveness: float
    n_musicians: int
    newbies_proportion: float
    median_past_releases: float
    past_sessions_total: int
    year: int


FEATURE_COLUMNS = tuple(f.name for f in fields(FeatureRow))


def median_tie_strength(matrix) -> float:
    """Median off-diagonal pair weight, zeros included."""
    w = np.asarray(matrix)
    n = w.shape[0]
    if n < 2:
        raise ValueError("median tie strength needs at least two musicians")
    iu = np.triu_indices(n, 1)
    return float(np.median(w[iu]))


def instrument_ranking(d: Dataset, top_k: int = 200) -> list[str]:
    """Most frequent instruments by slot count; ties broken by name."""
    counts = Counter(i for s in d for b in s.personnel for i in b.instruments)
    ranked = sorted(counts, key=lambda i: (-counts[i], i))
    return ranked[:top_k]


class InstrumentSpace:
    """Per-session instrument count vectors over a fixed instrument list."""

    def __init__(self, d: Dataset, instruments: list[str]):
        self.instruments = instruments
        self._col = {name: k for k, name in enumerate(instruments)}
        self._years: dict[int, np.ndarray] = {}
        for y in d.years:
            self._years[y] = np.array(
                [self.vector(s) for s in d.sessions_in_year(y)], dtype=float
            ).reshape(-1, len(instruments))

    def vector(self, s: SessionRecord) -> np.ndarray:
        v = np.zeros(len(self.instruments))
        for b in s.personnel:
            for i in b.instruments:
                k = self._col.get(i)
                if k is not None:
                    v[k] += 1
        return v

    def horizon(self, year: int, horizon: int) -> np.ndarray:
        blocks = [self._years[y] for y in range(year - horizon, year) if y in self._years]
        if not blocks:
            return np.empty((0, len(self.instruments)))
        return np.vstack(blocks)


def distinctiveness(
    d: Dataset,
    s: SessionRecord,
    top_k: int = 200,
    horizon: int = 5,
    space: InstrumentSpace | None = None,
) -> float:
    """Mean cosine distance to sessions of the preceding ``horizon`` years.

    Returns NaN when there is no earlier session in the horizon or the
    session has no instrument in the ranked space. Earlier sessions with no
    ranked instrument are skipped.
    """
    space = space or InstrumentSpace(d, instrument_ranking(d, top_k))
    v = space.vector(s)
    nv = np.linalg.norm(v)
    if nv == 0:
        return float("nan")
    others = space.horizon(s.year, horizon)
    norms = np.linalg.norm(others, axis=1)
    keep = norms > 0
    if not keep.any():
        return float("nan")
    cos = others[keep] @ v / (norms[keep] * nv)
    return float(np.mean(1.0 - cos))


def newbies_proportion(ix: CoPlayIndex, s: SessionRecord) -> float:
    ms = s.musicians
    return sum(ix.prior_sessions(m, s.year) == 0 for m in ms) / len(ms)


def median_past_releases(ix: CoPlayIndex, s: SessionRecord) -> float:
    """Median release count over every musician's prior sessions, pooled."""
    pool = [r for m in s.musicians for r in ix.prior_releases(m, s.year)]
    return float(np.median(pool)) if pool else 0.0


def past_sessions_total(ix: CoPlayIndex, s: SessionRecord) -> int:
    return sum(ix.prior_sessions(m, s.year) for m in s.musicians)


@dataclass
class FeatureTable:
    rows: list[FeatureRow]
    exclusions: "OrderedDict[str, int]"

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    def to_frame(self):
        import pandas as pd

        return pd.DataFrame([asdict(r) for r in self.rows], columns=list(FEATURE_COLUMNS))


def assemble_features(
    d: Dataset,
    ix: CoPlayIndex,
    censuses: Mapping[str, SessionCensus],
    theta: int = 2,
    cutoff_year: int | None = 2000,
    exclusions: Iterable[str] | None = None,
    top_k: int = 200,
    horizon: int = 5,
    log_offset: int = 0,
) -> FeatureTable:
    """Build the regression table, counting every excluded session by reason.

    ``log_offset`` adds a constant to releases before the log (0 by default).
    """
    excluded_leaders = set(exclusions or ())
    space = InstrumentSpace(d, instrument_ranking(d, top_k))
    counts: OrderedDict[str, int] = OrderedDict((r, 0) for r in REASONS)
    rows = []
    for s in d:
        if cutoff_year is not None and s.year > cutoff_year:
            counts[CENSORED] += 1
            continue
        if s.leader_id in excluded_leaders:
            counts[EXCLUDED_LEADER] += 1
            continue
        if s.releases < 1:
            counts[NO_RELEASES] += 1
            continue
        c = censuses[s.session_id]
        if c.theta != theta:
            raise ValueError(f"census for {s.session_id!r} uses theta {c.theta}, expected {theta}")
        if c.n_connected < 1:
            counts[NO_CONNECTED] += 1
            continue
        dist = distinctiveness(d, s, top_k, horizon, space)
        if math.isnan(dist):
            counts[MISSING] += 1
            continue
        mts = median_tie_strength(session_weight_matrix(ix, s))
        rows.append(
            FeatureRow(
                session_id=s.session_id,
                leader_id=s.leader_id,
                releases=s.releases,
                log10_releases=math.log10(s.releases + log_offset),
                d_forbidden=c.d_forbidden,
                d_forbidden_sq=c.d_forbidden**2,
                d_closed=c.d_closed,
                d_closed_sq=c.d_closed**2,
                d_open=c.d_open,
                median_tie_strength=mts,
                median_tie_strength_sq=mts**2,
                distinctiveness=dist,
                n_musicians=len(s.personnel),
                newbies_proportion=newbies_proportion(ix, s),
                median_past_releases=median_past_releases(ix, s),
                past_sessions_total=past_sessions_total(ix, s),
                year=s.year,
            )
        )
    return FeatureTable(rows, counts)


def write_features(table: FeatureTable, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FEATURE_COLUMNS)
        for r in table.rows:
            w.writerow([_fmt(getattr(r, c)) for c in FEATURE_COLUMNS])


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def read_features(path: str | Path):
    """Load a features CSV as a pandas DataFrame."""
    import pandas as pd

    df = pd.read_csv(path, dtype={"session_id": str, "leader_id": str}, float_precision="round_trip")
    missing = set(FEATURE_COLUMNS) - set(df.columns)
    if missing:
        raise ValueError(f"{path}: missing feature columns {sorted(missing)}")
    return df
