"""Session records: parsing, CSV loading, filtering.

A session is one recording event. Personnel entries are *bundles*: one
musician together with the set of instruments they played in the session.
"""

from __future__ import annotations

import csv
import hashlib
import re
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Iterable, Iterator, Mapping

MIN_YEAR = 1890
MAX_YEAR = 2030

SESSIONS_HEADER = ("session_id", "leader_id", "year", "releases")
PERSONNEL_HEADER = ("session_id", "musician_id", "instrument_id")


class RecordError(ValueError):
    """Malformed or inconsistent input data."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class Bundle:
    musician_id: str
    instruments: frozenset[str]


@dataclass(frozen=True)
class SessionRecord:
    session_id: str
    leader_id: str
    year: int
    personnel: tuple[Bundle, ...]
    releases: int

    def __post_init__(self):
        if not self.personnel:
            raise RecordError(f"session {self.session_id!r} has no personnel")
        seen = set()
        for b in self.personnel:
            if not b.musician_id:
                raise RecordError(f"session {self.session_id!r}: empty musician id")
            if not b.instruments:
                raise RecordError(
                    f"session {self.session_id!r}: musician {b.musician_id!r} has no instruments"
                )
            if b.musician_id in seen:
                raise RecordError(
                    f"session {self.session_id!r}: musician {b.musician_id!r} listed twice"
                )
            seen.add(b.musician_id)
        if self.releases < 0:
            raise RecordError(f"session {self.session_id!r}: negative releases")

    @property
    def musicians(self) -> tuple[str, ...]:
        return tuple(b.musician_id for b in self.personnel)

    def with_personnel(self, personnel: Iterable[Bundle]) -> "SessionRecord":
        return SessionRecord(
            self.session_id, self.leader_id, self.year, tuple(personnel), self.releases
        )


def make_session(
    session_id: str,
    leader_id: str,
    year: int,
    personnel: Mapping[str, Iterable[str]] | Iterable[tuple[str, Iterable[str]]],
    releases: int,
) -> SessionRecord:
    """Convenience constructor taking ``{musician: instruments}``."""
    items = personnel.items() if isinstance(personnel, Mapping) else personnel
    bundles = tuple(Bundle(m, frozenset(instr)) for m, instr in items)
    return SessionRecord(session_id, leader_id, int(year), bundles, int(releases))


@dataclass(frozen=True)
class Dataset:
    """Immutable, validated collection of sessions.

    Iteration order is always (year, session_id).
    """

    sessions: tuple[SessionRecord, ...]
    year_bounds: tuple[int, int] = (MIN_YEAR, MAX_YEAR)
    _by_id: dict = field(default=None, init=False, repr=False, compare=False)
    _by_year: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        ordered = tuple(sorted(self.sessions, key=lambda s: (s.year, s.session_id)))
        object.__setattr__(self, "sessions", ordered)
        by_id = {}
        by_year = defaultdict(list)
        lo, hi = self.year_bounds
        for s in ordered:
            if s.session_id in by_id:
                raise RecordError(f"duplicate session_id {s.session_id!r}")
            if not lo <= s.year <= hi:
                raise RecordError(
                    f"session {s.session_id!r}: year {s.year} outside [{lo}, {hi}]"
                )
            by_id[s.session_id] = s
            by_year[s.year].append(s)
        object.__setattr__(self, "_by_id", by_id)
        object.__setattr__(self, "_by_year", {y: tuple(v) for y, v in by_year.items()})

    def __len__(self) -> int:
        return len(self.sessions)

    def __iter__(self) -> Iterator[SessionRecord]:
        return iter(self.sessions)

    def __getitem__(self, session_id: str) -> SessionRecord:
        return self._by_id[session_id]

    def __contains__(self, session_id: str) -> bool:
        return session_id in self._by_id

    @property
    def years(self) -> list[int]:
        return sorted(self._by_year)

    def sessions_in_year(self, year: int) -> tuple[SessionRecord, ...]:
        return self._by_year.get(year, ())

    @property
    def musicians(self) -> set[str]:
        return {m for s in self.sessions for m in s.musicians}

    @property
    def n_slots(self) -> int:
        return sum(len(s.personnel) for s in self.sessions)

    def replace_personnel(self, personnel: Mapping[str, Iterable[Bundle]]) -> "Dataset":
        """New dataset with personnel swapped for the given session ids."""
        sessions = [
            s.with_personnel(personnel[s.session_id]) if s.session_id in personnel else s
            for s in self.sessions
        ]
        return Dataset(tuple(sessions), self.year_bounds)

    def digest(self) -> str:
        h = hashlib.sha256()
        for s in self.sessions:
            h.update(serialize_session_record(s).encode())
            h.update(b"\0")
        return h.hexdigest()


# --- text record grammar -----------------------------------------------------

_HEADER_RE = re.compile(r"^\[SESSION\s+(\S+)\]$")
_FIELD_RE = re.compile(r"^(LEADER|DATE|RELEASES)\s*:\s*(.*)$")


def _parse_year(value: str, line: int) -> int:
    value = value.strip()
    if re.fullmatch(r"\d{4}", value):
        return int(value)
    for fmt in ("%B %d, %Y", "%b %d, %Y", "%B %Y"):
        try:
            return datetime.strptime(value, fmt).year
        except ValueError:
            pass
    raise RecordError(f"cannot read a year from DATE {value!r}", line)


def parse_session_record(text_block: str, first_line: int = 1) -> SessionRecord:
    """Parse one ``[SESSION id]`` block.

    >>> s = parse_session_record('''[SESSION s1]
    ... LEADER: davis_m
    ... DATE: March 2, 1959
    ... RELEASES: 45
    ... davis_m : trumpet, flugelhorn''')
    >>> s.year, s.personnel[0].instruments == {"trumpet", "flugelhorn"}
    (1959, True)
    """
    lines = [
        (first_line + i, ln.strip())
        for i, ln in enumerate(text_block.splitlines())
        if ln.strip()
    ]
    if not lines:
        raise RecordError("empty record", first_line)
    lineno, head = lines[0]
    m = _HEADER_RE.match(head)
    if m is None:
        raise RecordError(f"malformed header {head!r}", lineno)
    session_id = m.group(1)

    fields: dict[str, tuple[int, str]] = {}
    personnel: list[Bundle] = []
    seen: dict[str, int] = {}
    for lineno, ln in lines[1:]:
        fm = _FIELD_RE.match(ln)
        if fm and not personnel:
            key = fm.group(1)
            if key in fields:
                raise RecordError(f"duplicate {key} line", lineno)
            fields[key] = (lineno, fm.group(2))
            continue
        if ":" not in ln:
            raise RecordError(f"expected 'musician : instruments', got {ln!r}", lineno)
        musician, _, instr = ln.partition(":")
        musician = musician.strip()
        instruments = frozenset(i.strip() for i in instr.split(",") if i.strip())
        if not musician or not instruments:
            raise RecordError(f"incomplete musician line {ln!r}", lineno)
        if musician in seen:
            raise RecordError(
                f"duplicate musician {musician!r} (first on line {seen[musician]})", lineno
            )
        seen[musician] = lineno
        personnel.append(Bundle(musician, instruments))

    for key in ("LEADER", "DATE", "RELEASES"):
        if key not in fields:
            raise RecordError(f"missing {key} line in session {session_id!r}", lines[0][0])
    year = _parse_year(fields["DATE"][1], fields["DATE"][0])
    rel_line, rel = fields["RELEASES"]
    try:
        releases = int(rel.strip())
    except ValueError:
        raise RecordError(f"RELEASES must be an integer, got {rel.strip()!r}", rel_line) from None
    if not personnel:
        raise RecordError(f"session {session_id!r} lists no musicians", lines[-1][0])
    try:
        return SessionRecord(session_id, fields["LEADER"][1].strip(), year, tuple(personnel), releases)
    except RecordError as exc:
        raise RecordError(str(exc), lines[0][0]) from None


def serialize_session_record(s: SessionRecord) -> str:
    out = [
        f"[SESSION {s.session_id}]",
        f"LEADER: {s.leader_id}",
        f"DATE: {s.year}",
        f"RELEASES: {s.releases}",
    ]
    for b in s.personnel:
        out.append(f"{b.musician_id} : {', '.join(sorted(b.instruments))}")
    return "\n".join(out)


def parse_records(text: str) -> list[SessionRecord]:
    """Parse a blank-line separated sequence of record blocks."""
    records = []
    block: list[str] = []
    start = 1
    for i, ln in enumerate(text.splitlines() + [""], start=1):
        if ln.strip():
            if not block:
                start = i
            block.append(ln)
        elif block:
            records.append(parse_session_record("\n".join(block), first_line=start))
            block = []
    return records


def write_records(sessions: Iterable[SessionRecord], path: str | Path) -> None:
    Path(path).write_text("\n\n".join(serialize_session_record(s) for s in sessions) + "\n")


# --- CSV tables ----------------------------------------------------------------


def _read_csv(path: str | Path, header: tuple[str, ...]) -> Iterator[tuple[int, dict]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != header:
            raise RecordError(f"{path}: expected header {','.join(header)}", 1)
        for row in reader:
            yield reader.line_num, row


def load_dataset(
    sessions_table: str | Path,
    personnel_table: str | Path,
    records: str | Path | None = None,
    year_bounds: tuple[int, int] = (MIN_YEAR, MAX_YEAR),
) -> Dataset:
    """Load ``sessions.csv`` + ``personnel.csv`` (and optionally a record file)."""
    heads: dict[str, tuple[str, int, int]] = {}
    for line, row in _read_csv(sessions_table, SESSIONS_HEADER):
        sid = row["session_id"]
        if sid in heads:
            raise RecordError(f"{sessions_table}: duplicate session_id {sid!r}", line)
        try:
            heads[sid] = (row["leader_id"], int(row["year"]), int(row["releases"]))
        except ValueError:
            raise RecordError(f"{sessions_table}: non-integer year or releases", line) from None

    instruments: dict[str, dict[str, set[str]]] = {sid: {} for sid in heads}
    for line, row in _read_csv(personnel_table, PERSONNEL_HEADER):
        sid = row["session_id"]
        if sid not in heads:
            raise RecordError(
                f"{personnel_table}: personnel row cites unknown session_id {sid!r}", line
            )
        if not row["musician_id"] or not row["instrument_id"]:
            raise RecordError(f"{personnel_table}: empty musician or instrument", line)
        instruments[sid].setdefault(row["musician_id"], set()).add(row["instrument_id"])

    sessions = []
    for sid, (leader, year, releases) in heads.items():
        if not instruments[sid]:
            raise RecordError(f"session {sid!r} has no personnel rows")
        sessions.append(make_session(sid, leader, year, instruments[sid], releases))
    if records is not None:
        for s in parse_records(Path(records).read_text(encoding="utf-8")):
            if s.session_id in heads:
                raise RecordError(f"{records}: duplicate session_id {s.session_id!r}")
            sessions.append(s)
    return Dataset(tuple(sessions), year_bounds)


def write_dataset(d: Dataset, directory: str | Path) -> tuple[Path, Path]:
    """Write ``sessions.csv`` and ``personnel.csv`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    spath, ppath = directory / "sessions.csv", directory / "personnel.csv"
    with open(spath, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SESSIONS_HEADER)
        for s in d:
            w.writerow((s.session_id, s.leader_id, s.year, s.releases))
    write_personnel(d, ppath)
    return spath, ppath


def write_personnel(d: Dataset, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PERSONNEL_HEADER)
        for s in d:
            for b in s.personnel:
                for instr in sorted(b.instruments):
                    w.writerow((s.session_id, b.musician_id, instr))


def read_dataset_dir(directory: str | Path) -> Dataset:
    directory = Path(directory)
    return load_dataset(directory / "sessions.csv", directory / "personnel.csv")


def read_leader_list(path: str | Path) -> set[str]:
    """One leader id per line; blank lines and ``#`` comments ignored."""
    out = set()
    for ln in Path(path).read_text(encoding="utf-8").splitlines():
        ln = ln.split("#", 1)[0].strip()
        if ln:
            out.add(ln)
    return out


def filter_dataset(
    d: Dataset, max_year: int | None = None, excluded_leaders: Iterable[str] | None = None
) -> Dataset:
    excluded = set(excluded_leaders or ())
    kept = tuple(
        s
        for s in d
        if (max_year is None or s.year <= max_year) and s.leader_id not in excluded
    )
    return Dataset(kept, d.year_bounds)
