"""Constrained null worlds.

A rewired world reassigns musicians to personnel slots while keeping

* C1 every session's bundles (musician count and instrument combination),
* C2 each musician's session count within every window block,
* C3 qualification: a musician only fills a bundle whose instruments they
  played in the session's year or the year before,
* C4 no musician twice in one session.

Slots are filled by randomized greedy placement (smallest candidate lists
first, candidates drawn in proportion to their remaining activity budget),
then any slot left empty is repaired with an augmenting chain of moves.
"""

from __future__ import annotations

import csv
import json
from collections import defaultdict, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple

import numpy as np

from .graph import CoPlayIndex, build_index, session_weight_matrix
from .records import PERSONNEL_HEADER, Bundle, Dataset
from .triads import SessionCensus, session_census

SPAN = "span"  # played the instruments anywhere in {t-1, t}
BOTH = "both"  # played every instrument in t-1 and in t

Slot = tuple[str, int]  # (session_id, bundle index)


def window_block(year: int, first_year: int, window_years: int) -> int:
    if window_years < 1:
        raise ValueError("window_years must be >= 1")
    return (year - first_year) // window_years


def is_qualified(ix: CoPlayIndex, m: str, instruments: Iterable[str], year: int, mode: str = SPAN) -> bool:
    instruments = set(instruments)
    if mode == SPAN:
        return instruments <= ix.instruments_played(m, year - 1, year)
    if mode == BOTH:
        return instruments <= ix.instruments_played(m, year - 1, year - 1) and instruments <= (
            ix.instruments_played(m, year, year)
        )
    raise ValueError(f"unknown qualification mode {mode!r}")


@dataclass
class Pool:
    block: int
    signature: frozenset[str]
    slots: list[Slot] = field(default_factory=list)
    candidates: list[str] = field(default_factory=list)


def _block_budgets(d: Dataset, window_years: int) -> dict[int, dict[str, int]]:
    first = d.years[0]
    budgets: dict[int, dict[str, int]] = defaultdict(lambda: defaultdict(int))
    for s in d:
        blk = window_block(s.year, first, window_years)
        for m in s.musicians:
            budgets[blk][m] += 1
    return budgets


def build_pools(
    d: Dataset, window_years: int = 1, ix: CoPlayIndex | None = None, qualification: str = SPAN
) -> dict[tuple[int, frozenset[str]], Pool]:
    """Group slots by (window block, instrument set) with their candidates.

    Candidates are musicians active in the block who qualify for the
    instrument set in at least one of the pool's slot years.
    """
    if not len(d):
        return {}
    ix = ix or build_index(d)
    first = d.years[0]
    budgets = _block_budgets(d, window_years)
    pools: dict[tuple[int, frozenset[str]], Pool] = {}
    years: dict[tuple[int, frozenset[str]], set[int]] = defaultdict(set)
    for s in d:
        blk = window_block(s.year, first, window_years)
        for i, b in enumerate(s.personnel):
            key = (blk, b.instruments)
            pool = pools.get(key)
            if pool is None:
                pool = pools[key] = Pool(blk, b.instruments)
            pool.slots.append((s.session_id, i))
            years[key].add(s.year)
    for key, pool in pools.items():
        active = sorted(budgets[pool.block])
        pool.candidates = [
            m
            for m in active
            if any(is_qualified(ix, m, pool.signature, y, qualification) for y in sorted(years[key]))
        ]
    return pools


@dataclass
class RewiredWorld:
    assignment: dict[Slot, str]
    seed: int
    window_years: int
    infeasible_slots: int = 0
    qualification: str = SPAN
    infeasible: tuple[Slot, ...] = ()

    def personnel(self, d: Dataset) -> dict[str, list[Bundle]]:
        out = {}
        for s in d:
            out[s.session_id] = [
                Bundle(self.assignment[(s.session_id, i)], b.instruments)
                for i, b in enumerate(s.personnel)
            ]
        return out

    def to_dataset(self, d: Dataset) -> Dataset:
        return d.replace_personnel(self.personnel(d))

    def manifest(self) -> dict:
        return {
            "seed": int(self.seed),
            "window_years": int(self.window_years),
            "infeasible_slots": int(self.infeasible_slots),
            "qualification": self.qualification,
            "n_slots": len(self.assignment),
        }

    def save(self, d: Dataset, directory: str | Path, name: str) -> tuple[Path, Path]:
        """Write ``<name>.csv`` (personnel.csv shape) and ``<name>.json``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        ppath = directory / f"{name}.csv"
        with open(ppath, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(PERSONNEL_HEADER)
            for s in d:
                for i, b in enumerate(s.personnel):
                    for instr in sorted(b.instruments):
                        w.writerow((s.session_id, self.assignment[(s.session_id, i)], instr))
        mpath = directory / f"{name}.json"
        mpath.write_text(json.dumps(self.manifest(), indent=2, sort_keys=True) + "\n")
        return ppath, mpath


def load_world(d: Dataset, personnel_csv: str | Path, manifest_json: str | Path) -> RewiredWorld:
    meta = json.loads(Path(manifest_json).read_text())
    by_session: dict[str, dict[frozenset, list[str]]] = defaultdict(lambda: defaultdict(list))
    rows: dict[str, dict[str, set[str]]] = defaultdict(lambda: defaultdict(set))
    with open(personnel_csv, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rows[row["session_id"]][row["musician_id"]].add(row["instrument_id"])
    for sid, ms in rows.items():
        for m, instr in ms.items():
            by_session[sid][frozenset(instr)].append(m)
    assignment = {}
    for s in d:
        for i, b in enumerate(s.personnel):
            assignment[(s.session_id, i)] = by_session[s.session_id][b.instruments].pop(0)
    return RewiredWorld(
        assignment, meta["seed"], meta["window_years"], meta["infeasible_slots"],
        meta.get("qualification", SPAN),
    )


class _BlockState:
    def __init__(self, slots, session_of, candidates, budget):
        self.slots = slots
        self.session_of = session_of
        self.candidates = candidates
        self.remaining = dict(budget)
        self.assign: dict[Slot, str | None] = {sl: None for sl in slots}
        self.members: dict[str, dict[str, Slot]] = defaultdict(dict)  # session -> musician -> slot
        self.held: dict[str, set[Slot]] = defaultdict(set)  # musician -> slots

    def place(self, slot: Slot, m: str) -> None:
        self.assign[slot] = m
        self.members[self.session_of[slot]][m] = slot
        self.held[m].add(slot)
        self.remaining[m] -= 1

    def vacate(self, slot: Slot) -> str:
        m = self.assign[slot]
        self.assign[slot] = None
        del self.members[self.session_of[slot]][m]
        self.held[m].discard(slot)
        self.remaining[m] += 1
        return m


def _augment(state: _BlockState, start: Slot, rng: np.random.Generator) -> bool | None:
    """Fill ``start`` through a chain of moves.

    Breadth-first over slots; each musician's held slots are expanded once.
    Returns None when no chain exists and False when the chain found could
    not be applied.
    """
    parent: dict[Slot, tuple[Slot, str] | None] = {start: None}
    expanded: set[str] = set()
    queue = deque([start])
    while queue:
        x = queue.popleft()
        sess = state.session_of[x]
        cands = state.candidates[x]
        for ci in rng.permutation(len(cands)):
            m = cands[ci]
            if state.assign[x] == m:
                continue
            inside = state.members[sess].get(m)
            if inside is not None:
                nxt = [inside]
            elif state.remaining[m] > 0:
                chain = [(x, m)]
                while parent[chain[-1][0]] is not None:
                    chain.append(parent[chain[-1][0]])
                return _apply_chain(state, chain)
            elif m in expanded:
                continue
            else:
                expanded.add(m)
                held = sorted(state.held[m])
                nxt = [held[i] for i in rng.permutation(len(held))]
            for v in nxt:
                if v not in parent:
                    parent[v] = (x, m)
                    queue.append(v)
    return None


def _apply_chain(state: _BlockState, chain: list[tuple[Slot, str]]) -> bool:
    # chain[0] is filled from the musician's unused budget; every later entry
    # (slot, m) moves m out of the previous entry's slot into this one
    moves = [(chain[i - 1][0] if i else None, slot, m) for i, (slot, m) in enumerate(chain)]
    snapshot = {slot: state.assign[slot] for slot, _ in chain}
    for src, _, _ in moves:
        if src is not None:
            state.vacate(src)
    placed = []
    for _, dst, m in moves:
        if m in state.members[state.session_of[dst]] or state.remaining[m] <= 0:
            break
        state.place(dst, m)
        placed.append(dst)
    else:
        return True
    # rare: one musician appears twice in the chain and collides with itself
    for dst in placed:
        state.vacate(dst)
    for slot, m in snapshot.items():
        if m is not None:
            state.place(slot, m)
    return False


def generate_world(
    d: Dataset,
    window_years: int = 1,
    seed: int = 0,
    ix: CoPlayIndex | None = None,
    qualification: str = SPAN,
    max_repairs: int = 100,
) -> RewiredWorld:
    """Draw one rewired world; identical inputs give an identical world."""
    ix = ix or build_index(d)
    rng = np.random.default_rng(seed)
    first = d.years[0]
    budgets = _block_budgets(d, window_years)

    block_slots: dict[int, list[Slot]] = defaultdict(list)
    instruments: dict[Slot, frozenset[str]] = {}
    session_of: dict[Slot, str] = {}
    year_of: dict[Slot, int] = {}
    original: dict[Slot, str] = {}
    for s in d:
        blk = window_block(s.year, first, window_years)
        for i, b in enumerate(s.personnel):
            sl = (s.session_id, i)
            block_slots[blk].append(sl)
            instruments[sl] = b.instruments
            session_of[sl] = s.session_id
            year_of[sl] = s.year
            original[sl] = b.musician_id

    assignment: dict[Slot, str] = {}
    infeasible: list[Slot] = []
    for blk in sorted(block_slots):
        slots = block_slots[blk]
        active = sorted(budgets[blk])
        qual_cache: dict[tuple[frozenset, int], list[str]] = {}
        candidates = {}
        for sl in slots:
            key = (instruments[sl], year_of[sl])
            if key not in qual_cache:
                qual_cache[key] = [
                    m for m in active if is_qualified(ix, m, key[0], key[1], qualification)
                ]
            candidates[sl] = qual_cache[key]
        state = _BlockState(slots, session_of, candidates, budgets[blk])

        tiebreak = rng.permutation(len(slots))
        order = sorted(range(len(slots)), key=lambda k: (len(candidates[slots[k]]), tiebreak[k]))
        unfilled = []
        for k in order:
            sl = slots[k]
            members = state.members[session_of[sl]]
            avail = [m for m in candidates[sl] if state.remaining[m] > 0 and m not in members]
            if not avail:
                unfilled.append(sl)
                continue
            weights = np.array([state.remaining[m] for m in avail], dtype=float)
            state.place(sl, avail[rng.choice(len(avail), p=weights / weights.sum())])

        for sl in unfilled:
            if state.assign[sl] is not None:
                continue
            for _ in range(max_repairs):
                done = _augment(state, sl, rng)
                if done is not False:  # filled, or provably no chain
                    break
        for sl in slots:
            m = state.assign[sl]
            if m is None:
                infeasible.append(sl)
                m = original[sl]
            assignment[sl] = m
    return RewiredWorld(assignment, int(seed), window_years, len(infeasible), qualification, tuple(infeasible))


class ConstraintReport(NamedTuple):
    c1_session_size: int
    c2_activity: int
    c3_qualification: int
    c4_uniqueness: int
    details: tuple[str, ...]

    @property
    def total(self) -> int:
        return self.c1_session_size + self.c2_activity + self.c3_qualification + self.c4_uniqueness

    @property
    def ok(self) -> bool:
        return self.total == 0


def verify_world(d: Dataset, w: RewiredWorld, ix: CoPlayIndex | None = None) -> ConstraintReport:
    ix = ix or build_index(d)
    first = d.years[0]
    details: list[str] = []
    c1 = c2 = c3 = c4 = 0

    expected = {(s.session_id, i) for s in d for i in range(len(s.personnel))}
    got = set(w.assignment)
    for sl in sorted(expected ^ got):
        c1 += 1
        details.append(f"C1 slot {sl} {'missing' if sl in expected else 'unexpected'}")

    observed = _block_budgets(d, w.window_years)
    rewired: dict[int, dict[str, int]] = defaultdict(lambda: defaultdict(int))
    for s in d:
        blk = window_block(s.year, first, w.window_years)
        seen: set[str] = set()
        for i, b in enumerate(s.personnel):
            m = w.assignment.get((s.session_id, i))
            if m is None:
                continue
            rewired[blk][m] += 1
            if m in seen:
                c4 += 1
                details.append(f"C4 {m} twice in session {s.session_id}")
            seen.add(m)
            if not is_qualified(ix, m, b.instruments, s.year, w.qualification):
                c3 += 1
                details.append(
                    f"C3 {m} unqualified for {sorted(b.instruments)} in session {s.session_id}"
                )
    for blk in sorted(set(observed) | set(rewired)):
        ms = set(observed.get(blk, {})) | set(rewired.get(blk, {}))
        for m in sorted(ms):
            a, b = observed.get(blk, {}).get(m, 0), rewired.get(blk, {}).get(m, 0)
            if a != b:
                c2 += 1
                details.append(f"C2 {m} block {blk}: observed {a}, rewired {b}")
    return ConstraintReport(c1, c2, c3, c4, tuple(details))


def world_census(d: Dataset, w: RewiredWorld, theta: int = 2) -> dict[str, SessionCensus]:
    """Census every session using weights rebuilt from the rewired history."""
    rd = w.to_dataset(d)
    rix = build_index(rd)
    return {s.session_id: session_census(session_weight_matrix(rix, s), theta) for s in rd}


def observed_census(d: Dataset, theta: int = 2, ix: CoPlayIndex | None = None) -> dict[str, SessionCensus]:
    ix = ix or build_index(d)
    return {s.session_id: session_census(session_weight_matrix(ix, s), theta) for s in d}


class DensityComparison(NamedTuple):
    session_ids: tuple[str, ...]
    observed: np.ndarray
    rewired_mean: np.ndarray
    difference: np.ndarray  # rewired minus observed
    share_rewired_higher: float


def compare_forbidden_densities(
    observed: Mapping[str, SessionCensus], worlds: Iterable[Mapping[str, SessionCensus]]
) -> DensityComparison:
    """Observed vs mean rewired forbidden density, per session.

    Only sessions with at least one observed forbidden triad are compared. A
    rewired session without connected triads counts as zero forbidden density.
    """
    worlds = list(worlds)
    if not worlds:
        raise ValueError("no rewired worlds to compare against")
    keys = set(observed)
    for i, wc in enumerate(worlds):
        if set(wc) != keys:
            raise ValueError(f"world {i} covers a different session set than the observed data")
    sids = tuple(sid for sid in observed if observed[sid].n_forbidden > 0)
    obs = np.array([observed[sid].d_forbidden for sid in sids])
    rew = np.array(
        [np.mean([wc[sid].d_forbidden if wc[sid].defined else 0.0 for wc in worlds]) for sid in sids]
    )
    diff = rew - obs
    share = float(np.mean(rew > obs)) if len(sids) else float("nan")
    return DensityComparison(sids, obs, rew, diff, share)
