"""Synthetic session corpora with tunable band loyalty and a planted
success rule.

Musicians belong to a home band; a share of them ("brokers") also belong to
a second band. A session leader fills each slot from their bands' members
with probability ``loyalty`` and from all active musicians otherwise, so
brokers bring together players with strong ties to them but none to each
other. Releases are drawn from an NB2 distribution whose log-mean is a
quadratic in the session's forbidden-triad density.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .graph import build_index, session_weight_matrix
from .records import Bundle, Dataset, SessionRecord
from .triads import session_census


@dataclass(frozen=True)
class SynthParams:
    n_musicians: int = 120
    n_instruments: int = 12
    first_year: int = 1950
    n_years: int = 8
    sessions_per_year: int = 100
    size_min: int = 3
    size_max: int = 7
    n_bands: int = 15
    broker_share: float = 0.6
    loyalty: float = 0.85
    multi_instrument_share: float = 0.1
    late_start_share: float = 0.3
    # log E[releases] = base + linear * d_forbidden + quadratic * d_forbidden^2
    success_base: float = 1.5
    success_linear: float = 2.0
    success_quadratic: float = -2.0
    success_alpha: float = 0.3
    theta: int = 2

    def validate(self) -> None:
        if self.n_musicians < 3 or self.n_instruments < 1 or self.n_years < 1:
            raise ValueError("need at least 3 musicians, 1 instrument and 1 year")
        if self.sessions_per_year < 1 or self.n_bands < 1:
            raise ValueError("sessions_per_year and n_bands must be positive")
        if not 1 <= self.size_min <= self.size_max:
            raise ValueError("session sizes must satisfy 1 <= size_min <= size_max")
        if not 0 <= self.loyalty <= 1 or not 0 <= self.broker_share <= 1:
            raise ValueError("loyalty and broker_share must be in [0, 1]")
        if not 0 <= self.late_start_share < 1:
            raise ValueError("late_start_share must be in [0, 1)")
        first_active = self.n_musicians - int(round(self.late_start_share * self.n_musicians))
        if self.size_max > first_active:
            raise ValueError(
                f"sessions of up to {self.size_max} musicians cannot be staffed from "
                f"{first_active} musicians active in the first year"
            )
        if self.success_alpha <= 0:
            raise ValueError("success_alpha must be positive")

    @property
    def peak(self) -> float:
        return -self.success_linear / (2 * self.success_quadratic)


def synth_corpus(params: SynthParams | None = None, seed: int = 0, **overrides) -> Dataset:
    """Generate a corpus; keyword overrides replace fields of ``params``."""
    p = SynthParams(**{**asdict(params or SynthParams()), **overrides})
    p.validate()
    rng = np.random.default_rng(seed)

    musicians = [f"m{i:04d}" for i in range(p.n_musicians)]
    instruments = [f"inst{i:02d}" for i in range(p.n_instruments)]
    freq = 1.0 / np.arange(1, p.n_instruments + 1)
    freq /= freq.sum()
    plays: dict[str, list[str]] = {}
    for m in musicians:
        first = instruments[rng.choice(p.n_instruments, p=freq)]
        plays[m] = [first]
        if p.n_instruments > 1 and rng.random() < p.multi_instrument_share:
            second = instruments[rng.choice(p.n_instruments, p=freq)]
            if second != first:
                plays[m].append(second)

    n_late = int(round(p.late_start_share * p.n_musicians))
    late = set(rng.choice(p.n_musicians, size=n_late, replace=False).tolist())
    start = {
        m: (p.first_year + int(rng.integers(1, p.n_years)) if i in late and p.n_years > 1 else p.first_year)
        for i, m in enumerate(musicians)
    }

    home = rng.integers(0, p.n_bands, size=p.n_musicians)
    bands: dict[int, list[str]] = {b: [] for b in range(p.n_bands)}
    member_of: dict[str, list[int]] = {}
    for i, m in enumerate(musicians):
        member_of[m] = [int(home[i])]
        if p.n_bands > 1 and rng.random() < p.broker_share:
            other = int(rng.integers(0, p.n_bands - 1))
            other += other >= home[i]
            member_of[m].append(other)
        for b in member_of[m]:
            bands[b].append(m)

    sessions: list[SessionRecord] = []
    for year in range(p.first_year, p.first_year + p.n_years):
        active = [m for m in musicians if start[m] <= year]
        for k in range(p.sessions_per_year):
            leader = active[rng.integers(len(active))]
            size = int(rng.integers(p.size_min, p.size_max + 1))
            chosen = [leader]
            taken = {leader}
            mates = sorted({m for b in member_of[leader] for m in bands[b] if start[m] <= year} - taken)
            while len(chosen) < size:
                pool = [m for m in mates if m not in taken]
                if pool and rng.random() < p.loyalty:
                    m = pool[rng.integers(len(pool))]
                else:
                    rest = [m for m in active if m not in taken]
                    m = rest[rng.integers(len(rest))]
                chosen.append(m)
                taken.add(m)
            personnel = []
            for m in chosen:
                instr = {plays[m][0]}
                if len(plays[m]) > 1 and rng.random() < 0.5:
                    instr.add(plays[m][1])
                personnel.append(Bundle(m, frozenset(instr)))
            sessions.append(SessionRecord(f"s{year}_{k:04d}", leader, year, tuple(personnel), 1))

    draft = Dataset(tuple(sessions))
    ix = build_index(draft)
    final = []
    for s in draft:
        c = session_census(session_weight_matrix(ix, s), p.theta)
        d = c.d_forbidden if c.defined else 0.0
        mu = np.exp(p.success_base + p.success_linear * d + p.success_quadratic * d * d)
        r = 1.0 / p.success_alpha
        releases = int(rng.negative_binomial(r, r / (r + mu)))
        final.append(SessionRecord(s.session_id, s.leader_id, s.year, s.personnel, releases))
    return Dataset(tuple(final))
