import numpy as np
import pytest

from forbidden_triads.records import Dataset, make_session

KOB_MUSICIANS = ("chambers_p", "coltrane_j", "kelly_w", "cobb_j", "davis_m", "adderley_c")
KOB_INSTRUMENTS = {
    "chambers_p": "bass",
    "coltrane_j": "tenor sax",
    "kelly_w": "piano",
    "cobb_j": "drums",
    "davis_m": "trumpet",
    "adderley_c": "alto sax",
}
# co-play matrix of the six players as of the 1959 session; diagonal = prior sessions
KOB_MATRIX = np.array(
    [
        [58, 35, 12, 8, 22, 13],
        [35, 35, 1, 7, 16, 5],
        [12, 1, 25, 11, 0, 1],
        [8, 7, 11, 24, 6, 10],
        [22, 16, 0, 6, 23, 8],
        [13, 5, 1, 10, 8, 20],
    ]
)

# one decomposition of the matrix into earlier line-ups (index tuples -> count);
# every pair and diagonal count of KOB_MATRIX is reproduced exactly
_KOB_HISTORY = {
    (0,): 2, (2,): 3,
    (0, 1): 16, (0, 2): 10, (0, 4): 2, (0, 5): 4, (2, 3): 9, (3, 5): 5,
    (0, 1, 2): 1, (0, 1, 4): 9, (0, 2, 3): 1, (0, 4, 5): 4, (2, 3, 5): 1, (3, 4, 5): 1,
    (0, 1, 3, 4): 4, (0, 1, 3, 5): 2, (0, 1, 4, 5): 2,
    (0, 1, 3, 4, 5): 1,
}


def kind_of_blue_dataset() -> Dataset:
    sessions = []
    k = 0
    for members, count in _KOB_HISTORY.items():
        for _ in range(count):
            names = [KOB_MUSICIANS[i] for i in members]
            sessions.append(
                make_session(
                    f"prior{k:03d}", names[0], 1950 + k % 9, {m: {KOB_INSTRUMENTS[m]} for m in names}, 1 + k % 4
                )
            )
            k += 1
    sessions.append(
        make_session("kind_of_blue", "davis_m", 1959, {m: {KOB_INSTRUMENTS[m]} for m in KOB_MUSICIANS}, 45)
    )
    return Dataset(tuple(sessions))


@pytest.fixture(scope="session")
def kob():
    return kind_of_blue_dataset()


def brute_census(w, theta):
    """Triple-loop triad classifier used as an oracle."""
    n = len(w)
    counts = {"open": 0, "closed": 0, "forbidden": 0}
    for i in range(n):
        for j in range(i + 1, n):
            for k in range(j + 1, n):
                e = sorted([w[i][j], w[i][k], w[j][k]])
                if e[0] > 0:
                    counts["closed"] += 1
                elif e[1] == 0:
                    continue
                elif e[1] >= theta:
                    counts["forbidden"] += 1
                else:
                    counts["open"] += 1
    return counts
