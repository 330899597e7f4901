"""Design matrices and fit results shared by all estimators."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

CONST = "const"
INTERACTION = "__x__"


class EstimationError(RuntimeError):
    """An estimator could not produce a fit."""


class RankDeficiencyError(EstimationError):
    def __init__(self, columns: Sequence[str]):
        self.columns = tuple(columns)
        super().__init__(f"design matrix is rank deficient; dependent columns: {', '.join(self.columns)}")


class SeparationError(EstimationError):
    pass


class ConvergenceError(EstimationError):
    def __init__(self, iterations: int, grad_norm: float):
        self.iterations = iterations
        self.grad_norm = grad_norm
        super().__init__(f"no convergence after {iterations} iterations (gradient norm {grad_norm:.3g})")


@dataclass
class DesignMatrix:
    X: np.ndarray
    columns: tuple[str, ...]
    y: np.ndarray
    groups: np.ndarray | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        self.columns = tuple(self.columns)
        n, k = self.X.shape
        if len(self.columns) != k:
            raise ValueError(f"{k} columns but {len(self.columns)} names")
        if len(set(self.columns)) != k:
            raise ValueError("column names must be unique")
        if self.y.shape != (n,):
            raise ValueError("outcome length does not match the number of rows")
        if not (np.isfinite(self.X).all() and np.isfinite(self.y).all()):
            raise ValueError("design matrix has missing or non-finite cells")
        if self.groups is not None:
            self.groups = np.asarray(self.groups)
            if self.groups.shape != (n,):
                raise ValueError("groups length does not match the number of rows")

    @property
    def nobs(self) -> int:
        return self.X.shape[0]

    def col(self, name: str) -> np.ndarray:
        return self.X[:, self.columns.index(name)]

    def subset(self, rows) -> "DesignMatrix":
        rows = np.asarray(rows)
        g = None if self.groups is None else self.groups[rows]
        return DesignMatrix(self.X[rows], self.columns, self.y[rows], g)

    def with_outcome(self, y) -> "DesignMatrix":
        return DesignMatrix(self.X, self.columns, y, self.groups)

    def drop(self, names: Sequence[str]) -> "DesignMatrix":
        keep = [i for i, c in enumerate(self.columns) if c not in set(names)]
        return DesignMatrix(self.X[:, keep], [self.columns[i] for i in keep], self.y, self.groups)

    def add_columns(self, names: Sequence[str], values: np.ndarray) -> "DesignMatrix":
        values = np.asarray(values, dtype=float).reshape(self.nobs, -1)
        return DesignMatrix(np.hstack([self.X, values]), self.columns + tuple(names), self.y, self.groups)

    @classmethod
    def from_frame(cls, df, outcome: str, regressors: Sequence[str], groups: str | None = None, constant: bool = True):
        cols = [CONST] if constant else []
        X = [np.ones(len(df))] if constant else []
        for r in regressors:
            cols.append(r)
            X.append(derived_column(df, r))
        g = None if groups is None else df[groups].to_numpy()
        return cls(np.column_stack(X) if X else np.empty((len(df), 0)), cols, df[outcome].to_numpy(float), g)


def derived_column(df, name: str) -> np.ndarray:
    """Column by name; ``a__x__b`` is a product and a missing ``x_sq`` a square."""
    if name in df:
        return df[name].to_numpy(float)
    if INTERACTION in name:
        a, b = name.split(INTERACTION, 1)
        return derived_column(df, a) * derived_column(df, b)
    if name.endswith("_sq"):
        return derived_column(df, name[:-3]) ** 2
    raise KeyError(name)


@dataclass
class FitResult:
    model: str
    columns: tuple[str, ...]
    params: np.ndarray
    bse: np.ndarray
    pvalues: np.ndarray
    cov: np.ndarray
    nobs: int
    means: np.ndarray
    llf: float | None = None
    llnull: float | None = None
    r2: float | None = None
    r2_adj: float | None = None
    pseudo_r2: float | None = None
    pseudo_r2_adj: float | None = None
    fstat: float | None = None
    f_pvalue: float | None = None
    chi2: float | None = None
    chi2_pvalue: float | None = None
    df_resid: float | None = None
    alpha: float | None = None
    alpha_se: float | None = None
    alpha_lr: float | None = None
    alpha_pvalue: float | None = None
    group_effects: dict = field(default_factory=dict)
    n_groups: int | None = None
    groups_dropped: int = 0
    rows_dropped: int = 0
    dropped_columns: tuple[str, ...] = ()
    converged: bool = True
    iterations: int = 0
    grad_norm: float = 0.0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.columns = tuple(self.columns)
        for name in ("params", "bse", "pvalues", "means"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        self.cov = np.asarray(self.cov, dtype=float).reshape(len(self.columns), len(self.columns))

    def __getitem__(self, name: str) -> float:
        return float(self.params[self.columns.index(name)])

    def coef(self, name: str) -> float:
        return self[name]

    def se(self, name: str) -> float:
        return float(self.bse[self.columns.index(name)])

    def pvalue(self, name: str) -> float:
        return float(self.pvalues[self.columns.index(name)])

    def conf_int(self, z: float = 1.959963984540054) -> np.ndarray:
        return np.column_stack([self.params - z * self.bse, self.params + z * self.bse])

    def wald_test(self, names: Sequence[str]) -> tuple[float, float]:
        """Joint Wald chi-square test that the named coefficients are zero."""
        from scipy import stats

        idx = [self.columns.index(n) for n in names]
        b = self.params[idx]
        V = self.cov[np.ix_(idx, idx)]
        w = float(b @ np.linalg.solve(V, b))
        return w, float(stats.chi2.sf(w, len(idx)))

    # --- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        out = {}
        for k, v in self.__dict__.items():
            if isinstance(v, np.ndarray):
                v = v.tolist()
            elif isinstance(v, tuple):
                v = list(v)
            out[k] = v
        out["group_effects"] = {str(k): float(v) for k, v in self.group_effects.items()}
        return _clean(out)

    @classmethod
    def from_dict(cls, data: dict) -> "FitResult":
        data = dict(data)
        data["columns"] = tuple(data["columns"])
        data["dropped_columns"] = tuple(data.get("dropped_columns", ()))
        for k in ("params", "bse", "pvalues", "means"):
            data[k] = np.array([np.nan if v is None else v for v in data[k]], dtype=float)
        data["cov"] = np.array([[np.nan if v is None else v for v in row] for row in data["cov"]], dtype=float)
        return cls(**data)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "FitResult":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def summary_text(self) -> str:
        """Flat ``key = value`` summary, one line per entry."""
        lines = [f"model = {self.model}", f"nobs = {self.nobs}"]
        for name, b, s, p in zip(self.columns, self.params, self.bse, self.pvalues):
            lines += [f"coef.{name} = {_num(b)}", f"se.{name} = {_num(s)}", f"p.{name} = {_num(p)}"]
        for key in (
            "llf", "llnull", "r2", "r2_adj", "pseudo_r2", "pseudo_r2_adj", "fstat", "f_pvalue",
            "chi2", "chi2_pvalue", "df_resid", "alpha", "alpha_se", "alpha_lr", "alpha_pvalue",
            "n_groups", "groups_dropped", "rows_dropped", "converged", "iterations", "grad_norm",
        ):
            v = getattr(self, key)
            if v is not None:
                lines.append(f"{key} = {_num(v)}")
        if self.dropped_columns:
            lines.append(f"dropped_columns = {','.join(self.dropped_columns)}")
        for k in sorted(self.extra):
            v = self.extra[k]
            if isinstance(v, (int, float, str, bool)):
                lines.append(f"{k} = {_num(v)}")
        return "\n".join(lines) + "\n"


def _num(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _clean(v):
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, list):
        return [_clean(x) for x in v]
    if isinstance(v, (np.floating, float)):
        f = float(v)
        return None if math.isnan(f) or math.isinf(f) else f
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def read_summary_text(text: str) -> dict[str, str]:
    out = {}
    for ln in text.splitlines():
        if "=" in ln:
            k, _, v = ln.partition("=")
            out[k.strip()] = v.strip()
    return out
