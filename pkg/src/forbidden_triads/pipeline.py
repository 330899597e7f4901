"""End-to-end analysis runner.

A run reads one flat configuration, executes the stages in order and writes
every table and plot-data file into an output directory together with
``manifest.json``. Stages talk to each other only through files in the
output directory. A stage whose configuration and input files are unchanged
since the previous run in the same directory is not recomputed; its outputs
are carried over.

Output is built in a sibling temporary directory and moved into place only
when every stage succeeded, so a failed run leaves no partial output.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import platform
import shutil
import tempfile
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import __version__
from .features import (
    FEATURE_COLUMNS,
    assemble_features,
    read_features,
    write_features,
)
from .graph import build_index, session_weight_matrix
from .records import Dataset, load_dataset, parse_records, read_dataset_dir, read_leader_list, write_dataset
from .rewire import (
    SPAN,
    compare_forbidden_densities,
    generate_world,
    load_world,
    observed_census,
    verify_world,
    world_census,
)
from .stats import (
    DesignMatrix,
    EstimationError,
    FitResult,
    RankWarning,
    fe_negbin_fit,
    fe_ols_fit,
    kde_epanechnikov,
    ks_two_sample,
    leader_interaction_fit,
    logit_fit,
    lowess,
    marginal_predictions,
    matched_closure_sample,
    negbin_fit,
    ols_fit,
    pearson_matrix,
    permutation_pvalues,
    power_sequence_r2,
    vif,
    wilcoxon_signed_rank,
)
from .triads import SessionCensus, closure_curve, pooled_triplets

# regressors of the success models, d_open being the reference category
REGRESSORS = (
    "d_forbidden",
    "d_forbidden_sq",
    "d_closed",
    "d_closed_sq",
    "median_tie_strength",
    "median_tie_strength_sq",
    "distinctiveness",
    "n_musicians",
    "newbies_proportion",
    "median_past_releases",
    "past_sessions_total",
    "year",
)

# (name, fitter, outcome, fixed effects)
MODELS = (
    ("model1", "ols", "log10_releases", False),
    ("model2", "nb", "releases", False),
    ("model3", "fe_ols", "log10_releases", True),
    ("model4", "fe_nb", "releases", True),
)
_FITTERS = {"ols": ols_fit, "nb": negbin_fit, "fe_ols": fe_ols_fit, "fe_nb": fe_negbin_fit}

MARGIN_GRID = np.round(np.arange(0, 101) / 100, 2)


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


# --- configuration -------------------------------------------------------


@dataclass
class PipelineConfig:
    sessions_path: str = ""
    personnel_path: str = ""
    records_path: str = ""
    theta: int = 2
    theta_sweep: tuple[int, ...] = (2, 3, 5, 10)
    window_years: int = 1
    window_sweep: tuple[int, ...] = (1, 2, 5, 10)
    n_worlds: int = 100
    seed: int = 0
    cutoff_year: int = 2000
    cutoff_sweep: tuple[int, ...] = (2000, 1995, 1990)
    exclude_leaders_path: str = ""
    n_quantiles: int = 10_000
    smoothing_window: int = 0  # 0: n_quantiles // 100
    n_permutations: int = 10_000
    permutation_subsample: int = 500_000
    lowess_frac: float = 0.5
    kde_bandwidth: float = 0.0  # 0: normal-scale rule
    top_k: int = 200
    horizon: int = 5
    interaction_leader: str = ""  # empty: the leader with most rows
    base_dir: Path = field(default=Path("."), repr=False, compare=False)

    def validate(self) -> None:
        if not self.records_path and not (self.sessions_path and self.personnel_path):
            raise ConfigError("set sessions_path and personnel_path, or records_path")
        if bool(self.sessions_path) != bool(self.personnel_path):
            raise ConfigError("sessions_path and personnel_path go together")
        if self.theta < 2 or any(t < 2 for t in self.theta_sweep):
            raise ConfigError("theta values must be >= 2")
        for name in ("theta_sweep", "window_sweep", "cutoff_sweep"):
            if not getattr(self, name):
                raise ConfigError(f"{name} must not be empty")
        positive = ("window_years", "n_quantiles", "n_permutations", "permutation_subsample", "top_k", "horizon")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if any(w < 1 for w in self.window_sweep):
            raise ConfigError("window_sweep values must be positive")
        if self.n_worlds < 0 or self.smoothing_window < 0 or self.kde_bandwidth < 0:
            raise ConfigError("n_worlds, smoothing_window and kde_bandwidth must be >= 0")
        if not 0 < self.lowess_frac <= 1:
            raise ConfigError("lowess_frac must be in (0, 1]")

    def path(self, name: str) -> Path | None:
        value = getattr(self, name)
        if not value:
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    def to_dict(self) -> dict:
        out = {}
        for f in _config_fields():
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    def to_text(self) -> str:
        lines = []
        for k, v in self.to_dict().items():
            lines.append(f"{k} = {', '.join(map(str, v)) if isinstance(v, list) else v}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()


def _config_fields():
    return [f for f in fields(PipelineConfig) if f.name != "base_dir"]


def _convert(name: str, kind: str, raw: str):
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind.startswith("tuple"):
            return tuple(int(x) for x in raw.replace(",", " ").split())
        return raw
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r}") from None


def parse_config(text: str, base_dir: str | Path = ".") -> PipelineConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment, lists are
    comma- or space-separated."""
    kinds = {f.name: str(f.type) for f in _config_fields()}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in kinds:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _convert(key, kinds[key], raw.strip("\"'"))
    cfg = PipelineConfig(**values, base_dir=Path(base_dir))
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from None
    return parse_config(text, path.parent)


def stage_seed(master: int, stage: str, index: int = 0) -> int:
    """64-bit seed from the first 8 bytes of sha256("master:stage:index")."""
    h = hashlib.sha256(f"{master}:{stage}:{index}".encode()).digest()
    return int.from_bytes(h[:8], "big")


# --- file helpers --------------------------------------------------------


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "" if math.isnan(v) else repr(v)
    if isinstance(v, np.integer):
        return str(int(v))
    return "" if v is None else str(v)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def census_rows(d: Dataset, censuses) -> list[tuple]:
    return [
        (s.session_id, s.year, len(s.personnel), c.n_open, c.n_closed, c.n_forbidden, c.n_connected,
         c.d_open, c.d_closed, c.d_forbidden)
        for s in d
        for c in [censuses[s.session_id]]
    ]


CENSUS_HEADER = ("session_id", "year", "n_musicians", "n_open", "n_closed", "n_forbidden", "n_connected",
                 "d_open", "d_closed", "d_forbidden")


def read_census(path: Path, theta: int) -> dict[str, SessionCensus]:
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out[row["session_id"]] = SessionCensus(
                int(row["n_open"]), int(row["n_closed"]), int(row["n_forbidden"]), int(row["n_connected"]), theta
            )
    return out


# --- models --------------------------------------------------------------


def design_from_features(df, outcome: str, regressors: Sequence[str] = REGRESSORS, groups: bool = False) -> DesignMatrix:
    return DesignMatrix.from_frame(df, outcome, regressors, groups="leader_id" if groups else None)


def fit_success_models(df, regressors: Sequence[str] = REGRESSORS) -> "OrderedDict[str, FitResult]":
    """Fit the four success models: OLS and NB, each with and without
    leader fixed effects."""
    import warnings

    fits = OrderedDict()
    for name, kind, outcome, fe in MODELS:
        X = design_from_features(df, outcome, regressors, fe)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RankWarning)
            fits[name] = _FITTERS[kind](X)
    return fits


def _coef_rows(fits, terms=("d_forbidden", "d_forbidden_sq")):
    row = []
    for name, fit in fits.items():
        for t in terms:
            if t in fit.columns:
                row += [fit[t], fit.se(t), fit.pvalue(t)]
            else:
                row += [float("nan")] * 3
        row.append(fit.nobs)
    return row


def _coef_header(fits_names, terms=("d_forbidden", "d_forbidden_sq")):
    out = []
    for name in fits_names:
        for t in terms:
            out += [f"{name}.coef.{t}", f"{name}.se.{t}", f"{name}.p.{t}"]
        out.append(f"{name}.nobs")
    return out


def margins_rows(fits, variable: str, grid) -> list[tuple]:
    rows = []
    for name, fit in fits.items():
        m = marginal_predictions(fit, variable, grid)
        rows += [(name, variable, x, p, lo, hi) for x, p, lo, hi in zip(m.grid, m.prediction, m.ci_low, m.ci_high)]
    return rows


MARGINS_HEADER = ("model", "variable", "x", "prediction", "ci_low", "ci_high")


# --- the run -------------------------------------------------------------


class _Run:
    """State of one run: the working directory, the previous output directory
    (for carrying over unchanged stages) and the manifest being built."""

    def __init__(self, cfg: PipelineConfig, work: Path, previous: Path | None):
        self.cfg = cfg
        self.work = work
        self.previous_stages = {}
        self.previous = previous
        if previous is not None and (previous / "manifest.json").exists():
            try:
                self.previous_stages = json.loads((previous / "manifest.json").read_text())["stages"]
            except (ValueError, KeyError):
                self.previous_stages = {}
        self.stages: OrderedDict[str, dict] = OrderedDict()
        self.seeds: OrderedDict[str, int] = OrderedDict()
        self.notices: list[str] = []
        self.inputs: OrderedDict[str, str] = OrderedDict()
        self._cache: dict = {}

    def p(self, rel: str) -> Path:
        return self.work / rel

    def stage(self, name: str, keys: Sequence[str], inputs: Sequence[str], fn: Callable[[], Sequence[str]],
              extra: str = ""):
        """Run ``fn`` unless an identical stage ran before in the output dir.

        ``keys`` are the config fields the stage depends on, ``inputs`` the
        output-relative files it reads and ``extra`` anything else that
        identifies its input.
        """
        h = hashlib.sha256(f"{name};{extra}".encode())
        for k in keys:
            h.update(f"{k}={getattr(self.cfg, k)!r};".encode())
        for rel in sorted(inputs):
            h.update(f"{rel}:{sha256_file(self.p(rel))};".encode())
        key = h.hexdigest()
        old = self.previous_stages.get(name)
        if old and old["key"] == key and self._carry_over(old["outputs"]):
            outputs = old["outputs"]
            self.notices.extend(old.get("notices", []))
        else:
            before = len(self.notices)
            try:
                written = fn()
            except StageError:
                raise
            except Exception as e:  # noqa: BLE001 - re-raised with the stage named
                raise StageError(name, e) from e
            outputs = {rel: sha256_file(self.p(rel)) for rel in sorted(written)}
            old = {"notices": self.notices[before:]}
        self.stages[name] = {"key": key, "outputs": outputs, "notices": old.get("notices", [])}

    def _carry_over(self, outputs: dict) -> bool:
        for rel, digest in outputs.items():
            src = self.previous / rel
            if not src.exists() or sha256_file(src) != digest:
                return False
        for rel in outputs:
            dst = self.p(rel)
            dst.parent.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(self.previous / rel, dst)
        return True

    def notice(self, text: str) -> None:
        self.notices.append(text)

    # cached loaders; everything comes from files inside the work dir
    def dataset(self) -> Dataset:
        if "d" not in self._cache:
            self._cache["d"] = read_dataset_dir(self.p("data"))
        return self._cache["d"]

    def index(self):
        if "ix" not in self._cache:
            self._cache["ix"] = build_index(self.dataset())
        return self._cache["ix"]

    def world_files(self) -> list[str]:
        return [f"worlds/world_{i:03d}.csv" for i in range(self.cfg.n_worlds)] + [
            f"worlds/world_{i:03d}.json" for i in range(self.cfg.n_worlds)
        ]

    def worlds(self):
        if "worlds" not in self._cache:
            d = self.dataset()
            self._cache["worlds"] = [
                load_world(d, self.p(f"worlds/world_{i:03d}.csv"), self.p(f"worlds/world_{i:03d}.json"))
                for i in range(self.cfg.n_worlds)
            ]
        return self._cache["worlds"]

    def world_censuses(self):
        if "wc" not in self._cache:
            self._cache["wc"] = [world_census(self.dataset(), w, self.cfg.theta) for w in self.worlds()]
        return self._cache["wc"]

    def features(self):
        if "features" not in self._cache:
            self._cache["features"] = read_features(self.p("features.csv"))
        return self._cache["features"]


def _load_input(cfg: PipelineConfig) -> Dataset:
    if cfg.sessions_path:
        return load_dataset(cfg.path("sessions_path"), cfg.path("personnel_path"), cfg.path("records_path"))
    return Dataset(tuple(parse_records(cfg.path("records_path").read_text(encoding="utf-8"))))


def _input_digests(cfg: PipelineConfig) -> OrderedDict:
    out = OrderedDict()
    for name in ("sessions_path", "personnel_path", "records_path", "exclude_leaders_path"):
        p = cfg.path(name)
        if p is not None:
            out[name] = sha256_file(p)
    return out


def _stage_ingest(run: _Run) -> list[str]:
    d = _load_input(run.cfg)
    write_dataset(d, run.p("data"))
    return ["data/sessions.csv", "data/personnel.csv"]


def _stage_census(run: _Run) -> list[str]:
    d = run.dataset()
    c = observed_census(d, run.cfg.theta, run.index())
    write_csv(run.p("census.csv"), CENSUS_HEADER, census_rows(d, c))
    return ["census.csv"]


def _stage_rewire(run: _Run) -> list[str]:
    cfg, d, ix = run.cfg, run.dataset(), run.index()
    rows = []
    for i in range(cfg.n_worlds):
        seed = stage_seed(cfg.seed, "rewire", i)
        w = generate_world(d, cfg.window_years, seed, ix, SPAN)
        rep = verify_world(d, w, ix)
        if not rep.ok:
            raise RuntimeError(f"world {i} violates the rewiring constraints: {rep.details[:3]}")
        w.save(d, run.p("worlds"), f"world_{i:03d}")
        rows.append((i, seed, rep.c1_session_size, rep.c2_activity, rep.c3_qualification, rep.c4_uniqueness, w.infeasible_slots, d.n_slots))
    write_csv(
        run.p("rewire_constraints.csv"),
        ("world", "seed", "c1_violations", "c2_violations", "c3_violations", "c4_violations",
         "infeasible_slots", "total_slots"),
        rows,
    )
    return ["rewire_constraints.csv"] + run.world_files()


def _closure_points(stream, cfg: PipelineConfig):
    obs = list(stream)
    nq = min(cfg.n_quantiles, len(obs))
    window = cfg.smoothing_window or max(1, nq // 100)
    return nq, closure_curve(obs, nq, window)


def _stage_closure(run: _Run) -> list[str]:
    cfg, d = run.cfg, run.dataset()
    rows = []
    nq, pts = _closure_points(pooled_triplets(d, run.index(), cfg.theta, "observed"), cfg)
    if nq < cfg.n_quantiles:
        run.notice(f"closure curve: only {nq} observed triads, using {nq} quantiles")
    rows += [("observed",) + tuple(p) for p in pts]
    if cfg.n_worlds:
        stream = (
            t
            for i, w in enumerate(run.worlds())
            for rd in [w.to_dataset(d)]
            for t in pooled_triplets(rd, build_index(rd), cfg.theta, f"rewired:{i}")
        )
        _, pts = _closure_points(stream, cfg)
        rows += [("rewired",) + tuple(p) for p in pts]
    write_csv(run.p("fig3_closure.csv"),
              ("origin", "quantile", "size", "mean_min_legs_weight", "closure_raw", "closure"), rows)
    return ["fig3_closure.csv"]


def _stage_closure_logit(run: _Run) -> list[str]:
    cfg, d = run.cfg, run.dataset()
    observed = list(pooled_triplets(d, run.index(), cfg.theta, "observed"))
    rewired = []
    for i, w in enumerate(run.worlds()):
        rd = w.to_dataset(d)
        rewired.extend(pooled_triplets(rd, build_index(rd), cfg.theta, f"rewired:{i}"))
    X = matched_closure_sample(observed, rewired, stage_seed(cfg.seed, "closure_logit", 0))
    fit = logit_fit(X)
    perm = permutation_pvalues(
        logit_fit, X, cfg.n_permutations,
        subsample=cfg.permutation_subsample if cfg.permutation_subsample < X.nobs else None,
        seed=stage_seed(cfg.seed, "closure_logit", 1),
        strata=X.col("observed"),
    )
    rows = [
        (c, fit[c], fit.se(c), fit.pvalue(c), perm.pvalue(c), math.exp(fit[c]))
        for c in fit.columns
    ]
    write_csv(run.p("table3_closure_logit.csv"),
              ("term", "coef", "se", "p_wald", "p_permutation", "odds_ratio"), rows)
    write_csv(run.p("table3_closure_logit_stats.csv"), ("key", "value"), [
        ("nobs", fit.nobs), ("llf", fit.llf), ("pseudo_r2", fit.pseudo_r2),
        ("permutation_nobs", perm.nobs), ("n_permutations", perm.n_perm), ("permutation_failures", perm.n_failed),
    ])
    return ["table3_closure_logit.csv", "table3_closure_logit_stats.csv"]


def _stage_compare(run: _Run) -> list[str]:
    cfg, d = run.cfg, run.dataset()
    observed = read_census(run.p("census.csv"), cfg.theta)
    cmp = compare_forbidden_densities(observed, run.world_censuses())
    write_csv(run.p("fig4_density_comparison.csv"),
              ("session_id", "observed", "rewired_mean", "difference"),
              zip(cmp.session_ids, cmp.observed, cmp.rewired_mean, cmp.difference))
    tests = [("n_sessions", len(cmp.session_ids)), ("share_rewired_higher", cmp.share_rewired_higher)]
    if len(cmp.session_ids) >= 2:
        wx = wilcoxon_signed_rank(cmp.difference) if np.any(cmp.difference != 0) else None
        ks = ks_two_sample(cmp.observed, cmp.rewired_mean)
        tests += [
            ("wilcoxon_z", wx.z if wx else float("nan")),
            ("wilcoxon_p", wx.p if wx else float("nan")),
            ("ks_d", ks.d),
            ("ks_p", ks.p),
        ]
        bw = cfg.kde_bandwidth or None
        rows = []
        for label, values in (("difference", cmp.difference), ("observed", cmp.observed), ("rewired", cmp.rewired_mean)):
            if np.ptp(values) == 0 and bw is None:
                run.notice(f"fig4 kde: {label} values have no spread; density skipped")
                continue
            k = kde_epanechnikov(values, bw)
            x, y = k.grid(256)
            tests.append((f"bandwidth_{label}", k.bandwidth))
            rows += [(label, xi, yi) for xi, yi in zip(x, y)]
        write_csv(run.p("fig4_kde.csv"), ("series", "x", "density"), rows)
    else:
        run.notice("fig4: fewer than two sessions with forbidden triads; tests and densities skipped")
        write_csv(run.p("fig4_kde.csv"), ("series", "x", "density"), [])
    write_csv(run.p("fig4_tests.csv"), ("key", "value"), tests)
    return ["fig4_density_comparison.csv", "fig4_kde.csv", "fig4_tests.csv"]


def _features_table(d: Dataset, ix, theta: int, cutoff: int, cfg: PipelineConfig, exclusions=None, censuses=None):
    censuses = censuses or observed_census(d, theta, ix)
    return assemble_features(d, ix, censuses, theta, cutoff, exclusions, cfg.top_k, cfg.horizon)


def _stage_features(run: _Run) -> list[str]:
    cfg = run.cfg
    censuses = read_census(run.p("census.csv"), cfg.theta)
    table = _features_table(run.dataset(), run.index(), cfg.theta, cfg.cutoff_year, cfg, None, censuses)
    if len(table) == 0:
        raise RuntimeError("no session survives the feature filters")
    write_features(table, run.p("features.csv"))
    write_csv(run.p("feature_exclusions.csv"), ("reason", "count"), table.exclusions.items())
    return ["features.csv", "feature_exclusions.csv"]


DESCRIBE_VARS = ("d_forbidden", "d_closed", "median_tie_strength")


def _stage_describe(run: _Run) -> list[str]:
    cfg, df = run.cfg, run.features()
    cols = [c for c in FEATURE_COLUMNS if c not in ("session_id", "leader_id")]
    corr = pearson_matrix(df[cols])
    write_csv(run.p("table4_correlations.csv"), ("variable",) + tuple(cols),
              [(c,) + tuple(corr.loc[c, cols]) for c in cols])

    y = df["log10_releases"].to_numpy(float)
    lrows, brows = [], []
    for var in DESCRIBE_VARS:
        x = df[var].to_numpy(float)
        order = np.lexsort((y, x))
        if len(x) >= 3:
            fitted = lowess(x[order], y[order], cfg.lowess_frac)
            lrows += [(var, xi, yi, fi) for xi, yi, fi in zip(x[order], y[order], fitted)]
        edges = np.linspace(x.min(), x.max(), 11) if np.ptp(x) > 0 else np.array([x.min(), x.min()])
        bins = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, max(len(edges) - 2, 0))
        for b in range(max(len(edges) - 1, 1)):
            sel = bins == b
            brows.append((var, edges[b], edges[min(b + 1, len(edges) - 1)], int(sel.sum()),
                          float(y[sel].mean()) if sel.any() else float("nan")))
    write_csv(run.p("fig5_lowess.csv"), ("variable", "x", "log10_releases", "fitted"), lrows)
    write_csv(run.p("fig5_binned.csv"), ("variable", "bin_low", "bin_high", "n", "mean_log10_releases"), brows)

    gains = power_sequence_r2(df["d_forbidden"].to_numpy(float), y)
    write_csv(run.p("fig6_power_sequence.csv"), ("power", "r2_gain", "r2"),
              [(k + 1, g, s) for k, (g, s) in enumerate(zip(gains, np.cumsum(gains)))])

    X = design_from_features(df, "log10_releases")
    write_csv(run.p("table6_vif.csv"), ("variable", "vif"), vif(X).items())
    return ["table4_correlations.csv", "fig5_lowess.csv", "fig5_binned.csv", "fig6_power_sequence.csv", "table6_vif.csv"]


def _table5_rows(fits) -> list[tuple]:
    terms = list(REGRESSORS) + ["const"]
    rows = []
    for t in terms:
        for stat in ("coef", "se", "p"):
            row = [f"{stat}.{t}"]
            for fit in fits.values():
                if t not in fit.columns:
                    row.append(float("nan"))
                else:
                    row.append({"coef": fit[t], "se": fit.se(t), "p": fit.pvalue(t)}[stat])
            rows.append(tuple(row))
    for key in ("nobs", "n_groups", "r2_adj", "pseudo_r2_adj", "fstat", "chi2", "llf", "alpha", "alpha_pvalue"):
        rows.append((key,) + tuple(getattr(f, key) for f in fits.values()))
    return rows


def _stage_models(run: _Run) -> list[str]:
    fits = fit_success_models(run.features())
    run.p("fits").mkdir(exist_ok=True)
    out = []
    for name, fit in fits.items():
        fit.save(run.p(f"fits/{name}.json"))
        run.p(f"fits/{name}.txt").write_text(fit.summary_text(), encoding="utf-8")
        out += [f"fits/{name}.json", f"fits/{name}.txt"]
        if fit.dropped_columns:
            run.notice(f"{name}: dropped collinear columns {', '.join(fit.dropped_columns)}")
    write_csv(run.p("table5_models.csv"), ("row",) + tuple(fits), _table5_rows(fits))
    return out + ["table5_models.csv"]


def _interaction_leader(cfg: PipelineConfig, df) -> str:
    if cfg.interaction_leader:
        return cfg.interaction_leader
    counts = df["leader_id"].value_counts()
    top = counts.max()
    return sorted(counts[counts == top].index)[0]


def _stage_margins(run: _Run) -> list[str]:
    cfg, df = run.cfg, run.features()
    fits = OrderedDict((name, FitResult.load(run.p(f"fits/{name}.json"))) for name, *_ in MODELS)
    rows = margins_rows(fits, "d_forbidden", MARGIN_GRID) + margins_rows(fits, "d_closed", MARGIN_GRID)
    write_csv(run.p("fig7_margins.csv"), MARGINS_HEADER, rows)
    hi = float(df["median_tie_strength"].max())
    grid = np.linspace(0, hi if hi > 0 else 1.0, 101)
    write_csv(run.p("fig8_margins_tie_strength.csv"), MARGINS_HEADER, margins_rows(fits, "median_tie_strength", grid))

    out = ["fig7_margins.csv", "fig8_margins_tie_strength.csv"]
    leader = _interaction_leader(cfg, df)
    flag = (df["leader_id"] == leader).to_numpy(float)
    if flag.all() or not flag.any():
        run.notice(f"fig9: leader {leader!r} flag is constant in the feature table; interaction skipped")
        return out
    try:
        fit = leader_interaction_fit(design_from_features(df, "releases"), flag)
    except EstimationError as e:
        run.notice(f"fig9: interaction model for leader {leader!r} not estimable ({e}); skipped")
        return out
    fit.extra["interaction_leader"] = leader
    fit.save(run.p("fits/leader_interaction.json"))
    rows = []
    for value in (0.0, 1.0):
        m = marginal_predictions(fit, "d_forbidden", MARGIN_GRID, fixed={"leader_flag": value})
        rows += [(int(value), x, p, lo, hi) for x, p, lo, hi in zip(m.grid, m.prediction, m.ci_low, m.ci_high)]
    write_csv(run.p("fig9_leader_interaction.csv"), ("leader_flag", "x", "prediction", "ci_low", "ci_high"), rows)
    return out + ["fits/leader_interaction.json", "fig9_leader_interaction.csv"]


REWIRE_STAGES = ("rewire", "closure_logit", "compare")


def _versions() -> dict:
    import pandas
    import scipy

    return {
        "forbidden_triads": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pandas.__version__,
        "python": platform.python_version(),
    }


def _finish(run: _Run, out: Path, kind: str) -> dict:
    files = OrderedDict()
    for p in sorted(run.work.rglob("*")):
        if p.is_file():
            files[p.relative_to(run.work).as_posix()] = sha256_file(p)
    manifest = OrderedDict(
        kind=kind,
        config=run.cfg.to_dict(),
        config_digest=run.cfg.digest(),
        inputs=run.inputs,
        seeds=run.seeds,
        versions=_versions(),
        notices=run.notices,
        stages=run.stages,
        files=files,
    )
    (run.work / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    if out.exists():
        shutil.rmtree(out)
    run.work.rename(out)
    return manifest


def _workdir(out: Path) -> Path:
    out.parent.mkdir(parents=True, exist_ok=True)
    return Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))


def run_pipeline(cfg: PipelineConfig, out: str | Path) -> dict:
    """Run every stage and return the manifest written to ``out``.

    Raises :class:`StageError` naming the failing stage; nothing is left
    behind in that case and an existing ``out`` is untouched.
    """
    cfg.validate()
    out = Path(out)
    work = _workdir(out)
    try:
        run = _Run(cfg, work, out if out.exists() else None)
        run.inputs = _input_digests(cfg)
        data = ["data/sessions.csv", "data/personnel.csv"]
        # input files live outside the run; their digests stand in for them
        run.stage("ingest", ("sessions_path", "personnel_path", "records_path"), [], lambda: _stage_ingest(run),
                  extra=json.dumps(run.inputs))
        run.stage("census", ("theta",), data, lambda: _stage_census(run))
        if cfg.n_worlds > 0:
            run.seeds["rewire"] = stage_seed(cfg.seed, "rewire", 0)
            run.seeds["closure_logit"] = stage_seed(cfg.seed, "closure_logit", 0)
            run.stage("rewire", ("window_years", "n_worlds", "seed"), data, lambda: _stage_rewire(run))
        else:
            run.notice("n_worlds = 0: rewiring, rewired closure curve, closure logit and density comparison skipped")
        worlds = run.world_files() if cfg.n_worlds else []
        run.stage("closure", ("theta", "n_quantiles", "smoothing_window", "n_worlds"), data + worlds,
                  lambda: _stage_closure(run))
        if cfg.n_worlds > 0:
            run.stage("closure_logit", ("theta", "n_permutations", "permutation_subsample", "seed"), data + worlds,
                      lambda: _stage_closure_logit(run))
            run.stage("compare", ("theta", "kde_bandwidth"), data + worlds + ["census.csv"],
                      lambda: _stage_compare(run))
        run.stage("features", ("theta", "cutoff_year", "top_k", "horizon"), data + ["census.csv"],
                  lambda: _stage_features(run))
        run.stage("describe", ("lowess_frac",), ["features.csv"], lambda: _stage_describe(run))
        run.stage("models", (), ["features.csv"], lambda: _stage_models(run))
        fit_files = [f"fits/{name}.json" for name, *_ in MODELS]
        run.stage("margins", ("interaction_leader",), ["features.csv"] + fit_files, lambda: _stage_margins(run))
        return _finish(run, out, "run")
    except BaseException:
        shutil.rmtree(work, ignore_errors=True)
        raise


# --- robustness ----------------------------------------------------------


def _sweep_row(label: str, value, fits) -> tuple:
    return (label, value) + tuple(_coef_rows(fits))


def robustness_suite(cfg: PipelineConfig, out: str | Path) -> dict:
    """Refit the four models under each robustness variation.

    Writes, next to their own manifest: the threshold sweep, the cutoff
    sweep, the leader-exclusion refit (when a leader list is configured),
    the refit without closed-triad terms with its forbidden-density margins,
    and, when ``n_worlds > 0``, the rewiring window sweep.
    """
    cfg.validate()
    out = Path(out)
    work = _workdir(out)
    try:
        run = _Run(cfg, work, None)
        run.inputs = _input_digests(cfg)
        d = _load_input(cfg)
        ix = build_index(d)
        header = ("sweep", "value") + tuple(_coef_header([m[0] for m in MODELS]))

        def stage(name, fn):
            try:
                fn()
            except Exception as e:  # noqa: BLE001
                raise StageError(name, e) from e

        def theta_sweep():
            rows = []
            for t in cfg.theta_sweep:
                df = _features_table(d, ix, t, cfg.cutoff_year, cfg).to_frame()
                rows.append(_sweep_row("theta", t, fit_success_models(df)))
            write_csv(run.p("table7_theta_sweep.csv"), header, rows)

        base_census = observed_census(d, cfg.theta, ix)

        def cutoff_sweep():
            rows = []
            for c in cfg.cutoff_sweep:
                df = _features_table(d, ix, cfg.theta, c, cfg, censuses=base_census).to_frame()
                rows.append(_sweep_row("cutoff_year", c, fit_success_models(df)))
            write_csv(run.p("table8_cutoff_sweep.csv"), header, rows)

        def leader_exclusion():
            path = cfg.path("exclude_leaders_path")
            if path is None:
                run.notice("no exclude_leaders_path: leader-exclusion refit skipped")
                return
            leaders = read_leader_list(path)
            table = _features_table(d, ix, cfg.theta, cfg.cutoff_year, cfg, leaders, base_census)
            present = sorted(leaders & {s.leader_id for s in d})
            rows = [_sweep_row("excluded_leaders", len(present), fit_success_models(table.to_frame()))]
            write_csv(run.p("table8_leader_exclusion.csv"), header, rows)
            write_csv(run.p("leader_exclusion_counts.csv"), ("reason", "count"), table.exclusions.items())

        def no_closed():
            df = _features_table(d, ix, cfg.theta, cfg.cutoff_year, cfg, censuses=base_census).to_frame()
            regs = [r for r in REGRESSORS if not r.startswith("d_closed")]
            fits = fit_success_models(df, regs)
            write_csv(run.p("appendix_no_closed.csv"), header, [_sweep_row("closed_omitted", 1, fits)])
            write_csv(run.p("fig10_margins_no_closed.csv"), MARGINS_HEADER, margins_rows(fits, "d_forbidden", MARGIN_GRID))

        def window_sweep():
            if cfg.n_worlds == 0:
                run.notice("n_worlds = 0: rewiring window sweep skipped")
                return
            rows = []
            for wy in cfg.window_sweep:
                wcs, violations, infeasible = [], 0, 0
                for i in range(cfg.n_worlds):
                    w = generate_world(d, wy, stage_seed(cfg.seed, f"rewire_window_{wy}", i), ix, SPAN)
                    violations += verify_world(d, w, ix).total
                    infeasible += w.infeasible_slots
                    wcs.append(world_census(d, w, cfg.theta))
                run.seeds[f"rewire_window_{wy}"] = stage_seed(cfg.seed, f"rewire_window_{wy}", 0)
                cmp = compare_forbidden_densities(base_census, wcs)
                nz = cmp.difference[cmp.difference != 0]
                wx = wilcoxon_signed_rank(nz) if len(nz) else None
                ks = ks_two_sample(cmp.observed, cmp.rewired_mean) if len(cmp.session_ids) else None
                rows.append((wy, cfg.n_worlds, violations, infeasible / (cfg.n_worlds * d.n_slots),
                             len(cmp.session_ids), cmp.share_rewired_higher,
                             wx.z if wx else float("nan"), wx.p if wx else float("nan"),
                             ks.d if ks else float("nan"), ks.p if ks else float("nan")))
            write_csv(run.p("rewire_window_sweep.csv"),
                      ("window_years", "n_worlds", "violations", "infeasible_share", "n_sessions",
                       "share_rewired_higher", "wilcoxon_z", "wilcoxon_p", "ks_d", "ks_p"), rows)

        for name, fn in (("theta_sweep", theta_sweep), ("cutoff_sweep", cutoff_sweep),
                         ("leader_exclusion", leader_exclusion), ("no_closed", no_closed),
                         ("window_sweep", window_sweep)):
            stage(name, fn)
        return _finish(run, out, "robustness")
    except BaseException:
        shutil.rmtree(work, ignore_errors=True)
        raise
