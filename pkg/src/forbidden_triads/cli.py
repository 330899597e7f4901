"""Command-line interface: ``forbidden-triads <command> ...``.

Exit codes: 0 success, 2 bad input or configuration, 3 failure while
computing (a pipeline stage or an estimator).
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .features import assemble_features, read_features, write_features
from .graph import build_index
from .pipeline import (
    CENSUS_HEADER,
    MARGINS_HEADER,
    REGRESSORS,
    ConfigError,
    StageError,
    census_rows,
    design_from_features,
    load_config,
    read_census,
    robustness_suite,
    run_pipeline,
    stage_seed,
    write_csv,
)
from .records import Dataset, RecordError, load_dataset, parse_records, read_dataset_dir, read_leader_list, write_dataset
from .rewire import BOTH, SPAN, generate_world, load_world, observed_census, verify_world
from .stats import (
    EstimationError,
    FitResult,
    fe_negbin_fit,
    fe_ols_fit,
    logit_fit,
    marginal_predictions,
    matched_closure_sample,
    negbin_fit,
    ols_fit,
    permutation_pvalues,
)
from .triads import closure_curve, pooled_triplets

EXIT_INPUT = 2
EXIT_FAILURE = 3


def parse_grid(text: str) -> np.ndarray:
    """``start:stop:step`` with ``stop`` included, or a comma list."""
    if ":" in text:
        try:
            start, stop, step = (float(v) for v in text.split(":"))
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad grid {text!r}; expected start:stop:step") from None
        if step <= 0 or stop < start:
            raise argparse.ArgumentTypeError("grid needs step > 0 and stop >= start")
        n = int(np.floor((stop - start) / step + 1e-9)) + 1
        return np.round(start + step * np.arange(n), 12)
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}") from None


def _worlds(d: Dataset, directory: Path):
    paths = sorted(directory.glob("world_*.csv"))
    if not paths:
        raise FileNotFoundError(f"no world_*.csv files in {directory}")
    return [load_world(d, p, p.with_suffix(".json")) for p in paths]


def _rewired_triplets(d: Dataset, worlds, theta: int):
    for i, w in enumerate(worlds):
        rd = w.to_dataset(d)
        yield from pooled_triplets(rd, build_index(rd), theta, f"rewired:{i}")


# --- commands ------------------------------------------------------------


def cmd_ingest(a) -> int:
    if a.sessions or a.personnel:
        if not (a.sessions and a.personnel):
            raise ValueError("--sessions and --personnel go together")
        d = load_dataset(a.sessions, a.personnel, a.records)
    elif a.records:
        d = Dataset(tuple(parse_records(Path(a.records).read_text(encoding="utf-8"))))
    else:
        raise ValueError("give --sessions and --personnel, or --records")
    write_dataset(d, a.out)
    print(f"{len(d.sessions)} sessions, {len(d.musicians)} musicians, {d.n_slots} slots -> {a.out}")
    return 0


def cmd_graph_weights(a) -> int:
    d = read_dataset_dir(a.dataset)
    s = d[a.session]
    as_of = s.year if a.as_of is None else a.as_of
    ix = build_index(d)
    ms = s.musicians
    rows = []
    for m in ms:
        rows.append([m] + [ix.prior_sessions(m, as_of) if m == o else ix.weight(m, o, as_of) for o in ms])
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["musician_id"] + list(ms))
    w.writerows(rows)
    return 0


def cmd_census(a) -> int:
    d = read_dataset_dir(a.dataset)
    c = observed_census(d, a.theta)
    write_csv(Path(a.out), CENSUS_HEADER, census_rows(d, c))
    return 0


def cmd_closure_curve(a) -> int:
    d = read_dataset_dir(a.dataset)
    if a.worlds:
        stream = _rewired_triplets(d, _worlds(d, Path(a.worlds)), a.theta)
    else:
        stream = pooled_triplets(d, build_index(d), a.theta)
    pts = closure_curve(stream, a.quantiles, a.window)
    write_csv(Path(a.out), ("quantile", "size", "mean_min_legs_weight", "closure_raw", "closure"), pts)
    return 0


def cmd_rewire(a) -> int:
    d = read_dataset_dir(a.dataset)
    ix = build_index(d)
    out = Path(a.out)
    rows = []
    for i in range(a.worlds):
        seed = stage_seed(a.seed, "rewire", i)
        w = generate_world(d, a.window, seed, ix, a.qualification)
        rep = verify_world(d, w, ix)
        w.save(d, out, f"world_{i:03d}")
        rows.append((i, seed, rep.c1_session_size, rep.c2_activity, rep.c3_qualification, rep.c4_uniqueness,
                     w.infeasible_slots, d.n_slots))
    write_csv(out / "constraints.csv",
              ("world", "seed", "c1_violations", "c2_violations", "c3_violations", "c4_violations",
               "infeasible_slots", "total_slots"), rows)
    bad = sum(r[2] + r[3] + r[4] + r[5] for r in rows)
    print(f"{a.worlds} worlds -> {out} ({bad} constraint violations)")
    return EXIT_FAILURE if bad else 0


def cmd_features(a) -> int:
    d = read_dataset_dir(a.dataset)
    censuses = read_census(Path(a.censuses), a.theta)
    leaders = read_leader_list(a.exclude_leaders) if a.exclude_leaders else None
    table = assemble_features(d, build_index(d), censuses, a.theta, a.cutoff, leaders, a.top_k, a.horizon,
                              a.log_offset)
    write_features(table, a.out)
    for reason, n in table.exclusions.items():
        print(f"excluded ({reason}): {n}")
    print(f"{len(table)} rows -> {a.out}")
    return 0


FITS = {("ols", False): ols_fit, ("ols", True): fe_ols_fit, ("nb", False): negbin_fit, ("nb", True): fe_negbin_fit}


def cmd_fit(a) -> int:
    df = read_features(a.features)
    regressors = a.regressors.split(",") if a.regressors else list(REGRESSORS)
    outcome = "log10_releases" if a.model == "ols" else "releases"
    fe = a.fixed_effects == "leader"
    fit = FITS[(a.model, fe)](design_from_features(df, outcome, regressors, fe))
    fit.save(a.out)
    summary = Path(a.summary) if a.summary else Path(a.out).with_suffix(".txt")
    summary.write_text(fit.summary_text(), encoding="utf-8")
    print(fit.summary_text(), end="")
    return 0


def cmd_permute(a) -> int:
    d = read_dataset_dir(a.dataset)
    observed = list(pooled_triplets(d, build_index(d), a.theta))
    rewired = list(_rewired_triplets(d, _worlds(d, Path(a.worlds)), a.theta))
    X = matched_closure_sample(observed, rewired, stage_seed(a.seed, "closure_logit", 0))
    fit = logit_fit(X)
    perm = permutation_pvalues(logit_fit, X, a.n, a.subsample if a.subsample < X.nobs else None,
                               stage_seed(a.seed, "closure_logit", 1), X.col("observed"))
    rows = [(c, fit[c], fit.se(c), fit.pvalue(c), perm.pvalue(c), float(np.exp(fit[c]))) for c in fit.columns]
    write_csv(Path(a.out), ("term", "coef", "se", "p_wald", "p_permutation", "odds_ratio"), rows)
    print(f"{perm.n_perm} permutations on {perm.nobs} rows, {perm.n_failed} failed -> {a.out}")
    return 0


def cmd_margins(a) -> int:
    fit = FitResult.load(a.fit)
    fixed = {}
    for item in a.fixed or ():
        name, _, value = item.partition("=")
        fixed[name] = float(value)
    m = marginal_predictions(fit, a.vary, a.grid, a.kind, fixed)
    rows = [(fit.model, a.vary, x, p, lo, hi) for x, p, lo, hi in zip(m.grid, m.prediction, m.ci_low, m.ci_high)]
    if a.out:
        write_csv(Path(a.out), MARGINS_HEADER, rows)
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(MARGINS_HEADER)
        w.writerows(rows)
    return 0


def cmd_pipeline(a) -> int:
    cfg = load_config(a.config)
    manifest = (run_pipeline if a.action == "run" else robustness_suite)(cfg, a.out)
    for note in manifest["notices"]:
        print(f"notice: {note}")
    print(f"{len(manifest['files'])} files -> {a.out} (config {manifest['config_digest'][:12]})")
    return 0


# --- parser --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="forbidden-triads", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="validate raw tables and write a dataset directory")
    s.add_argument("--sessions")
    s.add_argument("--personnel")
    s.add_argument("--records", help="text session records, alone or in addition to the tables")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ingest)

    g = sub.add_parser("graph", help="co-play graph queries")
    gsub = g.add_subparsers(dest="graph_command", required=True)
    s = gsub.add_parser("weights", help="print a session's co-play weight matrix as CSV")
    s.add_argument("--dataset", required=True)
    s.add_argument("--session", required=True)
    s.add_argument("--as-of", type=int, help="count sessions before this year (default: the session's year)")
    s.set_defaults(func=cmd_graph_weights)

    s = sub.add_parser("census", help="triad census of every session")
    s.add_argument("--dataset", required=True)
    s.add_argument("--theta", type=int, default=2)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_census)

    s = sub.add_parser("closure-curve", help="closure probability by minimal legs weight quantile")
    s.add_argument("--dataset", required=True)
    s.add_argument("--worlds", help="directory of rewired worlds; their pooled triads replace the observed ones")
    s.add_argument("--theta", type=int, default=2)
    s.add_argument("--quantiles", type=int, default=10_000)
    s.add_argument("--window", type=int, default=100)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_closure_curve)

    s = sub.add_parser("rewire", help="generate rewired worlds")
    s.add_argument("--dataset", required=True)
    s.add_argument("--worlds", type=int, default=100)
    s.add_argument("--window", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--qualification", choices=(SPAN, BOTH), default=SPAN)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_rewire)

    s = sub.add_parser("features", help="assemble the regression table")
    s.add_argument("--dataset", required=True)
    s.add_argument("--censuses", required=True)
    s.add_argument("--theta", type=int, default=2)
    s.add_argument("--cutoff", type=int, default=2000)
    s.add_argument("--exclude-leaders")
    s.add_argument("--top-k", type=int, default=200)
    s.add_argument("--horizon", type=int, default=5)
    s.add_argument("--log-offset", type=int, default=0, choices=(0, 1))
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_features)

    s = sub.add_parser("fit", help="fit a success model on a features table")
    s.add_argument("--features", required=True)
    s.add_argument("--model", choices=("ols", "nb"), required=True)
    s.add_argument("--fixed-effects", choices=("leader",))
    s.add_argument("--regressors", help="comma-separated; squares as <name>_sq, products as a__x__b")
    s.add_argument("--out", required=True)
    s.add_argument("--summary", help="flat key = value summary (default: --out with .txt)")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("permute", help="closure logit with permutation p-values")
    s.add_argument("--dataset", required=True)
    s.add_argument("--worlds", required=True, help="directory written by `rewire`")
    s.add_argument("--theta", type=int, default=2)
    s.add_argument("--n", type=int, default=10_000)
    s.add_argument("--subsample", type=int, default=500_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_permute)

    s = sub.add_parser("margins", help="marginal predictions from a saved fit")
    s.add_argument("--fit", required=True)
    s.add_argument("--vary", default="d_forbidden")
    s.add_argument("--grid", type=parse_grid, default=parse_grid("0:1:0.01"))
    s.add_argument("--kind", choices=("identity", "log", "logit"))
    s.add_argument("--fixed", action="append", metavar="NAME=VALUE")
    s.add_argument("--out")
    s.set_defaults(func=cmd_margins)

    s = sub.add_parser("pipeline", help="run the whole analysis from a config file")
    s.add_argument("action", choices=("run", "robustness"))
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except StageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILURE
    except (EstimationError, np.linalg.LinAlgError) as e:
        print(f"estimation failed: {e}", file=sys.stderr)
        return EXIT_FAILURE
    except (RecordError, KeyError, ValueError, OSError) as e:
        print(f"input error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
