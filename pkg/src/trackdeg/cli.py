"""Command-line pipeline: ingest, identify, fit, validate, predict, hit, compare, simulate.

Every stage reads and writes plain delimiter-separated files under the
output directory.  Exit codes: 0 success, 1 usage or configuration error,
2 data error, 3 convergence failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .config import OUT_ENV, PipelineConfig, load_config
from .errors import ConfigError, ConvergenceError, DataError, TrackDegError
from .ingest import build_series, load_summary
from .maintenance_id import identify_all, report
from .mcmc import PosteriorSamples, fit
from .predict import compare_models, hitting_time, predictive_bands, validate
from .synthgen import generate

logger = logging.getLogger("trackdeg")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CONVERGENCE = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    """Argument parser that exits with the usage code 1 instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must lie in [0, 2**64)")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="sectioned key-value configuration file")
    p.add_argument("--seed", type=_seed, metavar="U64", help="master seed (overrides [general] seed)")
    p.add_argument("--threads", type=_positive_int, default=1, metavar="N",
                   help="cap on worker threads (chains fitted in parallel); default 1")
    p.add_argument("--out", metavar="DIR",
                   help=f"output directory (default: ${OUT_ENV}, then [paths] out, then ./out)")
    p.add_argument("--force", action="store_true",
                   help="proceed despite failed convergence checks")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="trackdeg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND",
                                parser_class=_Parser)

    p = sub.add_parser("ingest", help="segment raw inspection samples into series.csv")
    p.add_argument("raw", help="raw samples: date, channel, position_m, deviation_mm")
    _common(p)

    p = sub.add_parser("identify", help="flag maintained intervals; writes series_flagged.csv")
    p.add_argument("series", help="segment-series file")
    p.add_argument("--work-orders", metavar="PATH", help="work-order file (segment_id, date)")
    _common(p)

    p = sub.add_parser("fit", help="hierarchical MCMC fit; writes posterior.csv, diagnostics.csv")
    p.add_argument("series", help="flagged segment-series file")
    p.add_argument("--holdout", type=int, metavar="N",
                   help="drop the last N inspections of each segment before fitting")
    p.add_argument("--model", choices=("multivariate", "univariate"),
                   help="model kind (overrides [fit] model_kind)")
    _common(p)

    p = sub.add_parser("validate", help="score held-out inspections; writes validation*.csv")
    p.add_argument("series", help="full segment-series file")
    p.add_argument("posterior", help="posterior fitted with the last N inspections held out")
    p.add_argument("--holdout", type=_positive_int, metavar="N",
                   help="held-out inspections per segment (default [predict] holdout_count)")
    _common(p)

    p = sub.add_parser("predict", help="predictive quantile bands; writes bands.csv")
    p.add_argument("series", help="segment-series file used for fitting")
    p.add_argument("posterior", help="posterior file")
    _common(p)

    p = sub.add_parser("hit", help="threshold hitting times; writes hit_*.csv")
    p.add_argument("series", help="segment-series file (last inspection is the start state)")
    p.add_argument("posterior", help="posterior file")
    _common(p)

    p = sub.add_parser("compare", help="multivariate vs univariate hitting times")
    p.add_argument("series", help="segment-series file")
    p.add_argument("multi", help="multivariate posterior file")
    p.add_argument("uni", help="univariate posterior file")
    _common(p)

    p = sub.add_parser("simulate", help="synthetic data from the [simulate] section")
    _common(p)
    return parser


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _require_files(*paths) -> None:
    for p in paths:
        if p is not None and not Path(p).is_file():
            raise ConfigError(f"input file not found: {p}")


def _outdir(cfg: PipelineConfig) -> Path:
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    return cfg.out_dir


def _selected(cfg: PipelineConfig, dataset, samples: PosteriorSamples):
    wanted = cfg.predict.get("segments")
    by_id = {s.segment_id: s for s in dataset}
    ids = wanted if wanted else [int(i) for i in samples.segment_ids if int(i) in by_id]
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise DataError(f"segments {missing} are not in the series file")
    return [by_id[i] for i in ids]


def _gate(samples: PosteriorSamples, force: bool) -> None:
    if not samples.check_converged(force=True):
        msg = f"posterior not converged (max split R-hat {samples.max_rhat():.3f} > 1.05)"
        if not force:
            raise ConvergenceError(msg + "; pass --force to continue")
        logger.warning("%s; continuing because of --force", msg)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_ingest(args, cfg: PipelineConfig) -> int:
    _require_files(args.raw)
    raws = io.read_raw(args.raw)
    indicators = cfg.indicators or tuple(sorted({c for r in raws for c in r.channels}))
    dataset, segd = build_series(raws, indicators, cfg.segmentation)
    if not dataset:
        raise DataError("no segment has complete indicator data")
    out = _outdir(cfg)
    io.write_series(out / "series.csv", dataset)
    summary = load_summary(segd)
    io.write_table(out / "ingest_summary.csv",
                   ["channel", "samples", "dropped_nan", "out_of_bounds", "spacing_violations"],
                   [(ch, v["samples"], v["dropped_nan"], v["out_of_bounds"], v["spacing_violations"])
                    for ch, v in sorted(summary.items())])
    print(f"ingest: {len(dataset)} segments, {sum(s.n_obs for s in dataset)} rows -> {out / 'series.csv'}")
    return EXIT_OK


def cmd_identify(args, cfg: PipelineConfig) -> int:
    wo_path = args.work_orders or cfg.work_orders
    _require_files(args.series, wo_path)
    dataset = io.read_series(args.series)
    cfg.identification.drops_for(dataset[0].n_indicators)
    work_orders = io.read_work_orders(wo_path) if wo_path else None
    flagged = identify_all(dataset, cfg.identification)
    rep = report(flagged, work_orders)
    out = _outdir(cfg)
    io.write_series(out / "series_flagged.csv", flagged)
    io.write_table(out / "identification_report.csv", ["quantity", "count"], rep.rows())
    io.write_table(out / "flagged_intervals.csv", ["segment_id", "k", "date"],
                   [(s.segment_id, k, io.format_time(s.times[k]))
                    for s in flagged for k in s.maintenance_intervals])
    print(f"identify: {rep.n_flagged} maintained intervals in {rep.n_segments} segments")
    return EXIT_OK


def cmd_fit(args, cfg: PipelineConfig) -> int:
    _require_files(args.series)
    if args.model:
        cfg.fit["model_kind"] = args.model
    holdout = cfg.holdout if args.holdout is None else args.holdout
    if holdout < 0:
        raise ConfigError("--holdout must be nonnegative")
    dataset = io.read_series(args.series)
    fc = cfg.fit_config(dataset[0].n_indicators, n_jobs=args.threads)
    if holdout:
        short = [s.segment_id for s in dataset if s.n_obs - holdout < 2]
        if short:
            raise DataError(f"segments {short} have too few inspections for holdout {holdout}")
        dataset = [s.head(s.n_obs - holdout) for s in dataset]
    if all(s.maint_flags is None for s in dataset):
        logger.warning("series carry no maintenance flags; run 'identify' first")
    samples = fit(dataset, fc)
    out = _outdir(cfg)
    samples.to_csv(out / "posterior.csv")
    diag = samples.diagnostics()
    params = samples.scalar_params()
    io.write_table(out / "diagnostics.csv", ["parameter", "mean", "sd", "split_rhat", "ess"],
                   [(n, float(np.mean(params[n])), float(np.std(params[n])),
                     float(d["split_rhat"]), float(d["ess"])) for n, d in diag.items()])
    worst = samples.max_rhat()
    print(f"fit: {len(params)} parameters, max split R-hat {worst:.4f} -> {out / 'posterior.csv'}")
    _gate(samples, args.force)
    return EXIT_OK


def cmd_validate(args, cfg: PipelineConfig) -> int:
    _require_files(args.series, args.posterior)
    h = args.holdout or cfg.predict["holdout_count"]
    dataset = io.read_series(args.series)
    samples = PosteriorSamples.from_csv(args.posterior)
    _gate(samples, args.force)
    dataset = _selected(cfg, dataset, samples)
    rep = validate(samples, dataset, h, level=cfg.predict["level"], seed=cfg.seed,
                   max_draws=cfg.predict["max_draws"], force=True)
    out = _outdir(cfg)
    io.write_table(out / "validation.csv",
                   ["segment_id", "k", "indicator", "observed", "lower", "upper", "inside", "crps"],
                   [(*r[:6], int(r[6]), r[7]) for r in rep.rows()])
    rows = [(lab, float(c), float(s)) for lab, c, s in
            zip(rep.labels, rep.coverage_by_indicator, rep.crps_by_indicator)]
    rows.append(("overall", rep.coverage, float(np.mean(rep.crps_by_indicator))))
    io.write_table(out / "validation_summary.csv", ["indicator", "coverage", "crps"], rows)
    print(f"validate: {rep.n_points} points, {rep.level:.0%} band coverage {rep.coverage:.3f}")
    return EXIT_OK


def cmd_predict(args, cfg: PipelineConfig) -> int:
    _require_files(args.series, args.posterior)
    dataset = io.read_series(args.series)
    samples = PosteriorSamples.from_csv(args.posterior)
    _gate(samples, args.force)
    p = cfg.predict
    rows = []
    for s in _selected(cfg, dataset, samples):
        b = predictive_bands(samples, s, s.times[-1] + p["horizon"], p["quantiles"],
                             step=p["step"], seed=(cfg.seed, s.segment_id),
                             max_draws=p["max_draws"], force=True)
        rows += [(s.segment_id, io.format_time(t), lab, q, v) for t, lab, q, v in b.rows()]
    out = _outdir(cfg)
    io.write_table(out / "bands.csv", ["segment_id", "time", "indicator", "quantile", "value"], rows)
    print(f"predict: {len(rows)} band values -> {out / 'bands.csv'}")
    return EXIT_OK


def _hit_tables(results, bins):
    summary, hist, first = [], [], []
    for sid, r in results:
        if r is None:
            summary.append((sid, "exceeded", 0, "", "", "", "", ""))
            continue
        q05, q50, q95 = r.quantiles([0.05, 0.5, 0.95])
        summary.append((sid, "ok", r.n_paths, r.censored_fraction, q05, q50, q95, r.tie_count))
        edges, counts = r.histogram(bins)
        hist += [(sid, float(a), float(b), int(c)) for a, b, c in zip(edges[:-1], edges[1:], counts)]
        first += [(sid, lab, float(p), float(f)) for lab, p, f in
                  zip(r.labels, r.first_hit_probabilities, r.first_hit_fractions)]
        first.append((sid, "censored", "", r.censored_fraction))
    return summary, hist, first


def _hit_kwargs(cfg: PipelineConfig, segment_id: int) -> dict:
    p = cfg.predict
    return dict(horizon=p["horizon"], n_paths=p["n_paths"], seed=(cfg.seed, segment_id),
                dt=p["dt"], force=True)


def _unless_exceeded(segment_id, call):
    """Run ``call``; a start state already past a threshold yields ``None``."""
    try:
        return call()
    except DataError as exc:
        if "already exceeds" in str(exc):
            logger.warning("segment %s: %s", segment_id, exc)
            return None
        raise


def cmd_hit(args, cfg: PipelineConfig) -> int:
    _require_files(args.series, args.posterior)
    cfg.require_thresholds()
    dataset = io.read_series(args.series)
    samples = PosteriorSamples.from_csv(args.posterior)
    _gate(samples, args.force)
    thr = cfg.thresholds
    results = [
        (s.segment_id, _unless_exceeded(s.segment_id, lambda s=s: hitting_time(
            samples, s, thr, **_hit_kwargs(cfg, s.segment_id))))
        for s in _selected(cfg, dataset, samples)
    ]
    summary, hist, first = _hit_tables(results, cfg.predict["bins"])
    out = _outdir(cfg)
    io.write_table(out / "hit_summary.csv",
                   ["segment_id", "status", "n_paths", "censored_fraction", "q05", "median",
                    "q95", "ties"], summary)
    io.write_table(out / "hit_histogram.csv", ["segment_id", "bin_lo", "bin_hi", "count"], hist)
    io.write_table(out / "first_hit.csv",
                   ["segment_id", "indicator", "probability", "fraction_of_paths"], first)
    print(f"hit: {len(results)} segments -> {out / 'hit_summary.csv'}")
    return EXIT_OK


def cmd_compare(args, cfg: PipelineConfig) -> int:
    _require_files(args.series, args.multi, args.uni)
    cfg.require_thresholds()
    dataset = io.read_series(args.series)
    multi = PosteriorSamples.from_csv(args.multi)
    uni = PosteriorSamples.from_csv(args.uni)
    _gate(multi, args.force)
    _gate(uni, args.force)
    qs = [0.05, 0.25, 0.5, 0.75, 0.95]
    rows, summary = [], []
    for s in _selected(cfg, dataset, multi):
        c = _unless_exceeded(s.segment_id, lambda s=s: compare_models(
            multi, uni, s, cfg.thresholds, quantiles=qs, **_hit_kwargs(cfg, s.segment_id)))
        if c is None:
            summary.append((s.segment_id, "exceeded", "", "", "", "", ""))
            continue
        rows += [(s.segment_id, *r) for r in c.rows()]
        summary.append((s.segment_id, "ok", c.multivariate.median, c.univariate.median,
                        c.median_difference, c.median_difference_se,
                        int(c.univariate.median <= c.multivariate.median)))
    out = _outdir(cfg)
    io.write_table(out / "comparison.csv", ["segment_id", "quantile", "multivariate", "univariate"], rows)
    io.write_table(out / "comparison_summary.csv",
                   ["segment_id", "status", "median_multivariate", "median_univariate",
                    "median_difference", "difference_se", "uni_le_multi"], summary)
    print(f"compare: {len(summary)} segments -> {out / 'comparison_summary.csv'}")
    return EXIT_OK


def cmd_simulate(args, cfg: PipelineConfig) -> int:
    spec = cfg.scenario()
    dataset, truth = generate(spec)
    out = _outdir(cfg)
    # same layout as ingest output: flags are left for identify; truth.csv has them
    io.write_series(out / "series.csv", [s.with_flags(None) for s in dataset])
    io.write_truth(out / "truth.csv", truth.records())
    io.write_work_orders(out / "work_orders.csv", truth.work_orders)
    print(f"simulate: {len(dataset)} segments -> {out / 'series.csv'}")
    return EXIT_OK


COMMANDS = {
    "ingest": cmd_ingest, "identify": cmd_identify, "fit": cmd_fit, "validate": cmd_validate,
    "predict": cmd_predict, "hit": cmd_hit, "compare": cmd_compare, "simulate": cmd_simulate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        cfg = load_config(args.config, seed=args.seed, out=args.out)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"trackdeg: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConvergenceError as exc:
        print(f"trackdeg: not converged: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (DataError, TrackDegError) as exc:
        print(f"trackdeg: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
