"""Fit a small synthetic study and summarise forecasts and hitting times.

Run from the repository root::

    python3 demos/synthetic_study.py

Takes a few minutes on one core.
"""

import numpy as np

from trackdeg import (
    FitConfig,
    IdentificationConfig,
    ScenarioSpec,
    Thresholds,
    compare_models,
    fit,
    generate,
    hitting_time,
    identify,
    predictive_bands,
    validate,
)
from trackdeg.synthgen import block_correlation

LABELS = ("top_l", "top_r", "align_l", "align_r")


def main():
    spec = ScenarioSpec(n_segments=10, n_indicators=4, labels=LABELS, n_inspections=18,
                        interval=90, jitter=20, correlation=block_correlation(2, 0.8, 0.0),
                        tamping="threshold", tamping_threshold=12.0, seed=3)
    truth_ds, truth = generate(spec)
    # start from unflagged series, as if they came straight from ingest; tamping
    # is triggered by the worst indicator, so a clear drop in any one counts
    rule = IdentificationConfig(min_drop=1.5, require_all=False)
    ds = [identify(s.with_flags(None), rule) for s in truth_ds]
    found = {(s.segment_id, k) for s in ds for k in s.maintenance_intervals}
    print(f"tamping events: {len(truth.events())} injected, {len(found)} identified, "
          f"{len(found & truth.events())} in common")

    train = [s.head(s.n_obs - 3) for s in ds]
    cfg = FitConfig(n_chains=4, n_warmup=4000, n_draws=4000, seed=2)
    post = fit(train, cfg)
    print(f"max split R-hat on the truncated fit: {post.max_rhat():.3f}")
    rep = validate(post, ds, holdout_count=3, level=0.95, seed=3)
    print(f"held-out 95% band coverage: {rep.coverage:.2f} "
          f"(by indicator {np.round(rep.coverage_by_indicator, 2)})")

    full = fit(ds, cfg)
    multi_uni = fit(ds, FitConfig(n_chains=4, n_warmup=4000, n_draws=4000, seed=2,
                                  model_kind="univariate"))
    seg = ds[0]
    t_last = seg.times[-1]
    bands = predictive_bands(full, seg, horizon=t_last + 360, step=120, seed=4)
    print(f"\nsegment {seg.segment_id}: last inspection day {t_last:.0f}, "
          f"state {np.round(seg.observations[-1], 2)}")
    for j, t in enumerate(bands.times):
        lo, med, hi = bands.values[j, :, 0]
        print(f"  day {t:6.0f}  {LABELS[0]} median {med:5.2f}  95% band [{lo:5.2f}, {hi:5.2f}]")

    limits = Thresholds([14.0] * 4, "demo")
    ht = hitting_time(full, seg, limits, n_paths=5000, seed=5)
    print(f"\nmedian time to first threshold crossing: {ht.median:.0f} d "
          f"(SE {ht.median_se():.1f}), censored {ht.censored_fraction:.1%}")
    for lab, p in zip(LABELS, ht.first_hit_probabilities):
        print(f"  first crossing through {lab}: {p:.2f}")

    cmp = compare_models(full, multi_uni, seg, limits, n_paths=5000, seed=5)
    print(f"\nmedian hitting time, multivariate {cmp.multivariate.median:.0f} d, "
          f"univariate {cmp.univariate.median:.0f} d")


if __name__ == "__main__":
    main()
