"""Compare simulated hitting times with the inverse-Gaussian first-passage law.

A single indicator with fixed drift ``mu`` and noise ``sd`` started at 0
first reaches ``a`` after an inverse-Gaussian time with mean ``a / mu``.

    python3 demos/first_passage_check.py
"""

import numpy as np
from scipy import stats

from trackdeg import PosteriorSamples, Thresholds, WienerParams, hitting_time

mu, sd, a = 0.1, 0.3, 10.0
post = PosteriorSamples.from_point({0: WienerParams([mu], [sd])})
lam = a * a / sd ** 2
ig = stats.invgauss(mu=(a / mu) / lam, scale=lam)

for dt in (4.0, 2.0, 1.0, 0.5):
    r = hitting_time(post, 0, Thresholds([a]), start=[0.0], n_paths=20000, seed=1,
                     horizon=1e5, dt=dt)
    ks = stats.kstest(r.times, ig.cdf).statistic
    print(f"dt {dt:4.1f}: mean {r.times.mean():7.2f} (exact {a / mu:.0f}), "
          f"median {r.median:7.2f} (exact {ig.median():.2f}), KS {ks:.4f}")

qs = np.array([0.05, 0.25, 0.5, 0.75, 0.95])
print("quantiles (simulated, exact):")
for q, s, e in zip(qs, r.quantiles(qs), ig.ppf(qs)):
    print(f"  {q:.2f}: {s:7.2f} {e:7.2f}")
