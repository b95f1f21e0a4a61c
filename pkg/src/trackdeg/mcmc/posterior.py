"""Container and columnar text format for posterior draws.

The file has ``#``-prefixed metadata lines followed by a CSV table with one
row per draw.  Columns are ``chain``, ``draw`` and one per scalar parameter::

    mu[i][q]  sigma[i][q]  R[i][q1][q2]  zplus[i][k][q]
    hyper.s_mu[q]  hyper.s_sigma[q]  hyper.m_z[q]  hyper.s_z[q]

where ``i`` is the segment id, ``q`` an indicator index, ``k`` the index of
the inspection closing a maintained interval, and ``q1 < q2``.
"""

from __future__ import annotations

import io
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from ..core_model import WienerParams
from ..errors import ConvergenceError, DataError
from . import diagnostics as diag

HYPER_NAMES = ("s_mu", "s_sigma", "m_z", "s_z")
_COL = re.compile(r"^(mu|sigma|R|zplus|hyper\.\w+)((?:\[-?\d+\])+)$")


def _fmt(x: float) -> str:
    return repr(float(x))


@dataclass
class PosteriorSamples:
    """Posterior draws indexed by ``(chain, draw, ...)``.

    Attributes
    ----------
    mu, sigma : ndarray, shape (C, N, S, Q)
    corr : ndarray, shape (C, N, S, Q, Q)
        Identity for univariate fits.
    zplus : ndarray, shape (C, N, E, Q)
    event_keys : list of (segment_id, k)
    s_mu, s_sigma, m_z, s_z : ndarray, shape (C, N, Q)
    accept_rates : dict of str to ndarray
        Post-warmup acceptance rate per block and chain.
    """

    segment_ids: np.ndarray
    labels: tuple[str, ...]
    model_kind: str
    mu: np.ndarray
    sigma: np.ndarray
    corr: np.ndarray
    zplus: np.ndarray
    event_keys: list
    s_mu: np.ndarray
    s_sigma: np.ndarray
    m_z: np.ndarray
    s_z: np.ndarray
    eta: float = 1.0
    accept_rates: dict = field(default_factory=dict)
    _diag: dict | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.segment_ids = np.asarray(self.segment_ids, dtype=int)
        self.labels = tuple(self.labels)
        self.event_keys = [(int(a), int(b)) for a, b in self.event_keys]
        self._seg_index = {int(s): i for i, s in enumerate(self.segment_ids)}

    # ------------------------------------------------------------------
    @property
    def n_chains(self) -> int:
        return self.mu.shape[0]

    @property
    def n_draws(self) -> int:
        return self.mu.shape[1]

    @property
    def n_indicators(self) -> int:
        return self.mu.shape[-1]

    def segment_index(self, segment_id: int) -> int:
        try:
            return self._seg_index[int(segment_id)]
        except KeyError:
            raise DataError(f"segment {segment_id} not in posterior") from None

    def segment_draws(self, segment_id: int):
        """Flattened ``(mu, sigma, corr)`` draws of one segment, chain-major."""
        i = self.segment_index(segment_id)
        m = self.n_chains * self.n_draws
        q = self.n_indicators
        return (
            self.mu[:, :, i].reshape(m, q),
            self.sigma[:, :, i].reshape(m, q),
            self.corr[:, :, i].reshape(m, q, q),
        )

    def hyper_draws(self):
        m = self.n_chains * self.n_draws
        q = self.n_indicators
        return {n: getattr(self, n).reshape(m, q) for n in HYPER_NAMES}

    def zplus_draws(self, segment_id: int, k: int) -> np.ndarray:
        j = self.event_keys.index((int(segment_id), int(k)))
        return self.zplus[:, :, j].reshape(-1, self.n_indicators)

    # ------------------------------------------------------------------
    def scalar_params(self) -> dict[str, np.ndarray]:
        """Ordered mapping of column name to draws of shape (C, N)."""
        out: dict[str, np.ndarray] = {}
        nq = self.n_indicators
        for i, sid in enumerate(self.segment_ids):
            for q in range(nq):
                out[f"mu[{sid}][{q}]"] = self.mu[:, :, i, q]
        for i, sid in enumerate(self.segment_ids):
            for q in range(nq):
                out[f"sigma[{sid}][{q}]"] = self.sigma[:, :, i, q]
        if self.model_kind == "multivariate":
            for i, sid in enumerate(self.segment_ids):
                for q1 in range(nq):
                    for q2 in range(q1 + 1, nq):
                        out[f"R[{sid}][{q1}][{q2}]"] = self.corr[:, :, i, q1, q2]
        for j, (sid, k) in enumerate(self.event_keys):
            for q in range(nq):
                out[f"zplus[{sid}][{k}][{q}]"] = self.zplus[:, :, j, q]
        for name in HYPER_NAMES:
            arr = getattr(self, name)
            for q in range(nq):
                out[f"hyper.{name}[{q}]"] = arr[:, :, q]
        return out

    def diagnostics(self) -> dict[str, dict[str, float]]:
        """Split R-hat and effective sample size per scalar parameter."""
        if self._diag is None:
            self._diag = diag.summarize(self.scalar_params())
        return self._diag

    def max_rhat(self) -> float:
        return max(d["split_rhat"] for d in self.diagnostics().values())

    def check_converged(self, threshold: float = 1.05, force: bool = False) -> bool:
        """Raise :class:`ConvergenceError` if any R-hat exceeds ``threshold``.

        With ``force`` the check only reports; returns whether it passed.
        """
        worst = self.max_rhat()
        ok = bool(worst <= threshold)
        if not ok and not force:
            raise ConvergenceError(
                f"max split R-hat {worst:.3f} exceeds {threshold}; "
                "run longer chains or pass force=True"
            )
        return ok

    # ------------------------------------------------------------------
    @classmethod
    def from_point(
        cls,
        params: Mapping[int, WienerParams],
        labels=None,
        n_chains: int = 2,
        n_draws: int = 4,
        model_kind: str = "multivariate",
        hyper=None,
    ) -> "PosteriorSamples":
        """Degenerate posterior concentrated on fixed parameters.

        ``hyper`` is an optional :class:`~trackdeg.priors.Hyperparams`; its
        ``m_z`` and ``s_z`` drive post-tamping draws in predictions.
        """
        ids = sorted(int(k) for k in params)
        first = params[ids[0]]
        nq = first.n_indicators
        shape = (n_chains, n_draws)
        mu = np.empty(shape + (len(ids), nq))
        sigma = np.empty_like(mu)
        corr = np.empty(shape + (len(ids), nq, nq))
        for i, sid in enumerate(ids):
            p = params[sid]
            mu[:, :, i] = p.drift
            sigma[:, :, i] = p.marginal_sd
            corr[:, :, i] = p.correlation
        hyp = {}
        for name in HYPER_NAMES:
            val = np.ones(nq) if hyper is None else getattr(hyper, name)
            hyp[name] = np.broadcast_to(np.asarray(val, float), shape + (nq,)).copy()
        labels = tuple(labels) if labels else tuple(f"z{q}" for q in range(nq))
        return cls(
            np.array(ids), labels, model_kind, mu, sigma, corr,
            np.zeros(shape + (0, nq)), [], eta=1.0 if hyper is None else hyper.eta,
            **hyp,
        )

    # ------------------------------------------------------------------
    def to_csv(self, path_or_buf) -> None:
        cols = self.scalar_params()
        names = list(cols)
        c, n = self.n_chains, self.n_draws
        table = np.empty((c * n, len(names)))
        for j, name in enumerate(names):
            table[:, j] = cols[name].reshape(-1)
        lines = [
            f"# model_kind={self.model_kind}",
            f"# labels={','.join(self.labels)}",
            f"# eta={_fmt(self.eta)}",
            f"# segments={','.join(str(s) for s in self.segment_ids)}",
        ]
        for block, rates in sorted(self.accept_rates.items()):
            lines.append(f"# accept.{block}={';'.join(_fmt(r) for r in np.ravel(rates))}")
        lines.append(",".join(["chain", "draw"] + names))
        for row in range(c * n):
            lines.append(
                f"{row // n},{row % n}," + ",".join(map(_fmt, table[row]))
            )
        text = "\n".join(lines) + "\n"
        if hasattr(path_or_buf, "write"):
            path_or_buf.write(text)
        else:
            Path(path_or_buf).write_text(text)

    @classmethod
    def from_csv(cls, path_or_buf) -> "PosteriorSamples":
        if hasattr(path_or_buf, "read"):
            text = path_or_buf.read()
        else:
            text = Path(path_or_buf).read_text()
        meta = {}
        body = []
        for line in text.splitlines():
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                meta[key] = val
            elif line.strip():
                body.append(line)
        if not body:
            raise DataError("posterior file has no header")
        header = body[0].split(",")
        if header[:2] != ["chain", "draw"]:
            raise DataError("posterior file must start with chain,draw columns")
        data = np.loadtxt(io.StringIO("\n".join(body[1:])), delimiter=",", ndmin=2)
        if data.size == 0:
            raise DataError("posterior file has no draws")
        chain = data[:, 0].astype(int)
        draw = data[:, 1].astype(int)
        c, n = chain.max() + 1, draw.max() + 1
        if data.shape[0] != c * n:
            raise DataError("posterior file is not a full chain x draw grid")
        order = np.lexsort((draw, chain))
        data = data[order]
        labels = tuple(meta.get("labels", "").split(",")) if meta.get("labels") else ()
        model_kind = meta.get("model_kind", "multivariate")
        segs = [int(s) for s in meta["segments"].split(",")] if meta.get("segments") else []
        parsed = []
        for j, name in enumerate(header[2:], start=2):
            m = _COL.match(name)
            if not m:
                raise DataError(f"unrecognised posterior column {name!r}")
            idx = [int(v) for v in re.findall(r"\[(-?\d+)\]", m.group(2))]
            parsed.append((m.group(1), idx, data[:, j].reshape(c, n)))
        nq = len(labels) if labels else 1 + max(
            idx[-1] for kind, idx, _ in parsed if kind in ("mu", "sigma"))
        if not labels:
            labels = tuple(f"z{q}" for q in range(nq))
        if not segs:
            segs = sorted({idx[0] for kind, idx, _ in parsed if kind == "mu"})
        seg_index = {s: i for i, s in enumerate(segs)}
        events = []
        for kind, idx, _ in parsed:
            if kind == "zplus" and (idx[0], idx[1]) not in events:
                events.append((idx[0], idx[1]))
        ev_index = {e: i for i, e in enumerate(events)}
        shape = (c, n)
        mu = np.zeros(shape + (len(segs), nq))
        sigma = np.zeros_like(mu)
        corr = np.broadcast_to(np.eye(nq), shape + (len(segs), nq, nq)).copy()
        zplus = np.zeros(shape + (len(events), nq))
        hyp = {h: np.zeros(shape + (nq,)) for h in HYPER_NAMES}
        for kind, idx, vals in parsed:
            if kind == "mu":
                mu[:, :, seg_index[idx[0]], idx[1]] = vals
            elif kind == "sigma":
                sigma[:, :, seg_index[idx[0]], idx[1]] = vals
            elif kind == "R":
                i = seg_index[idx[0]]
                corr[:, :, i, idx[1], idx[2]] = vals
                corr[:, :, i, idx[2], idx[1]] = vals
            elif kind == "zplus":
                zplus[:, :, ev_index[(idx[0], idx[1])], idx[2]] = vals
            else:
                hyp[kind.split(".", 1)[1]][:, :, idx[0]] = vals
        accept = {}
        for key, val in meta.items():
            if key.startswith("accept."):
                accept[key[len("accept."):]] = np.array([float(v) for v in val.split(";")])
        return cls(
            np.array(segs), labels, model_kind, mu, sigma, corr, zplus, events,
            eta=float(meta.get("eta", 1.0)), accept_rates=accept, **hyp,
        )
