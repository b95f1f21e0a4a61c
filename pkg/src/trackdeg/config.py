"""Pipeline configuration from a sectioned key-value file.

Example::

    [general]
    seed = 7

    [segmentation]
    segment_length = 100
    indicators = top_l, top_r, align_l, align_r

    [fit]
    n_chains = 4
    n_warmup = 2000

    [thresholds]
    label = M1
    limits = 10, 10, 8, 8

Unknown sections or keys and malformed values are reported together with
the line they appear on.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, TrackDegError
from .ingest import SegmentationConfig
from .maintenance_id import IdentificationConfig
from .mcmc.sampler import FitConfig
from .predict import DEFAULT_HORIZON, Thresholds
from .priors import Hyperparams, HyperpriorConfig
from .synthgen import ScenarioSpec, block_correlation, default_hyper

OUT_ENV = "TRACKDEG_OUT"

# key -> parser; "list" values are comma separated
_SCHEMA = {
    "general": {"seed": "int"},
    "paths": {"out": "str", "work_orders": "str"},
    "segmentation": {
        "segment_length": "float", "statistic": "str", "track_start": "float",
        "track_end": "float", "spacing": "float", "spacing_tol": "float",
        "indicators": "strlist",
    },
    "identification": {"min_drop": "floatlist", "require_all": "bool"},
    "fit": {
        "n_chains": "int", "n_warmup": "int", "n_draws": "int", "target_accept": "float",
        "model_kind": "str", "thin": "int", "hyper_substeps": "int", "holdout": "int",
    },
    "hyperprior": {
        "a_mu": "floatlist", "b_mu": "floatlist", "a_sigma": "floatlist",
        "b_sigma": "floatlist", "M_z": "floatlist", "S_z": "floatlist",
        "a_z": "floatlist", "b_z": "floatlist", "eta": "float",
    },
    "thresholds": {"label": "str", "limits": "floatlist"},
    "predict": {
        "horizon": "float", "step": "float", "quantiles": "floatlist",
        "holdout_count": "int", "level": "float", "n_paths": "int", "dt": "float",
        "max_draws": "int", "segments": "intlist", "bins": "int",
    },
    "simulate": {
        "n_segments": "int", "n_indicators": "int", "labels": "strlist",
        "n_inspections": "int", "interval": "float", "jitter": "int",
        "within": "float", "cross": "float", "eta": "float", "start": "floatlist",
        "tamping": "str", "tamping_threshold": "float", "tamping_schedule": "intlist",
        "zplus_dist": "str", "ineffective_fraction": "float",
        "s_mu": "floatlist", "s_sigma": "floatlist", "m_z": "floatlist", "s_z": "floatlist",
    },
}


def _parse_value(kind: str, text: str):
    text = text.strip()
    if kind == "str":
        return text
    if kind == "int":
        return int(text)
    if kind == "float":
        return float(text)
    if kind == "bool":
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    items = [t.strip() for t in text.split(",") if t.strip()]
    if kind == "strlist":
        return tuple(items)
    if kind == "floatlist":
        return [float(t) for t in items]
    if kind == "intlist":
        return [int(t) for t in items]
    raise AssertionError(kind)


def _line_index(text: str) -> dict:
    """Map ``(section, key)`` and ``(section, None)`` to 1-based line numbers."""
    index = {}
    section = None
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            index.setdefault((section, None), n)
        elif section is not None:
            for sep in ("=", ":"):
                if sep in line:
                    index.setdefault((section, line.split(sep, 1)[0].strip()), n)
                    break
    return index


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Validate and convert a config file into ``{section: {key: value}}``."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        lineno = getattr(exc, "lineno", None)
        if lineno is None and getattr(exc, "errors", None):
            lineno = exc.errors[0][0]
        loc = f"{source}:{lineno}" if lineno else source
        msg = str(exc).splitlines()[0]
        raise ConfigError(f"{loc}: {msg}") from None
    lines = _line_index(text)
    out: dict = {}
    for section in cp.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"{source}:{lines.get((section, None), '?')}: unknown section [{section}]")
        out[section] = {}
        for key, raw in cp.items(section):
            where = f"{source}:{lines.get((section, key), '?')}"
            kind = _SCHEMA[section].get(key)
            if kind is None:
                raise ConfigError(f"{where}: unknown key {key!r} in [{section}]")
            try:
                out[section][key] = _parse_value(kind, raw)
            except ValueError as exc:
                raise ConfigError(f"{where}: bad value for {key!r}: {exc}") from None
    return out


@dataclass
class PipelineConfig:
    """Every stage's settings, built and validated before any output is written."""

    source: str = "<defaults>"
    seed: int = 0
    out_dir: Path = Path("out")
    work_orders: Path | None = None
    indicators: tuple = ()
    segmentation: SegmentationConfig = field(default_factory=SegmentationConfig)
    identification: IdentificationConfig = field(default_factory=IdentificationConfig)
    fit: dict = field(default_factory=dict)
    hyperprior: dict = field(default_factory=dict)
    thresholds: Thresholds | None = None
    predict: dict = field(default_factory=dict)
    simulate: dict = field(default_factory=dict)

    def fit_config(self, n_indicators: int, n_jobs: int = 1) -> FitConfig:
        kw = {k: v for k, v in self.fit.items() if k != "holdout"}
        hp = self.hyperprior_config(n_indicators)
        try:
            return FitConfig(seed=self.seed, hyperprior=hp, n_jobs=n_jobs, **kw)
        except TrackDegError as exc:
            raise ConfigError(f"{self.source} [fit]: {exc}") from None

    def hyperprior_config(self, n_indicators: int) -> HyperpriorConfig:
        try:
            return HyperpriorConfig(n_indicators=n_indicators, **self.hyperprior).strict()
        except (TrackDegError, ValueError) as exc:
            raise ConfigError(f"{self.source} [hyperprior]: {exc}") from None

    @property
    def holdout(self) -> int:
        return int(self.fit.get("holdout", 0))

    def require_thresholds(self) -> Thresholds:
        if self.thresholds is None:
            raise ConfigError(f"{self.source}: a [thresholds] section with limits is required")
        return self.thresholds

    def scenario(self) -> ScenarioSpec:
        sim = dict(self.simulate)
        n = int(sim.pop("n_indicators", 4))
        within = sim.pop("within", None)
        cross = sim.pop("cross", 0.0)
        hyper_kw = {k: sim.pop(k) for k in ("s_mu", "s_sigma", "m_z", "s_z") if k in sim}
        try:
            corr = None
            if within is not None:
                if n % 2:
                    raise ConfigError("block correlation needs an even n_indicators")
                corr = block_correlation(n // 2, within, cross)
            hyper = None
            if hyper_kw:
                base = default_hyper(n)
                vals = {k: hyper_kw.get(k, getattr(base, k)) for k in ("s_mu", "s_sigma", "m_z", "s_z")}
                vals = {k: np.broadcast_to(np.asarray(v, float), (n,)).copy() for k, v in vals.items()}
                hyper = Hyperparams(**vals)
            return ScenarioSpec(n_indicators=n, correlation=corr, hyper=hyper, seed=self.seed, **sim)
        except (TrackDegError, ValueError, TypeError) as exc:
            raise ConfigError(f"{self.source} [simulate]: {exc}") from None


def build_config(values: dict, source: str = "<config>", seed=None, out=None) -> PipelineConfig:
    """Assemble a :class:`PipelineConfig`; ``seed`` and ``out`` override the file."""
    cfg = PipelineConfig(source=source)
    try:
        cfg.seed = int(values.get("general", {}).get("seed", 0) if seed is None else seed)
        if not 0 <= cfg.seed < 2 ** 64:
            raise ConfigError("seed must lie in [0, 2**64)")
        paths = values.get("paths", {})
        out = out or os.environ.get(OUT_ENV) or paths.get("out") or "out"
        cfg.out_dir = Path(out)
        if "work_orders" in paths:
            cfg.work_orders = Path(paths["work_orders"])
        seg = dict(values.get("segmentation", {}))
        cfg.indicators = tuple(seg.pop("indicators", ()))
        cfg.segmentation = SegmentationConfig(**seg)
        cfg.identification = IdentificationConfig(**values.get("identification", {}))
        cfg.fit = dict(values.get("fit", {}))
        cfg.hyperprior = dict(values.get("hyperprior", {}))
        FitConfig(**{k: v for k, v in cfg.fit.items() if k != "holdout"})
        if cfg.holdout < 0:
            raise ConfigError("holdout must be nonnegative")
        thr = values.get("thresholds")
        if thr:
            if "limits" not in thr:
                raise ConfigError("[thresholds] needs limits")
            cfg.thresholds = Thresholds(thr["limits"], thr.get("label", "custom"))
        cfg.predict = {"horizon": DEFAULT_HORIZON, "step": 30.0, "quantiles": [0.025, 0.5, 0.975],
                       "holdout_count": 3, "level": 0.95, "n_paths": 10000, "dt": 1.0,
                       "max_draws": None, "segments": None, "bins": 50}
        cfg.predict.update(values.get("predict", {}))
        p = cfg.predict
        if p["horizon"] <= 0 or p["step"] <= 0 or p["dt"] <= 0 or p["n_paths"] < 1 or p["bins"] < 1:
            raise ConfigError("[predict] horizon, step, dt, n_paths and bins must be positive")
        if not all(0 < q < 1 for q in p["quantiles"]) or not 0 < p["level"] < 1:
            raise ConfigError("[predict] quantiles and level must lie in (0, 1)")
        cfg.simulate = dict(values.get("simulate", {}))
    except ConfigError as exc:
        msg = str(exc)
        raise ConfigError(msg if msg.startswith(source) else f"{source}: {msg}") from None
    except (TrackDegError, ValueError, TypeError) as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return cfg


def load_config(path=None, seed=None, out=None) -> PipelineConfig:
    if path is None:
        return build_config({}, seed=seed, out=out)
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return build_config(parse_config_text(p.read_text(), str(p)), str(p), seed, out)
