"""Dataset generation: sample, evaluate, filter, normalize and persist.

Files written for a dataset named ``name``:

``name.jsonl``
    one JSON object per entry with keys ``cond``, ``x``, ``raw_metrics``,
    ``raw_g`` and ``raw_q``, ordered by sample index.
``name.meta.json``
    the :class:`DatasetMeta` record (sampler config, filter thresholds,
    normalizer states and discard counts).
"""
import json
import logging
import os
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import metrics
from .metrics import MetricError, evaluate_pair
from .sampler import DOMAIN_DATASET, SampleConfig, sample_pair

log = logging.getLogger(__name__)

FORMAT_VERSION = "v1"
FROZEN_STD = 1e-8
N_PLANT = 6
N_METRIC = 2
COND_DIM = N_PLANT + N_METRIC
X_DIM = 6

DISCARD_RULES = ("s_inf", "t_settle", "not_settled", "degenerate", "overflow", "trim_3sigma")

_BATCH = 4096
_WINDOW = 100_000
_MIN_RATE = 1e-3


class AcceptanceTooLow(RuntimeError):
    pass


@dataclass(frozen=True)
class Thresholds:
    s_inf_max: float = 2.0
    t_settle_max: float = 20.0
    v_min: float = metrics.V_MIN
    horizon: float = metrics.HORIZON
    dt: float = metrics.DT
    band: float = metrics.SETTLE_BAND
    trim_sigma: float = 3.0


@dataclass(frozen=True, eq=False)
class Normalizer:
    """Per-feature ``log1p`` (optional) followed by standardization.

    Frozen features (near-zero spread) pass through untouched in both
    directions.
    """

    apply_log: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    frozen: np.ndarray

    @property
    def width(self):
        return self.mean.size

    def _check(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape[-1] != self.width:
            raise ValueError(f"expected width {self.width}, got {v.shape[-1]}")
        return v

    def apply(self, v):
        v = self._check(v)
        u = np.where(self.apply_log, np.log1p(np.where(self.apply_log, v, 0.0)), v)
        z = (u - self.mean) / np.where(self.frozen, 1.0, self.std)
        return np.where(self.frozen, v, z)

    def invert(self, z):
        z = self._check(z)
        u = z * np.where(self.frozen, 1.0, self.std) + self.mean
        v = np.where(self.apply_log, np.expm1(np.where(self.apply_log, u, 0.0)), u)
        return np.where(self.frozen, z, v)

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in ("apply_log", "mean", "std", "frozen")}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["apply_log"], bool), np.array(d["mean"], float),
                   np.array(d["std"], float), np.array(d["frozen"], bool))


def normalize_fit(values, apply_log=None):
    """Fit a :class:`Normalizer` on an ``(n_samples, n_features)`` array."""
    values = np.asarray(values, dtype=float)
    if values.ndim != 2 or values.shape[0] < 2:
        raise ValueError("need at least 2 samples per feature")
    if not np.all(np.isfinite(values)):
        raise ValueError("non-finite values in normalizer fit")
    flags = np.zeros(values.shape[1], bool) if apply_log is None else np.asarray(apply_log, bool)
    u = np.where(flags, np.log1p(np.where(flags, values, 0.0)), values)
    mean = u.mean(axis=0)
    std = u.std(axis=0, ddof=1)
    return Normalizer(flags, mean, std, std < FROZEN_STD)


def normalize_apply(n, v):
    return n.apply(v)


def normalize_invert(n, v):
    return n.invert(v)


@dataclass(frozen=True)
class DatasetEntry:
    cond: np.ndarray
    x: np.ndarray
    raw_metrics: metrics.MetricsVector
    raw_g: np.ndarray
    raw_q: np.ndarray


@dataclass
class DatasetMeta:
    sample_config: SampleConfig
    thresholds: Thresholds
    cond_norm: Normalizer
    x_norm: Normalizer
    attempted: int
    discarded: dict
    kept: int
    metric_mean: list = field(default_factory=list)
    metric_std: list = field(default_factory=list)
    format_version: str = FORMAT_VERSION

    def to_dict(self):
        return {
            "format_version": self.format_version,
            "sample_config": self.sample_config.to_dict(),
            "thresholds": asdict(self.thresholds),
            "normalizers": {"cond": self.cond_norm.to_dict(), "x": self.x_norm.to_dict()},
            "counts": {"attempted": self.attempted, "discarded": dict(self.discarded),
                       "kept": self.kept},
            "metric_mean": list(self.metric_mean),
            "metric_std": list(self.metric_std),
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported dataset format {d.get('format_version')!r}")
        c = d["counts"]
        return cls(SampleConfig.from_dict(d["sample_config"]), Thresholds(**d["thresholds"]),
                   Normalizer.from_dict(d["normalizers"]["cond"]),
                   Normalizer.from_dict(d["normalizers"]["x"]),
                   c["attempted"], dict(c["discarded"]), c["kept"],
                   d.get("metric_mean", []), d.get("metric_std", []))


@dataclass(eq=False)
class Dataset:
    """Column-major view of the kept entries (row ``i`` is one :class:`DatasetEntry`)."""

    cond: np.ndarray
    x: np.ndarray
    raw_metrics: np.ndarray
    raw_g: np.ndarray
    raw_q: np.ndarray
    meta: DatasetMeta

    def __len__(self):
        return self.x.shape[0]

    def __getitem__(self, i):
        return DatasetEntry(self.cond[i], self.x[i],
                            metrics.MetricsVector(*map(float, self.raw_metrics[i])),
                            self.raw_g[i], self.raw_q[i])


def classify_pair(G, Q, th=Thresholds()):
    """Metrics of one pair, or the name of the discard rule it trips."""
    try:
        m = evaluate_pair(G, Q, th.horizon, th.dt, th.band, th.v_min)
    except metrics.DegenerateTracking:
        return "degenerate"
    except metrics.NotSettled:
        return "not_settled"
    except MetricError:
        return "overflow"
    if not (np.isfinite(m.s_inf) and np.isfinite(m.t_settle)):
        return "overflow"
    if m.s_inf > th.s_inf_max:
        return "s_inf"
    if m.t_settle > th.t_settle_max:
        return "t_settle"
    return m


def _evaluate_range(args):
    cfg, th, start, stop, domain = args
    out = []
    for i in range(start, stop):
        G, Q = sample_pair(cfg, cfg.seed, i, domain)
        r = classify_pair(G, Q, th)
        if isinstance(r, str):
            out.append((i, r, None, None, None))
        else:
            out.append((i, "kept", G.coeffs(), Q.coeffs(), r.as_array()))
    return out


def n_workers():
    env = os.environ.get("YDG_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def iter_feasible(cfg, th=Thresholds(), domain=DOMAIN_DATASET, start=0, workers=None,
                  batch=_BATCH):
    """Yield ``(index, status, g6, q6, metrics)`` for indices ``start, start+1, ...``.

    Output order is the index order regardless of ``workers``.
    """
    workers = workers or n_workers()
    pool = ProcessPoolExecutor(workers) if workers > 1 else None
    try:
        lo = start
        while True:
            if pool is None:
                yield from _evaluate_range((cfg, th, lo, lo + batch, domain))
            else:
                step = -(-batch // workers)
                jobs = [(cfg, th, a, min(a + step, lo + batch), domain)
                        for a in range(lo, lo + batch, step)]
                for chunk in pool.map(_evaluate_range, jobs):
                    yield from chunk
            lo += batch
    finally:
        if pool is not None:
            pool.shutdown(cancel_futures=True)


def generate_dataset(cfg, n_target, th=Thresholds(), workers=None):
    """Collect ``n_target`` feasible pairs, fit normalizers and apply the sigma trim."""
    if n_target < 1:
        raise ValueError("n_target must be >= 1")
    discarded = {k: 0 for k in DISCARD_RULES}
    rows = []
    window = deque(maxlen=_WINDOW)
    window_kept = 0
    attempted = 0
    for i, status, g, q, m in iter_feasible(cfg, th, workers=workers):
        attempted += 1
        if len(window) == _WINDOW:
            window_kept -= window[0]
        window.append(status == "kept")
        window_kept += status == "kept"
        if status == "kept":
            rows.append((g, q, m))
            if len(rows) == n_target:
                break
        else:
            discarded[status] += 1
        if attempted >= _WINDOW and window_kept < _MIN_RATE * _WINDOW:
            raise AcceptanceTooLow(
                f"acceptance below {_MIN_RATE:.1%} over the last {_WINDOW} attempts "
                f"(discards: {discarded})")
        if attempted % 20000 == 0:
            log.info("attempted %d, kept %d", attempted, len(rows))

    raw_g = np.array([r[0] for r in rows])
    raw_q = np.array([r[1] for r in rows])
    raw_m = np.array([r[2] for r in rows])
    if len(rows) < 2:
        raise ValueError("need at least 2 kept samples to fit normalizers")

    cond_raw = np.hstack([raw_g, raw_m])
    flags = np.r_[np.zeros(N_PLANT, bool), np.ones(N_METRIC, bool)]
    cond_norm = normalize_fit(cond_raw, flags)
    x_norm = normalize_fit(raw_q)
    cond = cond_norm.apply(cond_raw)
    keep = np.all(np.abs(cond[:, N_PLANT:]) <= th.trim_sigma, axis=1)
    discarded["trim_3sigma"] = int(np.count_nonzero(~keep))

    meta = DatasetMeta(cfg, th, cond_norm, x_norm, attempted, discarded,
                       int(np.count_nonzero(keep)),
                       raw_m[keep].mean(axis=0).tolist(), raw_m[keep].std(axis=0, ddof=1).tolist())
    return Dataset(cond[keep], x_norm.apply(raw_q[keep]), raw_m[keep], raw_g[keep],
                   raw_q[keep], meta)


def dataset_paths(out):
    """``(jsonl, meta)`` paths for a dataset name or ``.jsonl`` path."""
    out = str(out)
    stem = out[: -len(".jsonl")] if out.endswith(".jsonl") else out
    return Path(stem + ".jsonl"), Path(stem + ".meta.json")


def _floats(a):
    return [float(v) for v in a]


def save_dataset(ds, out):
    data_path, meta_path = dataset_paths(out)
    with open(data_path, "w") as f:
        for i in range(len(ds)):
            rec = {
                "cond": _floats(ds.cond[i]),
                "x": _floats(ds.x[i]),
                "raw_metrics": {"s_inf": float(ds.raw_metrics[i, 0]),
                                "t_settle": float(ds.raw_metrics[i, 1])},
                "raw_g": _floats(ds.raw_g[i]),
                "raw_q": _floats(ds.raw_q[i]),
            }
            f.write(json.dumps(rec) + "\n")
    with open(meta_path, "w") as f:
        json.dump(ds.meta.to_dict(), f, indent=2)
        f.write("\n")
    return data_path, meta_path


def load_dataset(path):
    data_path, meta_path = dataset_paths(path)
    with open(meta_path) as f:
        meta = DatasetMeta.from_dict(json.load(f))
    cols = {k: [] for k in ("cond", "x", "raw_metrics", "raw_g", "raw_q")}
    with open(data_path) as f:
        for line in f:
            rec = json.loads(line)
            for k in ("cond", "x", "raw_g", "raw_q"):
                cols[k].append(rec[k])
            cols["raw_metrics"].append([rec["raw_metrics"]["s_inf"], rec["raw_metrics"]["t_settle"]])
    arrays = {k: np.array(v, dtype=float).reshape(len(v), -1) for k, v in cols.items()}
    if arrays["cond"].shape[1:] != (COND_DIM,) or arrays["x"].shape[1:] != (X_DIM,):
        raise ValueError("dataset rows have the wrong width")
    return Dataset(meta=meta, **arrays)
