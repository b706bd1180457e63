"""Controller synthesis from a trained model and its evaluation protocol."""
import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from . import diffusion
from .dataset import N_PLANT, Thresholds, iter_feasible
from .lti import STAB_EPS, TransferFunction, closed_loop, gang_of_four, is_hurwitz, \
    poly_from_roots, poly_roots, youla_controller
from .metrics import MetricError, MetricsVector, evaluate_pair, step_response
from .sampler import DOMAIN_SYNTH, DOMAIN_TEST, derive_stream, sample_plant

MAX_RESAMPLES = 5
MIN_LEAD = 1e-6
HIGH_PERF = (1.2, 5.0)
FIXED_TARGET = (1.5, 8.0)
POLICIES = ("dataset", "fixed", "high-performance")


class ResampleSignal(ValueError):
    """Generated coefficients that cannot define a proper Youla parameter."""


def reflect_roots(roots):
    """Map each root with ``Re >= -STAB_EPS`` to ``-|Re| - STAB_EPS`` (same imaginary part)."""
    roots = np.asarray(roots, dtype=complex)
    bad = roots.real >= -STAB_EPS
    fixed = np.where(bad, -np.abs(roots.real) - STAB_EPS + 1j * roots.imag, roots)
    return fixed, bad


def enforce_q_stability(q):
    """Raw 6 coefficients -> ``(Q, stabilized)`` with ``Q`` in RH-infinity.

    A Hurwitz denominator passes through untouched. Otherwise its unstable
    roots are reflected into the left half-plane and the polynomial is
    re-expanded with the original leading coefficient.
    """
    q = np.asarray(q, dtype=float)
    if not np.all(np.isfinite(q)):
        raise ResampleSignal("non-finite generated coefficients")
    num, den = q[:3], q[3:]
    if abs(den[0]) <= MIN_LEAD:
        raise ResampleSignal("near-zero leading denominator coefficient")
    if is_hurwitz(den).is_hurwitz:
        return TransferFunction(num, den), False
    fixed, _ = reflect_roots(poly_roots(den))
    return TransferFunction(num, poly_from_roots(fixed, den[0])), True


def certify(G, Q):
    """True when all four closed-loop maps of ``(G, C(Q))`` are stable."""
    return all(is_hurwitz(tf.den).is_hurwitz for tf in gang_of_four(G, Q))


@dataclass
class Candidate:
    q: TransferFunction = None
    c: TransferFunction = None
    metrics: MetricsVector = None
    stabilized: bool = False
    resamples: int = 0
    failed: bool = False


@dataclass
class SynthesisResult:
    candidates: list
    target: MetricsVector
    mean: np.ndarray
    std: np.ndarray
    success: bool

    @property
    def achieved(self):
        return np.array([c.metrics.as_array() for c in self.candidates if not c.failed])


def success_rule(target, achieved):
    """Per-metric ``target_i >= mean_i - 2 std_i`` over the achieved shots.

    ``std`` is the population spread, so a single shot has zero spread.
    Returns ``(success, mean, std)``; no usable shot means failure.
    """
    achieved = np.asarray(achieved, dtype=float).reshape(-1, 2)
    if achieved.shape[0] == 0:
        return False, np.full(2, np.nan), np.full(2, np.nan)
    mean = achieved.mean(axis=0)
    std = achieved.std(axis=0)
    return bool(np.all(np.asarray(target) >= mean - 2.0 * std)), mean, std


def build_cond(G, target, cond_norm):
    raw = np.r_[G.coeffs(), target.s_inf, target.t_settle]
    return cond_norm.apply(raw)


def _shot(G, x_raw, th):
    Q, flag = enforce_q_stability(x_raw)
    m = evaluate_pair(G, Q, th.horizon, th.dt, th.band, th.v_min)
    return Candidate(Q, youla_controller(G, Q), m, flag)


def synthesize(G, target, net, sched, gcfg, cond_norm, x_norm, rng, th=Thresholds()):
    """Draw ``gcfg.n_shots`` controllers for plant ``G`` aiming at ``target``.

    Shots whose coefficients cannot form a proper ``Q`` or whose loop is
    unusable (no tracking, never settles) are redrawn up to
    :data:`MAX_RESAMPLES` times, then marked failed.
    """
    if not G.is_stable():
        raise ValueError("plant must be open-loop stable")
    cond = build_cond(G, target, cond_norm)
    xs = x_norm.invert(diffusion.sample_cfg(net, sched, cond, gcfg.lam, rng, gcfg.n_shots))
    cands = []
    for x in xs:
        tries = 0
        while True:
            try:
                cand = _shot(G, x, th)
                cand.resamples = tries
                break
            except (ResampleSignal, MetricError):
                tries += 1
                if tries > MAX_RESAMPLES:
                    cand = Candidate(resamples=tries - 1, failed=True)
                    break
                x = x_norm.invert(diffusion.sample_cfg(net, sched, cond, gcfg.lam, rng, 1)[0])
        if not cand.failed and not certify(G, cand.q):
            raise AssertionError("generated controller failed the stability certificate")
        cands.append(cand)
    ok, mean, std = success_rule(target.as_array(),
                                 [c.metrics.as_array() for c in cands if not c.failed])
    return SynthesisResult(cands, target, mean, std, ok)


def best_candidate(res, scale):
    """Index of the shot with least scaled shortfall ``sum max(0, (J_hat - J) / scale)``."""
    target = res.target.as_array()
    best, best_score = None, math.inf
    for i, c in enumerate(res.candidates):
        if c.failed:
            continue
        score = float(np.sum(np.maximum(0.0, (c.metrics.as_array() - target) / scale)))
        if score < best_score:
            best, best_score = i, score
    return best


@dataclass
class FailureStats:
    deviations: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    @property
    def medians(self):
        if self.deviations.shape[0] == 0:
            return np.full(2, np.nan)
        return np.median(self.deviations, axis=0)


@dataclass
class SuiteResult:
    lam: float
    plants: list
    targets: list
    results: list
    failures: FailureStats

    @property
    def success_rate(self):
        return float(np.mean([r.success for r in self.results]))

    @property
    def n_stabilized(self):
        return sum(c.stabilized for r in self.results for c in r.candidates)

    @property
    def n_resamples(self):
        return sum(c.resamples for r in self.results for c in r.candidates)

    @property
    def n_failed_shots(self):
        return sum(c.failed for r in self.results for c in r.candidates)


def draw_targets(n, policy, cfg, seed, cond_norm=None, th=Thresholds(), fixed=FIXED_TARGET):
    """Unseen plants and targets for the evaluation protocol.

    ``dataset``: a fresh feasible pair from the sampler; its plant and its
    achieved metrics form the test case (inside the training sigma band when
    ``cond_norm`` is given). ``high-performance``: the same, restricted to
    ``||S|| < 1.2`` and settling below 5 s. ``fixed``: fresh plants with the
    constant target ``fixed``.
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown target policy {policy!r}; choose from {POLICIES}")
    cfg = dataclasses.replace(cfg, seed=seed)
    if policy == "fixed":
        plants = [sample_plant(cfg, derive_stream(seed, i, DOMAIN_TEST)) for i in range(n)]
        return plants, [MetricsVector(*map(float, fixed))] * n
    plants, targets = [], []
    for _, status, g, _, m in iter_feasible(cfg, th, DOMAIN_TEST, workers=1, batch=256):
        if status != "kept":
            continue
        if cond_norm is not None:
            z = cond_norm.apply(np.r_[g, m])[N_PLANT:]
            if np.any(np.abs(z) > th.trim_sigma):
                continue
        if policy == "high-performance" and not (m[0] < HIGH_PERF[0] and m[1] < HIGH_PERF[1]):
            continue
        plants.append(TransferFunction.from_coeffs(g))
        targets.append(MetricsVector(*map(float, m)))
        if len(plants) == n:
            return plants, targets


def evaluate_suite(plants, targets, net, sched, gcfg, cond_norm, x_norm, metric_scale,
                   noise_seed, sweep_index=0, th=Thresholds()):
    """Synthesize for every ``(plant, target)``; plant ``p`` uses its own noise substream."""
    results = []
    devs = []
    scale = np.asarray(metric_scale, dtype=float)
    for p, (G, target) in enumerate(zip(plants, targets)):
        rng = derive_stream(noise_seed, p, DOMAIN_SYNTH, sweep_index)
        res = synthesize(G, target, net, sched, gcfg, cond_norm, x_norm, rng, th)
        results.append(res)
        if not res.success:
            b = best_candidate(res, scale)
            if b is not None:
                devs.append(np.abs(target.as_array() - res.candidates[b].metrics.as_array()))
    fs = FailureStats(np.array(devs).reshape(-1, 2))
    return SuiteResult(gcfg.lam, plants, targets, results, fs)


def lambda_sweep(lambdas, plants, targets, net, sched, gcfg, cond_norm, x_norm, metric_scale,
                 noise_seed, th=Thresholds()):
    """One :func:`evaluate_suite` per guidance strength on shared test cases."""
    return [evaluate_suite(plants, targets, net, sched, dataclasses.replace(gcfg, lam=float(lam)),
                           cond_norm, x_norm, metric_scale, noise_seed, k, th)
            for k, lam in enumerate(lambdas)]


def time_responses(G, controllers, horizon=20.0, dt=0.01):
    """Reference-step (``T``) and output-disturbance (``S``) responses per controller.

    Returns ``(t, columns)`` where ``columns`` maps ``step_i``/``dist_i`` to series.
    """
    cols = {}
    t = None
    for i, C in enumerate(controllers):
        T, S = closed_loop(G, C)
        rt = step_response(T, horizon, dt)
        rs = step_response(S, horizon, dt)
        t = rt.t
        cols[f"step_{i}"] = rt.y
        cols[f"dist_{i}"] = rs.y
    if t is None:
        t = np.arange(int(round(horizon / dt)) + 1) * dt
    return t, cols
