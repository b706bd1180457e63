"""End-to-end acceptance checks; each prints one ``CRITERION k PASS|FAIL`` line.

The desk-scale run (criteria 5 to 7) builds a 20,000-pair dataset, trains for
20,000 steps and sweeps five guidance strengths over 200 unseen plants. It
takes roughly ten minutes on one core. Set ``YDG_DESK_DIR`` to a directory to
keep those artifacts between runs; existing files there are reused.
"""
import csv
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from ydg import cli, diffusion
from ydg.dataset import normalize_fit
from ydg.lti import TransferFunction, gang_of_four, is_hurwitz
from ydg.metrics import hinf_norm, settling_time, step_response
from ydg.model import Model
from ydg.nn import mlp_backward, mlp_forward, mlp_init
from ydg.sampler import SampleConfig, derive_stream, sample_pair

VERDICTS = {}
MODERATE = (0.5, 2.0)


def verdict(k, ok, detail):
    line = f"CRITERION {k} {'PASS' if ok else 'FAIL'}: {detail}"
    VERDICTS[k] = line
    print(line)
    assert ok, line


def test_c1_stability_by_construction():
    cfg = SampleConfig()
    start = time.perf_counter()
    bad = 0
    for i in range(10_000):
        G, Q = sample_pair(cfg, 0, i)
        bad += not all(is_hurwitz(tf.den).is_hurwitz for tf in gang_of_four(G, Q))
    took = time.perf_counter() - start
    verdict(1, bad == 0 and took < 60, f"{bad} unstable loops in 10000 pairs, {took:.1f} s")


def test_c2_metric_oracles():
    cases = [
        (TransferFunction([1], [1]), 1.0),
        (TransferFunction([1, 0], [1, 1]), 1.0),
        (TransferFunction([1], [1, 0.2, 1]), 1 / (2 * 0.1 * math.sqrt(1 - 0.1 ** 2))),
    ]
    errs = [abs(hinf_norm(S) - ref) / ref for S, ref in cases]
    ts = settling_time(step_response(TransferFunction([1], [1, 1])))
    errs.append(abs(ts - math.log(50)) / math.log(50))
    verdict(2, max(errs) < 1e-3, f"max relative error {max(errs):.2e}")


def _fd_rel_error(net, x, g_out, h=1e-5):
    grads, _ = mlp_backward(net, mlp_forward(net, x)[1], g_out)
    worst = 0.0
    for p, g in zip(net.params, grads):
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            fp = np.sum(mlp_forward(net, x)[0] * g_out)
            p[idx] = old - h
            fm = np.sum(mlp_forward(net, x)[0] * g_out)
            p[idx] = old
            num = (fp - fm) / (2 * h)
            scale = max(abs(num), abs(g[idx]))
            if scale > 1e-8:
                worst = max(worst, abs(num - g[idx]) / scale)
    return worst


def test_c3_gradient_check():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(20):
        depth = rng.integers(1, 4)
        sizes = tuple(int(v) for v in rng.integers(2, 9, size=depth + 2))
        net = mlp_init(sizes, rng)
        x = rng.normal(size=(3, sizes[0]))
        worst = max(worst, _fd_rel_error(net, x, rng.normal(size=(3, sizes[-1]))))
    verdict(3, worst < 1e-5, f"max relative error {worst:.2e} over 20 nets")


def test_c4_forward_process_moments():
    sched = diffusion.make_schedule()
    n, x0 = 100_000, 1.5
    zs = []
    for t in (1, sched.T // 2, sched.T):
        rng = np.random.default_rng(77 + t)
        xt = diffusion.q_sample(np.full((n, 1), x0), np.full(n, t), rng.standard_normal((n, 1)),
                                sched)[:, 0]
        ab = sched.alpha_bar[t - 1]
        var = 1 - ab
        zs.append(abs(xt.mean() - math.sqrt(ab) * x0) / math.sqrt(var / n))
        zs.append(abs(xt.var(ddof=1) - var) / (var * math.sqrt(2 / (n - 1))))
    verdict(4, max(zs) < 3, f"largest deviation {max(zs):.2f} standard errors")


@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    d = Path(os.environ.get("YDG_DESK_DIR") or tmp_path_factory.mktemp("desk"))
    d.mkdir(parents=True, exist_ok=True)
    data, weights, sweep = d / "desk", d / "desk.ydgw", d / "sweep.csv"
    start = time.perf_counter()
    if not (d / "desk.meta.json").exists():
        assert cli.main(["gen-data", "--n", "20000", "--out", str(data)]) == 0
    if not weights.exists():
        assert cli.main(["train", str(data), "--steps", "20000", "--batch", "256",
                         "--out", str(weights)]) == 0
    build = time.perf_counter() - start
    if not sweep.exists():
        assert cli.main(["sweep", str(weights), "--n-plants", "200", "--mode", "dataset",
                         "--lambdas", "0.5,1.0,1.1,2.0,4.0", "--out", str(sweep)]) == 0
    with open(sweep) as f:
        rows = {float(r["lambda"]): r for r in csv.DictReader(f)}
    return {"model": Model.load(weights), "rows": rows, "build_seconds": build}


@pytest.mark.desk
def test_c5_desk_success_rate(desk):
    r = desk["rows"][1.1]
    rate = float(r["success_rate"])
    verdict(5, rate >= 0.8 and int(r["n_plants"]) == 200,
            f"success {rate:.3f} on {r['n_plants']} plants at lambda 1.1 "
            f"(data + training {desk['build_seconds']:.0f} s)")


@pytest.mark.desk
def test_c6_lambda_sweep_shape(desk):
    rates = {lam: float(r["success_rate"]) for lam, r in desk["rows"].items()}
    moderate = max(v for lam, v in rates.items() if MODERATE[0] <= lam <= MODERATE[1])
    summary = ", ".join(f"{lam:g}: {v:.3f}" for lam, v in sorted(rates.items()))
    verdict(6, rates[4.0] < moderate, f"success by lambda {summary}")


@pytest.mark.desk
def test_c7_failure_deviation(desk):
    r = desk["rows"][1.1]
    med = float(r["median_dev_s_inf"])
    n_fail = int(r["n_failures"])
    ok = n_fail == 0 or med <= 0.5
    verdict(7, ok, f"median |S| deviation {med:.3f} over {n_fail} failures at lambda 1.1")


@pytest.mark.desk
def test_unconditional_marginals(desk):
    m = desk["model"]
    u = diffusion.sample_unconditional(m.net, m.sched, 4000, derive_stream(6, 0))
    live = ~m.x_norm.frozen
    mean, std = u.mean(0)[live], u.std(0)[live]
    assert np.all(np.abs(mean) <= 0.1), mean
    assert np.all((std >= 0.8) & (std <= 1.2)), std


def test_c8_determinism(tmp_path, monkeypatch):
    def gen(tag, threads):
        monkeypatch.setenv("YDG_THREADS", threads)
        assert cli.main(["gen-data", "--n", "1500", "--seed", "5", "--out",
                         str(tmp_path / tag)]) == 0
        return b"".join((tmp_path / f"{tag}{e}").read_bytes() for e in (".jsonl", ".meta.json"))

    def train(tag):
        out = tmp_path / f"{tag}.ydgw"
        assert cli.main(["train", str(tmp_path / "a"), "--steps", "150", "--batch", "64",
                         "--seed", "3", "--out", str(out)]) == 0
        return out.read_bytes()

    def synth(tag):
        out = tmp_path / f"{tag}.json"
        assert cli.main(["synth", str(tmp_path / "w1.ydgw"), "--plant", "num=0,0.5,1;den=1,1.4,1",
                         "--seed", "8", "--out", str(out)]) == 0
        return out.read_bytes()

    data = [gen("a", "1"), gen("b", "1"), gen("c", "2"), gen("d", "3")]
    weights = [train("w1"), train("w2")]
    reports = [synth("s1"), synth("s2")]
    checks = {"gen-data": len(set(data)) == 1, "train": len(set(weights)) == 1,
              "synth": len(set(reports)) == 1}
    verdict(8, all(checks.values()),
            ", ".join(f"{k} {'identical' if v else 'DIFFERS'}" for k, v in checks.items())
            + " (gen-data over 1, 2 and 3 workers)")


def test_c9_normalizer_round_trip():
    rng = np.random.default_rng(9)
    fit = np.column_stack([rng.normal(2, 3, 1000), rng.lognormal(0, 1, 1000),
                           np.full(1000, 4.0), rng.uniform(0, 20, 1000), np.ones(1000)])
    norm = normalize_fit(fit, [False, True, False, True, False])
    v = np.column_stack([rng.normal(2, 10, 10_000), rng.lognormal(0, 2, 10_000),
                         rng.normal(4, 1, 10_000), rng.uniform(0, 40, 10_000),
                         rng.normal(1, 5, 10_000)])
    err = np.max(np.abs(norm.invert(norm.apply(v)) - v) / np.maximum(1.0, np.abs(v)))
    verdict(9, err < 1e-12 and norm.frozen.sum() == 2,
            f"max round-trip error {err:.2e} on 10000 vectors, {norm.frozen.sum()} frozen features")
