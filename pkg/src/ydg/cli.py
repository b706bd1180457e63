"""``ydg`` command line: gen-data, train, synth, eval, sweep, plot-data.

Exit codes: 0 success, 1 runtime failure, 2 invalid usage or configuration.
Set ``YDG_THREADS`` to cap the number of worker processes.
"""
import argparse
import csv
import json
import logging
import sys

import numpy as np

from . import config as config_mod
from . import diffusion, synth
from .dataset import generate_dataset, load_dataset, save_dataset
from .lti import TransferFunction, format_tf, parse_tf, youla_controller
from .metrics import MetricsVector
from .model import Model
from .nn import AdamState, mlp_init
from .sampler import DOMAIN_INIT, DOMAIN_SYNTH, DOMAIN_TRAIN, derive_stream

log = logging.getLogger("ydg")
D = config_mod.DEFAULTS


class UsageError(Exception):
    pass


def _floats(text):
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _cfg(args):
    try:
        cfg = config_mod.load_config(args.config)
    except config_mod.ConfigError as e:
        raise UsageError(str(e))
    return cfg


def _pick(flag, default):
    return default if flag is None else flag


def _load_model(path):
    try:
        return Model.load(path)
    except (OSError, ValueError, KeyError) as e:
        raise RuntimeError(f"cannot load weights: {e}")


def _write_csv(path, header, rows):
    f = open(path, "w", newline="") if path and path != "-" else sys.stdout
    try:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    finally:
        if f is not sys.stdout:
            f.close()


def _guidance(cfg, args, model=None):
    g = cfg["guidance"]
    drop = model.train_config.get("cond_drop_p", g["cond_drop_p"]) if model else g["cond_drop_p"]
    return diffusion.GuidanceConfig(_pick(args.lam, g["lambda"]), _pick(args.shots, g["n_shots"]),
                                    drop)


def cmd_gen_data(args):
    cfg = _cfg(args)
    if args.seed is not None:
        cfg["sampler"]["seed"] = args.seed
    sc = config_mod.sample_config(cfg)
    th = config_mod.thresholds(cfg)
    ds = generate_dataset(sc, args.n, th)
    try:
        data_path, meta_path = save_dataset(ds, args.out)
    except OSError as e:
        raise RuntimeError(f"cannot write dataset: {e}")
    m = ds.meta
    print(f"attempted {m.attempted}  kept {m.kept}")
    for rule, n in m.discarded.items():
        print(f"  discarded[{rule}] = {n}")
    print(f"wrote {data_path} and {meta_path}")


def cmd_train(args):
    cfg = _cfg(args)
    tc = dict(cfg["train"])
    for key in ("steps", "batch", "lr", "lr_schedule", "seed"):
        if getattr(args, key) is not None:
            tc[key] = getattr(args, key)
    try:
        ds = load_dataset(args.dataset)
    except (OSError, ValueError, KeyError) as e:
        raise RuntimeError(f"cannot load dataset: {e}")
    sched = diffusion.make_schedule(**cfg["schedule"])
    gcfg = diffusion.GuidanceConfig(cond_drop_p=cfg["guidance"]["cond_drop_p"])
    net = mlp_init(diffusion.net_sizes(cfg["network"]["hidden"]),
                   derive_stream(tc["seed"], 0, DOMAIN_INIT))
    adam = AdamState.for_params(net.params, lr=tc["lr"], beta1=tc["beta1"], beta2=tc["beta2"],
                                eps_hat=tc["eps_hat"])
    res = diffusion.train(ds.x, ds.cond, net, sched, gcfg, tc["steps"],
                          derive_stream(tc["seed"], 0, DOMAIN_TRAIN), tc["batch"], adam,
                          lr_schedule=tc["lr_schedule"])
    tc["cond_drop_p"] = gcfg.cond_drop_p
    tc["hidden"] = list(cfg["network"]["hidden"])
    Model(net, sched, ds.meta, tc).save(args.out)
    if args.loss_csv:
        _write_csv(args.loss_csv, ["step", "loss"], enumerate(res.losses, 1))
    k = min(100, len(res.losses))
    if k:
        print(f"loss first {np.mean(res.losses[:k]):.4f}  last {np.mean(res.losses[-k:]):.4f}")
    print(f"null-conditioned rows: {res.null_count}")
    print(f"wrote {args.out}")


def _report(G, res, gcfg):
    return {
        "plant": format_tf(G),
        "target": {"s_inf": res.target.s_inf, "t_settle": res.target.t_settle},
        "lambda": gcfg.lam,
        "n_shots": gcfg.n_shots,
        "success": res.success,
        "mean": [float(v) for v in res.mean],
        "std": [float(v) for v in res.std],
        "candidates": [
            {
                "q": format_tf(c.q) if c.q is not None else None,
                "c_num": c.c.num.tolist() if c.c is not None else None,
                "c_den": c.c.den.tolist() if c.c is not None else None,
                "s_inf": c.metrics.s_inf if c.metrics else None,
                "t_settle": c.metrics.t_settle if c.metrics else None,
                "stabilized": c.stabilized,
                "resamples": c.resamples,
                "failed": c.failed,
                "certified": (not c.failed) and synth.certify(G, c.q),
            }
            for c in res.candidates
        ],
    }


def cmd_synth(args):
    cfg = _cfg(args)
    try:
        G = parse_tf(args.plant)
    except ValueError as e:
        raise UsageError(f"bad --plant: {e}")
    if not G.is_stable():
        raise UsageError("plant must be open-loop stable")
    model = _load_model(args.weights)
    gcfg = _guidance(cfg, args, model)
    ev = cfg["eval"]
    target = MetricsVector(_pick(args.target_sinf, ev["target_sinf"]),
                           _pick(args.target_ts, ev["target_ts"]))
    seed = _pick(args.seed, ev["noise_seed"])
    res = synth.synthesize(G, target, model.net, model.sched, gcfg, model.cond_norm,
                           model.x_norm, derive_stream(seed, 0, DOMAIN_SYNTH), model.meta.thresholds)
    text = json.dumps(_report(G, res, gcfg), indent=2) + "\n"
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def _suite_args(cfg, args, model):
    ev = cfg["eval"]
    mode = _pick(args.mode, ev["mode"])
    n = _pick(args.n_plants, ev["n_plants"])
    fixed = (_pick(args.target_sinf, ev["target_sinf"]), _pick(args.target_ts, ev["target_ts"]))
    plants, targets = synth.draw_targets(n, mode, model.meta.sample_config,
                                         _pick(args.seed, ev["seed"]), model.cond_norm,
                                         model.meta.thresholds, fixed)
    return plants, targets, _pick(args.noise_seed, ev["noise_seed"])


def cmd_eval(args):
    cfg = _cfg(args)
    model = _load_model(args.weights)
    gcfg = _guidance(cfg, args, model)
    plants, targets, noise_seed = _suite_args(cfg, args, model)
    suite = synth.evaluate_suite(plants, targets, model.net, model.sched, gcfg, model.cond_norm,
                                 model.x_norm, model.metric_scale, noise_seed,
                                 th=model.meta.thresholds)
    rows = []
    for p, (G, r) in enumerate(zip(plants, suite.results)):
        b = None if r.success else synth.best_candidate(r, model.metric_scale)
        dev = (np.abs(r.target.as_array() - r.candidates[b].metrics.as_array())
               if b is not None else [np.nan, np.nan])
        rows.append([p, format_tf(G), r.target.s_inf, r.target.t_settle, *r.mean, *r.std,
                     int(r.success), sum(c.stabilized for c in r.candidates),
                     sum(c.failed for c in r.candidates), *dev])
    _write_csv(args.out, ["plant", "g", "target_s_inf", "target_t_settle", "mean_s_inf",
                          "mean_t_settle", "std_s_inf", "std_t_settle", "success",
                          "n_stabilized", "n_failed_shots", "dev_s_inf", "dev_t_settle"], rows)
    med = suite.failures.medians
    print(f"success rate {suite.success_rate:.3f} over {len(plants)} plants "
          f"(lambda={gcfg.lam}); failure median deviation s_inf={med[0]:.4f} "
          f"t_settle={med[1]:.4f}", file=sys.stderr)


def cmd_sweep(args):
    cfg = _cfg(args)
    model = _load_model(args.weights)
    gcfg = _guidance(cfg, args, model)
    lambdas = args.lambdas or list(cfg["eval"]["lambdas"])
    plants, targets, noise_seed = _suite_args(cfg, args, model)
    suites = synth.lambda_sweep(lambdas, plants, targets, model.net, model.sched, gcfg,
                                model.cond_norm, model.x_norm, model.metric_scale, noise_seed,
                                model.meta.thresholds)
    rows = [[s.lam, s.success_rate, len(s.results), s.failures.deviations.shape[0],
             *s.failures.medians, s.n_stabilized, s.n_resamples, s.n_failed_shots]
            for s in suites]
    _write_csv(args.out, ["lambda", "success_rate", "n_plants", "n_failures",
                          "median_dev_s_inf", "median_dev_t_settle", "n_stabilized_shots",
                          "n_resamples", "n_failed_shots"], rows)


def cmd_plot_data(args):
    try:
        with open(args.report) as f:
            rep = json.load(f)
        G = parse_tf(rep["plant"])
        ctrls = [TransferFunction(c["c_num"], c["c_den"])
                 for c in rep["candidates"] if not c["failed"]]
    except (OSError, ValueError, KeyError) as e:
        raise RuntimeError(f"cannot read report: {e}")
    names = [f"gen{i}" for i in range(len(ctrls))]
    if args.reference_q:
        try:
            ctrls.append(youla_controller(G, parse_tf(args.reference_q)))
        except ValueError as e:
            raise UsageError(f"bad --reference-q: {e}")
        names.append("reference")
    t, cols = synth.time_responses(G, ctrls, args.horizon, args.dt)
    header = ["t"]
    series = [t]
    for i, name in enumerate(names):
        header += [f"step_{name}", f"dist_{name}"]
        series += [cols[f"step_{i}"], cols[f"dist_{i}"]]
    _write_csv(args.out, header, zip(*series))


class _HelpFormatter(argparse.ArgumentDefaultsHelpFormatter):
    """Appends ``(default: ...)`` except where the help text already names the fallback."""

    def _get_help_string(self, action):
        if action.default is None:
            return action.help
        return super()._get_help_string(action)


def build_parser():
    fmt = _HelpFormatter
    p = argparse.ArgumentParser(prog="ydg", description=__doc__, formatter_class=fmt)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", default=None,
                        help="INI config file; flags override its values (built-in settings when omitted)")

    sp = sub.add_parser("gen-data", formatter_class=fmt,
                        help="generate a filtered, normalized training dataset")
    common(sp)
    sp.add_argument("--n", type=int, default=1000, help="number of feasible pairs to collect")
    sp.add_argument("--out", default="dataset",
                    help="dataset name; writes <out>.jsonl and <out>.meta.json")
    sp.add_argument("--seed", type=int, default=None,
                    help=f"sampler seed (config [sampler] seed, built-in {D['sampler']['seed']})")
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("train", formatter_class=fmt, help="train the conditional noise model")
    common(sp)
    sp.add_argument("dataset", help="dataset name or .jsonl path")
    sp.add_argument("--steps", type=int, default=None,
                    help=f"optimizer steps (built-in {D['train']['steps']})")
    sp.add_argument("--batch", type=int, default=None,
                    help=f"minibatch size (built-in {D['train']['batch']})")
    sp.add_argument("--lr", type=float, default=None,
                    help=f"Adam learning rate (built-in {D['train']['lr']})")
    sp.add_argument("--lr-schedule", choices=diffusion.LR_SCHEDULES, default=None,
                    help="constant rate, or cosine decay from --lr towards 0 "
                         f"(built-in {D['train']['lr_schedule']})")
    sp.add_argument("--seed", type=int, default=None,
                    help=f"init/training seed (built-in {D['train']['seed']})")
    sp.add_argument("--out", default="model.ydgw", help="weights file to write")
    sp.add_argument("--loss-csv", default=None, help="optional CSV of the loss trace (step, loss)")
    sp.set_defaults(func=cmd_train)

    def guidance(sp):
        sp.add_argument("--lambda", dest="lam", type=float, default=None,
                        help=f"guidance strength (built-in {D['guidance']['lambda']})")
        sp.add_argument("--shots", type=int, default=None,
                        help=f"candidates per plant (built-in {D['guidance']['n_shots']})")

    def targets(sp):
        sp.add_argument("--target-sinf", type=float, default=None,
                        help=f"target ||S||_inf (built-in {D['eval']['target_sinf']})")
        sp.add_argument("--target-ts", type=float, default=None,
                        help=f"target settling time in s (built-in {D['eval']['target_ts']})")

    sp = sub.add_parser("synth", formatter_class=fmt,
                        help="synthesize controllers for one plant; prints a JSON report")
    common(sp)
    sp.add_argument("weights", help="weights file from 'train'")
    sp.add_argument("--plant", required=True,
                    help='plant as "num=a,b,c;den=d,e,f" (descending powers of s)')
    targets(sp)
    guidance(sp)
    sp.add_argument("--seed", type=int, default=None,
                    help=f"sampling seed (built-in {D['eval']['noise_seed']})")
    sp.add_argument("--out", default=None, help="report path (stdout when omitted)")
    sp.set_defaults(func=cmd_synth)

    def suite(sp):
        sp.add_argument("weights", help="weights file from 'train'")
        sp.add_argument("--n-plants", type=int, default=None,
                        help=f"number of unseen test plants (built-in {D['eval']['n_plants']})")
        sp.add_argument("--mode", choices=synth.POLICIES, default=None,
                        help=f"target policy (built-in {D['eval']['mode']}); 'high-performance' "
                             "keeps ||S||_inf < 1.2 and settling < 5 s")
        targets(sp)
        sp.add_argument("--seed", type=int, default=None,
                        help=f"test-plant seed (built-in {D['eval']['seed']})")
        sp.add_argument("--noise-seed", type=int, default=None,
                        help=f"sampling seed (built-in {D['eval']['noise_seed']})")

    sp = sub.add_parser("eval", formatter_class=fmt,
                        help="success rate over unseen plants; per-plant CSV. Columns: plant, g, "
                             "target_s_inf, target_t_settle, mean_*, std_*, success, "
                             "n_stabilized, n_failed_shots, dev_s_inf, dev_t_settle")
    common(sp)
    suite(sp)
    guidance(sp)
    sp.add_argument("--out", default="-", help="CSV path ('-' for stdout)")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("sweep", formatter_class=fmt,
                        help="success rate per guidance strength. Columns: lambda, success_rate, "
                             "n_plants, n_failures, median_dev_s_inf, median_dev_t_settle, "
                             "n_stabilized_shots, n_resamples, n_failed_shots")
    common(sp)
    suite(sp)
    sp.add_argument("--lambdas", type=_floats, default=None,
                    help="comma-separated guidance strengths (built-in "
                         + ",".join(map(str, D["eval"]["lambdas"])) + ")")
    sp.add_argument("--shots", type=int, default=None,
                    help=f"candidates per plant (built-in {D['guidance']['n_shots']})")
    sp.set_defaults(func=cmd_sweep, lam=None)
    sp.add_argument("--out", default="-", help="CSV path ('-' for stdout)")

    sp = sub.add_parser("plot-data", formatter_class=fmt,
                        help="step and output-disturbance responses from a synth report. "
                             "Columns: t, step_<name>, dist_<name> per controller")
    sp.add_argument("report", help="JSON report written by 'synth'")
    sp.add_argument("--reference-q", default=None,
                    help='optional reference Youla parameter "num=...;den=..."')
    sp.add_argument("--horizon", type=float, default=20.0, help="simulation horizon in s")
    sp.add_argument("--dt", type=float, default=0.01, help="sample period in s")
    sp.add_argument("--out", default="-", help="CSV path ('-' for stdout)")
    sp.set_defaults(func=cmd_plot_data)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        args.func(args)
    except UsageError as e:
        print(f"ydg {args.command}: error: {e}", file=sys.stderr)
        return 2
    except (RuntimeError, ValueError, ArithmeticError, OSError) as e:
        print(f"ydg {args.command}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
