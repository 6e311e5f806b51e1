"""Command-line interface: ``semigrad {train,render,metrics,verify,compare}``.

Exit codes: 0 success, 1 usage error, 2 verification failure, 3 runtime fault.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict

import numpy as np

from .cache import checkpoint
from .errors import ConfigurationError, DivergenceError
from .estimators import DEFAULT_EPS, GENERIC_KINDS
from .harness.compare import compare
from .harness.metrics import EPS_METRIC, compute_metrics
from .harness.render import MODES, render
from .harness.scenefile import load_scene
from .harness.verify import SUITES, verify
from .image import Image, read_pfm, write_image
from .trainer import ESTIMATORS, TrainConfig, TrainLog, TrainState, train_step
from .transport.sampling import STRATEGIES, UNIFORM

EXIT_OK, EXIT_USAGE, EXIT_VERIFY, EXIT_RUNTIME = 0, 1, 2, 3

log = logging.getLogger("semigrad")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _write_json(path, obj):
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)


def _add_train_options(p):
    p.add_argument("--scene", required=True, help="scene file or bundled name")
    p.add_argument("--steps", type=int, default=4000)
    p.add_argument("--batch-size", type=int, default=1024, help="N query points per step")
    p.add_argument("--samples", type=int, default=16, help="M incident directions per query")
    p.add_argument("--lr", type=float, default=5e-4)
    p.add_argument("--eps", type=float, default=DEFAULT_EPS)
    p.add_argument("--decay-interval", type=int, default=None,
                   help="divide the learning rate by 3 every this many steps (default: a third of --steps)")
    p.add_argument("--strategy", choices=STRATEGIES, default=UNIFORM)
    p.add_argument("--db-split", choices=("total", "per-buffer"), default="total")
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--layers", type=int, default=4)
    p.add_argument("--frequencies", type=int, default=6)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)


def _config(args, **over) -> TrainConfig:
    kw = dict(N=args.batch_size, M=args.samples, lr=args.lr, eps=args.eps, total_steps=args.steps,
              decay_interval=args.decay_interval, seed=args.seed, strategy=args.strategy,
              db_split=args.db_split, width=args.width, layers=args.layers,
              frequencies=args.frequencies, workers=args.workers)
    kw.update(over)
    return TrainConfig(**kw)


def parse_estimator(spec: str) -> dict:
    """``nr``, ``sg``, ``db``, ``wdb:<w>`` or ``generic:<kind>[:<semi|full>]``."""
    parts = spec.strip().split(":")
    name = parts[0]
    if name not in ESTIMATORS:
        raise UsageError(f"unknown estimator {spec!r}")
    if name == "wdb":
        if len(parts) != 2:
            raise UsageError("wdb needs a weight, e.g. wdb:0.5")
        try:
            return {"estimator": "wdb", "w": float(parts[1])}
        except ValueError:
            raise UsageError(f"bad wdb weight in {spec!r}") from None
    if name == "generic":
        if len(parts) not in (2, 3) or parts[1] not in GENERIC_KINDS:
            raise UsageError(f"generic needs a kind from {GENERIC_KINDS}, e.g. generic:mae:semi")
        return {"estimator": "generic", "generic_kind": parts[1],
                "generic_mode": parts[2] if len(parts) == 3 else "semi"}
    if len(parts) != 1:
        raise UsageError(f"{name} takes no parameters")
    return {"estimator": name}


def cmd_train(args):
    scene = load_scene(args.scene)
    over = parse_estimator(args.estimator)
    if args.huber_delta is not None:
        over["huber_delta"] = args.huber_delta
    config = _config(args, **over)
    state = TrainState.initial(config)
    if args.resume:
        params, adam, step = checkpoint.load(args.resume)
        if params.topology != state.params.topology or params.encoding != state.params.encoding:
            raise UsageError("resume checkpoint does not match the configured network")
        state = TrainState(params, adam or state.adam, step)
    tlog = TrainLog()
    try:
        for _ in range(max(0, config.total_steps - state.step)):
            state, rec = train_step(scene, state, config)
            tlog.records.append(rec)
            if args.log_every and rec.step % args.log_every == 0:
                log.info("step %d loss %.6g |g| %.4g lr %.4g", rec.step, rec.loss, rec.grad_norm, rec.lr)
    except DivergenceError as exc:
        bundle_path = args.checkpoint + ".divergence.json"
        _write_json(bundle_path, exc.bundle)
        raise DivergenceError(f"{exc} (reproducibility bundle: {bundle_path})", exc.bundle) from exc
    checkpoint.save(args.checkpoint, state.params, state.adam, state.step)
    if args.log:
        tlog.write_csv(args.log)
    _write_json(args.checkpoint + ".json", {"command": "train", "seed": config.seed, "scene": args.scene,
                                            "steps": state.step, "config": asdict(config)})
    print(f"wrote {args.checkpoint} (step {state.step}, seed {config.seed})")
    return EXIT_OK


def cmd_render(args):
    scene = load_scene(args.scene)
    params = None
    if args.mode != "reference":
        if not args.checkpoint:
            raise UsageError(f"--checkpoint is required for --mode {args.mode}")
        if not os.path.exists(args.checkpoint):
            raise UsageError(f"checkpoint {args.checkpoint} does not exist")
        params, _, _ = checkpoint.load(args.checkpoint)
    img = render(args.mode, scene, params, spp=args.spp, M=args.samples, seed=args.seed,
                 max_depth=args.max_depth, strategy=args.strategy, workers=args.workers)
    write_image(args.out, img)
    _write_json(args.out + ".json", {"command": "render", "mode": args.mode, "seed": args.seed,
                                     "scene": args.scene, "spp": args.spp, "samples": args.samples,
                                     "checkpoint": args.checkpoint, "max_depth": args.max_depth})
    print(f"wrote {args.out} ({img.width}x{img.height}, seed {args.seed})")
    return EXIT_OK


def _read_image(path):
    if not path.endswith(".pfm"):
        raise UsageError(f"metrics need PFM images, got {path}")
    return read_pfm(path)


def cmd_metrics(args):
    m = compute_metrics(_read_image(args.image), _read_image(args.reference), args.eps_metric,
                        error_map=bool(args.error_map))
    out = {"mse": m.mse, "mape": m.mape, "relmse": m.relmse, "eps_metric": args.eps_metric}
    if args.error_map:
        write_image(args.error_map, Image(np.repeat(m.error_map[..., None], 3, axis=-1)))
    print(json.dumps(out, sort_keys=True))
    return EXIT_OK


def cmd_verify(args):
    report = verify(args.suite, args.seed)
    if args.report:
        report.write_csv(args.report)
    n_fail = len(report.failures)
    print(f"verify {args.suite} seed {args.seed}: {len(report.rows)} checks, {n_fail} failed")
    if n_fail:
        print(f"first failure: {report.first_failure()}")
        return EXIT_VERIFY
    return EXIT_OK


def cmd_compare(args):
    scene = load_scene(args.scene)
    specs = [s for s in args.estimators.split(",") if s.strip()]
    if len(specs) < 2:
        raise UsageError("--estimators needs at least two entries")
    configs = [_config(args, **parse_estimator(s)) for s in specs]
    if args.reference:
        reference = _read_image(args.reference)
    else:
        reference = render("reference", scene, spp=args.reference_spp, seed=args.seed,
                           max_depth=args.max_depth)
    curves = compare(scene, configs, reference, args.out_dir, args.eval_every, args.seed)
    for c in curves:
        print(f"{c.label:>14s}  relmse {c.final_relmse:.6g}  mape {c.mape[-1]:.6g}  {c.seconds:.1f}s")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="semigrad", description=__doc__.splitlines()[0])
    p.add_argument("--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a radiance cache")
    _add_train_options(t)
    t.add_argument("--estimator", default="sg", help="nr, sg, db, wdb:<w>, generic:<kind>[:<mode>]")
    t.add_argument("--huber-delta", type=float, default=None)
    t.add_argument("--checkpoint", required=True, help="output checkpoint path")
    t.add_argument("--resume", default=None, help="continue from this checkpoint")
    t.add_argument("--log", default=None, help="per-step CSV log")
    t.add_argument("--log-every", type=int, default=0)
    t.set_defaults(fn=cmd_train)

    r = sub.add_parser("render", help="render the cache or a reference")
    r.add_argument("--scene", required=True)
    r.add_argument("--mode", choices=MODES, required=True)
    r.add_argument("--checkpoint", default=None)
    r.add_argument("--spp", type=int, default=None)
    r.add_argument("--samples", type=int, default=1, help="M for --mode rhs")
    r.add_argument("--max-depth", type=int, default=64)
    r.add_argument("--strategy", choices=STRATEGIES, default=UNIFORM)
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", required=True, help=".pfm or .ppm")
    r.set_defaults(fn=cmd_render)

    m = sub.add_parser("metrics", help="MSE, MAPE and RelMSE of an image against a reference")
    m.add_argument("--image", required=True)
    m.add_argument("--reference", required=True)
    m.add_argument("--eps-metric", type=float, default=EPS_METRIC)
    m.add_argument("--error-map", default=None, help="write the per-pixel RelMSE map here")
    m.set_defaults(fn=cmd_metrics)

    v = sub.add_parser("verify", help="run verification suites")
    v.add_argument("--suite", choices=SUITES + ("all",), default="all")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--report", default=None, help="CSV report path")
    v.set_defaults(fn=cmd_verify)

    c = sub.add_parser("compare", help="equal-iteration comparison of estimators")
    _add_train_options(c)
    c.add_argument("--estimators", required=True, help="comma-separated, e.g. sg,nr,wdb:0.5")
    c.add_argument("--eval-every", type=int, default=500)
    c.add_argument("--reference", default=None, help="reference PFM (rendered if omitted)")
    c.add_argument("--reference-spp", type=int, default=512)
    c.add_argument("--max-depth", type=int, default=64)
    c.add_argument("--out-dir", required=True)
    c.set_defaults(fn=cmd_compare)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except (UsageError, ConfigurationError, FileNotFoundError) as exc:
        print(f"semigrad {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        print(f"semigrad {args.command}: runtime fault: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
