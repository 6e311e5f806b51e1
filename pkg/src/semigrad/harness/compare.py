"""Equal-iteration comparison of estimators trained from the same seed."""

from __future__ import annotations

import csv
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field

from ..errors import ConfigurationError
from ..image import Image, write_image
from ..trainer import TrainConfig, TrainState, train_step
from ..transport.scene import Scene
from .metrics import EPS_METRIC, compute_metrics
from .render import render

log = logging.getLogger(__name__)


@dataclass
class Curve:
    label: str
    steps: list[int] = field(default_factory=list)
    mse: list[float] = field(default_factory=list)
    mape: list[float] = field(default_factory=list)
    relmse: list[float] = field(default_factory=list)
    seconds: float = 0.0
    final_image: Image | None = None

    @property
    def final_relmse(self) -> float:
        return self.relmse[-1]


def run_estimator(scene: Scene, config: TrainConfig, reference: Image, eval_every: int,
                  render_seed: int = 0, eps_metric: float = EPS_METRIC) -> Curve:
    """Train ``config`` for ``config.total_steps`` steps, scoring the LHS render
    against ``reference`` every ``eval_every`` steps and at the end."""
    curve = Curve(config.label)
    state = TrainState.initial(config)
    elapsed = 0.0

    def score():
        img = render("lhs", scene, state.params, seed=render_seed)
        m = compute_metrics(img, reference, eps_metric)
        curve.steps.append(state.step)
        curve.mse.append(m.mse)
        curve.mape.append(m.mape)
        curve.relmse.append(m.relmse)
        return img

    for _ in range(config.total_steps):
        t0 = time.perf_counter()
        state, rec = train_step(scene, state, config)
        elapsed += time.perf_counter() - t0
        if eval_every and state.step % eval_every == 0 and state.step < config.total_steps:
            score()
            log.info("%s step %d relmse %.4g", config.label, state.step, curve.relmse[-1])
    curve.final_image = score()
    curve.seconds = elapsed
    return curve


def compare(scene: Scene, configs: list[TrainConfig], reference: Image, out_dir=None,
            eval_every: int = 500, render_seed: int = 0) -> list[Curve]:
    """Run every configuration sequentially; optionally write ``curves.csv``,
    ``summary.json`` and one final LHS image per estimator to ``out_dir``."""
    if len(configs) < 2:
        raise ConfigurationError("compare needs at least two estimators")
    curves = [run_estimator(scene, c, reference, eval_every, render_seed) for c in configs]
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "curves.csv"), "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["estimator", "step", "mse", "mape", "relmse"])
            for c in curves:
                for row in zip(c.steps, c.mse, c.mape, c.relmse):
                    wr.writerow([c.label, *row])
        for i, c in enumerate(curves):
            name = f"{i:02d}_{c.label.replace('(', '_').replace(')', '').replace('=', '')}"
            write_image(os.path.join(out_dir, f"{name}.pfm"), c.final_image)
            write_image(os.path.join(out_dir, f"{name}.ppm"), c.final_image)
        write_image(os.path.join(out_dir, "reference.pfm"), reference)
        write_image(os.path.join(out_dir, "reference.ppm"), reference)
        summary = {"seed": configs[0].seed, "scene": scene.name,
                   "runs": [{"label": c.label, "final_relmse": c.final_relmse,
                             "final_mape": c.mape[-1], "final_mse": c.mse[-1],
                             "train_seconds": c.seconds, "config": asdict(cfg)}
                            for c, cfg in zip(curves, configs)]}
        with open(os.path.join(out_dir, "summary.json"), "w") as f:
            json.dump(summary, f, indent=2)
    return curves
