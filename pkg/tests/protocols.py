"""Shared test helpers: the reduced smoke scene, kink-free gradient-check
inputs and the desk-scale learnability experiments.

Each learnability run simulates its scene(s), frames samples from ground truth, splits,
trains and scores on the held-out part. A wall-clock budget can stop
training early; the result then records how far it got.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from dastraffic import dataset as dsmod
from dastraffic import framing, models, sim
from dastraffic.evaluation import evaluate
from dastraffic.nn import ReLU
from dastraffic.nn.network import TrainConfig, forward, train

BIN_RANGE = (250, 750)


class BudgetExceeded(Exception):
    pass


@dataclass
class RunResult:
    arch: str
    seed: int
    epochs_planned: int
    epochs_done: int
    seconds: float
    test_acc: float
    per_class: dict
    train_size: int
    test_size: int
    first_epoch_s: float

    @property
    def completed(self):
        return self.epochs_done == self.epochs_planned

    @property
    def projected_s(self):
        # whole-run time extrapolated from the epochs that ran
        if self.epochs_done == 0:
            return float("inf")
        return self.seconds / self.epochs_done * self.epochs_planned


def kink_free_sample(net, label, seed, margin=1e-3):
    """Random input whose ReLU inputs and Huber residuals all sit clear of a kink."""
    rng = np.random.default_rng(seed)
    for _ in range(500):
        x = rng.normal(size=net.input_shape)
        scores, cache = forward(net, x[None], keep_acts=True)
        acts = cache["acts"]
        pre = [acts[i] for i, layer in enumerate(net.layers) if isinstance(layer, ReLU)]
        if any(np.abs(a).min() < margin for a in pre):
            continue
        if net.head == "svm":
            a = scores[0] - np.eye(net.num_classes)[label]
            if np.abs(np.abs(a) - net.huber_delta).min() < margin:
                continue
        return x
    raise RuntimeError("no kink-free sample found")


def smoke_scene(seed=0):
    """A reduced scene (300 bins x 20000 shots) for fast end-to-end runs."""
    rc = sim.VEHICLES["RC"]
    tracks = [sim.TrackSpec(rc, occ, 90.0, sim.EAST, 100.0 + 1200.0 * k)
              for k, occ in enumerate((5, 4, 3, 2, 1))]
    tracks.append(sim.TrackSpec(sim.VEHICLES["StrayCar"], 0, 90.0, sim.WEST, 15000.0,
                                sim.NOISE, bin_span=(0, 100)))
    return sim.SceneSpec(bins=300, shots=20000, tracks=tuple(tracks), seed=seed, name="smoke")


def occupancy_dataset(seed, mode, preset="rc60mix"):
    w, truths = sim.simulate(sim.preset_scene(preset, seed=seed))
    samples = framing.extract_dataset(w, framing.refs_from_truth(truths), BIN_RANGE, mode)
    return dsmod.from_samples(samples, dsmod.OCC2)


def size_dataset(seed, speeds=sim.ALLCARS_SPEEDS):
    scenes = [sim.simulate(sim.preset_scene(f"allcars{v}", seed=seed)) for v in speeds]
    refs = [framing.refs_from_truth(truths) for _, truths in scenes]
    d_m = max(framing.common_length(r, BIN_RANGE) for r in refs)
    samples = []
    for (w, _), r in zip(scenes, refs):
        samples += framing.extract_dataset(w, r, BIN_RANGE, framing.ONE_D, d_m=d_m)
    return dsmod.from_samples(samples, dsmod.SIZE2)


def fit_and_score(ds, arch, variant, epochs, train_fraction, seed, budget_s=None,
                  log=None):
    tr, te = dsmod.split(ds, dsmod.SplitSpec(train_fraction, seed=seed))
    net = models.build(arch, ds.sample_shape(), ds.num_classes, variant, seed=seed)
    t0 = time.perf_counter()
    marks = []

    def on_epoch(epoch, hist):
        marks.append(time.perf_counter() - t0)
        if log:
            log(epoch, hist, marks[-1])
        if budget_s is not None and epoch < epochs:
            projected = marks[-1] / epoch * epochs
            if projected > budget_s:
                raise BudgetExceeded

    done = epochs
    try:
        train(net, tr, TrainConfig(epochs, 32, 1e-3, seed), log=on_epoch)
    except BudgetExceeded:
        done = len(marks)
    rep = evaluate(net, te, "test")
    return RunResult(arch, seed, epochs, done, marks[-1] if marks else 0.0, rep.overall_acc,
                     rep.per_class_acc, len(tr), len(te), marks[0] if marks else 0.0)


def occupancy_run(seed, arch, epochs=500, budget_s=None, log=None, ds=None):
    if ds is None:
        ds = occupancy_dataset(seed, framing.ONE_D if arch == "1d" else framing.TWO_D)
    return fit_and_score(ds, arch, models.OCCUPANCY_SVM, epochs, 0.8, seed, budget_s, log)


def size_run(seed, epochs=100, budget_s=None, log=None, ds=None):
    if ds is None:
        ds = size_dataset(seed)
    return fit_and_score(ds, "1d", models.SIZE_SOFTMAX, epochs, 0.67, seed, budget_s, log)


def summarize(r):
    per = ", ".join(f"{k}: {'n/a' if v is None else f'{v:.3f}'}" for k, v in r.per_class.items())
    return (f"{r.arch} seed {r.seed}: test acc {r.test_acc:.4f} ({per}); "
            f"{r.epochs_done}/{r.epochs_planned} epochs in {r.seconds:.0f} s"
            f" (projected {r.projected_s / 60:.1f} min)")


if __name__ == "__main__":
    import argparse
    import json

    p = argparse.ArgumentParser(description="run the full-length learnability protocols")
    p.add_argument("which", choices=("occupancy", "size"))
    p.add_argument("--seeds", default="0")
    p.add_argument("--arch", default="1d,2d")
    p.add_argument("--epochs", type=int)
    p.add_argument("--log-every", type=int, default=25)
    a = p.parse_args()

    def log(epoch, hist, elapsed):
        if epoch % a.log_every == 0:
            print(f"  epoch {epoch}: loss {hist.mean_loss[-1]:.5f} "
                  f"train {hist.train_acc[-1]:.4f} ({elapsed:.0f} s)", flush=True)

    for seed in (int(s) for s in a.seeds.split(",")):
        if a.which == "occupancy":
            for arch in a.arch.split(","):
                r = occupancy_run(seed, arch, a.epochs or 500, log=log)
                print(summarize(r), flush=True)
                print("RESULT " + json.dumps(r.__dict__), flush=True)
        else:
            r = size_run(seed, a.epochs or 100, log=log)
            print(summarize(r), flush=True)
            print("RESULT " + json.dumps(r.__dict__), flush=True)
