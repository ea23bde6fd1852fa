"""Command line front end: simulate, extract, train, eval, render.

Exit codes: 0 success, 2 usage or configuration error, 3 bad data file,
4 internal invariant failure.

Every subcommand accepts ``--config FILE``: UTF-8 ``key = value`` lines
under ``[section]`` headers named after the subcommand (keys before any
header apply to all). Keys are flag names without the leading dashes.
Command-line flags override file values.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import os
import sys
import time

from . import dataset as dsmod
from . import evaluation, framing, models, sim
from .nn import serialize
from .nn.network import TrainConfig, train
from .waterfall import WaterfallFormatError, atomic_write, load_waterfall, render_pgm, save_waterfall

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4

TASK_FLAGS = {"occ5": dsmod.OCC5, "occ2": dsmod.OCC2, "size": dsmod.SIZE2}
TASK_KEYS = {v: k for k, v in TASK_FLAGS.items()}
TRUTH_FIELDS = ["track_id", "label_kind", "label", "speed_kmh", "direction", "c1", "c2", "c3",
                "c4", "vehicle", "occupancy", "size_class", "first_bin", "last_bin"]


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


def _range(text, cast=int):
    try:
        lo, hi = text.split(":")
        return cast(lo), cast(hi)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo:hi, got {text!r}") from None


def _float_range(text):
    return _range(text, float)


def _on_off(text):
    t = str(text).strip().lower()
    if t in ("on", "true", "yes", "1"):
        return True
    if t in ("off", "false", "no", "0"):
        return False
    raise argparse.ArgumentTypeError(f"expected on/off, got {text!r}")


# --- simulate ------------------------------------------------------------------

def truth_csv(truths):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRUTH_FIELDS)
    for gt in truths:
        tr = gt.track
        w.writerow([gt.track_id, tr.label_kind, tr.label, repr(float(tr.speed_kmh)), tr.direction,
                    repr(gt.c1), repr(gt.c2), repr(gt.c3), repr(gt.c4), tr.vehicle.name,
                    tr.occupancy, tr.vehicle.size_class, gt.first_bin, gt.last_bin])
    return buf.getvalue()


def read_truth(path):
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(TRUTH_FIELDS[:9]) - set(reader.fieldnames or [])
        if missing:
            raise DataError(f"{path}: truth file lacks columns {sorted(missing)}")
        for n, row in enumerate(reader, start=2):
            try:
                rows.append({
                    "track_id": int(row["track_id"]),
                    "label_kind": row["label_kind"],
                    "label": int(row["label"]),
                    "speed_kmh": float(row["speed_kmh"]),
                    "direction": row["direction"] or None,
                    "fit": framing.TrackFit(*(float(row[f"c{i}"]) for i in range(1, 5))),
                    "vehicle": row.get("vehicle", ""),
                    "occupancy": int(row.get("occupancy") or row["label"]),
                    "size_class": row.get("size_class", ""),
                })
            except (KeyError, ValueError) as exc:
                raise DataError(f"{path}:{n}: bad truth row ({exc})") from None
    return rows


def cmd_simulate(a):
    if bool(a.preset) == bool(a.scene):
        raise UsageError("give exactly one of --preset or --scene")
    if a.preset:
        scene = sim.preset_scene(a.preset, seed=a.seed if a.seed is not None else 0)
    else:
        with open(a.scene, encoding="utf-8") as fh:
            scene = sim.scene_from_config(fh.read(), seed=a.seed)
    w, truths = sim.simulate(scene)
    save_waterfall(w, a.out)
    atomic_write(a.truth, truth_csv(truths).encode())
    controlled = sum(gt.track.label_kind != sim.NOISE for gt in truths)
    print(f"{w.bins} bins x {w.shots} shots, {len(truths)} tracks "
          f"({controlled} controlled, {len(truths) - controlled} noise) -> {a.out}")


# --- extract -------------------------------------------------------------------

def _refs_for_task(rows, task, vehicle=None):
    refs = []
    for r in rows:
        if r["label_kind"] == sim.NOISE:
            continue
        if vehicle and r["vehicle"] != vehicle:
            continue
        if task == dsmod.SIZE2:
            label = 2 if r["size_class"] == sim.LARGE else 1
            if r["label_kind"] == sim.SIZE:
                label = r["label"]
        else:
            label = r["occupancy"]
        refs.append(framing.TrackRef(r["fit"], label, r["direction"], r["speed_kmh"],
                                     r["track_id"]))
    return refs


def cmd_extract(a):
    task = TASK_FLAGS[a.task]
    w = load_waterfall(a.waterfall)
    refs = _refs_for_task(read_truth(a.truth), task, a.vehicle)
    if not refs:
        raise UsageError("no controlled tracks to extract (check --truth / --vehicle)")
    lo, hi = a.bins
    if hi < lo:
        raise UsageError(f"empty bin range {lo}:{hi}")
    mode = framing.ONE_D if a.mode == "1d" else framing.TWO_D
    try:
        samples = framing.extract_dataset(w, refs, (lo, hi), mode, d_m=a.dm, cap=a.dm_cap)
    except framing.FrameRangeError as exc:
        raise UsageError(str(exc)) from None
    ds = dsmod.from_samples(samples, task)
    dsmod.save_dataset(ds, a.out)
    if a.manifest:
        atomic_write(a.manifest, dsmod.manifest_csv(ds).encode())
    shape = "x".join(map(str, ds.sample_shape()))
    print(dsmod.count_table(ds, f"{ds.task} samples ({a.mode}, shape {shape})"))
    if ds.num_classes == 2:
        try:
            print(f"IR = {dsmod.imbalance_ratio(ds):.3f}")
        except dsmod.DatasetError:
            print("IR = n/a (one class empty)")


# --- train ---------------------------------------------------------------------

def _check_task(ds, a):
    if a.task and TASK_FLAGS[a.task] != ds.task:
        raise UsageError(f"--task {a.task} does not match dataset task {ds.task}")


def cmd_train(a):
    if a.epochs < 1:
        raise UsageError("--epochs must be >= 1")
    if a.batch < 1:
        raise UsageError("--batch must be >= 1")
    if not 0.0 < a.split < 1.0:
        raise UsageError(f"--split must lie in (0, 1), got {a.split}")
    ds = dsmod.load_dataset(a.dataset)
    _check_task(ds, a)
    if len(ds) == 0:
        raise DataError(f"{a.dataset}: dataset is empty")
    shape = ds.sample_shape()
    if (a.arch == "2d") != (len(shape) == 2):
        raise UsageError(f"--arch {a.arch} does not fit samples of shape {shape}")
    variant = a.variant or (models.SIZE_SOFTMAX if ds.task == dsmod.SIZE2
                            else models.OCCUPANCY_SVM)
    spec = dsmod.SplitSpec(a.split, seed=a.seed, group=a.group_split)
    tr, te = dsmod.split(ds, spec)
    if a.oversample:
        tr = dsmod.oversample_minority(tr, seed=a.seed)
        print(f"oversampled train split: {tr.counts()} (IR = {dsmod.imbalance_ratio(tr):.3f})")
    net = models.build(a.arch, shape, ds.num_classes, variant, seed=a.seed, layers=a.layers)
    cfg = TrainConfig(a.epochs, a.batch, a.lr, a.seed)
    t0 = time.perf_counter()

    def log(epoch, h):
        if a.log_every and epoch % a.log_every == 0:
            ev = h.eval_acc[-1]
            print(f"epoch {epoch}: loss {h.mean_loss[-1]:.5f} train {h.train_acc[-1]:.4f}"
                  f" test {'n/a' if ev is None else f'{ev:.4f}'}"
                  f" ({time.perf_counter() - t0:.0f} s)", file=sys.stderr, flush=True)

    hist = train(net, tr, cfg, eval_ds=te if len(te) else None, log=log)
    serialize.save_model(net, a.out)
    if a.history:
        buf = io.StringIO()
        hist_rows(hist, buf)
        atomic_write(a.history, buf.getvalue().encode())
    if a.test_out:
        dsmod.save_dataset(te, a.test_out)
    train_rep = evaluation.evaluate(net, tr, "train")
    line = f"final train accuracy {train_rep.overall_acc:.4f}"
    if len(te):
        test_rep = evaluation.evaluate(net, te, "test")
        line += f", test accuracy {test_rep.overall_acc:.4f}"
    print(f"{a.arch} {variant}, {net.param_count()} parameters, {len(tr)} train / {len(te)} test")
    print(line)


def hist_rows(hist, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["epoch", "mean_loss", "train_acc", "eval_acc"])
    for e, loss, tr, ev in zip(hist.epoch, hist.mean_loss, hist.train_acc, hist.eval_acc):
        w.writerow([e, repr(float(loss)), repr(float(tr)), "" if ev is None else repr(float(ev))])


# --- eval / render ---------------------------------------------------------------

def cmd_eval(a):
    net = serialize.load_model(a.model)
    ds = dsmod.load_dataset(a.dataset)
    _check_task(ds, a)
    want = net.input_shape[:-1]
    got = ds.sample_shape()
    if got is not None and tuple(got) != tuple(want) and tuple(got) != (want[0],):
        if len(got) != len(want) or got[:-1] != want[:-1]:
            raise UsageError(f"dataset samples {got} do not fit model input {want}")
        ds = dsmod.pad_dataset(ds, want[-1])
    name = a.name or os.path.splitext(os.path.basename(a.dataset))[0]
    rep = evaluation.evaluate(net, ds, name)
    atomic_write(a.out, evaluation.report_csv([rep]).encode())
    layout = evaluation.SIZE_TABLE if ds.task == dsmod.SIZE2 else evaluation.OCCUPANCY_TABLE
    if layout == evaluation.SIZE_TABLE:
        print(evaluation.render_table([rep], layout))
    else:
        print(f"{name}: accuracy {evaluation.percent(rep.overall_acc)}% "
              f"over {rep.total} samples")
    print(evaluation.confusion_text(rep))


def cmd_render(a):
    lo, hi = a.range
    if not lo < hi:
        raise UsageError(f"--range needs lo < hi, got {lo}:{hi}")
    w = load_waterfall(a.waterfall)
    atomic_write(a.out, render_pgm(w, lo, hi))
    print(f"{w.shots}x{w.bins} P5 image -> {a.out}")


# --- parser ----------------------------------------------------------------------

REQUIRED = {
    "simulate": ("out", "truth"),
    "extract": ("waterfall", "truth", "out"),
    "train": ("dataset", "out"),
    "eval": ("model", "dataset", "out"),
    "render": ("waterfall", "out"),
}


def build_parser():
    p = argparse.ArgumentParser(prog="dastraffic", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="synthesize a waterfall and its ground truth")
    s.add_argument("--preset", help=f"one of {', '.join(sim.PRESET_NAMES)}")
    s.add_argument("--scene", help="scene file (key = value format)")
    s.add_argument("--seed", type=int, help="random seed (default: 0 or the scene file's)")
    s.add_argument("--out", help="output waterfall (.dasw)")
    s.add_argument("--truth", help="output ground-truth CSV")

    e = sub.add_parser("extract", help="frame and cut labelled samples")
    e.add_argument("--waterfall", help="input .dasw")
    e.add_argument("--truth", help="ground-truth CSV from simulate")
    e.add_argument("--mode", choices=("1d", "2d"), default="1d")
    e.add_argument("--task", choices=tuple(TASK_FLAGS), default="occ5")
    e.add_argument("--bins", type=_range, default="250:750", help="controlled bin range lo:hi")
    e.add_argument("--vehicle", help="keep only tracks of this vehicle")
    e.add_argument("--dm", type=int, help="common sample length (default: longest frame)")
    e.add_argument("--dm-cap", type=int, default=framing.DEFAULT_DM_CAP)
    e.add_argument("--manifest", help="also write a CSV manifest of the samples")
    e.add_argument("--out", help="output dataset (.dass)")

    t = sub.add_parser("train", help="train a classifier on a dataset")
    t.add_argument("--dataset", help="input .dass")
    t.add_argument("--arch", choices=("1d", "2d"), default="1d")
    t.add_argument("--task", choices=tuple(TASK_FLAGS), help="assert the dataset's task")
    t.add_argument("--variant", choices=models.VARIANTS,
                   help="default: size-softmax for size, occupancy-svm otherwise")
    t.add_argument("--layers", help="custom layer list, e.g. 'conv1d(8,5,2) relu ... dense(T)'")
    t.add_argument("--epochs", type=int, default=100)
    t.add_argument("--batch", type=int, default=32)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--split", type=float, default=0.8, help="train fraction")
    t.add_argument("--group-split", type=_on_off, default="off",
                   help="keep every pass on one side of the split (on/off)")
    t.add_argument("--oversample", type=_on_off, default="off",
                   help="oversample the minority class of the train split (on/off)")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--log-every", type=int, default=0, help="print progress every N epochs")
    t.add_argument("--out", help="output model (.dasm)")
    t.add_argument("--history", help="output per-epoch CSV")
    t.add_argument("--test-out", help="also write the held-out split (.dass)")

    v = sub.add_parser("eval", help="score a model on a dataset")
    v.add_argument("--model", help="input .dasm")
    v.add_argument("--dataset", help="input .dass")
    v.add_argument("--task", choices=tuple(TASK_FLAGS), help="assert the dataset's task")
    v.add_argument("--name", help="dataset name used in the report")
    v.add_argument("--out", help="output report CSV")

    r = sub.add_parser("render", help="export a waterfall as a PGM image")
    r.add_argument("--waterfall", help="input .dasw")
    r.add_argument("--range", type=_float_range, default="-0.5:0.5",
                   help="value range lo:hi mapped to black..white")
    r.add_argument("--out", help="output .pgm")

    for sp in (s, e, t, v, r):
        sp.add_argument("--config", help="key = value defaults for this command")
    return p, {"simulate": s, "extract": e, "train": t, "eval": v, "render": r}


def _config_defaults(path, section, subparser):
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), default_section="all")
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
        # keys before the first header apply to every command
        cp.read_string("[all]\n" + text)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    except configparser.Error as exc:
        raise UsageError(f"bad config {path}: {exc}") from None
    known = {a.dest: a for a in subparser._actions}
    values = dict(cp.defaults())
    if cp.has_section(section):
        values.update({k: v for k, v in cp.items(section)})
    out = {}
    for key, value in values.items():
        dest = key.replace("-", "_")
        if dest not in known or dest in ("help", "config"):
            if cp.has_section(section) and key in cp._sections.get(section, {}):
                raise UsageError(f"config {path}: unknown key {key!r} for {section}")
            continue
        out[dest] = value
    return out


def _threads():
    n = os.environ.get("DAS_THREADS")
    if not n:
        return None
    try:
        n = int(n)
    except ValueError:
        raise UsageError(f"DAS_THREADS must be an integer, got {n!r}") from None
    if n < 1:
        raise UsageError("DAS_THREADS must be >= 1")
    return n


COMMANDS = {"simulate": cmd_simulate, "extract": cmd_extract, "train": cmd_train,
            "eval": cmd_eval, "render": cmd_render}


def _glue_negative_ranges(argv):
    # "--range -1:1" would otherwise read "-1:1" as an option
    out, i = [], 0
    while i < len(argv):
        if argv[i] in ("--range", "--bins") and i + 1 < len(argv) and argv[i + 1].startswith("-"):
            out.append(f"{argv[i]}={argv[i + 1]}")
            i += 2
            continue
        out.append(argv[i])
        i += 1
    return out


def run(argv=None):
    parser, subs = build_parser()
    argv = _glue_negative_ranges(list(sys.argv[1:] if argv is None else argv))
    try:
        a = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        if a.config:
            defaults = _config_defaults(a.config, a.command, subs[a.command])
            subs[a.command].set_defaults(**defaults)
            try:
                a = parser.parse_args(argv)
            except SystemExit as exc:
                return exc.code if isinstance(exc.code, int) else EXIT_USAGE
        missing = [f"--{k.replace('_', '-')}" for k in REQUIRED[a.command]
                   if getattr(a, k, None) in (None, "")]
        if missing:
            raise UsageError(f"{a.command}: missing {', '.join(missing)}")
        threads = _threads()
        if threads is not None:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=threads):
                COMMANDS[a.command](a)
        else:
            COMMANDS[a.command](a)
    except (UsageError, sim.SceneError, argparse.ArgumentTypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: no such file: {exc.filename}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, WaterfallFormatError, dsmod.DatasetError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # invariant failures and bugs
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
