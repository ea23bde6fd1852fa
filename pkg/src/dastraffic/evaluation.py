"""Accuracy reports, confusion matrices and the fixed-width result tables."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from .dataset import CLASS_NAMES, OCC2, OCC5, SIZE2
from .nn.network import predict_batch

DASH = "—"
OCCUPANCY_TABLE, SIZE_TABLE = "occupancy", "size"


@dataclass(frozen=True)
class EvalReport:
    task: str
    dataset_name: str
    confusion: np.ndarray  # rows truth, columns prediction

    @property
    def class_names(self):
        return CLASS_NAMES[self.task]

    @property
    def support(self):
        return self.confusion.sum(axis=1)

    @property
    def total(self):
        return int(self.confusion.sum())

    @property
    def overall_acc(self):
        if self.total == 0:
            return float("nan")
        return float(np.trace(self.confusion) / self.total)

    @property
    def per_class_acc(self):
        """Class name to accuracy, or None for classes absent from the data."""
        out = {}
        for i, name in enumerate(self.class_names):
            n = self.confusion[i].sum()
            out[name] = None if n == 0 else float(self.confusion[i, i] / n)
        return out


def confusion_matrix(truth, pred, num_classes):
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(truth, dtype=np.int64), np.asarray(pred, dtype=np.int64)), 1)
    return cm


def report_from_predictions(task, truth, pred, dataset_name=""):
    return EvalReport(task, dataset_name, confusion_matrix(truth, pred, len(CLASS_NAMES[task])))


def evaluate(net, ds, dataset_name=""):
    """Score ``net`` on every sample of ``ds`` with dropout off."""
    if ds.num_classes != net.num_classes:
        raise ValueError(f"{ds.task} has {ds.num_classes} classes, network outputs "
                         f"{net.num_classes}")
    x, y = ds.arrays()
    pred = predict_batch(net, x).argmax(axis=1) if len(ds) else np.zeros(0, dtype=np.int64)
    return report_from_predictions(ds.task, y, pred, dataset_name)


def independent_average(reports_or_accs):
    """Unweighted mean of overall accuracies (reports or bare numbers)."""
    vals = [r.overall_acc if isinstance(r, EvalReport) else float(r) for r in reports_or_accs]
    if not vals:
        raise ValueError("independent_average needs at least one report")
    return sum(vals) / len(vals)


def percent(acc):
    """Accuracy in [0, 1] (or a percentage above 1) as a half-up rounded integer string."""
    if acc is None or (isinstance(acc, float) and np.isnan(acc)):
        return DASH
    value = Decimal(repr(float(acc)))
    if value <= 1:
        value *= 100
    return str(value.quantize(Decimal(1), rounding=ROUND_HALF_UP))


def avg_line(report):
    """``Avg 92 (Large: 89, Small: 94)``; absent classes are left out."""
    parts = [f"{name}: {percent(acc)}" for name, acc in report.per_class_acc.items()
             if acc is not None]
    return f"Avg {percent(report.overall_acc)} ({', '.join(parts)})"


# --- tables -------------------------------------------------------------------
#
# Occupancy layout: rows are dataset roles, columns are task x architecture.
# Reports are matched through ``dataset_name`` of the form "<role>/<arch>",
# e.g. "test/1d", "ind-5p/2d"; 2-way oversampled runs use task key "occ2os".

OCC_COLUMNS = (("occ5", "5-way"), ("occ2", "2-way"), ("occ2os", "2-way†"))
OCC_ROWS = (("test", "Acc (%)"), ("ind-5p", "Ind. 5p"), ("ind-1p", "Ind. 1p"))
ARCHS = ("1d", "2d")


def _task_key(report):
    if report.task == OCC5:
        return "occ5"
    if report.task == OCC2:
        return "occ2os" if "oversampled" in report.dataset_name else "occ2"
    return "size"


def _role_arch(report):
    name = report.dataset_name.replace("oversampled", "").strip("/ ")
    role, _, arch = name.partition("/")
    return role.strip(), arch.strip().split("/")[0]


def _occupancy_cells(reports):
    cells = {}
    for r in reports:
        role, arch = _role_arch(r)
        cells[(role, _task_key(r), arch)] = r.overall_acc
    for key, _ in OCC_COLUMNS:
        for arch in ARCHS:
            ind = [cells[(role, key, arch)] for role, _ in OCC_ROWS[1:]
                   if (role, key, arch) in cells]
            if ind:
                cells[("ind-avg", key, arch)] = independent_average(ind)
    return cells


def render_occupancy_table(reports):
    cells = _occupancy_cells(reports)
    heads = [f"{label} {arch.upper()}" for _, label in OCC_COLUMNS for arch in ARCHS]
    width = max(len(h) for h in heads) + 2
    rows = list(OCC_ROWS) + [("ind-avg", "Ind. Avg")]
    first = max(len(label) for _, label in rows) + 2
    lines = ["".ljust(first) + "".join(h.rjust(width) for h in heads)]
    for role, label in rows:
        vals = [percent(cells.get((role, key, arch))) for key, _ in OCC_COLUMNS for arch in ARCHS]
        lines.append(label.ljust(first) + "".join(v.rjust(width) for v in vals))
    return "\n".join(lines)


def render_size_table(reports):
    lines = []
    for r in reports:
        if r.task != SIZE2:
            continue
        lines.append(f"{(r.dataset_name or 'test'):<16}{avg_line(r)}")
    if not lines:
        lines.append(f"{'test':<16}Avg {DASH} (Large: {DASH}, Small: {DASH})")
    return "\n".join(lines)


def render_table(reports, layout=OCCUPANCY_TABLE):
    reports = list(reports)
    if layout == OCCUPANCY_TABLE:
        return render_occupancy_table(reports)
    if layout == SIZE_TABLE:
        return render_size_table(reports)
    raise ValueError(f"unknown layout {layout!r}")


def report_csv(reports):
    """One row per (report, class) plus an ``all`` row, full precision."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["task", "dataset", "class", "accuracy", "support"])
    for r in reports:
        for name, acc, n in zip(r.class_names, r.per_class_acc.values(), r.support):
            w.writerow([r.task, r.dataset_name, name, "n/a" if acc is None else repr(acc), int(n)])
        acc = r.overall_acc
        w.writerow([r.task, r.dataset_name, "all", "n/a" if np.isnan(acc) else repr(acc),
                    r.total])
    return buf.getvalue()


def confusion_text(report):
    names = report.class_names
    width = max(6, max(len(n) for n in names) + 2)
    lines = ["truth\\pred".ljust(width + 4) + "".join(n.rjust(width) for n in names)]
    for name, row in zip(names, report.confusion):
        lines.append(name.ljust(width + 4) + "".join(str(int(v)).rjust(width) for v in row))
    return "\n".join(lines)
