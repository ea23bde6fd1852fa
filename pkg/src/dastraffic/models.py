"""Concrete classifier stacks and a small text syntax for custom ones.

Canonical 1D stack, counted as fourteen stages with input, head, argmax
and output included (stage 8 is the 64-unit feature layer)::

    Input | Conv1D(16,7,2) | ReLU | MaxPool(2) [+Dropout(0.3)] | Conv1D(32,5,2)
    | ReLU | MaxPool(2) [+Dropout(0.3)] + Flatten | Dense(64) | ReLU
    | Dropout(0.5) | Dense(T) | Head | Argmax | Output

The bracketed dropouts belong to the occupancy variant only. The 2D stack
uses kernels three bins tall with bin stride 1, so the six-bin axis goes
6 -> 4 -> 2 and is never pooled.
"""
from __future__ import annotations

import re

from .nn.layers import (Conv1D, Conv2D, Dense, Dropout, Flatten, MaxPool1D, MaxPool2D, ReLU,
                        ShapeError)
from .nn.network import Network

OCCUPANCY_SVM, SIZE_SOFTMAX = "occupancy-svm", "size-softmax"
VARIANTS = (OCCUPANCY_SVM, SIZE_SOFTMAX)
FEATURE_UNITS = 64
POOL_DROPOUT = 0.3
TAIL_DROPOUT = 0.5

CONV1D = ((16, 7, 2), (32, 5, 2))
CONV2D = ((4, (3, 7), (1, 2)), (20, (3, 5), (1, 2)))
POOL_1D = 2
POOL_2D = (1, 2)


def _head(variant):
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    return "svm" if variant == OCCUPANCY_SVM else "softmax"


def _tail(num_classes):
    return [Flatten(), Dense(FEATURE_UNITS), ReLU(), Dropout(TAIL_DROPOUT), Dense(num_classes)]


def layers_1d(num_classes, variant=OCCUPANCY_SVM, pool_dropout=POOL_DROPOUT):
    _head(variant)
    layers = []
    for out, k, s in CONV1D:
        layers += [Conv1D(out, k, s), ReLU(), MaxPool1D(POOL_1D)]
        if variant == OCCUPANCY_SVM:
            layers.append(Dropout(pool_dropout))
    return layers + _tail(num_classes)


def layers_2d(num_classes, pool_dropout=POOL_DROPOUT):
    layers = []
    for out, k, s in CONV2D:
        layers += [Conv2D(out, k, s), ReLU(), MaxPool2D(POOL_2D), Dropout(pool_dropout)]
    return layers + _tail(num_classes)


def min_input_length(make_layers, shape_of):
    """Smallest time length for which ``make_layers()`` chains cleanly."""
    for n in range(1, 1 << 16):
        shape = shape_of(n)
        try:
            for layer in make_layers():
                shape = layer.output_shape(shape)
            return n
        except ShapeError:
            continue
    raise ShapeError("no admissible input length")


def _build(input_shape, layers_fn, shape_of, head, seed, what):
    try:
        return Network(input_shape, layers_fn(), head=head, seed=seed)
    except ShapeError:
        need = min_input_length(layers_fn, shape_of)
        raise ShapeError(f"{what}: sample length {input_shape[-2]} too short, "
                         f"minimum is {need} shots") from None


def build_1d(input_len, num_classes, variant=OCCUPANCY_SVM, seed=0):
    """The canonical 1D classifier for samples of ``input_len`` shots."""
    head = _head(variant)
    return _build((int(input_len), 1), lambda: layers_1d(num_classes, variant),
                  lambda n: (n, 1), head, seed, "build_1d")


def build_2d(input_shape, num_classes, variant=OCCUPANCY_SVM, seed=0):
    """The 2D classifier for ``(6, d_m)`` windows."""
    head = _head(variant)
    rows, length = (int(v) for v in input_shape)
    return _build((rows, length, 1), lambda: layers_2d(num_classes),
                  lambda n: (rows, n, 1), head, seed, "build_2d")


def build(arch, input_shape, num_classes, variant=OCCUPANCY_SVM, seed=0, layers=None):
    """Dispatch on ``arch`` ("1d" or "2d"); ``layers`` overrides with a spec string."""
    shape = tuple(int(v) for v in input_shape)
    if layers:
        in_shape = (shape[-1], 1) if arch == "1d" else (shape[0], shape[1], 1)
        return Network(in_shape, parse_layers(layers, num_classes), head=_head(variant),
                       seed=seed)
    if arch == "1d":
        return build_1d(shape[-1], num_classes, variant, seed)
    if arch == "2d":
        return build_2d(shape, num_classes, variant, seed)
    raise ValueError(f"unknown architecture {arch!r}; expected '1d' or '2d'")


# --- layer list syntax -------------------------------------------------------
#
#   conv1d(16,7,2) relu maxpool1d(2) dropout(0.3) ... flatten dense(64) dense(T)
#
# Layers are separated by whitespace, ';' or '|'. Pairs are written "3x5".
# "T" stands for the number of classes.

_TOKEN = re.compile(r"([a-z0-9]+)(?:\(([^)]*)\))?", re.I)


def _num(text, num_classes):
    text = text.strip()
    if text.upper() == "T":
        return num_classes
    return int(text)


def _pair(text, num_classes):
    if "x" in text:
        a, b = text.lower().split("x")
        return _num(a, num_classes), _num(b, num_classes)
    v = _num(text, num_classes)
    return v, v


def parse_layers(spec, num_classes):
    layers = []
    # spaces inside an argument list are not separators
    spec = re.sub(r"\(([^)]*)\)", lambda m: "(" + re.sub(r"\s+", "", m.group(1)) + ")", spec)
    for raw in re.split(r"[\s;|]+", spec.strip()):
        if not raw:
            continue
        m = _TOKEN.fullmatch(raw)
        if not m:
            raise ValueError(f"cannot parse layer {raw!r}")
        name = m.group(1).lower()
        args = [a for a in (m.group(2) or "").split(",") if a.strip()]
        try:
            if name == "conv1d":
                out, k, *rest = args
                layers.append(Conv1D(_num(out, num_classes), _num(k, num_classes),
                                     _num(rest[0], num_classes) if rest else 1))
            elif name == "conv2d":
                out, k, *rest = args
                layers.append(Conv2D(_num(out, num_classes), _pair(k, num_classes),
                                     _pair(rest[0], num_classes) if rest else (1, 1)))
            elif name == "maxpool1d":
                layers.append(MaxPool1D(_num(args[0], num_classes)))
            elif name == "maxpool2d":
                layers.append(MaxPool2D(_pair(args[0], num_classes)))
            elif name == "relu":
                layers.append(ReLU())
            elif name == "dropout":
                layers.append(Dropout(float(args[0])))
            elif name == "flatten":
                layers.append(Flatten())
            elif name == "dense":
                layers.append(Dense(_num(args[0], num_classes)))
            else:
                raise ValueError(f"unknown layer type {name!r}")
        except (IndexError, ValueError) as exc:
            raise ValueError(f"bad layer {raw!r}: {exc}") from None
    if not layers:
        raise ValueError("empty layer list")
    return layers


def format_layers(layers):
    """Inverse of :func:`parse_layers`."""
    out = []
    for layer in layers:
        if isinstance(layer, Conv1D):
            out.append(f"conv1d({layer.out_channels},{layer.kernel},{layer.stride})")
        elif isinstance(layer, Conv2D):
            (kh, kw), (sh, sw) = layer.kernel_hw, layer.stride_hw
            out.append(f"conv2d({layer.out_channels},{kh}x{kw},{sh}x{sw})")
        elif isinstance(layer, MaxPool1D):
            out.append(f"maxpool1d({layer.width})")
        elif isinstance(layer, MaxPool2D):
            out.append(f"maxpool2d({layer.hw[0]}x{layer.hw[1]})")
        elif isinstance(layer, Dropout):
            out.append(f"dropout({layer.rate!r})")
        elif isinstance(layer, Dense):
            out.append(f"dense({layer.out_units})")
        else:
            out.append(layer.kind)
    return " ".join(out)
