"""Sequential network, forward/backward passes, SGD training and checks."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .layers import Dense, Dropout, Flatten, Layer, MaxPool1D, MaxPool2D, ShapeError
from .losses import huber_svm_loss, one_hot, softmax, softmax_ce_loss

HEADS = ("svm", "softmax")


class Network:
    """An ordered stack of layers followed by a classification head.

    ``head`` is ``"svm"`` (linear scores trained with elementwise Huber loss
    against one-hot targets) or ``"softmax"`` (cross-entropy).
    ``feature_layer`` indexes the Dense layer whose output is the learned
    feature vector; by default the last Dense before the output layer.
    """

    def __init__(self, input_shape, layers, head="softmax", feature_layer=None,
                 seed=0, huber_delta=1.0):
        if head not in HEADS:
            raise ValueError(f"unknown head {head!r}, expected one of {HEADS}")
        self.input_shape = tuple(int(d) for d in input_shape)
        self.layers: list[Layer] = list(layers)
        self.head = head
        self.huber_delta = float(huber_delta)
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1A17]))
        shapes = [self.input_shape]
        for i, layer in enumerate(self.layers):
            try:
                layer.init_params(shapes[-1], rng)
                shapes.append(layer.output_shape(shapes[-1]))
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({layer!r}): {exc}") from None
        if len(shapes[-1]) != 1:
            raise ShapeError(f"network output must be flat, got {shapes[-1]}")
        self.shapes = shapes
        self.num_classes = shapes[-1][0]
        if feature_layer is None:
            dense = [i for i, l in enumerate(self.layers) if isinstance(l, Dense)]
            feature_layer = dense[-2] if len(dense) >= 2 else None
        self.feature_layer = feature_layer

    @property
    def feature_width(self):
        if self.feature_layer is None:
            return None
        return self.shapes[self.feature_layer + 1][0]

    def param_count(self):
        return sum(p.size for layer in self.layers for p in layer.params)

    def get_params(self):
        return [p for layer in self.layers for p in layer.params]

    def copy(self):
        other = object.__new__(Network)
        other.__dict__.update(self.__dict__)
        other.layers = []
        for layer in self.layers:
            clone = object.__new__(type(layer))
            clone.__dict__.update(layer.__dict__)
            clone.params = [p.copy() for p in layer.params]
            other.layers.append(clone)
        return other

    def stages(self):
        """Group layers into the conventional named stages.

        Input, argmax and output count as stages of their own; a dropout or
        flatten directly after a pooling stage joins that stage.
        """
        out = [("Input", [])]
        for i, layer in enumerate(self.layers):
            prev = out[-1][1]
            joins_pool = isinstance(layer, (Dropout, Flatten)) and any(
                isinstance(self.layers[j], (MaxPool1D, MaxPool2D)) for j in prev
            )
            if joins_pool:
                prev.append(i)
            else:
                out.append((repr(layer), [i]))
        out.append(("SvmLinear" if self.head == "svm" else "Softmax", []))
        out.append(("Argmax", []))
        out.append(("Output", []))
        return [(name if not idx else " + ".join(repr(self.layers[j]) for j in idx), idx)
                for name, idx in out]

    def feature_stage(self):
        """1-based stage number of the feature layer."""
        for n, (_, idx) in enumerate(self.stages(), start=1):
            if self.feature_layer in idx:
                return n
        return None

    def __repr__(self):
        body = ", ".join(repr(l) for l in self.layers)
        return f"Network(input={self.input_shape}, [{body}], head={self.head})"


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0
    shuffle_each_epoch: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class Prediction:
    scores: np.ndarray
    label: int


@dataclass
class TrainHistory:
    epoch: list = field(default_factory=list)
    mean_loss: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    eval_acc: list = field(default_factory=list)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "mean_loss", "train_acc", "eval_acc"])
            for row in zip(self.epoch, self.mean_loss, self.train_acc, self.eval_acc):
                e, loss, tr, ev = row
                w.writerow([e, repr(float(loss)), repr(float(tr)),
                            "" if ev is None else repr(float(ev))])


def as_batch(net, x):
    """Reshape raw samples to ``(N, *net.input_shape)`` as float64."""
    x = np.asarray(x, dtype=np.float64)
    want = int(np.prod(net.input_shape))
    if x.ndim >= 1 and x.size and x.size % want == 0 and x[0].size == want:
        return x.reshape((x.shape[0],) + net.input_shape)
    raise ShapeError(_first_offending(net, x.shape[1:]))


def _first_offending(net, sample_shape):
    # walk the stack with the caller's shape; report where it breaks
    shape = tuple(sample_shape)
    if len(shape) == len(net.input_shape) - 1:
        shape = shape + (1,)
    for i, layer in enumerate(net.layers):
        try:
            expected_in = net.shapes[i]
            if layer.params and shape[-1] != expected_in[-1]:
                raise ShapeError(f"expects {expected_in[-1]} input features/channels, got {shape[-1]}")
            shape = layer.output_shape(shape)
        except ShapeError as exc:
            return f"input shape {tuple(sample_shape)} rejected at layer {i} ({layer!r}): {exc}"
    return (f"input shape {tuple(sample_shape)} does not match network input "
            f"{net.input_shape} (first offending layer 0: {net.layers[0]!r})")


def forward(net, x, training=False, rng=None, keep_acts=False):
    """Run the stack. Returns ``(scores, cache)``.

    Scores are raw linear outputs for the SVM head and softmax
    probabilities for the softmax head. The cache holds every layer's
    intermediate state plus the final logits, for :func:`backward`.
    """
    x = as_batch(net, x)
    caches = []
    acts = [x] if keep_acts else None
    for layer in net.layers:
        x, c = layer.forward(x, training=training, rng=rng)
        caches.append(c)
        if keep_acts:
            acts.append(x)
    scores = softmax(x) if net.head == "softmax" else x
    return scores, {"caches": caches, "logits": x, "acts": acts}


def head_loss(net, logits, labels):
    """Per-sample loss and gradient wrt the logits."""
    labels = np.asarray(labels)
    if net.head == "softmax":
        return softmax_ce_loss(logits, labels)
    return huber_svm_loss(logits, one_hot(labels, net.num_classes), net.huber_delta)


def backward(net, cache, dlogits):
    """Reverse-mode pass. ``dlogits`` is the loss gradient wrt the logits.

    Returns a list with one gradient list per layer.
    """
    if cache is None or "caches" not in cache:
        raise ValueError("backward needs the cache from a forward pass")
    grads = [None] * len(net.layers)
    d = dlogits
    for i in range(len(net.layers) - 1, -1, -1):
        d, g = net.layers[i].backward(d, cache["caches"][i], need_dx=i > 0)
        grads[i] = g
    return grads


def loss_and_grads(net, x, labels, training=False, rng=None):
    """Mean batch loss, per-layer gradients, and the forward scores."""
    scores, cache = forward(net, x, training=training, rng=rng)
    loss, dlogits = head_loss(net, cache["logits"], labels)
    n = loss.shape[0]
    grads = backward(net, cache, dlogits / n)
    return float(loss.mean()), grads, scores


def sgd_step(net, grads, learning_rate):
    for layer, g in zip(net.layers, grads):
        if len(g) != len(layer.params):
            raise ValueError(f"gradient/parameter mismatch at {layer!r}")
        for p, dp in zip(layer.params, g):
            if p.shape != dp.shape:
                raise ValueError(f"gradient shape {dp.shape} != parameter shape {p.shape}")
            p -= learning_rate * dp


def _arrays(ds):
    if isinstance(ds, tuple):
        x, y = ds
        return np.asarray(x), np.asarray(y)
    return ds.arrays()


def _n_classes(ds):
    if isinstance(ds, tuple):
        return None
    return ds.num_classes


def train(net, train_ds, config, eval_ds=None, log=None):
    """Mini-batch SGD over ``train_ds`` (a dataset or an ``(x, y)`` pair).

    Loss is the mean over each batch; the final short batch is kept. The
    recorded epoch loss is the sample-weighted mean of the batch losses and
    the train accuracy is measured on the same (dropout-on) forward passes.
    """
    k = _n_classes(train_ds)
    if k is not None and k != net.num_classes:
        raise ValueError(f"dataset has {k} classes but network outputs {net.num_classes}")
    x, y = _arrays(train_ds)
    x = as_batch(net, x)
    if y.size and (y.min() < 0 or y.max() >= net.num_classes):
        raise ValueError("labels out of range for the network head")
    eval_xy = None
    if eval_ds is not None:
        eval_xy = _arrays(eval_ds)

    shuffle_rng, dropout_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(2)
    )
    n = x.shape[0]
    order = np.arange(n)
    hist = TrainHistory()
    for epoch in range(1, config.epochs + 1):
        if config.shuffle_each_epoch or epoch == 1:
            order = shuffle_rng.permutation(n)
        total = 0.0
        correct = 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads, scores = loss_and_grads(net, x[idx], y[idx], training=True,
                                                 rng=dropout_rng)
            sgd_step(net, grads, config.learning_rate)
            total += loss * len(idx)
            correct += int((scores.argmax(axis=1) == y[idx]).sum())
        hist.epoch.append(epoch)
        hist.mean_loss.append(total / n)
        hist.train_acc.append(correct / n)
        if eval_xy is not None:
            hist.eval_acc.append(accuracy(net, *eval_xy))
        else:
            hist.eval_acc.append(None)
        if log is not None:
            log(epoch, hist)
    return hist


def predict_batch(net, x, batch_size=128):
    """Scores for many samples with dropout off."""
    x = as_batch(net, x)
    out = [forward(net, x[i:i + batch_size])[0] for i in range(0, x.shape[0], batch_size)]
    if not out:
        return np.zeros((0, net.num_classes))
    return np.concatenate(out)


def predict(net, sample):
    scores = predict_batch(net, np.asarray(sample)[None])[0]
    return Prediction(scores=scores, label=int(np.argmax(scores)))


def accuracy(net, x, y):
    if len(y) == 0:
        return float("nan")
    labels = predict_batch(net, x).argmax(axis=1)
    return float((labels == np.asarray(y)).mean())


def extract_features(net, sample):
    """Activation of the feature layer for one sample."""
    if net.feature_layer is None:
        raise ValueError("network has no feature layer")
    _, cache = forward(net, np.asarray(sample)[None], keep_acts=True)
    return cache["acts"][net.feature_layer + 1][0].copy()


def gradient_check(net, sample, label, eps=1e-5, max_checks=None, seed=0):
    """Largest relative error between backprop and central differences.

    Runs in eval mode, so dropout is inactive. With ``max_checks`` set, a
    seeded subsample of that many parameter entries is checked (at least
    200 are used unless the network has fewer).
    """
    x = np.asarray(sample, dtype=float)[None]
    y = np.array([label])

    def loss_at():
        scores, cache = forward(net, x)
        val = float(head_loss(net, cache["logits"], y)[0][0])
        if not np.isfinite(val):
            raise FloatingPointError("non-finite loss in gradient check")
        return val

    loss_at()
    _, grads, _ = loss_and_grads(net, x, y)
    slots = [(li, pi, j)
             for li, layer in enumerate(net.layers)
             for pi, p in enumerate(layer.params)
             for j in range(p.size)]
    if max_checks is not None and len(slots) > max(200, max_checks):
        rng = np.random.default_rng(seed)
        pick = rng.choice(len(slots), size=max(200, max_checks), replace=False)
        slots = [slots[i] for i in sorted(pick)]
    worst = 0.0
    for li, pi, j in slots:
        p = net.layers[li].params[pi].reshape(-1)
        orig = p[j]
        p[j] = orig + eps
        up = loss_at()
        p[j] = orig - eps
        down = loss_at()
        p[j] = orig
        numeric = (up - down) / (2 * eps)
        analytic = grads[li][pi].reshape(-1)[j]
        err = abs(analytic - numeric) / max(1e-12, abs(analytic) + abs(numeric))
        worst = max(worst, err)
    return worst
