import numpy as np


def huber(a, delta=1.0):
    """Elementwise Huber penalty: quadratic inside |a| < delta, linear outside."""
    a = np.asarray(a, dtype=float)
    abs_a = np.abs(a)
    return np.where(abs_a < delta, 0.5 * a * a, delta * (abs_a - 0.5 * delta))


def huber_svm_loss(k, g, delta=1.0):
    """Summed Huber loss of scores ``k`` against one-hot targets ``g``.

    Works on one sample (1-D arrays) or a batch (rows). Returns the loss per
    sample and the gradient wrt ``k``, which is ``k - g`` clipped to
    ``[-delta, delta]``.
    """
    k = np.asarray(k, dtype=float)
    g = np.asarray(g, dtype=float)
    if k.shape != g.shape:
        raise ValueError(f"score/target length mismatch: {k.shape} vs {g.shape}")
    a = k - g
    loss = huber(a, delta).sum(axis=-1)
    return loss, np.clip(a, -delta, delta)


def softmax(u):
    u = np.asarray(u, dtype=float)
    z = u - u.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_ce_loss(u, label):
    """Cross-entropy of softmax(u) at ``label``; gradient is p - onehot."""
    u = np.asarray(u, dtype=float)
    label = np.asarray(label)
    n_classes = u.shape[-1]
    if np.any(label < 0) or np.any(label >= n_classes):
        raise ValueError(f"label out of range for {n_classes} classes")
    z = u - u.max(axis=-1, keepdims=True)
    log_p = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    p = np.exp(log_p)
    onehot = np.eye(n_classes)[label]
    loss = -(log_p * onehot).sum(axis=-1)
    return loss, p - onehot


def one_hot(labels, n_classes):
    return np.eye(n_classes)[np.asarray(labels)]
