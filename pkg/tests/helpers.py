"""Shared oracles for the test suite."""

from __future__ import annotations

import numpy as np

from react_ood.smallnet import MlpModel, gradients, loss_value


def param_arrays(model: MlpModel):
    """(name, array) for every trainable array plus nothing else."""
    out = []
    for i, w in enumerate(model.weights):
        out.append((f"W{i}", w))
        if model.biases[i] is not None:
            out.append((f"b{i}", model.biases[i]))
    if model.bn is not None:
        for i, bn in enumerate(model.bn):
            out.append((f"gamma{i}", bn.gamma))
            out.append((f"beta{i}", bn.beta))
    return out


def analytic_arrays(model: MlpModel, grads):
    out = []
    for i in range(len(model.weights)):
        out.append(grads.weights[i])
        if model.biases[i] is not None:
            out.append(grads.biases[i])
    if model.bn is not None:
        for i in range(model.n_hidden):
            out.append(grads.gamma[i])
            out.append(grads.beta[i])
    return out


def finite_difference(fn, arr: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central differences of scalar ``fn()`` w.r.t. every entry of ``arr`` (mutated in place, restored)."""
    grad = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = arr[idx]
        arr[idx] = orig + h
        up = fn()
        arr[idx] = orig - h
        down = fn()
        arr[idx] = orig
        grad[idx] = (up - down) / (2 * h)
    return grad


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """Norm-wise relative error ``|a - b| / max(|a|, |b|)`` (0 when both vanish)."""
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - b) / scale)


def gradient_check(model: MlpModel, batch: np.ndarray, labels: np.ndarray, train: bool = True, h: float = 1e-6):
    """Worst norm-wise relative error over all parameter arrays and the inputs."""
    _, grads = gradients(model, batch, labels, train=train)
    errors = {}
    for (name, arr), an in zip(param_arrays(model), analytic_arrays(model, grads)):
        fd = finite_difference(lambda: loss_value(model, batch, labels, train=train), arr, h)
        errors[name] = rel_error(an, fd)
    x = batch.copy()
    fd = finite_difference(lambda: loss_value(model, x, labels, train=train), x, h)
    errors["inputs"] = rel_error(grads.inputs, fd)
    return errors


# --- metric oracles ---------------------------------------------------------------


def auroc_bruteforce(ids, oods):
    total = 0.0
    for a in ids:
        for b in oods:
            total += 1.0 if a > b else 0.5 if a == b else 0.0
    return total / (len(ids) * len(oods))


def fpr_oracle(ids, oods, tpr):
    """Scan every ID score as a candidate threshold; keep the largest admissible."""
    best = None
    for lam in ids:
        frac = sum(s >= lam for s in ids) / len(ids)
        if frac >= tpr - 1e-12 and (best is None or lam > best):
            best = lam
    return sum(s >= best for s in oods) / len(oods), best


def aupr_oracle(ids, oods):
    """Sweep all distinct thresholds high-to-low, trapezoid over (recall, precision)."""
    points = []
    for t in sorted(set(ids) | set(oods), reverse=True):
        tp = sum(s >= t for s in ids)
        fp = sum(s >= t for s in oods)
        points.append((tp / len(ids), tp / (tp + fp)))
    points.insert(0, (0.0, points[0][1]))
    return sum((r1 - r0) * (p0 + p1) / 2 for (r0, p0), (r1, p1) in zip(points, points[1:]))
