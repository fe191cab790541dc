"""Analytic reverse-mode gradients for the adapter pipeline.

``backward`` pushes an output cotangent batch through the four forward
stages in reverse: the two shuffles backpropagate as their inverse index
routing (bit-exact, no arithmetic), the two block stages as the usual
matrix-product rules. ``grad_check`` certifies the result against central
finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import MonarchAdapter, MonarchConfig, apply
from .errors import NumericalError, StructuralError


def init_grad_configs() -> list[MonarchConfig]:
    """Fixed spread of small configs used for finite-difference certification."""
    dims = [
        (8, 1, 3), (8, 2, 2), (12, 2, 3), (12, 3, 2), (16, 4, 2),
        (16, 2, 4), (20, 5, 2), (24, 4, 3), (24, 3, 4), (16, 1, 8),
    ]
    return [MonarchConfig(n, blocks, r) for n, blocks, r in dims]


@dataclass
class AdapterGrads:
    """Gradients w.r.t. both factors and the input batch."""

    d_factor_in: np.ndarray
    d_factor_out: np.ndarray
    d_input: np.ndarray


def _as_batch(arr, n: int, what: str) -> np.ndarray:
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2 or a.shape[1] != n:
        raise StructuralError(f"{what} must have {n} features, got shape {np.shape(arr)}")
    return a


def backward(adapter: MonarchAdapter, x, upstream) -> AdapterGrads:
    """Gradients of sum_rows <upstream_row, apply(x_row)> w.r.t. factors and x."""
    cfg = adapter.config
    batch = _as_batch(x, cfg.n, "input")
    grad = _as_batch(upstream, cfg.n, "upstream")
    if batch.shape[0] != grad.shape[0]:
        raise StructuralError(
            f"upstream batch {grad.shape[0]} != input batch {batch.shape[0]}"
        )
    nb, m, r = cfg.blocks, cfg.block_size, cfg.block_rank
    rows = batch.shape[0]

    xb = batch.reshape(rows, nb, m).transpose(1, 0, 2)              # (N, B, m)
    y = np.matmul(xb, adapter.factor_in.transpose(0, 2, 1)).transpose(1, 0, 2)
    z = np.ascontiguousarray(
        y.reshape(rows, r, nb).swapaxes(1, 2).transpose(1, 0, 2)   # (N, B, r)
    )

    gw = np.ascontiguousarray(grad.reshape(rows, m, nb).transpose(2, 0, 1))  # (N, B, m)
    d_factor_out = np.matmul(gw.transpose(0, 2, 1), z)              # (N, m, r)
    gz = np.matmul(gw, adapter.factor_out).transpose(1, 0, 2)       # (B, N, r)
    gy = gz.swapaxes(1, 2).reshape(rows, nb * r).reshape(rows, nb, r)
    gy_t = np.ascontiguousarray(gy.transpose(1, 0, 2))              # (N, B, r)
    d_factor_in = np.matmul(gy_t.transpose(0, 2, 1), xb)            # (N, r, m)
    d_input = np.matmul(gy_t, adapter.factor_in).transpose(1, 0, 2).reshape(rows, cfg.n)
    return AdapterGrads(d_factor_in, d_factor_out, d_input)


def mse_loss(pred, target) -> tuple[float, np.ndarray]:
    """Mean over rows of the squared 2-norm error, with its gradient."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise StructuralError(f"prediction shape {p.shape} != target shape {t.shape}")
    rows = p.shape[0] if p.ndim == 2 else 1
    diff = p - t
    loss = float(np.sum(diff * diff)) / rows
    return loss, 2.0 * diff / rows


def softmax_xent_loss(logits, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of row-wise softmax against integer labels."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels)
    if z.ndim != 2 or y.ndim != 1 or y.shape[0] != z.shape[0]:
        raise StructuralError("logits must be (batch, classes) with one label per row")
    if y.min() < 0 or y.max() >= z.shape[1]:
        raise StructuralError("labels out of range")
    rows = z.shape[0]
    shifted = z - z.max(axis=1, keepdims=True)
    logsumexp = np.log(np.sum(np.exp(shifted), axis=1))
    loss = float(np.mean(logsumexp - shifted[np.arange(rows), y]))
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)
    probs[np.arange(rows), y] -= 1.0
    return loss, probs / rows


_LOSSES = ("mse", "softmax_xent")


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_coordinate: tuple[str, int]
    checked: int


def _loss_and_upstream(adapter, loss: str, data):
    x, target = data
    out = apply(adapter, x)
    if loss == "mse":
        return mse_loss(out, target)
    return softmax_xent_loss(out, target)


def grad_check(
    adapter: MonarchAdapter,
    loss: str,
    data,
    h: float = 1e-6,
    seed: int = 0,
    sample_above: int = 10_000,
    sample_size: int = 512,
) -> GradCheckReport:
    """Compare analytic factor gradients against central differences.

    Every factor coordinate is perturbed by +/- h (a seeded subset of 512
    coordinates once the parameter count exceeds ``sample_above``). Relative
    error uses max(|analytic|, |numeric|, 1e-8) as denominator.
    """
    if loss not in _LOSSES:
        raise StructuralError(f"loss must be one of {_LOSSES}, got {loss!r}")
    if not 1e-8 <= h <= 1e-4:
        raise StructuralError(f"step h must lie in [1e-8, 1e-4], got {h}")
    x = _as_batch(data[0], adapter.config.n, "input")
    base_loss, upstream = _loss_and_upstream(adapter, loss, data)
    if not np.isfinite(base_loss):
        raise NumericalError(f"loss is not finite: {base_loss}")
    analytic = backward(adapter, x, upstream)

    factors = {"factor_in": adapter.factor_in, "factor_out": adapter.factor_out}
    grads = {"factor_in": analytic.d_factor_in, "factor_out": analytic.d_factor_out}
    sizes = {name: arr.size for name, arr in factors.items()}
    total = sum(sizes.values())
    coords = [(name, idx) for name in factors for idx in range(sizes[name])]
    if total > sample_above:
        rng = np.random.default_rng(seed)
        picks = rng.choice(total, size=sample_size, replace=False)
        coords = [coords[int(i)] for i in np.sort(picks)]

    max_rel = 0.0
    worst = coords[0]
    for name, idx in coords:
        flat = factors[name].ravel()
        original = flat[idx]
        flat[idx] = original + h
        plus, _ = _loss_and_upstream(adapter, loss, data)
        flat[idx] = original - h
        minus, _ = _loss_and_upstream(adapter, loss, data)
        flat[idx] = original
        if not (np.isfinite(plus) and np.isfinite(minus)):
            raise NumericalError("perturbed loss is not finite")
        numeric = (plus - minus) / (2.0 * h)
        exact = grads[name].ravel()[idx]
        rel = float(abs(exact - numeric) / max(abs(exact), abs(numeric), 1e-8))
        if rel > max_rel:
            max_rel = rel
            worst = (name, int(idx))
    return GradCheckReport(max_rel_err=max_rel, worst_coordinate=worst, checked=len(coords))
