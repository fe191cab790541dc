"""Numerical verifiers for the expressivity bounds.

Three randomized checks: the submatrix norm inequality, its spectral-norm
corollary, and the last-layer estimation-error bound in both rectangular
regimes. Each check instantiates a seeded random instance, evaluates both
sides, and reports whether the claimed inequality held.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import MonarchConfig, to_dense
from .errors import StructuralError
from .numerics import fro_norm_sq, spectral_norm, svd
from .projection import project

_SLACK = 1e-9


@dataclass(frozen=True)
class BoundReport:
    """One inequality instance: lhs <= rhs expected."""

    lhs: float
    rhs: float
    slack: float
    instance_seed: int
    violated: bool


def _report(lhs: float, rhs: float, seed: int) -> BoundReport:
    return BoundReport(
        lhs=lhs,
        rhs=rhs,
        slack=rhs - lhs,
        instance_seed=seed,
        violated=lhs > rhs + _SLACK * max(1.0, abs(rhs)),
    )


def _grid_blocks(w: np.ndarray, m: int):
    for j in range(m):
        for k in range(m):
            yield j, k, w[j * m:(j + 1) * m, k * m:(k + 1) * m]


def check_lemma_submatrix(seed: int, m: int = 4) -> BoundReport:
    """||W x||_2 <= sum over the m x m block grid of ||W_jk x_k||_2, n = m^2."""
    n = m * m
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((n, n))
    x = rng.standard_normal(n)
    lhs = float(np.linalg.norm(w @ x))
    rhs = 0.0
    for _, k, block in _grid_blocks(w, m):
        rhs += float(np.linalg.norm(block @ x[k * m:(k + 1) * m]))
    return _report(lhs, rhs, seed)


def check_corollary_spectral(seed: int, m: int = 4) -> BoundReport:
    """sigma_1(W) <= sum of the blocks' sigma_1, same block grid."""
    n = m * m
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((n, n))
    lhs = spectral_norm(w)
    rhs = sum(spectral_norm(block) for _, _, block in _grid_blocks(w, m))
    return _report(lhs, rhs, seed)


@dataclass(frozen=True)
class EstimationErrorReport:
    """Estimation-error bound instance plus the spectral residual identity."""

    bound: BoundReport
    sigma_sum: float
    dense_residual_sq: float
    sigma_identity_rel_err: float
    sigma_identity_ok: bool
    truncation_start: int


_REGIMES = ("square_q1", "rect")


def _conditioned_invertible(rng: np.random.Generator, n: int) -> np.ndarray:
    # singular values in [0.1, 1.0] keep each factor's condition number <= 10
    qu, _ = np.linalg.qr(rng.standard_normal((n, n)))
    qv, _ = np.linalg.qr(rng.standard_normal((n, n)))
    s = rng.uniform(0.1, 1.0, size=n)
    return qu @ np.diag(s) @ qv.T


def _full_rank_gaussian(rng: np.random.Generator, n: int, floor: float = 1e-2) -> np.ndarray:
    a = rng.standard_normal((n, n))
    res = svd(a)
    s = np.maximum(res.singular_values, floor)
    return res.u @ np.diag(s) @ res.vt


def check_estimation_error(
    seed: int,
    layers: int,
    config: MonarchConfig,
    regime: str,
) -> EstimationErrorReport:
    """Adapt the last of ``layers`` random linear maps toward a random target.

    Verifies ||Wbar - What||_F^2 <= ||prefix||_F^2 * ||Etilde - Delta||_F^2
    with Delta the Monarch projection of the regularized error, and that the
    dense residual ||Etilde - Delta||_F^2 equals the projection's spectral
    tail sum. The tail starts at index 2 in the square regime (one channel
    per block pair) and at block_rank/blocks + 1 in the rectangular regime.
    """
    if regime not in _REGIMES:
        raise StructuralError(f"regime must be one of {_REGIMES}, got {regime!r}")
    if layers < 1:
        raise StructuralError("layers must be >= 1")
    nb, r = config.blocks, config.block_rank
    if regime == "square_q1" and r != nb:
        raise StructuralError("square_q1 regime requires block_rank == blocks")
    if regime == "rect" and (r <= nb or r % nb != 0):
        raise StructuralError("rect regime requires blocks < block_rank and blocks | block_rank")
    n = config.n

    effective_seed = seed
    for _attempt in range(10):
        rng = np.random.default_rng(effective_seed)
        mats = [_conditioned_invertible(rng, n) for _ in range(layers)]
        prefix = np.eye(n)
        for w in mats[:-1]:
            prefix = prefix @ w
        spectrum = svd(prefix).singular_values
        if spectrum[-1] > 1e-8 * spectrum[0]:
            break
        effective_seed += 1_000_003
    else:
        raise StructuralError("could not draw a well-conditioned prefix product")

    w_bar = _full_rank_gaussian(rng, n)
    full_product = prefix @ mats[-1]
    err = w_bar - full_product
    err_reg = np.linalg.solve(prefix, err)

    report = project(err_reg, config)
    delta = to_dense(report.adapter)
    adapted = prefix @ (mats[-1] + delta)

    lhs = fro_norm_sq(w_bar - adapted)
    dense_residual = fro_norm_sq(err_reg - delta)
    rhs = fro_norm_sq(prefix) * dense_residual

    sigma_sum = report.error_sq
    rel = abs(dense_residual - sigma_sum) / max(sigma_sum, dense_residual, 1e-18)
    return EstimationErrorReport(
        bound=_report(lhs, rhs, effective_seed),
        sigma_sum=sigma_sum,
        dense_residual_sq=dense_residual,
        sigma_identity_rel_err=rel,
        sigma_identity_ok=rel <= 1e-9,
        truncation_start=(2 if regime == "square_q1" else r // nb + 1),
    )
