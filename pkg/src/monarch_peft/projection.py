"""Frobenius-optimal projection of a dense matrix onto a Monarch class.

Under the two shuffles, an n x n matrix splits into an N x N grid of m x m
blocks, block (k_out, k_in) holding the entries a[s*N + k_out, k_in*m + i].
Each intermediate channel p = k_in*r + j feeds exactly one such block pair
(k_out = p mod N) through one factor_out column / factor_in row pair, so the
pairs are parameter-disjoint and the global Frobenius minimizer is obtained
by an independent truncated SVD per block at the block's channel count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import MonarchAdapter, MonarchConfig
from .errors import StructuralError
from .numerics import as_matrix, truncated_svd


@dataclass(frozen=True)
class ChannelSet:
    """Channel ownership per (output block, input block) pair.

    ``pairs[(k_out, k_in)]`` lists the owned channels as (j, j') with j the
    factor_in row and j' the factor_out column, in ascending order.
    """

    config: MonarchConfig
    pairs: dict

    def count(self, k_out: int, k_in: int) -> int:
        return len(self.pairs[(k_out, k_in)])


def channel_set(config: MonarchConfig) -> ChannelSet:
    """Enumerate all d = N*r intermediate channels by owning block pair."""
    nb, r = config.blocks, config.block_rank
    pairs = {(ko, ki): [] for ko in range(nb) for ki in range(nb)}
    for p in range(config.inter_dim):
        k_in, j = divmod(p, r)
        k_out, j_dst = p % nb, p // nb
        pairs[(k_out, k_in)].append((j, j_dst))
    return ChannelSet(config, pairs)


def permuted_block(a, config: MonarchConfig, k_out: int, k_in: int) -> np.ndarray:
    """The m x m slice a[s*N + k_out, k_in*m + i] seen through the shuffles."""
    a = as_matrix(a)
    if a.shape != (config.n, config.n):
        raise StructuralError(f"matrix shape {a.shape} != ({config.n}, {config.n})")
    nb, m = config.blocks, config.block_size
    if not (0 <= k_out < nb and 0 <= k_in < nb):
        raise StructuralError(f"block pair ({k_out}, {k_in}) outside [0, {nb})^2")
    return a[k_out::nb, k_in * m:(k_in + 1) * m].copy()


@dataclass
class ProjectionReport:
    """Projection result: fitted adapter plus exact residual accounting."""

    adapter: MonarchAdapter
    error_sq: float
    per_block_residuals: dict


def project(a, config: MonarchConfig) -> ProjectionReport:
    """Closest Monarch matrix of the given config in Frobenius norm.

    Per block pair with q owned channels, the top-q singular triplets of the
    permuted block are split sqrt(sigma)-evenly between the factor_out column
    and factor_in row of each channel (triplets in descending sigma order,
    channels ascending). Pairs with no channels contribute zero and their
    whole block mass lands in the residual.
    """
    a = as_matrix(a)
    if a.shape != (config.n, config.n):
        raise StructuralError(f"matrix shape {a.shape} != ({config.n}, {config.n})")
    channels = channel_set(config)
    nb, m, r = config.blocks, config.block_size, config.block_rank
    factor_in = np.zeros((nb, r, m))
    factor_out = np.zeros((nb, m, r))
    residuals = {}
    error_sq = 0.0
    for (k_out, k_in), owned in channels.pairs.items():
        block = a[k_out::nb, k_in * m:(k_in + 1) * m]
        top, residual = truncated_svd(block, len(owned))
        for t, (j, j_dst) in enumerate(owned):
            scale = math.sqrt(top.singular_values[t])
            factor_out[k_out][:, j_dst] = scale * top.u[:, t]
            factor_in[k_in][j, :] = scale * top.vt[t, :]
        residuals[(k_out, k_in)] = residual
        error_sq += residual
    adapter = MonarchAdapter(config, factor_in, factor_out)
    return ProjectionReport(adapter=adapter, error_sq=error_sq, per_block_residuals=residuals)


def worst_case_instance(config: MonarchConfig, seed: int = 42) -> np.ndarray:
    """Instance whose projection must discard a (m-1)/m share of its mass.

    Requires one channel per block pair (block_rank == blocks). Every
    permuted block is a random m x m orthogonal matrix, so all its singular
    values are equal and a rank-1 truncation keeps exactly 1/m of the
    block's squared Frobenius norm.
    """
    channels = channel_set(config)
    if any(len(owned) != 1 for owned in channels.pairs.values()):
        raise StructuralError(
            "worst-case instance needs exactly one channel per block pair "
            f"(block_rank == blocks); got config {config}"
        )
    rng = np.random.default_rng(seed)
    nb, m = config.blocks, config.block_size
    a = np.zeros((config.n, config.n))
    for k_out in range(nb):
        for k_in in range(nb):
            q, _ = np.linalg.qr(rng.standard_normal((m, m)))
            a[k_out::nb, k_in * m:(k_in + 1) * m] = q
    return a
