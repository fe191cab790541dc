"""Rectangular Monarch matrices and their use as additive adapters.

A Monarch matrix of size n x n is the product of two fixed permutations and
two learned block-diagonal factors. With N diagonal blocks of size m = n/N
and block rank r, the factors are stored as stacked tensors:

    factor_in:  (N, r, m)   applied first, one r x m block per input slice
    factor_out: (N, m, r)   applied second, one m x r block per output slice

Between the two block stages sits a fixed stride shuffle of the length
d = N*r intermediate vector, and the output is stride-shuffled again. Both
shuffles are pure index maps, so they cost no arithmetic:

    inner shuffle (d -> d):  p = j*N + k  maps to  k*r + j
    outer shuffle (n -> n):  p = k*m + s  maps to  s*N + k

Although each block is rank-limited to r, the assembled product can reach
rank N*r, which is what makes the class attractive as an adapter: the same
total rank as a low-rank adapter at 1/N of the parameters. Setting N = 1
recovers a plain two-factor low-rank map.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import StructuralError
from .numerics import as_matrix, as_vector, numerical_rank

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class MonarchConfig:
    """Structural description: feature dim ``n``, block count, per-block rank.

    All derived sizes come from here; this is the single source of truth for
    shapes. Invalid combinations are rejected on construction.
    """

    n: int
    blocks: int
    block_rank: int

    def __post_init__(self) -> None:
        for name in ("n", "blocks", "block_rank"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool):
                raise StructuralError(f"{name} must be an integer, got {value!r}")
        if self.blocks < 1:
            raise StructuralError(f"blocks must be >= 1, got {self.blocks}")
        if self.block_rank < 1:
            raise StructuralError(f"block_rank must be >= 1, got {self.block_rank}")
        if self.n < 1 or self.n % self.blocks != 0:
            raise StructuralError(
                f"blocks ({self.blocks}) must divide the feature dimension ({self.n})"
            )
        if self.block_rank > self.n // self.blocks:
            raise StructuralError(
                f"block_rank ({self.block_rank}) cannot exceed block size "
                f"({self.n // self.blocks})"
            )

    @property
    def block_size(self) -> int:
        return self.n // self.blocks

    @property
    def inter_dim(self) -> int:
        return self.blocks * self.block_rank


@dataclass
class MonarchAdapter:
    """The two trainable block-diagonal factor tensors for one config."""

    config: MonarchConfig
    factor_in: np.ndarray
    factor_out: np.ndarray

    def __post_init__(self) -> None:
        cfg = self.config
        shape_in = (cfg.blocks, cfg.block_rank, cfg.block_size)
        shape_out = (cfg.blocks, cfg.block_size, cfg.block_rank)
        self.factor_in = np.ascontiguousarray(self.factor_in, dtype=np.float64)
        self.factor_out = np.ascontiguousarray(self.factor_out, dtype=np.float64)
        if self.factor_in.shape != shape_in:
            raise StructuralError(
                f"factor_in shape {self.factor_in.shape} != expected {shape_in}"
            )
        if self.factor_out.shape != shape_out:
            raise StructuralError(
                f"factor_out shape {self.factor_out.shape} != expected {shape_out}"
            )
        if not (np.isfinite(self.factor_in).all() and np.isfinite(self.factor_out).all()):
            raise StructuralError("adapter factors must be finite")


@dataclass
class AdapterLayer:
    """A frozen square weight plus bias with an attached adapter."""

    base_weight: np.ndarray
    bias: np.ndarray
    adapter: object = field(default=None)

    def __post_init__(self) -> None:
        self.base_weight = as_matrix(self.base_weight)
        self.bias = as_vector(self.bias)
        rows, cols = self.base_weight.shape
        if rows != cols:
            raise StructuralError(f"base weight must be square, got {rows}x{cols}")
        if self.bias.shape[0] != rows:
            raise StructuralError("bias length must match the base weight dimension")
        dim = getattr(getattr(self.adapter, "config", self.adapter), "n", None)
        if dim is not None and dim != rows:
            raise StructuralError(
                f"adapter dimension {dim} does not match base weight {rows}"
            )


def shuffle_p2(config: MonarchConfig, p: int) -> int:
    """Destination of intermediate coordinate ``p`` under the inner shuffle.

    Coordinate p = k*r + j (source block k, slot j) is routed to block
    p mod N, slot p div N; equivalently, writing p = j'*N + k', the
    destination flat index is k'*r + j'.
    """
    if not 0 <= p < config.inter_dim:
        raise StructuralError(f"index {p} outside [0, {config.inter_dim})")
    return (p % config.blocks) * config.block_rank + (p // config.blocks)


def shuffle_p1(config: MonarchConfig, p: int) -> int:
    """Destination of output coordinate ``p`` under the outer shuffle.

    Writing p = k*m + s (block k, slot s), the destination is s*N + k.
    """
    if not 0 <= p < config.n:
        raise StructuralError(f"index {p} outside [0, {config.n})")
    return (p % config.block_size) * config.blocks + (p // config.block_size)


def init_adapter(
    config: MonarchConfig,
    mode: str = "zero_out",
    seed: int = 42,
    dense=None,
) -> MonarchAdapter:
    """Build a fresh adapter.

    ``zero_out`` draws factor_in i.i.d. uniform on (-1/sqrt(m), +1/sqrt(m))
    and zeroes factor_out, so the adapter contributes exactly nothing until
    training moves it. ``projection`` fits the factors to a supplied dense
    delta by block-wise truncated SVD.
    """
    if mode == "zero_out":
        rng = np.random.default_rng(seed)
        m = config.block_size
        bound = 1.0 / np.sqrt(m)
        factor_in = rng.uniform(-bound, bound, size=(config.blocks, config.block_rank, m))
        factor_out = np.zeros((config.blocks, m, config.block_rank))
        return MonarchAdapter(config, factor_in, factor_out)
    if mode == "projection":
        if dense is None:
            raise StructuralError("projection init requires a dense delta matrix")
        from .projection import project

        return project(as_matrix(dense), config).adapter
    raise StructuralError(f"unknown init mode {mode!r}")


def random_adapter(config: MonarchConfig, seed: int = 42, scale: float = 1.0) -> MonarchAdapter:
    """Adapter with Gaussian factors; used for planted targets and tests."""
    rng = np.random.default_rng(seed)
    m, r = config.block_size, config.block_rank
    factor_in = rng.standard_normal((config.blocks, r, m)) / np.sqrt(m)
    factor_out = rng.standard_normal((config.blocks, m, r)) * (scale / np.sqrt(r))
    return MonarchAdapter(config, factor_in, factor_out)


def apply(adapter: MonarchAdapter, x) -> np.ndarray:
    """Apply the adapter to a vector or a batch of row vectors.

    Four stages: per-block input products, inner shuffle, per-block output
    products, outer shuffle. The shuffles are realized as reshape/transpose
    index routing, never as matrices, so they cost no arithmetic.
    """
    cfg = adapter.config
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    batch = arr[None, :] if single else arr
    if batch.ndim != 2 or batch.shape[1] != cfg.n:
        raise StructuralError(
            f"input must have {cfg.n} features, got shape {arr.shape}"
        )
    nb, m, r = cfg.blocks, cfg.block_size, cfg.block_rank
    rows = batch.shape[0]
    xb = batch.reshape(rows, nb, m).transpose(1, 0, 2)
    y = np.matmul(xb, adapter.factor_in.transpose(0, 2, 1)).transpose(1, 0, 2)
    z = y.reshape(rows, r, nb).swapaxes(1, 2)
    w = np.matmul(z.transpose(1, 0, 2), adapter.factor_out.transpose(0, 2, 1))
    out = w.transpose(1, 2, 0).reshape(rows, cfg.n)
    return out[0] if single else out


def _permutation_matrix(size: int, dest) -> np.ndarray:
    p = np.zeros((size, size))
    for src in range(size):
        p[dest(src), src] = 1.0
    return p


def to_dense(adapter: MonarchAdapter) -> np.ndarray:
    """Materialize the adapter as an explicit n x n matrix.

    Builds the permutation matrices from the index maps and the two
    block-diagonal embeddings, then multiplies them out; deliberately a
    separate code path from ``apply`` so the two can cross-check each other.
    """
    cfg = adapter.config
    n, d = cfg.n, cfg.inter_dim
    nb, m, r = cfg.blocks, cfg.block_size, cfg.block_rank
    bd_in = np.zeros((d, n))
    bd_out = np.zeros((n, d))
    for k in range(nb):
        bd_in[k * r:(k + 1) * r, k * m:(k + 1) * m] = adapter.factor_in[k]
        bd_out[k * m:(k + 1) * m, k * r:(k + 1) * r] = adapter.factor_out[k]
    p2 = _permutation_matrix(d, lambda p: shuffle_p2(cfg, p))
    p1 = _permutation_matrix(n, lambda p: shuffle_p1(cfg, p))
    return p1 @ bd_out @ p2 @ bd_in


def merge(layer: AdapterLayer) -> np.ndarray:
    """Absorb a Monarch adapter into the frozen weight for zero-cost inference."""
    if not isinstance(layer.adapter, MonarchAdapter):
        raise StructuralError("merge requires a layer with a Monarch adapter")
    if layer.base_weight.shape[0] != layer.adapter.config.n:
        raise StructuralError("base weight dimension does not match the adapter")
    return layer.base_weight + to_dense(layer.adapter)


def param_count(config: MonarchConfig) -> int:
    """Trainable parameter count: both factors hold n * block_rank entries."""
    return 2 * config.n * config.block_rank


def lora_param_count(n: int, r: int) -> int:
    """Parameter count of a rank-r low-rank adapter on a square n x n weight."""
    if n < 1 or r < 1:
        raise StructuralError("dimensions must be positive")
    return 2 * n * r


def apply_flops(config: MonarchConfig, batch: int = 1) -> int:
    """Multiply-add count for one batched apply; shuffles are free."""
    if batch < 0:
        raise StructuralError("batch must be non-negative")
    return 4 * config.n * config.block_rank * batch


def dense_flops(n: int, batch: int = 1) -> int:
    """Multiply-add count for a dense n x n mat-vec per batch row."""
    if n < 1 or batch < 0:
        raise StructuralError("invalid dimensions")
    return 2 * n * n * batch


def monarch_rank(adapter: MonarchAdapter) -> int:
    """Numerical rank of the materialized adapter at relative tolerance 1e-10."""
    return numerical_rank(to_dense(adapter), 1e-10)


# ---------------------------------------------------------------------------
# Checkpoint document: JSON object with flat row-major factor arrays.
# ---------------------------------------------------------------------------


def checkpoint_document(adapter: MonarchAdapter, seed: int = 42) -> dict:
    cfg = adapter.config
    return {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": {"n": cfg.n, "blocks": cfg.blocks, "block_rank": cfg.block_rank},
        "seed": int(seed),
        "factor_in": adapter.factor_in.ravel().tolist(),
        "factor_out": adapter.factor_out.ravel().tolist(),
    }


def adapter_from_document(doc: dict) -> tuple[MonarchAdapter, int]:
    if not isinstance(doc, dict):
        raise StructuralError("checkpoint document must be a JSON object")
    for key in ("format_version", "config", "seed", "factor_in", "factor_out"):
        if key not in doc:
            raise StructuralError(f"checkpoint missing field {key!r}")
    if doc["format_version"] != CHECKPOINT_FORMAT_VERSION:
        raise StructuralError(
            f"unsupported checkpoint format_version {doc['format_version']!r}"
        )
    cfg_doc = doc["config"]
    if not isinstance(cfg_doc, dict):
        raise StructuralError("field 'config' must be an object")
    for key in ("n", "blocks", "block_rank"):
        if key not in cfg_doc:
            raise StructuralError(f"checkpoint config missing field {key!r}")
        if not isinstance(cfg_doc[key], int) or isinstance(cfg_doc[key], bool):
            raise StructuralError(f"checkpoint config field {key!r} must be an integer")
    config = MonarchConfig(cfg_doc["n"], cfg_doc["blocks"], cfg_doc["block_rank"])
    expected = config.n * config.block_rank
    factors = {}
    for name, shape in (
        ("factor_in", (config.blocks, config.block_rank, config.block_size)),
        ("factor_out", (config.blocks, config.block_size, config.block_rank)),
    ):
        values = doc[name]
        if not isinstance(values, list) or len(values) != expected:
            found = len(values) if isinstance(values, list) else type(values).__name__
            raise StructuralError(
                f"field {name!r} must be a flat array of {expected} floats, got {found}"
            )
        arr = np.asarray(values, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise StructuralError(f"field {name!r} contains non-finite values")
        factors[name] = arr.reshape(shape)
    seed = doc["seed"]
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise StructuralError("field 'seed' must be an integer")
    return MonarchAdapter(config, factors["factor_in"], factors["factor_out"]), seed


def save_checkpoint(adapter: MonarchAdapter, path, seed: int = 42) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(checkpoint_document(adapter, seed), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> tuple[MonarchAdapter, int]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise StructuralError(f"cannot read checkpoint {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise StructuralError(f"checkpoint is not valid JSON: {exc}") from exc
    return adapter_from_document(doc)
