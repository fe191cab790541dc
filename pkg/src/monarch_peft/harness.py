"""Desk-scale fine-tuning experiments on frozen linear layers.

Tasks plant a known weight delta on top of a frozen base; an adapter (the
Monarch class or a plain low-rank baseline) is then trained with Adam to
recover it. Because the planted delta is known exactly, recovery can be
measured in Frobenius norm rather than through benchmark proxies. All runs
are bit-deterministic given their config.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .core import (
    MonarchAdapter,
    MonarchConfig,
    apply,
    apply_flops,
    init_adapter,
    lora_param_count,
    param_count,
    random_adapter,
    to_dense,
)
from .errors import StructuralError
from .gradients import backward, mse_loss, softmax_xent_loss

TASK_KINDS = ("planted_monarch", "planted_lowrank", "mlp_shift")
ADAPTER_KINDS = ("monarch", "lora")

RECORD_HEADER = "task,adapter,n,blocks,block_rank,params,flops,seed,steps,final_loss,recovery_error,wall_ms"


@dataclass
class LoraAdapter:
    """Plain two-factor low-rank adapter baseline: contributes up @ (down @ x)."""

    n: int
    r: int
    down: np.ndarray
    up: np.ndarray

    @classmethod
    def init(cls, n: int, r: int, seed: int = 42) -> "LoraAdapter":
        if r < 1 or r > n:
            raise StructuralError(f"lora rank {r} must lie in [1, {n}]")
        rng = np.random.default_rng(seed)
        bound = 1.0 / np.sqrt(n)
        down = rng.uniform(-bound, bound, size=(r, n))
        up = np.zeros((n, r))
        return cls(n=n, r=r, down=down, up=up)


def lora_apply(adapter: LoraAdapter, x: np.ndarray) -> np.ndarray:
    return (x @ adapter.down.T) @ adapter.up.T


def lora_backward(adapter: LoraAdapter, x: np.ndarray, upstream: np.ndarray):
    hidden = x @ adapter.down.T
    d_up = np.einsum("bu,bj->uj", upstream, hidden)
    g_hidden = upstream @ adapter.up
    d_down = np.einsum("bj,bi->ji", g_hidden, x)
    return d_down, d_up


def adapter_delta(adapter) -> np.ndarray:
    """Dense matrix the adapter currently adds to the frozen weight."""
    if isinstance(adapter, MonarchAdapter):
        return to_dense(adapter)
    if isinstance(adapter, LoraAdapter):
        return adapter.up @ adapter.down
    raise StructuralError(f"unknown adapter type {type(adapter).__name__}")


class Adam:
    """Adam over a list of parameter arrays, updated in place."""

    def __init__(self, params, lr=1e-2, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.t = 0

    def step(self, grads, lr=None) -> None:
        self.t += 1
        lr = self.lr if lr is None else lr
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


@dataclass
class PlantedTask:
    """Frozen base, planted target, and a fixed sample set drawn at creation."""

    kind: str
    n: int
    seed: int
    base_weight: np.ndarray
    bias: np.ndarray
    target_weight: np.ndarray
    delta: np.ndarray
    x: np.ndarray
    y: np.ndarray | None = None
    labels: np.ndarray | None = None
    readout: np.ndarray | None = None


def make_planted_task(
    kind: str,
    n: int,
    seed: int = 42,
    blocks: int = 4,
    block_rank: int = 4,
    rank: int = 8,
    samples: int = 4096,
    classes: int = 10,
    delta_scale: float = 1.0,
) -> PlantedTask:
    """Build a deterministic task instance.

    planted_monarch / mlp_shift plant a random Monarch delta of the stated
    (blocks, block_rank); planted_lowrank plants a random rank-``rank`` outer
    product. Regression targets are y = Wbar x + b on Gaussian inputs;
    mlp_shift labels come from a shifted one-hidden-layer tanh teacher read
    out into ``classes`` logits.
    """
    if kind not in TASK_KINDS:
        raise StructuralError(f"task kind must be one of {TASK_KINDS}, got {kind!r}")
    if samples < 1:
        raise StructuralError("samples must be positive")
    rng = np.random.default_rng(seed)
    base = rng.standard_normal((n, n)) / np.sqrt(n)
    bias = rng.standard_normal(n) / np.sqrt(n)

    if kind in ("planted_monarch", "mlp_shift"):
        cfg = MonarchConfig(n, blocks, block_rank)
        planted = random_adapter(cfg, seed=seed + 1, scale=delta_scale)
        if delta_scale == 0.0:
            delta = np.zeros((n, n))
        else:
            delta = to_dense(planted)
    else:
        if rank < 1 or rank > n:
            raise StructuralError(f"planted rank {rank} must lie in [1, {n}]")
        sub_rng = np.random.default_rng(seed + 1)
        u = sub_rng.standard_normal((n, rank)) / np.sqrt(n)
        v = sub_rng.standard_normal((rank, n))
        delta = (u @ v) * delta_scale

    target = base + delta
    x = rng.standard_normal((samples, n))
    task = PlantedTask(
        kind=kind,
        n=n,
        seed=seed,
        base_weight=base,
        bias=bias,
        target_weight=target,
        delta=delta,
        x=x,
    )
    if kind == "mlp_shift":
        if classes < 2:
            raise StructuralError("mlp_shift needs at least 2 classes")
        task.readout = rng.standard_normal((classes, n)) / np.sqrt(n)
        teacher = np.tanh(x @ target.T + bias) @ task.readout.T
        task.labels = np.argmax(teacher, axis=1)
    else:
        task.y = x @ target.T + bias
    return task


@dataclass
class TrainConfig:
    """One trial: task spec, adapter spec, optimizer spec, budget, seed."""

    task: str
    n: int
    adapter: str = "monarch"
    blocks: int = 4
    block_rank: int = 4
    rank: int = 8
    task_blocks: int | None = None
    task_block_rank: int | None = None
    task_rank: int | None = None
    task_scale: float = 1.0
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_schedule: str = "constant"
    steps: int = 1000
    batch: int = 256
    samples: int = 4096
    seed: int = 42
    log_every: int = 50
    classes: int = 10

    def validate(self) -> None:
        if self.task not in TASK_KINDS:
            raise StructuralError(f"task must be one of {TASK_KINDS}, got {self.task!r}")
        if self.adapter not in ADAPTER_KINDS:
            raise StructuralError(
                f"adapter must be one of {ADAPTER_KINDS}, got {self.adapter!r}"
            )
        if self.lr_schedule not in ("constant", "cosine"):
            raise StructuralError(f"unknown lr schedule {self.lr_schedule!r}")
        for name in ("n", "steps", "batch", "samples", "log_every", "classes"):
            if getattr(self, name) < 1:
                raise StructuralError(f"{name} must be positive")
        if self.lr <= 0 or self.eps <= 0:
            raise StructuralError("lr and eps must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise StructuralError("betas must lie in [0, 1)")
        if self.adapter == "monarch":
            MonarchConfig(self.n, self.blocks, self.block_rank)
        else:
            if self.rank < 1 or self.rank > self.n:
                raise StructuralError(f"lora rank {self.rank} must lie in [1, {self.n}]")
        if self.task in ("planted_monarch", "mlp_shift"):
            MonarchConfig(self.n, self.effective_task_blocks, self.effective_task_block_rank)
        else:
            if not 1 <= self.effective_task_rank <= self.n:
                raise StructuralError("planted rank out of range")

    @property
    def effective_task_blocks(self) -> int:
        return self.blocks if self.task_blocks is None else self.task_blocks

    @property
    def effective_task_block_rank(self) -> int:
        return self.block_rank if self.task_block_rank is None else self.task_block_rank

    @property
    def effective_task_rank(self) -> int:
        return self.rank if self.task_rank is None else self.task_rank


@dataclass
class RunRecord:
    """Everything one trial produced; wall_ms is the only non-deterministic field."""

    config: TrainConfig
    params: int
    flops_per_step: int
    seed: int
    steps_run: int
    loss_curve: list
    final_loss: float
    recovery_error: float
    wall_ms: float
    diverged_at: int | None = None


def _build_task(config: TrainConfig) -> PlantedTask:
    return make_planted_task(
        config.task,
        config.n,
        seed=config.seed,
        blocks=config.effective_task_blocks,
        block_rank=config.effective_task_block_rank,
        rank=config.effective_task_rank,
        samples=config.samples,
        classes=config.classes,
        delta_scale=config.task_scale,
    )


def _full_loss(config, task, adapter, base_residual, base_pre) -> float:
    if config.task == "mlp_shift":
        pre = base_pre + _adapter_forward(adapter, task.x)
        logits = np.tanh(pre) @ task.readout.T
        loss, _ = softmax_xent_loss(logits, task.labels)
    else:
        loss, _ = mse_loss(_adapter_forward(adapter, task.x), base_residual)
    return loss


def _adapter_forward(adapter, x):
    if isinstance(adapter, MonarchAdapter):
        return apply(adapter, x)
    return lora_apply(adapter, x)


def train(config: TrainConfig, task: PlantedTask | None = None) -> RunRecord:
    """Run Adam on the adapter parameters only; base weight and bias stay frozen.

    Regression tasks minimize the mean squared residual against the planted
    target; mlp_shift minimizes softmax cross-entropy through the frozen tanh
    layer and readout. Deterministic given the config (including seed).
    A prebuilt ``task`` can be shared across trials; it must match the
    config's task fields and is never mutated.
    """
    config.validate()
    started = time.perf_counter()
    if task is None:
        task = _build_task(config)
    elif (
        task.kind != config.task
        or task.n != config.n
        or task.seed != config.seed
        or task.x.shape[0] != config.samples
    ):
        raise StructuralError("provided task does not match the train config")

    if config.adapter == "monarch":
        mcfg = MonarchConfig(config.n, config.blocks, config.block_rank)
        adapter = init_adapter(mcfg, "zero_out", seed=config.seed)
        params = [adapter.factor_in, adapter.factor_out]
        n_params = param_count(mcfg)
        flops = apply_flops(mcfg, min(config.batch, config.samples))
    else:
        adapter = LoraAdapter.init(config.n, config.rank, seed=config.seed)
        params = [adapter.down, adapter.up]
        n_params = lora_param_count(config.n, config.rank)
        flops = 4 * config.n * config.rank * min(config.batch, config.samples)

    # the frozen part of every forward pass is constant, compute it once
    if config.task == "mlp_shift":
        base_pre = task.x @ task.base_weight.T + task.bias
        base_residual = None
    else:
        base_pre = None
        base_residual = task.y - (task.x @ task.base_weight.T + task.bias)

    opt = Adam(params, lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps)
    batch_rng = np.random.default_rng([config.seed, 7919])
    batch_size = min(config.batch, config.samples)

    curve = [(0, _full_loss(config, task, adapter, base_residual, base_pre))]
    diverged_at = None
    order = batch_rng.permutation(config.samples)
    cursor = 0
    step = 0
    for step in range(1, config.steps + 1):
        if cursor + batch_size > config.samples:
            order = batch_rng.permutation(config.samples)
            cursor = 0
        idx = order[cursor:cursor + batch_size]
        cursor += batch_size
        xb = task.x[idx]

        if config.task == "mlp_shift":
            pre = base_pre[idx] + _adapter_forward(adapter, xb)
            hidden = np.tanh(pre)
            logits = hidden @ task.readout.T
            loss, d_logits = softmax_xent_loss(logits, task.labels[idx])
            upstream = (d_logits @ task.readout) * (1.0 - hidden * hidden)
        else:
            pred = _adapter_forward(adapter, xb)
            loss, upstream = mse_loss(pred, base_residual[idx])

        if not np.isfinite(loss):
            diverged_at = step
            break

        if isinstance(adapter, MonarchAdapter):
            grads = backward(adapter, xb, upstream)
            grad_list = [grads.d_factor_in, grads.d_factor_out]
        else:
            d_down, d_up = lora_backward(adapter, xb, upstream)
            grad_list = [d_down, d_up]

        if config.lr_schedule == "cosine":
            lr = config.lr * 0.5 * (1.0 + np.cos(np.pi * (step - 1) / config.steps))
            opt.step(grad_list, lr=lr)
        else:
            opt.step(grad_list)

        if step % config.log_every == 0:
            curve.append((step, _full_loss(config, task, adapter, base_residual, base_pre)))

    final_loss = curve[-1][1] if diverged_at is not None else _full_loss(
        config, task, adapter, base_residual, base_pre
    )
    if diverged_at is None and (not curve or curve[-1][0] != step):
        curve.append((step, final_loss))

    merged_delta = adapter_delta(adapter)
    denom = max(float(np.linalg.norm(task.delta)), 1e-12)
    recovery = float(np.linalg.norm(task.delta - merged_delta)) / denom
    wall_ms = (time.perf_counter() - started) * 1000.0
    return RunRecord(
        config=config,
        params=n_params,
        flops_per_step=flops,
        seed=config.seed,
        steps_run=step,
        loss_curve=curve,
        final_loss=final_loss,
        recovery_error=recovery,
        wall_ms=wall_ms,
        diverged_at=diverged_at,
    )


@dataclass
class SweepResult:
    records: list
    skipped: list


def sweep(base: TrainConfig, grid: list) -> SweepResult:
    """Train one trial per grid point on the shared task; skip invalid points.

    Each point is a dict of TrainConfig field overrides (typically the
    adapter spec). Records come back in grid order; skipped points carry the
    reason they were rejected.
    """
    records = []
    skipped = []
    shared_task = None
    valid_fields = {f.name for f in fields(TrainConfig)}
    task_fields = (
        "task", "n", "seed", "samples", "classes",
        "task_blocks", "task_block_rank", "task_rank", "task_scale",
    )
    # points that only change the adapter all see the base config's task;
    # pinning the planted spec keeps the record echo truthful even when a
    # point moves the adapter's block fields
    pinned = {
        "task_blocks": base.effective_task_blocks,
        "task_block_rank": base.effective_task_block_rank,
        "task_rank": base.effective_task_rank,
    }
    for point in grid:
        unknown = set(point) - valid_fields
        if unknown:
            skipped.append((point, f"unknown fields: {sorted(unknown)}"))
            continue
        overrides_task = any(k in point for k in task_fields)
        cfg = replace(base, **point)
        if not overrides_task:
            cfg = replace(cfg, **pinned)
        try:
            cfg.validate()
        except StructuralError as exc:
            skipped.append((point, str(exc)))
            continue
        if overrides_task:
            records.append(train(cfg))
        else:
            if shared_task is None:
                shared_task = _build_task(cfg)
            records.append(train(cfg, task=shared_task))
    return SweepResult(records=records, skipped=skipped)


@dataclass
class FactorStats:
    name: str
    count: int
    mean: float
    std: float
    excess_kurtosis: float
    histogram: np.ndarray
    bin_edges: np.ndarray


@dataclass
class WeightStats:
    factors: list


def weight_stats(adapter: MonarchAdapter, bins: int = 64) -> WeightStats:
    """Per-factor moments and histogram; a diagnostic, nothing is asserted."""
    if not isinstance(adapter, MonarchAdapter):
        raise StructuralError("weight_stats expects a Monarch adapter")
    out = []
    for name, arr in (("factor_in", adapter.factor_in), ("factor_out", adapter.factor_out)):
        flat = arr.ravel()
        mean = float(flat.mean())
        centered = flat - mean
        m2 = float(np.mean(centered ** 2))
        if m2 > 0.0:
            kurt = float(np.mean(centered ** 4) / (m2 * m2) - 3.0)
        else:
            kurt = 0.0
        counts, edges = np.histogram(flat, bins=bins)
        out.append(
            FactorStats(
                name=name,
                count=flat.size,
                mean=mean,
                std=float(np.sqrt(m2)),
                excess_kurtosis=kurt,
                histogram=counts,
                bin_edges=edges,
            )
        )
    return WeightStats(factors=out)


# ---------------------------------------------------------------------------
# Records format: CSV with a fixed header; floats use repr for lossless
# round-trips. Only wall_ms varies between identical runs.
# ---------------------------------------------------------------------------


def record_csv_row(rec: RunRecord) -> str:
    cfg = rec.config
    if cfg.adapter == "monarch":
        blocks, block_rank = cfg.blocks, cfg.block_rank
    else:
        blocks, block_rank = 0, cfg.rank
    cells = [
        cfg.task,
        cfg.adapter,
        str(cfg.n),
        str(blocks),
        str(block_rank),
        str(rec.params),
        str(rec.flops_per_step),
        str(rec.seed),
        str(rec.steps_run),
        repr(rec.final_loss),
        repr(rec.recovery_error),
        repr(rec.wall_ms),
    ]
    return ",".join(cells)


def write_records(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(RECORD_HEADER + "\n")
        for rec in records:
            fh.write(record_csv_row(rec) + "\n")
