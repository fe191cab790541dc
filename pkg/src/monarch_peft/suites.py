"""Seeded verification suites aggregating the module invariants.

Each suite returns a report dict with one entry per check and a violation
count; the CLI ``verify`` subcommand serializes these reports. Reports carry
no timestamps, so identical invocations produce identical bytes.
"""

from __future__ import annotations

import numpy as np

from .core import (
    MonarchConfig,
    apply,
    lora_param_count,
    merge,
    AdapterLayer,
    monarch_rank,
    param_count,
    random_adapter,
    shuffle_p1,
    shuffle_p2,
    to_dense,
)
from .errors import StructuralError
from .gradients import grad_check, init_grad_configs
from .numerics import fro_norm_sq, truncated_svd
from .projection import project, worst_case_instance
from .theory import check_corollary_spectral, check_estimation_error, check_lemma_submatrix

SUITE_NAMES = ("core", "theory", "grad", "projection", "all")

_BLOCK_CHOICES = (1, 2, 4, 8, 16)


def sample_config(rng: np.random.Generator) -> MonarchConfig:
    """Random valid config with n a multiple of 16 in [16, 256]."""
    blocks = int(rng.choice(_BLOCK_CHOICES))
    n = 16 * int(rng.integers(1, 17))
    m = n // blocks
    block_rank = int(rng.integers(1, m + 1))
    return MonarchConfig(n, blocks, block_rank)


def dense_equivalence_check(seed: int = 42, trials: int = 50) -> dict:
    """apply() against the materialized matrix over a random config grid."""
    rng = np.random.default_rng(seed)
    max_diff = 0.0
    for _ in range(trials):
        cfg = sample_config(rng)
        adapter = random_adapter(cfg, seed=int(rng.integers(0, 2**31)))
        x = rng.standard_normal((4, cfg.n))
        diff = np.abs(apply(adapter, x) - x @ to_dense(adapter).T).max()
        max_diff = max(max_diff, float(diff))
    return {
        "name": "dense_equivalence",
        "trials": trials,
        "max_abs_diff": max_diff,
        "passed": max_diff < 1e-10,
    }


def bijectivity_check() -> dict:
    configs = [
        MonarchConfig(16, 4, 2),
        MonarchConfig(16, 1, 5),
        MonarchConfig(16, 4, 4),
        MonarchConfig(24, 2, 7),
        MonarchConfig(64, 8, 3),
        MonarchConfig(60, 5, 12),
    ]
    ok = True
    for cfg in configs:
        inner = sorted(shuffle_p2(cfg, p) for p in range(cfg.inter_dim))
        outer = sorted(shuffle_p1(cfg, p) for p in range(cfg.n))
        ok = ok and inner == list(range(cfg.inter_dim)) and outer == list(range(cfg.n))
    return {"name": "shuffle_bijectivity", "configs": len(configs), "passed": ok}


def rank_cap_check(seed: int = 42, trials: int = 12) -> dict:
    rng = np.random.default_rng(seed)
    ok = True
    for _ in range(trials):
        blocks = int(rng.choice((1, 2, 4)))
        n = 8 * int(rng.integers(2, 9))
        n -= n % blocks
        cfg = MonarchConfig(n, blocks, int(rng.integers(1, n // blocks + 1)))
        adapter = random_adapter(cfg, seed=int(rng.integers(0, 2**31)))
        ok = ok and monarch_rank(adapter) <= min(cfg.inter_dim, cfg.n)
    return {"name": "rank_cap", "trials": trials, "passed": ok}


def lora_subsumption_check(seed: int = 42, trials: int = 8) -> dict:
    """N = 1 materializes to the plain two-factor product with rank <= block_rank."""
    rng = np.random.default_rng(seed)
    max_diff = 0.0
    rank_ok = True
    for _ in range(trials):
        n = 8 * int(rng.integers(1, 9))
        cfg = MonarchConfig(n, 1, int(rng.integers(1, n + 1)))
        adapter = random_adapter(cfg, seed=int(rng.integers(0, 2**31)))
        dense = to_dense(adapter)
        direct = adapter.factor_out[0] @ adapter.factor_in[0]
        max_diff = max(max_diff, float(np.abs(dense - direct).max()))
        rank_ok = rank_ok and monarch_rank(adapter) <= cfg.block_rank
    return {
        "name": "n1_subsumption",
        "trials": trials,
        "max_abs_diff": max_diff,
        "passed": max_diff < 1e-12 and rank_ok,
    }


def merge_consistency_check(seed: int = 42) -> dict:
    rng = np.random.default_rng(seed)
    cfg = MonarchConfig(32, 4, 4)
    adapter = random_adapter(cfg, seed=seed)
    layer = AdapterLayer(
        base_weight=rng.standard_normal((32, 32)),
        bias=rng.standard_normal(32),
        adapter=adapter,
    )
    merged = merge(layer)
    x = rng.standard_normal((100, 32))
    merged_path = x @ merged.T + layer.bias
    additive_path = x @ layer.base_weight.T + apply(adapter, x) + layer.bias
    diff = float(np.abs(merged_path - additive_path).max())
    return {"name": "merge_consistency", "max_abs_diff": diff, "passed": diff < 1e-10}


def linearity_check(seed: int = 42) -> dict:
    rng = np.random.default_rng(seed)
    cfg = MonarchConfig(48, 4, 6)
    adapter = random_adapter(cfg, seed=seed)
    x, y = rng.standard_normal((2, 48))
    a, b = rng.standard_normal(2)
    lhs = apply(adapter, a * x + b * y)
    rhs = a * apply(adapter, x) + b * apply(adapter, y)
    diff = float(np.abs(lhs - rhs).max())
    return {"name": "apply_linearity", "max_abs_diff": diff, "passed": diff < 1e-10}


def budget_identity_check() -> dict:
    ok = True
    for n in (16, 64, 256, 1024):
        for blocks in (1, 2, 4, 8):
            for block_rank in (1, 2, 4, 8):
                if block_rank > n // blocks:
                    continue
                cfg = MonarchConfig(n, blocks, block_rank)
                total_rank = blocks * block_rank
                ok = ok and param_count(cfg) * blocks == lora_param_count(n, total_rank)
    return {"name": "parameter_budget_identity", "passed": ok}


def core_suite(seed: int = 42) -> dict:
    checks = [
        dense_equivalence_check(seed),
        bijectivity_check(),
        rank_cap_check(seed),
        lora_subsumption_check(seed),
        merge_consistency_check(seed),
        linearity_check(seed),
        budget_identity_check(),
    ]
    return _suite_report("core", seed, checks)


def theory_suite(seed: int = 42) -> dict:
    lemma = [check_lemma_submatrix(seed + i, m=4) for i in range(100)]
    corollary = [check_corollary_spectral(seed + i, m=4) for i in range(100)]
    square = [
        check_estimation_error(seed + i, layers=3, config=MonarchConfig(16, 4, 4), regime="square_q1")
        for i in range(50)
    ]
    rect = [
        check_estimation_error(seed + i, layers=3, config=MonarchConfig(16, 2, 4), regime="rect")
        for i in range(50)
    ]
    checks = [
        {
            "name": "lemma_submatrix_norm",
            "seeds": len(lemma),
            "violations": sum(r.violated for r in lemma),
            "max_lhs_rhs_ratio": max(r.lhs / r.rhs for r in lemma),
            "passed": not any(r.violated for r in lemma),
        },
        {
            "name": "corollary_spectral_norm",
            "seeds": len(corollary),
            "violations": sum(r.violated for r in corollary),
            "max_lhs_rhs_ratio": max(r.lhs / r.rhs for r in corollary),
            "passed": not any(r.violated for r in corollary),
        },
        {
            "name": "estimation_error_square_q1",
            "seeds": len(square),
            "violations": sum(r.bound.violated or not r.sigma_identity_ok for r in square),
            "truncation_start": 2,
            "max_sigma_identity_rel_err": max(r.sigma_identity_rel_err for r in square),
            "passed": all(not r.bound.violated and r.sigma_identity_ok for r in square),
        },
        {
            "name": "estimation_error_rect",
            "seeds": len(rect),
            "violations": sum(r.bound.violated or not r.sigma_identity_ok for r in rect),
            "truncation_start": 3,
            "max_sigma_identity_rel_err": max(r.sigma_identity_rel_err for r in rect),
            "passed": all(not r.bound.violated and r.sigma_identity_ok for r in rect),
        },
    ]
    return _suite_report("theory", seed, checks)


def grad_suite(seed: int = 42) -> dict:
    worst = 0.0
    for i, cfg in enumerate(init_grad_configs()):
        rng = np.random.default_rng(seed + i)
        adapter = random_adapter(cfg, seed=seed + i)
        x = rng.standard_normal((3, cfg.n))
        # targets near the current output keep the central-difference
        # cancellation benign relative to the per-coordinate gradients
        target = apply(adapter, x) + 0.1 * rng.standard_normal((3, cfg.n))
        report = grad_check(adapter, "mse", (x, target), h=1e-6)
        worst = max(worst, report.max_rel_err)
    checks = [
        {
            "name": "finite_difference_agreement",
            "configs": len(init_grad_configs()),
            "max_rel_err": worst,
            "passed": worst < 1e-5,
        }
    ]
    return _suite_report("grad", seed, checks)


def projection_suite(seed: int = 42) -> dict:
    rng = np.random.default_rng(seed)
    cfg = MonarchConfig(16, 4, 4)

    opt_ok = True
    identity_rel = 0.0
    for _ in range(20):
        a = rng.standard_normal((16, 16))
        report = project(a, cfg)
        dense_resid = fro_norm_sq(a - to_dense(report.adapter))
        identity_rel = max(
            identity_rel,
            abs(dense_resid - report.error_sq) / max(report.error_sq, 1e-18),
        )
        for _ in range(1000):
            cand = random_adapter(cfg, seed=int(rng.integers(0, 2**31)))
            if fro_norm_sq(a - to_dense(cand)) < report.error_sq - 1e-9:
                opt_ok = False
                break

    ratios = {}
    for m, blocks in ((4, 4), (2, 2)):
        wc_cfg = MonarchConfig(blocks * m, blocks, blocks)
        inst = worst_case_instance(wc_cfg, seed=seed)
        rep = project(inst, wc_cfg)
        ratios[m] = rep.error_sq / fro_norm_sq(inst)

    gap_ok = True
    target_cfg = MonarchConfig(64, 4, 8)
    for i in range(10):
        planted = random_adapter(target_cfg, seed=seed + i)
        dense = to_dense(planted)
        mass = fro_norm_sq(dense)
        monarch_err = project(dense, target_cfg).error_sq
        _, lowrank_err = truncated_svd(dense, 8)
        gap_ok = gap_ok and monarch_err < 1e-18 * mass and lowrank_err > 1e-3 * mass

    checks = [
        {
            "name": "optimality_vs_random_candidates",
            "inputs": 20,
            "candidates": 1000,
            "passed": opt_ok,
        },
        {
            "name": "residual_identity",
            "max_rel_err": identity_rel,
            "passed": identity_rel < 1e-9,
        },
        {
            "name": "worst_case_ratio",
            "ratio_m4": ratios[4],
            "ratio_m2": ratios[2],
            "passed": abs(ratios[4] - 0.75) < 1e-9 and abs(ratios[2] - 0.5) < 1e-9,
        },
        {
            "name": "expressivity_gap_equal_budget",
            "seeds": 10,
            "passed": gap_ok,
        },
    ]
    return _suite_report("projection", seed, checks)


def _suite_report(name: str, seed: int, checks: list) -> dict:
    return {
        "suite": name,
        "seed": seed,
        "checks": checks,
        "violations": sum(0 if c["passed"] else 1 for c in checks),
    }


def run_suite(name: str, seed: int = 42) -> dict:
    if name not in SUITE_NAMES:
        raise StructuralError(f"unknown suite {name!r}, expected one of {SUITE_NAMES}")
    if name == "all":
        reports = [core_suite(seed), theory_suite(seed), grad_suite(seed), projection_suite(seed)]
        return {
            "suite": "all",
            "seed": seed,
            "suites": reports,
            "violations": sum(r["violations"] for r in reports),
        }
    runner = {
        "core": core_suite,
        "theory": theory_suite,
        "grad": grad_suite,
        "projection": projection_suite,
    }[name]
    return runner(seed)
