"""Dense linear-algebra substrate on 64-bit floats.

Matrices are 2-D float64 numpy arrays in row-major order, vectors are 1-D
float64 arrays. ``as_matrix`` / ``as_vector`` validate shape and finiteness
once at the boundary; every operation below is a pure function of its inputs,
so values can be shared freely across threads.

The SVD is a one-sided Jacobi implementation: at the sizes this library
targets (a few thousand rows at most, usually far fewer) it is simple,
deterministic, and accurate to near machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, StructuralError

MAX_SVD_DIM = 4096

_JACOBI_TOL = 1e-12
_JACOBI_MAX_SWEEPS = 100


def as_matrix(data) -> np.ndarray:
    """Coerce to a 2-D float64 array, requiring finite entries."""
    a = np.asarray(data, dtype=np.float64)
    if a.ndim != 2:
        raise StructuralError(f"expected a 2-D matrix, got {a.ndim}-D data")
    if not np.isfinite(a).all():
        raise StructuralError("matrix entries must be finite")
    return a


def as_vector(data) -> np.ndarray:
    """Coerce to a 1-D float64 array, requiring finite entries."""
    v = np.asarray(data, dtype=np.float64)
    if v.ndim != 1:
        raise StructuralError(f"expected a 1-D vector, got {v.ndim}-D data")
    if not np.isfinite(v).all():
        raise StructuralError("vector entries must be finite")
    return v


def matmul(a, b) -> np.ndarray:
    """Matrix product ``a @ b`` with explicit conformance checking."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise StructuralError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def fro_norm_sq(a) -> float:
    """Squared Frobenius norm, summed directly over the entries."""
    a = as_matrix(a)
    return float(np.sum(a * a))


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD ``u @ diag(singular_values) @ vt`` with a non-increasing spectrum."""

    u: np.ndarray
    singular_values: np.ndarray
    vt: np.ndarray


def _round_robin_schedule(cols: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Fixed tournament schedule covering every column pair once per cycle.

    Pairs within one round are disjoint, so their rotations commute and can
    be applied simultaneously.
    """
    players = list(range(cols))
    if cols % 2 == 1:
        players.append(-1)
    half = len(players) // 2
    rounds = []
    arr = players[:]
    for _ in range(len(players) - 1):
        lefts, rights = [], []
        for i in range(half):
            p, q = arr[i], arr[-1 - i]
            if p != -1 and q != -1:
                lefts.append(min(p, q))
                rights.append(max(p, q))
        rounds.append((np.array(lefts), np.array(rights)))
        arr = [arr[0], arr[-1]] + arr[1:-1]
    return rounds


def _jacobi_onesided(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Orthogonalize the columns of ``a`` (rows >= cols) by plane rotations.

    Returns ``(b, v)`` with ``b = a @ v``, the columns of ``b`` mutually
    orthogonal and ``v`` orthogonal. Rotations follow a round-robin ordering
    (disjoint pairs per round rotate together). Convergence: a full cycle in
    which every normalized off-diagonal inner product is below 1e-12; such a
    cycle performs no rotations, so every pair was tested on fresh values.
    """
    cols = a.shape[1]
    b = np.array(a, dtype=np.float64, order="F")
    v = np.asfortranarray(np.eye(cols))
    if cols == 1:
        return b, v
    schedule = _round_robin_schedule(cols)
    for _sweep in range(_JACOBI_MAX_SWEEPS):
        # column norms refresh per cycle; in-cycle updates use the rotation
        # identities below and may drift at roundoff level
        sq = np.einsum("ij,ij->j", b, b)
        rotated = False
        for lefts, rights in schedule:
            alpha = sq[lefts]
            beta = sq[rights]
            gamma = np.einsum("ij,ij->j", b[:, lefts], b[:, rights])
            need = (alpha > 0.0) & (beta > 0.0) & (
                np.abs(gamma) > _JACOBI_TOL * np.sqrt(alpha * beta)
            )
            if not need.any():
                continue
            rotated = True
            li = lefts[need]
            ri = rights[need]
            al, be, ga = alpha[need], beta[need], gamma[need]
            zeta = (be - al) / (2.0 * ga)
            sgn = np.where(zeta >= 0.0, 1.0, -1.0)
            t = sgn / (np.abs(zeta) + np.hypot(1.0, zeta))
            c = 1.0 / np.hypot(1.0, t)
            s = c * t
            bi = b[:, li]
            bj = b[:, ri]
            b[:, li] = c * bi - s * bj
            b[:, ri] = s * bi + c * bj
            vi = v[:, li]
            vj = v[:, ri]
            v[:, li] = c * vi - s * vj
            v[:, ri] = s * vi + c * vj
            sq[li] = np.maximum(al - ga * t, 0.0)
            sq[ri] = np.maximum(be + ga * t, 0.0)
        if not rotated:
            return b, v
    raise NumericalError(
        f"one-sided Jacobi SVD did not converge within {_JACOBI_MAX_SWEEPS} sweeps"
    )


def _complete_orthonormal(u: np.ndarray, filled: np.ndarray) -> None:
    """Fill the zero columns of ``u`` with vectors orthonormal to the rest."""
    rows = u.shape[0]
    for j in np.flatnonzero(~filled):
        best = None
        best_norm = -1.0
        for axis in range(rows):
            cand = np.zeros(rows)
            cand[axis] = 1.0
            for _ in range(2):
                cand -= u @ (u.T @ cand)
            norm = float(np.linalg.norm(cand))
            if norm > best_norm:
                best, best_norm = cand, norm
        if best is None or best_norm <= 0.0:
            raise NumericalError("failed to complete an orthonormal basis")
        u[:, j] = best / best_norm
        filled[j] = True


def svd(a) -> SvdResult:
    """Full thin SVD via one-sided Jacobi rotations.

    Deterministic: cyclic sweep order is fixed and the sign convention makes
    the largest-magnitude entry of each left singular vector positive.
    Raises NumericalError if the sweep cap is hit.
    """
    a = as_matrix(a)
    rows, cols = a.shape
    if max(rows, cols) > MAX_SVD_DIM:
        raise StructuralError(
            f"svd supports dimensions up to {MAX_SVD_DIM}, got {rows}x{cols}"
        )
    k = min(rows, cols)
    if k == 0:
        return SvdResult(np.zeros((rows, 0)), np.zeros(0), np.zeros((0, cols)))

    transposed = rows < cols
    work = a.T if transposed else a
    b, v = _jacobi_onesided(work)
    norms = np.sqrt(np.einsum("ij,ij->j", b, b))
    order = np.argsort(-norms, kind="stable")
    s = norms[order]
    b = np.ascontiguousarray(b[:, order])
    v = np.ascontiguousarray(v[:, order])

    left = np.zeros_like(b)
    filled = s > 0.0
    left[:, filled] = b[:, filled] / s[filled]
    if not filled.all():
        _complete_orthonormal(left, filled.copy())

    if transposed:
        u, vt = v, left.T.copy()
    else:
        u, vt = left, v.T.copy()

    for idx in range(k):
        peak = int(np.argmax(np.abs(u[:, idx])))
        if u[peak, idx] < 0.0:
            u[:, idx] = -u[:, idx]
            vt[idx, :] = -vt[idx, :]
    return SvdResult(u, s, vt)


def truncated_svd(a, q: int) -> tuple[SvdResult, float]:
    """Top-``q`` singular triplets plus the exact discarded spectral mass.

    The residual is the tail sum of squared singular values from the full
    spectrum; ``q = 0`` keeps nothing and returns the whole squared
    Frobenius mass as residual.
    """
    a = as_matrix(a)
    k = min(a.shape)
    if not isinstance(q, (int, np.integer)) or not 0 <= q <= k:
        raise StructuralError(f"truncation level {q!r} outside [0, {k}]")
    full = svd(a)
    residual = float(np.sum(full.singular_values[q:] ** 2))
    top = SvdResult(
        np.ascontiguousarray(full.u[:, :q]),
        full.singular_values[:q].copy(),
        np.ascontiguousarray(full.vt[:q, :]),
    )
    return top, residual


def spectral_norm(a) -> float:
    """Largest singular value."""
    result = svd(a)
    if result.singular_values.size == 0:
        return 0.0
    return float(result.singular_values[0])


def numerical_rank(a, rel_tol: float) -> int:
    """Count of singular values above ``rel_tol`` times the largest.

    The zero matrix has rank 0.
    """
    if not 0.0 < rel_tol < 1.0:
        raise StructuralError(f"rel_tol must lie in (0, 1), got {rel_tol}")
    s = svd(a).singular_values
    if s.size == 0:
        return 0
    return int(np.sum(s > rel_tol * s[0]))


# ---------------------------------------------------------------------------
# Matrix text format: first line "rows,cols", then one comma-separated line
# per row, decimals printed with 17 significant digits (lossless for float64).
# ---------------------------------------------------------------------------


def format_matrix(a) -> str:
    a = as_matrix(a)
    lines = [f"{a.shape[0]},{a.shape[1]}"]
    for row in a:
        lines.append(",".join(f"{x:.17g}" for x in row))
    return "\n".join(lines) + "\n"


def parse_matrix(text: str) -> np.ndarray:
    lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
    if not lines:
        raise StructuralError("empty matrix text")
    header = lines[0].split(",")
    if len(header) != 2:
        raise StructuralError(f"matrix header must be 'rows,cols', got {lines[0]!r}")
    try:
        rows, cols = int(header[0]), int(header[1])
    except ValueError as exc:
        raise StructuralError(f"matrix header must be integers: {exc}") from exc
    if rows < 1 or cols < 1:
        raise StructuralError(f"matrix dimensions must be positive, got {rows}x{cols}")
    if len(lines) - 1 != rows:
        raise StructuralError(f"expected {rows} data rows, found {len(lines) - 1}")
    data = np.empty((rows, cols))
    for r, line in enumerate(lines[1:]):
        parts = line.split(",")
        if len(parts) != cols:
            raise StructuralError(f"row {r} has {len(parts)} entries, expected {cols}")
        try:
            data[r] = [float(p) for p in parts]
        except ValueError as exc:
            raise StructuralError(f"row {r} contains a non-numeric entry: {exc}") from exc
    return as_matrix(data)


def write_matrix(a, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_matrix(a))


def read_matrix(path) -> np.ndarray:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise StructuralError(f"cannot read matrix file {path}: {exc}") from exc
    return parse_matrix(text)
