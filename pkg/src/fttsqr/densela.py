"""Dense linear-algebra kernel.

Householder QR producing only the upper-triangular factor, plus the
verification arithmetic (gram matrix, Frobenius residual) and the sign
canonicalization that makes factors of identical inputs compare bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "Matrix",
    "TriangularFactor",
    "mat_random",
    "householder_qr_r",
    "stack",
    "gram",
    "rel_residual",
    "canonicalize_sign",
    "load_matrix_csv",
    "dump_matrix_csv",
]

_MAX_SEED = 2**64


@dataclass(frozen=True, eq=False)
class Matrix:
    """Immutable dense row-major float64 matrix with finite entries.

    The backing array is copied on construction and marked read-only, so
    Matrix values can be shared freely without aliasing hazards.
    """

    array: np.ndarray

    def __post_init__(self) -> None:
        a = np.array(self.array, dtype=np.float64, order="C", copy=True)
        if a.ndim != 2:
            raise ValueError(f"matrix must be 2-D, got ndim={a.ndim}")
        if a.shape[0] < 1 or a.shape[1] < 1:
            raise ValueError(f"matrix dimensions must be positive, got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("matrix entries must be finite")
        a.flags.writeable = False
        object.__setattr__(self, "array", a)

    @property
    def rows(self) -> int:
        return self.array.shape[0]

    @property
    def cols(self) -> int:
        return self.array.shape[1]

    @property
    def data(self) -> np.ndarray:
        """Row-major flat view of the entries (read-only)."""
        return self.array.ravel()

    def tobytes(self) -> bytes:
        return self.array.tobytes()

    def same_bits(self, other: "Matrix") -> bool:
        return self.array.shape == other.array.shape and self.tobytes() == other.tobytes()

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Matrix({self.rows}x{self.cols})"


@dataclass(frozen=True, eq=False)
class TriangularFactor:
    """Square upper-triangular factor in sign-canonical form.

    Strictly-lower entries must be exactly zero and diagonal entries
    nonnegative; both are enforced at construction.
    """

    mat: Matrix

    def __post_init__(self) -> None:
        m = self.mat if isinstance(self.mat, Matrix) else Matrix(self.mat)
        a = m.array
        if a.shape[0] != a.shape[1]:
            raise ValueError(f"triangular factor must be square, got {a.shape}")
        if np.any(np.tril(a, -1) != 0.0):
            raise ValueError("strictly-lower-triangular entries must be exactly zero")
        if np.any(np.diagonal(a) < 0.0):
            raise ValueError("diagonal entries must be nonnegative (canonical form)")
        object.__setattr__(self, "mat", m)

    @property
    def n(self) -> int:
        return self.mat.rows

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"TriangularFactor(n={self.n})"


def mat_random(rows: int, cols: int, seed: int) -> Matrix:
    """Seeded matrix with entries uniform in [-1, 1].

    Uses a PCG64 stream keyed only by `seed`, so identical
    (seed, rows, cols) produce bitwise-identical output.
    """
    if rows < 1 or cols < 1:
        raise ValueError(f"dimensions must be positive, got {rows}x{cols}")
    if not 0 <= seed < _MAX_SEED:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    rng = np.random.Generator(np.random.PCG64(seed))
    return Matrix(rng.uniform(-1.0, 1.0, size=(rows, cols)))


def householder_qr_r(a: Matrix) -> TriangularFactor:
    """Upper-triangular factor of a tall matrix via Householder reflections.

    Column-by-column reflectors with the sign-of-pivot choice; the pivot
    entry is written analytically as -sign(x0) * ||x||, which keeps exact
    values exact (e.g. a lone (3,4) column factors to exactly [5]).
    Reflectors are discarded; the result is sign-canonical.
    """
    m, n = a.rows, a.cols
    if m < n:
        raise ValueError(f"need rows >= cols, got {m}x{n}")
    r = a.array.copy()
    for k in range(n):
        x = r[k:, k]
        norm_x = float(np.linalg.norm(x))
        if norm_x == 0.0:
            continue
        s = 1.0 if x[0] >= 0.0 else -1.0
        v = x.copy()
        v[0] += s * norm_x
        v /= np.linalg.norm(v)
        r[k, k] = -s * norm_x
        r[k + 1 :, k] = 0.0
        if k + 1 < n:
            r[k:, k + 1 :] -= np.outer(2.0 * v, v @ r[k:, k + 1 :])
    return canonicalize_sign(Matrix(np.triu(r[:n, :])))


def stack(top: TriangularFactor, bottom: TriangularFactor) -> Matrix:
    """Vertical concatenation of two n x n factors into a 2n x n matrix."""
    if top.n != bottom.n:
        raise ValueError(f"column counts differ: {top.n} vs {bottom.n}")
    return Matrix(np.vstack([top.mat.array, bottom.mat.array]))


def gram(a: Matrix) -> Matrix:
    """A^T A, mirrored so that entry (i, j) exactly equals entry (j, i)."""
    g = a.array.T @ a.array
    g = np.triu(g) + np.triu(g, 1).T
    return Matrix(g)


def rel_residual(a: Matrix, r: TriangularFactor) -> float:
    """Relative gram residual ||A^T A - R^T R||_F / ||A^T A||_F.

    Sign-insensitive correctness measure for a QR factorization. For a
    zero input matrix the denominator vanishes and ||R^T R||_F is
    returned instead.
    """
    if a.cols != r.n:
        raise ValueError(f"column counts differ: {a.cols} vs {r.n}")
    ga = gram(a).array
    gr = gram(r.mat).array
    denom = float(np.linalg.norm(ga))
    if denom == 0.0:
        return float(np.linalg.norm(gr))
    return float(np.linalg.norm(ga - gr) / denom)


def canonicalize_sign(r: Matrix) -> TriangularFactor:
    """Negate rows whose diagonal entry is negative.

    Row negation is exact in floating point and leaves R^T R unchanged,
    so replicas that factored identical inputs hold bitwise-identical
    canonical factors. Idempotent.
    """
    a = r.array
    if a.shape[0] != a.shape[1] or np.any(np.tril(a, -1) != 0.0):
        raise ValueError("input must be square upper-triangular")
    flip = np.where(np.diagonal(a) < 0.0, -1.0, 1.0)
    # Adding 0.0 rewrites negative zeros left behind by the negation;
    # every other value is unchanged bit for bit.
    return TriangularFactor(Matrix(a * flip[:, None] + 0.0))


def dump_matrix_csv(m: Matrix, path: str | Path) -> None:
    """Write one row per line, comma-separated decimal reals, no header."""
    lines = []
    for row in m.array:
        lines.append(",".join(format(x, ".17g") for x in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_matrix_csv(path: str | Path) -> Matrix:
    """Read a matrix written by dump_matrix_csv (values round-trip exactly)."""
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rows.append([float(tok) for tok in line.split(",")])
        except ValueError as exc:
            raise ValueError(f"bad matrix row at line {lineno}: {exc}") from exc
    if not rows:
        raise ValueError("matrix file holds no rows")
    width = len(rows[0])
    if any(len(row) != width for row in rows):
        raise ValueError("matrix rows have inconsistent lengths")
    return Matrix(np.array(rows, dtype=np.float64))
