"""Zeitlin quantization of functions on the sphere.

Smooth fields are mapped to skew-hermitian N x N matrices by replacing the
spherical harmonics ``Y_lm`` with matrix harmonics ``T_lm``, the
eigen-matrices of the Hoppe-Yau Laplacian. The Laplacian maps each matrix
diagonal to itself, so ``T_lm`` is supported on the m-th diagonal (entries
``(j, j + m)``) and is obtained from a real symmetric tridiagonal eigenproblem
of size ``N - |m|``.

Conventions:

* ``T_lm`` are Frobenius-orthonormal, ``tr(T_lm^H T_l'm') = delta``.
* the first entry of each eigenvector is positive; ``T_{l,-m} = (-1)^m T_lm^H``.
* ``hbar = 2 / sqrt(N^2 - 1)``.

Matrices are plain complex ``numpy`` arrays throughout.
"""

from __future__ import annotations

import hashlib
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .errors import InvalidSizeError, NumericError
from .sphere import SphereField, lm_index, num_coeffs

logger = logging.getLogger(__name__)

CACHE_MAGIC = b"TQGB"
CACHE_VERSION = 1


def hbar(n: int) -> float:
    return 2.0 / np.sqrt(n * n - 1.0)


def _spin_data(n: int):
    """Weights ``m_j = s - j``, ``S3`` and ladder entries for spin ``s=(n-1)/2``.

    ``a[j]`` is the ``(j-1, j)`` entry of ``S+``; ``a[0] = 0``.
    """
    s = (n - 1) / 2
    mj = s - np.arange(n)
    a = np.zeros(n)
    a[1:] = np.sqrt(s * (s + 1) - mj[1:] * (mj[1:] + 1))
    return s, mj, a


def su2_generators(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Quantized coordinate matrices ``X_a = i hbar S_a`` of the spin-(n-1)/2 irrep.

    They are skew-hermitian and ``X1^2 + X2^2 + X3^2 = -I``.
    """
    if n < 2:
        raise InvalidSizeError(f"matrix size must be >= 2, got {n}")
    _, mj, a = _spin_data(n)
    s_plus = np.diag(a[1:], 1).astype(np.complex128)
    s_minus = s_plus.conj().T
    s1 = (s_plus + s_minus) / 2
    s2 = (s_plus - s_minus) / 2j
    s3 = np.diag(mj).astype(np.complex128)
    h = hbar(n)
    return 1j * h * s1, 1j * h * s2, 1j * h * s3


def laplacian_tridiagonal(n: int, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Hoppe-Yau Laplacian restricted to diagonal ``m`` (``|m| < n``).

    Returns ``(d, e)``: main and off diagonal of the real symmetric
    tridiagonal matrix acting on the entries ``W[j, j + |m|]``.
    """
    m = abs(m)
    s, mj, a = _spin_data(n)
    D = s * (s + 1) - mj**2
    j = np.arange(n - m)
    d = -(m * m + D[j] + D[j + m])
    e = a[j[:-1] + 1] * a[j[:-1] + 1 + m]
    return d, e


@dataclass(eq=False)
class MatrixHarmonicsBasis:
    """Per-diagonal eigen-decomposition of the Hoppe-Yau Laplacian.

    ``eigvecs[m]`` (``m >= 0``) has shape ``(n - m, n - m)``; column ``l - m``
    holds the nonzero diagonal of ``T_lm``. ``eigvals[m][l - m] ~ -l(l+1)``.
    """

    n: int
    eigvals: list[np.ndarray]
    eigvecs: list[np.ndarray]
    tridiag: list[tuple[np.ndarray, np.ndarray]] = field(repr=False)

    @property
    def hbar(self) -> float:
        return hbar(self.n)

    @property
    def generators(self):
        return su2_generators(self.n)

    def diagonal_index(self, m: int) -> tuple[np.ndarray, np.ndarray]:
        """Row and column indices of diagonal ``m`` (negative: below main)."""
        k = np.arange(self.n - abs(m))
        return (k, k + m) if m >= 0 else (k - m, k)

    def matrix(self, l: int, m: int) -> np.ndarray:
        """Dense ``T_lm``."""
        if not (0 <= l < self.n and abs(m) <= l):
            raise InvalidSizeError(f"(l, m) = ({l}, {m}) outside basis of size {self.n}")
        T = np.zeros((self.n, self.n), dtype=np.complex128)
        v = self.eigvecs[abs(m)][:, l - abs(m)]
        if m < 0:
            v = (-1) ** m * v
        T[self.diagonal_index(m)] = v
        return T


def _solve_diagonal(n: int, m: int) -> tuple[np.ndarray, np.ndarray, tuple]:
    d, e = laplacian_tridiagonal(n, m)
    if d.size == 1:
        w, v = d.copy(), np.ones((1, 1))
    else:
        try:
            w, v = eigh_tridiagonal(d, e)
        except np.linalg.LinAlgError as exc:
            raise NumericError(f"eigen-decomposition failed on diagonal {m}: {exc}") from exc
    # ascending eigenvalues -> ascending l
    w = w[::-1].copy()
    v = v[:, ::-1].copy()
    v *= np.where(v[0] < 0, -1.0, 1.0)
    return w, v, (d, e)


def compute_basis(n: int) -> MatrixHarmonicsBasis:
    if n < 2:
        raise InvalidSizeError(f"matrix size must be >= 2, got {n}")
    eigvals, eigvecs, tri = [], [], []
    for m in range(n):
        w, v, de = _solve_diagonal(n, m)
        eigvals.append(w)
        eigvecs.append(v)
        tri.append(de)
    return MatrixHarmonicsBasis(n, eigvals, eigvecs, tri)


def default_cache_dir() -> Path:
    env = os.environ.get("TQG_BASIS_CACHE_DIR")
    if env:
        return Path(env)
    return Path(os.environ.get("XDG_CACHE_HOME", Path.home() / ".cache")) / "tqg"


def _cache_payload(basis: MatrixHarmonicsBasis) -> bytes:
    parts = []
    for w, v in zip(basis.eigvals, basis.eigvecs):
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(v, dtype="<f8").tobytes())
    return b"".join(parts)


def save_basis(basis: MatrixHarmonicsBasis, path) -> None:
    """Write the cache file: magic, version, N, per-diagonal arrays, sha256."""
    payload = _cache_payload(basis)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + f".tmp{os.getpid()}")
    with open(tmp, "wb") as fh:
        fh.write(CACHE_MAGIC + struct.pack("<II", CACHE_VERSION, basis.n))
        fh.write(payload)
        fh.write(hashlib.sha256(payload).digest())
    os.replace(tmp, path)


def load_basis(path, n: int) -> MatrixHarmonicsBasis | None:
    """Read a cache file; ``None`` if it is missing, stale or corrupt."""
    try:
        raw = Path(path).read_bytes()
    except OSError:
        return None
    if len(raw) < 44 or raw[:4] != CACHE_MAGIC:
        return None
    version, n_file = struct.unpack_from("<II", raw, 4)
    payload, digest = raw[12:-32], raw[-32:]
    if version != CACHE_VERSION or n_file != n:
        return None
    expected = sum((n - m) + (n - m) ** 2 for m in range(n)) * 8
    if len(payload) != expected or hashlib.sha256(payload).digest() != digest:
        return None
    buf = np.frombuffer(payload, dtype="<f8")
    eigvals, eigvecs, tri, off = [], [], [], 0
    for m in range(n):
        k = n - m
        eigvals.append(buf[off : off + k].astype(float))
        off += k
        eigvecs.append(buf[off : off + k * k].reshape(k, k).astype(float))
        off += k * k
        tri.append(laplacian_tridiagonal(n, m))
    return MatrixHarmonicsBasis(n, eigvals, eigvecs, tri)


_memory_cache: dict[tuple[int, str], MatrixHarmonicsBasis] = {}


def build_basis(n: int, use_cache: bool = True, cache_dir=None) -> MatrixHarmonicsBasis:
    """Construct (or fetch) the matrix-harmonics basis for size ``n``.

    With ``use_cache`` the basis is memoized in-process and on disk under
    ``cache_dir`` (default: ``$TQG_BASIS_CACHE_DIR`` or ``~/.cache/tqg``).
    A cache file failing its checksum is recomputed and overwritten.
    """
    if n < 2:
        raise InvalidSizeError(f"matrix size must be >= 2, got {n}")
    if not use_cache:
        return compute_basis(n)
    path = Path(cache_dir or default_cache_dir()) / f"basis_{n}.tqgb"
    key = (n, str(path))
    if key in _memory_cache:
        return _memory_cache[key]
    basis = load_basis(path, n)
    if basis is None:
        basis = compute_basis(n)
        try:
            save_basis(basis, path)
        except OSError as exc:
            logger.warning("could not write basis cache %s: %s", path, exc)
    _memory_cache[key] = basis
    return basis


def _check_size(w: np.ndarray, n: int) -> None:
    if w.shape != (n, n):
        raise InvalidSizeError(f"expected {n}x{n} matrix, got shape {w.shape}")


def laplacian_apply(w: np.ndarray, basis: MatrixHarmonicsBasis) -> np.ndarray:
    """Apply the Hoppe-Yau Laplacian in O(N^2)."""
    n = basis.n
    w = np.asarray(w)
    _check_size(w, n)
    s, mj, a = _spin_data(n)
    D = s * (s + 1) - mj**2
    dm = mj[:, None] - mj[None, :]
    out = -(dm**2 + D[:, None] + D[None, :]) * w
    A = np.outer(a[1:], a[1:])
    out[:-1, :-1] += A * w[1:, 1:]
    out[1:, 1:] += A * w[:-1, :-1]
    return out


def project(f: SphereField, basis: MatrixHarmonicsBasis) -> np.ndarray:
    """``sum_lm c_lm (i T_lm)`` with coefficients beyond ``l = N-1`` dropped."""
    f.check_real()
    n = basis.n
    c = f.truncate(n - 1).coeffs
    W = np.zeros((n, n), dtype=np.complex128)
    for m in range(min(n - 1, f.lmax) + 1):
        ls = np.arange(m, n)
        V = basis.eigvecs[m]
        W[basis.diagonal_index(m)] = 1j * (V @ c[lm_index(ls, m)])
        if m > 0:
            W[basis.diagonal_index(-m)] = 1j * (-1) ** m * (V @ c[lm_index(ls, -m)])
    return W


def reconstruct(w: np.ndarray, basis: MatrixHarmonicsBasis, lmax: int | None = None) -> SphereField:
    """Spectral coefficients ``c_lm = tr((i T_lm)^H w)`` up to degree ``lmax``."""
    n = basis.n
    lmax = n - 1 if lmax is None else lmax
    if not 0 <= lmax <= n - 1:
        raise InvalidSizeError(f"lmax must lie in [0, {n - 1}], got {lmax}")
    w = np.asarray(w)
    _check_size(w, n)
    c = np.zeros(num_coeffs(n - 1), dtype=np.complex128)
    for m in range(n):
        ls = np.arange(m, n)
        V = basis.eigvecs[m]
        c[lm_index(ls, m)] = -1j * (V.T @ w[basis.diagonal_index(m)])
        if m > 0:
            c[lm_index(ls, -m)] = -1j * (-1) ** m * (V.T @ w[basis.diagonal_index(-m)])
    return SphereField(n - 1, c).truncate(lmax)


def jordan_product(f: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Quantized pointwise product ``-(i/2) sqrt(N/4pi) (FG + GF)``."""
    if f.shape != g.shape:
        raise InvalidSizeError(f"size mismatch {f.shape} vs {g.shape}")
    n = f.shape[0]
    return -0.5j * np.sqrt(n / (4 * np.pi)) * (f @ g + g @ f)


def diagonal_jordan_product(d: np.ndarray, g: np.ndarray) -> np.ndarray:
    """``diag(d) (.) G`` for a diagonal first factor, in O(N^2)."""
    n = g.shape[0]
    if d.shape != (n,):
        raise InvalidSizeError(f"size mismatch {d.shape} vs {g.shape}")
    return -0.5j * np.sqrt(n / (4 * np.pi)) * (d[:, None] + d[None, :]) * g


def scaled_commutator(f: np.ndarray, g: np.ndarray) -> np.ndarray:
    """``(FG - GF) / hbar``."""
    if f.shape != g.shape:
        raise InvalidSizeError(f"size mismatch {f.shape} vs {g.shape}")
    return (f @ g - g @ f) / hbar(f.shape[0])


def is_skew_hermitian(w: np.ndarray, rtol: float = 1e-13) -> bool:
    scale = np.linalg.norm(w)
    return bool(np.linalg.norm(w + w.conj().T) <= rtol * max(scale, np.finfo(float).tiny))
