"""Spherical-harmonic coefficient tables and their evaluation on grids.

Coefficients use orthonormal complex harmonics with the Condon-Shortley
phase, ``Y_{l,-m} = (-1)^m conj(Y_{lm})``, stored flat in (l, m) row-major
order: index ``l*l + l + m``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidFieldError, InvalidSizeError


def lm_index(l, m):
    return l * l + l + m


def num_coeffs(lmax: int) -> int:
    return (lmax + 1) ** 2


def lm_arrays(lmax: int) -> tuple[np.ndarray, np.ndarray]:
    """Degree and order of every flat index up to ``lmax``."""
    l = np.repeat(np.arange(lmax + 1), 2 * np.arange(lmax + 1) + 1)
    m = np.arange(num_coeffs(lmax)) - l * l - l
    return l, m


@dataclass(frozen=True, eq=False)
class SphereField:
    """Truncated spectral representation of a real scalar field on S^2."""

    lmax: int
    coeffs: np.ndarray

    def __post_init__(self):
        if self.lmax < 0:
            raise InvalidSizeError(f"lmax must be >= 0, got {self.lmax}")
        c = np.asarray(self.coeffs, dtype=np.complex128)
        if c.shape != (num_coeffs(self.lmax),):
            raise InvalidSizeError(
                f"expected {num_coeffs(self.lmax)} coefficients for lmax={self.lmax}, "
                f"got shape {c.shape}"
            )
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, lmax: int) -> "SphereField":
        return cls(lmax, np.zeros(num_coeffs(lmax), dtype=np.complex128))

    @classmethod
    def constant(cls, value: float, lmax: int = 0) -> "SphereField":
        f = cls.zeros(lmax)
        f.coeffs[0] = value * np.sqrt(4 * np.pi)
        return f

    @classmethod
    def single(cls, l: int, m: int, value: complex = 1.0, lmax: int | None = None) -> "SphereField":
        """Field with one coefficient pair set so that it stays real.

        The partner ``(l, -m)`` is filled from the reality condition.
        """
        lmax = l if lmax is None else lmax
        f = cls.zeros(lmax)
        f.coeffs[lm_index(l, m)] = value
        if m != 0:
            f.coeffs[lm_index(l, -m)] = (-1) ** m * np.conj(value)
        return f

    def __getitem__(self, lm):
        l, m = lm
        return self.coeffs[lm_index(l, m)]

    def reality_defect(self) -> float:
        """Max deviation from ``c_{l,-m} = (-1)^m conj(c_{lm})``."""
        l, m = lm_arrays(self.lmax)
        partner = self.coeffs[lm_index(l, -m)]
        return float(np.max(np.abs(self.coeffs - (-1.0) ** m * np.conj(partner)), initial=0.0))

    def check_real(self, tol: float = 1e-10) -> None:
        scale = max(1.0, float(np.max(np.abs(self.coeffs), initial=0.0)))
        defect = self.reality_defect()
        if defect > tol * scale:
            raise InvalidFieldError(f"reality condition violated by {defect:.3e}")

    def truncate(self, lmax: int) -> "SphereField":
        """Truncate or zero-pad to degree ``lmax``."""
        out = np.zeros(num_coeffs(lmax), dtype=np.complex128)
        k = min(num_coeffs(lmax), self.coeffs.size)
        out[:k] = self.coeffs[:k]
        return SphereField(lmax, out)

    def __add__(self, other: "SphereField") -> "SphereField":
        lmax = max(self.lmax, other.lmax)
        return SphereField(lmax, self.truncate(lmax).coeffs + other.truncate(lmax).coeffs)

    def __mul__(self, a: float) -> "SphereField":
        return SphereField(self.lmax, self.coeffs * a)

    __rmul__ = __mul__


def legendre_orders(lmax: int, x):
    """Yield ``(m, P)`` with ``P[l - m] = Pbar_l^m(x)`` for ``l = m..lmax``.

    ``Pbar`` are orthonormalized associated Legendre functions such that
    ``Y_{lm}(theta, phi) = Pbar_l^m(cos theta) exp(i m phi)`` with the
    Condon-Shortley phase. Sectoral seeds followed by the three-term
    recurrence in ``l``; one order is held in memory at a time.
    """
    x = np.asarray(x, dtype=float)
    sin_t = np.sqrt(np.clip(1.0 - x * x, 0.0, None))
    pmm = np.full(x.shape, 1.0 / np.sqrt(4 * np.pi))
    for m in range(lmax + 1):
        if m > 0:
            pmm = -np.sqrt((2 * m + 1) / (2 * m)) * sin_t * pmm
        P = np.empty((lmax + 1 - m,) + x.shape)
        P[0] = pmm
        if lmax > m:
            P[1] = np.sqrt(2 * m + 3) * x * pmm
        for l in range(m + 2, lmax + 1):
            a = np.sqrt((4 * l * l - 1) / (l * l - m * m))
            b = np.sqrt(((l - 1) ** 2 - m * m) / (4 * (l - 1) ** 2 - 1))
            P[l - m] = a * (x * P[l - m - 1] - b * P[l - m - 2])
        yield m, P


def legendre_table(lmax: int, x) -> np.ndarray:
    """Dense ``P[l, m, ...]`` table; zero for ``m > l``."""
    x = np.asarray(x, dtype=float)
    out = np.zeros((lmax + 1, lmax + 1) + x.shape)
    for m, P in legendre_orders(lmax, x):
        out[m:, m] = P
    return out


def sph_harm(lmax: int, theta, phi) -> np.ndarray:
    """All ``Y_{lm}`` up to ``lmax`` at points, shape ``(num_coeffs, ...)``."""
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    P = legendre_table(lmax, np.cos(theta))
    l, m = lm_arrays(lmax)
    am = np.abs(m)
    sign = np.where(m < 0, (-1.0) ** am, 1.0).reshape((-1,) + (1,) * theta.ndim)
    return sign * P[l, am] * np.exp(1j * np.multiply.outer(m, phi))


def evaluate_on_grid(f: SphereField, nlat: int, nlon: int) -> np.ndarray:
    """Evaluate a real field on the equiangular grid.

    Colatitudes ``theta_j = pi (j + 1/2) / nlat`` and longitudes
    ``phi_k = 2 pi k / nlon``. Returns a real ``(nlat, nlon)`` array.
    """
    if nlat < 2 or nlon < 4:
        raise InvalidSizeError(f"grid needs nlat >= 2 and nlon >= 4, got {nlat}x{nlon}")
    theta, phi = grid_angles(nlat, nlon)
    lmax = f.lmax
    ms = np.arange(-lmax, lmax + 1)
    # Fourier amplitudes F_m(theta) = sum_l c_lm Pbar_l^|m|(cos theta)
    F = np.zeros((ms.size, nlat), dtype=np.complex128)
    for m, P in legendre_orders(lmax, np.cos(theta)):
        ls = np.arange(m, lmax + 1)
        F[lmax + m] = f.coeffs[lm_index(ls, m)] @ P
        if m > 0:
            F[lmax - m] = (-1.0) ** m * (f.coeffs[lm_index(ls, -m)] @ P)
    vals = F.T @ np.exp(1j * np.outer(ms, phi))
    scale = max(1.0, float(np.max(np.abs(vals), initial=0.0)))
    if np.max(np.abs(vals.imag), initial=0.0) > 1e-10 * scale:
        raise InvalidFieldError("field evaluates to complex values; reality condition violated")
    return vals.real


def grid_angles(nlat: int, nlon: int) -> tuple[np.ndarray, np.ndarray]:
    theta = np.pi * (np.arange(nlat) + 0.5) / nlat
    phi = 2 * np.pi * np.arange(nlon) / nlon
    return theta, phi
