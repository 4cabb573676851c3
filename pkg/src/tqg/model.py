"""The TQG-Zeitlin system on u(N).

    dQ/dt = [Q, P]_N + [B, J]_N
    dB/dt = [B, P]_N
    Lap_N P - gamma S (.) P = Q - M (.) (B - H1) - (2/Ro) M
    J = H1 - M (.) P

with ``M = p_N(cos theta)``, ``S = M (.) M`` and ``(.)`` the quantized
pointwise product. ``M`` and ``S`` are diagonal, so the elliptic operator
acts on each matrix diagonal independently and is solved as one long
block-tridiagonal system in O(N^2).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lapack

from .errors import ConfigError, InvalidSizeError, NumericError
from .quantization import (
    MatrixHarmonicsBasis,
    build_basis,
    diagonal_jordan_product,
    jordan_product,
    project,
    scaled_commutator,
)
from .sphere import SphereField, legendre_orders, lm_index, sph_harm


@dataclass(frozen=True)
class Bathymetry:
    """Bathymetry source: ``zero``, ``gaussian_caps`` or ``spectral_file``.

    ``gaussian_caps`` params are ``(lat_deg, lon_deg, width_rad, amplitude)``
    tuples; ``spectral_file`` takes a single path.
    """

    name: str = "zero"
    params: tuple = ()


@dataclass
class SimConfig:
    n: int
    rossby: float
    gamma: float
    dt: float
    t_final: float
    seed: int
    init_lmax: int | None = None
    bathymetry: Bathymetry = field(default_factory=Bathymetry)
    coriolis_scale: float = 1.0
    fp_tol: float = 1e-13
    fp_max_iter: int = 100
    casimir_max_power: int = 4
    diag_every: int = 1
    snapshot_every: int = 100
    init_q: str = "random"
    init_b: str = "random"
    init_b_value: float = 0.0

    def __post_init__(self):
        if self.init_lmax is None:
            self.init_lmax = min(100, self.n - 1)
        self.validate()

    def validate(self) -> None:
        checks = [
            (self.n >= 2, f"n must be >= 2, got {self.n}"),
            (self.rossby > 0, f"rossby must be > 0, got {self.rossby}"),
            (self.gamma >= 0, f"gamma must be >= 0, got {self.gamma}"),
            (self.dt > 0, f"dt must be > 0, got {self.dt}"),
            (self.t_final >= 0, f"t_final must be >= 0, got {self.t_final}"),
            (0 <= self.init_lmax <= self.n - 1, f"init_lmax must lie in [0, n-1], got {self.init_lmax}"),
            (0 <= self.coriolis_scale <= 1, f"coriolis_scale must lie in [0, 1], got {self.coriolis_scale}"),
            (self.fp_tol > 0, f"fp_tol must be > 0, got {self.fp_tol}"),
            (self.fp_max_iter >= 1, f"fp_max_iter must be >= 1, got {self.fp_max_iter}"),
            (self.casimir_max_power >= 1, f"casimir_max_power must be >= 1, got {self.casimir_max_power}"),
            (self.diag_every >= 1, f"diag_every must be >= 1, got {self.diag_every}"),
            (self.snapshot_every >= 0, f"snapshot_every must be >= 0, got {self.snapshot_every}"),
            (self.init_q in ("random", "zero"), f"init_q must be random|zero, got {self.init_q!r}"),
            (self.init_b in ("random", "zero", "constant"), f"init_b must be random|zero|constant, got {self.init_b!r}"),
            (self.seed >= 0, f"seed must be >= 0, got {self.seed}"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class TqgState:
    time: float
    Q: np.ndarray
    B: np.ndarray

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    def copy(self) -> "TqgState":
        return TqgState(self.time, self.Q.copy(), self.B.copy())


@dataclass
class DiagnosticsRecord:
    step: int
    time: float
    hamiltonian: float
    casimirs_b: np.ndarray  # k = 1..K
    casimirs_qb: np.ndarray  # k = 0..K
    fp_iterations: int = 0
    fp_residual: float = 0.0


class HelmholtzSolver:
    """Factorized ``P -> Lap_N P - gamma S (.) P`` for diagonal ``S``.

    Every diagonal of ``P`` obeys its own real tridiagonal system. All
    blocks are concatenated (with zero coupling between blocks) into one
    positive definite system for ``-(operator)`` factorized once by LAPACK
    ``pttrf``. For ``gamma == 0`` the ``m = 0`` block is singular; it is
    solved in the eigenbasis with the constant mode dropped.
    """

    def __init__(self, basis: MatrixHarmonicsBasis, s_diag: np.ndarray, gamma: float):
        n = basis.n
        self.basis = basis
        self.n = n
        self.gamma = float(gamma)
        self.mean_mode = self.gamma == 0.0
        scale = 0.5 * np.sqrt(n / (4 * np.pi))
        rows, cols, dd, ee, self._blocks = [], [], [], [], []
        offset = 0
        for m in range(-(n - 1), n):
            if m == 0 and self.mean_mode:
                continue
            r, c = basis.diagonal_index(m)
            d, e = basis.tridiag[abs(m)]
            sigma = scale * (s_diag[r] + s_diag[c])
            rows.append(r)
            cols.append(c)
            dd.append(-d + self.gamma * sigma)
            ee.append(np.append(-e, 0.0))
            self._blocks.append((m, offset, offset + r.size))
            offset += r.size
        self._flat = np.concatenate(rows) * n + np.concatenate(cols)
        d = np.concatenate(dd)
        e = np.concatenate(ee)[:-1]
        self._d, self._e, info = lapack.dpttrf(d, e)
        if info != 0:
            bad = next(m for m, lo, hi in self._blocks if lo < info <= hi)
            raise ConfigError(
                f"Helmholtz operator singular or indefinite on diagonal block m={bad} "
                f"(gamma={gamma})"
            )
        if self.mean_mode:
            self._v0 = basis.eigvecs[0]
            lam = basis.eigvals[0].copy()
            lam[0] = np.inf
            self._lam0 = lam

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve ``Lap_N P - gamma S (.) P = rhs``."""
        n = self.n
        if rhs.shape != (n, n):
            raise InvalidSizeError(f"expected {n}x{n} right-hand side, got {rhs.shape}")
        flat = rhs.ravel()
        b = flat[self._flat]
        x, info = lapack.dpttrs(self._d, self._e, np.stack([b.real, b.imag], axis=1))
        if info != 0:
            raise NumericError(f"tridiagonal solve failed (info={info})")
        out = np.zeros(n * n, dtype=np.complex128)
        out[self._flat] = -(x[:, 0] + 1j * x[:, 1])
        P = out.reshape(n, n)
        if self.mean_mode:
            r0 = np.diagonal(rhs)
            P[np.diag_indices(n)] = self._v0 @ ((self._v0.T @ r0) / self._lam0)
        return P


@dataclass(eq=False)
class StaticData:
    basis: MatrixHarmonicsBasis
    M: np.ndarray
    S: np.ndarray
    H1: np.ndarray
    coriolis: np.ndarray
    helmholtz: HelmholtzSolver
    rossby: float
    gamma: float
    coriolis_scale: float

    @property
    def n(self) -> int:
        return self.basis.n

    @property
    def mu(self) -> np.ndarray:
        """Real diagonal of ``-i M``."""
        return np.diagonal(self.M).imag.copy()


def mu_field(lmax: int = 1) -> SphereField:
    """``cos(theta)`` as a spectral field."""
    f = SphereField.zeros(lmax)
    f.coeffs[lm_index(1, 0)] = np.sqrt(4 * np.pi / 3)
    return f


def assemble_static(config: SimConfig, basis: MatrixHarmonicsBasis | None = None, h1: np.ndarray | None = None) -> StaticData:
    """Precompute ``M``, ``S``, ``H1``, the Coriolis term and the Helmholtz factorization.

    ``h1`` overrides the configured bathymetry (used when restoring from a
    snapshot).
    """
    basis = basis or build_basis(config.n)
    if basis.n != config.n:
        raise InvalidSizeError(f"basis size {basis.n} does not match config n={config.n}")
    M = project(mu_field(), basis)
    S = jordan_product(M, M)
    if h1 is None:
        H1 = builtin_bathymetry(config.bathymetry.name, config.bathymetry.params, basis)
    else:
        H1 = np.asarray(h1, dtype=np.complex128)
    coriolis = (2.0 / config.rossby) * config.coriolis_scale * M
    solver = HelmholtzSolver(basis, np.diagonal(S).imag, config.gamma)
    return StaticData(basis, M, S, H1, coriolis, solver, config.rossby, config.gamma, config.coriolis_scale)


def helmholtz_rhs(Q: np.ndarray, B: np.ndarray, static: StaticData) -> np.ndarray:
    """``Q - M (.) (B - H1) - coriolis``."""
    return Q - diagonal_jordan_product(static.mu * 1j, B - static.H1) - static.coriolis


def helmholtz_solve(Q: np.ndarray, B: np.ndarray, static: StaticData) -> np.ndarray:
    """Stream matrix ``P`` from potential vorticity and buoyancy."""
    if Q.shape != (static.n, static.n) or B.shape != Q.shape:
        raise InvalidSizeError(f"state of shape {Q.shape}/{B.shape} does not match N={static.n}")
    return static.helmholtz.solve(helmholtz_rhs(Q, B, static))


def source_current(P: np.ndarray, static: StaticData) -> np.ndarray:
    """``J = H1 - M (.) P``."""
    if P.shape != (static.n, static.n):
        raise InvalidSizeError(f"expected {static.n}x{static.n}, got {P.shape}")
    return static.H1 - diagonal_jordan_product(static.mu * 1j, P)


def rhs(state: TqgState, static: StaticData) -> tuple[np.ndarray, np.ndarray]:
    P = helmholtz_solve(state.Q, state.B, static)
    J = source_current(P, static)
    Qdot = scaled_commutator(state.Q, P) + scaled_commutator(state.B, J)
    Bdot = scaled_commutator(state.B, P)
    return Qdot, Bdot


def hamiltonian(state: TqgState, static: StaticData) -> float:
    """``1/2 tr((Q - 2M/Ro + M (.) (H1 - B))^H P) + tr(B^H H1)``."""
    R = helmholtz_rhs(state.Q, state.B, static)
    P = static.helmholtz.solve(R)
    H = 0.5 * np.vdot(R, P) + np.vdot(state.B, static.H1)
    if abs(H.imag) > 1e-11 * max(abs(H.real), 1.0):
        raise NumericError(f"Hamiltonian has imaginary part {H.imag:.3e}")
    return float(H.real)


def casimirs(state: TqgState, K: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Monomial Casimirs ``(4pi/N) tr(B^k)``, k=1..K, and ``(4pi/N) tr(Q B^k)``, k=0..K.

    ``B`` is skew-hermitian, so ``tr(B^k)`` carries the phase ``i^k``; it is
    divided out (likewise ``i^(k+1)`` for ``Q B^k``) and the real part is
    returned.
    """
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    Q, B = state.Q, state.B
    n = Q.shape[0]
    pref = 4 * np.pi / n
    cas_b = np.empty(K)
    cas_qb = np.empty(K + 1)
    cas_qb[0] = (np.trace(Q) / 1j).real * pref
    Bk = B
    for k in range(1, K + 1):
        if k > 1:
            Bk = Bk @ B
        cas_b[k - 1] = (np.trace(Bk) / 1j**k).real * pref
        cas_qb[k] = (np.sum(Q * Bk.T) / 1j ** (k + 1)).real * pref
    return cas_b, cas_qb


def random_field(rng: np.random.Generator, lmax: int, init_lmax: int) -> SphereField:
    """Standard-normal coefficients for ``1 <= l <= init_lmax``, real field."""
    f = SphereField.zeros(lmax)
    if init_lmax < 1:
        return f
    ls = np.concatenate([np.full(l + 1, l) for l in range(1, init_lmax + 1)])
    ms = np.concatenate([np.arange(l + 1) for l in range(1, init_lmax + 1)])
    z = rng.standard_normal((ls.size, 2))
    c = z[:, 0] + 1j * z[:, 1]
    c[ms == 0] = c[ms == 0].real
    f.coeffs[lm_index(ls, ms)] = c
    neg = ms > 0
    f.coeffs[lm_index(ls[neg], -ms[neg])] = (-1.0) ** ms[neg] * np.conj(c[neg])
    return f


def random_initial_state(config: SimConfig, basis: MatrixHarmonicsBasis) -> TqgState:
    """Seeded random potential vorticity and buoyancy.

    ``Q`` and ``B`` are drawn from independent child streams of
    ``SeedSequence(seed)``; ``init_q``/``init_b`` can replace either by zero
    (or ``B`` by a constant field).
    """
    n = basis.n
    q_ss, b_ss = np.random.SeedSequence(config.seed).spawn(2)
    if config.init_q == "random":
        Q = project(random_field(np.random.default_rng(q_ss), n - 1, config.init_lmax), basis)
    else:
        Q = np.zeros((n, n), dtype=np.complex128)
    if config.init_b == "random":
        B = project(random_field(np.random.default_rng(b_ss), n - 1, config.init_lmax), basis)
    elif config.init_b == "constant":
        B = project(SphereField.constant(config.init_b_value), basis)
    else:
        B = np.zeros((n, n), dtype=np.complex128)
    return TqgState(0.0, Q, B)


def helmholtz_filter(f: SphereField, alpha: float) -> SphereField:
    """Low-pass ``(1 - alpha^2 Lap)^{-1}`` applied coefficient-wise."""
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    l = np.repeat(np.arange(f.lmax + 1), 2 * np.arange(f.lmax + 1) + 1)
    return SphereField(f.lmax, f.coeffs / (1.0 + alpha**2 * l * (l + 1)))


def gaussian_caps_field(caps, lmax: int) -> SphereField:
    """Sum of caps ``amp * exp(-(1 - x.c) / width^2)`` expanded to degree ``lmax``.

    Each cap is axisymmetric about its centre ``c``, so its coefficients
    follow from a 1-D Legendre quadrature and the addition theorem.
    """
    nq = 2 * lmax + 64
    t, w = np.polynomial.legendre.leggauss(nq)
    _, P = next(legendre_orders(lmax, t))  # orthonormal m=0: sqrt((2l+1)/4pi) P_l
    pl = P / np.sqrt((2 * np.arange(lmax + 1) + 1) / (4 * np.pi))[:, None]
    out = SphereField.zeros(lmax)
    for lat, lon, width, amp in caps:
        if width <= 0:
            raise ConfigError(f"gaussian cap width must be > 0, got {width}")
        g = amp * np.exp(-(1.0 - t) / width**2)
        gl = 2 * np.pi * (pl @ (w * g))
        Yc = sph_harm(lmax, np.deg2rad(90.0 - lat), np.deg2rad(lon))
        l = np.repeat(np.arange(lmax + 1), 2 * np.arange(lmax + 1) + 1)
        out.coeffs[:] += gl[l] * np.conj(Yc)
    return out


def bathymetry_field(name: str, params, lmax: int) -> SphereField:
    if name in ("zero", "none"):
        return SphereField.zeros(lmax)
    if name == "gaussian_caps":
        return gaussian_caps_field(params, lmax)
    if name == "spectral_file":
        from .io import read_field_file

        (path,) = params
        return read_field_file(path, field_id="h1").truncate(lmax)
    raise ConfigError(f"unknown bathymetry {name!r}")


def builtin_bathymetry(name: str, params, basis: MatrixHarmonicsBasis) -> np.ndarray:
    """Quantized bathymetry ``H1``."""
    if name in ("zero", "none"):
        return np.zeros((basis.n, basis.n), dtype=np.complex128)
    return project(bathymetry_field(name, params, basis.n - 1), basis)
