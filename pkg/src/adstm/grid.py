"""
Periodic grid and real Fourier basis.

Fields live on an ``n1 x n2`` uniform grid over the unit torus with cell
coordinates ``s = (i/n1, j/n2)``; arrays are indexed ``[i, j]`` so axis 0 is
``s1`` and axis 1 is ``s2``.  A real field is expanded as

    xi(s) = sum_{k in K1} a_k cos(2 pi k.s)
          + 2 sum_{k in K2} (a_k^c cos(2 pi k.s) + a_k^s sin(2 pi k.s))

where ``K1`` holds the self-conjugate frequencies and ``K2`` one
representative per conjugate pair.  Truncation at ``(kappa1, kappa2)`` keeps
the index sets of a virtual ``kappa1 x kappa2`` grid, so the retained
coefficient vector always has length ``kappa1 * kappa2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic grid with geographic metadata."""

    n1: int
    n2: int
    origin_lat: float = 0.0
    origin_lon: float = 0.0
    step_lat: float = 0.04
    step_lon: float = 0.04

    def __post_init__(self):
        _check_even(self.n1, "n1")
        _check_even(self.n2, "n2")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n1, self.n2)

    @property
    def size(self) -> int:
        return self.n1 * self.n2

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Return the ``(s1, s2)`` coordinate arrays, each of shape ``(n1, n2)``."""
        s1 = np.arange(self.n1) / self.n1
        s2 = np.arange(self.n2) / self.n2
        return np.meshgrid(s1, s2, indexing="ij")


def _check_even(n, name):
    if not isinstance(n, (int, np.integer)) or n < 2 or n % 2:
        raise ValueError(f"{name} must be an even integer >= 2, got {n!r}")


@dataclass(frozen=True)
class WavenumberSets:
    k1_set: np.ndarray  # (4, 2) self-conjugate frequencies
    k2_set: np.ndarray  # (m, 2) conjugate-pair representatives

    @property
    def dim(self) -> int:
        return len(self.k1_set) + 2 * len(self.k2_set)


@lru_cache(maxsize=64)
def _wavenumbers(n1: int, n2: int) -> WavenumberSets:
    h1, h2 = n1 // 2, n2 // 2
    k1 = np.array([(0, 0), (0, h2), (h1, 0), (h1, h2)], dtype=int)
    k2 = [(a, b) for a in range(1, h1) for b in range(-h2 + 1, h2 + 1)]
    k2 += [(0, b) for b in range(1, h2)]
    k2 += [(h1, b) for b in range(1, h2)]
    k2 = np.array(k2, dtype=int).reshape(-1, 2)
    k1.setflags(write=False)
    k2.setflags(write=False)
    return WavenumberSets(k1, k2)


def wavenumber_sets(n1: int, n2: int) -> WavenumberSets:
    """Wavenumber index sets of an ``n1 x n2`` grid."""
    _check_even(n1, "n1")
    _check_even(n2, "n2")
    return _wavenumbers(int(n1), int(n2))


def build_wavenumber_sets(grid: GridSpec) -> WavenumberSets:
    return wavenumber_sets(grid.n1, grid.n2)


def basis_eval(k, kind: str, s, grid: GridSpec | None = None) -> float:
    """Evaluate ``cos(2 pi k.s)`` or ``sin(2 pi k.s)``.

    A sine is only defined for conjugate-pair frequencies.  With ``grid``
    given, any frequency in that grid's ``K1`` set is rejected for
    ``kind="sin"``; without it only ``(0, 0)`` can be recognised.
    """
    k = np.asarray(k, dtype=int)
    if kind not in ("cos", "sin"):
        raise ValueError(f"kind must be 'cos' or 'sin', got {kind!r}")
    if kind == "sin":
        k1_set = build_wavenumber_sets(grid).k1_set if grid is not None else np.zeros((1, 2), int)
        if any((k == row).all() for row in k1_set):
            raise ValueError(f"sine basis is undefined for self-conjugate frequency {tuple(k)}")
    phase = 2.0 * np.pi * float(np.dot(k, np.asarray(s, dtype=float)))
    return float(np.cos(phase) if kind == "cos" else np.sin(phase))


@dataclass(frozen=True)
class SpectralBasis:
    """Column layout of the retained basis for a truncation.

    ``freqs[j]`` is the integer wavenumber of column ``j``, ``is_sin[j]``
    selects sine vs cosine and ``weight[j]`` is 1 for ``K1`` columns and 2
    for ``K2`` columns.  Order: cos over K1, cos over K2, sin over K2.
    """

    truncation: tuple[int, int]
    freqs: np.ndarray
    is_sin: np.ndarray
    weight: np.ndarray
    n_k1: int = field(repr=False)
    n_k2: int = field(repr=False)

    @property
    def dim(self) -> int:
        return len(self.freqs)

    def design_matrix(self, grid: GridSpec) -> np.ndarray:
        """The ``N x q`` synthesis matrix (rows follow C-order pixels)."""
        return _design_matrix(self.truncation, grid.n1, grid.n2)

    def gradients(self, grid: GridSpec):
        """Analytic ``d/ds1``, ``d/ds2`` and Laplacian of every column."""
        s1, s2 = grid.coords()
        s1, s2 = s1.ravel(), s2.ravel()
        k = self.freqs.astype(float)
        phase = 2.0 * np.pi * (np.outer(s1, k[:, 0]) + np.outer(s2, k[:, 1]))
        c, s = np.cos(phase), np.sin(phase)
        # derivative of cos is -sin, of sin is cos
        dphase = np.where(self.is_sin, c, -s) * self.weight
        d1 = dphase * (2.0 * np.pi * k[:, 0])
        d2 = dphase * (2.0 * np.pi * k[:, 1])
        lap = -4.0 * np.pi**2 * (k[:, 0] ** 2 + k[:, 1] ** 2) * self.design_matrix(grid)
        return d1, d2, lap


@lru_cache(maxsize=64)
def spectral_basis(kappa1: int, kappa2: int) -> SpectralBasis:
    ws = wavenumber_sets(kappa1, kappa2)
    k1, k2 = ws.k1_set, ws.k2_set
    freqs = np.vstack([k1, k2, k2])
    is_sin = np.r_[np.zeros(len(k1) + len(k2), bool), np.ones(len(k2), bool)]
    weight = np.r_[np.ones(len(k1)), 2.0 * np.ones(2 * len(k2))]
    for a in (freqs, is_sin, weight):
        a.setflags(write=False)
    return SpectralBasis((int(kappa1), int(kappa2)), freqs, is_sin, weight, len(k1), len(k2))


@lru_cache(maxsize=16)
def _design_matrix(truncation, n1, n2):
    basis = spectral_basis(*truncation)
    s1, s2 = GridSpec(n1, n2).coords()
    k = basis.freqs.astype(float)
    phase = 2.0 * np.pi * (np.outer(s1.ravel(), k[:, 0]) + np.outer(s2.ravel(), k[:, 1]))
    F = np.where(basis.is_sin, np.sin(phase), np.cos(phase)) * basis.weight
    F.setflags(write=False)
    return F


@dataclass(frozen=True)
class SpectralCoeffs:
    """Real Fourier coefficients ordered ``(a^c_K1, a^c_K2, a^s_K2)``."""

    values: np.ndarray
    truncation: tuple[int, int]

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        k1, k2 = self.truncation
        if v.shape != (k1 * k2,):
            raise ValueError(f"expected {k1 * k2} coefficients for truncation {self.truncation}, got {v.shape}")
        object.__setattr__(self, "values", v)

    @property
    def basis(self) -> SpectralBasis:
        return spectral_basis(*self.truncation)

    @property
    def alpha_c_k1(self):
        return self.values[: self.basis.n_k1]

    @property
    def alpha_c_k2(self):
        b = self.basis
        return self.values[b.n_k1 : b.n_k1 + b.n_k2]

    @property
    def alpha_s_k2(self):
        b = self.basis
        return self.values[b.n_k1 + b.n_k2 :]


def _check_truncation(truncation, grid: GridSpec):
    k1, k2 = truncation
    _check_even(k1, "kappa1")
    _check_even(k2, "kappa2")
    if k1 > grid.n1 or k2 > grid.n2:
        raise ValueError(f"truncation {truncation} exceeds grid {grid.shape}")


def analyze(field: np.ndarray, truncation=None) -> SpectralCoeffs:
    """Least-squares projection of a complete field onto the retained basis.

    Parameters
    ----------
    field : ndarray (n1, n2)
        Field values; NaN marks a missing pixel, which is an error here.
    truncation : (int, int), optional
        Retained ``(kappa1, kappa2)``; defaults to the full grid, in which
        case the FFT path is used and the projection is exact.
    """
    field = np.asarray(field, dtype=float)
    if field.ndim != 2:
        raise ValueError("field must be 2-D")
    if not np.all(np.isfinite(field)):
        raise ValueError("field has missing entries; fill or fuse before analyzing")
    grid = GridSpec(*field.shape)
    truncation = tuple(truncation) if truncation is not None else grid.shape
    _check_truncation(truncation, grid)
    if truncation == grid.shape:
        return SpectralCoeffs(_analyze_fft(field), truncation)
    F = _design_matrix(truncation, grid.n1, grid.n2)
    gram = np.einsum("ij,ij->j", F, F)
    return SpectralCoeffs(F.T @ field.ravel() / gram, truncation)


def _analyze_fft(field):
    n1, n2 = field.shape
    X = np.fft.fft2(field) / field.size
    basis = spectral_basis(n1, n2)
    f = basis.freqs
    vals = X[f[:, 0] % n1, f[:, 1] % n2]
    return np.where(basis.is_sin, -vals.imag, vals.real)


def analyze_matrix(field: np.ndarray, truncation) -> np.ndarray:
    """Direct matrix-multiply projection (no FFT), used to cross-check the fast path."""
    field = np.asarray(field, dtype=float)
    F = _design_matrix(tuple(truncation), *field.shape)
    return F.T @ field.ravel() / np.einsum("ij,ij->j", F, F)


def synthesize(coeffs: SpectralCoeffs, grid: GridSpec) -> np.ndarray:
    _check_truncation(coeffs.truncation, grid)
    F = _design_matrix(coeffs.truncation, grid.n1, grid.n2)
    return (F @ coeffs.values).reshape(grid.shape)


def truncate(coeffs: SpectralCoeffs, kappa1: int, kappa2: int) -> SpectralCoeffs:
    """Project coefficients onto the smaller basis of a ``kappa1 x kappa2`` grid.

    A frequency that is a conjugate-pair representative in the larger set
    but self-conjugate in the smaller one keeps only its cosine part, and
    its coefficient doubles because the ``K1`` column carries no factor 2.
    """
    c1, c2 = coeffs.truncation
    _check_even(kappa1, "kappa1")
    _check_even(kappa2, "kappa2")
    if kappa1 > c1 or kappa2 > c2:
        raise ValueError(f"cannot truncate {coeffs.truncation} up to {(kappa1, kappa2)}")
    src, dst = coeffs.basis, spectral_basis(kappa1, kappa2)
    lookup = {}
    for j, (k, sn) in enumerate(zip(map(tuple, src.freqs), src.is_sin)):
        lookup[(k, bool(sn))] = j
    out = np.empty(dst.dim)
    for j, (k, sn, w) in enumerate(zip(map(tuple, dst.freqs), dst.is_sin, dst.weight)):
        key, sign = (k, bool(sn)), 1.0
        if key not in lookup:
            # stored under the conjugate representative: sin flips sign
            key, sign = ((-k[0], -k[1]), bool(sn)), (-1.0 if sn else 1.0)
        i = lookup[key]
        out[j] = sign * coeffs.values[i] * src.weight[i] / w
    return SpectralCoeffs(out, (kappa1, kappa2))
