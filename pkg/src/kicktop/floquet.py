"""Parity-reduced Floquet operators, quasienergy statistics and eigenvector
entropies of the quantum kicked top."""

from __future__ import annotations

import functools
import logging
import os
import struct
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps
from scipy.linalg import eigh_tridiagonal, expm, schur

from kicktop.rmt import RMT
from kicktop.spin import SpinSystem, build_spin_operators

log = logging.getLogger(__name__)

SPECTRUM_MAGIC = b"KTSPEC\x00\x00"
SPECTRUM_VERSION = 1
_HEADER = struct.Struct("<8sIIqqdd")


class UnitarityError(RuntimeError):
    pass


class DegenerateSpectrumWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ParitySector:
    """``|j,m,-> (1 <= m <= j)`` or ``|j,m,+> (0 <= m <= j)``, ascending ``m``.

    The even ``m = 0`` state is ``|j,0>`` itself, so the sector basis is
    orthonormal.
    """

    parity: str
    j: int

    def __post_init__(self):
        if self.parity not in ("odd", "even"):
            raise ValueError(f"parity must be 'odd' or 'even', got {self.parity!r}")
        if self.j < 1:
            raise ValueError("j must be >= 1")

    @property
    def dim(self) -> int:
        return self.j if self.parity == "odd" else self.j + 1

    @property
    def m_values(self) -> np.ndarray:
        start = 1 if self.parity == "odd" else 0
        return np.arange(start, self.j + 1)

    def isometry(self) -> sps.csr_array:
        """Sparse ``(2j+1) x dim`` matrix whose columns are the sector basis in Dicke order."""
        return _isometry(self.parity, self.j)


@functools.lru_cache(maxsize=32)
def _isometry(parity: str, j: int) -> sps.csr_array:
    sign = -1.0 if parity == "odd" else 1.0
    m = np.arange(1 if parity == "odd" else 0, j + 1)
    rows, cols, vals = [], [], []
    for col, mm in enumerate(m):
        if mm == 0:
            rows.append(j)
            cols.append(col)
            vals.append(1.0)
            continue
        rows += [j - mm, j + mm]
        cols += [col, col]
        vals += [1 / np.sqrt(2), sign / np.sqrt(2)]
    return sps.csr_array((vals, (rows, cols)), shape=(2 * j + 1, m.size))


def sectors(j: int) -> tuple[ParitySector, ParitySector]:
    return ParitySector("odd", j), ParitySector("even", j)


@dataclass
class FloquetSpectrum:
    sector: ParitySector
    quasienergies: np.ndarray
    eigenvectors: np.ndarray
    sys: SpinSystem | None = None

    def __post_init__(self):
        # one memory layout, so reductions agree bitwise for fresh and cached spectra
        self.eigenvectors = np.asfortranarray(self.eigenvectors)

    @property
    def dim(self) -> int:
        return self.quasienergies.size

    def lifted(self) -> np.ndarray:
        """Eigenvectors expressed in the full Dicke basis, shape ``(2j+1, dim)``."""
        return lift_to_full(self.eigenvectors, self.sector)


def lift_to_full(vectors: np.ndarray, sector: ParitySector) -> np.ndarray:
    return sector.isometry() @ np.asarray(vectors)


@functools.lru_cache(maxsize=16)
def _jx_sector_eig(parity: str, j: int) -> tuple[np.ndarray, np.ndarray]:
    P = _isometry(parity, j)
    Jx = build_spin_operators(SpinSystem(j)).Jx.real
    jx = (P.T @ Jx @ P).toarray()
    lam, X = eigh_tridiagonal(np.diagonal(jx).copy(), np.diagonal(jx, 1).copy())
    lam.setflags(write=False)
    X.setflags(write=False)
    return lam, X


def jx_sector_eigenbasis(sector: ParitySector) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues and real orthonormal eigenvectors of ``J_x`` restricted to a sector."""
    return _jx_sector_eig(sector.parity, sector.j)


def _unitarity_defect(U: np.ndarray) -> float:
    return float(np.abs(U.conj().T @ U - np.eye(U.shape[1])).max())


def build_floquet(sys: SpinSystem, sector: ParitySector, check: bool = True) -> np.ndarray:
    """Dense ``<j,m,+-| exp(-i gamma Jz^2/2j) exp(-i alpha Jx) |j,m',+->``.

    The rotation is formed from the eigendecomposition of the tridiagonal
    sector block of ``J_x``; the torsion is a diagonal phase.
    """
    if sector.j != sys.j:
        raise ValueError("sector and system disagree on j")
    lam, X = jx_sector_eigenbasis(sector)
    rot = (X * np.exp(-1j * sys.alpha * lam)) @ X.T
    m = sector.m_values
    torsion = np.exp(-1j * sys.gamma * m.astype(float) ** 2 / (2 * sys.j))
    F = torsion[:, None] * rot
    if check:
        defect = _unitarity_defect(F)
        if defect > 1e-9:
            raise UnitarityError(f"Floquet matrix not unitary: max|F^H F - I| = {defect:.3e}")
    return F


def build_full_floquet(sys: SpinSystem) -> np.ndarray:
    """Unreduced Floquet matrix in the Dicke basis (small ``j`` only)."""
    ops = build_spin_operators(sys)
    m = sys.m_values.astype(float)
    rot = expm(-1j * sys.alpha * ops.Jx.toarray())
    return np.exp(-1j * sys.gamma * m**2 / (2 * sys.j))[:, None] * rot


def time_reversal_unitary(sys: SpinSystem, which: str = "T1") -> np.ndarray:
    """Unitary part ``U`` of the antiunitary ``T = U K`` (``K``: conjugation in the Dicke basis).

    Both satisfy ``T F T = F^dagger``. ``T2`` equals ``R_x T1`` up to a
    phase, mirroring the classical ``T2 = R_x T1``; with this basis
    convention it needs ``exp(+i alpha Jx)``.
    """
    ops = build_spin_operators(sys)
    if which == "T1":
        return expm(1j * sys.alpha * ops.Jx.toarray()) @ expm(1j * np.pi * ops.Jz.toarray())
    if which == "T2":
        return expm(1j * sys.alpha * ops.Jx.toarray()) @ expm(1j * np.pi * ops.Jy.toarray())
    raise ValueError(f"unknown time reversal {which!r}")


def diagonalize(F: np.ndarray, sector: ParitySector | None = None,
                sys: SpinSystem | None = None, residual_tol: float = 1e-8) -> FloquetSpectrum:
    """Complex Schur decomposition of a unitary matrix.

    For a normal matrix the Schur factor is diagonal, so the Schur vectors
    are orthonormal eigenvectors even inside near-degenerate clusters.
    Quasienergies are returned sorted in ``(-pi, pi]``.
    """
    F = np.asarray(F, dtype=complex)
    T, Z = schur(F, output="complex")
    ev = np.diagonal(T).copy()
    q = np.angle(ev)
    q[q <= -np.pi] = np.pi
    order = np.argsort(q, kind="stable")
    q = q[order]
    Z = Z[:, order]
    ev = ev[order] / np.abs(ev[order])
    resid = np.linalg.norm(F @ Z - Z * ev, axis=0)
    if resid.max() > residual_tol:
        raise np.linalg.LinAlgError(
            f"eigenpair residual {resid.max():.3e} exceeds {residual_tol:.1e}")
    if sector is None:
        sector = ParitySector("odd", max(F.shape[0], 1))
    return FloquetSpectrum(sector, q, Z, sys)


def floquet_spectrum(sys: SpinSystem, parity: str) -> FloquetSpectrum:
    sector = ParitySector(parity, sys.j)
    return diagonalize(build_floquet(sys, sector), sector, sys)


def _quasienergies(spec) -> np.ndarray:
    if isinstance(spec, FloquetSpectrum):
        return np.sort(spec.quasienergies)
    return np.sort(np.asarray(spec, dtype=float))


def circular_spacings(phases) -> np.ndarray:
    v = _quasienergies(phases)
    return np.diff(np.append(v, v[0] + 2 * np.pi))


def spacing_ratios(spec) -> np.ndarray:
    """Circular spacing ratios ``min(s_n/s_{n-1}, s_{n-1}/s_n)``, one per level.

    Accepts a :class:`FloquetSpectrum` or an array of eigenphases.
    """
    v = _quasienergies(spec)
    if v.size < 3:
        raise ValueError("need at least 3 levels")
    s = circular_spacings(v)
    prev = np.roll(s, 1)
    small, big = np.minimum(s, prev), np.maximum(s, prev)
    degenerate = s < 1e-12
    if np.any(degenerate):
        warnings.warn(f"{int(degenerate.sum())} degenerate quasienergy spacings",
                      DegenerateSpectrumWarning, stacklevel=2)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(big > 0, small / np.where(big > 0, big, 1.0), 0.0)
    r[(s < 1e-12) | (prev < 1e-12)] = 0.0
    return r


def normalized_mean_ratio(spec_odd, spec_even=None) -> float:
    """``(<r> - <r>_P) / (<r>_COE - <r>_P)`` with ``<r>`` averaged over the parities."""
    means = [spacing_ratios(spec_odd).mean()]
    if spec_even is not None:
        means.append(spacing_ratios(spec_even).mean())
    r = float(np.mean(means))
    return (r - RMT.r_poisson) / (RMT.r_coe - RMT.r_poisson)


def shannon_entropy(vec, norm_tol: float = 1e-8) -> float:
    p = np.abs(np.asarray(vec)) ** 2
    total = p.sum()
    if abs(total - 1.0) > norm_tol:
        raise ValueError(f"vector is not normalised (|v|^2 = {total:.12g})")
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


def shannon_entropies(vectors: np.ndarray, norm_tol: float = 1e-8) -> np.ndarray:
    """Column-wise Shannon entropies."""
    p = np.abs(np.asarray(vectors)) ** 2
    norms = p.sum(axis=0)
    if np.abs(norms - 1.0).max(initial=0.0) > norm_tol:
        raise ValueError("columns are not normalised")
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return -plogp.sum(axis=0)


def sector_components(spec: FloquetSpectrum, basis: str = "jx") -> np.ndarray:
    """Eigenvector amplitudes in the ``J_x`` sector eigenbasis or the parity basis."""
    if basis == "parity":
        return spec.eigenvectors
    if basis != "jx":
        raise ValueError(f"unknown basis {basis!r}")
    _, X = jx_sector_eigenbasis(spec.sector)
    C = X.T @ spec.eigenvectors
    defect = _unitarity_defect(C)
    if defect > 1e-8:
        raise UnitarityError(f"basis change lost unitarity ({defect:.3e})")
    return C


def shannon_elm_in_basis(spec: FloquetSpectrum, basis: str = "jx") -> float:
    """Mean ``exp(H_n) / dim`` over the eigenstates of one parity sector."""
    H = shannon_entropies(sector_components(spec, basis))
    return float(np.mean(np.exp(H)) / spec.dim)


def symmetry_line_coefficients(alpha: float) -> dict[str, float]:
    """``a_s`` for the fixed circles ``tan(theta) sin(phi) = a_s`` of T1 (+) and T2 (-)."""
    if abs(np.sin(alpha)) < 1e-12:
        raise ValueError("alpha must not be a multiple of pi")
    return {
        "T1": (1 - np.cos(alpha)) / np.sin(alpha),
        "T2": (-1 - np.cos(alpha)) / np.sin(alpha),
    }


def symmetry_line_points(sys: SpinSystem, n_points: int) -> list[tuple[str, np.ndarray, np.ndarray]]:
    """Points on the fixed circles of the classical involutions.

    ``n_points`` azimuths per circle, at cell-centre spacing on ``[-pi, pi)``
    (which avoids ``sin(phi) = 0``). Returns ``[(name, theta, phi), ...]``.
    """
    phi = -np.pi + (np.arange(n_points) + 0.5) * 2 * np.pi / n_points
    out = []
    for name, a in symmetry_line_coefficients(sys.alpha).items():
        theta = np.mod(np.arctan2(a, np.sin(phi)), np.pi)
        out.append((name, theta, phi.copy()))
    return out


def symmetry_line_distance(sys: SpinSystem, xyz) -> np.ndarray:
    """Angular distance from unit vectors to the nearer of the two fixed circles."""
    ca, sa = np.cos(sys.alpha), np.sin(sys.alpha)
    normals = np.array([[0.0, sa, -(1 - ca)], [0.0, 1 - ca, sa]])
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    proj = np.abs(np.asarray(xyz) @ normals.T)
    return np.arcsin(np.clip(proj.min(axis=-1), 0.0, 1.0))


# -- spectrum cache ---------------------------------------------------------

def write_spectrum(path, spec: FloquetSpectrum) -> None:
    """Binary cache: header, quasienergies, then eigenvectors column-major as (re, im) pairs."""
    sys = spec.sys
    parity = 0 if spec.sector.parity == "odd" else 1
    header = _HEADER.pack(SPECTRUM_MAGIC, SPECTRUM_VERSION, parity, sys.j, spec.dim,
                          float(sys.alpha), float(sys.gamma))
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(spec.quasienergies, dtype="<f8").tobytes())
        fh.write(np.asarray(spec.eigenvectors, dtype="<c16").tobytes(order="F"))
    os.replace(tmp, path)


def read_spectrum(path, expect: SpinSystem | None = None, parity: str | None = None) -> FloquetSpectrum:
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
        if len(raw) != _HEADER.size:
            raise ValueError(f"{path}: truncated header")
        magic, version, pcode, j, dim, alpha, gamma = _HEADER.unpack(raw)
        if magic != SPECTRUM_MAGIC:
            raise ValueError(f"{path}: not a spectrum cache")
        if version != SPECTRUM_VERSION:
            raise ValueError(f"{path}: stale cache format version {version}")
        q = np.frombuffer(fh.read(8 * dim), dtype="<f8").copy()
        vecs = np.frombuffer(fh.read(16 * dim * dim), dtype="<c16")
        if q.size != dim or vecs.size != dim * dim:
            raise ValueError(f"{path}: truncated payload")
    sector = ParitySector("odd" if pcode == 0 else "even", int(j))
    sys = SpinSystem(int(j), alpha, gamma)
    if expect is not None and (expect.j, expect.alpha, expect.gamma) != (sys.j, sys.alpha, sys.gamma):
        raise ValueError(f"{path}: cache parameters {sys} do not match {expect}")
    if parity is not None and parity != sector.parity:
        raise ValueError(f"{path}: cache holds the {sector.parity} sector")
    return FloquetSpectrum(sector, q, vecs.reshape((dim, dim), order="F").copy(), sys)
