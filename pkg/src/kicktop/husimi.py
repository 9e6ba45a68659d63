"""Husimi functions on the phase grid and the statistics built on them:
Wehrl entropy and ELM, overlap index with the classical mask, mixed-state
fractions and their power-law decay with ``j``."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import digamma, gammaln

from kicktop.classical import ChaoticMask, PhaseGrid
from kicktop.floquet import FloquetSpectrum, floquet_spectrum, sector_components, shannon_entropies
from kicktop.rmt import ln_histogram
from kicktop.spin import DEFAULT_TOL, SpinSystem, scs_from_column, theta_columns

log = logging.getLogger(__name__)

Q_FLOOR = 1e-300
RECORD_COLUMNS = ("j", "alpha", "gamma", "parity", "index", "quasienergy", "S", "elm", "H", "M")


@dataclass
class CoherentFrame:
    """Spin coherent states on every cell of a :class:`PhaseGrid`.

    Only the real Wigner-d column of each theta row is stored; a state is
    that column times ``exp(i (j - m) phi)``. Use :meth:`tile` to
    materialise rows of states for a band of theta rows.
    """

    grid: PhaseGrid
    j: int
    columns: np.ndarray

    @property
    def N(self) -> int:
        return 2 * self.j + 1

    def state(self, i_theta: int, i_phi: int) -> np.ndarray:
        sys = SpinSystem(self.j)
        return scs_from_column(sys, self.columns[i_theta], self.grid.phi[i_phi])

    def tile(self, start: int, stop: int) -> np.ndarray:
        """States of theta rows ``start:stop``, shape ``((stop-start) * n_phi, N)``."""
        phase = np.exp(1j * np.outer(self.grid.phi, np.arange(self.N)))
        block = self.columns[start:stop, None, :] * phase[None, :, :]
        return block.reshape(-1, self.N)

    @property
    def states(self) -> np.ndarray:
        return self.tile(0, self.grid.n_theta)

    def row_norms(self) -> np.ndarray:
        # phases have unit modulus, so every state in a row shares the column norm
        return np.linalg.norm(self.columns, axis=1)


def build_frame(sys: SpinSystem, grid: PhaseGrid | None = None, tol: float = DEFAULT_TOL) -> CoherentFrame:
    grid = grid or PhaseGrid()
    cols = theta_columns(sys, grid.theta, tol)
    norms = np.linalg.norm(cols, axis=1)
    bad = np.flatnonzero(np.abs(norms - 1.0) > 1e-9)
    if bad.size:
        i = int(bad[0])
        raise RuntimeError(f"coherent state at theta={grid.theta[i]:.6g} has norm {norms[i]:.12g}")
    return CoherentFrame(grid, sys.j, cols)


@dataclass
class HusimiField:
    grid: PhaseGrid
    j: int
    values: np.ndarray

    def normalization(self) -> float:
        return float(_prefactor(self.j) * np.sum(quadrature_weights(self.grid)[:, None] * self.values))


def _prefactor(j: int) -> float:
    return (2 * j + 1) / (4 * np.pi)


def quadrature_weights(grid: PhaseGrid) -> np.ndarray:
    """Midpoint weights ``sin(theta_i) dtheta dphi`` per theta row.

    With these, ``(2j+1)/(4 pi) * sum w Q`` is exactly the discretised
    normalisation ``(2j+1) pi/(2 N_p) * sum Q sin(theta)``.
    """
    return np.sin(grid.theta) * grid.dtheta * grid.dphi


def _fold_matrix(frame: CoherentFrame) -> np.ndarray:
    """Frame coefficients folded modulo ``n_phi``: shape ``(n_phi, n_theta, L)``."""
    P = frame.grid.n_phi
    N = frame.N
    L = -(-N // P)
    q = np.arange(N)
    coef = frame.columns * np.exp(-1j * q * frame.grid.phi[0])[None, :]
    padded = np.zeros((frame.grid.n_theta, L * P), dtype=complex)
    padded[:, :N] = coef
    return padded.reshape(frame.grid.n_theta, L, P).transpose(2, 0, 1).copy()


def husimi_amplitudes(frame: CoherentFrame, vectors: np.ndarray, folded: np.ndarray | None = None) -> np.ndarray:
    """``<theta_i, phi_k | v>`` for every column ``v``; shape ``(K, n_theta, n_phi)``.

    The azimuthal sum ``sum_q d_q(theta) e^{-i q phi_k} v_q`` is a DFT over
    ``q mod n_phi``, evaluated with one FFT per theta row.
    """
    vectors = np.asarray(vectors, dtype=complex)
    if vectors.ndim == 1:
        vectors = vectors[:, None]
    if vectors.shape[0] != frame.N:
        raise ValueError(f"vectors have dimension {vectors.shape[0]}, frame expects {frame.N}")
    P = frame.grid.n_phi
    if folded is None:
        folded = _fold_matrix(frame)
    L = folded.shape[2]
    K = vectors.shape[1]
    vp = np.zeros((L * P, K), dtype=complex)
    vp[: frame.N] = vectors
    vp = vp.reshape(L, P, K).transpose(1, 0, 2)
    g = np.matmul(folded, vp)  # (P, n_theta, K)
    amp = np.fft.fft(g, axis=0)
    return amp.transpose(2, 1, 0)


def husimi_raw(frame: CoherentFrame, vectors: np.ndarray, folded=None) -> np.ndarray:
    """Unnormalised ``|<theta, phi|v>|^2``, shape ``(K, n_theta, n_phi)``."""
    a = husimi_amplitudes(frame, vectors, folded)
    return a.real**2 + a.imag**2


def husimi(state, frame: CoherentFrame) -> HusimiField:
    """Husimi function of ``state`` (full Dicke basis) normalised on the grid."""
    state = np.asarray(state, dtype=complex)
    if not np.any(state):
        raise ValueError("zero state")
    q = husimi_raw(frame, state)[0]
    norm = _prefactor(frame.j) * np.sum(quadrature_weights(frame.grid)[:, None] * q)
    return HusimiField(frame.grid, frame.j, q / norm)


def wehrl_entropy(field: HusimiField, sys: SpinSystem | None = None) -> float:
    """``-(2j+1)/(4 pi) * sum_cells w Q ln Q`` with ``0 ln 0 = 0``."""
    j = field.j if sys is None else sys.j
    q = field.values
    if q.min() < -1e-14:
        raise ValueError(f"negative Husimi value {q.min():.3e}")
    q = np.maximum(q, 0.0)
    qlnq = q * np.log(np.maximum(q, Q_FLOOR))
    return float(-_prefactor(j) * np.sum(quadrature_weights(field.grid)[:, None] * qlnq))


def wehrl_elm(S, sys: SpinSystem):
    return np.exp(S) / sys.N


def _mask_signs(mask: ChaoticMask, grid: PhaseGrid) -> np.ndarray:
    if mask.grid != grid:
        raise ValueError(f"mask grid {mask.grid} does not match field grid {grid}")
    return 2.0 * mask.chi - 1.0


def overlap_index(field: HusimiField, mask: ChaoticMask, sys: SpinSystem | None = None) -> float:
    """Husimi-weighted signed overlap: +1 on chaotic cells, -1 on regular cells."""
    j = field.j if sys is None else sys.j
    f = _mask_signs(mask, field.grid)
    M = _prefactor(j) * np.sum(quadrature_weights(field.grid)[:, None] * f * field.values)
    return float(np.clip(M, -1.0, 1.0))


def husimi_statistics(frame: CoherentFrame, vectors: np.ndarray, mask: ChaoticMask | None = None,
                      chunk: int = 64) -> dict[str, np.ndarray]:
    """Wehrl entropy, ELM and (with a mask) overlap index for many states.

    Streams over chunks of ``vectors`` columns; fields are never stored.
    """
    vectors = np.asarray(vectors)
    K = vectors.shape[1]
    w = quadrature_weights(frame.grid)[None, :, None]
    c = _prefactor(frame.j)
    f = None if mask is None else _mask_signs(mask, frame.grid)[None]
    folded = _fold_matrix(frame)
    S = np.empty(K)
    M = np.full(K, np.nan)
    for start in range(0, K, chunk):
        q = husimi_raw(frame, vectors[:, start:start + chunk], folded)
        norm = c * np.sum(w * q, axis=(1, 2))
        q /= norm[:, None, None]
        sl = slice(start, start + q.shape[0])
        S[sl] = -c * np.sum(w * q * np.log(np.maximum(q, Q_FLOOR)), axis=(1, 2))
        if f is not None:
            M[sl] = np.clip(c * np.sum(w * f * q, axis=(1, 2)), -1.0, 1.0)
    return {"S": S, "elm": np.exp(S) / frame.N, "M": M}


def coherent_components(sys: SpinSystem, theta, phi, vectors, tol: float = DEFAULT_TOL) -> np.ndarray:
    """``|<theta_p, phi_p|v_n>|^2`` for arbitrary points; shape ``(n_points, K)``."""
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    cols = theta_columns(sys, theta, tol)
    states = cols * np.exp(1j * np.outer(phi, np.arange(sys.N)))
    amp = states.conj() @ np.asarray(vectors)
    return amp.real**2 + amp.imag**2


def eigvec_component_histogram(spec: FloquetSpectrum, frame: CoherentFrame | None = None,
                               cells=None, nu: int | None = None, bins: int = 80) -> dict:
    """Histogram of ``ln x`` for eigenvector components with the chi-square law.

    Without a frame the components are taken in the Dicke basis (``nu = 1``
    by default); with a frame they are coherent-state overlaps on the cells
    selected by the boolean array ``cells`` (``nu = 2`` by default).
    Components are scaled so that ``<x> = 1/N``.
    """
    vecs = spec.lifted()
    if frame is None:
        x = np.abs(vecs) ** 2
        nu = 1 if nu is None else nu
    else:
        q = husimi_raw(frame, vecs)
        x = q[:, cells] if cells is not None else q
        nu = 2 if nu is None else nu
    return ln_histogram(np.ravel(x), nu, 1.0 / (2 * spec.sys.j + 1), bins)


def lee_dicke_wehrl(j: int, m) -> np.ndarray:
    """Closed-form Wehrl entropy of the Dicke state ``|j, m>``."""
    m = np.asarray(m, dtype=float)
    log_binom = gammaln(2 * j + 1) - gammaln(j - m + 1) - gammaln(j + m + 1)
    return (2 * j / (2 * j + 1) - log_binom + 2 * j * digamma(2 * j + 1)
            - (j + m) * digamma(j + m + 1) - (j - m) * digamma(j - m + 1))


# -- eigenstate records -------------------------------------------------------

@dataclass
class EigenstateRecord:
    index: int
    parity: str
    quasienergy: float
    wehrl_S: float
    wehrl_elm: float
    shannon_H: float
    overlap_M: float
    j: int = 0
    alpha: float = float("nan")
    gamma: float = float("nan")


def eigenstate_records(sys: SpinSystem, spectra, frame: CoherentFrame,
                       mask: ChaoticMask | None = None, basis: str = "jx",
                       chunk: int = 64) -> list[EigenstateRecord]:
    """One record per eigenstate of the given sector spectra (pooled)."""
    records = []
    for spec in spectra:
        stats = husimi_statistics(frame, spec.lifted(), mask, chunk)
        H = shannon_entropies(sector_components(spec, basis))
        for n in range(spec.dim):
            records.append(EigenstateRecord(
                index=n, parity=spec.sector.parity,
                quasienergy=float(spec.quasienergies[n]),
                wehrl_S=float(stats["S"][n]), wehrl_elm=float(stats["elm"][n]),
                shannon_H=float(H[n]), overlap_M=float(stats["M"][n]),
                j=sys.j, alpha=float(sys.alpha), gamma=float(sys.gamma)))
    return records


def _arrays(records, name):
    return np.array([getattr(r, name) for r in records], dtype=float)


def joint_distribution(records: list[EigenstateRecord], bins: int = 40) -> dict:
    """``(M, elm)`` pairs with marginal histograms."""
    M = _arrays(records, "overlap_M")
    L = _arrays(records, "wehrl_elm")
    table = {
        "parity": [r.parity for r in records],
        "index": [r.index for r in records],
        "M": M,
        "elm": L,
    }
    hm, em = np.histogram(M, bins=bins, range=(-1.0, 1.0))
    top = max(1.0, float(L.max())) if L.size else 1.0
    hl, el = np.histogram(L, bins=bins, range=(0.0, top))
    table["M_hist"] = {"edges": em, "counts": hm}
    table["elm_hist"] = {"edges": el, "counts": hl}
    return table


def select_box(records: list[EigenstateRecord], M_range, elm_range) -> list[tuple[str, int]]:
    """Eigenstate ids inside a closed rectangle of the ``(M, elm)`` plane."""
    (m0, m1), (l0, l1) = M_range, elm_range
    return [(r.parity, r.index) for r in records
            if m0 <= r.overlap_M <= m1 and l0 <= r.wehrl_elm <= l1]


def mixed_fraction(records: list[EigenstateRecord], M0: float, M1: float) -> float:
    """Fraction of records with ``M0 <= M <= M1``."""
    if not M0 < M1:
        raise ValueError("need M0 < M1")
    if not records:
        return 0.0
    M = _arrays(records, "overlap_M")
    return float(np.count_nonzero((M >= M0) & (M <= M1)) / M.size)


# -- power laws ---------------------------------------------------------------

@dataclass
class PowerLawFit:
    zeta: float
    intercept: float
    r_squared: float
    window: tuple[float, float] = (float("nan"), float("nan"))
    j_values: list = field(default_factory=list)
    valid: bool = True
    n_points: int = 0


def fit_power_law(points, window=(float("nan"), float("nan"))) -> PowerLawFit:
    """Least squares on ``(ln j, ln chi)``; ``zeta`` is minus the slope.

    Points with ``chi <= 0`` are dropped; fewer than four remaining points is an error.
    """
    pts = [(float(j), float(c)) for j, c in points if c > 0]
    if len(pts) < 4:
        raise ValueError(f"need at least 4 points with chi > 0, got {len(pts)}")
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    A = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum(resid**2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return PowerLawFit(zeta=float(-slope), intercept=float(intercept), r_squared=r2,
                       window=tuple(window), j_values=[int(p[0]) for p in pts],
                       n_points=len(pts))


def window_centers(deltaM: float, step: float = 0.05) -> np.ndarray:
    lo, hi = -1 + deltaM / 2, 1 - deltaM / 2
    if hi < lo - 1e-12:
        raise ValueError("deltaM must not exceed 2")
    n = max(1, int(round((hi - lo) / step)) + 1)
    return np.linspace(lo, hi, n)


def sliding_window_exponents(records_by_j: dict, deltaM: float = 0.3, centers=None,
                             min_points: int = 4) -> list[PowerLawFit]:
    """One power-law fit of ``chi_M(j)`` per window ``[c - dM/2, c + dM/2]``.

    Windows without enough nonzero fractions are returned with ``valid=False``.
    """
    if deltaM <= 0:
        raise ValueError("deltaM must be positive")
    centers = window_centers(deltaM) if centers is None else np.asarray(centers, dtype=float)
    js = sorted(records_by_j)
    fits = []
    for c in centers:
        win = (float(c - deltaM / 2), float(c + deltaM / 2))
        pts = [(j, mixed_fraction(records_by_j[j], *win)) for j in js]
        usable = sum(1 for _, chi in pts if chi > 0)
        if usable < max(min_points, 4):
            fits.append(PowerLawFit(float("nan"), float("nan"), float("nan"), win,
                                    [j for j, chi in pts if chi > 0], valid=False,
                                    n_points=usable))
            continue
        fits.append(fit_power_law(pts, win))
    return fits


# -- grid convergence ---------------------------------------------------------

def grid_convergence_audit(sys: SpinSystem, gammas, grid_sizes, spectra_for=None,
                           tol: float = 1e-3) -> list[dict]:
    """Mean Wehrl ELM per ``(gamma, grid)``; flags grids that are not converged.

    A row is flagged when it is under-resolved (``N_p < 4 j``) or when its
    mean ELM differs from the previous grid's by more than ``tol``.
    ``spectra_for(sys)`` may supply cached ``(odd, even)`` spectra.
    """
    rows = []
    for n_theta, n_phi in grid_sizes:
        if n_phi != 2 * n_theta:
            raise ValueError(f"grid sizes must be N1 x 2N1, got {n_theta}x{n_phi}")
    for gamma in gammas:
        s = SpinSystem(sys.j, sys.alpha, float(gamma))
        spectra = spectra_for(s) if spectra_for else (floquet_spectrum(s, "odd"), floquet_spectrum(s, "even"))
        previous = None
        for n_theta, n_phi in grid_sizes:
            grid = PhaseGrid(n_theta, n_phi)
            frame = build_frame(s, grid)
            elm = np.concatenate([husimi_statistics(frame, sp.lifted())["elm"] for sp in spectra])
            mean = float(elm.mean())
            resolved = grid.n_points >= 4 * s.j
            delta = float("nan") if previous is None else abs(mean - previous)
            converged = resolved and (previous is None or delta <= tol)
            rows.append({"gamma": float(gamma), "n_theta": n_theta, "n_phi": n_phi,
                         "mean_elm": mean, "delta": delta, "resolved": resolved,
                         "converged": converged})
            previous = mean
    return rows


# -- serialisation ------------------------------------------------------------

def write_records(path, records: list[EigenstateRecord]) -> None:
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_COLUMNS)
        for r in records:
            w.writerow([r.j, repr(r.alpha), repr(r.gamma), r.parity, r.index,
                        repr(r.quasienergy), repr(r.wehrl_S), repr(r.wehrl_elm),
                        repr(r.shannon_H), repr(r.overlap_M)])
    os.replace(tmp, path)


def read_records(path) -> list[EigenstateRecord]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(EigenstateRecord(
                index=int(row["index"]), parity=row["parity"],
                quasienergy=float(row["quasienergy"]), wehrl_S=float(row["S"]),
                wehrl_elm=float(row["elm"]), shannon_H=float(row["H"]),
                overlap_M=float(row["M"]), j=int(row["j"]),
                alpha=float(row["alpha"]), gamma=float(row["gamma"])))
    return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, PowerLawFit):
        return _jsonable(asdict(obj))
    return obj


def write_json(path, obj) -> None:
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)
