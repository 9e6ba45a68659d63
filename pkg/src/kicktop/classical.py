"""Classical kicked top on the unit sphere and SALI phase-space classification."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from kicktop.spin import SpinSystem

SALI_FLOOR = 1e-16
MASK_FORMAT = "kicktop-mask/1"


@dataclass(frozen=True)
class PhaseGrid:
    """Cell-centred ``n_theta x n_phi`` grid on ``[0, pi] x [-pi, pi)``.

    Cell weights are the exact spherical cell areas. They equal
    ``sin(theta_i) dtheta dphi`` times the constant ``sinc(dtheta/2)``, so
    normalised quadratures coincide with the plain midpoint rule while the
    weights themselves sum to ``4 pi``.
    """

    n_theta: int = 200
    n_phi: int = 400

    def __post_init__(self):
        if self.n_theta < 1 or self.n_phi < 1:
            raise ValueError("grid sizes must be positive")

    @property
    def dtheta(self) -> float:
        return np.pi / self.n_theta

    @property
    def dphi(self) -> float:
        return 2 * np.pi / self.n_phi

    @property
    def theta(self) -> np.ndarray:
        return (np.arange(self.n_theta) + 0.5) * self.dtheta

    @property
    def phi(self) -> np.ndarray:
        return -np.pi + (np.arange(self.n_phi) + 0.5) * self.dphi

    @property
    def n_points(self) -> int:
        return self.n_theta * self.n_phi

    @property
    def row_weights(self) -> np.ndarray:
        """Area of one cell in each theta row."""
        h = 0.5 * self.dtheta
        return (np.cos(self.theta - h) - np.cos(self.theta + h)) * self.dphi

    @property
    def weights(self) -> np.ndarray:
        return np.repeat(self.row_weights[:, None], self.n_phi, axis=1)

    def unit_vectors(self) -> np.ndarray:
        """Cell centres as unit vectors, shape ``(n_theta, n_phi, 3)``."""
        th, ph = np.meshgrid(self.theta, self.phi, indexing="ij")
        return spherical_to_cartesian(th, ph)


@dataclass
class ChaoticMask:
    grid: PhaseGrid
    chi: np.ndarray
    sali_log10: np.ndarray
    gamma: float = float("nan")
    alpha: float = float("nan")
    n_kicks: int = 300
    threshold: float = 1e-8
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        shape = (self.grid.n_theta, self.grid.n_phi)
        self.chi = np.asarray(self.chi, dtype=np.int8).reshape(shape)
        self.sali_log10 = np.asarray(self.sali_log10, dtype=float).reshape(shape)

    def complement(self) -> "ChaoticMask":
        return ChaoticMask(self.grid, 1 - self.chi, self.sali_log10, self.gamma,
                           self.alpha, self.n_kicks, self.threshold)


def spherical_to_cartesian(theta, phi) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)


def cartesian_to_spherical(s) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(s, dtype=float)
    theta = np.arccos(np.clip(s[..., 2], -1.0, 1.0))
    phi = np.arctan2(s[..., 1], s[..., 0])
    return theta, phi


def _tilde(s, alpha):
    ca, sa = np.cos(alpha), np.sin(alpha)
    x, y, z = s[..., 0], s[..., 1], s[..., 2]
    return x, y * ca - z * sa, y * sa + z * ca


def classical_map(s, sys: SpinSystem) -> np.ndarray:
    """One kick: rotation by ``alpha`` about x, then torsion by ``gamma * z``.

    Accepts a single state ``(3,)`` or a batch ``(..., 3)``; output is
    renormalised to the unit sphere.
    """
    s = np.asarray(s, dtype=float)
    xt, yt, zt = _tilde(s, sys.alpha)
    c, sn = np.cos(sys.gamma * zt), np.sin(sys.gamma * zt)
    out = np.stack([xt * c - yt * sn, xt * sn + yt * c, zt], axis=-1)
    return out / np.linalg.norm(out, axis=-1, keepdims=True)


def classical_map_inverse(s, sys: SpinSystem) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    x, y, z = s[..., 0], s[..., 1], s[..., 2]
    c, sn = np.cos(sys.gamma * z), np.sin(sys.gamma * z)
    xt, yt, zt = x * c + y * sn, -x * sn + y * c, z
    ca, sa = np.cos(sys.alpha), np.sin(sys.alpha)
    out = np.stack([xt, yt * ca + zt * sa, -yt * sa + zt * ca], axis=-1)
    return out / np.linalg.norm(out, axis=-1, keepdims=True)


def rotation_x(alpha: float) -> np.ndarray:
    ca, sa = np.cos(alpha), np.sin(alpha)
    return np.array([[1.0, 0.0, 0.0], [0.0, ca, -sa], [0.0, sa, ca]])


def jacobian(s, sys: SpinSystem) -> np.ndarray:
    """Tangent map ``Omega(s) @ R_alpha``; shape ``(..., 3, 3)``."""
    s = np.asarray(s, dtype=float)
    xt, yt, zt = _tilde(s, sys.alpha)
    g = sys.gamma
    c, sn = np.cos(g * zt), np.sin(g * zt)
    omega = np.zeros(s.shape[:-1] + (3, 3))
    omega[..., 0, 0] = c
    omega[..., 0, 1] = -sn
    omega[..., 0, 2] = -g * xt * sn - g * yt * c
    omega[..., 1, 0] = sn
    omega[..., 1, 1] = c
    omega[..., 1, 2] = g * xt * c - g * yt * sn
    omega[..., 2, 2] = 1.0
    return omega @ rotation_x(sys.alpha)


def involution(s, which: str, sys: SpinSystem) -> np.ndarray:
    """Reversing involutions ``T1`` and ``T2``: ``T F T = F^-1``."""
    s = np.asarray(s, dtype=float)
    ca, sa = np.cos(sys.alpha), np.sin(sys.alpha)
    x, y, z = s[..., 0], s[..., 1], s[..., 2]
    if which == "T1":
        return np.stack([x, -y * ca + z * sa, y * sa + z * ca], axis=-1)
    if which == "T2":
        return np.stack([x, y * ca - z * sa, -y * sa - z * ca], axis=-1)
    raise ValueError(f"unknown involution {which!r}")


_SEEDS = (np.array([0.28, 0.46, 0.84]), np.array([0.81, -0.52, 0.27]))


def initial_tangent_pair(s) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic orthonormal tangent pair at ``s`` (batched).

    The first vector is a fixed seed projected on the tangent plane (a second
    seed is used where the first is nearly radial); the second completes the
    pair as ``s x w1``.
    """
    s = np.asarray(s, dtype=float)
    w = []
    for seed in _SEEDS:
        p = seed - np.sum(s * seed, axis=-1, keepdims=True) * s
        w.append(p)
    n0 = np.linalg.norm(w[0], axis=-1, keepdims=True)
    n1 = np.linalg.norm(w[1], axis=-1, keepdims=True)
    use_first = n0 > 0.3
    w1 = np.where(use_first, w[0] / np.where(n0 > 0, n0, 1.0), w[1] / n1)
    w2 = np.cross(s, w1)
    w2 /= np.linalg.norm(w2, axis=-1, keepdims=True)
    return w1, w2


def _project_normalize(w, s):
    w = w - np.sum(w * s, axis=-1, keepdims=True) * s
    return w / np.linalg.norm(w, axis=-1, keepdims=True)


def _sali(w1, w2):
    plus = np.linalg.norm(w1 + w2, axis=-1)
    minus = np.linalg.norm(w1 - w2, axis=-1)
    return np.maximum(np.minimum(plus, minus), SALI_FLOOR)


def _evolve_sali(s, sys: SpinSystem, n_kicks: int, history: bool):
    s = np.asarray(s, dtype=float)
    s = s / np.linalg.norm(s, axis=-1, keepdims=True)
    w1, w2 = initial_tangent_pair(s)
    out = []
    for _ in range(n_kicks):
        jac = jacobian(s, sys)
        w1 = np.einsum("...ij,...j->...i", jac, w1)
        w2 = np.einsum("...ij,...j->...i", jac, w2)
        s = classical_map(s, sys)
        w1 = _project_normalize(w1, s)
        w2 = _project_normalize(w2, s)
        if history:
            out.append(_sali(w1, w2))
    if history:
        return np.stack(out, axis=0)
    return _sali(w1, w2)


def sali_trajectory(s0, sys: SpinSystem, n_kicks: int) -> np.ndarray:
    """SALI after each of ``n_kicks`` kicks for the orbit starting at ``s0``."""
    if n_kicks < 1:
        raise ValueError("n_kicks must be >= 1")
    return _evolve_sali(np.asarray(s0, dtype=float), sys, n_kicks, history=True)


def final_sali(states, sys: SpinSystem, n_kicks: int) -> np.ndarray:
    """Vectorised SALI at ``t = n_kicks`` for a batch of initial states."""
    return _evolve_sali(states, sys, n_kicks, history=False)


def _final_sali_chunk(args):
    states, sys, n_kicks = args
    return final_sali(states, sys, n_kicks)


def classify_phase_space(sys: SpinSystem, grid: PhaseGrid | None = None,
                         n_kicks: int = 300, threshold: float = 1e-8,
                         workers: int = 1) -> ChaoticMask:
    """Integrate one orbit per cell centre and threshold its final SALI."""
    grid = grid or PhaseGrid()
    if not (0.0 < threshold < 1.0):
        raise ValueError("threshold must lie in (0, 1)")
    states = grid.unit_vectors().reshape(-1, 3)
    if workers > 1:
        chunks = np.array_split(states, workers * 4)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_final_sali_chunk, [(c, sys, n_kicks) for c in chunks]))
        sali = np.concatenate(parts)
    else:
        sali = final_sali(states, sys, n_kicks)
    log_sali = np.log10(sali)
    chi = (log_sali <= np.log10(threshold)).astype(np.int8)
    return ChaoticMask(grid, chi, log_sali, gamma=float(sys.gamma), alpha=float(sys.alpha),
                       n_kicks=n_kicks, threshold=threshold)


def chaotic_fraction(mask: ChaoticMask) -> float:
    """Area-weighted fraction of chaotic cells."""
    w = mask.grid.weights
    return float(np.sum(mask.chi * w) / np.sum(w))


def write_mask(path, mask: ChaoticMask) -> None:
    """Write a mask as CSV with a ``# key=value`` header, theta-major rows."""
    g = mask.grid
    header = [
        f"format={MASK_FORMAT}",
        f"n_theta={g.n_theta}",
        f"n_phi={g.n_phi}",
        f"gamma={mask.gamma!r}",
        f"alpha={mask.alpha!r}",
        f"n_kicks={mask.n_kicks}",
        f"threshold={mask.threshold!r}",
    ]
    it, ip = np.meshgrid(np.arange(g.n_theta), np.arange(g.n_phi), indexing="ij")
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        fh.write("i_theta,i_phi,sali_log10,chi\n")
        rows = zip(it.ravel().tolist(), ip.ravel().tolist(), mask.sali_log10.ravel().tolist(),
                   mask.chi.ravel().tolist())
        fh.writelines(f"{a},{b},{c!r},{d}\n" for a, b, c, d in rows)
    os.replace(tmp, path)


def read_mask_header(path) -> dict:
    meta = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition("=")
            meta[key.strip()] = value.strip()
    return meta


def read_mask(path) -> ChaoticMask:
    meta = read_mask_header(path)
    if meta.get("format") != MASK_FORMAT:
        raise ValueError(f"{path}: unsupported mask format {meta.get('format')!r}")
    grid = PhaseGrid(int(meta["n_theta"]), int(meta["n_phi"]))
    data = np.loadtxt(path, delimiter=",", comments="#", skiprows=len(meta) + 1)
    data = np.atleast_2d(data)
    if data.shape[0] != grid.n_points:
        raise ValueError(f"{path}: expected {grid.n_points} cells, found {data.shape[0]}")
    order = np.lexsort((data[:, 1], data[:, 0]))
    data = data[order]
    return ChaoticMask(grid, data[:, 3].astype(np.int8), data[:, 2],
                       gamma=float(meta["gamma"]), alpha=float(meta["alpha"]),
                       n_kicks=int(meta["n_kicks"]), threshold=float(meta["threshold"]))
