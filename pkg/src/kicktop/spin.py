"""Spin-j operators in the Dicke basis, Krylov exponential action and
spin coherent states.

Dicke ordering is descending, ``m = j, j-1, ..., -j``, so the array index
of ``|j, m>`` is ``q = j - m`` and ``|j, j>`` is the first basis vector.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps
from scipy.linalg import expm
from scipy.special import gammaln

DEFAULT_TOL = 1e-12
KRYLOV_DIM = 30
ORACLE_MAX_J = 1024


class KrylovConvergenceError(RuntimeError):
    """Raised when the step-halving budget of the Krylov propagator runs out."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual estimate {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class SpinSystem:
    """Kicked-top parameters: integer spin ``j``, precession ``alpha``, kick ``gamma``."""

    j: int
    alpha: float = 11 * np.pi / 19
    gamma: float = 0.0

    def __post_init__(self):
        if int(self.j) != self.j or self.j < 1:
            raise ValueError(f"j must be an integer >= 1, got {self.j!r}")
        object.__setattr__(self, "j", int(self.j))
        if not (np.isfinite(self.alpha) and np.isfinite(self.gamma)):
            raise ValueError("alpha and gamma must be finite")

    @property
    def N(self) -> int:
        return 2 * self.j + 1

    @property
    def N_odd(self) -> int:
        return self.j

    @property
    def N_even(self) -> int:
        return self.j + 1

    @property
    def m_values(self) -> np.ndarray:
        return np.arange(self.j, -self.j - 1, -1)


@dataclass(frozen=True)
class SpinOperators:
    Jx: sps.csr_array
    Jy: sps.csr_array
    Jz: sps.csr_array
    Jplus: sps.csr_array
    Jminus: sps.csr_array

    @property
    def dim(self) -> int:
        return self.Jz.shape[0]


@dataclass(frozen=True)
class CoherentState:
    theta: float
    phi: float
    amplitudes: np.ndarray


@functools.lru_cache(maxsize=16)
def _operators(j: int) -> SpinOperators:
    n = 2 * j + 1
    q = np.arange(1, n)
    # <m+1|J+|m> with m = j - q
    raising = np.sqrt(q * (n - q).astype(float))
    Jplus = sps.diags_array(raising, offsets=1, shape=(n, n), format="csr", dtype=complex)
    Jminus = sps.diags_array(raising, offsets=-1, shape=(n, n), format="csr", dtype=complex)
    Jz = sps.diags_array(np.arange(j, -j - 1, -1).astype(complex), offsets=0, format="csr")
    Jx = ((Jplus + Jminus) * 0.5).tocsr()
    Jy = ((Jplus - Jminus) * (-0.5j)).tocsr()
    return SpinOperators(Jx=Jx, Jy=Jy, Jz=Jz, Jplus=Jplus, Jminus=Jminus)


def build_spin_operators(sys: SpinSystem) -> SpinOperators:
    """Sparse J_x, J_y, J_z, J_+ and J_- for ``sys.j`` in descending Dicke order."""
    return _operators(sys.j)


def _is_anti_hermitian(A) -> bool:
    if isinstance(A, np.ndarray):
        scale = np.abs(A).max(initial=0.0)
        return np.abs(A + A.conj().T).max(initial=0.0) <= 1e-12 * max(scale, 1.0)
    if sps.issparse(A):
        scale = np.abs(A.data).max(initial=0.0)
        diff = sps.csr_array(A + A.conj().T)
        return np.abs(diff.data).max(initial=0.0) <= 1e-12 * max(scale, 1.0)
    return True


def _norm_bound(A) -> float:
    if sps.issparse(A):
        return float(np.abs(sps.csr_array(A)).sum(axis=1).max(initial=0.0))
    return float(np.abs(np.asarray(A)).sum(axis=1).max(initial=0.0))


def krylov_expm_action(A, v, tol: float = DEFAULT_TOL, krylov_dim: int = KRYLOV_DIM,
                       max_rejections: int = 40, check: bool = True) -> np.ndarray:
    """Return ``exp(A) @ v`` for anti-Hermitian ``A`` via Lanczos on ``iA``.

    The unit interval is covered by adaptive substeps. Each substep builds a
    Lanczos basis of the Hermitian matrix ``iA`` (with full
    reorthogonalisation), exponentiates the small tridiagonal matrix, and is
    accepted when the last-entry residual estimate is below ``tol`` times the
    step length; otherwise the step is halved.

    Parameters
    ----------
    A : sparse matrix or ndarray
        Anti-Hermitian generator.
    v : array_like
        Start vector.
    tol : float
        Target bound for ``||w - exp(A) v||``.
    krylov_dim : int
        Maximal Lanczos subspace size per substep.
    max_rejections : int
        Consecutive step halvings allowed within one substep before
        :class:`KrylovConvergenceError` is raised.
    """
    v = np.asarray(v, dtype=complex)
    if not np.all(np.isfinite(v)):
        raise ValueError("input vector contains NaN or inf")
    if check:
        if sps.issparse(A) and not np.all(np.isfinite(A.data)):
            raise ValueError("generator contains NaN or inf")
        if not _is_anti_hermitian(A):
            raise ValueError("generator is not anti-Hermitian")
    H = 1j * A
    n = v.size
    beta = np.linalg.norm(v)
    anorm = _norm_bound(A)
    if beta == 0.0 or anorm == 0.0:
        return v.copy()

    m = min(krylov_dim, n)
    w = v.copy()
    t_done = 0.0
    tau = min(1.0, 0.4 * m / anorm)
    V = np.empty((m + 1, n), dtype=complex)
    alphas = np.empty(m)
    betas = np.empty(m)
    while t_done < 1.0:
        beta = np.linalg.norm(w)
        V[0] = w / beta
        mk = m
        breakdown = False
        for k in range(m):
            u = H @ V[k]
            a = np.vdot(V[k], u).real
            u -= a * V[k]
            if k > 0:
                u -= betas[k - 1] * V[k - 1]
            u -= V[: k + 1].T @ (V[: k + 1].conj() @ u)
            b = np.linalg.norm(u)
            alphas[k] = a
            betas[k] = b
            if b <= 1e-14 * anorm:
                mk = k + 1
                breakdown = True
                break
            V[k + 1] = u / b
        T = np.diag(alphas[:mk]) + np.diag(betas[: mk - 1], 1) + np.diag(betas[: mk - 1], -1)

        tau = min(tau, 1.0 - t_done)
        rejections = 0
        while True:
            # expm keeps the tiny trailing entries accurate; an eigen-
            # decomposition leaves them at rounding level
            c = expm(-1j * tau * T)[:, 0]
            # defect of the small exponential, integrated over the step
            err = 0.0 if breakdown else tau * beta * betas[mk - 1] * abs(c[mk - 1])
            if err <= tol * tau:
                break
            rejections += 1
            if rejections > max_rejections:
                raise KrylovConvergenceError(
                    f"Krylov propagation stalled at t={t_done:.6g}", err)
            tau *= 0.5

        w = beta * (V[:mk].T @ c)
        t_done += tau
        if breakdown:
            tau = 1.0 - t_done
        else:
            # grow the next step cautiously when the estimate leaves headroom
            ratio = (tol * tau / max(err, 1e-300)) ** (1.0 / mk)
            tau = tau * min(2.0, max(1.0, 0.8 * ratio))
    return w


def _check_angles(theta: float, phi: float):
    if not (0.0 <= theta <= np.pi):
        raise ValueError(f"theta must lie in [0, pi], got {theta}")
    if not (-np.pi <= phi < np.pi):
        raise ValueError(f"phi must lie in [-pi, pi), got {phi}")


def make_coherent_state(sys: SpinSystem, theta: float, phi: float,
                        tol: float = DEFAULT_TOL) -> CoherentState:
    """Spin coherent state ``exp(mu J- - mu* J+)|j,j>`` with ``mu = theta/2 e^{i phi}``."""
    _check_angles(theta, phi)
    ops = _operators(sys.j)
    e1 = np.zeros(sys.N, dtype=complex)
    e1[0] = 1.0
    if theta == 0.0:
        return CoherentState(theta, phi, e1)
    mu = 0.5 * theta * np.exp(1j * phi)
    A = mu * ops.Jminus - np.conj(mu) * ops.Jplus
    return CoherentState(theta, phi, krylov_expm_action(A, e1, tol))


def direct_scs_oracle(sys: SpinSystem, theta: float, phi: float) -> CoherentState:
    """Closed-form coherent state from the binomial expansion, evaluated in logs.

    Refuses ``j > 1024``; the formula is only used to cross-check the Krylov path.
    """
    if sys.j > ORACLE_MAX_J:
        raise ValueError(f"oracle limited to j <= {ORACLE_MAX_J}, got j={sys.j}")
    _check_angles(theta, phi)
    j = sys.j
    q = np.arange(sys.N)  # j - m
    amp = np.zeros(sys.N, dtype=complex)
    if theta == 0.0:
        amp[0] = 1.0
        return CoherentState(theta, phi, amp)
    if theta == np.pi:
        amp[-1] = np.exp(1j * 2 * j * phi)
        return CoherentState(theta, phi, amp)
    log_binom = gammaln(2 * j + 1) - gammaln(2 * j - q + 1) - gammaln(q + 1)
    log_xi = np.log(np.sin(theta / 2)) - np.log(np.cos(theta / 2))
    log_pref = 2 * j * np.log(np.cos(theta / 2))  # (1 + |xi|^2)^(-j)
    log_mag = 0.5 * log_binom + q * log_xi + log_pref
    amp = np.exp(log_mag) * np.exp(1j * q * phi)
    return CoherentState(theta, phi, amp)


def wigner_d_column(sys: SpinSystem, theta: float, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Real amplitudes ``d^j_{m j}(theta)`` of ``|theta, 0>``, Dicke order."""
    amp = make_coherent_state(sys, theta, 0.0, tol).amplitudes
    if np.abs(amp.imag).max() > 1e-10:
        raise RuntimeError("phi=0 coherent state acquired an imaginary part")
    return amp.real.copy()


def theta_columns(sys: SpinSystem, thetas, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Wigner-d columns for many polar angles.

    The angles are visited in increasing order and each column is propagated
    from the previous one with ``exp(d_theta (J- - J+)/2)``, so the total
    Krylov work scales with ``max(thetas)`` instead of ``sum(thetas)``.

    Returns an array of shape ``(len(thetas), 2j+1)`` in the input order.
    """
    thetas = np.asarray(thetas, dtype=float)
    if thetas.ndim != 1:
        raise ValueError("thetas must be one-dimensional")
    if np.any((thetas < 0) | (thetas > np.pi)):
        raise ValueError("thetas must lie in [0, pi]")
    ops = _operators(sys.j)
    B = ((ops.Jminus - ops.Jplus) * 0.5).tocsr()
    if not _is_anti_hermitian(B):
        raise RuntimeError("rotation generator is not anti-Hermitian")
    order = np.argsort(thetas, kind="stable")
    out = np.empty((thetas.size, sys.N))
    w = np.zeros(sys.N, dtype=complex)
    w[0] = 1.0
    current = 0.0
    for idx in order:
        step = thetas[idx] - current
        if step > 0.0:
            w = krylov_expm_action(step * B, w, tol, check=False)
            current = thetas[idx]
        out[idx] = w.real
    return out


def scs_from_column(sys: SpinSystem, column: np.ndarray, phi: float) -> np.ndarray:
    """Attach the azimuthal phase ``e^{i (j-m) phi}`` to a Wigner-d column."""
    return column * np.exp(1j * np.arange(sys.N) * phi)


def align_phase(vec: np.ndarray) -> np.ndarray:
    """Rotate the global phase so the largest-magnitude entry is real positive."""
    k = int(np.argmax(np.abs(vec)))
    return vec * (np.abs(vec[k]) / vec[k])
