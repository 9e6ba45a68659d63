"""Random-matrix reference values, chi-square component laws and surrogates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import digamma, gammaln

EULER_GAMMA = float(np.euler_gamma)


@dataclass(frozen=True)
class RmtReference:
    r_poisson: float = 2 * np.log(2) - 1
    r_coe: float = 0.536
    elm_coe: float = float(np.exp(EULER_GAMMA + np.log(2) - 2))  # ~0.482
    elm_cue: float = float(np.exp(EULER_GAMMA - 1))  # ~0.655

    @staticmethod
    def shannon_coe(n: int) -> float:
        """Mean Shannon entropy of a real random vector of dimension ``n``."""
        return float(digamma(n / 2 + 1) - digamma(1.5))

    @staticmethod
    def wehrl_cue(n: int) -> float:
        """Mean Shannon/Wehrl entropy of a complex random vector of dimension ``n``."""
        return float(digamma(n + 1) - digamma(2))

    @staticmethod
    def shannon_coe_offset(n: int) -> float:
        return RmtReference.shannon_coe(n) - np.log(n)

    @staticmethod
    def wehrl_cue_offset(n: int) -> float:
        return RmtReference.wehrl_cue(n) - np.log(n)

    # large-n limits of the offsets
    shannon_coe_limit: float = EULER_GAMMA + np.log(2) - 2  # ~ -0.7296
    wehrl_cue_limit: float = EULER_GAMMA - 1  # ~ -0.4228


RMT = RmtReference()


def chi2_component_dist(nu: int, mean: float):
    """Frozen distribution of ``x = |<a|psi>|^2`` for the chi-square law with ``nu`` dof."""
    return stats.gamma(a=nu / 2, scale=2 * mean / nu)


def chi2_density(x, nu: int, mean: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return chi2_component_dist(nu, mean).pdf(x)


def chi2_ln_density(lnx, nu: int, mean: float) -> np.ndarray:
    """Density of ``ln x``; equals ``x P_nu(x)``."""
    lnx = np.asarray(lnx, dtype=float)
    x = np.exp(lnx)
    k = nu / 2
    log_p = k * np.log(nu / (2 * mean)) - gammaln(k) + k * lnx - nu * x / (2 * mean)
    return np.exp(log_p)


def ks_distance(samples, nu: int, mean: float) -> float:
    """Kolmogorov-Smirnov distance of samples to the chi-square component law.

    The statistic is invariant under the monotone map ``x -> ln x``, so it is
    also the distance between the ``ln x`` distributions.
    """
    samples = np.asarray(samples, dtype=float).ravel()
    return float(stats.kstest(samples, chi2_component_dist(nu, mean).cdf).statistic)


def ln_histogram(samples, nu: int, mean: float, bins: int = 80) -> dict:
    """Normalised histogram of ``ln x`` together with the analytic density."""
    samples = np.asarray(samples, dtype=float).ravel()
    lnx = np.log(np.maximum(samples, 1e-300))
    counts, edges = np.histogram(lnx, bins=bins, density=True)
    centers = 0.5 * (edges[1:] + edges[:-1])
    return {
        "edges": edges,
        "density": counts,
        "analytic": chi2_ln_density(centers, nu, mean),
        "nu": nu,
        "mean": mean,
        "ks": ks_distance(samples, nu, mean),
    }


def cue_matrix(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random unitary from the QR decomposition of a complex Ginibre matrix."""
    z = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diagonal(r)
    return q * (d / np.abs(d))


def coe_matrix(n: int, rng: np.random.Generator) -> np.ndarray:
    u = cue_matrix(n, rng)
    return u.T @ u


def poisson_phases(n: int, rng: np.random.Generator) -> np.ndarray:
    return np.sort(rng.uniform(-np.pi, np.pi, n))
