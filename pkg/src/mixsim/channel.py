"""Rayleigh channel draws, CSI corruption and reference distributions.

Channel entries are CN(0, 2): real and imaginary parts each have unit
variance, so ``||h||^2`` is chi-square with ``2N`` degrees of freedom. Noise
variance is 1 throughout, so the SNR equals the total power ``P_t``.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy import special


class InvalidConfigError(ValueError):
    """Raised for inconsistent dimensions or parameters."""


class InsufficientTailDataError(ValueError):
    """Raised when too few samples fall inside a tail-fit window."""


def norm_ordering(H: np.ndarray) -> np.ndarray:
    """Users sorted by decreasing squared norm; ties keep index order."""
    norms = np.sum(np.abs(H) ** 2, axis=0)
    return np.argsort(-norms, kind="stable")


@dataclass(frozen=True)
class ChannelSet:
    """K channel vectors of length N stored as the columns of ``H``.

    ``ordering[k]`` is the user holding the (k+1)-th largest norm.
    """
    H: np.ndarray
    ordering: np.ndarray = field(default=None)

    def __post_init__(self):
        H = np.asarray(self.H, dtype=complex)
        if H.ndim != 2 or H.shape[0] < 1 or H.shape[1] < 1:
            raise InvalidConfigError(f"H must be N x K, got shape {H.shape}")
        if not np.all(np.isfinite(H)):
            raise InvalidConfigError("channel entries must be finite")
        if H.shape[1] > H.shape[0]:
            raise InvalidConfigError(
                f"K={H.shape[1]} users exceeds N={H.shape[0]} antennas")
        object.__setattr__(self, "H", H)
        if self.ordering is None:
            object.__setattr__(self, "ordering", norm_ordering(H))
        else:
            order = np.asarray(self.ordering, dtype=int)
            if sorted(order.tolist()) != list(range(H.shape[1])):
                raise InvalidConfigError("ordering is not a permutation")
            object.__setattr__(self, "ordering", order)

    @property
    def N(self) -> int:
        return self.H.shape[0]

    @property
    def K(self) -> int:
        return self.H.shape[1]

    @property
    def norms2(self) -> np.ndarray:
        return np.sum(np.abs(self.H) ** 2, axis=0)

    def ranks(self) -> np.ndarray:
        """``ranks()[u]`` is the 0-based norm rank of user ``u``."""
        r = np.empty(self.K, dtype=int)
        r[self.ordering] = np.arange(self.K)
        return r


@dataclass(frozen=True)
class CsiModel:
    """Transmitter-side CSI quality.

    ``mode`` is one of ``perfect``, ``fixed`` or ``power_scaled``. In the
    power-scaled mode the variance follows ``1 / (1 + P_t)`` and
    ``sigma_e2`` is ignored.
    """
    mode: str = "perfect"
    sigma_e2: float = 0.0

    def __post_init__(self):
        if self.mode not in ("perfect", "fixed", "power_scaled"):
            raise InvalidConfigError(f"unknown CSI mode {self.mode!r}")
        if self.sigma_e2 < 0:
            raise InvalidConfigError("sigma_e2 must be nonnegative")
        if self.mode == "perfect" and self.sigma_e2 != 0:
            raise InvalidConfigError("perfect CSI requires sigma_e2 = 0")

    def variance(self, P_t: float) -> float:
        if self.mode == "perfect":
            return 0.0
        if self.mode == "fixed":
            return float(self.sigma_e2)
        return 1.0 / (1.0 + P_t)


def experiment_key(experiment_id: str | int) -> int:
    if isinstance(experiment_id, int):
        return experiment_id
    return zlib.crc32(experiment_id.encode())


def rng_stream(seed: int, experiment_id: str | int, *index: int) -> np.random.Generator:
    """Independent generator for ``(seed, experiment, index...)``.

    Streams depend only on the key, never on which worker consumes them.
    """
    key = (experiment_key(experiment_id),) + tuple(int(i) for i in index)
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(seed, spawn_key=key)))


def complex_normal(rng: np.random.Generator, shape, var: float = 2.0) -> np.ndarray:
    """Circularly symmetric complex Gaussian with per-entry variance ``var``."""
    s = math.sqrt(var / 2.0)
    z = rng.standard_normal(tuple(np.atleast_1d(shape)) + (2,))
    return s * (z[..., 0] + 1j * z[..., 1])


def sample_channels(N: int, K: int, rng: np.random.Generator) -> ChannelSet:
    """Draw K i.i.d. CN(0, 2 I_N) channels."""
    if not 1 <= K <= N:
        raise InvalidConfigError(f"need 1 <= K <= N, got N={N}, K={K}")
    return ChannelSet(complex_normal(rng, (N, K)))


def sample_channel_batch(N: int, K: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` channel matrices at once, shape ``(n, N, K)``."""
    if not 1 <= K <= N:
        raise InvalidConfigError(f"need 1 <= K <= N, got N={N}, K={K}")
    return complex_normal(rng, (n, N, K))


def corrupt_csi(channels: ChannelSet, model: CsiModel, P_t: float,
                rng: np.random.Generator) -> ChannelSet:
    """Transmitter estimate ``H + E`` with E ~ CN(0, sigma_e^2) per entry.

    The ordering of the true channels is kept; only the transmitter uses
    the estimate.
    """
    var = model.variance(P_t)
    if model.mode == "perfect":
        return channels
    E = complex_normal(rng, channels.H.shape, var)
    return ChannelSet(channels.H + E, channels.ordering)


def chi2_pdf_cdf(x: float, N: int) -> tuple[float, float]:
    """Density and CDF of ``||h||^2`` for ``h ~ CN(0, 2 I_N)``.

    The pdf is ``x^(N-1) e^(-x/2) / (2^N (N-1)!)`` and the CDF is the
    regularized lower incomplete gamma ``P(N, x/2)``.
    """
    if N < 1:
        raise InvalidConfigError("N must be >= 1")
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("chi2_pdf_cdf needs x >= 0")
    logpdf = ((N - 1) * np.log(np.where(x > 0, x, 1.0)) - x / 2
              - N * math.log(2) - math.lgamma(N))
    pdf = np.exp(logpdf)
    if N > 1:
        pdf = np.where(x > 0, pdf, 0.0)
    cdf = special.gammainc(N, x / 2)
    if pdf.ndim == 0:
        return float(pdf), float(cdf)
    return pdf, cdf


def order_stat_pdf(x: float, k: int, K: int, N: int) -> float:
    """Density of the k-th largest of K i.i.d. chi-square(2N) norms."""
    if not 1 <= k <= K:
        raise InvalidConfigError(f"rank k={k} outside 1..{K}")
    f, F = chi2_pdf_cdf(x, N)
    coef = math.exp(math.lgamma(K + 1) - math.lgamma(k) - math.lgamma(K - k + 1))
    return coef * F ** (K - k) * (1 - F) ** (k - 1) * f


def tail_exponent(samples, window: tuple[float, float] | None = None,
                  n_points: int = 16, min_count: int = 50) -> float:
    """Estimate ``d`` in ``Pr(X <= x) ~ x^d`` as x -> 0.

    Fits log empirical CDF against log x on a log-spaced grid spanning the
    window, weighting each point by its count (the inverse variance of the
    log CDF). The default window is ``[0.02, 0.2]`` times the sample median.
    """
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    if window is None:
        med = float(np.median(x))
        window = (0.02 * med, 0.2 * med)
    lo, hi = window
    if not 0 < lo < hi:
        raise ValueError(f"bad window {window}")
    n_in = np.searchsorted(x, hi, side="right") - np.searchsorted(x, lo, side="left")
    if n_in < min_count:
        raise InsufficientTailDataError(
            f"only {n_in} samples fall in the window [{lo:g}, {hi:g}]")
    grid = np.geomspace(lo, hi, n_points)
    counts = np.searchsorted(x, grid, side="right").astype(float)
    keep = counts > 0
    if keep.sum() < 2:
        raise InsufficientTailDataError("fewer than two nonempty grid points")
    lx = np.log(grid[keep])
    lF = np.log(counts[keep] / x.size)
    w = counts[keep]
    slope, _ = np.polyfit(lx, lF, 1, w=np.sqrt(w))
    return float(slope)
