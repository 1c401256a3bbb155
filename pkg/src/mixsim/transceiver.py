"""Beam design and rate evaluation for the mixture transceiver.

Groups are served by inter-group zero-forcing. Inside a group the users
share one beam and split its power by the factors ``delta``; stronger users
decode and cancel the weaker users' messages first. Noise variance is 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .channel import ChannelSet
from .grouping import Grouping

UNIT_TOL = 1e-10


class DegenerateChannelError(ValueError):
    """Raised when zero-forcing is impossible for the given channels."""


def c_constant(L: int) -> int:
    """Approximation constant of the common-beam problem for L users."""
    if L < 1:
        raise ValueError("L must be >= 1")
    return L if L <= 3 else 8 * L * L


def delta_solution(L: int, R_th: float, C: float) -> tuple[float, ...]:
    """Power split that keeps every SIC stage strictly above ``R_th``.

    With ``q = 2^R_th + C`` the first factor is ``q^-(L-1)`` and the i-th
    is ``(q - 1) q^-(L-i+1)``; the tuple sums to one.
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    if R_th <= 0 or C <= 0:
        raise ValueError("R_th and C must be positive")
    q = 2.0 ** R_th + C
    d = [q ** -(L - 1)]
    d += [(q - 1) * q ** -(L - i + 1) for i in range(2, L + 1)]
    return tuple(d)


def saturation_caps(deltas: Sequence[float]) -> tuple[float, ...]:
    """High-power rate limits ``log2(1 + delta_i / sum_{m<i} delta_m)``.

    The first user is not interference limited and gets ``inf``.
    """
    d = np.asarray(deltas, dtype=float)
    caps = [math.inf]
    for i in range(1, d.size):
        S = d[:i].sum()
        caps.append(math.inf if S == 0 else math.log2(1 + d[i] / S))
    return tuple(caps)


def _check_unit(V: np.ndarray) -> None:
    n = np.linalg.norm(V, axis=0)
    if np.any(np.abs(n - 1) > UNIT_TOL):
        raise ValueError("maxmin_beam expects unit-norm channels")


def maxmin_closed_form2(V: np.ndarray) -> np.ndarray:
    """Optimal beam for two unit channels: ``v1 + e^{-j arg rho} v2``.

    Both gains equal ``(1 + |rho|) / 2`` with ``rho = v1^H v2``, which is
    the maximum of the smaller gain.
    """
    rho = np.vdot(V[:, 0], V[:, 1])
    a = np.conj(rho) / abs(rho) if abs(rho) > 0 else 1.0
    w = V[:, 0] + a * V[:, 1]
    return w / np.linalg.norm(w)


def maxmin_beam(V, rng: np.random.Generator | None = None, restarts: int = 200,
                iters: int = 500, step: float = 0.1) -> tuple[np.ndarray, float, bool]:
    """Unit beam maximizing ``min_i |v_i^H w|^2`` over unit channels ``V``.

    One channel gives the matched beam and two channels the closed form.
    For three or more, the principal eigenvector of ``V V^H`` and
    ``restarts`` Gaussian draws ``V z`` start a projected subgradient
    ascent; the best iterate is kept. The optimizer runs in the
    coordinates of a triangular factor of ``V^H V`` so the value does not
    depend on the frame the channels are expressed in.

    Returns ``(w, achieved, certificate_ok)`` where the certificate checks
    ``achieved >= 1 / c(L)``.
    """
    V = np.asarray(V, dtype=complex)
    if V.ndim == 1:
        V = V[:, None]
    _check_unit(V)
    L = V.shape[1]
    if L == 1:
        w = V[:, 0].copy()
    elif L == 2:
        w = maxmin_closed_form2(V)
    else:
        if rng is None:
            rng = np.random.default_rng(0)
        w = _maxmin_search(V, rng, restarts, iters, step)
    achieved = float(np.min(np.abs(V.conj().T @ w) ** 2))
    return w, achieved, achieved >= 1.0 / c_constant(L) - 1e-9


def _maxmin_search(V, rng, restarts, iters, step):
    # the optimum lies in C(V); work with V = Q R, R upper triangular
    L = V.shape[1]
    Q, R = np.linalg.qr(V)
    # fix the phase of Q so R has a real positive diagonal
    ph = np.diag(R) / np.where(np.abs(np.diag(R)) > 0, np.abs(np.diag(R)), 1)
    Q = Q * ph[None, :]
    R = np.conj(ph)[:, None] * R
    r = R.shape[0]
    _, evecs = np.linalg.eigh(R @ R.conj().T)
    cands = np.empty((restarts + 1, r), dtype=complex)
    cands[0] = evecs[:, -1]
    z = (rng.standard_normal((restarts, L)) + 1j * rng.standard_normal((restarts, L)))
    xi = z @ R.T
    cands[1:] = xi / np.linalg.norm(xi, axis=1, keepdims=True)
    u, _ = _kernels.maxmin_polish(np.ascontiguousarray(R), cands, iters, step)
    w = Q @ u
    return w / np.linalg.norm(w)


def group_rates_exact(G, w, deltas, P: float) -> np.ndarray:
    """Rates of one group served by the common beam ``w``.

    ``G`` holds the effective channels in decoding order (non-increasing
    norm). User i's message must be decoded by every user j <= i, so its
    rate is set by the worst SINR ``delta_i P a_j / (sum_{m<i} delta_m P a_j + 1)``
    with ``a_j = |g_j^H w|^2``.
    """
    G = np.asarray(G, dtype=complex)
    if G.ndim == 1:
        G = G[:, None]
    n2 = np.sum(np.abs(G) ** 2, axis=0)
    if np.any(np.diff(n2) > 1e-12 * n2.max()):
        raise ValueError("effective channels must be sorted by decreasing norm")
    d = np.asarray(deltas, dtype=float)
    a = np.abs(G.conj().T @ np.asarray(w, dtype=complex)) ** 2
    L = d.size
    rates = np.empty(L)
    for i in range(L):
        S = d[:i].sum()
        sinr = d[i] * P * a[:i + 1] / (S * P * a[:i + 1] + 1.0)
        rates[i] = math.log2(1.0 + sinr.min())
    return rates


def prop1_lower_bounds(norms2, deltas, P: float, L: int | None = None) -> np.ndarray:
    """Guaranteed rates for a group whose beam meets the ``1/c`` floor.

    ``norms2`` are the effective-channel squared norms in decoding order.
    For a singleton group this is the exact matched-beam rate.
    """
    g2 = np.asarray(norms2, dtype=float)
    d = np.asarray(deltas, dtype=float)
    L = g2.size if L is None else L
    c = c_constant(L)
    out = np.empty(g2.size)
    out[0] = math.log2(1 + d[0] * g2[0] * P / c)
    for i in range(1, g2.size):
        S = d[:i].sum()
        x = g2[i] * S * P / c
        out[i] = math.log2(1 + (d[i] / S) / (1 + 1 / x)) if x > 0 else 0.0
    return out


def zf_directions(H: np.ndarray) -> np.ndarray:
    """Unit ZF beams; a column is zero where a channel lies in the others' span."""
    N, K = H.shape
    G = np.empty_like(H)
    _kernels.effective_channels_one(np.ascontiguousarray(H), np.arange(K), G)
    n = np.linalg.norm(G, axis=0)
    h = np.linalg.norm(H, axis=0)
    ok = n > 1e-9 * h
    W = np.zeros_like(G)
    W[:, ok] = G[:, ok] / n[ok]
    return W


def zf_baseline_rates(channels: ChannelSet, P_t: float) -> np.ndarray:
    """Per-user ZF rates with equal power ``P_t / K``.

    Users whose channel lies in the span of the others get rate 0.
    """
    H = channels.H
    W = zf_directions(H)
    gain = np.abs(np.sum(H.conj() * W, axis=0)) ** 2
    return np.log2(1 + P_t / channels.K * gain)


def mrt_outage_closed_form(N: int, R_th: float, snr: float) -> float:
    """High-SNR approximation of single-user MRT outage with N antennas."""
    if snr <= 0:
        raise ValueError("snr must be positive")
    return (2 ** R_th - 1) ** N / (2 ** N * math.factorial(N) * snr ** N)


@dataclass
class BeamDesign:
    """Per-group beams, power splits and the user decoding order."""
    order: list[tuple[int, ...]]
    beams: list[np.ndarray]
    deltas: list[tuple[float, ...]]
    achieved: list[float]
    certificate_ok: list[bool]

    def per_user(self, K: int, N: int):
        """Expand to per-user arrays ``(W, delta, group, position, size)``."""
        W = np.zeros((N, K), dtype=complex)
        delta = np.zeros(K)
        group = np.zeros(K, dtype=int)
        pos = np.zeros(K, dtype=int)
        size = np.zeros(K, dtype=int)
        for j, users in enumerate(self.order):
            for i, u in enumerate(users):
                W[:, u] = self.beams[j]
                delta[u] = self.deltas[j][i]
                group[u] = j
                pos[u] = i
                size[u] = len(users)
        return W, delta, group, pos, size


@dataclass
class RateReport:
    """Per-user rates with their guaranteed floors and high-power caps."""
    achieved_rate: np.ndarray
    lower_bound: np.ndarray
    saturation_cap: np.ndarray
    design: BeamDesign = field(repr=False)


DeltaRule = Callable[[int], Sequence[float]]


def solution_deltas(R_th: float, C: float) -> DeltaRule:
    return lambda L: delta_solution(L, R_th, C) if L > 1 else (1.0,)


def design_beams(grouping: Grouping, deltas: DeltaRule,
                 rng: np.random.Generator | None = None, **beam_opts) -> BeamDesign:
    """Order each group by effective norm and fit its common beam."""
    G = grouping.effective_channels
    n2 = np.sum(np.abs(G) ** 2, axis=0)
    order, beams, dl, ach, cert = [], [], [], [], []
    for users in grouping.groups:
        users = tuple(sorted(users, key=lambda u: (-n2[u], u)))
        V = G[:, list(users)] / np.sqrt(n2[list(users)])
        w, a, ok = maxmin_beam(V, rng, **beam_opts)
        order.append(users)
        beams.append(w)
        dl.append(tuple(deltas(len(users))))
        ach.append(a)
        cert.append(ok)
    return BeamDesign(order, beams, dl, ach, cert)


def evaluate_rates(H: np.ndarray, design: BeamDesign, P_t: float) -> np.ndarray:
    """Achieved rates on the true channels ``H`` for a given design.

    Group j transmits with power ``|G_j| P_t / K`` on its beam. Residual
    leakage between groups (from imperfect CSI) is treated as noise.
    """
    N, K = H.shape
    W, delta, group, pos, size = design.per_user(K, N)
    A = np.abs(H.conj().T @ W) ** 2          # A[u, v] = |h_u^H w_v|^2
    other = group[:, None] != group[None, :]
    interf = (P_t / K) * np.sum(A * other, axis=1)
    own = A[np.arange(K), np.arange(K)]
    P = size * P_t / K
    rates = np.empty(K)
    for v in range(K):
        same = (group == group[v]) & (pos <= pos[v])
        S = sum(delta[u] for u in range(K) if group[u] == group[v] and pos[u] < pos[v])
        sinr = delta[v] * P[v] * own[same] / (S * P[v] * own[same] + interf[same] + 1.0)
        rates[v] = math.log2(1.0 + sinr.min())
    return rates


def mixture_rates(channels: ChannelSet, grouping: Grouping, P_t: float,
                  R_th: float, C: float, rng: np.random.Generator | None = None,
                  deltas: DeltaRule | None = None, **beam_opts) -> RateReport:
    """Full mixture transceiver: design on ``grouping`` and evaluate."""
    rule = deltas or solution_deltas(R_th, C)
    design = design_beams(grouping, rule, rng, **beam_opts)
    K = channels.K
    rates = evaluate_rates(channels.H, design, P_t)
    n2 = np.sum(np.abs(grouping.effective_channels) ** 2, axis=0)
    lb = np.empty(K)
    caps = np.empty(K)
    for users, d in zip(design.order, design.deltas):
        P = len(users) * P_t / K
        lb[list(users)] = prop1_lower_bounds(n2[list(users)], d, P)
        caps[list(users)] = saturation_caps(d)
    return RateReport(rates, lb, caps, design)
