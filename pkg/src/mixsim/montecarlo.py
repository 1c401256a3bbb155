"""Monte Carlo engine: outage curves, diversity slopes, rate statistics.

Trials are split into fixed-size blocks. Every block draws its channels,
CSI errors and beam randomization from its own streams keyed by
``(seed, experiment, block)``, so the results do not depend on how many
worker processes run the blocks. With a design that does not depend on
power (perfect or fixed-quality CSI), each draw is grouped and beamformed
once and then evaluated at every SNR point.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .channel import (CsiModel, InvalidConfigError, complex_normal, rng_stream,
                      sample_channel_batch)
from .grouping import GroupingConfig, group_sus
from .channel import ChannelSet
from .transceiver import delta_solution, maxmin_beam, saturation_caps

SCHEMES = ("mixture", "zf", "mrt", "single_group")
WILSON_Z = 1.959963984540054
HIST_WIDTH = 0.05
HIST_MAX = 40.0


class InsufficientPointsError(ValueError):
    """Raised when too few grid points qualify for a slope fit."""


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "custom"
    N: int = 4
    K: int = 4
    schemes: tuple[str, ...] = ("mixture",)
    grouping: GroupingConfig = GroupingConfig()
    R_th: float = 1.5
    C: float = 2.0
    # "solution" uses the closed-form split; "fixed" uses the tuples below
    delta_mode: str = "solution"
    fixed_deltas_2: tuple[float, ...] = (0.2, 0.8)
    fixed_deltas_3: tuple[float, ...] = (0.05, 0.2, 0.75)
    snr_db: tuple[float, ...] = (0.0, 10.0, 20.0)
    trials: int = 100_000
    seed: int = 1
    csi: CsiModel = CsiModel()
    beam_restarts: int = 50
    beam_iters: int = 300
    block_size: int = 20_000
    histogram: bool = False

    def __post_init__(self):
        if not 1 <= self.K <= self.N:
            raise InvalidConfigError(f"need 1 <= K <= N, got N={self.N}, K={self.K}")
        if not self.schemes or any(s not in SCHEMES for s in self.schemes):
            raise InvalidConfigError(f"schemes must be drawn from {SCHEMES}")
        if len(set(self.schemes)) != len(self.schemes):
            raise InvalidConfigError("duplicate scheme")
        if self.trials < 1:
            raise InvalidConfigError("trials must be >= 1")
        if self.block_size < 1:
            raise InvalidConfigError("block_size must be >= 1")
        grid = np.asarray(self.snr_db, dtype=float)
        if grid.size == 0 or np.any(np.diff(grid) <= 0):
            raise InvalidConfigError("snr grid must be nonempty and strictly increasing")
        if self.R_th < 0 or self.C <= 0:
            raise InvalidConfigError("need R_th >= 0 and C > 0")
        if self.delta_mode not in ("solution", "fixed"):
            raise InvalidConfigError(f"unknown delta_mode {self.delta_mode!r}")
        for d in (self.fixed_deltas_2, self.fixed_deltas_3):
            if abs(sum(d) - 1) > 1e-9 or min(d) < 0:
                raise InvalidConfigError("fixed deltas must be nonnegative and sum to 1")
        if len(self.fixed_deltas_2) != 2 or len(self.fixed_deltas_3) != 3:
            raise InvalidConfigError("fixed_deltas_2/3 need 2 and 3 entries")
        if "mixture" in self.schemes and self.grouping.method == "algorithm1" and self.K > 12:
            raise InvalidConfigError("exhaustive grouping is limited to K <= 12")

    @property
    def snr_linear(self) -> np.ndarray:
        return 10.0 ** (np.asarray(self.snr_db, dtype=float) / 10.0)

    def delta_table(self) -> np.ndarray:
        """``table[L, i]``: power share of the i-th user in a group of L."""
        T = np.zeros((self.K + 1, self.K + 1))
        T[1, 0] = 1.0
        for L in range(2, self.K + 1):
            if self.delta_mode == "fixed" and L == 2:
                d = self.fixed_deltas_2
            elif self.delta_mode == "fixed" and L == 3:
                d = self.fixed_deltas_3
            else:
                # R_th = 0 has no design target; use the limit of the rule
                d = delta_solution(L, max(self.R_th, 1e-12), self.C)
            T[L, :L] = d
        return T


def wilson_interval(k, n, z: float = WILSON_Z):
    k = np.asarray(k, dtype=float)
    n = np.asarray(n, dtype=float)
    p = k / n
    den = 1 + z * z / n
    mid = (p + z * z / (2 * n)) / den
    half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return np.clip(mid - half, 0, 1), np.clip(mid + half, 0, 1)


@dataclass
class OutageCurve:
    """Outage counts on an SNR grid.

    ``events[s, k]`` counts draws where the user of norm rank k+1 fell
    below the target; ``overall_events[s]`` counts draws where any did.
    """
    snr_db: np.ndarray
    trials: int
    events: np.ndarray
    overall_events: np.ndarray

    @property
    def outage(self) -> np.ndarray:
        return self.events / self.trials

    @property
    def overall(self) -> np.ndarray:
        return self.overall_events / self.trials

    def interval(self, user: int | None = None):
        """Wilson 95% interval; ``user`` is a 1-based rank, None for overall."""
        k = self.overall_events if user is None else self.events[:, user - 1]
        return wilson_interval(k, self.trials)

    def fitted_slope(self, user: int | None = None, **kw) -> float:
        return fit_slope(self, user, **kw)


def fit_slope(curve: OutageCurve, user: int | None = None,
              window: tuple[float, float] = (1e-5, 1e-1),
              min_events: int = 50, min_points: int = 3) -> float:
    """Least-squares slope of ``-log10 P_out`` against ``log10 P_t``.

    Only points with the estimate inside ``window`` and at least
    ``min_events`` outages are used.
    """
    k = curve.overall_events if user is None else curve.events[:, user - 1]
    k = np.asarray(k)
    p = k / curve.trials
    ok = (p >= window[0]) & (p <= window[1]) & (k >= min_events)
    if ok.sum() < min_points:
        raise InsufficientPointsError(
            f"only {int(ok.sum())} grid points qualify for the slope fit")
    x = np.asarray(curve.snr_db, dtype=float)[ok] / 10.0
    y = -np.log10(p[ok])
    return float(np.polyfit(x, y, 1)[0])


@dataclass
class RateHistogram:
    edges: np.ndarray
    counts: dict[str, np.ndarray]
    below_rth: dict[str, float]
    near_cap: dict[str, float]
    cap: float


@dataclass
class SumRateCurve:
    snr_db: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray


@dataclass
class SimResult:
    config: ExperimentConfig
    outage: dict[str, OutageCurve]
    sum_rate: dict[str, SumRateCurve]
    histograms: dict[str, np.ndarray] = field(default_factory=dict)
    near_cap: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def hist_edges(self) -> np.ndarray:
        return np.arange(0.0, HIST_MAX + HIST_WIDTH / 2, HIST_WIDTH)


# ---------------------------------------------------------------------------
# block engine


@dataclass
class _Design:
    W: np.ndarray       # (n, N, K) beam serving each user
    delta: np.ndarray   # (n, K)
    group: np.ndarray   # (n, K)
    pos: np.ndarray     # (n, K) decoding position inside the group
    size: np.ndarray    # (n, K) size of the user's group


def _groups_to_labels(groups, K):
    lab = np.empty(K, dtype=np.int64)
    for j, g in enumerate(groups):
        lab[list(g)] = j
    return lab


def _finish_design(cfg, Gb, labels, beam_rng) -> _Design:
    n, N, K = Gb.shape
    W = np.zeros((n, N, K), dtype=complex)
    pos = np.zeros((n, K), dtype=np.int64)
    size = np.zeros((n, K), dtype=np.int64)
    pending = np.zeros((n, K), dtype=np.bool_)
    _kernels.order_and_small_beams(Gb, labels, W, pos, size, pending)
    for b in np.flatnonzero(pending.any(axis=1)):
        for j in np.unique(labels[b][pending[b]]):
            users = np.flatnonzero(labels[b] == j)
            users = users[np.argsort(pos[b, users])]
            V = Gb[b][:, users]
            V = V / np.linalg.norm(V, axis=0)
            w, _, _ = maxmin_beam(V, beam_rng, cfg.beam_restarts, cfg.beam_iters)
            W[b][:, users] = w[:, None]
    delta = cfg.delta_table()[size, pos]
    return _Design(W, delta, labels, pos, size)


def _design(cfg: ExperimentConfig, scheme: str, Hhat: np.ndarray, beam_rng) -> _Design:
    n, N, K = Hhat.shape
    if scheme == "mixture":
        labels = np.empty((n, K), dtype=np.int64)
        Gb = np.empty_like(Hhat)
        if cfg.grouping.method == "algorithm1":
            ng = np.empty(n, dtype=np.int64)
            _kernels.algorithm1_batch(Hhat, cfg.grouping.theta_th, labels, ng, Gb)
        else:
            for b in range(n):
                gr = group_sus(ChannelSet(Hhat[b]), cfg.grouping.theta_tau1,
                               cfg.grouping.theta_tau2)
                labels[b] = _groups_to_labels(gr.groups, K)
                Gb[b] = gr.effective_channels
        return _finish_design(cfg, Gb, labels, beam_rng)
    if scheme == "single_group":
        labels = np.zeros((n, K), dtype=np.int64)
        return _finish_design(cfg, Hhat.copy(), labels, beam_rng)
    labels = np.broadcast_to(np.arange(K), (n, K)).copy()
    if scheme == "zf":
        Gb = np.empty_like(Hhat)
        _kernels.zf_batch(Hhat, Gb)
        # a channel inside the span of the others cannot be served
        g = np.linalg.norm(Gb, axis=1)
        h = np.linalg.norm(Hhat, axis=1)
        Gb[np.broadcast_to((g <= 1e-9 * h)[:, None, :], Gb.shape)] = 0
    else:
        Gb = Hhat
    nrm = np.linalg.norm(Gb, axis=1, keepdims=True)
    W = np.divide(Gb, nrm, out=np.zeros_like(Gb), where=nrm > 0)
    ones = np.ones((n, K), dtype=np.int64)
    return _Design(W, np.ones((n, K)), labels, 0 * ones, ones)


def _rates(H: np.ndarray, d: _Design, P_t: float) -> np.ndarray:
    """Achieved rates ``(n, K)`` on true channels for one power level."""
    n, N, K = H.shape
    A = np.abs(np.einsum("bnu,bnv->buv", H.conj(), d.W)) ** 2
    same = d.group[:, :, None] == d.group[:, None, :]
    interf = (P_t / K) * np.sum(A * ~same, axis=2)
    own = np.einsum("buu->bu", A)
    P = d.size * (P_t / K)
    before = same & (d.pos[:, :, None] < d.pos[:, None, :])      # [b, m, v]
    S = np.einsum("bm,bmv->bv", d.delta, before.astype(float))
    # decoder u must resolve target v when u is in v's group and not after it
    dec = same & (d.pos[:, :, None] <= d.pos[:, None, :])        # [b, u, v]
    num = d.delta[:, None, :] * P[:, None, :] * own[:, :, None]
    den = S[:, None, :] * P[:, None, :] * own[:, :, None] + interf[:, :, None] + 1.0
    sinr = np.where(dec, num / den, np.inf).min(axis=1)
    return np.log2(1.0 + sinr)


def _run_block(cfg: ExperimentConfig, block: int) -> dict:
    start = block * cfg.block_size
    n = min(cfg.block_size, cfg.trials - start)
    N, K = cfg.N, cfg.K
    H = sample_channel_batch(N, K, n, rng_stream(cfg.seed, cfg.name, block, 0))
    # unit-variance error shape shared by every SNR point and CSI mode
    E0 = complex_normal(rng_stream(cfg.seed, cfg.name, block, 1), (n, N, K), 1.0)
    ranks = np.argsort(np.argsort(-np.sum(np.abs(H) ** 2, axis=1), axis=1,
                                  kind="stable"), axis=1)
    S = len(cfg.snr_db)
    ns = len(cfg.schemes)
    out = {
        "events": np.zeros((S, ns, K), dtype=np.int64),
        "overall": np.zeros((S, ns), dtype=np.int64),
        "sum": np.zeros((S, ns)),
        "sumsq": np.zeros((S, ns)),
    }
    if cfg.histogram:
        out["hist"] = np.zeros((S, ns, int(round(HIST_MAX / HIST_WIDTH))), dtype=np.int64)
        out["near"] = np.zeros((S, ns), dtype=np.int64)
        caps = saturation_caps(cfg.delta_table()[cfg.K, :cfg.K]) if cfg.K > 1 else (math.inf,)
        cap = caps[-1]
    snrs = cfg.snr_linear
    for si, scheme in enumerate(cfg.schemes):
        beam_rng = rng_stream(cfg.seed, cfg.name, block, 2, si)
        fixed = cfg.csi.mode != "power_scaled"
        design = None
        for s, P_t in enumerate(snrs):
            if design is None or not fixed:
                var = cfg.csi.variance(P_t)
                Hhat = H + math.sqrt(var) * E0 if var > 0 else H
                design = _design(cfg, scheme, Hhat, beam_rng)
            R = _rates(H, design, P_t)
            bad = R < cfg.R_th
            out["events"][s, si] = np.bincount(ranks[bad], minlength=K)
            out["overall"][s, si] = int(bad.any(axis=1).sum())
            tot = R.sum(axis=1)
            out["sum"][s, si] = tot.sum()
            out["sumsq"][s, si] = (tot * tot).sum()
            if cfg.histogram:
                idx = np.minimum((R / HIST_WIDTH).astype(np.int64),
                                 out["hist"].shape[2] - 1)
                out["hist"][s, si] = np.bincount(idx.ravel(),
                                                 minlength=out["hist"].shape[2])
                if math.isfinite(cap):
                    out["near"][s, si] = int(((R >= cap - 0.1) & (R <= cap)).sum())
    return out


def _block_worker(args):
    cfg, block = args
    return _run_block(cfg, block)


def default_workers() -> int:
    env = os.environ.get("MIXSIM_WORKERS")
    return max(1, int(env)) if env else 1


def simulate(cfg: ExperimentConfig, workers: int | None = None) -> SimResult:
    """Run every configured scheme on common channel draws."""
    workers = default_workers() if workers is None else max(1, int(workers))
    nblocks = -(-cfg.trials // cfg.block_size)
    jobs = [(cfg, b) for b in range(nblocks)]
    if workers == 1 or nblocks == 1:
        parts = map(_block_worker, jobs)
    else:
        pool = ProcessPoolExecutor(max_workers=min(workers, nblocks))
        parts = pool.map(_block_worker, jobs)
    acc = None
    try:
        # reduction in block order keeps float sums reproducible
        for part in parts:
            if acc is None:
                acc = {k: v.copy() for k, v in part.items()}
            else:
                for k, v in part.items():
                    acc[k] += v
    finally:
        if workers > 1 and nblocks > 1:
            pool.shutdown()
    grid = np.asarray(cfg.snr_db, dtype=float)
    T = cfg.trials
    outage, sums, hists, near = {}, {}, {}, {}
    for si, scheme in enumerate(cfg.schemes):
        outage[scheme] = OutageCurve(grid, T, acc["events"][:, si, :],
                                     acc["overall"][:, si])
        mean = acc["sum"][:, si] / T
        var = np.maximum(acc["sumsq"][:, si] / T - mean ** 2, 0.0)
        sums[scheme] = SumRateCurve(grid, mean, np.sqrt(var / T))
        if cfg.histogram:
            hists[scheme] = acc["hist"][:, si, :]
            near[scheme] = acc["near"][:, si]
    return SimResult(cfg, outage, sums, hists, near)


def estimate_outage(cfg: ExperimentConfig, scheme: str | None = None,
                    workers: int | None = None) -> OutageCurve:
    """Outage curve of one scheme (the first configured by default)."""
    scheme = scheme or cfg.schemes[0]
    if scheme not in cfg.schemes:
        cfg = replace(cfg, schemes=(scheme,))
    return simulate(cfg, workers).outage[scheme]


def avg_sum_rate(cfg: ExperimentConfig, workers: int | None = None) -> dict[str, SumRateCurve]:
    return simulate(cfg, workers).sum_rate


def rate_histogram(cfg: ExperimentConfig, snr_db: float,
                   workers: int | None = None) -> RateHistogram:
    """Pooled per-user rate histogram at a single SNR point.

    Also reports the fraction of rates below the target and within 0.1
    bit under the saturation cap of the last user of a full group.
    """
    cfg = replace(cfg, snr_db=(float(snr_db),), histogram=True)
    res = simulate(cfg, workers)
    T = cfg.trials * cfg.K
    counts = {s: res.histograms[s][0] for s in cfg.schemes}
    below = {s: res.outage[s].events[0].sum() / T for s in cfg.schemes}
    near = {s: res.near_cap[s][0] / T for s in cfg.schemes}
    cap = saturation_caps(cfg.delta_table()[cfg.K, :cfg.K])[-1] if cfg.K > 1 else math.inf
    return RateHistogram(res.hist_edges, counts, below, near, cap)


def csi_floor_study(cfg: ExperimentConfig, sigma_e2: float = 0.1,
                    workers: int | None = None) -> dict[str, OutageCurve]:
    """Outage under fixed and power-scaled CSI error on common draws."""
    scheme = cfg.schemes[0]
    fixed = replace(cfg, schemes=(scheme,), csi=CsiModel("fixed", sigma_e2))
    scaled = replace(cfg, schemes=(scheme,), csi=CsiModel("power_scaled"))
    return {"fixed": estimate_outage(fixed, scheme, workers),
            "power_scaled": estimate_outage(scaled, scheme, workers)}
