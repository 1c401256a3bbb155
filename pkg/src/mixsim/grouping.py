"""Channel-adaptive user grouping.

Two partitioners are provided: the exhaustive threshold search, which
guarantees a floor on the effective-channel norms, and a scalable variant
built on semi-orthogonal user selection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .channel import ChannelSet, InvalidConfigError
from .subspace import span_basis, theta

# exhaustive search is exponential in K; beyond this use group_sus
MAX_EXHAUSTIVE_K = 12


@dataclass(frozen=True)
class GroupingConfig:
    method: str = "algorithm1"
    theta_th: float = 0.9
    theta_tau1: float = 0.25
    theta_tau2: float = 0.55

    def __post_init__(self):
        if self.method == "algorithm1":
            if not 0 < self.theta_th < 1:
                raise InvalidConfigError("theta_th must lie in (0, 1)")
        elif self.method == "sus":
            t1, t2 = self.theta_tau1, self.theta_tau2
            if not (0 < t1 < math.pi / 2 and 0 < t2 < math.pi / 2):
                raise InvalidConfigError("SUS thresholds must lie in (0, pi/2)")
            if not t2 < math.pi / 2 - t1:
                raise InvalidConfigError(
                    "need theta_tau2 < pi/2 - theta_tau1")
        else:
            raise InvalidConfigError(f"unknown grouping method {self.method!r}")


@dataclass
class Grouping:
    """Partition of users with per-group ZF projectors.

    ``effective_channels[:, u]`` is user u's channel projected onto the
    orthogonal complement of every other group's channels, and
    ``zf_projectors[j]`` is that projector for group j.
    """
    groups: list[tuple[int, ...]]
    effective_channels: np.ndarray
    zf_projectors: list[np.ndarray] = field(repr=False)
    reduction_floor: float = 1.0
    # users picked in the selection phase of group_sus, in pick order
    seeds: tuple[int, ...] = ()

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    def labels(self) -> np.ndarray:
        K = sum(len(g) for g in self.groups)
        out = np.empty(K, dtype=int)
        for j, g in enumerate(self.groups):
            out[list(g)] = j
        return out

    def check_partition(self, K: int) -> None:
        seen = sorted(u for g in self.groups for u in g)
        if seen != list(range(K)) or any(len(g) == 0 for g in self.groups):
            raise AssertionError(f"not a partition of {K} users: {self.groups}")


def effective_channels(H: np.ndarray, groups) -> tuple[np.ndarray, list[np.ndarray]]:
    """Project every channel off the span of all other groups' channels."""
    N, K = H.shape
    G = np.empty_like(H)
    projectors = []
    for g in groups:
        others = [u for u in range(K) if u not in g]
        Q = span_basis(H[:, others]) if others else H[:, :0]
        P = np.eye(N, dtype=complex) - Q @ Q.conj().T
        projectors.append(P)
        G[:, list(g)] = H[:, list(g)] - Q @ (Q.conj().T @ H[:, list(g)])
    return G, projectors


def _build(channels: ChannelSet, groups, floor: float) -> Grouping:
    groups = [tuple(sorted(g)) for g in groups]
    G, projectors = effective_channels(channels.H, groups)
    return Grouping(groups, G, projectors, floor)


def group_algorithm1(channels: ChannelSet, theta_th: float) -> Grouping:
    """Exhaustive threshold grouping.

    Subsets of the remaining users are tried in increasing size and, within
    a size, in lexicographic order. The first subset whose projected
    channels are within ``theta_th`` of the rest becomes a group, and the
    rest are projected off it. The search size is not reset after a hit.
    """
    if not 0 < theta_th < 1:
        raise InvalidConfigError("theta_th must lie in (0, 1)")
    K = channels.K
    if K > MAX_EXHAUSTIVE_K:
        raise InvalidConfigError(
            f"exhaustive grouping is limited to K <= {MAX_EXHAUSTIVE_K}; "
            "use group_sus for larger systems")
    F = channels.H.copy()
    remaining = list(range(K))
    groups = []
    ng = 1
    while ng <= K and remaining:
        for sub in combinations(remaining, ng):
            rest = [u for u in remaining if u not in sub]
            if theta(F[:, rest], F[:, list(sub)]) <= theta_th:
                groups.append(sub)
                if rest:
                    Q = span_basis(F[:, list(sub)])
                    F[:, rest] -= Q @ (Q.conj().T @ F[:, rest])
                remaining = rest
                break
        else:
            ng += 1
    if remaining:
        # unreachable: the whole remainder always passes against an empty rest
        groups.append(tuple(remaining))
    floor = (1.0 - theta_th) ** (len(groups) - 1)
    return _build(channels, groups, floor)


def _abs_corr(H: np.ndarray) -> np.ndarray:
    nrm = np.linalg.norm(H, axis=0)
    C = np.abs(H.conj().T @ H) / np.outer(nrm, nrm)
    return np.minimum(C, 1.0)


def group_sus(channels: ChannelSet, theta_tau1: float, theta_tau2: float) -> Grouping:
    """Scalable grouping from semi-orthogonal user selection.

    Seeds are picked greedily by norm from the intersection of hyperslabs
    ``|h_s^H h| / (||h_s|| ||h||) <= cos(pi/2 - theta_tau1)``. Each leftover
    user then joins the group of its closest member in angle, and groups
    with any member closer than ``theta_tau2`` to the newcomer are merged.
    Angles are taken between original channels.
    """
    GroupingConfig("sus", theta_tau1=theta_tau1, theta_tau2=theta_tau2)
    H = channels.H
    K = channels.K
    gamma = math.cos(math.pi / 2 - theta_tau1)
    corr = _abs_corr(H)
    angle = np.arccos(corr)
    norms = channels.norms2

    candidates = list(range(K))
    seeds = []
    while candidates and len(seeds) < K:
        s = max(candidates, key=lambda u: (norms[u], -u))
        seeds.append(s)
        candidates = [u for u in candidates if u != s and corr[s, u] <= gamma]
    groups = [[s] for s in seeds]
    for u in sorted(set(range(K)) - set(seeds), key=lambda u: (-norms[u], u)):
        members = [m for g in groups for m in g]
        closest = min(members, key=lambda m: (angle[u, m], m))
        home = next(g for g in groups if closest in g)
        home.append(u)
        merged = [g for g in groups
                  if g is not home and min(angle[u, m] for m in g) < theta_tau2]
        for g in merged:
            home.extend(g)
        groups = [g for g in groups if not any(g is m for m in merged)]
    out = _build(channels, groups, 1.0)
    out.seeds = tuple(seeds)
    return out


def group_users(channels: ChannelSet, config: GroupingConfig) -> Grouping:
    if config.method == "algorithm1":
        return group_algorithm1(channels, config.theta_th)
    return group_sus(channels, config.theta_tau1, config.theta_tau2)


@dataclass
class NormFloorReport:
    floor: float
    ratios: np.ndarray
    violations: list[int]

    @property
    def ok(self) -> bool:
        return not self.violations


def verify_norm_floor(grouping: Grouping, channels: ChannelSet,
                      slack: float = 1e-9) -> NormFloorReport:
    """Check ``||g||^2 >= floor * ||h||^2`` for every user."""
    g2 = np.sum(np.abs(grouping.effective_channels) ** 2, axis=0)
    h2 = channels.norms2
    ratios = g2 / h2
    bad = np.flatnonzero(ratios < grouping.reduction_floor * (1 - slack))
    return NormFloorReport(grouping.reduction_floor, ratios, bad.tolist())
