"""Hierarchical outer partition of the series and its MH moves.

A series is reassigned by scoring how well its data fit each group's current
regime sequence (as if it were that group's only member), plus a fresh
singleton option whose sequence is forward-sampled from the lag-reweighted
prior.  The acceptance ratio combines full-group loglik ratios for the two
touched groups with the inverse proposal ratio; drawing the fresh sequence
from a tractable prior is what keeps the dimension-changing cases free of
reversible-jump machinery.

The empty-member loglik terms of the ratio are the *density the fresh or
reused sequence was proposed from* (the no-emission partial loglik), which
makes the ratio exact for this proposal; this is validated against log-joint
differencing in the tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .model import (
    ChainState,
    GroupModel,
    forward_sample_sequence,
    group_sequence_loglik,
    sequence_loglik,
)
from .util import gumbel_argmax, logsumexp

__all__ = [
    "OuterPartition",
    "outer_partition",
    "partial_loglik",
    "group_loglik_cached",
    "ClusterProposal",
    "propose_c",
    "accept_c",
    "sweep_c",
]

FRESH = 0  # proposal target meaning "new singleton group"


@dataclass(frozen=True)
class OuterPartition:
    """Snapshot of the series partition: labels 1..M, nonempty disjoint groups."""

    assignments: tuple[int, ...]
    alpha0: float
    members: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        num = len(self.assignments)
        labels = set(self.assignments)
        if labels != set(range(1, len(self.members) + 1)):
            raise ValueError(f"labels not contiguous: {self.assignments}")
        seen = set()
        for m, group in enumerate(self.members, start=1):
            if not group:
                raise ValueError(f"group {m} empty")
            for n in group:
                if self.assignments[n] != m or n in seen:
                    raise ValueError("membership inconsistent with assignments")
                seen.add(n)
        if seen != set(range(num)):
            raise ValueError("groups do not partition the series")


def outer_partition(state: ChainState) -> OuterPartition:
    return OuterPartition(
        assignments=tuple(state.assignments),
        alpha0=state.alpha0,
        members=tuple(tuple(g.members) for g in state.groups),
    )


def partial_loglik(state: ChainState, z, alpha, series, include_emission=True, detail=False):
    """Group term of the log joint for sequence ``z`` scored against ``series``.

    With an empty subset this is the CRP log mass of the sequence itself (the
    cohesion product is empty, so the reweighted prior self-normalizes to the
    plain CRP).
    """
    return sequence_loglik(
        z,
        list(series),
        alpha,
        state.hyper_map,
        state.values,
        state.observed,
        state.panel.num_steps,
        state.panel.window,
        include_emission=include_emission,
        detail=detail,
    )


def group_loglik_cached(state: ChainState, group: GroupModel) -> float:
    """Full-group sequential loglik, cached until the group or hypers change."""
    value = state.loglik_cache.get(group)
    if value is None:
        value = group_sequence_loglik(group, state.values, state.observed)
        state.loglik_cache[group] = value
    return value


@dataclass
class ClusterProposal:
    series: int
    current: int
    target: int  # group label or FRESH
    # singleton slot: sequence, concentration, and its proposal log density
    slot_z: list[int]
    slot_alpha: float
    slot_log_density: float
    slot_loglik: float  # loglik of the moved series against the slot sequence
    member_logliks: dict[int, float]  # label -> loglik of series against that group
    log_weights: list[float]
    targets: list[int]


def propose_c(state: ChainState, n: int, rng) -> ClusterProposal:
    """Score every destination for series n and draw one.

    Existing groups weigh as (member count without n) times the fit of n's
    data to their sequence; the singleton slot weighs as alpha0 times the fit
    to a fresh sequence, forward-sampled from the lag-reweighted prior with a
    Gamma(1,1) concentration (or the series' own sequence when it already
    sits alone, in which case choosing the slot is a no-op).
    """
    current = state.assignments[n]
    cur_group = state.group_of(n)
    is_singleton = len(cur_group.members) == 1

    targets = []
    weights = []
    member_logliks = {}
    for m, group in enumerate(state.groups, start=1):
        others = len(group.members) - (1 if m == current else 0)
        if others == 0:
            continue
        fit = partial_loglik(state, group.regimes.z, group.alpha, [n])
        member_logliks[m] = fit
        targets.append(m)
        weights.append(math.log(others) + fit)

    if is_singleton:
        slot_z = list(cur_group.regimes.z)
        slot_alpha = cur_group.alpha
        slot_log_density = partial_loglik(state, slot_z, slot_alpha, [n], include_emission=False)
        slot_loglik = group_loglik_cached(state, cur_group)
    else:
        slot_alpha = float(rng.gamma(1.0, 1.0))
        slot_z, slot_log_density = forward_sample_sequence(
            [n],
            slot_alpha,
            state.hyper_map,
            state.values,
            state.observed,
            state.panel.num_steps,
            state.panel.window,
            rng,
        )
        slot_loglik = partial_loglik(state, slot_z, slot_alpha, [n])
    targets.append(FRESH)
    weights.append(math.log(state.alpha0) + slot_loglik)

    choice = gumbel_argmax(weights, rng)
    return ClusterProposal(
        series=n,
        current=current,
        target=targets[choice],
        slot_z=slot_z,
        slot_alpha=slot_alpha,
        slot_log_density=slot_log_density,
        slot_loglik=slot_loglik,
        member_logliks=member_logliks,
        log_weights=weights,
        targets=targets,
    )


def cluster_log_ratio(state: ChainState, proposal: ClusterProposal) -> float:
    """Exact MH log ratio for the proposed move (0 for no-ops)."""
    n = proposal.series
    current = proposal.current
    target = proposal.target
    cur_group = state.groups[current - 1]
    is_singleton = len(cur_group.members) == 1
    if target == current or (target == FRESH and is_singleton):
        return 0.0

    if target == FRESH:
        tgt_with = proposal.slot_loglik
        tgt_without = proposal.slot_log_density
        tgt_fit = proposal.slot_loglik
    else:
        tgt_group = state.groups[target - 1]
        tgt_without = group_loglik_cached(state, tgt_group)
        tgt_with = partial_loglik(
            state, tgt_group.regimes.z, tgt_group.alpha, tgt_group.members + [n]
        )
        tgt_fit = proposal.member_logliks[target]

    cur_with = group_loglik_cached(state, cur_group)
    if is_singleton:
        cur_without = proposal.slot_log_density
        cur_fit = cur_with
    else:
        remaining = [m for m in cur_group.members if m != n]
        cur_without = partial_loglik(state, cur_group.regimes.z, cur_group.alpha, remaining)
        cur_fit = proposal.member_logliks[current]

    return (tgt_with + cur_without) - (tgt_without + cur_with) + (cur_fit - tgt_fit)


def accept_c(state: ChainState, proposal: ClusterProposal, rng, heuristic=False):
    """Accept/reject the proposal and apply it; returns (accepted, moved, log_r)."""
    n = proposal.series
    current = proposal.current
    target = proposal.target
    cur_group = state.groups[current - 1]
    is_singleton = len(cur_group.members) == 1
    if target == current or (target == FRESH and is_singleton):
        return True, False, 0.0
    log_r = 0.0
    if not heuristic:
        log_r = cluster_log_ratio(state, proposal)
        if log_r < 0 and math.log(rng.random()) >= log_r:
            return False, False, log_r
    _apply_move(state, proposal)
    return True, True, log_r


def _apply_move(state: ChainState, proposal: ClusterProposal) -> None:
    n = proposal.series
    current = proposal.current
    target = proposal.target
    cur_group = state.groups[current - 1]
    state.loglik_cache.pop(cur_group, None)

    removed = len(cur_group.members) == 1
    if removed:
        state.groups.pop(current - 1)
        for j, label in enumerate(state.assignments):
            if label > current:
                state.assignments[j] = label - 1
        if target != FRESH and target > current:
            target -= 1
    else:
        cur_group.drop_member(n)

    if target == FRESH:
        fresh = GroupModel(
            [],
            proposal.slot_alpha,
            state.panel.num_steps,
            state.panel.window,
            state.hyper_map,
        )
        for _ in range(max(proposal.slot_z)):
            fresh.add_regime()
        for t, k in enumerate(proposal.slot_z, start=1):
            fresh.regimes.z[t - 1] = k
            fresh.regimes.counts[k - 1] += 1
        fresh.add_member(n, state.values, state.observed)
        state.groups.append(fresh)
        state.assignments[n] = len(state.groups)
    else:
        tgt_group = state.groups[target - 1]
        state.loglik_cache.pop(tgt_group, None)
        tgt_group.add_member(n, state.values, state.observed)
        state.assignments[n] = target


def sweep_c(state: ChainState, rng, heuristic=False) -> dict:
    """One reassignment pass over every series."""
    stats = {"series": 0, "accepted": 0, "moved": 0}
    for n in range(state.num_series):
        proposal = propose_c(state, n, rng)
        accepted, moved, _ = accept_c(state, proposal, rng, heuristic=heuristic)
        stats["series"] += 1
        stats["accepted"] += accepted
        stats["moved"] += moved
    return stats
