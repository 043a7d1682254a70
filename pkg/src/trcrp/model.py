"""The joint model: reweighted CRP regime weights, temporal-coupling normalizers,
full-model log joint, and forward simulation.

A chain's latent configuration is a :class:`ChainState`: an outer partition of
the series into groups, and per group a :class:`GroupModel` holding the shared
regime sequence plus incremental sufficient statistics for every
(series, regime, emission-or-lag) cell.  Emission parameters are collapsed
throughout; all per-cell densities are Student-T posterior predictives.

Two stat disciplines coexist.  Persistent groups inside a chain hold *full*
statistics (all assigned times), which is what the single-site sampler's full
conditionals need.  Sequential quantities (the per-step normalizer, the
one-step predictive, the log joint) are evaluated by replaying assignments
into a scratch group so that the term at time t sees only data before t.
Sequential sums are computed over the blocks occupied so far plus one fresh
block, which makes every quantity invariant to regime relabeling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .conjugate import (
    NigHyper,
    NigStats,
    posterior_predictive,
    predictive_logpdf_raw,
)
from .panel import TimeSeriesPanel
from .util import NEG_INF, crp_partition_log_mass, gumbel_argmax, log_gamma11_pdf, logsumexp

__all__ = [
    "SeriesHypers",
    "RegimeSeq",
    "GroupModel",
    "ChainState",
    "crp_log_weights",
    "sequence_loglik",
    "group_sequence_loglik",
    "forward_sample_sequence",
    "log_joint",
    "simulate",
    "SimulationResult",
    "state_payload",
    "state_from_payload",
]

REBUILD_OPS_THRESHOLD = 10_000


@dataclass(frozen=True)
class SeriesHypers:
    """Per-series hyperparameters: one emission cell, one cell per lag offset."""

    emission: NigHyper
    cohesion: tuple[NigHyper, ...]

    def replace_emission(self, hyper: NigHyper) -> "SeriesHypers":
        return SeriesHypers(hyper, self.cohesion)

    def replace_cohesion(self, offset: int, hyper: NigHyper) -> "SeriesHypers":
        lags = list(self.cohesion)
        lags[offset - 1] = hyper
        return SeriesHypers(self.emission, tuple(lags))


class RegimeSeq:
    """Assignment of each modeled time step to a regime label (0 = unassigned).

    Labels stay contiguous 1..K; the owning group compacts labels when a
    regime empties.
    """

    __slots__ = ("z", "counts")

    def __init__(self, num_steps: int):
        self.z = [0] * num_steps
        self.counts: list[int] = []

    @property
    def num_regimes(self) -> int:
        return len(self.counts)

    def assigned(self) -> int:
        return sum(self.counts)

    def check(self) -> None:
        seen = [0] * len(self.counts)
        for label in self.z:
            if label:
                seen[label - 1] += 1
        if seen != self.counts:
            raise AssertionError(f"regime counts {self.counts} != recount {seen}")
        if any(c == 0 for c in self.counts):
            raise AssertionError("empty regime not compacted")


def crp_log_weights(counts, alpha: float) -> list[float]:
    """Unnormalized sequential CRP log weights: occupied blocks then a fresh one."""
    weights = [math.log(c) for c in counts]
    weights.append(math.log(alpha))
    return weights


class GroupModel:
    """One group: member series, CRP concentration, regime sequence, all stat cells.

    ``emission[n][k-1]`` summarizes series n's observed values in regime k;
    ``cohesion[n][k-1][i-1]`` summarizes the lag-i values (the value i steps
    before each time assigned to k), restricted to observed lag cells.
    """

    __slots__ = (
        "members",
        "alpha",
        "num_steps",
        "window",
        "hypers",
        "regimes",
        "emission",
        "cohesion",
    )

    def __init__(self, members, alpha: float, num_steps: int, window: int, hypers):
        self.members = list(members)
        self.alpha = float(alpha)
        self.num_steps = num_steps
        self.window = window
        self.hypers = hypers  # mapping: series index -> SeriesHypers
        self.regimes = RegimeSeq(num_steps)
        self.emission = {n: [] for n in self.members}
        self.cohesion = {n: [] for n in self.members}

    # -- structural edits ---------------------------------------------------

    def add_regime(self) -> int:
        self.regimes.counts.append(0)
        for n in self.members:
            self.emission[n].append(NigStats())
            self.cohesion[n].append([NigStats() for _ in range(self.window)])
        return self.regimes.num_regimes

    def _drop_regime(self, k: int) -> None:
        del self.regimes.counts[k - 1]
        for n in self.members:
            del self.emission[n][k - 1]
            del self.cohesion[n][k - 1]
        z = self.regimes.z
        for t in range(self.num_steps):
            if z[t] > k:
                z[t] -= 1

    def add_member(self, n: int, values, observed) -> None:
        """Bring series n into the group, replaying its data against current z."""
        self.members.append(n)
        self.emission[n] = [NigStats() for _ in range(self.regimes.num_regimes)]
        self.cohesion[n] = [
            [NigStats() for _ in range(self.window)] for _ in range(self.regimes.num_regimes)
        ]
        p = self.window
        vrow = values[n]
        orow = observed[n]
        for t in range(1, self.num_steps + 1):
            k = self.regimes.z[t - 1]
            if k == 0:
                continue
            col = p + t - 1
            if orow[col]:
                self.emission[n][k - 1].incorporate(float(vrow[col]))
            coh = self.cohesion[n][k - 1]
            for i in range(1, p + 1):
                if orow[col - i]:
                    coh[i - 1].incorporate(float(vrow[col - i]))

    def drop_member(self, n: int) -> None:
        self.members.remove(n)
        del self.emission[n]
        del self.cohesion[n]

    # -- incremental assignment ---------------------------------------------

    def assign(self, t: int, k: int, values, observed) -> None:
        """Assign time t to regime k (1..K) and fold its data into the stats."""
        p = self.window
        col = p + t - 1
        self.regimes.z[t - 1] = k
        self.regimes.counts[k - 1] += 1
        for n in self.members:
            vrow = values[n]
            orow = observed[n]
            if orow[col]:
                self.emission[n][k - 1].incorporate(float(vrow[col]))
            coh = self.cohesion[n][k - 1]
            for i in range(1, p + 1):
                if orow[col - i]:
                    coh[i - 1].incorporate(float(vrow[col - i]))

    def unassign(self, t: int, values, observed) -> tuple[int, bool]:
        """Remove time t's contributions; returns (old label, regime removed?)."""
        k = self.regimes.z[t - 1]
        if k == 0:
            raise ValueError(f"time {t} not assigned")
        p = self.window
        col = p + t - 1
        self.regimes.z[t - 1] = 0
        self.regimes.counts[k - 1] -= 1
        for n in self.members:
            vrow = values[n]
            orow = observed[n]
            if orow[col]:
                self.emission[n][k - 1].unincorporate(float(vrow[col]))
            coh = self.cohesion[n][k - 1]
            for i in range(1, p + 1):
                if orow[col - i]:
                    coh[i - 1].unincorporate(float(vrow[col - i]))
        removed = self.regimes.counts[k - 1] == 0
        if removed:
            self._drop_regime(k)
        return k, removed

    # -- weights ------------------------------------------------------------

    def cohesion_logweight(self, n: int, k: int, t: int, values, observed) -> float:
        """Lag-matching weight of regime k for series n's window before t.

        Only observed lag cells contribute; ``k = 0`` evaluates the prior
        (empty-stats) predictive for a fresh regime.
        """
        p = self.window
        if p == 0:
            return 0.0
        col = self.window + t - 1
        vrow = values[n]
        orow = observed[n]
        hypers = self.hypers[n].cohesion
        stats = self.cohesion[n][k - 1] if k else None
        total = 0.0
        for i in range(1, p + 1):
            if orow[col - i]:
                h = hypers[i - 1]
                if stats is None:
                    total += predictive_logpdf_raw(
                        h.m, h.V, h.a, h.b, 0, 0.0, 0.0, float(vrow[col - i])
                    )
                else:
                    s = stats[i - 1]
                    total += predictive_logpdf_raw(
                        h.m, h.V, h.a, h.b, s.count, s.sum, s.sum_sq, float(vrow[col - i])
                    )
        return total

    def regime_log_weights_split(self, t: int, values, observed, emission_observed=None):
        """Per-regime (base, emission) log-weight pairs at time t, fresh block last.

        ``base`` is CRP count/concentration plus cohesion; ``emission`` holds
        the observed-cell emission predictives (zero where the cell at t is
        unobserved).  ``emission_observed`` lets particle filters use their
        filled lag history while scoring only truly observed cells.
        """
        if emission_observed is None:
            emission_observed = observed
        p = self.window
        col = p + t - 1
        counts = self.regimes.counts
        num_regimes = len(counts)
        # hoist per-member queries out of the regime loop
        queries = []  # (n, emission hyper, x_t or None, [(offset idx, lag hyper, lag value)...])
        for n in self.members:
            vrow = values[n]
            orow = observed[n]
            sh = self.hypers[n]
            x_t = float(vrow[col]) if emission_observed[n][col] else None
            lags = []
            for i in range(1, p + 1):
                if orow[col - i]:
                    lags.append((i - 1, sh.cohesion[i - 1], float(vrow[col - i])))
            queries.append((n, sh.emission, x_t, lags))
        base = []
        emis = []
        for k in range(num_regimes):
            w = math.log(counts[k])
            e = 0.0
            for n, eh, x_t, lags in queries:
                coh_row = self.cohesion[n][k]
                for idx, h, v in lags:
                    s = coh_row[idx]
                    w += predictive_logpdf_raw(
                        h.m, h.V, h.a, h.b, s.count, s.sum, s.sum_sq, v
                    )
                if x_t is not None:
                    s = self.emission[n][k]
                    e += predictive_logpdf_raw(
                        eh.m, eh.V, eh.a, eh.b, s.count, s.sum, s.sum_sq, x_t
                    )
            base.append(w)
            emis.append(e)
        w = math.log(self.alpha)
        e = 0.0
        for n, eh, x_t, lags in queries:
            for idx, h, v in lags:
                w += predictive_logpdf_raw(h.m, h.V, h.a, h.b, 0, 0.0, 0.0, v)
            if x_t is not None:
                e += predictive_logpdf_raw(eh.m, eh.V, eh.a, eh.b, 0, 0.0, 0.0, x_t)
        base.append(w)
        emis.append(e)
        return base, emis

    def reweighted_log_weights(self, t: int, values, observed, with_emission=False):
        """CRP-times-cohesion log weights at time t (optionally with emission terms)."""
        base, emis = self.regime_log_weights_split(t, values, observed)
        if with_emission:
            return [b + e for b, e in zip(base, emis)]
        return base

    def log_step_normalizer(self, t: int, values, observed) -> float:
        """Log of the per-step coupling normalizer, with stats in prefix state."""
        return -logsumexp(self.reweighted_log_weights(t, values, observed))

    def log_step_predictive(self, t: int, values, observed, emission_observed=None) -> float:
        """Log one-step predictive of the observed cells at t, regime summed out."""
        base, emis = self.regime_log_weights_split(t, values, observed, emission_observed)
        return logsumexp([b + e for b, e in zip(base, emis)]) - logsumexp(base)

    # -- maintenance ----------------------------------------------------------

    def empty_clone(self) -> "GroupModel":
        return GroupModel(self.members, self.alpha, self.num_steps, self.window, self.hypers)

    def clone(self) -> "GroupModel":
        other = self.empty_clone()
        other.regimes.z = list(self.regimes.z)
        other.regimes.counts = list(self.regimes.counts)
        for n in self.members:
            other.emission[n] = [s.copy() for s in self.emission[n]]
            other.cohesion[n] = [[s.copy() for s in row] for row in self.cohesion[n]]
        return other

    def rebuild_stats(self, values, observed) -> None:
        """Recompute every cell from raw data in time order (canonical bits)."""
        for n in self.members:
            for s in self.emission[n]:
                s.reset()
            for row in self.cohesion[n]:
                for s in row:
                    s.reset()
        p = self.window
        for t in range(1, self.num_steps + 1):
            k = self.regimes.z[t - 1]
            if k == 0:
                continue
            col = p + t - 1
            for n in self.members:
                vrow = values[n]
                orow = observed[n]
                if orow[col]:
                    self.emission[n][k - 1].incorporate(float(vrow[col]))
                coh = self.cohesion[n][k - 1]
                for i in range(1, p + 1):
                    if orow[col - i]:
                        coh[i - 1].incorporate(float(vrow[col - i]))

    def maintain(self, values, observed) -> None:
        """Rebuild drifted cells (exact-subtraction safeguard)."""
        worst = 0
        for n in self.members:
            for s in self.emission[n]:
                worst = max(worst, s.ops)
            for row in self.cohesion[n]:
                for s in row:
                    worst = max(worst, s.ops)
        if worst > REBUILD_OPS_THRESHOLD:
            self.rebuild_stats(values, observed)

    def stats_deviation(self, values, observed) -> float:
        """Max |incremental - recomputed| over all cells; raises on count mismatch."""
        fresh = self.clone()
        fresh.rebuild_stats(values, observed)
        worst = 0.0
        for n in self.members:
            pairs = list(zip(self.emission[n], fresh.emission[n]))
            for row_a, row_b in zip(self.cohesion[n], fresh.cohesion[n]):
                pairs.extend(zip(row_a, row_b))
            for a, b in pairs:
                if a.count != b.count:
                    raise AssertionError(
                        f"stats count drift on series {n}: {a.count} != {b.count}"
                    )
                worst = max(worst, abs(a.sum - b.sum), abs(a.sum_sq - b.sum_sq))
        return worst


# -- sequential evaluation ----------------------------------------------------


def sequence_loglik(
    z,
    members,
    alpha: float,
    hypers,
    values,
    observed,
    num_steps: int,
    window: int,
    include_emission: bool = True,
    detail: bool = False,
):
    """Log joint contribution of one group for a fixed regime sequence.

    Replays ``z`` forward so the term at time t uses only earlier data:
    each step adds the normalized reweighted-CRP log probability of z_t plus
    (optionally) the observed-cell emission predictives.  Without emission
    terms this is exactly the density of the lag-reweighted sequence prior,
    which is also the forward-sampling proposal density used by the outer
    cluster moves.

    With ``detail=True`` returns ``(total, series_terms)`` where
    ``series_terms`` collects the per-series cohesion and emission terms at
    the assigned regimes (the part additive across disjoint member sets).
    """
    scratch = GroupModel(members, alpha, num_steps, window, hypers)
    label_map: dict[int, int] = {}
    total = 0.0
    series_terms = 0.0
    for t in range(1, num_steps + 1):
        zt = z[t - 1]
        if zt == 0:
            raise ValueError(f"sequence has unassigned step {t}")
        base, emis = scratch.regime_log_weights_split(t, values, observed)
        k = label_map.get(zt)
        idx = (k - 1) if k is not None else len(base) - 1
        total += base[idx] - logsumexp(base)
        if include_emission:
            total += emis[idx]
        if detail:
            coh = 0.0
            for n in scratch.members:
                series_k = k if k is not None else 0
                coh += scratch.cohesion_logweight(n, series_k, t, values, observed)
            series_terms += coh + (emis[idx] if include_emission else 0.0)
        if k is None:
            k = scratch.add_regime()
            label_map[zt] = k
        scratch.assign(t, k, values, observed)
    if detail:
        return total, series_terms
    return total


def group_sequence_loglik(group: GroupModel, values, observed, include_emission=True):
    return sequence_loglik(
        group.regimes.z,
        group.members,
        group.alpha,
        group.hypers,
        values,
        observed,
        group.num_steps,
        group.window,
        include_emission=include_emission,
    )


def forward_sample_sequence(members, alpha, hypers, values, observed, num_steps, window, rng):
    """Sample a regime sequence from the lag-reweighted prior (no emission terms).

    Returns ``(z, log_density)``; the density is the product of normalized
    step probabilities, so it is exactly what an MH correction needs.
    """
    scratch = GroupModel(members, alpha, num_steps, window, hypers)
    z = []
    total = 0.0
    for t in range(1, num_steps + 1):
        base = scratch.reweighted_log_weights(t, values, observed)
        idx = gumbel_argmax(base, rng)
        total += base[idx] - logsumexp(base)
        if idx == len(base) - 1:
            k = scratch.add_regime()
        else:
            k = idx + 1
        scratch.assign(t, k, values, observed)
        z.append(k)
    return z, total


# -- chain state ---------------------------------------------------------------


class ChainState:
    """One full latent configuration: outer partition, groups, hypers, RNG."""

    def __init__(self, panel: TimeSeriesPanel, alpha0, assignments, groups, hypers, rng):
        self.panel = panel
        self.values = panel.values
        self.observed = panel.observed
        self.alpha0 = float(alpha0)
        self.assignments = list(assignments)
        self.groups = groups
        self.hypers = list(hypers)  # list[SeriesHypers] indexed by series
        self.hyper_map = {n: h for n, h in enumerate(self.hypers)}
        for group in self.groups:
            group.hypers = self.hyper_map
        self.rng = rng
        self.grids = None
        self.loglik_cache: dict[GroupModel, float] = {}

    @classmethod
    def create(cls, panel, alpha0, assignments, group_alphas, hypers, rng):
        """Build a state with the given outer assignment, replaying no regimes yet."""
        labels = sorted(set(assignments))
        if labels != list(range(1, len(labels) + 1)):
            raise ValueError(f"assignments must use contiguous labels 1..M: {assignments}")
        hyper_map = {n: hypers[n] for n in range(panel.num_series)}
        groups = []
        for m in labels:
            members = [n for n, c in enumerate(assignments) if c == m]
            groups.append(
                GroupModel(members, group_alphas[m - 1], panel.num_steps, panel.window, hyper_map)
            )
        return cls(panel, alpha0, assignments, groups, hypers, rng)

    @property
    def num_series(self) -> int:
        return self.panel.num_series

    def group_of(self, n: int) -> GroupModel:
        return self.groups[self.assignments[n] - 1]

    def set_series_hyper(self, n: int, hyper: SeriesHypers) -> None:
        self.hypers[n] = hyper
        self.hyper_map[n] = hyper
        self.loglik_cache.clear()

    def check_outer(self) -> None:
        labels = set(self.assignments)
        if labels != set(range(1, len(self.groups) + 1)):
            raise AssertionError(f"outer labels not contiguous: {self.assignments}")
        seen = set()
        for m, group in enumerate(self.groups, start=1):
            if not group.members:
                raise AssertionError(f"group {m} empty")
            for n in group.members:
                if self.assignments[n] != m or n in seen:
                    raise AssertionError("outer membership inconsistent")
                seen.add(n)
        if seen != set(range(self.num_series)):
            raise AssertionError("outer partition does not cover all series")

    def stats_deviation(self) -> float:
        return max(g.stats_deviation(self.values, self.observed) for g in self.groups)

    def check_consistency(self, tol: float = 1e-8) -> None:
        self.check_outer()
        for group in self.groups:
            group.regimes.check()
        dev = self.stats_deviation()
        if dev > tol:
            raise AssertionError(f"sufficient statistics drifted by {dev}")


def log_joint(state: ChainState) -> float:
    """Log of the collapsed unnormalized posterior at the state's configuration.

    Gamma(1,1) log priors on the concentrations, the outer CRP partition mass,
    and the per-group sequential terms.  Hyperpriors are uniform over their
    grids and contribute a constant, which is dropped.
    """
    total = log_gamma11_pdf(state.alpha0)
    total += crp_partition_log_mass([len(g.members) for g in state.groups], state.alpha0)
    for group in state.groups:
        total += log_gamma11_pdf(group.alpha)
        total += group_sequence_loglik(group, state.values, state.observed)
    return total


# -- forward simulation --------------------------------------------------------


@dataclass
class SimulationResult:
    panel: TimeSeriesPanel
    assignments: list[int]
    alpha0: float
    group_alphas: list[float]
    group_z: list[list[int]]


def simulate(
    num_steps: int,
    window: int,
    prefix,
    hypers,
    rng,
    alpha: float | None = None,
    assignments=None,
    alpha0: float = 1.0,
    series_names=None,
) -> SimulationResult:
    """Forward-sample a panel from the generative process.

    ``prefix`` is an (N, window) array of known initial values.  Group
    concentrations are drawn from Gamma(1,1) unless ``alpha`` pins them; the
    outer assignment is drawn from a CRP(alpha0) unless ``assignments`` plants
    it.  Emissions are drawn from the collapsed Student-T predictives, so the
    output distribution matches the collapsed joint exactly.
    """
    prefix = np.asarray(prefix, dtype=float)
    num_series = prefix.shape[0]
    if prefix.shape != (num_series, window):
        raise ValueError(f"prefix must be (N, {window}), got {prefix.shape}")
    if assignments is None:
        assignments = []
        counts: list[int] = []
        for _ in range(num_series):
            weights = crp_log_weights(counts, alpha0)
            idx = gumbel_argmax(weights, rng)
            if idx == len(counts):
                counts.append(0)
            counts[idx] += 1
            assignments.append(idx + 1)
    else:
        assignments = list(assignments)
    num_groups = max(assignments)

    values = np.zeros((num_series, window + num_steps))
    values[:, :window] = prefix
    observed = np.ones_like(values, dtype=bool)
    hyper_map = {n: hypers[n] for n in range(num_series)}

    group_alphas = []
    group_z = []
    for m in range(1, num_groups + 1):
        members = [n for n, c in enumerate(assignments) if c == m]
        a = float(alpha) if alpha is not None else float(rng.gamma(1.0, 1.0))
        group_alphas.append(a)
        group = GroupModel(members, a, num_steps, window, hyper_map)
        z = []
        for t in range(1, num_steps + 1):
            base = group.reweighted_log_weights(t, values, observed)
            idx = gumbel_argmax(base, rng)
            k = group.add_regime() if idx == len(base) - 1 else idx + 1
            col = window + t - 1
            for n in members:
                h = group.hypers[n].emission
                s = group.emission[n][k - 1]
                values[n, col] = posterior_predictive(h, s).sample(rng)
            group.assign(t, k, values, observed)
            z.append(k)
        group_z.append(z)

    if series_names is None:
        series_names = tuple(f"s{n + 1}" for n in range(num_series))
    labels = tuple(f"{r:05d}" for r in range(window + num_steps))
    panel = TimeSeriesPanel(
        values=values,
        observed=observed,
        window=window,
        series_names=tuple(series_names),
        raw_labels=labels,
    )
    return SimulationResult(panel, assignments, alpha0, group_alphas, group_z)


# -- serialization ---------------------------------------------------------------

STATE_SCHEMA_VERSION = 1


def _hyper_list(h: NigHyper) -> list[float]:
    return [h.m, h.V, h.a, h.b]


def state_payload(state: ChainState) -> dict:
    """JSON-serializable snapshot; stats are derived and rebuilt on load."""
    return {
        "schema_version": STATE_SCHEMA_VERSION,
        "alpha0": state.alpha0,
        "assignments": list(state.assignments),
        "groups": [
            {
                "alpha": g.alpha,
                "members": list(g.members),
                "z": list(g.regimes.z),
            }
            for g in state.groups
        ],
        "hypers": [
            {
                "emission": _hyper_list(sh.emission),
                "cohesion": [_hyper_list(h) for h in sh.cohesion],
            }
            for sh in state.hypers
        ],
        "rng": {
            "kind": type(state.rng.bit_generator).__name__,
            "state": state.rng.bit_generator.state,
        },
    }


def state_from_payload(payload: dict, panel: TimeSeriesPanel) -> ChainState:
    if payload.get("schema_version") != STATE_SCHEMA_VERSION:
        raise ValueError(
            f"chain state schema {payload.get('schema_version')} != {STATE_SCHEMA_VERSION}"
        )
    hypers = [
        SeriesHypers(
            emission=NigHyper(*entry["emission"]),
            cohesion=tuple(NigHyper(*h) for h in entry["cohesion"]),
        )
        for entry in payload["hypers"]
    ]
    rng_info = payload["rng"]
    bit_gen_cls = getattr(np.random, rng_info["kind"])
    bit_gen = bit_gen_cls()
    bit_gen.state = rng_info["state"]
    rng = np.random.Generator(bit_gen)

    hyper_map = {n: hypers[n] for n in range(panel.num_series)}
    groups = []
    for entry in payload["groups"]:
        group = GroupModel(
            entry["members"], entry["alpha"], panel.num_steps, panel.window, hyper_map
        )
        z = entry["z"]
        for _ in range(max(z) if z else 0):
            group.add_regime()
        for t, k in enumerate(z, start=1):
            group.assign(t, k, panel.values, panel.observed)
        groups.append(group)
    return ChainState(panel, payload["alpha0"], payload["assignments"], groups, hypers, rng)
