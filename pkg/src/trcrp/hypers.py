"""Empirical-Bayes griddy-Gibbs transitions for concentrations and NIG cells.

Every hyperparameter moves on a 30-point data-dependent grid; a transition
evaluates the conditional log likelihood restricted to the terms the
parameter touches, adds the log prior (Gamma(1,1) for concentrations, uniform
on the grid otherwise), and samples from the normalized categorical.

Emission-cell conditionals telescope into per-regime marginal likelihoods, so
they cost O(K) per grid point.  Concentration and lag-cell conditionals need
the sequential prefix structure; one replay per group builds a table of
per-step block weights and stat snapshots that all 30 grid points reuse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .conjugate import NigHyper, marginal_loglik, predictive_logpdf_raw
from .model import ChainState, SeriesHypers
from .panel import TimeSeriesPanel
from .util import crp_partition_log_mass, gumbel_argmax, log_gamma11_pdf, logsumexp

__all__ = [
    "GRID_SIZE",
    "HyperGrid",
    "SeriesGrids",
    "Grids",
    "build_grids",
    "initial_hypers",
    "gibbs_hyper",
    "hyper_sweep",
    "grids_payload",
]

GRID_SIZE = 30
_CLAMP = 1e-6

NIG_FIELDS = ("m", "V", "a", "b")


@dataclass(frozen=True)
class HyperGrid:
    param: str
    points: tuple[float, ...]
    rule: str

    def __post_init__(self):
        if len(self.points) != GRID_SIZE:
            raise ValueError(f"{self.param}: grid must have {GRID_SIZE} points")
        if any(not math.isfinite(x) for x in self.points):
            raise ValueError(f"{self.param}: non-finite grid point")
        if any(b <= a for a, b in zip(self.points, self.points[1:])):
            raise ValueError(f"{self.param}: grid not strictly increasing")


def _logspace(param: str, lo: float, hi: float, rule: str) -> HyperGrid:
    # Non-positive lower bounds are clamped; a collapsed range keeps the
    # canonical two-decade span above the clamp.
    lo = max(lo, _CLAMP)
    if hi <= lo:
        hi = lo * 100.0
    pts = np.geomspace(lo, hi, GRID_SIZE)
    return HyperGrid(param, tuple(float(x) for x in pts), rule)


def _linspace(param: str, lo: float, hi: float, rule: str) -> HyperGrid:
    if hi <= lo:
        hi = lo + 10.0
    pts = np.linspace(lo, hi, GRID_SIZE)
    return HyperGrid(param, tuple(float(x) for x in pts), rule)


@dataclass(frozen=True)
class SeriesGrids:
    """Grids for one series' NIG cells; lag windows reuse these (whole-series stats)."""

    m: HyperGrid
    V: HyperGrid
    a: HyperGrid
    b: HyperGrid

    def field(self, name: str) -> HyperGrid:
        return getattr(self, name)


@dataclass(frozen=True)
class Grids:
    alpha0: HyperGrid
    group_alpha: HyperGrid
    series: tuple[SeriesGrids, ...]


def build_grids(panel: TimeSeriesPanel) -> Grids:
    """Data-dependent grids: concentrations from N and T, NIG cells per series.

    The location grid is linear on [min-5, max+5] (a log rule is ill-defined
    for non-positive endpoints); scale-like parameters stay geometric.
    """
    num = panel.num_series
    steps = panel.num_steps
    alpha0 = _logspace("alpha0", 1.0 / num, float(num), "logspace(1/N, N)")
    group_alpha = _logspace("alpha", 1.0 / steps, float(steps), "logspace(1/T, T)")
    per_series = []
    for n, name in enumerate(panel.series_names):
        row = panel.values[n, panel.window :]
        mask = panel.observed[n, panel.window :]
        xs = row[mask]
        if xs.size == 0:
            xs = panel.values[n][panel.observed[n]]
        if xs.size == 0:
            lo, hi, ssqdev = -5.0, 5.0, 0.0
        else:
            lo = float(xs.min()) - 5.0
            hi = float(xs.max()) + 5.0
            ssqdev = float(((xs - xs.mean()) ** 2).sum())
        per_series.append(
            SeriesGrids(
                m=_linspace(f"m[{name}]", lo, hi, "30 linear points on [min-5, max+5]"),
                V=_logspace(f"V[{name}]", 1.0 / steps, float(steps), "logspace(1/T, T)"),
                a=_logspace(f"a[{name}]", ssqdev / 100.0, ssqdev, "logspace(ssqdev/100, ssqdev)"),
                b=_logspace(f"b[{name}]", 1.0, float(steps), "logspace(1, T)"),
            )
        )
    return Grids(alpha0=alpha0, group_alpha=group_alpha, series=tuple(per_series))


def initial_hypers(grids: Grids, window: int) -> list[SeriesHypers]:
    """Grid-midpoint starting values for every series (deterministic)."""
    out = []
    for sg in grids.series:
        mid = GRID_SIZE // 2
        cell = NigHyper(
            m=sg.m.points[mid], V=sg.V.points[mid], a=sg.a.points[mid], b=sg.b.points[mid]
        )
        out.append(SeriesHypers(emission=cell, cohesion=tuple(cell for _ in range(window))))
    return out


def grids_payload(grids: Grids) -> dict:
    def grid_dict(g: HyperGrid) -> dict:
        return {"param": g.param, "rule": g.rule, "points": list(g.points)}

    return {
        "alpha0": grid_dict(grids.alpha0),
        "group_alpha": grid_dict(grids.group_alpha),
        "series": [
            {name: grid_dict(sg.field(name)) for name in NIG_FIELDS} for sg in grids.series
        ],
        "lag_windows_reuse_series_grids": True,
    }


# -- sequential tables ---------------------------------------------------------


class _GroupTable:
    """Prefix-structure cache for one group's concentration and lag conditionals.

    Row t holds the occupied-block counts, the slot of the assigned regime,
    the lag query values, and per block (plus one fresh block) the total
    cohesion with per-(series, offset) factors and the stat snapshots they
    were computed from.  Sufficient statistics do not depend on
    hyperparameters, so the snapshots serve every grid point.
    """

    def __init__(self, group, values, observed):
        scratch = group.empty_clone()
        label_map: dict[int, int] = {}
        p = scratch.window
        self.rows = []
        z = group.regimes.z
        for t in range(1, group.num_steps + 1):
            col = p + t - 1
            counts = list(scratch.regimes.counts)
            num_blocks = len(counts)
            queries = {}
            for n in scratch.members:
                orow = observed[n]
                vrow = values[n]
                for i in range(1, p + 1):
                    queries[(n, i)] = float(vrow[col - i]) if orow[col - i] else None
            slots = []
            for slot in range(num_blocks + 1):
                coh = 0.0
                factors = {}
                for (n, i), x in queries.items():
                    if x is None:
                        continue
                    h = scratch.hypers[n].cohesion[i - 1]
                    if slot < num_blocks:
                        s = scratch.cohesion[n][slot][i - 1]
                        cnt, sm, ssq = s.count, s.sum, s.sum_sq
                    else:
                        cnt, sm, ssq = 0, 0.0, 0.0
                    f = predictive_logpdf_raw(h.m, h.V, h.a, h.b, cnt, sm, ssq, x)
                    coh += f
                    factors[(n, i)] = (f, cnt, sm, ssq)
                slots.append([coh, factors])
            zt = z[t - 1]
            k = label_map.get(zt)
            z_slot = (k - 1) if k is not None else num_blocks
            self.rows.append((counts, z_slot, queries, slots))
            if k is None:
                k = scratch.add_regime()
                label_map[zt] = k
            scratch.assign(t, k, values, observed)

    def alpha_restricted(self, alpha: float) -> float:
        """Sequential assignment loglik of the group's z under concentration alpha."""
        total = 0.0
        log_alpha = math.log(alpha)
        for counts, z_slot, _, slots in self.rows:
            w = [math.log(c) + slots[j][0] for j, c in enumerate(counts)]
            w.append(log_alpha + slots[len(counts)][0])
            total += w[z_slot] - logsumexp(w)
        return total

    def cohesion_restricted(self, alpha: float, n: int, offset: int, hyper: NigHyper) -> float:
        """Same quantity with cell (n, offset) re-evaluated under ``hyper``."""
        total = 0.0
        log_alpha = math.log(alpha)
        key = (n, offset)
        for counts, z_slot, queries, slots in self.rows:
            x = queries.get(key)
            num_blocks = len(counts)
            w = []
            for j in range(num_blocks + 1):
                coh, factors = slots[j]
                base = (math.log(counts[j]) if j < num_blocks else log_alpha) + coh
                if x is not None:
                    f_old, cnt, sm, ssq = factors[key]
                    base += (
                        predictive_logpdf_raw(hyper.m, hyper.V, hyper.a, hyper.b, cnt, sm, ssq, x)
                        - f_old
                    )
                w.append(base)
            total += w[z_slot] - logsumexp(w)
        return total

    def update_cohesion(self, n: int, offset: int, hyper: NigHyper) -> None:
        """Refresh the cell's factors after an accepted grid move."""
        key = (n, offset)
        for _, _, queries, slots in self.rows:
            x = queries.get(key)
            if x is None:
                continue
            for slot in slots:
                f_old, cnt, sm, ssq = slot[1][key]
                f_new = predictive_logpdf_raw(hyper.m, hyper.V, hyper.a, hyper.b, cnt, sm, ssq, x)
                slot[1][key] = (f_new, cnt, sm, ssq)
                slot[0] += f_new - f_old


# -- transitions -----------------------------------------------------------------


def _require_grids(state: ChainState) -> Grids:
    if state.grids is None:
        state.grids = build_grids(state.panel)
    return state.grids


def _gibbs_alpha0(state: ChainState, rng) -> None:
    grid = _require_grids(state).alpha0.points
    sizes = [len(g.members) for g in state.groups]
    logits = [crp_partition_log_mass(sizes, a) + log_gamma11_pdf(a) for a in grid]
    state.alpha0 = grid[gumbel_argmax(logits, rng)]


def _gibbs_group_alpha(state: ChainState, group, table: _GroupTable, rng) -> None:
    grid = _require_grids(state).group_alpha.points
    logits = [table.alpha_restricted(a) + log_gamma11_pdf(a) for a in grid]
    group.alpha = grid[gumbel_argmax(logits, rng)]
    state.loglik_cache.pop(group, None)


def _gibbs_emission_field(state: ChainState, n: int, field: str, rng) -> None:
    grid = _require_grids(state).series[n].field(field).points
    group = state.group_of(n)
    current = state.hypers[n].emission
    cells = group.emission[n]
    logits = []
    for value in grid:
        cand = current.replace(**{field: value})
        logits.append(sum(marginal_loglik(cand, s) for s in cells))
    new = current.replace(**{field: grid[gumbel_argmax(logits, rng)]})
    if new != current:
        state.set_series_hyper(n, state.hypers[n].replace_emission(new))


def _gibbs_cohesion_field(
    state: ChainState, n: int, offset: int, field: str, table: _GroupTable, rng
) -> None:
    grid = _require_grids(state).series[n].field(field).points
    group = state.group_of(n)
    current = state.hypers[n].cohesion[offset - 1]
    logits = [
        table.cohesion_restricted(group.alpha, n, offset, current.replace(**{field: value}))
        for value in grid
    ]
    new = current.replace(**{field: grid[gumbel_argmax(logits, rng)]})
    if new != current:
        table.update_cohesion(n, offset, new)
        state.set_series_hyper(n, state.hypers[n].replace_cohesion(offset, new))


def gibbs_hyper(state: ChainState, param, rng, table: _GroupTable | None = None) -> None:
    """One griddy-Gibbs transition for the named parameter.

    ``param`` is ``("alpha0",)``, ``("alpha", m)``, ``("emission", n, field)``,
    or ``("cohesion", n, offset, field)`` with field in m/V/a/b.
    """
    kind = param[0]
    if kind == "alpha0":
        _gibbs_alpha0(state, rng)
    elif kind == "alpha":
        group = state.groups[param[1] - 1]
        if table is None:
            table = _GroupTable(group, state.values, state.observed)
        _gibbs_group_alpha(state, group, table, rng)
    elif kind == "emission":
        _gibbs_emission_field(state, param[1], param[2], rng)
    elif kind == "cohesion":
        n, offset, field = param[1], param[2], param[3]
        if table is None:
            table = _GroupTable(state.group_of(n), state.values, state.observed)
        _gibbs_cohesion_field(state, n, offset, field, table, rng)
    else:
        raise ValueError(f"unknown hyperparameter spec {param!r}")


def hyper_sweep(state: ChainState, rng) -> None:
    """One pass over every hyperparameter: alpha0, each group's alpha, then per
    series the four emission fields and the 4p lag fields."""
    _require_grids(state)
    _gibbs_alpha0(state, rng)
    tables = {}
    for group in state.groups:
        tables[group] = _GroupTable(group, state.values, state.observed)
        _gibbs_group_alpha(state, group, tables[group], rng)
    window = state.panel.window
    for n in range(state.num_series):
        for field in NIG_FIELDS:
            _gibbs_emission_field(state, n, field, rng)
        group = state.group_of(n)
        for offset in range(1, window + 1):
            for field in NIG_FIELDS:
                _gibbs_cohesion_field(state, n, offset, field, tables[group], rng)
    state.loglik_cache.clear()
