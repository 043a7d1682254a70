"""Fit orchestration: chain schedules, parallel execution, SampleSet files.

A fit runs S independent chains.  Each chain initializes the outer partition
from its prior, block-samples every group's regime sequence with the particle
filter, runs always-accept sweeps for a few iterations, then full MH sweeps
interleaved with outer-cluster and griddy-Gibbs hyperparameter moves.  The
final state of each chain is one posterior sample.

All randomness derives from the single run seed: chain i uses the i-th spawn
of ``SeedSequence(seed)``, so results are identical whether chains run
sequentially or across worker processes; ``deterministic`` simply forces the
sequential path.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from . import hypers as hypers_mod
from . import mcmc, structure
from .conjugate import NigHyper
from .model import (
    ChainState,
    GroupModel,
    SeriesHypers,
    crp_log_weights,
    log_joint,
    state_from_payload,
    state_payload,
)
from .panel import TimeSeriesPanel
from .predict import SampleSet
from .smc import smc_block_sample
from .util import gumbel_argmax

__all__ = [
    "RunConfig",
    "config_hash",
    "fit",
    "run_chain",
    "save_sampleset",
    "load_sampleset",
    "SAMPLESET_SCHEMA_VERSION",
    "SchemaVersionError",
]

SAMPLESET_SCHEMA_VERSION = 1


class SchemaVersionError(ValueError):
    """SampleSet file written by an incompatible schema."""


@dataclass(frozen=True)
class RunConfig:
    """Sampler schedule and sizes.

    ``burnin + sweeps`` total sweeps run per chain; the final state is the
    chain's sample.  The first ``init_sweeps`` regime sweeps always accept
    (initialization heuristic); hyperparameter sweeps fire every
    ``hyper_cadence``-th iteration (0 disables them, as do fixed overrides).
    """

    window: int = 10
    chains: int = 64
    sweeps: int = 0
    burnin: int = 5000
    particles: int = 64
    seed: int = 0
    threads: int = 1
    deterministic: bool = False
    hierarchical: bool = True
    full_mh: bool = True
    init_sweeps: int = 10
    hyper_cadence: int = 1
    smc_init: bool = True
    ess_threshold: float = 0.5
    shuffle: bool = False
    fixed_alpha: float | None = None
    fixed_alpha0: float | None = None
    fixed_hypers: tuple[float, float, float, float] | None = None

    def __post_init__(self):
        if self.window < 0:
            raise ValueError("window must be >= 0")
        for name in ("chains", "particles", "threads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("sweeps", "burnin", "init_sweeps", "hyper_cadence"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def total_sweeps(self) -> int:
        return self.burnin + self.sweeps

    @property
    def hypers_enabled(self) -> bool:
        return self.hyper_cadence > 0 and self.fixed_hypers is None


def config_hash(config: RunConfig, extra: dict | None = None) -> str:
    payload = {"config": asdict(config)}
    if extra:
        payload["extra"] = extra
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _initial_assignments(num_series: int, alpha0: float, hierarchical: bool, rng) -> list[int]:
    if not hierarchical or num_series == 1:
        return [1] * num_series
    assignments = []
    counts: list[int] = []
    for _ in range(num_series):
        weights = crp_log_weights(counts, alpha0)
        idx = gumbel_argmax(weights, rng)
        if idx == len(counts):
            counts.append(0)
        counts[idx] += 1
        assignments.append(idx + 1)
    return assignments


def _apply_sequence(group: GroupModel, z, values, observed) -> None:
    for _ in range(max(z) if z else 0):
        group.add_regime()
    for t, k in enumerate(z, start=1):
        group.assign(t, k, values, observed)


def run_chain(panel: TimeSeriesPanel, config: RunConfig, seed_seq) -> tuple[dict, dict]:
    """Run one chain to completion; returns (state payload, chain stats)."""
    rng = np.random.default_rng(seed_seq)
    grids = hypers_mod.build_grids(panel)
    if config.fixed_hypers is not None:
        cell = NigHyper(*config.fixed_hypers)
        series_hypers = [
            SeriesHypers(cell, tuple(cell for _ in range(panel.window)))
            for _ in range(panel.num_series)
        ]
    else:
        series_hypers = hypers_mod.initial_hypers(grids, panel.window)
    alpha0 = config.fixed_alpha0 if config.fixed_alpha0 is not None else 1.0
    group_alpha = config.fixed_alpha if config.fixed_alpha is not None else 1.0

    assignments = _initial_assignments(panel.num_series, alpha0, config.hierarchical, rng)
    num_groups = max(assignments)
    state = ChainState.create(
        panel, alpha0, assignments, [group_alpha] * num_groups, series_hypers, rng
    )
    state.grids = grids

    for group in state.groups:
        if config.smc_init:
            result = smc_block_sample(
                group.members,
                group.alpha,
                state.hyper_map,
                panel.values,
                panel.observed,
                panel.num_steps,
                panel.window,
                config.particles,
                rng,
                ess_threshold=config.ess_threshold,
            )
            _apply_sequence(group, result.z, panel.values, panel.observed)
        else:
            group.add_regime()
            for t in range(1, panel.num_steps + 1):
                group.assign(t, 1, panel.values, panel.observed)

    accept_z = {"sites": 0, "accepted": 0, "moved": 0}
    accept_c = {"series": 0, "accepted": 0, "moved": 0}
    for sweep_idx in range(config.total_sweeps):
        full = config.full_mh and sweep_idx >= config.init_sweeps
        cfg = mcmc.MhConfig(full_mh=full, shuffle=config.shuffle)
        for group in list(state.groups):
            stats = mcmc.sweep_z(group, state.values, state.observed, rng, cfg)
            state.loglik_cache.pop(group, None)
            for key in accept_z:
                accept_z[key] += stats[key]
        if config.hierarchical and panel.num_series > 1:
            stats = structure.sweep_c(state, rng, heuristic=not full)
            for key in accept_c:
                accept_c[key] += stats[key]
        if config.hypers_enabled and (sweep_idx + 1) % config.hyper_cadence == 0:
            hypers_mod.hyper_sweep(state, rng)

    joint = log_joint(state)
    if not math.isfinite(joint):
        raise ValueError(f"non-finite log joint after fit: {joint}")
    stats = {
        "log_joint": joint,
        "num_groups": len(state.groups),
        "accept_z": accept_z,
        "accept_c": accept_c,
    }
    return state_payload(state), stats


def fit(panel: TimeSeriesPanel, config: RunConfig) -> SampleSet:
    """Run all chains and assemble the sample set."""
    seed_seqs = np.random.SeedSequence(config.seed).spawn(config.chains)
    workers = 1 if config.deterministic else config.threads
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_chain, [panel] * config.chains, [config] * config.chains, seed_seqs))
    else:
        results = [run_chain(panel, config, seq) for seq in seed_seqs]
    chains = [state_from_payload(payload, panel) for payload, _ in results]
    provenance = {
        "seed": config.seed,
        "burnin": config.burnin,
        "sweeps": config.sweeps,
        "schedule": {
            "smc_init": config.smc_init,
            "init_sweeps": config.init_sweeps,
            "full_mh": config.full_mh,
            "hyper_cadence": config.hyper_cadence,
            "hierarchical": config.hierarchical,
        },
        "chain_stats": [stats for _, stats in results],
    }
    return SampleSet(panel=panel, chains=chains, provenance=provenance)


# -- files -----------------------------------------------------------------------


def panel_payload(panel: TimeSeriesPanel) -> dict:
    values = [
        [float(panel.values[n, c]) if panel.observed[n, c] else None
         for c in range(panel.values.shape[1])]
        for n in range(panel.num_series)
    ]
    return {
        "window": panel.window,
        "series_names": list(panel.series_names),
        "time_labels": list(panel.raw_labels),
        "values": values,
    }


def panel_from_payload(payload: dict) -> TimeSeriesPanel:
    raw = payload["values"]
    values = np.array(
        [[math.nan if v is None else float(v) for v in row] for row in raw], dtype=float
    )
    observed = np.array([[v is not None for v in row] for row in raw], dtype=bool)
    return TimeSeriesPanel(
        values=values,
        observed=observed,
        window=payload["window"],
        series_names=tuple(payload["series_names"]),
        raw_labels=tuple(payload["time_labels"]),
    )


def save_sampleset(samples: SampleSet, config: RunConfig, path) -> str:
    """Write the versioned SampleSet JSON; returns the config hash."""
    digest = config_hash(config)
    doc = {
        "schema_version": SAMPLESET_SCHEMA_VERSION,
        "config_hash": digest,
        "config": asdict(config),
        "panel": panel_payload(samples.panel),
        "chains": [state_payload(chain) for chain in samples.chains],
        "provenance": samples.provenance,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")
    return digest


def load_sampleset(path) -> tuple[SampleSet, RunConfig, str]:
    with open(path) as fh:
        doc = json.load(fh)
    version = doc.get("schema_version")
    if version != SAMPLESET_SCHEMA_VERSION:
        raise SchemaVersionError(
            f"sample set schema {version!r} unsupported (expected {SAMPLESET_SCHEMA_VERSION})"
        )
    panel = panel_from_payload(doc["panel"])
    chains = [state_from_payload(entry, panel) for entry in doc["chains"]]
    config = RunConfig(**{
        key: tuple(value) if key == "fixed_hypers" and value is not None else value
        for key, value in doc["config"].items()
    })
    samples = SampleSet(panel=panel, chains=chains, provenance=doc.get("provenance", {}))
    return samples, config, doc["config_hash"]
