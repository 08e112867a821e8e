"""Pass/fail checks run by the ``gradlab`` command.

Each check builds its own seeded fixtures, returns the tables it measured
and one :class:`CheckResult` per invariant. Nothing here writes files.
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from src.analysis.feasibility import (cc_rebase, ce_rotation_check, ce_scale_check, rotation_orbit_derivative,
                                      row_scaling_control, spectral_floor, spectral_floor_check, tight_clusters,
                                      vicreg_within_class_conflict)
from src.analysis.gradient_lab import (alignment_metric, assignment_grad, chamfer_grad, chamfer_rank_genericity,
                                       field_alignment, field_rank, genericity_construction,
                                       holistic_rank_configs, matched_unit_sets, random_margin_costs,
                                       sinkhorn_limit_probe, soft_beta_sweep)
from src.bench.continual import build_benchmark
from src.bench.episode_batch import random_episode
from src.bench.episodes import sample_episode
from src.config.experiment_config import ExperimentConfig
from src.encoder.losses import DecorrelationConfig
from src.encoder.model import EncoderParams
from src.encoder.objective import ObjectiveConfig, encoder_gradients, total_loss
from src.matching.couplings import MatcherConfig
from src.numerics.tensor_core import RngState, finite_diff_gradient, l2_normalize, random_orthogonal, relative_error

logger = logging.getLogger(__name__)

ORACLE_KINDS = ("cross_correlation", "vicreg_variance", "spectral", "ct")
ORACLE_TOL = 1e-4
FIELD_TOL = 1e-5
SYMMETRY_TOL = 1e-9
REBASE_TOL = 1e-8
SOFT_BETAS = (1.0, 5.0, 20.0, 100.0)

# small encoder used by every check that differentiates the full pipeline
_SMALL_D, _SMALL_K, _SMALL_H = 8, 3, 4


@dataclass(frozen=True)
class CheckResult:
    check: str
    invariant: str
    value: float
    threshold: float
    passed: bool

    def as_row(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class CheckReport:
    name: str
    tables: dict[str, pd.DataFrame] = field(default_factory=dict)
    results: list[CheckResult] = field(default_factory=list)

    def record(self, invariant: str, value: float, threshold: float, passed: bool) -> None:
        result = CheckResult(self.name, invariant, float(value), float(threshold), bool(passed))
        if not result.passed:
            logger.warning("check %s/%s failed: value %.3e, threshold %.3e", self.name, invariant, value, threshold)
        self.results.append(result)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)


def _small_params(rng: RngState) -> EncoderParams:
    """Router scaled up and a perturbed head, so no gradient block is trivially zero."""
    params = EncoderParams.identity(_SMALL_D, _SMALL_H, rng.spawn("init"), router_scale=0.5)
    return params.with_head(np.eye(_SMALL_D) + 0.3 * rng.spawn("head").normal(size=(_SMALL_D, _SMALL_D)))


def _small_episode(rng: RngState):
    return random_episode(rng, way=2, shot=2, queries=2, K=_SMALL_K, D=_SMALL_D, class_offset=1.0)


def _oracle_objective(kind: str) -> ObjectiveConfig:
    if kind == "ct":
        return ObjectiveConfig(decorrelation=DecorrelationConfig(kind="none", lambda_d=0.0), ct_weight=0.5,
                               kappa=_SMALL_K)
    return ObjectiveConfig(decorrelation=DecorrelationConfig(kind=kind, lambda_d=0.5), kappa=_SMALL_K)


def oracle_check(config: ExperimentConfig, rng: RngState) -> CheckReport:
    """Analytic encoder gradients against central differences of the total loss."""
    report = CheckReport("oracle")
    corrupt = config.gradlab.corrupt_gradient
    rows = []
    for kind in ORACLE_KINDS:
        objective = _oracle_objective(kind)
        for i in range(config.gradlab.oracle_episodes):
            stream = rng.spawn(kind, i)
            episode = _small_episode(stream.spawn("episode"))
            params = _small_params(stream)
            analytic = encoder_gradients(params, episode, objective)
            if corrupt:
                analytic = dataclasses.replace(analytic, W2=1.5 * analytic.W2)
            numeric = finite_diff_gradient(
                lambda x: total_loss(EncoderParams.from_vector(x, _SMALL_D, _SMALL_H), episode, objective),
                params.to_vector())
            rows.append({"kind": kind, "episode": i, "rel_error": relative_error(analytic.to_vector(), numeric)})
        worst = max(r["rel_error"] for r in rows if r["kind"] == kind)
        report.record(f"encoder_gradient_{kind}", worst, ORACLE_TOL, worst <= ORACLE_TOL)
    report.tables["gradient_oracle"] = pd.DataFrame(rows)
    return report


def _holistic_score(y_raw: np.ndarray, omega: np.ndarray, P: np.ndarray) -> float:
    return float(l2_normalize(omega @ y_raw) @ P)


def rank_check(config: ExperimentConfig, rng: RngState, K: int = 7, D: int = 16) -> CheckReport:
    report = CheckReport("rank")
    n = config.gradlab.rank_configs
    rows = []
    for i, (field_, data) in enumerate(holistic_rank_configs(n, K, D, rng.spawn("holistic"))):
        numeric = finite_diff_gradient(lambda x: _holistic_score(x.reshape(K, D), data["omega"], data["P"]),
                                       data["y_raw"].ravel()).reshape(K, D)
        rows.append({"family": "holistic_raw", "config": i, "rank": field_rank(field_).numerical_rank,
                     "rel_error": relative_error(field_.per_slot, numeric)})

    matcher = MatcherConfig(kind="hard_chamfer")
    for i in range(min(n, 20)):
        z_q, z_c = matched_unit_sets(K, D, 0.5, rng.spawn("chamfer", i))
        field_ = chamfer_grad(z_q, z_c)
        numeric = assignment_grad(None, z_q, z_c, "full", matcher).per_slot
        rows.append({"family": "chamfer_unit", "config": i, "rank": field_rank(field_).numerical_rank,
                     "rel_error": relative_error(field_.per_slot, numeric)})
    table = pd.DataFrame(rows)
    holistic = table[table["family"] == "holistic_raw"]
    chamfer = table[table["family"] == "chamfer_unit"]
    report.record("holistic_rank_one", holistic["rank"].max(), 1, bool((holistic["rank"] == 1).all()))
    report.record("holistic_finite_difference", holistic["rel_error"].max(), FIELD_TOL,
                  holistic["rel_error"].max() <= FIELD_TOL)
    report.record("chamfer_finite_difference", chamfer["rel_error"].max(), FIELD_TOL,
                  chamfer["rel_error"].max() <= FIELD_TOL)

    theta = np.pi / 4
    z_q, z_c = genericity_construction(D, K, theta)
    field_ = chamfer_grad(z_q, z_c)
    expected = (np.sin(theta) / K) * np.eye(D)[K:2 * K]
    deviation = float(np.max(np.abs(field_.per_slot - expected)))
    construction_rank = field_rank(field_).numerical_rank
    report.record("chamfer_construction_exact", deviation, 1e-12, deviation <= 1e-12)
    report.record("chamfer_construction_rank", construction_rank, K, construction_rank == K)
    fraction = chamfer_rank_genericity(n, K, D, rng.spawn("genericity"))
    report.record("chamfer_rank_generic", fraction, 0.95, fraction >= 0.95)
    report.tables["rank"] = table
    return report


def sinkhorn_check(config: ExperimentConfig, rng: RngState, K: int = 7, margin: float = 0.2) -> CheckReport:
    """Sinkhorn limits on margin-0.2 costs, plus the soft-Chamfer β sweep as a report."""
    report = CheckReport("sinkhorn")
    configured = [float(e) for e in config.gradlab.sinkhorn_epsilons]
    eps_list = list(dict.fromkeys(configured + [0.01, 100.0]))
    frames, margins, hold = [], [], True
    for i in range(config.gradlab.sinkhorn_matrices):
        probe = sinkhorn_limit_probe(random_margin_costs(K, margin, rng.spawn("costs", i)), eps_list)
        margins.append(probe.margin)
        hold = hold and probe.assumptions_hold
        frame = probe.to_frame()
        frame.insert(0, "matrix", i)
        frames.append(frame)
    probes = pd.concat(frames, ignore_index=True)
    report.record("sinkhorn_assumptions", min(margins), 0.0, hold)

    peak = probes.loc[probes["epsilon"] == 0.01, "min_peak_mass"].min()
    report.record("sinkhorn_peak_mass", peak, 0.99, peak >= 0.99)
    deviation = probes.loc[probes["epsilon"] == 100.0, "max_uniform_deviation"].max()
    report.record("sinkhorn_uniform_limit", deviation, 1e-3, deviation <= 1e-3)

    per_eps = (probes[probes["epsilon"].isin(configured)]
               .groupby("epsilon", sort=False)
               .agg(min_peak_mass=("min_peak_mass", "min"), max_uniform_deviation=("max_uniform_deviation", "max"),
                    gradient_gap=("gradient_gap", "mean"), residual=("residual", "max"),
                    iterations=("iterations", "max"))
               .reindex(configured).reset_index())
    gaps = per_eps.sort_values("epsilon", ascending=False)["gradient_gap"].to_numpy()
    violations = int(np.sum(np.diff(gaps) > 1e-12))
    report.record("sinkhorn_gap_monotone", violations, 0, violations == 0)

    report.tables["sinkhorn_probe"] = probes
    report.tables["sinkhorn_eps"] = per_eps
    report.tables["soft_beta"] = soft_beta_sweep(SOFT_BETAS, min(config.gradlab.sinkhorn_matrices, 10), K, 16,
                                                 rng.spawn("soft_beta"))
    return report


def feasibility_check(config: ExperimentConfig, rng: RngState, n_batches: int = 20) -> CheckReport:
    """CE symmetries, the cross-correlation rebase, the spectral floor and the VICReg conflict."""
    report = CheckReport("feasibility")
    rows = []
    for i in range(n_batches):
        stream = rng.spawn("ce", i)
        episode = _small_episode(stream.spawn("episode"))
        params = _small_params(stream)
        rebase = cc_rebase(params, episode)
        derivative, _ = rotation_orbit_derivative(params, episode, stream.spawn("orbit"))
        rows.append({
            "batch": i,
            "rotation_delta_ce": ce_rotation_check(params, episode, U=random_orthogonal(_SMALL_D, stream.spawn("U"))),
            "scale_delta_ce": max(ce_scale_check(params, episode, c) for c in (0.1, 10.0)),
            "row_scaling_delta_ce": row_scaling_control(params, episode),
            "orbit_derivative": abs(derivative),
            "off_diag_before": rebase.off_diag_before,
            "off_diag_after": rebase.off_diag_after,
            "rebase_delta_ce": rebase.delta_ce,
        })
    table = pd.DataFrame(rows)
    for column, invariant, tol in (("rotation_delta_ce", "ce_rotation_invariance", SYMMETRY_TOL),
                                   ("scale_delta_ce", "ce_scale_invariance", SYMMETRY_TOL),
                                   ("orbit_derivative", "ce_orbit_derivative", 1e-6),
                                   ("off_diag_after", "cc_rebase_off_diagonal", REBASE_TOL),
                                   ("rebase_delta_ce", "cc_rebase_delta_ce", SYMMETRY_TOL)):
        worst = table[column].max()
        report.record(invariant, worst, tol, worst <= tol)
    control = table["row_scaling_delta_ce"].min()
    report.record("row_scaling_control", control, SYMMETRY_TOL, control > SYMMETRY_TOL)

    floor_rows = []
    for d in (8, 16, 32):
        slacks = []
        for b in range(config.gradlab.spectral_batches):
            batch = rng.spawn("spectral", d, b).normal(size=(d + 4, d))
            slacks.append(spectral_floor_check(batch / np.linalg.norm(batch, axis=1, keepdims=True)).slack)
        equality = spectral_floor_check(random_orthogonal(d, rng.spawn("equality", d))).slack
        floor_rows.append({"d": d, "floor": spectral_floor(d), "min_slack": min(slacks),
                           "equality_slack": equality, "batches": len(slacks)})
    floors = pd.DataFrame(floor_rows)
    report.record("spectral_floor_lower_bound", floors["min_slack"].min(), -1e-9, floors["min_slack"].min() >= -1e-9)
    report.record("spectral_floor_equality", floors["equality_slack"].abs().max(), 1e-9,
                  floors["equality_slack"].abs().max() <= 1e-9)
    wide = spectral_floor(768)
    report.record("spectral_floor_768", wide, 766.0, abs(wide - 766.0) < 0.01)

    conflict_rows = []
    for seed in range(3):
        Y, labels = tight_clusters(4, 10, _SMALL_D, 0.05, rng.spawn("clusters", seed))
        conflict = vicreg_within_class_conflict(Y, labels)
        conflict_rows.append({"seed": seed, "mean_inner": conflict.mean_inner,
                              "fraction_negative": conflict.fraction_negative, "samples": conflict.samples})
    conflicts = pd.DataFrame(conflict_rows)
    report.record("vicreg_within_class_conflict", conflicts["mean_inner"].max(), 0.0,
                  bool((conflicts["mean_inner"] < 0).all()))

    report.tables["feasibility"] = table
    report.tables["spectral_floor"] = floors
    report.tables["vicreg_conflict"] = conflicts
    return report


def alignment_check(config: ExperimentConfig, rng: RngState) -> CheckReport:
    """Gradient alignment on benchmark episodes with freshly initialized parameters.

    Only the exact cases are pass/fail; the unit-reference values are
    reported for comparison with trained models.
    """
    report = CheckReport("alignment")
    z_q, z_c = genericity_construction()
    orthogonal = field_alignment(chamfer_grad(z_q, z_c))
    report.record("chamfer_construction_alignment", abs(orthogonal), 1e-12, abs(orthogonal) <= 1e-12)

    root = RngState(config.seed)
    split, renderer = build_benchmark(config, root)
    m, ev = config.model, config.evaluation
    params = EncoderParams.identity(m.dim, m.hidden_dim, root.spawn("init"), tau=m.initial_temperature,
                                    router_scale=m.router_init_scale)
    part = split.part("train")
    way = min(ev.way, len(part.class_ids))
    episodes = [sample_episode(split, part, way, ev.shot, ev.queries, renderer, rng.spawn("episode", i))
                for i in range(config.gradlab.alignment_episodes)]
    kappa, weight = config.matcher.kappa, 0.5

    rows, pairwise = [], []
    for kind, reference in (("holistic", "raw"), ("holistic", "unit"), ("ct", "unit")):
        result = alignment_metric(kind, params, episodes, kappa, weight, reference)
        rows.append({"score_kind": kind, "reference": reference, "mean_S": result.mean_S,
                     "pair_count": result.pair_count, "skipped_rows": result.skipped_rows,
                     "episodes": result.episode_count})
        K = result.pairwise.shape[0]
        pairwise += [{"score_kind": kind, "reference": reference, "slot_a": a, "slot_b": b,
                      "mean_cosine": float(result.pairwise[a, b])} for a in range(K) for b in range(K)]
    table = pd.DataFrame(rows)
    raw = float(table.loc[table["reference"] == "raw", "mean_S"].iloc[0])
    report.record("holistic_raw_collinear", abs(1.0 - raw), 1e-10, abs(1.0 - raw) <= 1e-10)
    report.tables["alignment"] = table
    report.tables["alignment_pairwise"] = pd.DataFrame(pairwise)
    return report


CHECKS = {
    "alignment": alignment_check,
    "rank": rank_check,
    "sinkhorn": sinkhorn_check,
    "feasibility": feasibility_check,
    "oracle": oracle_check,
}
