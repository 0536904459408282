"""End-to-end study pipeline: ensemble generation, simulation, feature
assembly, model training, and report emission.

Artifacts live under the output directory:

    networks/net_<id>.json        one document per percolating network
    sims/n<id>_k<rate>/           per-simulation results, history, ledger
    features/dataset.csv          the feature table (one row per
                                  network x rate x fracture)
    report/                       tables, SVG plots, summary

Every stage records the config hash and is skipped on rerun when the hash
matches (resumability). One global seed fans out to per-network seeds via
numpy SeedSequence spawn keys, so reruns and worker counts do not change
results.
"""

from __future__ import annotations

import json
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import dataset as ds
from . import forest as rf
from .config import StudyConfig
from .graphs import graph_to_edge_list, to_graph, topological_features
from .network import (
    GenerationParams,
    generate_network,
    geometric_features,
    network_from_json,
    network_to_json,
)
from .pipeflow import (
    build_pipe_model,
    flow_dump_rows,
    hydro_features,
    network_volume_per_year,
    solve_flow,
)
from .reactive import (
    ChemistryConstants,
    PermeabilityLaw,
    RunControls,
    history_csv_rows,
    init_state,
    mass_ledger_summary,
    results_csv_rows,
    run_to_quasi_steady,
)

MAX_CANDIDATE_FACTOR = 50


@dataclass
class EnsembleSummary:
    generated: list[int] = field(default_factory=list)
    skipped_disconnected: list[int] = field(default_factory=list)
    simulated: list[str] = field(default_factory=list)
    reused: list[str] = field(default_factory=list)
    failed: dict[str, str] = field(default_factory=dict)

    @property
    def has_failures(self) -> bool:
        return bool(self.failed)


def _ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _write_meta(path: str, cfg_hash: str, extra: dict | None = None) -> None:
    doc = {"config_hash": cfg_hash}
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)


def _meta_matches(path: str, cfg_hash: str) -> bool:
    if not os.path.exists(path):
        return False
    try:
        with open(path) as fh:
            return json.load(fh).get("config_hash") == cfg_hash
    except (OSError, json.JSONDecodeError):
        return False


def network_seed(global_seed: int, candidate: int) -> int:
    """Splittable per-network seed derived from the global seed."""
    ss = np.random.SeedSequence(entropy=global_seed, spawn_key=(candidate,))
    return int(ss.generate_state(1, np.uint64)[0] >> 1)


def generation_params(cfg: StudyConfig) -> GenerationParams:
    return GenerationParams(side_length=cfg.side_length, radius=cfg.radius,
                            target_p32=cfg.target_p32, aperture=cfg.aperture,
                            margin=cfg.margin)


def chemistry_constants(cfg: StudyConfig) -> ChemistryConstants:
    return ChemistryConstants(quartz_density=cfg.quartz_density)


def permeability_law(cfg: StudyConfig) -> PermeabilityLaw:
    return PermeabilityLaw(exponent=cfg.perm_a,
                           critical_porosity=cfg.perm_phi_c,
                           f_min=cfg.perm_f_min,
                           area_porosity_exponent=cfg.n_prime)


def run_controls(cfg: StudyConfig) -> RunControls:
    return RunControls(horizon_years=cfg.horizon_years, tol=cfg.qss_tol,
                       window=cfg.qss_window,
                       dt_initial_years=cfg.dt_initial_years,
                       dt_max_years=cfg.dt_max_years,
                       max_vo_loss=cfg.max_vo_loss)


def generate_stage(cfg: StudyConfig, out_dir: str,
                   summary: EnsembleSummary | None = None) -> EnsembleSummary:
    """Generate n_networks percolating networks, skipping disconnected draws."""
    summary = summary or EnsembleSummary()
    net_dir = _ensure_dir(os.path.join(out_dir, "networks"))
    meta_path = os.path.join(net_dir, "meta.json")
    cfg_hash = cfg.config_hash()
    if _meta_matches(meta_path, cfg_hash):
        with open(meta_path) as fh:
            meta = json.load(fh)
        if all(os.path.exists(os.path.join(net_dir, f"net_{i:04d}.json"))
               for i in meta["network_ids"]):
            summary.generated = list(meta["network_ids"])
            summary.skipped_disconnected = list(meta["skipped"])
            return summary
    params = generation_params(cfg)
    candidate = 0
    while len(summary.generated) < cfg.n_networks:
        if candidate >= MAX_CANDIDATE_FACTOR * cfg.n_networks:
            raise RuntimeError(
                "too many disconnected draws; check target_p32 vs percolation")
        seed = network_seed(cfg.seed, candidate)
        net = generate_network(params, seed)
        if not net.percolates:
            summary.skipped_disconnected.append(candidate)
            candidate += 1
            continue
        path = os.path.join(net_dir, f"net_{candidate:04d}.json")
        with open(path, "w") as fh:
            fh.write(network_to_json(net))
        if cfg.dump_graphs:
            with open(path.replace(".json", ".edges"), "w") as fh:
                fh.write(graph_to_edge_list(to_graph(net)))
        summary.generated.append(candidate)
        candidate += 1
    _write_meta(meta_path, cfg_hash, {
        "network_ids": summary.generated,
        "skipped": summary.skipped_disconnected,
        "seed_scheme": "SeedSequence(seed, spawn_key=(candidate,))",
    })
    return summary


def _sim_dir_name(network_id: int, rate: float) -> str:
    return f"n{network_id:04d}_k{rate:g}"


def _simulate_job(payload: dict) -> dict:
    """One (network, rate constant) simulation; runs in a worker process."""
    t0 = time.time()
    try:
        with open(payload["network_path"]) as fh:
            net = network_from_json(fh.read())
        cfg = StudyConfig(**payload["config"])
        rate = payload["rate_constant"]
        state = init_state(net, rate, chemistry_constants(cfg),
                           permeability_law(cfg))
        result = run_to_quasi_steady(state, run_controls(cfg))
        sim_dir = _ensure_dir(payload["sim_dir"])
        with open(os.path.join(sim_dir, "results.csv"), "w") as fh:
            fh.write("\n".join(results_csv_rows(result)) + "\n")
        with open(os.path.join(sim_dir, "history.csv"), "w") as fh:
            fh.write("\n".join(history_csv_rows(result)) + "\n")
        ledger = mass_ledger_summary(result.state)
        worst = 0.0
        for e in result.state.ledger:
            scale = max(e.dissolved, e.exported, e.imported, 1e-30)
            worst = max(worst, abs(e.flux_residual) / scale)
        ledger["worst_step_flux_residual_rel"] = worst
        ledger["steps"] = result.steps
        ledger["reached_horizon"] = result.reached_horizon
        ledger["final_time_years"] = result.state.time / 3.1536e7
        with open(os.path.join(sim_dir, "ledger.json"), "w") as fh:
            json.dump(ledger, fh, indent=1, sort_keys=True)
        flow = solve_flow(build_pipe_model(net), network_volume_per_year(net))
        with open(os.path.join(sim_dir, "flow.csv"), "w") as fh:
            fh.write("\n".join(flow_dump_rows(flow, net, rate)) + "\n")
        _write_meta(os.path.join(sim_dir, "meta.json"), payload["config_hash"],
                    {"network_id": payload["network_id"],
                     "rate_constant": rate,
                     "wall_seconds": time.time() - t0})
        return {"name": payload["name"], "ok": True}
    except Exception:
        return {"name": payload["name"], "ok": False,
                "error": traceback.format_exc()}


def simulate_stage(cfg: StudyConfig, out_dir: str,
                   summary: EnsembleSummary) -> EnsembleSummary:
    """Run every (network, rate constant) simulation, reusing artifacts."""
    sims_dir = _ensure_dir(os.path.join(out_dir, "sims"))
    cfg_hash = cfg.config_hash()
    cfg_dict = {f: getattr(cfg, f) for f in cfg.__dataclass_fields__}
    jobs = []
    for nid in summary.generated:
        for rate in cfg.rate_constants:
            name = _sim_dir_name(nid, rate)
            sim_dir = os.path.join(sims_dir, name)
            if _meta_matches(os.path.join(sim_dir, "meta.json"), cfg_hash):
                summary.reused.append(name)
                continue
            jobs.append({
                "name": name,
                "network_id": nid,
                "network_path": os.path.join(out_dir, "networks",
                                             f"net_{nid:04d}.json"),
                "rate_constant": rate,
                "sim_dir": sim_dir,
                "config": cfg_dict,
                "config_hash": cfg_hash,
            })
    workers = cfg.effective_workers()
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_simulate_job, jobs))
    else:
        outcomes = [_simulate_job(j) for j in jobs]
    for res in outcomes:
        if res["ok"]:
            summary.simulated.append(res["name"])
        else:
            summary.failed[res["name"]] = res["error"]
    return summary


def features_stage(cfg: StudyConfig, out_dir: str,
                   summary: EnsembleSummary) -> str:
    """Assemble the dataset CSV from network, flow, and simulation artifacts.

    Graph and geometric features are computed once per network; the
    hydrological features reuse the initial-state flow solve (Q and Pe do
    not depend on the rate constant, the Damkohler numbers do).
    """
    feat_dir = _ensure_dir(os.path.join(out_dir, "features"))
    csv_path = os.path.join(feat_dir, "dataset.csv")
    meta_path = os.path.join(feat_dir, "meta.json")
    cfg_hash = cfg.config_hash()
    if _meta_matches(meta_path, cfg_hash) and os.path.exists(csv_path):
        return csv_path
    rows: list[dict] = []
    for nid in summary.generated:
        net_path = os.path.join(out_dir, "networks", f"net_{nid:04d}.json")
        with open(net_path) as fh:
            net = network_from_json(fh.read())
        topo = topological_features(net)
        geom = geometric_features(net)
        flow = solve_flow(build_pipe_model(net), network_volume_per_year(net))
        for rate in cfg.rate_constants:
            name = _sim_dir_name(nid, rate)
            if name in summary.failed:
                continue
            hydro = hydro_features(flow, net, rate)
            res_path = os.path.join(out_dir, "sims", name, "results.csv")
            remaining = _read_results_csv(res_path)
            for f in sorted(net.fractures, key=lambda f: f.id):
                frac_res = remaining[f.id]
                row = {"network_id": float(nid), "fracture_id": float(f.id),
                       "rate_constant": rate,
                       "remaining_fraction": frac_res[1],
                       "remaining_volume": frac_res[0] * frac_res[1]}
                row.update(topo[f.id])
                row.update(geom[f.id])
                row.update(hydro[f.id])
                rows.append(row)
    table = ds.FeatureTable.from_rows(rows)
    table.validate()
    table.to_csv(csv_path)
    _write_meta(meta_path, cfg_hash, {"rows": table.n_rows})
    return csv_path


def _read_results_csv(path: str) -> dict[int, tuple[float, float]]:
    """fracture_id -> (V_o, remaining_fraction)."""
    out: dict[int, tuple[float, float]] = {}
    with open(path) as fh:
        header = fh.readline()
        assert header.strip() == "fracture_id,V_o,V_final,remaining_fraction"
        for line in fh:
            fid, v_o, _, frac = line.strip().split(",")
            out[int(fid)] = (float(v_o), float(frac))
    return out


def run_ensemble(cfg: StudyConfig, out_dir: str | None = None
                 ) -> tuple[EnsembleSummary, str]:
    """generate -> simulate -> features; returns (summary, dataset path)."""
    out = _ensure_dir(out_dir or cfg.effective_output_dir())
    summary = generate_stage(cfg, out)
    summary = simulate_stage(cfg, out, summary)
    csv_path = features_stage(cfg, out, summary)
    return summary, csv_path


# ---------------------------------------------------------------------------
# model training

@dataclass
class ModelScore:
    model: str
    variant: str
    r2_train: float
    r2_test: float
    oob: float


@dataclass
class PerRateScore:
    rate_constant: float
    r2_train: float
    r2_test: float
    n_train: int
    n_test: int
    y_test: np.ndarray
    yhat_test: np.ndarray
    y_train: np.ndarray
    yhat_train: np.ndarray


@dataclass
class StudyReport:
    scores: list[ModelScore]
    importances: dict[str, rf.ImportanceReport]
    per_rate: list[PerRateScore]
    correlation: rf.CorrelationMatrix
    grid: rf.GridSearchResult | None
    provenance: dict


def base_params(cfg: StudyConfig) -> rf.ForestParams:
    return rf.ForestParams(
        n_estimators=cfg.base_n_estimators, max_depth=cfg.base_max_depth,
        max_features=cfg.base_max_features,
        min_samples_leaf=cfg.base_min_samples_leaf,
        min_samples_split=cfg.base_min_samples_split, seed=cfg.forest_seed)


def optimized_params(cfg: StudyConfig) -> rf.ForestParams:
    return rf.ForestParams(
        n_estimators=cfg.opt_n_estimators, max_depth=cfg.opt_max_depth,
        max_features=cfg.opt_max_features,
        min_samples_leaf=cfg.opt_min_samples_leaf,
        min_samples_split=cfg.opt_min_samples_split, seed=cfg.forest_seed + 1)


def train_models(table: ds.FeatureTable, cfg: StudyConfig,
                 n_jobs: int | None = None) -> StudyReport:
    """Base and optimized RF-1/2/3 plus the four per-rate-constant models."""
    t0 = time.time()
    table.validate()
    n_jobs = n_jobs or cfg.effective_workers()
    train_mask, test_mask = ds.train_test_split(
        table, cfg.split_fraction, seed=cfg.forest_seed,
        by_network=cfg.split_by_network)
    y = table.target()
    scores: list[ModelScore] = []
    importances: dict[str, rf.ImportanceReport] = {}
    for model_name, features in ds.FEATURE_SETS.items():
        x = table.matrix(features)
        for variant, params in (("base", base_params(cfg)),
                                ("optimized", optimized_params(cfg))):
            model = rf.fit_forest(x[train_mask], y[train_mask], features,
                                  params, n_jobs=n_jobs)
            r2_train = rf.r2_score(y[train_mask],
                                   rf.predict(model, x[train_mask]))
            r2_test = rf.r2_score(y[test_mask], rf.predict(model, x[test_mask]))
            oob = rf.oob_score(model, x[train_mask], y[train_mask])
            scores.append(ModelScore(model=model_name, variant=variant,
                                     r2_train=r2_train, r2_test=r2_test,
                                     oob=oob))
            if variant == "optimized":
                importances[model_name] = rf.permutation_importance(
                    model, x[train_mask], y[train_mask],
                    repeats=cfg.importance_repeats, seed=cfg.forest_seed + 2,
                    n_jobs=n_jobs)
    per_rate: list[PerRateScore] = []
    x_all = table.matrix(ds.FEATURE_COLUMNS)
    rates = table.columns["rate_constant"]
    for rate in cfg.rate_constants:
        sel = rates == rate
        tr = sel & train_mask
        te = sel & test_mask
        if tr.sum() < 2 or te.sum() < 2:
            continue
        model = rf.fit_forest(x_all[tr], y[tr], ds.FEATURE_COLUMNS,
                              optimized_params(cfg), n_jobs=n_jobs)
        yhat_tr = rf.predict(model, x_all[tr])
        yhat_te = rf.predict(model, x_all[te])
        per_rate.append(PerRateScore(
            rate_constant=rate, r2_train=rf.r2_score(y[tr], yhat_tr),
            r2_test=rf.r2_score(y[te], yhat_te),
            n_train=int(tr.sum()), n_test=int(te.sum()),
            y_test=y[te], yhat_test=yhat_te, y_train=y[tr], yhat_train=yhat_tr))
    corr_cols = {name: table.columns[name] for name in ds.FEATURE_COLUMNS}
    corr_cols[ds.TARGET_COLUMN] = y
    correlation = rf.correlation_matrix(corr_cols)
    grid = None
    if cfg.run_grid_search:
        grid_list = rf.expand_grid(
            cfg.grid_n_estimators, cfg.grid_max_depth, cfg.grid_max_features,
            cfg.grid_min_samples_leaf, cfg.grid_min_samples_split,
            seed=cfg.forest_seed)
        grid = rf.grid_search(
            x_all[train_mask], y[train_mask], ds.FEATURE_COLUMNS, grid_list,
            folds=cfg.grid_folds, seed=cfg.forest_seed,
            groups=table.groups()[train_mask] if cfg.split_by_network else None,
            n_jobs=n_jobs)
    provenance = {
        "config_hash": cfg.config_hash(),
        "forest_seed": cfg.forest_seed,
        "rows": table.n_rows,
        "train_rows": int(train_mask.sum()),
        "test_rows": int(test_mask.sum()),
        "split_by_network": cfg.split_by_network,
        "wall_seconds": time.time() - t0,
    }
    return StudyReport(scores=scores, importances=importances,
                       per_rate=per_rate, correlation=correlation, grid=grid,
                       provenance=provenance)


# ---------------------------------------------------------------------------
# report emission

def report_stage(study: StudyReport, out_dir: str) -> list[str]:
    """Emit CSV tables, SVG plots, and a plain-text summary."""
    rep_dir = _ensure_dir(os.path.join(out_dir, "report"))
    written: list[str] = []

    def _save(name: str, text: str) -> None:
        path = os.path.join(rep_dir, name)
        with open(path, "w") as fh:
            fh.write(text)
        written.append(path)

    lines = ["model,variant,r2_train,r2_test,oob_score"]
    for s in study.scores:
        lines.append(f"{s.model},{s.variant},{s.r2_train!r},{s.r2_test!r},"
                     f"{s.oob!r}")
    _save("table2.csv", "\n".join(lines) + "\n")

    for model_name, imp in study.importances.items():
        lines = ["feature,importance,normalized_share"]
        order = np.argsort(-imp.importance, kind="stable")
        for i in order:
            lines.append(f"{imp.feature_names[i]},{float(imp.importance[i])!r},"
                         f"{float(imp.normalized[i])!r}")
        _save(f"importance_{model_name}.csv", "\n".join(lines) + "\n")

    lines = ["rate_constant,r2_train,r2_test,n_train,n_test"]
    for p in study.per_rate:
        lines.append(f"{p.rate_constant:g},{p.r2_train!r},{p.r2_test!r},"
                     f"{p.n_train},{p.n_test}")
    _save("per_rate_r2.csv", "\n".join(lines) + "\n")

    corr = study.correlation
    lines = ["feature," + ",".join(corr.feature_names)]
    for i, name in enumerate(corr.feature_names):
        lines.append(name + "," + ",".join(repr(float(v))
                                           for v in corr.matrix[i]))
    _save("correlation_matrix.csv", "\n".join(lines) + "\n")

    if study.grid is not None:
        lines = ["n_estimators,max_depth,max_features,min_samples_leaf,"
                 "min_samples_split,mean_score"]
        for entry in study.grid.cv_table:
            p = entry["params"]
            lines.append(f"{p.n_estimators},{p.max_depth},{p.max_features},"
                         f"{p.min_samples_leaf},{p.min_samples_split},"
                         f"{entry['mean_score']!r}")
        _save("grid_search.csv", "\n".join(lines) + "\n")

    written.extend(_emit_plots(study, rep_dir))
    _save("summary.txt", _summary_text(study))
    with open(os.path.join(rep_dir, "provenance.json"), "w") as fh:
        json.dump(study.provenance, fh, indent=1, sort_keys=True)
    written.append(os.path.join(rep_dir, "provenance.json"))
    return written


def _emit_plots(study: StudyReport, rep_dir: str) -> list[str]:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    written = []
    for model_name, imp in study.importances.items():
        order = np.argsort(-imp.importance, kind="stable")
        names = [imp.feature_names[i] for i in order]
        vals = imp.importance[order]
        fig, ax = plt.subplots(figsize=(7, 4))
        ax.bar(range(len(names)), vals, color="#444488")
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=60, ha="right", fontsize=7)
        ax.set_ylabel("OOB score drop")
        ax.set_title(f"Permutation importance, {model_name} (optimized)")
        fig.tight_layout()
        path = os.path.join(rep_dir, f"importance_{model_name}.svg")
        fig.savefig(path)
        plt.close(fig)
        written.append(path)

    corr = study.correlation
    fig, ax = plt.subplots(figsize=(7, 6))
    im = ax.imshow(corr.matrix, vmin=-1, vmax=1, cmap="RdBu_r")
    ax.set_xticks(range(len(corr.feature_names)))
    ax.set_xticklabels(corr.feature_names, rotation=80, fontsize=6)
    ax.set_yticks(range(len(corr.feature_names)))
    ax.set_yticklabels(corr.feature_names, fontsize=6)
    fig.colorbar(im, ax=ax, shrink=0.8)
    ax.set_title("Feature correlation matrix")
    fig.tight_layout()
    path = os.path.join(rep_dir, "correlation_matrix.svg")
    fig.savefig(path)
    plt.close(fig)
    written.append(path)

    for p in study.per_rate:
        fig, axes = plt.subplots(1, 2, figsize=(8, 4), sharex=True,
                                 sharey=True)
        for ax, (yy, hh, label, color) in zip(axes, [
                (p.y_train, p.yhat_train, "train", "#7b2d8b"),
                (p.y_test, p.yhat_test, "test", "#e07b28")]):
            ax.plot([0, 1], [0, 1], "k--", lw=0.8)
            ax.scatter(yy, hh, s=4, alpha=0.4, color=color)
            r2 = p.r2_train if label == "train" else p.r2_test
            ax.set_title(f"{label}, R2 = {r2:.3f}", fontsize=9)
            ax.set_xlabel("actual remaining fraction")
        axes[0].set_ylabel("predicted")
        fig.suptitle(f"k = {p.rate_constant:g} mol m^-2 s^-1")
        fig.tight_layout()
        path = os.path.join(rep_dir, f"scatter_k{p.rate_constant:g}.svg")
        fig.savefig(path)
        plt.close(fig)
        written.append(path)
    return written


def _summary_text(study: StudyReport) -> str:
    out = ["fracnet study summary", "=" * 40, ""]
    out.append("Model scores (R2 train / test / OOB):")
    for s in study.scores:
        out.append(f"  {s.model:5s} {s.variant:9s} {s.r2_train:7.4f} "
                   f"{s.r2_test:7.4f} {s.oob:7.4f}")
    out.append("")
    for model_name, imp in study.importances.items():
        top = imp.ranking()[:3]
        pretty = ", ".join(f"{n} ({v:.4f})" for n, v in top)
        out.append(f"Top features {model_name}: {pretty}")
    out.append("")
    if study.per_rate:
        out.append("Per-rate-constant models (all features):")
        for p in study.per_rate:
            out.append(f"  k = {p.rate_constant:g}: train {p.r2_train:.4f}, "
                       f"test {p.r2_test:.4f}")
    if study.grid is not None:
        bp = study.grid.best_params
        out.append("")
        out.append(f"Grid search winner: n_estimators={bp.n_estimators}, "
                   f"max_depth={bp.max_depth}, max_features={bp.max_features},"
                   f" min_samples_leaf={bp.min_samples_leaf}, "
                   f"min_samples_split={bp.min_samples_split} "
                   f"(CV R2 = {study.grid.best_score:.4f})")
    out.append("")
    out.append(f"Provenance: {json.dumps(study.provenance, sort_keys=True)}")
    return "\n".join(out) + "\n"


def run_all(cfg: StudyConfig, out_dir: str | None = None
            ) -> tuple[EnsembleSummary, StudyReport]:
    out = _ensure_dir(out_dir or cfg.effective_output_dir())
    summary, csv_path = run_ensemble(cfg, out)
    table = ds.FeatureTable.from_csv(csv_path)
    study = train_models(table, cfg)
    report_stage(study, out)
    return summary, study
