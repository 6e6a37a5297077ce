//! Runs registry experiments and writes their verdicts, tables and manifest.

use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use limitflow_core::semigroup::{ensemble_experiment, trotter_experiment, EnsembleReport, TrotterExperiment};
use limitflow_models::classical_limit::{
    classical_limit_experiment, heat_experiment, ClassicalReport, ExperimentKind, HeatExperimentReport,
};
use limitflow_models::diagnostics::{diagnostics_experiment, DiagnosticsReport};
use limitflow_models::fermion_rg::{fermion_rg_experiment, FermionReport};
use limitflow_models::mean_field::{mean_field_experiment, MeanFieldConfig, MeanFieldReport};
use limitflow_models::spin_chain::{spin_chain_experiment, SpinReport};
use limitflow_models::thompson::{thompson_experiment, ThompsonReport};

use crate::config::RunConfig;
use crate::output::{flatten, sha256_file, write_csv, write_json};
use crate::registry;
use crate::RunError;

pub const ARTIFACT_VERSION: &str = concat!("limitflow/", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Report {
    Diagnostics(DiagnosticsReport),
    Evolution(EnsembleReport),
    Trotter(TrotterExperiment),
    Heat(HeatExperimentReport),
    /// One report per time of the grid.
    Dynamics(Vec<ClassicalReport>),
    MeanField(MeanFieldReport),
    Spin(SpinReport),
    Fermion(FermionReport),
    Thompson(ThompsonReport),
}

impl Report {
    pub fn pass(&self) -> bool {
        match self {
            Report::Diagnostics(r) => r.pass,
            Report::Evolution(r) => r.pass,
            Report::Trotter(r) => r.pass,
            Report::Heat(r) => r.pass,
            Report::Dynamics(rs) => !rs.is_empty() && rs.iter().all(|r| r.pass),
            Report::MeanField(r) => r.pass,
            Report::Spin(r) => r.pass,
            Report::Fermion(r) => r.pass,
            Report::Thompson(r) => r.pass,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub id: String,
    pub seed: u64,
    pub tolerance: Option<f64>,
    pub pass: bool,
    pub report: Report,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub verdict: Verdict,
    pub files: Vec<String>,
    /// Wall time; reported on the console only, never written.
    pub elapsed: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentEntry {
    pub id: String,
    pub pass: bool,
    pub tolerance: Option<f64>,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub experiments: Vec<ExperimentEntry>,
    pub files: Vec<FileEntry>,
    pub pass: bool,
}

fn tolerance(cfg: &RunConfig, entry: &registry::Entry) -> Result<Option<f64>, RunError> {
    match (cfg.tolerances.get(entry.id), entry.default_tol) {
        (Some(_), None) => Err(RunError::Config(format!("experiment `{}` takes no tolerance", entry.id))),
        (Some(&t), Some(_)) if !(t > 0.0 && t.is_finite()) => {
            Err(RunError::Config(format!("tolerance for `{}` must be positive, got {t}", entry.id)))
        }
        (Some(&t), Some(_)) => Ok(Some(t)),
        (None, d) => Ok(d),
    }
}

/// Runs one experiment in memory.
pub fn run_one(cfg: &RunConfig, id: &str) -> Result<Verdict, RunError> {
    let entry = registry::lookup(id)?;
    let seed = cfg.require_seed()?;
    let tol = tolerance(cfg, entry)?;
    let trend = tol.unwrap_or(limitflow_core::report::TREND_TOL);
    let cl = &cfg.classical_limit;
    let dynamics = |kind: ExperimentKind| -> Result<Report, RunError> {
        if cl.t_grid.is_empty() {
            return Err(RunError::Config("classical_limit.t_grid is empty".into()));
        }
        let lindblad = kind == ExperimentKind::GaussianLindblad;
        let reports = cl
            .t_grid
            .iter()
            .map(|&t| Ok(classical_limit_experiment(kind, &cl.dynamics(t, lindblad)?)?))
            .collect::<Result<Vec<_>, RunError>>()?;
        Ok(Report::Dynamics(reports))
    };
    let report = match entry.id {
        "diagnostics" => {
            let dcfg = limitflow_models::diagnostics::DiagnosticsConfig { tol: trend, ..cfg.diagnostics.clone() };
            Report::Diagnostics(diagnostics_experiment(&dcfg, seed)?)
        }
        "evolution-check" => Report::Evolution(ensemble_experiment(&cfg.evolution_check, seed, trend)?),
        "trotter" => Report::Trotter(trotter_experiment(&cfg.trotter, seed)?),
        "classical-limit.heat" => Report::Heat(heat_experiment(&cl.heat(), trend)?),
        "classical-limit.ho" => dynamics(ExperimentKind::HamiltonianHo)?,
        "classical-limit.lindblad" => dynamics(ExperimentKind::GaussianLindblad)?,
        "mean-field" => {
            let mcfg = MeanFieldConfig { bracket_tol: trend, ..cfg.mean_field.clone() };
            Report::MeanField(mean_field_experiment(&mcfg)?)
        }
        "spin-chain" => Report::Spin(spin_chain_experiment(&cfg.spin_chain)?),
        "fermion-rg" => Report::Fermion(fermion_rg_experiment(&cfg.fermion_rg, trend)?),
        "thompson" => Report::Thompson(thompson_experiment(cfg.fermion_rg.thompson_scale_offset)?),
        other => unreachable!("registry id {other} has no runner"),
    };
    Ok(Verdict { id: entry.id.to_string(), seed, tolerance: tol, pass: report.pass(), report })
}

type Table = (&'static str, Vec<&'static str>, Vec<Vec<String>>);

fn s(x: impl ToString) -> String {
    x.to_string()
}

fn tag(x: &impl Serialize) -> String {
    match serde_json::to_value(x) {
        Ok(serde_json::Value::String(v)) => v,
        Ok(v) => v.to_string(),
        Err(_) => String::new(),
    }
}

/// Trails worth plotting, one CSV each.
fn tables(report: &Report) -> Vec<Table> {
    match report {
        Report::Diagnostics(r) => {
            let mut rows = vec![vec![
                s("spin"),
                s(r.spin.isometry_defect),
                s(r.spin.transitivity_defect),
                s(r.spin.basic_net_defect),
            ]];
            for w in &r.wavelets {
                rows.push(vec![
                    w.filter.clone(),
                    s(w.isometry_defect),
                    s(w.transitivity_defect),
                    s(w.basic_net_defect),
                ]);
            }
            vec![("checks", vec!["system", "isometry_defect", "transitivity_defect", "basic_net_defect"], rows)]
        }
        Report::Evolution(r) => {
            let rows = r.semigroup_gaps.iter().enumerate().map(|(i, (g, b))| vec![s(i + 1), s(g), s(b)]).collect();
            vec![("semigroup_gaps", vec!["level", "gap", "bound"], rows)]
        }
        Report::Trotter(r) => {
            let rows = r
                .seeded
                .ks
                .iter()
                .enumerate()
                .map(|(i, k)| vec![s(k), s(r.commuting.errors[i]), s(r.seeded.errors[i])])
                .collect();
            vec![("errors", vec!["k", "commuting", "seeded"], rows)]
        }
        Report::Heat(r) => {
            let rows = r
                .identity
                .iter()
                .map(|h| vec![s(h.hbar), s(h.cutoff), s(h.identity_defect), s(h.defect), s(h.fock_tail)])
                .collect();
            let soft = r
                .soft
                .entries
                .iter()
                .map(|e| vec![s(e.l), s(e.m), s(e.n), s(e.value)])
                .collect();
            vec![
                ("identity", vec!["hbar", "cutoff", "identity_defect", "heat_defect", "fock_tail"], rows),
                ("soft_transitivity", vec!["l", "m", "n", "defect"], soft),
            ]
        }
        Report::Dynamics(rs) => {
            let rows = rs
                .iter()
                .enumerate()
                .flat_map(|(i, r)| {
                    r.rows.iter().map(move |row| {
                        vec![s(i), tag(&r.kind), s(row.hbar), s(row.cutoff), s(row.error), s(row.blur_only)]
                    })
                })
                .collect();
            vec![("errors", vec!["t_index", "kind", "hbar", "cutoff", "l1_error", "blur_only"], rows)]
        }
        Report::MeanField(r) => {
            let mut out = Vec::new();
            if let Some(p) = &r.product {
                let rows = p.commutators.iter().map(|(n, v)| vec![s(n), s(v)]).collect();
                out.push(("commutators", vec!["n", "norm"], rows));
            }
            if let Some(f) = &r.flip {
                let rows = f.rows.iter().map(|x| vec![s(x.n), s(x.value), s(x.limit), s(x.defect)]).collect();
                out.push(("flip", vec!["n", "value", "limit", "defect"], rows));
            }
            if let Some(b) = &r.bracket {
                let rows = b
                    .rows
                    .iter()
                    .map(|x| vec![s(x.r[0]), s(x.r[1]), s(x.r[2]), s(x.extrapolant), s(x.oracle)])
                    .collect();
                out.push(("bracket", vec!["x1", "x2", "x3", "extrapolant", "oracle"], rows));
            }
            out
        }
        Report::Spin(r) => {
            let rows = r
                .boundary
                .iter()
                .flat_map(|b| {
                    b.rows.iter().map(move |x| {
                        vec![
                            s(b.t),
                            tag(&b.pair.0),
                            tag(&b.pair.1),
                            s(x.len),
                            s(x.defect),
                            s(x.oracle_defect),
                            s(x.oracle_gap),
                        ]
                    })
                })
                .collect();
            vec![("boundary", vec!["t", "first", "second", "length", "defect", "oracle_defect", "oracle_gap"], rows)]
        }
        Report::Fermion(r) => {
            let mut out = Vec::new();
            if let Some(k) = &r.kernel {
                let rows = k
                    .kernel_defects
                    .iter()
                    .zip(&k.dispersion_defects)
                    .map(|(a, b)| vec![s(a.label), s(a.value), s(b.value)])
                    .collect();
                out.push(("kernel", vec!["scale", "kernel_defect", "dispersion_defect"], rows));
            }
            if let Some(c) = &r.covariance {
                let rows = c.increments.iter().map(|x| vec![s(x.label), s(x.value)]).collect();
                out.push(("covariance_increments", vec!["scale", "increment"], rows));
            }
            let rows = r
                .dynamics
                .iter()
                .flat_map(|d| d.step_defects.iter().map(move |x| vec![s(d.m0), s(d.t), s(x.label), s(x.value)]))
                .collect();
            out.push(("dynamics", vec!["m0", "t", "scale", "step_defect"], rows));
            out
        }
        Report::Thompson(r) => {
            let rows = r.continuum_defects.iter().map(|(n, v)| vec![s(n), s(v)]).collect();
            vec![("continuum", vec!["scale", "defect"], rows)]
        }
    }
}

/// Writes `<out>/<id>/verdict.json`, `values.csv` and the trail tables.
fn write_outputs(verdict: &Verdict, out: &Path) -> Result<Vec<String>, RunError> {
    let dir = out.join(&verdict.id);
    std::fs::create_dir_all(&dir)?;
    let mut files = Vec::new();
    write_json(&dir.join("verdict.json"), verdict)?;
    files.push(format!("{}/verdict.json", verdict.id));
    let value = serde_json::to_value(verdict).map_err(|e| RunError::Io(e.to_string()))?;
    let rows: Vec<Vec<String>> = flatten(&value).into_iter().map(|(k, v)| vec![k, v]).collect();
    write_csv(&dir.join("values.csv"), &["key", "value"], &rows)?;
    files.push(format!("{}/values.csv", verdict.id));
    for (name, header, rows) in tables(&verdict.report) {
        write_csv(&dir.join(format!("{name}.csv")), &header, &rows)?;
        files.push(format!("{}/{name}.csv", verdict.id));
    }
    Ok(files)
}

/// Runs `ids` in order, writes every output under `out` and the manifest last.
pub fn run(cfg: &RunConfig, ids: &[&str], out: &Path) -> Result<(RunManifest, Vec<Outcome>), RunError> {
    let seed = cfg.require_seed()?;
    for id in ids {
        registry::lookup(id)?;
    }
    std::fs::create_dir_all(out)?;
    let mut outcomes = Vec::new();
    for id in ids {
        let start = Instant::now();
        let verdict = run_one(cfg, id)?;
        let elapsed = start.elapsed();
        let files = write_outputs(&verdict, out)?;
        outcomes.push(Outcome { verdict, files, elapsed });
    }
    let mut files = Vec::new();
    for path in outcomes.iter().flat_map(|o| &o.files) {
        let full = out.join(path);
        files.push(FileEntry { path: path.clone(), bytes: std::fs::metadata(&full)?.len(), sha256: sha256_file(&full)? });
    }
    files.sort_by(|a, b| a.path.cmp(&b.path));
    let experiments: Vec<ExperimentEntry> = outcomes
        .iter()
        .map(|o| ExperimentEntry {
            id: o.verdict.id.clone(),
            pass: o.verdict.pass,
            tolerance: o.verdict.tolerance,
            files: o.files.clone(),
        })
        .collect();
    let manifest = RunManifest {
        artifact_version: ARTIFACT_VERSION.to_string(),
        config_hash: cfg.hash(),
        seed,
        pass: experiments.iter().all(|e| e.pass),
        experiments,
        files,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok((manifest, outcomes))
}
