//! Task execution and artifact persistence. Every run writes its outputs
//! plus a manifest with content digests; artifact bytes depend only on
//! (config, seed, version), never on worker scheduling or wall-clock time.

use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use pesinlab_core::nalgebra::DMatrix;
use pesinlab_core::cocycle::{finite_time_oseledec_splitting, lyapunov_spectrum_qr, SplittingField};
use pesinlab_core::domination::{
    dichotomy_classify, domination_ratio, minimal_domination_n, DichotomyOutcome, SplittingScheme,
};
use pesinlab_core::entropy::{local_entropy_estimate, pesin_report, MeasureMethod, PesinConfig, PesinVerdict};
use pesinlab_core::graph_transform::{fit_linear_graph_in_bowen, propagate_along_bowen};
use pesinlab_core::systems::{make_system, sample_lebesgue, System, TorusPoint};
use pesinlab_core::{derive_seed, Error};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, TaskConfig};

pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

struct RunOutcome {
    artifacts: Vec<Artifact>,
    warning: Option<String>,
    summary: String,
}

#[derive(Serialize)]
pub struct ManifestFile {
    pub name: String,
    pub sha256: String,
}

#[derive(Serialize)]
pub struct RunManifest {
    pub config: Value,
    pub version: String,
    pub duration_seconds: f64,
    pub warning: Option<String>,
    pub files: Vec<ManifestFile>,
}

/// Runs the configured task, writes artifacts plus `manifest.json` to the
/// output directory, and returns the manifest and a printable summary.
pub fn run_experiment(config: &ExperimentConfig) -> Result<(RunManifest, String)> {
    let start = Instant::now();
    let system = make_system(&config.system).context("system construction failed")?;
    let outcome = match &config.task {
        TaskConfig::Lyap(t) => run_lyap(&system, config, t)?,
        TaskConfig::Dominate(t) => run_dominate(&system, config, t)?,
        TaskConfig::Dichotomy(t) => run_dichotomy(&system, config, t)?,
        TaskConfig::Bowen(t) => run_bowen(&system, config, t)?,
        TaskConfig::Graph(t) => run_graph(&system, config, t)?,
        TaskConfig::Pesin(t) => run_pesin(&system, config, t)?,
    };

    std::fs::create_dir_all(&config.out)
        .with_context(|| format!("cannot create output directory {}", config.out.display()))?;
    let mut files = Vec::new();
    for artifact in &outcome.artifacts {
        let path = config.out.join(&artifact.name);
        std::fs::write(&path, &artifact.bytes)
            .with_context(|| format!("cannot write {}", path.display()))?;
        files.push(ManifestFile { name: artifact.name.clone(), sha256: hex::encode(Sha256::digest(&artifact.bytes)) });
    }
    let manifest = RunManifest {
        config: config.to_value(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        duration_seconds: start.elapsed().as_secs_f64(),
        warning: outcome.warning,
        files,
    };
    let manifest_bytes = pretty_json(&manifest)?;
    std::fs::write(config.out.join("manifest.json"), manifest_bytes)
        .with_context(|| format!("cannot write manifest in {}", config.out.display()))?;
    Ok((manifest, outcome.summary))
}

fn pretty_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Config point (wrapped) or one Lebesgue draw from the run seed.
fn resolve_point(system: &System, config_point: &Option<Vec<f64>>, seed: u64) -> Result<TorusPoint> {
    match config_point {
        Some(coords) => Ok(TorusPoint::new(coords.clone())),
        None => Ok(sample_lebesgue(derive_seed(seed, 0x706f_696e_74), 1, system.dimension())?
            .pop()
            .expect("one sample requested")),
    }
}

fn run_lyap(system: &System, config: &ExperimentConfig, task: &crate::config::LyapTask) -> Result<RunOutcome> {
    let point = resolve_point(system, &task.point, config.seed)?;
    let spectrum = lyapunov_spectrum_qr(system, &point, task.n, task.qr_stride)?;
    let report = json!({
        "point": point,
        "exponents": spectrum.exponents,
        "horizon": spectrum.horizon,
        "residual": spectrum.residual,
        "qr_stride": task.qr_stride,
    });
    let summary = format!(
        "exponents {:?} (residual {:.2e})",
        spectrum.exponents.iter().map(|l| (l * 1e6).round() / 1e6).collect::<Vec<_>>(),
        spectrum.residual
    );
    Ok(RunOutcome {
        artifacts: vec![Artifact { name: "spectrum.json".into(), bytes: pretty_json(&report)? }],
        warning: None,
        summary,
    })
}

/// Splitting for domination and graph tasks: the finite-time construction
/// when it resolves, otherwise coordinate axes with a warning (an isometry
/// has no distinguished directions, but every ratio is still computable).
fn resolve_splitting(
    system: &System,
    point: &TorusPoint,
    horizon: usize,
    j: usize,
) -> Result<(SplittingField, &'static str, Option<String>)> {
    match finite_time_oseledec_splitting(system, point, horizon, j) {
        Ok(s) => Ok((s, "finite_time", None)),
        Err(Error::IndeterminateSplitting { gap, .. }) | Err(Error::RankDeficient { smallest: gap }) => {
            let d = system.dimension();
            let eye = DMatrix::<f64>::identity(d, d);
            let f = eye.columns(0, j).into_owned();
            let e = eye.columns(j, d - j).into_owned();
            let s = SplittingField::new(point.clone(), e, f)?;
            let warning = format!(
                "finite-time splitting indeterminate (gap {gap:.2e}); using coordinate axes"
            );
            Ok((s, "coordinate_axes", Some(warning)))
        }
        Err(e) => Err(e.into()),
    }
}

fn run_dominate(
    system: &System,
    config: &ExperimentConfig,
    task: &crate::config::DominateTask,
) -> Result<RunOutcome> {
    let point = resolve_point(system, &task.point, config.seed)?;
    let (splitting, source, mut warning) = resolve_splitting(system, &point, task.split_horizon, task.j)?;
    // Recomputing the splitting at each window point is stable at any
    // window size; transporting a contracting bundle forward is not. The
    // axis fallback has nothing to recompute, so it stays frozen.
    let (mut scheme, mut scheme_name) = if source == "coordinate_axes" {
        (SplittingScheme::Frozen, "frozen")
    } else {
        (SplittingScheme::Recompute { horizon: task.split_horizon }, "recompute")
    };
    let certified = match minimal_domination_n(system, &splitting, task.n_max, task.window, scheme) {
        Ok(c) => c,
        Err(Error::SplittingUnavailable { orbit_index, reason }) => {
            warning = Some(format!(
                "splitting recomputation failed at orbit index {orbit_index} ({reason}); using the frozen base splitting"
            ));
            scheme = SplittingScheme::Frozen;
            scheme_name = "frozen";
            minimal_domination_n(system, &splitting, task.n_max, task.window, scheme)?
        }
        Err(e) => return Err(e.into()),
    };
    let report_n = certified.unwrap_or(task.n_max);
    let report = domination_ratio(system, &splitting, report_n, task.window, scheme)?;
    if certified.is_none() && warning.is_none() {
        warning = Some(format!("no domination scale certified up to n_max = {}", task.n_max));
    }
    let body = json!({
        "point": point,
        "j": task.j,
        "split_horizon": task.split_horizon,
        "splitting_source": source,
        "scheme": scheme_name,
        "n_max": task.n_max,
        "window": task.window,
        "certified_n": certified,
        "report": report,
    });
    let summary = match certified {
        Some(n) => format!("domination certified at N = {n} (worst ratio {:.6})", report.worst_ratio),
        None => format!("no certification up to N = {} (worst ratio {:.6})", task.n_max, report.worst_ratio),
    };
    Ok(RunOutcome {
        artifacts: vec![Artifact { name: "domination.json".into(), bytes: pretty_json(&body)? }],
        warning,
        summary,
    })
}

fn run_dichotomy(
    system: &System,
    config: &ExperimentConfig,
    task: &crate::config::DichotomyTask,
) -> Result<RunOutcome> {
    let point = resolve_point(system, &task.point, config.seed)?;
    let verdict = dichotomy_classify(system, &point, &task.params)?;
    let warning = matches!(verdict.outcome, DichotomyOutcome::Indeterminate)
        .then(|| "classification indeterminate".to_string());
    let summary = match &verdict.outcome {
        DichotomyOutcome::TrivialSpectrum => "trivial spectrum".to_string(),
        DichotomyOutcome::Dominated { n, j } => format!("dominated at N = {n} with dim F = {j}"),
        DichotomyOutcome::Indeterminate => "indeterminate".to_string(),
    };
    let body = json!({ "point": point, "verdict": verdict });
    Ok(RunOutcome {
        artifacts: vec![Artifact { name: "dichotomy.json".into(), bytes: pretty_json(&body)? }],
        warning,
        summary,
    })
}

fn run_bowen(system: &System, config: &ExperimentConfig, task: &crate::config::BowenTask) -> Result<RunOutcome> {
    let point = resolve_point(system, &task.point, config.seed)?;
    let estimate =
        local_entropy_estimate(system, &point, task.delta, task.n_range, task.method, config.seed)?;
    let mut csv = String::from("n,measure,stderr,method\n");
    for rec in &estimate.records {
        csv.push_str(&format!("{},{},{},{}\n", rec.n, rec.measure, rec.standard_error, rec.method));
    }
    let summary = format!(
        "local entropy slope {:.4} over n in [{}, {}] (residual {:.2e})",
        estimate.slope, estimate.fit_range.0, estimate.fit_range.1, estimate.residual
    );
    Ok(RunOutcome {
        artifacts: vec![
            Artifact { name: "bowen.json".into(), bytes: pretty_json(&estimate)? },
            Artifact { name: "bowen.csv".into(), bytes: csv.into_bytes() },
        ],
        warning: None,
        summary,
    })
}

fn run_graph(system: &System, config: &ExperimentConfig, task: &crate::config::GraphTask) -> Result<RunOutcome> {
    let point = resolve_point(system, &task.point, config.seed)?;
    let (splitting, source, warning) = resolve_splitting(system, &point, task.split_horizon, task.j)?;
    let k = splitting.dim_e();
    let j = splitting.dim_f();
    // All-ones k x j matrix has operator norm sqrt(k j); scale to slope c.
    let slope = DMatrix::from_element(k, j, task.c / ((k * j) as f64).sqrt());
    let graph = fit_linear_graph_in_bowen(
        system,
        &splitting,
        &slope,
        task.n,
        task.delta,
        task.count,
        derive_seed(config.seed, 0x6772_6170_68),
    )?;
    let radius = graph.samples().iter().map(|s| s.u.norm()).fold(0.0, f64::max);
    let trace = propagate_along_bowen(system, &graph, task.n, task.delta)?;
    let mut csv = String::from("step,dispersion\n");
    for (step, d) in trace.dispersions.iter().enumerate() {
        csv.push_str(&format!("{step},{d}\n"));
    }
    let body = json!({
        "point": point,
        "c": task.c,
        "delta": task.delta,
        "n": task.n,
        "count": task.count,
        "j": task.j,
        "splitting_source": source,
        "radius": radius,
        "dispersions": trace.dispersions,
        "final_dispersion": trace.dispersions.last(),
    });
    let summary = format!(
        "dispersion {:.4} -> {:.4e} over {} steps",
        trace.dispersions.first().unwrap(),
        trace.dispersions.last().unwrap(),
        task.n
    );
    Ok(RunOutcome {
        artifacts: vec![
            Artifact { name: "graph.json".into(), bytes: pretty_json(&body)? },
            Artifact { name: "dispersion.csv".into(), bytes: csv.into_bytes() },
        ],
        warning,
        summary,
    })
}

fn run_pesin(system: &System, config: &ExperimentConfig, task: &crate::config::PesinTask) -> Result<RunOutcome> {
    let pesin_config = PesinConfig {
        delta: task.delta,
        points: task.points,
        n_range: task.n_range,
        spectrum_horizon: task.spectrum_horizon,
        qr_stride: task.qr_stride,
        gap_threshold: task.gap_threshold,
        method: task
            .method
            .unwrap_or_else(|| MeasureMethod::default_for_dimension(system.dimension(), task.delta)),
        tolerance: task.tolerance,
        inequality_slack: task.inequality_slack,
        seed: config.seed,
        workers: config.workers,
    };
    let report = pesin_report(system, &pesin_config)?;
    let warning = match &report.verdict {
        PesinVerdict::Inconclusive { reason } => Some(format!("inconclusive: {reason}")),
        _ => None,
    };
    let summary = match &report.verdict {
        PesinVerdict::FormulaHolds { tolerance } => format!(
            "formula holds within {tolerance}: lower {:.4}, upper {:.4}",
            report.mane_lower_bound, report.ruelle_upper_bound
        ),
        PesinVerdict::InequalityOnly { gap } => format!(
            "inequality only (gap {gap:.4}): lower {:.4}, upper {:.4}",
            report.mane_lower_bound, report.ruelle_upper_bound
        ),
        PesinVerdict::Inconclusive { .. } => "inconclusive".to_string(),
    };
    Ok(RunOutcome {
        artifacts: vec![Artifact { name: "pesin_report.json".into(), bytes: pretty_json(&report)? }],
        warning,
        summary,
    })
}

/// Flattens report files in `dir` into plot-ready two-column CSV series:
/// bowen.json -> bowen_plot.csv (n, -log measure) over the fit range, and
/// graph.json -> dispersion_plot.csv (step, dispersion).
pub fn emit_plot_data(dir: &Path) -> Result<Vec<String>> {
    let mut written = Vec::new();
    let bowen_path = dir.join("bowen.json");
    if bowen_path.exists() {
        let text = std::fs::read_to_string(&bowen_path)?;
        let estimate: pesinlab_core::entropy::BowenEstimate = serde_json::from_str(&text)
            .with_context(|| format!("cannot parse {}", bowen_path.display()))?;
        let mut csv = String::from("n,neg_log_measure\n");
        let (lo, hi) = estimate.fit_range;
        for rec in &estimate.records {
            if rec.n >= lo && rec.n <= hi && rec.measure > 0.0 {
                csv.push_str(&format!("{},{}\n", rec.n, -rec.measure.ln()));
            }
        }
        std::fs::write(dir.join("bowen_plot.csv"), csv)?;
        written.push("bowen_plot.csv".to_string());
    }
    let graph_path = dir.join("graph.json");
    if graph_path.exists() {
        let text = std::fs::read_to_string(&graph_path)?;
        let body: Value = serde_json::from_str(&text)
            .with_context(|| format!("cannot parse {}", graph_path.display()))?;
        let Some(trace) = body.get("dispersions").and_then(|v| v.as_array()) else {
            bail!("{} has no dispersion trace", graph_path.display());
        };
        let mut csv = String::from("step,dispersion\n");
        for (step, d) in trace.iter().enumerate() {
            csv.push_str(&format!("{step},{}\n", d.as_f64().unwrap_or(f64::NAN)));
        }
        std::fs::write(dir.join("dispersion_plot.csv"), csv)?;
        written.push("dispersion_plot.csv".to_string());
    }
    if written.is_empty() {
        bail!(
            "no report files in {}: expected bowen.json or graph.json (run the bowen or graph task first)",
            dir.display()
        );
    }
    Ok(written)
}
