//! Bowen-ball measure estimators and the entropy bookkeeping built on them:
//! local entropy via weighted slope fits of -log nu(B_n), slice measures
//! along the splitting, volume-distortion budgets, the averaged lower bound,
//! partition of points by expanding dimension, and the final report that
//! compares the lower bound against the exponent integral.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cocycle::{chi, lyapunov_spectrum_qr, SplittingField};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::linalg;
use crate::parallel::map_indexed;
use crate::systems::{
    check_volume_preserving, orbit, sample_lebesgue, torus_distance, System, SystemDescriptor,
    TorusPoint,
};

/// First step at which y leaves the Bowen ball B_n(delta, x), or None when
/// d(f^t x, f^t y) <= delta for every 0 <= t <= n.
pub fn bowen_exit_step(
    system: &System,
    x: &TorusPoint,
    y: &TorusPoint,
    n: usize,
    delta: f64,
) -> Option<usize> {
    assert!(delta > 0.0, "delta must be positive");
    let mut cx = x.clone();
    let mut cy = y.clone();
    for t in 0..=n {
        if torus_distance(&cx, &cy).expect("points share the system dimension") > delta {
            return Some(t);
        }
        if t < n {
            cx = system.forward(&cx);
            cy = system.forward(&cy);
        }
    }
    None
}

/// Membership test for the Bowen ball B_n(delta, x).
pub fn in_bowen_ball(system: &System, x: &TorusPoint, y: &TorusPoint, n: usize, delta: f64) -> bool {
    bowen_exit_step(system, x, y, n, delta).is_none()
}

/// Estimator choice for Bowen-ball Lebesgue measures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum MeasureMethod {
    /// Deterministic Riemann count over an axis-aligned grid of cell centers,
    /// `resolution` cells per axis. Dimension <= 2 only.
    Grid { resolution: u32 },
    /// Sequential nested sampling: stage ratios nu(B_{k+1}) / nu(B_k)
    /// estimated on survivor populations, replenished by resampling with
    /// Metropolis jitter (which preserves the uniform law on the stage set).
    NestedMc { population: usize, jitter: f64, moves: usize },
}

impl MeasureMethod {
    pub fn label(&self) -> &'static str {
        match self {
            MeasureMethod::Grid { .. } => "grid",
            MeasureMethod::NestedMc { .. } => "nested_mc",
        }
    }

    pub fn default_grid() -> Self {
        MeasureMethod::Grid { resolution: 4096 }
    }

    pub fn default_nested(delta: f64) -> Self {
        MeasureMethod::NestedMc { population: 4000, jitter: delta / 20.0, moves: 3 }
    }

    /// Grid for planar systems, nested sampling above dimension 2.
    pub fn default_for_dimension(dim: usize, delta: f64) -> Self {
        if dim <= 2 {
            MeasureMethod::default_grid()
        } else {
            MeasureMethod::default_nested(delta)
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            MeasureMethod::Grid { resolution } => {
                if *resolution < 16 {
                    return Err(Error::InvalidParameter("grid resolution must be >= 16".into()));
                }
            }
            MeasureMethod::NestedMc { population, jitter, moves: _ } => {
                if *population < 100 {
                    return Err(Error::InvalidParameter("population must be >= 100".into()));
                }
                if !(jitter > &0.0) {
                    return Err(Error::InvalidParameter("jitter must be positive".into()));
                }
            }
        }
        Ok(())
    }
}

/// One Bowen-ball measure estimate.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MeasureEstimate {
    pub estimate: f64,
    pub standard_error: f64,
}

/// Measure of one Bowen ball at depth n.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BowenRecord {
    pub n: usize,
    pub measure: f64,
    pub standard_error: f64,
    pub method: String,
}

fn validate_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta <= 0.25) {
        return Err(Error::InvalidParameter(format!("delta must be in (0, 0.25], got {delta}")));
    }
    Ok(())
}

/// Lebesgue volume of the d-ball of radius r (recursion V_d = V_{d-2} 2 pi
/// r^2 / d keeps it closed-form without a gamma function).
pub fn ball_volume(dim: usize, r: f64) -> f64 {
    match dim {
        0 => 1.0,
        1 => 2.0 * r,
        d => ball_volume(d - 2, r) * std::f64::consts::TAU * r * r / d as f64,
    }
}

/// Estimates nu(B_n(delta, x)) for every n in 0..=n_max in one pass.
/// Estimates are exactly nested for the grid and telescoping products for
/// nested sampling, so the monotonicity of true Bowen measures survives.
pub fn bowen_measure_curve(
    system: &System,
    x: &TorusPoint,
    n_max: usize,
    delta: f64,
    method: MeasureMethod,
    seed: u64,
) -> Result<Vec<BowenRecord>> {
    validate_delta(delta)?;
    method.validate()?;
    let raw = match method {
        MeasureMethod::Grid { resolution } => grid_curve(system, x, n_max, delta, resolution)?,
        MeasureMethod::NestedMc { population, jitter, moves } => {
            nested_curve(system, x, n_max, delta, population, jitter, moves, seed)?
        }
    };
    Ok(raw
        .into_iter()
        .enumerate()
        .map(|(n, (measure, standard_error))| BowenRecord {
            n,
            measure,
            standard_error,
            method: method.label().to_string(),
        })
        .collect())
}

/// Single-depth estimate of nu(B_n(delta, x)).
pub fn bowen_ball_measure(
    system: &System,
    x: &TorusPoint,
    n: usize,
    delta: f64,
    method: MeasureMethod,
    seed: u64,
) -> Result<MeasureEstimate> {
    let curve = bowen_measure_curve(system, x, n, delta, method, seed)?;
    let last = curve.last().expect("curve contains n = 0");
    Ok(MeasureEstimate { estimate: last.measure, standard_error: last.standard_error })
}

fn grid_curve(
    system: &System,
    x: &TorusPoint,
    n_max: usize,
    delta: f64,
    resolution: u32,
) -> Result<Vec<(f64, f64)>> {
    let dim = system.dimension();
    if dim > 2 {
        return Err(Error::GridUnsupportedDimension { dim });
    }
    let res = resolution as i64;
    let rf = resolution as f64;
    let track = orbit(system, x, n_max)?;
    let mut counts = vec![0u64; n_max + 1];

    // Only cells whose center can be within delta of x at step 0 matter.
    let margin = (delta * rf).ceil() as i64 + 1;
    let center: Vec<i64> = x.coords().iter().map(|c| (c * rf).floor() as i64).collect();
    let axis_range = |c: i64| -> Vec<i64> {
        if 2 * margin + 1 >= res {
            (0..res).collect()
        } else {
            (c - margin..=c + margin).map(|i| i.rem_euclid(res)).collect()
        }
    };

    let mut visit = |cell: &[i64]| {
        let mut y = TorusPoint::new(cell.iter().map(|&i| (i as f64 + 0.5) / rf).collect());
        for (t, anchor) in track.iter().enumerate() {
            if torus_distance(&y, anchor).expect("dims match") <= delta {
                counts[t] += 1;
                if t < n_max {
                    y = system.forward(&y);
                }
            } else {
                break;
            }
        }
    };

    match dim {
        1 => {
            for i in axis_range(center[0]) {
                visit(&[i]);
            }
        }
        2 => {
            for i in axis_range(center[0]) {
                for j in axis_range(center[1]) {
                    visit(&[i, j]);
                }
            }
        }
        _ => unreachable!(),
    }

    let total = rf.powi(dim as i32);
    // Discretization allowance: one cell width of boundary surface.
    let stderr = match dim {
        1 => 2.0 / rf,
        _ => std::f64::consts::TAU * delta / rf,
    };
    Ok(counts.into_iter().map(|c| (c as f64 / total, stderr)).collect())
}

#[allow(clippy::too_many_arguments)]
fn nested_curve(
    system: &System,
    x: &TorusPoint,
    n_max: usize,
    delta: f64,
    population: usize,
    jitter: f64,
    moves: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    let dim = system.dimension();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let track = orbit(system, x, n_max)?;

    // Stage 0: exact ball volume; points uniform in the ball by rejection.
    let mut pts: Vec<TorusPoint> = Vec::with_capacity(population);
    while pts.len() < population {
        let off: Vec<f64> = (0..dim).map(|_| rng.gen_range(-delta..delta)).collect();
        if off.iter().map(|v| v * v).sum::<f64>().sqrt() <= delta {
            pts.push(x.offset(&off));
        }
    }
    let mut imgs: Vec<TorusPoint> = pts.clone();
    let mut lineages: Vec<u32> = (0..population as u32).collect();

    let mut out = Vec::with_capacity(n_max + 1);
    let mut estimate = ball_volume(dim, delta);
    let mut relvar = 0.0;
    out.push((estimate, 0.0));

    for stage in 1..=n_max {
        for img in imgs.iter_mut() {
            *img = system.forward(img);
        }
        let survivors: Vec<usize> = (0..pts.len())
            .filter(|&i| torus_distance(&imgs[i], &track[stage]).expect("dims match") <= delta)
            .collect();
        if survivors.is_empty() {
            return Err(Error::SurvivorExtinction { stage });
        }
        let distinct = {
            let mut ids: Vec<u32> = survivors.iter().map(|&i| lineages[i]).collect();
            ids.sort_unstable();
            ids.dedup();
            ids.len()
        };
        let ratio = survivors.len() as f64 / pts.len() as f64;
        estimate *= ratio;
        if ratio < 1.0 {
            relvar += (1.0 - ratio) / (ratio * distinct as f64);
        }
        out.push((estimate, estimate * relvar.sqrt()));

        if stage == n_max {
            break;
        }
        // Replenish: bootstrap survivors, then Metropolis moves that accept
        // only inside B_stage (stationary law stays uniform on B_stage).
        let mut new_pts = Vec::with_capacity(population);
        let mut new_imgs = Vec::with_capacity(population);
        let mut new_lineages = Vec::with_capacity(population);
        for _ in 0..population {
            let pick = survivors[rng.gen_range(0..survivors.len())];
            let mut y = pts[pick].clone();
            let mut img = imgs[pick].clone();
            let lineage = lineages[pick];
            for _ in 0..moves {
                let off: Vec<f64> = (0..dim).map(|_| rng.gen_range(-jitter..jitter)).collect();
                let cand = y.offset(&off);
                if let Some(new_img) = bowen_image_if_inside(system, &track, &cand, stage, delta) {
                    y = cand;
                    img = new_img;
                }
            }
            new_pts.push(y);
            new_imgs.push(img);
            new_lineages.push(lineage);
        }
        pts = new_pts;
        imgs = new_imgs;
        lineages = new_lineages;
    }
    Ok(out)
}

/// f^stage(y) when y lies in B_stage(delta, x), else None.
fn bowen_image_if_inside(
    system: &System,
    track: &[TorusPoint],
    y: &TorusPoint,
    stage: usize,
    delta: f64,
) -> Option<TorusPoint> {
    let mut cur = y.clone();
    for (t, anchor) in track.iter().take(stage + 1).enumerate() {
        if torus_distance(&cur, anchor).expect("dims match") > delta {
            return None;
        }
        if t < stage {
            cur = system.forward(&cur);
        }
    }
    Some(cur)
}

/// Bowen-ball decay summary at one point: the measure table and the weighted
/// least-squares slope of -log nu(B_n) over the fit range.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BowenEstimate {
    pub x: TorusPoint,
    pub delta: f64,
    pub records: Vec<BowenRecord>,
    pub fit_range: (usize, usize),
    /// Local entropy estimate: d/dn of -log nu(B_n).
    pub slope: f64,
    /// Unweighted rms deviation of -log nu(B_n) from the fitted line.
    pub residual: f64,
}

/// Fits the local entropy at x from Bowen measures over n in
/// [n_range.0, n_range.1], weighting each depth by its estimated log-measure
/// variance.
pub fn local_entropy_estimate(
    system: &System,
    x: &TorusPoint,
    delta: f64,
    n_range: (usize, usize),
    method: MeasureMethod,
    seed: u64,
) -> Result<BowenEstimate> {
    let (n_min, n_max) = n_range;
    if n_min >= n_max || n_max - n_min < 3 {
        return Err(Error::InvalidParameter(format!(
            "fit range must span at least 3 depths, got [{n_min}, {n_max}]"
        )));
    }
    let records = bowen_measure_curve(system, x, n_max, delta, method, seed)?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut ws = Vec::new();
    for rec in &records[n_min..=n_max] {
        if rec.measure <= 0.0 {
            return Err(Error::EmptyEstimate { n: rec.n });
        }
        // var(log m) ~ (stderr / m)^2; exact entries get a tiny floor so the
        // weight stays finite.
        let rel = (rec.standard_error / rec.measure).max(1e-12);
        xs.push(rec.n as f64);
        ys.push(-rec.measure.ln());
        ws.push(1.0 / (rel * rel));
    }
    let (slope, _intercept, residual) = linalg::weighted_line_fit(&xs, &ys, &ws);
    Ok(BowenEstimate { x: x.clone(), delta, records, fit_range: n_range, slope, residual })
}

/// One-dimensional measure of the Bowen ball sliced along the F direction at
/// E-offset `offset_in_e`: midpoint Riemann count of
/// { t in [-delta, delta] : x + offset_in_e E + t F in B_n } times the cell
/// width. Planar systems with line bundles only.
pub fn slice_bowen_measure(
    system: &System,
    splitting: &SplittingField,
    offset_in_e: f64,
    n: usize,
    delta: f64,
    resolution: usize,
) -> Result<f64> {
    validate_delta(delta)?;
    if system.dimension() != 2 || splitting.dim_e() != 1 || splitting.dim_f() != 1 {
        return Err(Error::InvalidParameter(
            "slice measures need a planar system with line bundles".into(),
        ));
    }
    if resolution < 1000 {
        return Err(Error::InvalidParameter("slice resolution must be >= 1000".into()));
    }
    let x = splitting.point();
    let e = splitting.e().column(0).into_owned();
    let f = splitting.f().column(0).into_owned();
    let width = 2.0 * delta / resolution as f64;
    let mut count = 0usize;
    for i in 0..resolution {
        let t = -delta + (i as f64 + 0.5) * width;
        let off: Vec<f64> = (0..2).map(|r| offset_in_e * e[r] + t * f[r]).collect();
        let y = x.offset(&off);
        if in_bowen_ball(system, x, &y, n, delta) {
            count += 1;
        }
    }
    Ok(count as f64 * width)
}

/// Empirical sup of |log det(D_y f restricted to a tilted copy of F) -
/// log det(D_x f restricted to F)| over y within `radius` of x and tilts of
/// dispersion strictly below c. Quantifies how far the one-step volume
/// distortion can drift inside a chart.
#[allow(clippy::too_many_arguments)]
pub fn distortion_epsilon(
    system: &System,
    splitting: &SplittingField,
    radius: f64,
    c: f64,
    sample_count: usize,
    seed: u64,
) -> Result<f64> {
    if !(radius > 0.0 && radius <= 0.25) {
        return Err(Error::InvalidParameter(format!("radius must be in (0, 0.25], got {radius}")));
    }
    if c < 0.0 || sample_count == 0 {
        return Err(Error::InvalidParameter("need c >= 0 and sample_count >= 1".into()));
    }
    let x = splitting.point();
    let dim = system.dimension();
    let k = splitting.dim_e();
    let j = splitting.dim_f();
    let base = linalg::restricted_log_abs_det(&system.jacobian(x), splitting.f())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sup: f64 = 0.0;
    for _ in 0..sample_count {
        let y = loop {
            let off: Vec<f64> = (0..dim).map(|_| rng.gen_range(-radius..radius)).collect();
            if off.iter().map(|v| v * v).sum::<f64>().sqrt() <= radius {
                break x.offset(&off);
            }
        };
        // Tilted subspace: span(F + E S) is an (E, F)-graph of dispersion
        // |S| < c. S = 0 keeps the basis bitwise equal to F so the linear
        // baseline stays exactly zero.
        let basis = if c == 0.0 {
            splitting.f().clone()
        } else {
            let raw = DMatrix::from_fn(k, j, |_, _| rng.gen_range(-1.0..1.0f64));
            let norm = linalg::operator_norm(&raw);
            let scale = if norm > 0.0 { c * rng.gen::<f64>() / norm } else { 0.0 };
            let tilt = splitting.f() + splitting.e() * (raw * scale);
            linalg::orthonormalize(&tilt)?
        };
        let val = (linalg::restricted_log_abs_det(&system.jacobian(&y), &basis)? - base).abs();
        sup = sup.max(val);
    }
    Ok(sup)
}

/// Halves `initial_radius` until the distortion budget drops below
/// `target_eps`; the returned radius is the chart size matching that budget.
#[allow(clippy::too_many_arguments)]
pub fn distortion_radius_for(
    system: &System,
    splitting: &SplittingField,
    c: f64,
    target_eps: f64,
    sample_count: usize,
    seed: u64,
    initial_radius: f64,
) -> Result<f64> {
    if !(target_eps > 0.0) {
        return Err(Error::InvalidParameter("target_eps must be positive".into()));
    }
    let mut radius = initial_radius;
    for level in 0..60 {
        let eps = distortion_epsilon(system, splitting, radius, c, sample_count, derive_seed(seed, level))?;
        if eps < target_eps {
            return Ok(radius);
        }
        radius /= 2.0;
    }
    Err(Error::InvalidParameter(format!(
        "distortion stays above {target_eps:.3e} down to radius {radius:.3e}"
    )))
}

/// Local entropy at one sampled point, or the reason it was excluded.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PointEntropy {
    pub index: usize,
    pub x: TorusPoint,
    pub slope: Option<f64>,
    pub residual: Option<f64>,
    pub error: Option<String>,
}

/// Averaged local-entropy lower bound over Lebesgue points.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManeBound {
    pub bound: f64,
    pub standard_error: f64,
    pub per_point: Vec<PointEntropy>,
    pub excluded: usize,
}

/// Draws `point_count` Lebesgue points, fits local entropy at each (seeded
/// per point, so worker counts never change results) and averages. Failed
/// points are excluded and reported.
#[allow(clippy::too_many_arguments)]
pub fn mane_lower_bound(
    system: &System,
    delta: f64,
    point_count: usize,
    n_range: (usize, usize),
    method: MeasureMethod,
    seed: u64,
    workers: usize,
) -> Result<ManeBound> {
    let points = sample_lebesgue(seed, point_count, system.dimension())?;
    let results = map_indexed(workers, point_count, |i| {
        local_entropy_estimate(system, &points[i], delta, n_range, method, derive_seed(seed, i as u64))
    });
    let mut per_point = Vec::with_capacity(point_count);
    let mut slopes = Vec::new();
    for (i, res) in results.into_iter().enumerate() {
        match res {
            Ok(est) => {
                slopes.push(est.slope);
                per_point.push(PointEntropy {
                    index: i,
                    x: points[i].clone(),
                    slope: Some(est.slope),
                    residual: Some(est.residual),
                    error: None,
                });
            }
            Err(e) => per_point.push(PointEntropy {
                index: i,
                x: points[i].clone(),
                slope: None,
                residual: None,
                error: Some(e.to_string()),
            }),
        }
    }
    if slopes.is_empty() {
        return Err(Error::AllPointsFailed { count: point_count });
    }
    let (bound, standard_error) = mean_and_sem(&slopes);
    Ok(ManeBound { bound, standard_error, per_point, excluded: point_count - slopes.len() })
}

fn mean_and_sem(values: &[f64]) -> (f64, f64) {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

/// Partition of sampled points by the count of finite-time exponents above
/// -gap_threshold (the expanding dimension class).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SigmaPartition {
    pub counts: BTreeMap<usize, usize>,
    pub total: usize,
}

impl SigmaPartition {
    /// Class fractions. The largest class absorbs the float rounding
    /// remainder so the weights sum to exactly 1.0.
    pub fn weights(&self) -> BTreeMap<usize, f64> {
        let mut weights = BTreeMap::new();
        if self.total == 0 {
            return weights;
        }
        let biggest = self
            .counts
            .iter()
            .max_by_key(|(_, &c)| c)
            .map(|(&j, _)| j)
            .expect("non-empty partition");
        let mut rest = 0.0;
        for (&j, &c) in &self.counts {
            if j != biggest {
                let w = c as f64 / self.total as f64;
                weights.insert(j, w);
                rest += w;
            }
        }
        weights.insert(biggest, 1.0 - rest);
        weights
    }
}

/// Classifies `samples` Lebesgue points by expanding dimension at spectrum
/// horizon n.
pub fn sigma_partition(
    system: &System,
    samples: usize,
    n: usize,
    gap_threshold: f64,
    seed: u64,
) -> Result<SigmaPartition> {
    if gap_threshold <= 0.0 {
        return Err(Error::InvalidParameter("gap_threshold must be > 0".into()));
    }
    let points = sample_lebesgue(seed, samples, system.dimension())?;
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for p in &points {
        let spec = lyapunov_spectrum_qr(system, p, n, 1)?;
        let j = spec.exponents.iter().filter(|&&l| l >= -gap_threshold).count();
        *counts.entry(j).or_insert(0) += 1;
    }
    Ok(SigmaPartition { counts, total: samples })
}

/// Verdict of the entropy comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum PesinVerdict {
    /// |lower - upper| within the declared tolerance.
    FormulaHolds { tolerance: f64 },
    /// Lower bound sits below the upper bound by more than the tolerance.
    InequalityOnly { gap: f64 },
    /// Estimates are unusable or mutually inconsistent.
    Inconclusive { reason: String },
}

/// Parameters of the full entropy comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PesinConfig {
    pub delta: f64,
    pub points: usize,
    pub n_range: (usize, usize),
    pub spectrum_horizon: usize,
    pub qr_stride: usize,
    pub gap_threshold: f64,
    pub method: MeasureMethod,
    /// Two-sided tolerance for declaring the formula to hold.
    pub tolerance: f64,
    /// One-sided slack allowed on the inequality check beyond 3 standard
    /// errors.
    pub inequality_slack: f64,
    pub seed: u64,
    /// Scheduling hint only; results never depend on it, so it stays out of
    /// the serialized report.
    #[serde(skip)]
    pub workers: usize,
}

impl PesinConfig {
    pub fn default_for_dimension(dim: usize) -> Self {
        let delta = 0.1;
        PesinConfig {
            delta,
            points: 20,
            n_range: (2, 6),
            spectrum_horizon: 1000,
            qr_stride: 1,
            gap_threshold: 1e-2,
            method: MeasureMethod::default_for_dimension(dim, delta),
            tolerance: 0.1,
            inequality_slack: 0.02,
            seed: 0,
            workers: 1,
        }
    }
}

/// Full output of the entropy comparison at one system.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PesinReport {
    pub system: SystemDescriptor,
    /// Average local-entropy slope (entropy lower bound).
    pub mane_lower_bound: f64,
    pub mane_standard_error: f64,
    /// Average of the nonnegative finite-time exponents (entropy upper
    /// bound).
    pub ruelle_upper_bound: f64,
    /// Average of the summed leading exponents, with the per-point expanding
    /// dimension chosen by the partition rule.
    pub chi_integral: f64,
    /// Fraction of points per expanding dimension class.
    pub sigma_weights: BTreeMap<usize, f64>,
    /// Mean local entropy per expanding dimension class.
    pub class_lower_bounds: BTreeMap<usize, f64>,
    pub excluded_points: usize,
    pub verdict: PesinVerdict,
    pub config: PesinConfig,
}

/// Runs the full comparison: local-entropy lower bound versus exponent-sum
/// upper bound over a shared set of Lebesgue points.
pub fn pesin_report(system: &System, config: &PesinConfig) -> Result<PesinReport> {
    if !system.volume_preserving() {
        return Err(Error::InvalidParameter("system does not claim volume preservation".into()));
    }
    let worst = check_volume_preserving(system, 100, derive_seed(config.seed, u64::MAX))?;
    if worst > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "volume-preservation check failed: worst |log |det Df|| = {worst:.3e}"
        )));
    }
    if config.points == 0 {
        return Err(Error::InvalidParameter("points must be >= 1".into()));
    }
    if config.tolerance <= 0.0 || config.inequality_slack < 0.0 {
        return Err(Error::InvalidParameter("tolerance must be positive".into()));
    }

    let points = sample_lebesgue(config.seed, config.points, system.dimension())?;
    struct PointOutcome {
        exponents: Option<Vec<f64>>,
        entropy: std::result::Result<f64, String>,
    }
    let outcomes = map_indexed(config.workers, config.points, |i| {
        let spectrum =
            lyapunov_spectrum_qr(system, &points[i], config.spectrum_horizon, config.qr_stride);
        let entropy = local_entropy_estimate(
            system,
            &points[i],
            config.delta,
            config.n_range,
            config.method,
            derive_seed(config.seed, i as u64),
        );
        PointOutcome {
            exponents: spectrum.ok().map(|s| s.exponents),
            entropy: entropy.map(|e| e.slope).map_err(|e| e.to_string()),
        }
    });

    let mut slopes = Vec::new();
    let mut ruelle_terms = Vec::new();
    let mut chi_terms = Vec::new();
    let mut class_members: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut excluded = 0usize;
    for outcome in &outcomes {
        let (Some(exps), Ok(slope)) = (&outcome.exponents, &outcome.entropy) else {
            excluded += 1;
            continue;
        };
        let j = exps.iter().filter(|&&l| l >= -config.gap_threshold).count();
        let spectrum = crate::cocycle::LyapunovSpectrum {
            exponents: exps.clone(),
            horizon: config.spectrum_horizon,
            residual: 0.0,
        };
        ruelle_terms.push(exps.iter().filter(|&&l| l >= 0.0).sum::<f64>());
        chi_terms.push(chi(&spectrum, j)?);
        slopes.push(*slope);
        class_members.entry(j).or_default().push(*slope);
    }

    if slopes.is_empty() {
        return Ok(PesinReport {
            system: system.descriptor().clone(),
            mane_lower_bound: f64::NAN,
            mane_standard_error: f64::NAN,
            ruelle_upper_bound: f64::NAN,
            chi_integral: f64::NAN,
            sigma_weights: BTreeMap::new(),
            class_lower_bounds: BTreeMap::new(),
            excluded_points: excluded,
            verdict: PesinVerdict::Inconclusive { reason: "every sampled point failed".into() },
            config: config.clone(),
        });
    }

    let counts: BTreeMap<usize, usize> =
        class_members.iter().map(|(&j, v)| (j, v.len())).collect();
    let partition = SigmaPartition { counts, total: slopes.len() };
    let sigma_weights = partition.weights();
    let class_lower_bounds: BTreeMap<usize, f64> = class_members
        .iter()
        .map(|(&j, v)| (j, v.iter().sum::<f64>() / v.len() as f64))
        .collect();
    // Aggregate the lower bound classwise (weights times class means); with
    // a shared point set this telescopes to the plain average.
    let mane_lower_bound: f64 =
        sigma_weights.iter().map(|(j, w)| w * class_lower_bounds[j]).sum();
    let (_, mane_standard_error) = mean_and_sem(&slopes);
    let ruelle_upper_bound = ruelle_terms.iter().sum::<f64>() / ruelle_terms.len() as f64;
    let chi_integral = chi_terms.iter().sum::<f64>() / chi_terms.len() as f64;

    let budget = 3.0 * mane_standard_error + config.inequality_slack;
    let verdict = if mane_lower_bound > ruelle_upper_bound + budget {
        PesinVerdict::Inconclusive {
            reason: format!(
                "lower bound {mane_lower_bound:.4} exceeds upper bound {ruelle_upper_bound:.4} beyond the {budget:.4} budget"
            ),
        }
    } else if (mane_lower_bound - ruelle_upper_bound).abs() <= config.tolerance {
        PesinVerdict::FormulaHolds { tolerance: config.tolerance }
    } else {
        PesinVerdict::InequalityOnly { gap: ruelle_upper_bound - mane_lower_bound }
    };

    Ok(PesinReport {
        system: system.descriptor().clone(),
        mane_lower_bound,
        mane_standard_error,
        ruelle_upper_bound,
        chi_integral,
        sigma_weights,
        class_lower_bounds,
        excluded_points: excluded,
        verdict,
        config: config.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::make_system;
    use approx::assert_relative_eq;

    fn cat() -> System {
        make_system(&SystemDescriptor::CatMap).unwrap()
    }

    fn cat_eigensplitting(x: TorusPoint) -> SplittingField {
        let v = (5.0f64.sqrt() - 1.0) / 2.0;
        let norm = (1.0 + v * v).sqrt();
        let f = DMatrix::from_column_slice(2, 1, &[1.0 / norm, v / norm]);
        let e = DMatrix::from_column_slice(2, 1, &[-v / norm, 1.0 / norm]);
        SplittingField::new(x, e, f).unwrap()
    }

    fn cat_lambda() -> f64 {
        (3.0 + 5.0f64.sqrt()) / 2.0
    }

    #[test]
    fn contracting_offsets_stay_in_bowen_balls() {
        let sys = cat();
        let x = TorusPoint::new(vec![0.3, 0.8]);
        let s = cat_eigensplitting(x.clone());
        let delta = 0.05;
        let e = s.e().column(0);
        let y = x.offset(&[0.9 * delta * e[0], 0.9 * delta * e[1]]);
        assert!(in_bowen_ball(&sys, &x, &y, 20, delta));
        let f = s.f().column(0);
        let z = x.offset(&[0.9 * delta * f[0], 0.9 * delta * f[1]]);
        assert!(!in_bowen_ball(&sys, &x, &z, 20, delta));
        assert_eq!(bowen_exit_step(&sys, &x, &z, 20, delta), Some(1));
    }

    #[test]
    fn bowen_membership_is_nested_exhaustively() {
        // Exhaustive over a coarse grid: membership at n + 1 implies
        // membership at n, for every cell and every depth.
        let sys = cat();
        let x = TorusPoint::new(vec![0.3, 0.8]);
        let delta = 0.1;
        let res = 64;
        for i in 0..res {
            for j in 0..res {
                let y = TorusPoint::new(vec![
                    (i as f64 + 0.5) / res as f64,
                    (j as f64 + 0.5) / res as f64,
                ]);
                let mut previous = true;
                for n in 0..8 {
                    let inside = in_bowen_ball(&sys, &x, &y, n, delta);
                    assert!(previous || !inside, "membership not nested at n = {n}");
                    previous = inside;
                }
            }
        }
    }

    #[test]
    fn grid_measure_of_plain_ball_matches_area() {
        let sys = cat();
        let x = TorusPoint::new(vec![0.37, 0.58]);
        let est = bowen_ball_measure(&sys, &x, 0, 0.05, MeasureMethod::Grid { resolution: 4096 }, 0)
            .unwrap();
        let expect = std::f64::consts::PI * 0.05 * 0.05;
        assert!((est.estimate - expect).abs() <= 1e-4, "got {}", est.estimate);
    }

    #[test]
    fn identity_like_systems_have_constant_curves() {
        // A rotation is an isometry: B_n = B_0 for all n, slope 0.
        let sys = make_system(&SystemDescriptor::Rotation { angles: vec![0.3, 0.7] }).unwrap();
        let x = TorusPoint::new(vec![0.4, 0.9]);
        let curve =
            bowen_measure_curve(&sys, &x, 50, 0.05, MeasureMethod::Grid { resolution: 512 }, 0)
                .unwrap();
        for rec in &curve {
            assert_eq!(rec.measure, curve[0].measure);
        }
        let est = local_entropy_estimate(
            &sys,
            &x,
            0.05,
            (0, 50),
            MeasureMethod::Grid { resolution: 512 },
            0,
        )
        .unwrap();
        assert!(est.slope.abs() <= 2e-2, "slope {}", est.slope);
    }

    #[test]
    fn grid_curves_decrease_monotonically() {
        let sys = cat();
        let x = TorusPoint::new(vec![0.37, 0.58]);
        let curve =
            bowen_measure_curve(&sys, &x, 6, 0.1, MeasureMethod::Grid { resolution: 2048 }, 0)
                .unwrap();
        for w in curve.windows(2) {
            assert!(w[1].measure <= w[0].measure * (1.0 + 3.0 * w[0].standard_error));
            assert!(w[1].measure <= w[0].measure, "grid counts are exactly nested");
        }
    }

    #[test]
    fn cat_grid_ratio_approximates_inverse_eigenvalue() {
        let sys = cat();
        let x = TorusPoint::new(vec![0.37, 0.58]);
        let curve =
            bowen_measure_curve(&sys, &x, 6, 0.1, MeasureMethod::Grid { resolution: 4096 }, 0)
                .unwrap();
        let ratio = curve[6].measure / curve[5].measure;
        let expect = 1.0 / cat_lambda();
        assert!((ratio - expect).abs() <= 0.15 * expect, "ratio {ratio} vs {expect}");
    }

    #[test]
    fn nested_mc_matches_grid_within_three_sigma() {
        let sys = cat();
        let x = TorusPoint::new(vec![0.37, 0.58]);
        let grid =
            bowen_measure_curve(&sys, &x, 5, 0.1, MeasureMethod::Grid { resolution: 4096 }, 0)
                .unwrap();
        let mc = bowen_measure_curve(
            &sys,
            &x,
            5,
            0.1,
            MeasureMethod::NestedMc { population: 4000, jitter: 0.005, moves: 3 },
            7,
        )
        .unwrap();
        for n in 0..=5 {
            let sigma = (grid[n].standard_error.powi(2) + mc[n].standard_error.powi(2)).sqrt();
            let diff = (grid[n].measure - mc[n].measure).abs();
            assert!(diff <= 3.0 * sigma.max(1e-6), "n = {n}: diff {diff:.3e}, sigma {sigma:.3e}");
        }
    }

    #[test]
    fn nested_mc_is_deterministic_per_seed() {
        let sys = cat();
        let x = TorusPoint::new(vec![0.37, 0.58]);
        let method = MeasureMethod::NestedMc { population: 500, jitter: 0.005, moves: 2 };
        let a = bowen_measure_curve(&sys, &x, 4, 0.1, method, 9).unwrap();
        let b = bowen_measure_curve(&sys, &x, 4, 0.1, method, 9).unwrap();
        for (ra, rb) in a.iter().zip(&b) {
            assert_eq!(ra.measure, rb.measure);
            assert_eq!(ra.standard_error, rb.standard_error);
        }
    }

    #[test]
    fn grid_rejects_high_dimensions_and_nested_handles_them() {
        let sys = make_system(&SystemDescriptor::Block {
            blocks: vec![SystemDescriptor::CatMap, SystemDescriptor::Rotation { angles: vec![0.3] }],
        })
        .unwrap();
        let x = TorusPoint::new(vec![0.3, 0.8, 0.5]);
        let err = bowen_ball_measure(&sys, &x, 2, 0.1, MeasureMethod::Grid { resolution: 256 }, 0);
        assert!(matches!(err, Err(Error::GridUnsupportedDimension { dim: 3 })));
        let est = bowen_ball_measure(
            &sys,
            &x,
            2,
            0.1,
            MeasureMethod::NestedMc { population: 1000, jitter: 0.005, moves: 2 },
            3,
        )
        .unwrap();
        assert!(est.estimate > 0.0);
    }

    #[test]
    fn slice_measure_shrinks_by_the_eigenvalue_power() {
        let sys = cat();
        let s = cat_eigensplitting(TorusPoint::new(vec![0.3, 0.8]));
        let delta = 0.05;
        let full = slice_bowen_measure(&sys, &s, 0.0, 0, delta, 4000).unwrap();
        assert_relative_eq!(full, 2.0 * delta, epsilon = 1e-12);
        for n in [3usize, 5] {
            let got = slice_bowen_measure(&sys, &s, 0.0, n, delta, 200_000).unwrap();
            let expect = 2.0 * delta * cat_lambda().powi(-(n as i32));
            assert!(
                (got - expect).abs() <= 0.05 * expect,
                "n = {n}: got {got:.6e}, expect {expect:.6e}"
            );
        }
    }

    #[test]
    fn distortion_is_exactly_zero_for_linear_systems_without_tilt() {
        let sys = cat();
        let s = cat_eigensplitting(TorusPoint::new(vec![0.3, 0.8]));
        let eps = distortion_epsilon(&sys, &s, 0.1, 0.0, 1000, 5).unwrap();
        assert_eq!(eps, 0.0);
    }

    #[test]
    fn distortion_with_tilts_matches_dense_tilt_oracle() {
        // For the cat map the tilt response has the closed form
        // (1/2) log((lambda_u^2 + s^2 lambda_s^2) / ((1 + s^2) lambda_u^2)).
        let sys = cat();
        let s = cat_eigensplitting(TorusPoint::new(vec![0.3, 0.8]));
        let c = 0.3;
        let got = distortion_epsilon(&sys, &s, 0.05, c, 100_000, 11).unwrap();
        let lu = cat_lambda();
        let ls = 1.0 / lu;
        let mut oracle: f64 = 0.0;
        let grid = 200_000;
        for i in 0..grid {
            let t = -c + 2.0 * c * i as f64 / (grid - 1) as f64;
            let val = 0.5 * ((lu * lu + t * t * ls * ls) / ((1.0 + t * t) * lu * lu)).ln();
            oracle = oracle.max(val.abs());
        }
        assert!((got - oracle).abs() <= 1e-3, "got {got:.6}, oracle {oracle:.6}");
    }

    #[test]
    fn distortion_radius_search_terminates_on_perturbed_cat() {
        // Tilting by dispersion c contributes a radius-independent floor
        // (about 0.02 at c = 0.2 here), so the target must sit above it for
        // the radius bisection to have anything left to control.
        let sys = make_system(&SystemDescriptor::PerturbedCat { epsilon: 0.05 }).unwrap();
        let x = TorusPoint::new(vec![0.3, 0.8]);
        let s = crate::cocycle::finite_time_oseledec_splitting(&sys, &x, 40, 1).unwrap();
        let radius = distortion_radius_for(&sys, &s, 0.2, 0.05, 2000, 3, 0.25).unwrap();
        assert!(radius > 1e-4 && radius <= 0.25);
        let eps = distortion_epsilon(&sys, &s, radius, 0.2, 2000, derive_seed(3, 0)).unwrap();
        assert!(eps < 0.06, "eps {eps}");

        let hopeless = distortion_radius_for(&sys, &s, 0.2, 1e-4, 500, 3, 0.25);
        assert!(matches!(hopeless, Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn sigma_partition_weights_sum_to_one_exactly() {
        let sys = cat();
        let part = sigma_partition(&sys, 30, 1000, 1e-2, 4).unwrap();
        assert_eq!(part.counts.get(&1), Some(&30));
        assert_eq!(part.weights().values().sum::<f64>(), 1.0);

        // Synthetic partitions with awkward fractions still sum exactly.
        let mut counts = BTreeMap::new();
        counts.insert(1, 1);
        counts.insert(2, 1);
        counts.insert(3, 1);
        let p = SigmaPartition { counts, total: 3 };
        assert_eq!(p.weights().values().sum::<f64>(), 1.0);
    }

    #[test]
    fn rotation_points_all_have_full_neutral_dimension() {
        let sys = make_system(&SystemDescriptor::Rotation { angles: vec![0.3, 0.7] }).unwrap();
        let part = sigma_partition(&sys, 10, 1000, 1e-2, 4).unwrap();
        assert_eq!(part.counts.get(&2), Some(&10));
    }

    #[test]
    fn pesin_report_on_cat_confirms_formula() {
        let sys = cat();
        let mut config = PesinConfig::default_for_dimension(2);
        config.points = 8;
        config.seed = 21;
        let report = pesin_report(&sys, &config).unwrap();
        assert_eq!(report.verdict, PesinVerdict::FormulaHolds { tolerance: 0.1 });
        let expect = cat_lambda().ln();
        assert!((report.ruelle_upper_bound - expect).abs() <= 1e-6);
        assert!((report.mane_lower_bound - expect).abs() <= 0.1);
        assert!((report.chi_integral - expect).abs() <= 1e-6);
        assert_eq!(report.sigma_weights.get(&1), Some(&1.0));
        assert_eq!(report.excluded_points, 0);
    }

    #[test]
    fn pesin_report_on_rotation_is_zero_zero() {
        let sys = make_system(&SystemDescriptor::Rotation { angles: vec![0.37, 0.58] }).unwrap();
        let mut config = PesinConfig::default_for_dimension(2);
        config.points = 6;
        config.seed = 33;
        let report = pesin_report(&sys, &config).unwrap();
        assert_eq!(report.verdict, PesinVerdict::FormulaHolds { tolerance: 0.1 });
        assert!(report.ruelle_upper_bound.abs() <= 2e-2);
        assert!(report.mane_lower_bound.abs() <= 2e-2);
    }

    #[test]
    fn pesin_report_is_schedule_independent() {
        let sys = cat();
        let mut config = PesinConfig::default_for_dimension(2);
        config.points = 4;
        config.seed = 9;
        config.workers = 1;
        let one = pesin_report(&sys, &config).unwrap();
        config.workers = 4;
        let four = pesin_report(&sys, &config).unwrap();
        assert_eq!(one.mane_lower_bound, four.mane_lower_bound);
        assert_eq!(one.ruelle_upper_bound, four.ruelle_upper_bound);
    }

    #[test]
    fn mane_bound_reports_failed_points() {
        // Depth 8 grid scans on the cat map at delta 0.02 starve some cells;
        // the estimator must survive partial failure.
        let sys = cat();
        let bound = mane_lower_bound(
            &sys,
            0.02,
            4,
            (4, 8),
            MeasureMethod::Grid { resolution: 1024 },
            2,
            1,
        );
        match bound {
            Ok(b) => assert_eq!(b.per_point.len(), 4),
            Err(Error::AllPointsFailed { count }) => assert_eq!(count, 4),
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn power_scale_coherence_of_local_entropy() {
        let sys = cat();
        let doubled = crate::domination::power_system(&sys, 2).unwrap();
        let x = TorusPoint::new(vec![0.37, 0.58]);
        let base = local_entropy_estimate(&sys, &x, 0.1, (2, 6), MeasureMethod::default_grid(), 0)
            .unwrap();
        let powered =
            local_entropy_estimate(&doubled, &x, 0.1, (1, 4), MeasureMethod::default_grid(), 0)
                .unwrap();
        let ratio = powered.slope / base.slope;
        assert!((ratio - 2.0).abs() <= 0.3, "scale ratio {ratio}");
    }
}
