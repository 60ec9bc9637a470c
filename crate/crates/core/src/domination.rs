//! Dominated-splitting certificates: restricted norms, uniform ratio tests
//! along orbit windows, minimal certified powers, oblique projection norms,
//! and the trichotomy classifier (trivial spectrum / dominated / neither).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cocycle::{
    cocycle_product, finite_time_oseledec_splitting, joint_matrix, lyapunov_spectrum_qr,
    LyapunovSpectrum, SplittingField,
};
use crate::error::{Error, Result};
use crate::linalg;
use crate::systems::{apply_map, System, TorusPoint};

/// Minimal norm m(A) = smallest singular value = 1 / |A^-1|.
pub fn minimal_norm(a: &DMatrix<f64>) -> Result<f64> {
    linalg::smallest_singular_value(a)
}

/// Norm of A restricted to the subspace spanned by the orthonormal columns
/// of `basis`: the largest singular value of A * basis.
pub fn restricted_norm(a: &DMatrix<f64>, basis: &DMatrix<f64>) -> f64 {
    linalg::operator_norm(&(a * basis))
}

/// Minimal norm of A restricted to span(basis); errors when A * basis loses
/// rank.
pub fn restricted_minimal_norm(a: &DMatrix<f64>, basis: &DMatrix<f64>) -> Result<f64> {
    linalg::smallest_singular_value(&(a * basis))
}

/// How splittings are obtained at the other orbit points of a window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplittingScheme {
    /// Reuse the base-point frames everywhere. Exact for invariant splittings
    /// of linear systems, where the bundles do not depend on the point.
    Frozen,
    /// Push each bundle through the Jacobian (inverse Jacobian for negative
    /// indices) and re-orthonormalize.
    PushForward,
    /// Recompute the finite-time splitting at every orbit point.
    Recompute { horizon: usize },
}

/// Ratio test result over a symmetric orbit window.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DominationReport {
    /// The power of the map that was tested.
    pub tested_n: u32,
    /// Some(tested_n) exactly when worst_ratio <= 1/2.
    pub certified_n: Option<u32>,
    pub worst_ratio: f64,
    pub window: u32,
    /// (orbit index, |D g^N restricted to E| / m(D g^N restricted to F)).
    pub per_index_ratios: Vec<(i64, f64)>,
}

/// Splittings at f^t x for t in [-window, window], per the chosen scheme.
fn splittings_along_window(
    system: &System,
    splitting: &SplittingField,
    window: u32,
    scheme: SplittingScheme,
) -> Result<Vec<(i64, SplittingField)>> {
    let w = window as i64;
    let x = splitting.point().clone();
    let mut out: Vec<(i64, SplittingField)> = Vec::with_capacity(2 * window as usize + 1);
    match scheme {
        SplittingScheme::Frozen => {
            for t in -w..=w {
                let pt = apply_map(system, &x, t)?;
                let field = SplittingField::new(pt, splitting.e().clone(), splitting.f().clone())
                    .map_err(|e| unavailable(t, e))?;
                out.push((t, field));
            }
        }
        SplittingScheme::PushForward => {
            out.push((0, splitting.clone()));
            let mut cur = splitting.clone();
            for t in 1..=w {
                cur = push_forward(system, &cur).map_err(|e| unavailable(t, e))?;
                out.push((t, cur.clone()));
            }
            let mut cur = splitting.clone();
            for t in 1..=w {
                cur = push_backward(system, &cur).map_err(|e| unavailable(-t, e))?;
                out.push((-t, cur.clone()));
            }
            out.sort_by_key(|(t, _)| *t);
        }
        SplittingScheme::Recompute { horizon } => {
            for t in -w..=w {
                let pt = apply_map(system, &x, t)?;
                let field = finite_time_oseledec_splitting(system, &pt, horizon, splitting.dim_f())
                    .map_err(|e| unavailable(t, e))?;
                out.push((t, field));
            }
        }
    }
    Ok(out)
}

fn unavailable(orbit_index: i64, source: Error) -> Error {
    Error::SplittingUnavailable { orbit_index, reason: source.to_string() }
}

/// Pushes both bundles one step forward through the Jacobian.
pub fn push_forward(system: &System, splitting: &SplittingField) -> Result<SplittingField> {
    let j = system.jacobian(splitting.point());
    let e = linalg::orthonormalize(&(&j * splitting.e()))?;
    let f = linalg::orthonormalize(&(&j * splitting.f()))?;
    SplittingField::new(system.forward(splitting.point()), e, f)
}

/// Pulls both bundles one step back through the inverse Jacobian at the
/// preimage point.
pub fn push_backward(system: &System, splitting: &SplittingField) -> Result<SplittingField> {
    let prev = system.inverse(splitting.point());
    let j = system.jacobian(&prev);
    let e = linalg::orthonormalize(&linalg::solve_matrix(&j, splitting.e())?)?;
    let f = linalg::orthonormalize(&linalg::solve_matrix(&j, splitting.f())?)?;
    SplittingField::new(prev, e, f)
}

/// Tests the uniform ratio |D g^N|_E| / m(D g^N|_F) <= 1/2 at every orbit
/// index in [-window, window].
pub fn domination_ratio(
    system: &System,
    splitting: &SplittingField,
    n: u32,
    window: u32,
    scheme: SplittingScheme,
) -> Result<DominationReport> {
    if n == 0 {
        return Err(Error::InvalidParameter("power N must be >= 1".into()));
    }
    let fields = splittings_along_window(system, splitting, window, scheme)?;
    let mut per_index_ratios = Vec::with_capacity(fields.len());
    let mut worst = f64::NEG_INFINITY;
    for (t, field) in &fields {
        let product = cocycle_product(system, field.point(), n as usize)?;
        let top = restricted_norm(&product, field.e());
        let bottom = restricted_minimal_norm(&product, field.f())?;
        let ratio = top / bottom;
        worst = worst.max(ratio);
        per_index_ratios.push((*t, ratio));
    }
    let certified_n = if worst <= 0.5 { Some(n) } else { None };
    Ok(DominationReport { tested_n: n, certified_n, worst_ratio: worst, window, per_index_ratios })
}

/// Smallest N in [1, n_max] whose ratio test certifies, or None.
pub fn minimal_domination_n(
    system: &System,
    splitting: &SplittingField,
    n_max: u32,
    window: u32,
    scheme: SplittingScheme,
) -> Result<Option<u32>> {
    if n_max == 0 {
        return Err(Error::InvalidParameter("n_max must be >= 1".into()));
    }
    for n in 1..=n_max {
        let report = domination_ratio(system, splitting, n, window, scheme)?;
        if report.certified_n.is_some() {
            return Ok(Some(n));
        }
    }
    Ok(None)
}

/// The N-th power of a system as a first-class system; its descriptor
/// records (base, N).
pub fn power_system(system: &System, n: u32) -> Result<System> {
    if n == 0 {
        return Err(Error::InvalidParameter("power exponent must be >= 1".into()));
    }
    System::new(&crate::systems::SystemDescriptor::Power {
        base: Box::new(system.descriptor().clone()),
        exponent: n,
    })
}

/// Max norm of the two oblique projections of the splitting (onto E along F
/// and onto F along E). Equals 1 exactly for orthogonal complements and
/// grows as the bundles close up.
pub fn gamma_projection_norm(splitting: &SplittingField) -> Result<f64> {
    let joint = joint_matrix(splitting.e(), splitting.f());
    let det = joint.determinant().abs();
    if det <= 1e-8 {
        return Err(Error::DegenerateSplitting { det });
    }
    let k = splitting.dim_e();
    let d = joint.nrows();
    let inv = linalg::solve_matrix(&joint, &DMatrix::identity(d, d))?;
    let proj_e = splitting.e() * inv.rows(0, k);
    let proj_f = splitting.f() * inv.rows(k, d - k);
    Ok(linalg::operator_norm(&proj_e).max(linalg::operator_norm(&proj_f)))
}

/// Outcome of the classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DichotomyOutcome {
    /// All finite-time exponents are below the gap threshold in magnitude.
    TrivialSpectrum,
    /// A splitting with dim F = j passed the ratio test for the power N.
    Dominated { n: u32, j: usize },
    /// Spectrum is non-trivial but no examined index certified.
    Indeterminate,
}

/// Classifier verdict plus everything needed to audit it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DichotomyVerdict {
    pub outcome: DichotomyOutcome,
    pub spectrum: LyapunovSpectrum,
    /// Consecutive exponent gaps lambda_j - lambda_{j+1}, j = 1..d-1.
    pub gaps: Vec<f64>,
    /// Worst ratio found per examined index j at its best N.
    pub examined: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DichotomyParams {
    /// Spectrum horizon (>= 500).
    pub n: usize,
    pub qr_stride: usize,
    /// Largest power tried by the ratio test.
    pub n_max: u32,
    /// Orbit window for the ratio test.
    pub window: u32,
    /// Trivial-spectrum and gap-eligibility threshold.
    pub gap_threshold: f64,
    /// Horizon of the finite-time splittings (kept short so raw cocycle
    /// products stay in f64 range).
    pub split_horizon: usize,
}

impl Default for DichotomyParams {
    fn default() -> Self {
        DichotomyParams {
            n: 2000,
            qr_stride: 1,
            n_max: 20,
            window: 10,
            gap_threshold: 1e-2,
            split_horizon: 50,
        }
    }
}

/// Decides between trivial spectrum, certified domination at some (N, j),
/// and indeterminate. Deterministic in (system, x, params).
pub fn dichotomy_classify(
    system: &System,
    x: &TorusPoint,
    params: &DichotomyParams,
) -> Result<DichotomyVerdict> {
    if params.n < 500 {
        return Err(Error::InvalidParameter(format!("spectrum horizon must be >= 500, got {}", params.n)));
    }
    if params.gap_threshold <= 0.0 {
        return Err(Error::InvalidParameter("gap_threshold must be > 0".into()));
    }
    let spectrum = lyapunov_spectrum_qr(system, x, params.n, params.qr_stride)?;
    let d = spectrum.exponents.len();
    let gaps: Vec<f64> =
        (0..d - 1).map(|i| spectrum.exponents[i] - spectrum.exponents[i + 1]).collect();

    let max_abs = spectrum.exponents.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    if max_abs < params.gap_threshold {
        return Ok(DichotomyVerdict {
            outcome: DichotomyOutcome::TrivialSpectrum,
            spectrum,
            gaps,
            examined: Vec::new(),
        });
    }

    let mut examined = Vec::new();
    for j in 1..d {
        if gaps[j - 1] < params.gap_threshold {
            continue;
        }
        let splitting = match finite_time_oseledec_splitting(system, x, params.split_horizon, j) {
            Ok(s) => s,
            Err(Error::IndeterminateSplitting { .. }) => continue,
            Err(e) => return Err(e),
        };
        let scheme = SplittingScheme::Recompute { horizon: params.split_horizon };
        let mut best_ratio = f64::INFINITY;
        let mut certified = None;
        for n in 1..=params.n_max {
            match domination_ratio(system, &splitting, n, params.window, scheme) {
                Ok(report) => {
                    best_ratio = best_ratio.min(report.worst_ratio);
                    if report.certified_n.is_some() {
                        certified = Some(n);
                        break;
                    }
                }
                // A collapsing splitting somewhere in the window means this
                // index cannot certify; move on to the next one.
                Err(Error::SplittingUnavailable { .. }) | Err(Error::RankDeficient { .. }) => break,
                Err(e) => return Err(e),
            }
        }
        if best_ratio.is_finite() {
            examined.push((j, best_ratio));
        }
        if let Some(n) = certified {
            return Ok(DichotomyVerdict {
                outcome: DichotomyOutcome::Dominated { n, j },
                spectrum,
                gaps,
                examined,
            });
        }
    }
    Ok(DichotomyVerdict { outcome: DichotomyOutcome::Indeterminate, spectrum, gaps, examined })
}
