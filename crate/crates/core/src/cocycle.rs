//! The derivative cocycle along orbits: raw matrix products, QR-factored
//! Lyapunov spectra, finite-time invariant splittings from singular
//! subspaces, and volume growth rates restricted to a bundle.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::systems::{apply_map, System, TorusPoint};

/// Finite-horizon Lyapunov exponents, sorted descending.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LyapunovSpectrum {
    pub exponents: Vec<f64>,
    pub horizon: usize,
    /// Max change of any exponent estimate over the last 10% of steps; a
    /// convergence diagnostic, not an error bar.
    pub residual: f64,
}

/// Ordered product D_{f^{n-1} x} f ... D_x f, accumulated left to right.
/// Fails when an entry overflows f64 range.
pub fn cocycle_product(system: &System, x: &TorusPoint, n: usize) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(Error::InvalidParameter("cocycle horizon must be >= 1".into()));
    }
    let d = system.dimension();
    let mut acc = DMatrix::identity(d, d);
    let mut cur = x.clone();
    for step in 0..n {
        acc = system.jacobian(&cur) * acc;
        if acc.iter().any(|v| !v.is_finite()) {
            return Err(Error::CocycleOverflow { step });
        }
        cur = system.forward(&cur);
    }
    Ok(acc)
}

/// Benettin-style spectrum: push an orthonormal frame through the cocycle,
/// re-orthonormalize by QR every `qr_stride` steps, accumulate the log
/// diagonal of R, and divide by the number of accumulated steps.
///
/// A short alignment phase (min(100, n/10) steps, not counted in `n`) lets
/// the frame settle into the invariant flag first; without it the top
/// exponent carries an O(1/n) projection bias.
pub fn lyapunov_spectrum_qr(
    system: &System,
    x: &TorusPoint,
    n: usize,
    qr_stride: usize,
) -> Result<LyapunovSpectrum> {
    if n < 100 {
        return Err(Error::InvalidParameter(format!("spectrum horizon must be >= 100, got {n}")));
    }
    if !(1..=10).contains(&qr_stride) {
        return Err(Error::InvalidParameter(format!("qr_stride must be in [1, 10], got {qr_stride}")));
    }
    let d = system.dimension();
    let mut frame = DMatrix::<f64>::identity(d, d);
    let mut cur = x.clone();

    let warmup = (n / 10).min(100);
    for _ in 0..warmup {
        frame = system.jacobian(&cur) * frame;
        cur = system.forward(&cur);
        frame = reorthonormalize(&frame)?.0;
    }

    let mut sums = vec![0.0f64; d];
    let tail_start = n - n / 10;
    let mut tail_low = vec![f64::INFINITY; d];
    let mut tail_high = vec![f64::NEG_INFINITY; d];
    let mut since_qr = 0usize;
    for step in 0..n {
        frame = system.jacobian(&cur) * frame;
        cur = system.forward(&cur);
        since_qr += 1;
        if since_qr == qr_stride || step + 1 == n {
            let (q, log_diag) = reorthonormalize(&frame)?;
            frame = q;
            for (s, l) in sums.iter_mut().zip(&log_diag) {
                *s += l;
            }
            since_qr = 0;
            if step + 1 > tail_start {
                let t = (step + 1) as f64;
                for i in 0..d {
                    let est = sums[i] / t;
                    tail_low[i] = tail_low[i].min(est);
                    tail_high[i] = tail_high[i].max(est);
                }
            }
        }
    }

    let mut exponents: Vec<f64> = sums.iter().map(|s| s / n as f64).collect();
    exponents.sort_by(|a, b| b.partial_cmp(a).expect("exponents are finite"));
    let residual = (0..d)
        .map(|i| (tail_high[i] - tail_low[i]).abs())
        .fold(0.0f64, f64::max);
    Ok(LyapunovSpectrum { exponents, horizon: n, residual })
}

/// QR factorization with the R diagonal returned as logs. R diagonal signs
/// are irrelevant to growth; magnitudes below 1e-300 mean the frame has
/// collapsed.
fn reorthonormalize(frame: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let d = frame.ncols();
    let qr = frame.clone().qr();
    let r = qr.r();
    let mut logs = Vec::with_capacity(d);
    for i in 0..d {
        let entry = r[(i, i)].abs();
        if entry < 1e-300 {
            return Err(Error::FrameDegenerate { entry });
        }
        logs.push(entry.ln());
    }
    Ok((qr.q(), logs))
}

/// Sum of the j largest exponents, the entropy contribution of a
/// j-dimensional expanding bundle.
pub fn chi(spectrum: &LyapunovSpectrum, j: usize) -> Result<f64> {
    if j > spectrum.exponents.len() {
        return Err(Error::InvalidParameter(format!(
            "j must be <= {}, got {j}",
            spectrum.exponents.len()
        )));
    }
    Ok(spectrum.exponents[..j].iter().sum())
}

/// An orthonormal-frame pair (E, F) at a point, with T_x = E + F
/// transversally. E has dimension d - j, F has dimension j.
#[derive(Debug, Clone)]
pub struct SplittingField {
    point: TorusPoint,
    e: DMatrix<f64>,
    f: DMatrix<f64>,
}

impl SplittingField {
    /// Validates orthonormality of each frame (1e-10) and transversality
    /// (|det [E|F]| > 1e-8).
    pub fn new(point: TorusPoint, e: DMatrix<f64>, f: DMatrix<f64>) -> Result<Self> {
        let d = point.dim();
        if e.nrows() != d || f.nrows() != d || e.ncols() + f.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, actual: e.ncols() + f.ncols() });
        }
        if e.ncols() == 0 || f.ncols() == 0 {
            return Err(Error::InvalidParameter("both bundles must have dimension >= 1".into()));
        }
        if !linalg::is_orthonormal(&e, 1e-10) || !linalg::is_orthonormal(&f, 1e-10) {
            return Err(Error::InvalidParameter("bundle frames must be orthonormal within 1e-10".into()));
        }
        let joint = joint_matrix(&e, &f);
        let det = joint.determinant().abs();
        if det <= 1e-8 {
            return Err(Error::DegenerateSplitting { det });
        }
        Ok(SplittingField { point, e, f })
    }

    pub fn point(&self) -> &TorusPoint {
        &self.point
    }

    /// Frame of the (d - j)-dimensional bundle (the contracted one, in the
    /// dominated case).
    pub fn e(&self) -> &DMatrix<f64> {
        &self.e
    }

    /// Frame of the j-dimensional bundle (the dominating one).
    pub fn f(&self) -> &DMatrix<f64> {
        &self.f
    }

    pub fn dim_f(&self) -> usize {
        self.f.ncols()
    }

    pub fn dim_e(&self) -> usize {
        self.e.ncols()
    }
}

/// The d x d matrix [E | F].
pub fn joint_matrix(e: &DMatrix<f64>, f: &DMatrix<f64>) -> DMatrix<f64> {
    let d = e.nrows();
    let mut joint = DMatrix::zeros(d, d);
    joint.view_mut((0, 0), (d, e.ncols())).copy_from(e);
    joint.view_mut((0, e.ncols()), (d, f.ncols())).copy_from(f);
    joint
}

/// Finite-time approximation of the invariant splitting at x with dim F = j.
///
/// F(x) is the image under D_{f^-n x} f^n of its top-j right-singular
/// subspace (past expansion), i.e. the top-j left-singular subspace of that
/// product; E(x) is spanned by the right-singular vectors of D_x f^n with
/// the smallest d - j singular values (future contraction). Long products
/// destroy the small singular values of a matrix held in floats, so the
/// subspaces come from subspace iteration with per-factor renormalization
/// and the product itself is never formed. Errors with an
/// indeterminate-splitting condition when the relevant singular-value gap of
/// either product is below 1e-3 per step.
pub fn finite_time_oseledec_splitting(
    system: &System,
    x: &TorusPoint,
    n: usize,
    j: usize,
) -> Result<SplittingField> {
    let d = system.dimension();
    if j == 0 || j >= d {
        return Err(Error::InvalidParameter(format!("j must be in [1, {}], got {j}", d - 1)));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("splitting horizon must be >= 1".into()));
    }
    const GAP_THRESHOLD: f64 = 1e-3;

    let fwd_jacs = jacobians_along(system, x, n)?;
    let (right, fwd_logs) = product_singular_subspace(&fwd_jacs, j + 1, ProductSide::Right)?;
    check_log_gap(&fwd_logs, j, n, GAP_THRESHOLD)?;
    let e = linalg::orthogonal_complement(&right.columns(0, j).into_owned());

    let past = apply_map(system, x, -(n as i64))?;
    let bwd_jacs = jacobians_along(system, &past, n)?;
    let (left, bwd_logs) = product_singular_subspace(&bwd_jacs, j + 1, ProductSide::Left)?;
    check_log_gap(&bwd_logs, j, n, GAP_THRESHOLD)?;
    let f = left.columns(0, j).into_owned();

    SplittingField::new(x.clone(), e, f)
}

/// Jacobians at start, f(start), ..., f^{n-1}(start); the cocycle product
/// over the window is their left-to-right composition.
fn jacobians_along(system: &System, start: &TorusPoint, n: usize) -> Result<Vec<DMatrix<f64>>> {
    let mut jacs = Vec::with_capacity(n);
    let mut cur = start.clone();
    for _ in 0..n {
        jacs.push(system.jacobian(&cur));
        cur = system.forward(&cur);
    }
    Ok(jacs)
}

#[derive(Clone, Copy)]
enum ProductSide {
    Left,
    Right,
}

/// Orthonormal basis of the leading k-dimensional singular subspace of the
/// product J_{n-1}...J_0 on the requested side, together with the log
/// singular values seen by its columns (sorted descending). Subspace
/// iteration on M M^T (left) or M^T M (right) applies one factor at a time
/// with QR renormalization in between, which keeps everything at unit scale
/// no matter how fast the product grows.
fn product_singular_subspace(
    jacs: &[DMatrix<f64>],
    k: usize,
    side: ProductSide,
) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let d = jacs[0].nrows();
    assert!(k <= d, "requested subspace dimension exceeds the ambient dimension");
    const MAX_SWEEPS: usize = 500;

    // Fixed-seed random start: deterministic, and almost surely not
    // orthogonal to the target subspace.
    let mut rng = ChaCha8Rng::seed_from_u64(0x0534_1ed5_eed5_0001);
    let mut frame =
        linalg::orthonormalize(&DMatrix::from_fn(d, k, |_, _| rng.gen_range(-1.0..1.0)))?;
    let mut projector = &frame * frame.transpose();
    for _ in 0..MAX_SWEEPS {
        match side {
            ProductSide::Right => {
                frame = apply_factors(jacs, frame, false)?;
                frame = apply_factors(jacs, frame, true)?;
            }
            ProductSide::Left => {
                frame = apply_factors(jacs, frame, true)?;
                frame = apply_factors(jacs, frame, false)?;
            }
        }
        let next = &frame * frame.transpose();
        let delta = linalg::operator_norm(&(&next - &projector));
        projector = next;
        if delta < 1e-13 {
            break;
        }
    }

    // Log singular values of the product along each converged column,
    // evaluated on the opposite side so sigma_i = |M v_i| resp. |M^T u_i|.
    let mut columns: Vec<(f64, DVector<f64>)> = (0..k)
        .map(|i| {
            let col = frame.column(i).into_owned();
            let log = log_norm_through(jacs, matches!(side, ProductSide::Left), &col)?;
            Ok((log, col))
        })
        .collect::<Result<_>>()?;
    columns.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite log norms"));
    let logs = columns.iter().map(|(l, _)| *l).collect();
    let sorted = DMatrix::from_columns(&columns.into_iter().map(|(_, c)| c).collect::<Vec<_>>());
    Ok((sorted, logs))
}

/// Applies every factor of the product (transposed factors in reverse order
/// when `transpose`) with re-orthonormalization after each one. The span map
/// equals that of M (resp. M^T) because QR only mixes columns.
fn apply_factors(
    jacs: &[DMatrix<f64>],
    mut frame: DMatrix<f64>,
    transpose: bool,
) -> Result<DMatrix<f64>> {
    if transpose {
        for jac in jacs.iter().rev() {
            frame = linalg::orthonormalize(&(jac.transpose() * frame))?;
        }
    } else {
        for jac in jacs {
            frame = linalg::orthonormalize(&(jac * frame))?;
        }
    }
    Ok(frame)
}

/// log |M v| (or |M^T v|) accumulated with per-step rescaling.
fn log_norm_through(jacs: &[DMatrix<f64>], transpose: bool, v: &DVector<f64>) -> Result<f64> {
    let mut w = v.clone();
    let mut acc = 0.0;
    let mut step = |m: DVector<f64>, index: usize| -> Result<DVector<f64>> {
        let norm = m.norm();
        if !norm.is_finite() {
            return Err(Error::CocycleOverflow { step: index });
        }
        if norm < 1e-300 {
            return Err(Error::RankDeficient { smallest: norm });
        }
        acc += norm.ln();
        Ok(m / norm)
    };
    if transpose {
        for (i, jac) in jacs.iter().rev().enumerate() {
            w = step(jac.transpose() * w, i)?;
        }
    } else {
        for (i, jac) in jacs.iter().enumerate() {
            w = step(jac * w, i)?;
        }
    }
    Ok(acc)
}

fn check_log_gap(logs: &[f64], j: usize, n: usize, threshold: f64) -> Result<()> {
    let gap = (logs[j - 1] - logs[j]) / n as f64;
    if gap < threshold {
        return Err(Error::IndeterminateSplitting { index: j, gap, threshold });
    }
    Ok(())
}

/// Average log volume growth of the parallelepiped spanned by the orthonormal
/// columns of `bundle` pushed through the cocycle for n steps, with QR
/// re-orthonormalization each step.
pub fn det_growth_rate(
    system: &System,
    x: &TorusPoint,
    bundle: &DMatrix<f64>,
    n: usize,
) -> Result<f64> {
    if n < 10 {
        return Err(Error::InvalidParameter(format!("horizon must be >= 10, got {n}")));
    }
    if bundle.nrows() != system.dimension() {
        return Err(Error::DimensionMismatch { expected: system.dimension(), actual: bundle.nrows() });
    }
    if !linalg::is_orthonormal(bundle, 1e-10) {
        return Err(Error::InvalidParameter("bundle frame must be orthonormal within 1e-10".into()));
    }
    let mut frame = bundle.clone();
    let mut cur = x.clone();
    let mut acc = 0.0;
    for _ in 0..n {
        frame = system.jacobian(&cur) * frame;
        cur = system.forward(&cur);
        let k = frame.ncols();
        let qr = frame.qr();
        let r = qr.r();
        for i in 0..k {
            let entry = r[(i, i)].abs();
            if entry < 1e-300 {
                return Err(Error::FrameDegenerate { entry });
            }
            acc += entry.ln();
        }
        frame = qr.q().columns(0, k).into_owned();
    }
    Ok(acc / n as f64)
}
