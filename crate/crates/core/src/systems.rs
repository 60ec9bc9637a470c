//! Points on the flat torus T^d and the built-in volume-preserving maps:
//! integer linear automorphisms, the perturbed cat family, rigid rotations,
//! the standard family, direct sums, and powers of any of these.
//!
//! Every map exposes its exact lift to R^d, an analytic Jacobian of that
//! lift, and a closed-form inverse. Distances come from the quotient metric
//! (coordinatewise differences reduced to [-1/2, 1/2]).

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reduces a real coordinate to the fundamental domain [0, 1).
pub fn wrap_coord(v: f64) -> f64 {
    let w = v - v.floor();
    // v slightly below an integer can round the difference up to exactly 1.0.
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

/// A point of T^d stored by its representative in [0, 1)^d.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TorusPoint(Vec<f64>);

impl TorusPoint {
    /// Wraps arbitrary real coordinates into the fundamental domain.
    pub fn new(coords: Vec<f64>) -> Self {
        assert!(!coords.is_empty(), "torus dimension must be at least 1");
        TorusPoint(coords.into_iter().map(wrap_coord).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    /// The wrapped sum of this point and a tangent offset.
    pub fn offset(&self, delta: &[f64]) -> TorusPoint {
        assert_eq!(delta.len(), self.dim());
        TorusPoint::new(self.0.iter().zip(delta).map(|(a, b)| a + b).collect())
    }
}

/// Distance on T^d: Euclidean norm of the coordinatewise differences reduced
/// to [-1/2, 1/2].
pub fn torus_distance(a: &TorusPoint, b: &TorusPoint) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), actual: b.dim() });
    }
    let mut acc = 0.0;
    for (x, y) in a.coords().iter().zip(b.coords()) {
        let d = minimal_diff(x - y);
        acc += d * d;
    }
    Ok(acc.sqrt())
}

/// Reduces a coordinate difference to the minimal representative in
/// [-1/2, 1/2].
pub fn minimal_diff(d: f64) -> f64 {
    let mut d = d - d.round();
    if d < -0.5 {
        d = -0.5;
    } else if d > 0.5 {
        d = 0.5;
    }
    d
}

/// Serializable description of a built-in system. `cat_map` is shorthand for
/// `linear_automorphism` with matrix [[2, 1], [1, 1]].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum SystemDescriptor {
    CatMap,
    LinearAutomorphism { matrix: Vec<Vec<i64>> },
    PerturbedCat { epsilon: f64 },
    Rotation { angles: Vec<f64> },
    StandardMap { k: f64 },
    Block { blocks: Vec<SystemDescriptor> },
    Power { base: Box<SystemDescriptor>, exponent: u32 },
}

#[derive(Debug, Clone)]
enum MapKind {
    /// Unimodular integer matrix with its exact integer inverse.
    Linear { m: DMatrix<f64>, m_inv: DMatrix<f64> },
    /// Shear-after-cat composition: (x, y) -> cat, then x += eps sin(2 pi y).
    PerturbedCat { epsilon: f64 },
    Rotation { angles: Vec<f64> },
    StandardMap { k: f64 },
    Block { parts: Vec<System>, offsets: Vec<usize> },
    Power { base: Box<System>, exponent: u32 },
}

/// A volume-preserving diffeomorphism of T^d with analytic derivatives.
#[derive(Debug, Clone)]
pub struct System {
    descriptor: SystemDescriptor,
    dimension: usize,
    kind: MapKind,
}

const CAT_MATRIX: [[i64; 2]; 2] = [[2, 1], [1, 1]];

/// Builds a runnable system from a descriptor, validating it.
pub fn make_system(descriptor: &SystemDescriptor) -> Result<System> {
    System::new(descriptor)
}

impl System {
    pub fn new(descriptor: &SystemDescriptor) -> Result<System> {
        let kind = match descriptor {
            SystemDescriptor::CatMap => build_linear(&CAT_MATRIX.map(|r| r.to_vec()))?,
            SystemDescriptor::LinearAutomorphism { matrix } => build_linear(matrix)?,
            SystemDescriptor::PerturbedCat { epsilon } => {
                if !epsilon.is_finite() {
                    return Err(Error::InvalidDescriptor("epsilon must be finite".into()));
                }
                MapKind::PerturbedCat { epsilon: *epsilon }
            }
            SystemDescriptor::Rotation { angles } => {
                if angles.is_empty() {
                    return Err(Error::InvalidDescriptor("rotation needs at least one angle".into()));
                }
                if angles.iter().any(|a| !a.is_finite()) {
                    return Err(Error::InvalidDescriptor("rotation angles must be finite".into()));
                }
                MapKind::Rotation { angles: angles.clone() }
            }
            SystemDescriptor::StandardMap { k } => {
                if !k.is_finite() {
                    return Err(Error::InvalidDescriptor("k must be finite".into()));
                }
                MapKind::StandardMap { k: *k }
            }
            SystemDescriptor::Block { blocks } => {
                if blocks.is_empty() {
                    return Err(Error::InvalidDescriptor("block needs at least one factor".into()));
                }
                let parts: Vec<System> = blocks.iter().map(System::new).collect::<Result<_>>()?;
                let mut offsets = Vec::with_capacity(parts.len());
                let mut acc = 0;
                for p in &parts {
                    offsets.push(acc);
                    acc += p.dimension();
                }
                MapKind::Block { parts, offsets }
            }
            SystemDescriptor::Power { base, exponent } => {
                if *exponent == 0 {
                    return Err(Error::InvalidDescriptor("power exponent must be >= 1".into()));
                }
                MapKind::Power { base: Box::new(System::new(base)?), exponent: *exponent }
            }
        };
        let dimension = match &kind {
            MapKind::Linear { m, .. } => m.nrows(),
            MapKind::PerturbedCat { .. } | MapKind::StandardMap { .. } => 2,
            MapKind::Rotation { angles } => angles.len(),
            MapKind::Block { parts, .. } => parts.iter().map(|p| p.dimension()).sum(),
            MapKind::Power { base, .. } => base.dimension(),
        };
        Ok(System { descriptor: descriptor.clone(), dimension, kind })
    }

    pub fn descriptor(&self) -> &SystemDescriptor {
        &self.descriptor
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// All built-ins preserve Lebesgue measure by construction; the claim is
    /// still checkable, see [`check_volume_preserving`].
    pub fn volume_preserving(&self) -> bool {
        true
    }

    fn check_dim(&self, x: &TorusPoint) -> Result<()> {
        if x.dim() != self.dimension {
            return Err(Error::DimensionMismatch { expected: self.dimension, actual: x.dim() });
        }
        Ok(())
    }

    /// Evaluates the lift F: R^d -> R^d (no wrapping). F(x + m) = F(x) + A m
    /// for integer m, so the induced torus map is well defined.
    pub fn lift_forward(&self, x: &[f64]) -> Vec<f64> {
        match &self.kind {
            MapKind::Linear { m, .. } => {
                let v = nalgebra::DVector::from_column_slice(x);
                (m * v).iter().copied().collect()
            }
            MapKind::PerturbedCat { epsilon } => {
                let (u, v) = (x[0], x[1]);
                let (cu, cv) = (2.0 * u + v, u + v);
                vec![cu + epsilon * (std::f64::consts::TAU * cv).sin(), cv]
            }
            MapKind::Rotation { angles } => x.iter().zip(angles).map(|(a, b)| a + b).collect(),
            MapKind::StandardMap { k } => {
                let (u, v) = (x[0], x[1]);
                let kick = k / std::f64::consts::TAU * (std::f64::consts::TAU * u).sin();
                vec![u + v + kick, v + kick]
            }
            MapKind::Block { parts, offsets } => {
                let mut out = Vec::with_capacity(x.len());
                for (p, &o) in parts.iter().zip(offsets) {
                    out.extend(p.lift_forward(&x[o..o + p.dimension()]));
                }
                out
            }
            MapKind::Power { base, exponent } => {
                let mut cur = x.to_vec();
                for _ in 0..*exponent {
                    cur = base.lift_forward(&cur);
                }
                cur
            }
        }
    }

    /// One forward step.
    pub fn forward(&self, x: &TorusPoint) -> TorusPoint {
        debug_assert_eq!(x.dim(), self.dimension);
        TorusPoint::new(self.lift_forward(x.coords()))
    }

    /// One backward step, via the closed-form inverse of each family.
    pub fn inverse(&self, x: &TorusPoint) -> TorusPoint {
        debug_assert_eq!(x.dim(), self.dimension);
        match &self.kind {
            MapKind::Linear { m_inv, .. } => {
                let v = nalgebra::DVector::from_column_slice(x.coords());
                TorusPoint::new((m_inv * v).iter().copied().collect())
            }
            MapKind::PerturbedCat { epsilon } => {
                // Undo the shear, then the cat matrix.
                let (u, v) = (x.coords()[0], x.coords()[1]);
                let su = u - epsilon * (std::f64::consts::TAU * v).sin();
                TorusPoint::new(vec![su - v, -su + 2.0 * v])
            }
            MapKind::Rotation { angles } => {
                TorusPoint::new(x.coords().iter().zip(angles).map(|(a, b)| a - b).collect())
            }
            MapKind::StandardMap { k } => {
                // x' = x + y', so x recovers first and the kick cancels exactly.
                let (u1, v1) = (x.coords()[0], x.coords()[1]);
                let u = u1 - v1;
                let kick = k / std::f64::consts::TAU * (std::f64::consts::TAU * u).sin();
                TorusPoint::new(vec![u, v1 - kick])
            }
            MapKind::Block { parts, offsets } => {
                let mut out = Vec::with_capacity(x.dim());
                for (p, &o) in parts.iter().zip(offsets) {
                    let sub = TorusPoint::new(x.coords()[o..o + p.dimension()].to_vec());
                    out.extend(p.inverse(&sub).coords().iter().copied());
                }
                TorusPoint::new(out)
            }
            MapKind::Power { base, exponent } => {
                let mut cur = x.clone();
                for _ in 0..*exponent {
                    cur = base.inverse(&cur);
                }
                cur
            }
        }
    }

    /// Derivative of the lift at x. For powers this is the ordered product of
    /// the base Jacobians along the orbit, accumulated left to right exactly
    /// like [`crate::cocycle::cocycle_product`].
    pub fn jacobian(&self, x: &TorusPoint) -> DMatrix<f64> {
        debug_assert_eq!(x.dim(), self.dimension);
        match &self.kind {
            MapKind::Linear { m, .. } => m.clone(),
            MapKind::PerturbedCat { epsilon } => {
                let (u, v) = (x.coords()[0], x.coords()[1]);
                let a = std::f64::consts::TAU * epsilon * (std::f64::consts::TAU * (u + v)).cos();
                DMatrix::from_row_slice(2, 2, &[2.0 + a, 1.0 + a, 1.0, 1.0])
            }
            MapKind::Rotation { angles } => DMatrix::identity(angles.len(), angles.len()),
            MapKind::StandardMap { k } => {
                let c = k * (std::f64::consts::TAU * x.coords()[0]).cos();
                DMatrix::from_row_slice(2, 2, &[1.0 + c, 1.0, c, 1.0])
            }
            MapKind::Block { parts, offsets } => {
                let d = self.dimension;
                let mut out = DMatrix::zeros(d, d);
                for (p, &o) in parts.iter().zip(offsets) {
                    let sub = TorusPoint::new(x.coords()[o..o + p.dimension()].to_vec());
                    let j = p.jacobian(&sub);
                    out.view_mut((o, o), (p.dimension(), p.dimension())).copy_from(&j);
                }
                out
            }
            MapKind::Power { base, exponent } => {
                let mut acc = DMatrix::identity(self.dimension, self.dimension);
                let mut cur = x.clone();
                for _ in 0..*exponent {
                    acc = base.jacobian(&cur) * acc;
                    cur = base.forward(&cur);
                }
                acc
            }
        }
    }
}

/// Applies `steps` iterations of the map (negative steps use the inverse).
pub fn apply_map(system: &System, x: &TorusPoint, steps: i64) -> Result<TorusPoint> {
    system.check_dim(x)?;
    if steps.unsigned_abs() > 1_000_000_000 {
        return Err(Error::InvalidParameter(format!("|steps| must be <= 1e9, got {steps}")));
    }
    let mut cur = x.clone();
    if steps >= 0 {
        for _ in 0..steps {
            cur = system.forward(&cur);
        }
    } else {
        for _ in 0..steps.unsigned_abs() {
            cur = system.inverse(&cur);
        }
    }
    Ok(cur)
}

/// The orbit segment [x, f x, ..., f^n x].
pub fn orbit(system: &System, x: &TorusPoint, n: usize) -> Result<Vec<TorusPoint>> {
    system.check_dim(x)?;
    let mut out = Vec::with_capacity(n + 1);
    out.push(x.clone());
    for t in 0..n {
        let next = system.forward(&out[t]);
        out.push(next);
    }
    Ok(out)
}

fn build_linear(matrix: &[Vec<i64>]) -> Result<MapKind> {
    let d = matrix.len();
    if d == 0 {
        return Err(Error::InvalidDescriptor("matrix must be non-empty".into()));
    }
    if matrix.iter().any(|row| row.len() != d) {
        return Err(Error::InvalidDescriptor("matrix must be square".into()));
    }
    let det = integer_determinant(matrix);
    if det != 1 && det != -1 {
        return Err(Error::InvalidDescriptor(format!("|det| must be 1, got det = {det}")));
    }
    let inv = integer_inverse(matrix, det);
    let flat: Vec<f64> = matrix.iter().flatten().map(|&v| v as f64).collect();
    let flat_inv: Vec<f64> = inv.iter().flatten().map(|&v| v as f64).collect();
    Ok(MapKind::Linear {
        m: DMatrix::from_row_slice(d, d, &flat),
        m_inv: DMatrix::from_row_slice(d, d, &flat_inv),
    })
}

/// Exact determinant of an integer matrix (Bareiss fraction-free elimination).
fn integer_determinant(matrix: &[Vec<i64>]) -> i128 {
    let d = matrix.len();
    let mut a: Vec<Vec<i128>> = matrix.iter().map(|r| r.iter().map(|&v| v as i128).collect()).collect();
    let mut sign: i128 = 1;
    let mut prev: i128 = 1;
    for k in 0..d {
        if a[k][k] == 0 {
            let swap = (k + 1..d).find(|&r| a[r][k] != 0);
            match swap {
                Some(r) => {
                    a.swap(k, r);
                    sign = -sign;
                }
                None => return 0,
            }
        }
        for i in k + 1..d {
            for j in k + 1..d {
                a[i][j] = (a[i][j] * a[k][k] - a[i][k] * a[k][j]) / prev;
            }
            a[i][k] = 0;
        }
        prev = a[k][k];
    }
    sign * a[d - 1][d - 1]
}

/// Inverse of a unimodular integer matrix. The inverse is again integer; it
/// is found numerically, rounded, and then verified exactly.
fn integer_inverse(matrix: &[Vec<i64>], det: i128) -> Vec<Vec<i64>> {
    let d = matrix.len();
    let flat: Vec<f64> = matrix.iter().flatten().map(|&v| v as f64).collect();
    let m = DMatrix::from_row_slice(d, d, &flat);
    let num_inv = m.try_inverse().expect("unimodular matrix is invertible");
    let rounded: Vec<Vec<i64>> =
        (0..d).map(|i| (0..d).map(|j| num_inv[(i, j)].round() as i64).collect()).collect();
    // M * round(M^-1) must be the identity in exact integer arithmetic.
    for i in 0..d {
        for j in 0..d {
            let mut acc: i128 = 0;
            for (k, row) in rounded.iter().enumerate() {
                acc += matrix[i][k] as i128 * row[j] as i128;
            }
            let expect = if i == j { 1 } else { 0 };
            assert_eq!(acc, expect, "integer inverse verification failed (det = {det})");
        }
    }
    rounded
}

/// Draws `count` independent uniform points of T^d from a seeded generator.
/// Identical (seed, count, dim) always yields identical points.
pub fn sample_lebesgue(seed: u64, count: usize, dim: usize) -> Result<Vec<TorusPoint>> {
    if count == 0 {
        return Err(Error::InvalidParameter("sample count must be >= 1".into()));
    }
    if dim == 0 {
        return Err(Error::InvalidParameter("dimension must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count).map(|_| TorusPoint::new((0..dim).map(|_| rng.gen::<f64>()).collect())).collect())
}

/// Max of |log |det DJ|| over sampled points, for any Jacobian field. Errors
/// when a sampled Jacobian is numerically singular (|det| <= 1e-12).
pub fn worst_log_abs_det(
    points: &[TorusPoint],
    jacobian: impl Fn(&TorusPoint) -> DMatrix<f64>,
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for p in points {
        let det = jacobian(p).determinant();
        if det.abs() <= 1e-12 {
            return Err(Error::SingularJacobian { point: p.coords().to_vec() });
        }
        worst = worst.max(det.abs().ln().abs());
    }
    Ok(worst)
}

/// Samples `samples` Lebesgue points and reports the worst |log |det Df||.
/// Values at rounding scale certify the volume-preservation claim.
pub fn check_volume_preserving(system: &System, samples: usize, seed: u64) -> Result<f64> {
    let points = sample_lebesgue(seed, samples, system.dimension())?;
    worst_log_abs_det(&points, |p| system.jacobian(p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cat() -> System {
        make_system(&SystemDescriptor::CatMap).unwrap()
    }

    #[test]
    fn wrap_keeps_coordinates_in_fundamental_domain() {
        assert_eq!(wrap_coord(1.25), 0.25);
        assert_eq!(wrap_coord(-0.25), 0.75);
        assert_eq!(wrap_coord(3.0), 0.0);
        // A tiny negative value rounds to exactly 1.0 under v - floor(v).
        let w = wrap_coord(-1e-300);
        assert!((0.0..1.0).contains(&w));
        assert!((0.0..1.0).contains(&wrap_coord(-f64::EPSILON)));
    }

    #[test]
    fn cat_step_wraps() {
        let x = TorusPoint::new(vec![0.5, 0.5]);
        let y = apply_map(&cat(), &x, 1).unwrap();
        assert_eq!(y.coords(), &[0.5, 0.0]);
    }

    #[test]
    fn cat_inverse_step() {
        let x = TorusPoint::new(vec![0.5, 0.0]);
        let y = apply_map(&cat(), &x, -1).unwrap();
        assert_eq!(y.coords(), &[0.5, 0.5]);
    }

    #[test]
    fn torus_distance_uses_minimal_representatives() {
        let a = TorusPoint::new(vec![0.1, 0.1]);
        let b = TorusPoint::new(vec![0.9, 0.9]);
        assert_relative_eq!(torus_distance(&a, &b).unwrap(), 0.08f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn distance_dimension_mismatch_is_rejected() {
        let a = TorusPoint::new(vec![0.1]);
        let b = TorusPoint::new(vec![0.9, 0.9]);
        assert!(torus_distance(&a, &b).is_err());
    }

    #[test]
    fn rotation_jacobian_is_identity() {
        let sys = make_system(&SystemDescriptor::Rotation { angles: vec![0.3, 0.7] }).unwrap();
        let j = sys.jacobian(&TorusPoint::new(vec![0.2, 0.9]));
        assert_eq!(j, DMatrix::identity(2, 2));
    }

    #[test]
    fn non_unimodular_matrix_is_rejected() {
        let err = make_system(&SystemDescriptor::LinearAutomorphism {
            matrix: vec![vec![2, 0], vec![0, 1]],
        });
        assert!(matches!(err, Err(Error::InvalidDescriptor(_))));
    }

    #[test]
    fn non_square_matrix_is_rejected() {
        let err = make_system(&SystemDescriptor::LinearAutomorphism { matrix: vec![vec![2, 1]] });
        assert!(matches!(err, Err(Error::InvalidDescriptor(_))));
    }

    #[test]
    fn round_trip_forward_inverse_on_all_families() {
        let systems = vec![
            make_system(&SystemDescriptor::CatMap).unwrap(),
            make_system(&SystemDescriptor::PerturbedCat { epsilon: 0.05 }).unwrap(),
            make_system(&SystemDescriptor::Rotation { angles: vec![0.3, 0.7] }).unwrap(),
            make_system(&SystemDescriptor::StandardMap { k: 1.0 }).unwrap(),
            make_system(&SystemDescriptor::Block {
                blocks: vec![SystemDescriptor::CatMap, SystemDescriptor::Rotation { angles: vec![0.3] }],
            })
            .unwrap(),
            make_system(&SystemDescriptor::Power {
                base: Box::new(SystemDescriptor::StandardMap { k: 0.5 }),
                exponent: 3,
            })
            .unwrap(),
        ];
        for sys in systems {
            let pts = sample_lebesgue(11, 10_000, sys.dimension()).unwrap();
            for p in pts {
                let there = sys.forward(&p);
                let back = sys.inverse(&there);
                let d = torus_distance(&p, &back).unwrap();
                assert!(d <= 1e-9, "round trip drifted {d:.3e} on {:?}", sys.descriptor());
            }
        }
    }

    #[test]
    fn block_jacobian_is_block_diagonal() {
        let sys = make_system(&SystemDescriptor::Block {
            blocks: vec![SystemDescriptor::CatMap, SystemDescriptor::Rotation { angles: vec![0.3] }],
        })
        .unwrap();
        let j = sys.jacobian(&TorusPoint::new(vec![0.1, 0.2, 0.3]));
        assert_eq!(j[(0, 0)], 2.0);
        assert_eq!(j[(2, 2)], 1.0);
        assert_eq!(j[(0, 2)], 0.0);
        assert_eq!(j[(2, 0)], 0.0);
    }

    #[test]
    fn lebesgue_sampler_is_reproducible_and_uniform() {
        let a = sample_lebesgue(7, 100_000, 2).unwrap();
        let b = sample_lebesgue(7, 100_000, 2).unwrap();
        assert_eq!(a, b);
        // CLT bound: mean of each coordinate within [0.495, 0.505] at 100k draws.
        for axis in 0..2 {
            let mean: f64 = a.iter().map(|p| p.coords()[axis]).sum::<f64>() / a.len() as f64;
            assert!((0.495..=0.505).contains(&mean), "axis {axis} mean {mean}");
        }
        for p in &a {
            assert!(p.coords().iter().all(|c| (0.0..1.0).contains(c)));
        }
    }

    #[test]
    fn volume_preservation_holds_on_all_families() {
        for desc in [
            SystemDescriptor::CatMap,
            SystemDescriptor::PerturbedCat { epsilon: 0.05 },
            SystemDescriptor::Rotation { angles: vec![0.3, 0.7] },
            SystemDescriptor::StandardMap { k: 1.0 },
        ] {
            let sys = make_system(&desc).unwrap();
            let worst = check_volume_preserving(&sys, 10_000, 5).unwrap();
            assert!(worst <= 1e-12, "worst |log |det|| = {worst:.3e} for {desc:?}");
        }
    }

    #[test]
    fn volume_check_flags_expanding_stub() {
        // Non-invertible shear stub scaled so det = 1.1 everywhere.
        let points = sample_lebesgue(3, 100, 2).unwrap();
        let worst = worst_log_abs_det(&points, |_| {
            DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 0.55])
        })
        .unwrap();
        assert_relative_eq!(worst, 1.1f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn volume_check_rejects_singular_jacobian() {
        let points = sample_lebesgue(3, 10, 2).unwrap();
        let err = worst_log_abs_det(&points, |_| DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        assert!(matches!(err, Err(Error::SingularJacobian { .. })));
    }

    #[test]
    fn descriptor_json_round_trip() {
        let desc = SystemDescriptor::Block {
            blocks: vec![
                SystemDescriptor::LinearAutomorphism { matrix: vec![vec![2, 1], vec![1, 1]] },
                SystemDescriptor::Rotation { angles: vec![0.3] },
            ],
        };
        let json = serde_json::to_string(&desc).unwrap();
        let back: SystemDescriptor = serde_json::from_str(&json).unwrap();
        assert_eq!(desc, back);
        let named = serde_json::to_value(&SystemDescriptor::CatMap).unwrap();
        assert_eq!(named, serde_json::json!({"name": "cat_map"}));
    }

    #[test]
    fn steps_beyond_budget_are_rejected() {
        let x = TorusPoint::new(vec![0.1, 0.2]);
        assert!(apply_map(&cat(), &x, 1_000_000_001).is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arbitrary_system() -> impl Strategy<Value = SystemDescriptor> {
            prop_oneof![
                Just(SystemDescriptor::CatMap),
                (-0.2..0.2f64).prop_map(|epsilon| SystemDescriptor::PerturbedCat { epsilon }),
                (0.0..10.0f64).prop_map(|k| SystemDescriptor::StandardMap { k }),
                proptest::collection::vec(0.0..1.0f64, 1..4)
                    .prop_map(|angles| SystemDescriptor::Rotation { angles }),
            ]
        }

        proptest! {
            #[test]
            fn coordinates_stay_in_unit_interval(
                desc in arbitrary_system(),
                raw in proptest::collection::vec(-1e6..1e6f64, 4),
                steps in 1usize..6,
            ) {
                let sys = make_system(&desc).unwrap();
                let mut x = TorusPoint::new(raw[..sys.dimension()].to_vec());
                for _ in 0..steps {
                    x = sys.forward(&x);
                    prop_assert!(x.coords().iter().all(|c| (0.0..1.0).contains(c)));
                    x = sys.inverse(&x);
                    prop_assert!(x.coords().iter().all(|c| (0.0..1.0).contains(c)));
                }
            }

            #[test]
            fn inverse_undoes_forward(
                desc in arbitrary_system(),
                raw in proptest::collection::vec(0.0..1.0f64, 4),
            ) {
                let sys = make_system(&desc).unwrap();
                let x = TorusPoint::new(raw[..sys.dimension()].to_vec());
                let back = sys.inverse(&sys.forward(&x));
                prop_assert!(torus_distance(&x, &back).unwrap() < 1e-10);
            }

            #[test]
            fn torus_distance_is_a_metric(
                a in proptest::collection::vec(0.0..1.0f64, 2),
                b in proptest::collection::vec(0.0..1.0f64, 2),
                c in proptest::collection::vec(0.0..1.0f64, 2),
            ) {
                let (a, b, c) =
                    (TorusPoint::new(a), TorusPoint::new(b), TorusPoint::new(c));
                let ab = torus_distance(&a, &b).unwrap();
                let ba = torus_distance(&b, &a).unwrap();
                prop_assert!((ab - ba).abs() < 1e-15);
                prop_assert!(torus_distance(&a, &a).unwrap() == 0.0);
                let ac = torus_distance(&a, &c).unwrap();
                let cb = torus_distance(&c, &b).unwrap();
                prop_assert!(ab <= ac + cb + 1e-12);
            }
        }
    }
}
