//! Graphs over the dominating bundle and their image under the dynamics:
//! dispersion (empirical Lipschitz constant), the safe nonlinearity budget
//! tau for dispersion contraction, one-step graph transforms, and dispersion
//! traces along Bowen balls.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cocycle::{joint_matrix, SplittingField};
use crate::domination::push_forward;
use crate::entropy::bowen_exit_step;
use crate::error::{Error, Result};
use crate::linalg;
use crate::systems::{minimal_diff, orbit, torus_distance, System, TorusPoint};

/// Numerical slack on Bowen-ball membership during propagation; absorbs the
/// rounding from re-expressing samples in new frames.
const BOWEN_SLACK: f64 = 1e-9;

/// One sample of a graph over F: base coordinates u in the F frame and the
/// value psi(u) in the E frame.
#[derive(Debug, Clone)]
pub struct GraphSample {
    pub u: DVector<f64>,
    pub psi: DVector<f64>,
}

/// A sampled graph over the F bundle of a splitting, anchored at the
/// splitting's base point. Dispersion is always recomputed from the samples,
/// never asserted.
#[derive(Debug, Clone)]
pub struct GraphOverF {
    splitting: SplittingField,
    samples: Vec<GraphSample>,
    dispersion: f64,
}

impl GraphOverF {
    /// Validates sample shapes, distinctness of base points (pairwise
    /// distance > 1e-12), and computes the dispersion.
    pub fn new(splitting: SplittingField, samples: Vec<GraphSample>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::DegenerateGraph);
        }
        let j = splitting.dim_f();
        let k = splitting.dim_e();
        for s in &samples {
            if s.u.len() != j || s.psi.len() != k {
                return Err(Error::DimensionMismatch { expected: j + k, actual: s.u.len() + s.psi.len() });
            }
        }
        for a in 0..samples.len() {
            for b in a + 1..samples.len() {
                if (&samples[a].u - &samples[b].u).norm() <= 1e-12 {
                    return Err(Error::DegenerateGraph);
                }
            }
        }
        let dispersion = dispersion_of(&samples);
        Ok(GraphOverF { splitting, samples, dispersion })
    }

    /// A linear graph psi(u) = S u sampled on the radius-r ball of the F
    /// coordinates. One-dimensional bases use a uniform grid; higher
    /// dimensions draw a seeded deterministic sample.
    pub fn linear(
        splitting: SplittingField,
        slope: &DMatrix<f64>,
        radius: f64,
        count: usize,
        seed: u64,
    ) -> Result<Self> {
        let j = splitting.dim_f();
        let k = splitting.dim_e();
        if slope.nrows() != k || slope.ncols() != j {
            return Err(Error::DimensionMismatch { expected: k * j, actual: slope.nrows() * slope.ncols() });
        }
        if !(radius > 0.0) || count < 2 {
            return Err(Error::InvalidParameter("need radius > 0 and count >= 2".into()));
        }
        let mut bases: Vec<DVector<f64>> = Vec::with_capacity(count);
        if j == 1 {
            for i in 0..count {
                let t = -radius + 2.0 * radius * i as f64 / (count - 1) as f64;
                bases.push(DVector::from_vec(vec![t]));
            }
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            while bases.len() < count {
                let v = DVector::from_iterator(j, (0..j).map(|_| rng.gen_range(-radius..radius)));
                if v.norm() <= radius {
                    bases.push(v);
                }
            }
        }
        let samples = bases.into_iter().map(|u| GraphSample { psi: slope * &u, u }).collect();
        GraphOverF::new(splitting, samples)
    }

    pub fn splitting(&self) -> &SplittingField {
        &self.splitting
    }

    pub fn samples(&self) -> &[GraphSample] {
        &self.samples
    }

    pub fn dispersion(&self) -> f64 {
        self.dispersion
    }

    /// The torus points x + E psi(u) + F u represented by the samples.
    pub fn embedded_points(&self) -> Vec<TorusPoint> {
        self.samples
            .iter()
            .map(|s| {
                let offset = self.splitting.e() * &s.psi + self.splitting.f() * &s.u;
                self.splitting.point().offset(offset.as_slice())
            })
            .collect()
    }
}

/// Dispersion: the largest pairwise slope |psi_i - psi_l| / |u_i - u_l|.
pub fn dispersion_of(samples: &[GraphSample]) -> f64 {
    let mut worst: f64 = 0.0;
    for a in 0..samples.len() {
        for b in a + 1..samples.len() {
            let du = (&samples[a].u - &samples[b].u).norm();
            let dpsi = (&samples[a].psi - &samples[b].psi).norm();
            if du > 0.0 {
                worst = worst.max(dpsi / du);
            }
        }
    }
    worst
}

/// Largest tau at which the dispersion contraction factor stays below 1:
/// tau* = beta c / (2 alpha (1 + c)^2), from solving
/// (1/2 + t/c) / (1 - t) < 1 with t = tau alpha (1 + c) / beta.
pub fn contraction_tau_critical(alpha: f64, beta: f64, c: f64) -> f64 {
    assert!(alpha >= 1.0, "alpha is a projection norm, so alpha >= 1");
    assert!(beta > 0.0 && c > 0.0, "beta and c must be positive");
    beta * c / (2.0 * alpha * (1.0 + c) * (1.0 + c))
}

/// Safe nonlinearity budget: half the critical tau. At this tau the factor
/// is (2c + 3) / (3c + 4), uniformly below 1.
pub fn contraction_tau_bound(alpha: f64, beta: f64, c: f64) -> f64 {
    contraction_tau_critical(alpha, beta, c) / 2.0
}

/// The dispersion contraction factor at nonlinearity tau. Finite only while
/// beta - tau alpha (1 + c) > 0.
pub fn contraction_factor(tau: f64, alpha: f64, beta: f64, c: f64) -> f64 {
    assert!(alpha >= 1.0 && beta > 0.0 && c > 0.0 && tau >= 0.0);
    let t = tau * alpha * (1.0 + c) / beta;
    assert!(t < 1.0, "tau exceeds the invertibility margin");
    (0.5 + t / c) / (1.0 - t)
}

/// Image of a graph under one step of the map, expressed over the supplied
/// splitting at f(x). Fails when two image points share F coordinates within
/// 1e-10 (the image is no longer a graph).
pub fn transform_graph(
    system: &System,
    graph: &GraphOverF,
    splitting_at_fx: &SplittingField,
) -> Result<GraphOverF> {
    let x = graph.splitting().point();
    let fx = system.forward(x);
    let drift = torus_distance(&fx, splitting_at_fx.point())?;
    if drift > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "target splitting sits {drift:.3e} away from f(x)"
        )));
    }
    let joint = joint_matrix(splitting_at_fx.e(), splitting_at_fx.f());
    let k = splitting_at_fx.dim_e();
    let j = splitting_at_fx.dim_f();

    let mut new_samples = Vec::with_capacity(graph.samples().len());
    for (idx, (sample, point)) in graph.samples().iter().zip(graph.embedded_points()).enumerate() {
        let offset = graph.splitting().e() * &sample.psi + graph.splitting().f() * &sample.u;
        let norm = offset.norm();
        if norm >= 0.5 {
            return Err(Error::ChartRadiusExceeded { index: idx, norm });
        }
        let image = system.forward(&point);
        let delta = DVector::from_iterator(
            image.dim(),
            image.coords().iter().zip(fx.coords()).map(|(a, b)| minimal_diff(a - b)),
        );
        let coords = linalg::solve(&joint, &delta)?;
        let psi = DVector::from_iterator(k, coords.iter().take(k).copied());
        let u = DVector::from_iterator(j, coords.iter().skip(k).copied());
        new_samples.push(GraphSample { u, psi });
    }

    for a in 0..new_samples.len() {
        for b in a + 1..new_samples.len() {
            if (&new_samples[a].u - &new_samples[b].u).norm() < 1e-10 {
                return Err(Error::GraphFolded { step: 0 });
            }
        }
    }
    GraphOverF::new(splitting_at_fx.clone(), new_samples)
}

/// Dispersion trace of a graph pushed n steps along the orbit, with the
/// splittings obtained by pushing the base splitting forward through the
/// cocycle. Entry t is the dispersion after t steps; entry 0 is the input.
#[derive(Debug, Clone)]
pub struct PropagationTrace {
    pub final_graph: GraphOverF,
    pub dispersions: Vec<f64>,
}

/// Propagates a graph along the Bowen ball B_n(delta, x). Every embedded
/// sample must lie in the ball up front; an exit mid-way is an error naming
/// the step.
pub fn propagate_along_bowen(
    system: &System,
    graph: &GraphOverF,
    n: usize,
    delta: f64,
) -> Result<PropagationTrace> {
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter("delta must be positive".into()));
    }
    let x = graph.splitting().point().clone();
    for (index, point) in graph.embedded_points().iter().enumerate() {
        if let Some(step) = bowen_exit_step(system, &x, point, n, delta) {
            return Err(Error::SampleOutsideBowenBall { index, step });
        }
    }
    let track = orbit(system, &x, n)?;
    let mut dispersions = Vec::with_capacity(n + 1);
    dispersions.push(graph.dispersion());
    let mut cur = graph.clone();
    for step in 1..=n {
        let next_splitting = push_forward(system, cur.splitting())?;
        cur = transform_graph(system, &cur, &next_splitting).map_err(|e| match e {
            Error::GraphFolded { .. } => Error::GraphFolded { step },
            other => other,
        })?;
        for (index, point) in cur.embedded_points().iter().enumerate() {
            let d = torus_distance(point, &track[step])?;
            if d > delta + BOWEN_SLACK {
                return Err(Error::SampleOutsideBowenBall { index, step });
            }
        }
        dispersions.push(cur.dispersion());
    }
    Ok(PropagationTrace { final_graph: cur, dispersions })
}

/// Builds a linear graph with the given slope whose samples all fit inside
/// B_n(delta, x), by halving the base radius from delta until the membership
/// precheck passes.
pub fn fit_linear_graph_in_bowen(
    system: &System,
    splitting: &SplittingField,
    slope: &DMatrix<f64>,
    n: usize,
    delta: f64,
    count: usize,
    seed: u64,
) -> Result<GraphOverF> {
    let x = splitting.point().clone();
    let mut radius = delta;
    for _ in 0..200 {
        let graph = GraphOverF::linear(splitting.clone(), slope, radius, count, seed)?;
        let ok = graph
            .embedded_points()
            .iter()
            .all(|p| bowen_exit_step(system, &x, p, n, delta).is_none());
        if ok {
            return Ok(graph);
        }
        radius /= 2.0;
    }
    Err(Error::InvalidParameter(
        "no graph radius fits the Bowen ball; the expansion budget is too tight".into(),
    ))
}
