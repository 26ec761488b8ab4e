//! Covariance Matrix Adaptation Evolution Strategy.
//!
//! A `(mu/mu_w, lambda)` CMA-ES with cumulative step-size adaptation,
//! rank-one and rank-mu covariance updates. Selection is purely rank based:
//! the update sees only the ordering of fitness values, never their
//! magnitudes. Non-finite fitness values rank last.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Strategy constants, derived from the problem dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyParams {
    pub dim: usize,
    pub lambda: usize,
    pub mu: usize,
    pub weights: Vec<f64>,
    pub mu_eff: f64,
    pub c_sigma: f64,
    pub d_sigma: f64,
    pub c_c: f64,
    pub c_1: f64,
    pub c_mu: f64,
    pub chi_n: f64,
}

/// Default constants for dimension `n`, with population `4 + floor(3 ln n)`.
pub fn default_params(n: usize) -> StrategyParams {
    let lambda = 4 + (3.0 * (n.max(1) as f64).ln()).floor() as usize;
    params_with_population(n, lambda)
}

/// Default constants with an explicit population size (at least 2).
pub fn params_with_population(n: usize, lambda: usize) -> StrategyParams {
    let n = n.max(1);
    let lambda = lambda.max(2);
    let nf = n as f64;
    let mu = lambda / 2;
    let raw: Vec<f64> = (1..=mu)
        .map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - (i as f64).ln())
        .collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
    let c_sigma = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
    let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
    let c_c = (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf);
    let c_1 = 2.0 / ((nf + 1.3).powi(2) + mu_eff);
    let c_mu = (1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff));
    let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));
    StrategyParams {
        dim: n,
        lambda,
        mu,
        weights,
        mu_eff,
        c_sigma,
        d_sigma,
        c_c,
        c_1,
        c_mu,
        chi_n,
    }
}

/// Box constraints on the search space.
#[derive(Clone, Debug, PartialEq)]
pub struct Bounds {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    /// Weight of the squared clamp distance added to the fitness.
    pub penalty: f64,
}

impl Bounds {
    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.iter()
            .enumerate()
            .all(|(i, v)| *v >= self.lower[i] && *v <= self.upper[i])
    }

    /// Coordinate-wise clamp and the quadratic penalty for the clamp distance.
    pub fn repair(&self, x: &DVector<f64>) -> (DVector<f64>, f64) {
        let clamped = DVector::from_fn(x.len(), |i, _| x[i].clamp(self.lower[i], self.upper[i]));
        let d2 = (x - &clamped).norm_squared();
        (clamped, self.penalty * d2)
    }
}

/// Number of resampling attempts before a candidate is clamped instead.
const MAX_RESAMPLES: usize = 10;

#[derive(Clone, Debug)]
pub struct CmaState {
    pub params: StrategyParams,
    pub mean: DVector<f64>,
    pub sigma: f64,
    pub cov: DMatrix<f64>,
    pub p_sigma: DVector<f64>,
    pub p_c: DVector<f64>,
    pub generation: usize,
    pub bounds: Option<Bounds>,
    eig_basis: DMatrix<f64>,
    eig_scale: DVector<f64>,
    eig_generation: usize,
}

impl CmaState {
    pub fn new(mean: Vec<f64>, sigma: f64) -> Result<Self> {
        let params = default_params(mean.len());
        Self::with_params(mean, sigma, params)
    }

    pub fn with_params(mean: Vec<f64>, sigma: f64, params: StrategyParams) -> Result<Self> {
        let n = mean.len();
        if n == 0 {
            return Err(Error::InvalidDimensions("empty search space".into()));
        }
        if params.dim != n {
            return Err(Error::DimensionMismatch {
                expected: params.dim,
                got: n,
            });
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidValue(format!("sigma must be positive, got {sigma}")));
        }
        Ok(CmaState {
            params,
            mean: DVector::from_vec(mean),
            sigma,
            cov: DMatrix::identity(n, n),
            p_sigma: DVector::zeros(n),
            p_c: DVector::zeros(n),
            generation: 0,
            bounds: None,
            eig_basis: DMatrix::identity(n, n),
            eig_scale: DVector::from_element(n, 1.0),
            eig_generation: 0,
        })
    }

    pub fn with_bounds(mut self, bounds: Bounds) -> Result<Self> {
        let n = self.mean.len();
        if bounds.lower.len() != n || bounds.upper.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: bounds.lower.len(),
            });
        }
        self.bounds = Some(bounds);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn lambda(&self) -> usize {
        self.params.lambda
    }

    fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let n = self.dim();
        let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = &self.eig_basis * z.component_mul(&self.eig_scale);
        &self.mean + y * self.sigma
    }

    /// Samples `lambda` candidates `m + sigma * C^{1/2} z`.
    ///
    /// With bounds, an infeasible draw is resampled up to ten times and then
    /// returned as is; [`Bounds::repair`] handles it at evaluation time.
    pub fn ask<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<DVector<f64>> {
        (0..self.lambda())
            .map(|_| {
                let mut x = self.sample_one(rng);
                if let Some(b) = &self.bounds {
                    let mut tries = 0;
                    while !b.contains(&x) && tries < MAX_RESAMPLES {
                        x = self.sample_one(rng);
                        tries += 1;
                    }
                }
                x
            })
            .collect()
    }

    /// Updates the distribution from one evaluated population.
    pub fn tell(&mut self, candidates: &[DVector<f64>], fitness: &[f64]) -> Result<()> {
        let lambda = self.lambda();
        if candidates.len() != lambda || fitness.len() != lambda {
            return Err(Error::LengthMismatch(format!(
                "expected {lambda} candidates and fitnesses, got {} and {}",
                candidates.len(),
                fitness.len()
            )));
        }
        let n = self.dim();
        if let Some(c) = candidates.iter().find(|c| c.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: c.len(),
            });
        }
        let order = rank_order(fitness);
        let p = &self.params;

        let old_mean = self.mean.clone();
        let mut new_mean = DVector::zeros(n);
        for (w, &idx) in p.weights.iter().zip(&order) {
            new_mean += &candidates[idx] * *w;
        }
        let y_w = (&new_mean - &old_mean) / self.sigma;

        // C^{-1/2} y_w
        let inv_sqrt = &self.eig_basis
            * DMatrix::from_diagonal(&self.eig_scale.map(|d| 1.0 / d))
            * self.eig_basis.transpose();
        let cs = p.c_sigma;
        self.p_sigma = &self.p_sigma * (1.0 - cs) + (&inv_sqrt * &y_w) * (cs * (2.0 - cs) * p.mu_eff).sqrt();
        let gen = (self.generation + 1) as f64;
        let ps_norm = self.p_sigma.norm();
        let h_sigma = ps_norm / (1.0 - (1.0 - cs).powf(2.0 * gen)).sqrt()
            < (1.4 + 2.0 / (n as f64 + 1.0)) * p.chi_n;
        let h = if h_sigma { 1.0 } else { 0.0 };
        let cc = p.c_c;
        self.p_c = &self.p_c * (1.0 - cc) + &y_w * (h * (cc * (2.0 - cc) * p.mu_eff).sqrt());

        let mut rank_mu = DMatrix::zeros(n, n);
        for (w, &idx) in p.weights.iter().zip(&order) {
            let y = (&candidates[idx] - &old_mean) / self.sigma;
            rank_mu += (&y * y.transpose()) * *w;
        }
        let decay = 1.0 - p.c_1 - p.c_mu + (1.0 - h) * p.c_1 * cc * (2.0 - cc);
        self.cov = &self.cov * decay + (&self.p_c * self.p_c.transpose()) * p.c_1 + rank_mu * p.c_mu;
        self.cov = (&self.cov + self.cov.transpose()) * 0.5;

        self.sigma *= ((cs / p.d_sigma) * (ps_norm / p.chi_n - 1.0)).exp();
        self.mean = new_mean;
        self.generation += 1;

        let gap = ((1.0 / ((p.c_1 + p.c_mu) * n as f64 * 10.0)).floor() as usize).max(1);
        if self.generation - self.eig_generation >= gap {
            self.refresh_eigen();
        }
        Ok(())
    }

    /// Recomputes `C = B D^2 B^T`, clamping eigenvalues to stay positive.
    fn refresh_eigen(&mut self) {
        let n = self.dim();
        let eig = SymmetricEigen::new(self.cov.clone());
        let max_ev = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
        if !(max_ev > 0.0) || !max_ev.is_finite() {
            // Unrecoverable drift: restart the shape, keep the mean and step.
            self.cov = DMatrix::identity(n, n);
            self.eig_basis = DMatrix::identity(n, n);
            self.eig_scale = DVector::from_element(n, 1.0);
            self.eig_generation = self.generation;
            return;
        }
        if !(1e-6..=1e6).contains(&max_ev) {
            // Move the overall scale from C into sigma; the sampling
            // distribution and all later updates are unchanged.
            self.cov /= max_ev;
            self.p_c /= max_ev.sqrt();
            self.sigma *= max_ev.sqrt();
            return self.refresh_eigen();
        }
        let floor = max_ev * 1e-14;
        let clamped = eig.eigenvalues.map(|v| v.max(floor));
        if clamped != eig.eigenvalues {
            self.cov = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
            self.cov = (&self.cov + self.cov.transpose()) * 0.5;
        }
        self.eig_basis = eig.eigenvectors;
        self.eig_scale = clamped.map(f64::sqrt);
        self.eig_generation = self.generation;
    }

    /// Largest standard deviation of the current search distribution.
    pub fn max_std(&self) -> f64 {
        self.sigma * self.eig_scale.iter().cloned().fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.sigma.is_finite()
            && self.mean.iter().all(|v| v.is_finite())
            && self.cov.iter().all(|v| v.is_finite())
    }
}

/// Indices sorted by ascending fitness; non-finite values last, ties by index.
pub fn rank_order(fitness: &[f64]) -> Vec<usize> {
    let key = |f: f64| if f.is_finite() { f } else { f64::INFINITY };
    let mut idx: Vec<usize> = (0..fitness.len()).collect();
    idx.sort_by(|&a, &b| key(fitness[a]).total_cmp(&key(fitness[b])).then(a.cmp(&b)));
    idx
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub max_evaluations: usize,
    pub target_fitness: Option<f64>,
    /// Stop after this many generations without improving the best fitness.
    pub stagnation_generations: usize,
}

impl Budget {
    pub fn evaluations(max_evaluations: usize) -> Self {
        Budget {
            max_evaluations,
            target_fitness: None,
            stagnation_generations: usize::MAX,
        }
    }

    pub fn with_target(mut self, target: f64) -> Self {
        self.target_fitness = Some(target);
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEvaluations,
    TargetReached,
    Stagnation,
    StepSizeCollapsed,
}

/// One line of the optimization trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub generation: usize,
    pub evaluations: usize,
    pub best: f64,
    pub median: f64,
    pub sigma: f64,
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub best_x: DVector<f64>,
    pub best_fitness: f64,
    pub evaluations: usize,
    pub generations: usize,
    pub non_finite: usize,
    pub stop: StopReason,
    pub trace: Vec<TraceRecord>,
}

/// Evaluates a population, in parallel when a pool is supplied.
///
/// The result order always follows the candidate order.
pub fn evaluate_population<F>(
    candidates: &[DVector<f64>],
    objective: &F,
    pool: Option<&rayon::ThreadPool>,
) -> Vec<f64>
where
    F: Fn(&DVector<f64>) -> f64 + Sync,
{
    match pool {
        Some(pool) => pool.install(|| candidates.par_iter().map(objective).collect()),
        None => candidates.iter().map(objective).collect(),
    }
}

/// Runs ask/evaluate/tell until the budget is exhausted.
///
/// `injected` candidates replace the first samples of generation 0, so the
/// returned best is never worse than any of them. With bounds, each
/// candidate is evaluated at its clamped point plus the clamp penalty.
pub fn minimize<F, R>(
    mut state: CmaState,
    objective: F,
    budget: &Budget,
    injected: &[DVector<f64>],
    rng: &mut R,
    pool: Option<&rayon::ThreadPool>,
) -> Result<(Outcome, CmaState)>
where
    F: Fn(&DVector<f64>) -> f64 + Sync,
    R: Rng + ?Sized,
{
    let lambda = state.lambda();
    let mut best_x = state.mean.clone();
    let mut best_f = f64::INFINITY;
    let mut evaluations = 0;
    let mut non_finite = 0;
    let mut since_improvement = 0;
    let mut trace = Vec::new();
    let mut stop = StopReason::MaxEvaluations;
    let bounds = state.bounds.clone();
    let penalized = |x: &DVector<f64>| match &bounds {
        Some(b) => {
            let (xc, pen) = b.repair(x);
            objective(&xc) + pen
        }
        None => objective(x),
    };

    while evaluations + lambda <= budget.max_evaluations {
        let mut candidates = state.ask(rng);
        if state.generation == 0 {
            for (slot, x) in candidates.iter_mut().zip(injected) {
                *slot = x.clone();
            }
        }
        let fitness = evaluate_population(&candidates, &penalized, pool);
        evaluations += lambda;
        non_finite += fitness.iter().filter(|f| !f.is_finite()).count();

        let order = rank_order(&fitness);
        let gen_best = fitness[order[0]];
        if gen_best < best_f {
            best_f = gen_best;
            best_x = match &bounds {
                Some(b) => b.repair(&candidates[order[0]]).0,
                None => candidates[order[0]].clone(),
            };
            since_improvement = 0;
        } else {
            since_improvement += 1;
        }
        state.tell(&candidates, &fitness)?;
        trace.push(TraceRecord {
            generation: state.generation,
            evaluations,
            best: best_f,
            median: fitness[order[lambda / 2]],
            sigma: state.sigma,
        });

        if budget.target_fitness.is_some_and(|t| best_f <= t) {
            stop = StopReason::TargetReached;
            break;
        }
        if since_improvement >= budget.stagnation_generations {
            stop = StopReason::Stagnation;
            break;
        }
        if state.max_std() < 1e-300 || !state.is_finite() {
            stop = StopReason::StepSizeCollapsed;
            break;
        }
    }
    let generations = state.generation;
    Ok((
        Outcome {
            best_x,
            best_fitness: best_f,
            evaluations,
            generations,
            non_finite,
            stop,
            trace,
        },
        state,
    ))
}
