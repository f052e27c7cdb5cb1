//! Synthetic heterogeneous convex problems with computable constants.
//!
//! Two families are provided:
//!
//! - **Heterogeneous quadratic**: `f_i(x) = 1/2 ||x - mu_i||^2` with sample
//!   gradients `x - mu_i - z`, `z ~ N(0, sigma^2/d I)`. Here `L = 1`,
//!   `sigma_L = 0`, `xi^2 = mean_i ||mu_i - mu_bar||^2` and the optimum is the
//!   honest mean.
//! - **Softmax regression**: ten-class cross-entropy with a ridge term over a
//!   finite local dataset per worker, so every expectation is an exact
//!   average. `L = R^2/2 + lambda` for features of norm at most `R`; `sigma`,
//!   `sigma_L` and `xi` are calibrated on probe points and stored.
//!
//! Every worker, Byzantine or not, owns a data distribution; the objective
//! averages over the honest set only.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feasible::FeasibleSet;
use crate::rng::{domain, seeded_rng, RandomStream};
use crate::vector::{mean_of, WorkerVector};

pub const NUM_CLASSES: usize = 10;

/// Identifies one stochastic sample `z`. Equal tokens give equal samples, so
/// both gradient evaluations of a mu2 update can share one draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SampleToken {
    pub seed: u64,
    pub worker: usize,
    pub round: usize,
    pub draw: usize,
}

impl SampleToken {
    pub fn new(seed: u64, worker: usize, round: usize, draw: usize) -> Self {
        Self {
            seed,
            worker,
            round,
            draw,
        }
    }

    fn stream(&self) -> RandomStream {
        seeded_rng(
            self.seed,
            &[domain::SAMPLE, self.worker as u64, self.round as u64, self.draw as u64],
        )
    }
}

/// Which version of a worker's data a gradient is computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DataView {
    #[default]
    Clean,
    /// Labels replaced by `9 - y`.
    FlippedLabels,
}

/// Declared problem constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    /// Smoothness of every per-sample gradient.
    pub lipschitz: f64,
    /// Gradient-noise bound: `E||g(x;z) - grad f_i(x)||^2 <= sigma^2`.
    pub sigma: f64,
    /// Smoothness-variance bound, always in `[0, L]`.
    pub sigma_l: f64,
    /// Heterogeneity bound.
    pub xi: f64,
    /// Diameter of the feasible set.
    pub diameter: f64,
}

impl ProblemConstants {
    /// `2 sigma^2 + 8 D^2 sigma_L^2`.
    pub fn sigma_tilde_sq(&self) -> f64 {
        2.0 * self.sigma * self.sigma + 8.0 * self.diameter.powi(2) * self.sigma_l.powi(2)
    }
}

/// One worker's local dataset: row-major features and labels in `0..10`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalDataset {
    pub features: Vec<f64>,
    pub labels: Vec<u32>,
}

impl LocalDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn row(&self, j: usize, width: usize) -> &[f64] {
        &self.features[j * width..(j + 1) * width]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemModel {
    HeteroQuadratic {
        /// One mean per worker.
        means: Vec<WorkerVector>,
    },
    SoftmaxRegression {
        /// Feature dimension `p`; the parameter is a `10 x p` matrix.
        features: usize,
        ridge: f64,
        feature_radius: f64,
        datasets: Vec<LocalDataset>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemInstance {
    pub dimension: usize,
    pub workers: usize,
    /// Honest worker indices `G`, sorted.
    pub honest: Vec<usize>,
    pub noise_sigma: f64,
    pub seed: u64,
    pub constants: ProblemConstants,
    pub domain: FeasibleSet,
    pub optimum: WorkerVector,
    pub optimal_value: f64,
    /// `||grad f(x*)||`.
    pub g_star: f64,
    pub model: ProblemModel,
}

/// Parameters for a generated heterogeneous quadratic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticParams {
    pub dimension: usize,
    pub workers: usize,
    pub noise_sigma: f64,
    /// Typical distance of a worker mean from the common offset.
    #[serde(default = "default_spread")]
    pub spread: f64,
    /// Norm of the common offset of all worker means.
    #[serde(default = "default_offset_norm")]
    pub offset_norm: f64,
    /// Extra displacement of the Byzantine workers' local means along `e_2`
    /// (`e_1` when `d = 1`). It only matters for attacks built from the
    /// Byzantine workers' own data.
    #[serde(default)]
    pub byzantine_shift: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_spread() -> f64 {
    1.0
}

fn default_offset_norm() -> f64 {
    1.0
}

/// Parameters for a generated softmax-regression problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SoftmaxParams {
    pub features: usize,
    pub workers: usize,
    #[serde(default = "default_samples")]
    pub samples_per_worker: usize,
    /// Norm of each class centre before clipping.
    #[serde(default = "default_separation")]
    pub class_separation: f64,
    /// Per-sample feature noise scale.
    #[serde(default = "default_feature_noise")]
    pub feature_noise: f64,
    /// Probability that a worker's sample comes from its favoured class.
    #[serde(default = "default_label_skew")]
    pub label_skew: f64,
    #[serde(default = "default_feature_radius")]
    pub feature_radius: f64,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_samples() -> usize {
    200
}
fn default_separation() -> f64 {
    1.0
}
fn default_feature_noise() -> f64 {
    0.5
}
fn default_label_skew() -> f64 {
    0.5
}
fn default_feature_radius() -> f64 {
    1.0
}
fn default_ridge() -> f64 {
    0.01
}

impl SoftmaxParams {
    pub fn new(features: usize, workers: usize, seed: u64) -> Self {
        Self {
            features,
            workers,
            samples_per_worker: default_samples(),
            class_separation: default_separation(),
            feature_noise: default_feature_noise(),
            label_skew: default_label_skew(),
            feature_radius: default_feature_radius(),
            ridge: default_ridge(),
            seed,
        }
    }
}

impl QuadraticParams {
    pub fn new(dimension: usize, workers: usize, noise_sigma: f64, seed: u64) -> Self {
        Self {
            dimension,
            workers,
            noise_sigma,
            spread: default_spread(),
            offset_norm: default_offset_norm(),
            byzantine_shift: 0.0,
            seed,
        }
    }
}

/// Flips a class label: `y -> 9 - y`.
pub fn flip_label(y: u32) -> Result<u32> {
    if y as usize >= NUM_CLASSES {
        return Err(Error::LabelOutOfRange(y));
    }
    Ok(9 - y)
}

fn honest_from_byzantine(workers: usize, byzantine: &[usize]) -> Result<Vec<usize>> {
    if let Some(&bad) = byzantine.iter().find(|&&b| b >= workers) {
        return Err(Error::invalid("byzantine", format!("worker {bad} does not exist")));
    }
    let honest: Vec<usize> = (0..workers).filter(|i| !byzantine.contains(i)).collect();
    if honest.is_empty() {
        return Err(Error::EmptyInput("honest workers"));
    }
    Ok(honest)
}

fn default_domain(optimum: &WorkerVector) -> FeasibleSet {
    FeasibleSet {
        center: WorkerVector::zeros(optimum.dim()),
        radius: 2.0 * optimum.norm() + 1.0,
    }
}

fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        total += *l;
    }
    for l in logits.iter_mut() {
        *l /= total;
    }
}

impl ProblemInstance {
    /// Quadratic problem from explicit worker means.
    pub fn hetero_quadratic(
        means: Vec<WorkerVector>,
        byzantine: &[usize],
        noise_sigma: f64,
        domain: Option<FeasibleSet>,
        seed: u64,
    ) -> Result<Self> {
        if noise_sigma.is_nan() || noise_sigma < 0.0 {
            return Err(Error::invalid("noise_sigma", "must be nonnegative"));
        }
        let dim = crate::vector::common_dim(&means)?;
        let workers = means.len();
        let honest = honest_from_byzantine(workers, byzantine)?;
        let mean = mean_of(honest.iter().map(|&i| &means[i]), dim);
        let xi_sq = honest.iter().map(|&i| means[i].dist_sq(&mean)).sum::<f64>() / honest.len() as f64;
        let domain = match domain {
            Some(k) => {
                k.center.check_dim(dim)?;
                k
            }
            None => default_domain(&mean),
        };
        let optimum = domain.project(&mean)?;
        let mut p = Self {
            dimension: dim,
            workers,
            honest,
            noise_sigma,
            seed,
            constants: ProblemConstants {
                lipschitz: 1.0,
                sigma: noise_sigma,
                sigma_l: 0.0,
                xi: xi_sq.sqrt(),
                diameter: domain.diameter(),
            },
            domain,
            optimum,
            optimal_value: 0.0,
            g_star: 0.0,
            model: ProblemModel::HeteroQuadratic { means },
        };
        p.optimal_value = p.global_objective(&p.optimum);
        p.g_star = p.global_gradient(&p.optimum).norm();
        Ok(p)
    }

    /// Generated quadratic: `mu_i = offset_norm e_1 + spread * u_i`, `u_i ~ N(0, I/d)`,
    /// with Byzantine means moved by `byzantine_shift` along `e_2`.
    pub fn generate_quadratic(params: &QuadraticParams, byzantine: &[usize]) -> Result<Self> {
        if params.dimension == 0 || params.workers == 0 {
            return Err(Error::invalid("dimension", "dimension and workers must be positive"));
        }
        let d = params.dimension;
        let mut offset = WorkerVector::zeros(d);
        offset[0] = params.offset_norm;
        let scale = params.spread / (d as f64).sqrt();
        let means = (0..params.workers)
            .map(|i| {
                let mut rng = seeded_rng(params.seed, &[domain::PROBLEM, i as u64]);
                let mut mu: WorkerVector = offset.iter().map(|o| o + scale * rng.standard_normal()).collect();
                if byzantine.contains(&i) {
                    mu[1.min(d - 1)] += params.byzantine_shift;
                }
                mu
            })
            .collect();
        Self::hetero_quadratic(means, byzantine, params.noise_sigma, None, params.seed)
    }

    /// Generated softmax regression with calibrated constants.
    pub fn generate_softmax(params: &SoftmaxParams, byzantine: &[usize]) -> Result<Self> {
        let p = params.features;
        if p == 0 || params.workers == 0 || params.samples_per_worker == 0 {
            return Err(Error::invalid("features", "features, workers and samples must be positive"));
        }
        if params.ridge.is_nan() || params.ridge <= 0.0 {
            return Err(Error::invalid("ridge", "must be positive for a unique optimum"));
        }
        if !(0.0..=1.0).contains(&params.label_skew) {
            return Err(Error::invalid("label_skew", "must lie in [0, 1]"));
        }
        let honest = honest_from_byzantine(params.workers, byzantine)?;
        let mut center_rng = seeded_rng(params.seed, &[domain::PROBLEM, u64::MAX]);
        let centers: Vec<Vec<f64>> = (0..NUM_CLASSES)
            .map(|_| {
                let raw: Vec<f64> = (0..p).map(|_| center_rng.standard_normal()).collect();
                let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                raw.iter().map(|v| params.class_separation * v / norm).collect()
            })
            .collect();
        let datasets = (0..params.workers)
            .map(|i| {
                let mut rng = seeded_rng(params.seed, &[domain::PROBLEM, i as u64]);
                let favoured = (i % NUM_CLASSES) as u32;
                let mut features = Vec::with_capacity(params.samples_per_worker * p);
                let mut labels = Vec::with_capacity(params.samples_per_worker);
                for _ in 0..params.samples_per_worker {
                    let y = if rng.uniform() < params.label_skew {
                        favoured
                    } else {
                        rng.index(NUM_CLASSES) as u32
                    };
                    let noise = params.feature_noise / (p as f64).sqrt();
                    let mut a: Vec<f64> = centers[y as usize]
                        .iter()
                        .map(|c| c + noise * rng.standard_normal())
                        .collect();
                    let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm > params.feature_radius {
                        a.iter_mut().for_each(|v| *v *= params.feature_radius / norm);
                    }
                    features.extend(a);
                    labels.push(y);
                }
                LocalDataset { features, labels }
            })
            .collect();
        let dimension = NUM_CLASSES * p;
        let mut inst = Self {
            dimension,
            workers: params.workers,
            honest,
            noise_sigma: 0.0,
            seed: params.seed,
            constants: ProblemConstants {
                lipschitz: params.feature_radius.powi(2) / 2.0 + params.ridge,
                sigma: 0.0,
                sigma_l: 0.0,
                xi: 0.0,
                diameter: 0.0,
            },
            domain: FeasibleSet {
                center: WorkerVector::zeros(dimension),
                radius: 1.0,
            },
            optimum: WorkerVector::zeros(dimension),
            optimal_value: 0.0,
            g_star: 0.0,
            model: ProblemModel::SoftmaxRegression {
                features: p,
                ridge: params.ridge,
                feature_radius: params.feature_radius,
                datasets,
            },
        };
        let optimum = inst.solve_unconstrained(1e-10, 1_000_000)?;
        inst.domain = default_domain(&optimum);
        inst.constants.diameter = inst.domain.diameter();
        inst.optimal_value = inst.global_objective(&optimum);
        inst.g_star = inst.global_gradient(&optimum).norm();
        inst.optimum = optimum;
        inst.calibrate_constants(64, CALIBRATION_MARGIN);
        Ok(inst)
    }

    pub fn is_labeled(&self) -> bool {
        matches!(self.model, ProblemModel::SoftmaxRegression { .. })
    }

    pub fn kind_name(&self) -> &'static str {
        match self.model {
            ProblemModel::HeteroQuadratic { .. } => "hetero_quadratic",
            ProblemModel::SoftmaxRegression { .. } => "softmax_regression",
        }
    }

    pub fn byzantine(&self) -> Vec<usize> {
        (0..self.workers).filter(|i| self.honest.binary_search(i).is_err()).collect()
    }

    fn check_worker(&self, worker: usize) -> Result<()> {
        if worker >= self.workers {
            return Err(Error::invalid("worker", format!("{worker} >= {}", self.workers)));
        }
        Ok(())
    }

    fn check_feasible(&self, x: &WorkerVector) -> Result<()> {
        x.check_dim(self.dimension)?;
        let distance = self.domain.distance_to_center(x);
        if distance > self.domain.radius * (1.0 + 1e-9) + 1e-12 {
            return Err(Error::Infeasible {
                distance,
                radius: self.domain.radius,
            });
        }
        Ok(())
    }

    /// Stochastic gradient `grad f_i(x; z)` on clean data.
    pub fn sample_gradient(&self, worker: usize, x: &WorkerVector, token: SampleToken) -> Result<WorkerVector> {
        self.sample_gradient_with(worker, x, token, DataView::Clean)
    }

    pub fn sample_gradient_with(
        &self,
        worker: usize,
        x: &WorkerVector,
        token: SampleToken,
        view: DataView,
    ) -> Result<WorkerVector> {
        self.check_worker(worker)?;
        self.check_feasible(x)?;
        let mut rng = token.stream();
        match &self.model {
            ProblemModel::HeteroQuadratic { means } => {
                if view == DataView::FlippedLabels {
                    return Err(Error::UnsupportedAttack {
                        attack: "label_flip",
                        reason: "the quadratic problem has no labels".into(),
                    });
                }
                let scale = self.noise_sigma / (self.dimension as f64).sqrt();
                Ok(x.iter()
                    .zip(means[worker].iter())
                    .map(|(xv, mu)| xv - mu - scale * rng.standard_normal())
                    .collect())
            }
            ProblemModel::SoftmaxRegression {
                features,
                ridge,
                datasets,
                ..
            } => {
                let data = &datasets[worker];
                let j = rng.index(data.len());
                let mut label = data.labels[j];
                if view == DataView::FlippedLabels {
                    label = flip_label(label)?;
                }
                let mut grad = x.scaled(*ridge);
                softmax_sample_grad(x, data.row(j, *features), label, *features, 1.0, &mut grad);
                Ok(grad)
            }
        }
    }

    /// Exact `grad f_i(x)` on clean data.
    pub fn true_gradient(&self, worker: usize, x: &WorkerVector) -> Result<WorkerVector> {
        self.check_worker(worker)?;
        x.check_dim(self.dimension)?;
        Ok(self.worker_gradient(worker, x))
    }

    fn worker_gradient(&self, worker: usize, x: &WorkerVector) -> WorkerVector {
        match &self.model {
            ProblemModel::HeteroQuadratic { means } => x.sub(&means[worker]),
            ProblemModel::SoftmaxRegression {
                features,
                ridge,
                datasets,
                ..
            } => {
                let data = &datasets[worker];
                let mut grad = x.scaled(*ridge);
                let w = 1.0 / data.len() as f64;
                for j in 0..data.len() {
                    softmax_sample_grad(x, data.row(j, *features), data.labels[j], *features, w, &mut grad);
                }
                grad
            }
        }
    }

    fn worker_objective(&self, worker: usize, x: &WorkerVector) -> f64 {
        match &self.model {
            ProblemModel::HeteroQuadratic { means } => 0.5 * x.dist_sq(&means[worker]),
            ProblemModel::SoftmaxRegression {
                features,
                ridge,
                datasets,
                ..
            } => {
                let data = &datasets[worker];
                let mut logits = [0.0; NUM_CLASSES];
                let mut loss = 0.0;
                for j in 0..data.len() {
                    let a = data.row(j, *features);
                    for (k, l) in logits.iter_mut().enumerate() {
                        *l = dot(&x[k * features..(k + 1) * features], a);
                    }
                    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
                    loss += lse - logits[data.labels[j] as usize];
                }
                loss / data.len() as f64 + 0.5 * ridge * x.norm_sq()
            }
        }
    }

    /// `f(x)`: the honest-average objective.
    pub fn global_objective(&self, x: &WorkerVector) -> f64 {
        self.honest.iter().map(|&i| self.worker_objective(i, x)).sum::<f64>() / self.honest.len() as f64
    }

    /// `grad f(x)`.
    pub fn global_gradient(&self, x: &WorkerVector) -> WorkerVector {
        let grads: Vec<WorkerVector> = self.honest.iter().map(|&i| self.worker_gradient(i, x)).collect();
        mean_of(&grads, self.dimension)
    }

    /// `f(x) - f(x*)`.
    pub fn excess_loss(&self, x: &WorkerVector) -> f64 {
        match &self.model {
            // Closed form avoids cancellation near the optimum.
            ProblemModel::HeteroQuadratic { .. } if self.g_star == 0.0 => 0.5 * x.dist_sq(&self.optimum),
            _ => self.global_objective(x) - self.optimal_value,
        }
    }

    /// `(x*, f(x*))`.
    pub fn optimum(&self) -> (WorkerVector, f64) {
        (self.optimum.clone(), self.optimal_value)
    }

    pub fn sigma_tilde_sq(&self) -> f64 {
        self.constants.sigma_tilde_sq()
    }

    /// Honest heterogeneity `(1/|G|) sum_i ||grad f_i(x) - grad f(x)||^2` at `x`.
    pub fn heterogeneity_at(&self, x: &WorkerVector) -> f64 {
        let grads: Vec<WorkerVector> = self.honest.iter().map(|&i| self.worker_gradient(i, x)).collect();
        let mean = mean_of(&grads, self.dimension);
        grads.iter().map(|g| g.dist_sq(&mean)).sum::<f64>() / grads.len() as f64
    }

    /// Gradient descent with step `1/L` on the unconstrained objective.
    fn solve_unconstrained(&self, tolerance: f64, max_iterations: usize) -> Result<WorkerVector> {
        let step = 1.0 / self.constants.lipschitz;
        let mut x = WorkerVector::zeros(self.dimension);
        for _ in 0..max_iterations {
            let g = self.global_gradient(&x);
            if g.norm() <= tolerance {
                return Ok(x);
            }
            x.axpy(-step, &g);
        }
        Err(Error::NotConverged {
            iterations: max_iterations,
            last_iterate: x,
        })
    }

    /// Exact `E||g(x;z) - grad f_i(x)||^2` for finite datasets.
    fn exact_noise_moment(&self, worker: usize, x: &WorkerVector) -> f64 {
        match &self.model {
            ProblemModel::HeteroQuadratic { .. } => self.noise_sigma * self.noise_sigma,
            ProblemModel::SoftmaxRegression { features, datasets, .. } => {
                let data = &datasets[worker];
                let mean = self.worker_gradient(worker, x);
                let mut total = 0.0;
                for j in 0..data.len() {
                    let mut g = WorkerVector::zeros(self.dimension);
                    softmax_sample_grad(x, data.row(j, *features), data.labels[j], *features, 1.0, &mut g);
                    // Ridge terms cancel in the difference.
                    total += g.dist_sq(&mean.sub(&x.scaled(self.ridge())));
                }
                total / data.len() as f64
            }
        }
    }

    /// Exact smoothness-variance ratio at a pair of points.
    fn exact_smoothness_variance(&self, worker: usize, x: &WorkerVector, y: &WorkerVector) -> f64 {
        let gap = x.dist_sq(y);
        if gap == 0.0 {
            return 0.0;
        }
        match &self.model {
            ProblemModel::HeteroQuadratic { .. } => 0.0,
            ProblemModel::SoftmaxRegression { features, datasets, .. } => {
                let data = &datasets[worker];
                let mean_diff = self.worker_gradient(worker, x).sub(&self.worker_gradient(worker, y));
                let mut total = 0.0;
                for j in 0..data.len() {
                    let mut gx = x.scaled(self.ridge());
                    let mut gy = y.scaled(self.ridge());
                    softmax_sample_grad(x, data.row(j, *features), data.labels[j], *features, 1.0, &mut gx);
                    softmax_sample_grad(y, data.row(j, *features), data.labels[j], *features, 1.0, &mut gy);
                    total += gx.sub(&gy).dist_sq(&mean_diff);
                }
                total / data.len() as f64 / gap
            }
        }
    }

    fn ridge(&self) -> f64 {
        match &self.model {
            ProblemModel::SoftmaxRegression { ridge, .. } => *ridge,
            ProblemModel::HeteroQuadratic { .. } => 0.0,
        }
    }

    /// Sets `sigma`, `sigma_L` and `xi` to `margin` times their largest exact
    /// values over the optimum, the centre and `n_probes` random points of `K`.
    fn calibrate_constants(&mut self, n_probes: usize, margin: f64) {
        let mut rng = seeded_rng(self.seed, &[domain::PROBE, 0]);
        let mut points = vec![self.optimum.clone(), self.domain.center.clone()];
        points.extend((0..n_probes).map(|_| random_point_in(&self.domain, &mut rng)));
        let mut noise: f64 = 0.0;
        let mut smooth: f64 = 0.0;
        let mut hetero: f64 = 0.0;
        for (k, x) in points.iter().enumerate() {
            let y = &points[(k + 1) % points.len()];
            hetero = hetero.max(self.heterogeneity_at(x));
            for &i in &self.honest {
                noise = noise.max(self.exact_noise_moment(i, x));
                smooth = smooth.max(self.exact_smoothness_variance(i, x, y));
            }
        }
        self.constants.sigma = margin * noise.sqrt();
        self.constants.sigma_l = (margin * smooth.sqrt()).min(self.constants.lipschitz);
        self.constants.xi = margin * hetero.sqrt();
        self.noise_sigma = self.constants.sigma;
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::invalid("problem", e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::invalid("problem", e.to_string()))
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let text = self.to_toml().map_err(std::io::Error::other)?;
        std::fs::write(path, text)
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(std::io::Error::other)
    }
}

const CALIBRATION_MARGIN: f64 = 1.25;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Adds `weight * (softmax(W a) - e_y) (x) a` to `out`.
fn softmax_sample_grad(x: &[f64], a: &[f64], label: u32, p: usize, weight: f64, out: &mut [f64]) {
    let mut probs = [0.0; NUM_CLASSES];
    for (k, l) in probs.iter_mut().enumerate() {
        *l = dot(&x[k * p..(k + 1) * p], a);
    }
    softmax_in_place(&mut probs);
    probs[label as usize] -= 1.0;
    for (k, coef) in probs.iter().enumerate() {
        let c = weight * coef;
        for (o, av) in out[k * p..(k + 1) * p].iter_mut().zip(a) {
            *o += c * av;
        }
    }
}

/// Uniform point in a ball.
pub fn random_point_in(set: &FeasibleSet, rng: &mut RandomStream) -> WorkerVector {
    let d = set.dim();
    let dir: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    let r = set.radius * rng.uniform().powf(1.0 / d as f64);
    set.center
        .iter()
        .zip(&dir)
        .map(|(c, v)| c + r * v / norm)
        .collect()
}

/// Probe-based check of the declared constants. Violations are reported,
/// never raised.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantsReport {
    pub probe_points: usize,
    pub samples: usize,
    pub declared: ProblemConstants,
    /// Mean over (probe, honest worker) of the Monte-Carlo noise second moment.
    pub noise_second_moment_mean: f64,
    pub noise_second_moment_max: f64,
    /// `max observed / sigma^2`.
    pub noise_ratio: f64,
    /// Monte-Carlo standard error of the maximal cell, relative to `sigma^2`.
    pub noise_ratio_se: f64,
    pub sigma_l_sq_observed: f64,
    /// Standard error of the maximal `sigma_L` cell, relative to `sigma_L^2`.
    pub sigma_l_ratio_se: f64,
    /// `observed / sigma_L^2`, or the raw observation when `sigma_L = 0`.
    pub sigma_l_ratio: f64,
    pub xi_sq_observed: f64,
    pub xi_ratio: f64,
    pub lipschitz_observed: f64,
    pub lipschitz_ratio: f64,
    pub sigma_l_within_l: bool,
    pub violations: Vec<String>,
}

fn ratio(observed: f64, declared: f64) -> f64 {
    if declared > 0.0 {
        observed / declared
    } else {
        observed
    }
}

#[derive(Default)]
struct MeanAccumulator {
    n: usize,
    sum: f64,
    sum_sq: f64,
}

impl MeanAccumulator {
    fn push(&mut self, v: f64) {
        self.n += 1;
        self.sum += v;
        self.sum_sq += v * v;
    }

    fn mean(&self) -> f64 {
        self.sum / self.n.max(1) as f64
    }

    fn standard_error(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let n = self.n as f64;
        let var = ((self.sum_sq - self.sum * self.sum / n) / (n - 1.0)).max(0.0);
        (var / n).sqrt()
    }
}

/// Monte-Carlo probe of the declared `sigma`, `sigma_L`, `xi` and `L`.
///
/// `n_probe_points` random points of `K` are visited; at each, every honest
/// worker draws `n_samples` sample gradients.
pub fn verify_constants(p: &ProblemInstance, n_probe_points: usize, n_samples: usize) -> ConstantsReport {
    let mut rng = seeded_rng(p.seed, &[domain::PROBE, 1]);
    let probes: Vec<(WorkerVector, WorkerVector)> = (0..n_probe_points.max(1))
        .map(|_| (random_point_in(&p.domain, &mut rng), random_point_in(&p.domain, &mut rng)))
        .collect();
    let n_samples = n_samples.max(1);
    let mut noise_sum = 0.0;
    let mut noise_max: f64 = 0.0;
    let mut noise_max_se = 0.0;
    let mut noise_count = 0usize;
    let mut sigma_l_sq: f64 = 0.0;
    let mut sigma_l_se = 0.0;
    let mut xi_sq: f64 = 0.0;
    let mut lipschitz: f64 = 0.0;

    for (k, (x, y)) in probes.iter().enumerate() {
        xi_sq = xi_sq.max(p.heterogeneity_at(x));
        let gap = x.dist_sq(y);
        for &i in &p.honest {
            let gx_true = p.worker_gradient(i, x);
            let gy_true = p.worker_gradient(i, y);
            let mut noise = MeanAccumulator::default();
            let mut smooth = MeanAccumulator::default();
            for s in 0..n_samples {
                let token = SampleToken::new(p.seed ^ 0x7072_6f62, i, k, s);
                let gx = p.sample_gradient(i, x, token).expect("probe points are feasible");
                let gy = p.sample_gradient(i, y, token).expect("probe points are feasible");
                noise.push(gx.dist_sq(&gx_true));
                let diff = gx.sub(&gy);
                smooth.push(diff.dist_sq(&gx_true.sub(&gy_true)));
                if gap > 0.0 {
                    lipschitz = lipschitz.max((diff.norm_sq() / gap).sqrt());
                }
            }
            noise_sum += noise.mean();
            if noise.mean() > noise_max {
                noise_max = noise.mean();
                noise_max_se = noise.standard_error();
            }
            noise_count += 1;
            // Additive quadratic noise does not depend on x.
            if gap > 0.0 && p.is_labeled() && smooth.mean() / gap > sigma_l_sq {
                sigma_l_sq = smooth.mean() / gap;
                sigma_l_se = smooth.standard_error() / gap;
            }
        }
    }

    let c = p.constants;
    let mut report = ConstantsReport {
        probe_points: probes.len(),
        samples: n_samples,
        declared: c,
        noise_second_moment_mean: noise_sum / noise_count.max(1) as f64,
        noise_second_moment_max: noise_max,
        noise_ratio: ratio(noise_max, c.sigma * c.sigma),
        noise_ratio_se: ratio(noise_max_se, c.sigma * c.sigma),
        sigma_l_sq_observed: sigma_l_sq,
        sigma_l_ratio_se: ratio(sigma_l_se, c.sigma_l * c.sigma_l),
        sigma_l_ratio: ratio(sigma_l_sq, c.sigma_l * c.sigma_l),
        xi_sq_observed: xi_sq,
        xi_ratio: ratio(xi_sq, c.xi * c.xi),
        lipschitz_observed: lipschitz,
        lipschitz_ratio: ratio(lipschitz, c.lipschitz),
        sigma_l_within_l: c.sigma_l <= c.lipschitz,
        violations: Vec::new(),
    };
    // Monte-Carlo moments get 10% plus four standard errors of the worst cell;
    // the xi and Lipschitz probes are deterministic.
    let checks = [
        ("sigma", report.noise_ratio, 1.10 + 4.0 * report.noise_ratio_se),
        ("sigma_l", report.sigma_l_ratio, 1.10 + 4.0 * report.sigma_l_ratio_se),
        ("xi", report.xi_ratio, 1.0 + 1e-9),
        ("lipschitz", report.lipschitz_ratio, 1.0 + 1e-6),
    ];
    for (name, r, limit) in checks {
        if r > limit {
            report.violations.push(format!("{name}: observed ratio {r:.6} exceeds {limit:.6}"));
        }
    }
    if !report.sigma_l_within_l {
        report.violations.push("sigma_l exceeds L".into());
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_worker_quadratic(sigma: f64) -> ProblemInstance {
        ProblemInstance::hetero_quadratic(
            vec![WorkerVector::from([1.0, 0.0]), WorkerVector::from([-1.0, 0.0])],
            &[],
            sigma,
            None,
            3,
        )
        .unwrap()
    }

    #[test]
    fn noiseless_quadratic_gradient_is_exact() {
        let p = two_worker_quadratic(0.0);
        let x = WorkerVector::from([0.5, 0.25]);
        let g = p.sample_gradient(0, &x, SampleToken::new(1, 0, 1, 0)).unwrap();
        assert_eq!(g.as_slice(), &[-0.5, 0.25]);
    }

    #[test]
    fn quadratic_optimum_and_excess_loss() {
        let p = two_worker_quadratic(1.0);
        assert_eq!(p.optimum.as_slice(), &[0.0, 0.0]);
        assert_eq!(p.excess_loss(&WorkerVector::from([1.0, 0.0])), 0.5);
        assert_eq!(p.global_gradient(&p.optimum).norm(), 0.0);
        assert_eq!(p.g_star, 0.0);
        assert!((p.constants.xi - 1.0).abs() < 1e-15);
        for x in [[0.3, -0.2], [0.0, 0.9], [-0.7, 0.1]] {
            assert!((p.heterogeneity_at(&WorkerVector::from(x)) - 1.0).abs() < 1e-12);
        }
        // Radius 2 ||x*|| + 1 keeps the optimum interior.
        assert_eq!(p.domain.radius, 1.0);
        assert_eq!(p.sigma_tilde_sq(), 2.0);
    }

    #[test]
    fn quadratic_optimum_outside_domain_is_projected() {
        let k = FeasibleSet::ball(WorkerVector::zeros(1), 1.0).unwrap();
        let p = ProblemInstance::hetero_quadratic(
            vec![WorkerVector::from([3.0]), WorkerVector::from([5.0])],
            &[],
            0.0,
            Some(k),
            0,
        )
        .unwrap();
        assert_eq!(p.optimum[0], 1.0);
        assert_eq!(p.optimal_value, 0.5 * (4.0 + 16.0) / 2.0);
        assert_eq!(p.g_star, 3.0);
        assert_eq!(p.excess_loss(&p.optimum), 0.0);
    }

    #[test]
    fn quadratic_sample_mean_matches_true_gradient() {
        let p = ProblemInstance::generate_quadratic(&QuadraticParams::new(4, 3, 2.0, 9), &[]).unwrap();
        let x = WorkerVector::from([0.1, -0.2, 0.3, 0.0]);
        let n = 100_000;
        let mut acc = WorkerVector::zeros(4);
        for s in 0..n {
            acc.axpy(1.0, &p.sample_gradient(1, &x, SampleToken::new(5, 1, 1, s)).unwrap());
        }
        acc.scale(1.0 / n as f64);
        let truth = p.true_gradient(1, &x).unwrap();
        // Per-coordinate noise std is sigma / sqrt(d) = 1; CLT bound at 3 se.
        let tol = 3.0 * (2.0 / (n as f64 * 4.0).sqrt()) * 2.0;
        for j in 0..4 {
            assert!((acc[j] - truth[j]).abs() < tol, "coord {j}: {} vs {}", acc[j], truth[j]);
        }
    }

    #[test]
    fn identical_tokens_reproduce_samples() {
        let p = ProblemInstance::generate_quadratic(&QuadraticParams::new(3, 2, 1.0, 1), &[]).unwrap();
        let x = WorkerVector::zeros(3);
        let t = SampleToken::new(4, 0, 7, 0);
        assert_eq!(p.sample_gradient(0, &x, t).unwrap(), p.sample_gradient(0, &x, t).unwrap());
        let other = SampleToken::new(4, 0, 8, 0);
        assert_ne!(p.sample_gradient(0, &x, t).unwrap(), p.sample_gradient(0, &x, other).unwrap());
    }

    #[test]
    fn infeasible_queries_are_rejected() {
        let p = two_worker_quadratic(1.0);
        assert!(matches!(
            p.sample_gradient(0, &WorkerVector::from([5.0, 0.0]), SampleToken::new(0, 0, 1, 0)),
            Err(Error::Infeasible { .. })
        ));
    }

    #[test]
    fn quadratic_rejects_label_flip() {
        let p = two_worker_quadratic(1.0);
        assert!(matches!(
            p.sample_gradient_with(0, &WorkerVector::zeros(2), SampleToken::new(0, 0, 1, 0), DataView::FlippedLabels),
            Err(Error::UnsupportedAttack { .. })
        ));
    }

    #[test]
    fn flip_label_rule() {
        assert_eq!(flip_label(9).unwrap(), 0);
        assert_eq!(flip_label(0).unwrap(), 9);
        assert_eq!(flip_label(4).unwrap(), 5);
        for y in 0..10 {
            assert_eq!(flip_label(flip_label(y).unwrap()).unwrap(), y);
        }
        assert!(matches!(flip_label(10), Err(Error::LabelOutOfRange(10))));
    }

    fn small_softmax() -> ProblemInstance {
        let mut params = SoftmaxParams::new(4, 3, 21);
        params.samples_per_worker = 50;
        ProblemInstance::generate_softmax(&params, &[2]).unwrap()
    }

    #[test]
    fn softmax_gradient_matches_finite_differences_at_zero() {
        let p = small_softmax();
        let x = WorkerVector::zeros(p.dimension);
        // Empirical loss over 10^4 pinned samples from worker 0, and the
        // mean of the matching sample gradients.
        let n = 10_000;
        let tokens: Vec<SampleToken> = (0..n).map(|s| SampleToken::new(8, 0, 1, s)).collect();
        let mut mean_grad = WorkerVector::zeros(p.dimension);
        for t in &tokens {
            mean_grad.axpy(1.0 / n as f64, &p.sample_gradient(0, &x, *t).unwrap());
        }
        let ProblemModel::SoftmaxRegression { features, ridge, datasets, .. } = &p.model else {
            unreachable!()
        };
        let picks: Vec<usize> = tokens.iter().map(|t| t.stream().index(datasets[0].len())).collect();
        let empirical = |x: &WorkerVector| -> f64 {
            let mut loss = 0.0;
            for &j in &picks {
                let a = datasets[0].row(j, *features);
                let logits: Vec<f64> = (0..NUM_CLASSES).map(|k| dot(&x[k * features..(k + 1) * features], a)).collect();
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
                loss += lse - logits[datasets[0].labels[j] as usize];
            }
            loss / picks.len() as f64 + 0.5 * ridge * x.norm_sq()
        };
        let h = 1e-5;
        for coord in 0..p.dimension {
            let mut plus = x.clone();
            plus[coord] += h;
            let mut minus = x.clone();
            minus[coord] -= h;
            let fd = (empirical(&plus) - empirical(&minus)) / (2.0 * h);
            assert!((fd - mean_grad[coord]).abs() < 1e-3, "coord {coord}: fd {fd} vs {}", mean_grad[coord]);
        }
    }

    #[test]
    fn softmax_true_gradient_matches_objective_differences() {
        let p = small_softmax();
        let x = random_point_in(&p.domain, &mut seeded_rng(2, &[0]));
        let g = p.global_gradient(&x);
        let h = 1e-6;
        for coord in [0, 5, p.dimension - 1] {
            let mut plus = x.clone();
            plus[coord] += h;
            let mut minus = x.clone();
            minus[coord] -= h;
            let fd = (p.global_objective(&plus) - p.global_objective(&minus)) / (2.0 * h);
            assert!((fd - g[coord]).abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_optimum_is_stationary_and_interior() {
        let p = small_softmax();
        assert!(p.g_star <= 1e-10);
        assert!(p.domain.contains(&p.optimum, 0.0));
        assert!(p.constants.sigma_l <= p.constants.lipschitz);
        assert!(p.constants.sigma_l > 0.0 && p.constants.sigma > 0.0 && p.constants.xi > 0.0);
        assert_eq!(p.honest, vec![0, 1]);
        assert_eq!(p.byzantine(), vec![2]);
        let flipped = p
            .sample_gradient_with(2, &p.optimum, SampleToken::new(0, 2, 1, 0), DataView::FlippedLabels)
            .unwrap();
        assert_eq!(flipped.dim(), p.dimension);
    }

    #[test]
    fn quadratic_constants_verify() {
        let p = ProblemInstance::generate_quadratic(&QuadraticParams::new(10, 1, 1.0, 4), &[]).unwrap();
        let r = verify_constants(&p, 1, 100_000);
        assert_eq!(r.sigma_l_sq_observed, 0.0);
        assert_eq!(r.sigma_l_ratio, 0.0);
        assert!((r.noise_second_moment_mean - 1.0).abs() < 0.05);
        assert!(r.lipschitz_ratio <= 1.0 + 1e-6);
        assert!(r.violations.is_empty(), "{:?}", r.violations);
    }

    #[test]
    fn softmax_constants_verify() {
        let p = small_softmax();
        let r = verify_constants(&p, 8, 200);
        assert!(r.lipschitz_ratio <= 1.0 + 1e-6, "{}", r.lipschitz_ratio);
        assert!(r.sigma_l_within_l);
        assert!(r.sigma_l_sq_observed <= p.constants.lipschitz.powi(2));
    }

    #[test]
    fn problem_round_trips_through_toml() {
        for p in [two_worker_quadratic(0.5), small_softmax()] {
            let text = p.to_toml().unwrap();
            assert_eq!(ProblemInstance::from_toml(&text).unwrap(), p);
        }
    }
}
