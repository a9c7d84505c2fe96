//! Gaussian mixture learning over (phase, position) demonstration data.
//!
//! Mixtures are fit with weighted expectation-maximization, conditioned on
//! phase (Gaussian mixture regression), and rasterized onto policy grids.

mod em;
pub mod io;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::policy::{GridDistribution, GridSpec};

#[derive(Debug, Error)]
pub enum GmmError {
    #[error("demonstration set is empty")]
    EmptyData,
    #[error("need at least {need} samples, have {have}")]
    TooFewSamples { have: usize, need: usize },
    #[error("component count must be at least 1")]
    InvalidK,
    #[error("inconsistent sample dimension: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid demonstration phases: {0}")]
    InvalidPhases(String),
    #[error("positions must be 2- or 3-dimensional, got {0}")]
    InvalidDimension(usize),
    #[error("negative weight requires a negative label")]
    NegativeWeightOnPositive,
    #[error("weight clamping left no valid component")]
    AllMassNegative,
    #[error("demonstration parse error: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DemoLabel {
    Positive,
    Negative,
}

/// A time-indexed positional trajectory with a success label and sample weight.
///
/// Positive demonstrations span the full phase range: phases strictly
/// increasing with first = 0 and last = 1. Negative demonstrations (failed
/// rollouts or selected regions of them) only require strictly increasing
/// phases, and are the only label permitted to carry negative weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    samples: Vec<(f64, Vec<f64>)>,
    label: DemoLabel,
    weight: f64,
}

const PHASE_TOL: f64 = 1e-9;

impl Demonstration {
    pub fn new(
        samples: Vec<(f64, Vec<f64>)>,
        label: DemoLabel,
        weight: f64,
    ) -> Result<Self, GmmError> {
        if samples.is_empty() {
            return Err(GmmError::EmptyData);
        }
        let dim = samples[0].1.len();
        if dim != 2 && dim != 3 {
            return Err(GmmError::InvalidDimension(dim));
        }
        for (_, p) in &samples {
            if p.len() != dim {
                return Err(GmmError::DimensionMismatch {
                    expected: dim,
                    got: p.len(),
                });
            }
        }
        for w in samples.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(GmmError::InvalidPhases(format!(
                    "phases must be strictly increasing, got {} then {}",
                    w[0].0, w[1].0
                )));
            }
        }
        if label == DemoLabel::Positive {
            let first = samples[0].0;
            let last = samples[samples.len() - 1].0;
            if first.abs() > PHASE_TOL || (last - 1.0).abs() > PHASE_TOL {
                return Err(GmmError::InvalidPhases(format!(
                    "positive demonstration must span [0, 1], got [{first}, {last}]"
                )));
            }
            if weight < 0.0 {
                return Err(GmmError::NegativeWeightOnPositive);
            }
        }
        if !weight.is_finite() {
            return Err(GmmError::InvalidPhases("weight must be finite".into()));
        }
        Ok(Self {
            samples,
            label,
            weight,
        })
    }

    pub fn positive(samples: Vec<(f64, Vec<f64>)>) -> Result<Self, GmmError> {
        Self::new(samples, DemoLabel::Positive, 1.0)
    }

    pub fn samples(&self) -> &[(f64, Vec<f64>)] {
        &self.samples
    }

    pub fn label(&self) -> DemoLabel {
        self.label
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn with_weight(mut self, weight: f64) -> Result<Self, GmmError> {
        if self.label == DemoLabel::Positive && weight < 0.0 {
            return Err(GmmError::NegativeWeightOnPositive);
        }
        self.weight = weight;
        Ok(self)
    }

    /// Spatial dimension (2 or 3).
    pub fn dim(&self) -> usize {
        self.samples[0].1.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// An ordered collection of demonstrations sharing one spatial dimension.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DemoSet {
    demos: Vec<Demonstration>,
}

impl DemoSet {
    pub fn new(demos: Vec<Demonstration>) -> Result<Self, GmmError> {
        if let Some(first) = demos.first() {
            let dim = first.dim();
            for d in &demos {
                if d.dim() != dim {
                    return Err(GmmError::DimensionMismatch {
                        expected: dim,
                        got: d.dim(),
                    });
                }
            }
        }
        Ok(Self { demos })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn push(&mut self, demo: Demonstration) -> Result<(), GmmError> {
        if let Some(first) = self.demos.first() {
            if demo.dim() != first.dim() {
                return Err(GmmError::DimensionMismatch {
                    expected: first.dim(),
                    got: demo.dim(),
                });
            }
        }
        self.demos.push(demo);
        Ok(())
    }

    pub fn demos(&self) -> &[Demonstration] {
        &self.demos
    }

    pub fn len(&self) -> usize {
        self.demos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demos.is_empty()
    }

    pub fn positives(&self) -> DemoSet {
        DemoSet {
            demos: self
                .demos
                .iter()
                .filter(|d| d.label() == DemoLabel::Positive)
                .cloned()
                .collect(),
        }
    }

    pub fn negatives(&self) -> DemoSet {
        DemoSet {
            demos: self
                .demos
                .iter()
                .filter(|d| d.label() == DemoLabel::Negative)
                .cloned()
                .collect(),
        }
    }

    pub fn total_samples(&self) -> usize {
        self.demos.iter().map(|d| d.len()).sum()
    }

    /// Spatial dimension, or `None` for an empty set.
    pub fn dim(&self) -> Option<usize> {
        self.demos.first().map(|d| d.dim())
    }

    /// Flatten to joint-space points (phase, position...) and per-point weights.
    pub(crate) fn flatten(&self) -> (Vec<DVector<f64>>, Vec<f64>) {
        let mut points = Vec::with_capacity(self.total_samples());
        let mut weights = Vec::with_capacity(self.total_samples());
        for demo in &self.demos {
            for (phase, pos) in demo.samples() {
                let mut v = Vec::with_capacity(1 + pos.len());
                v.push(*phase);
                v.extend_from_slice(pos);
                points.push(DVector::from_vec(v));
                weights.push(demo.weight());
            }
        }
        (points, weights)
    }
}

/// One mixture component over joint (phase, position) space.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Weighted Gaussian mixture over joint (phase, position) space.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    components: Vec<GaussianComponent>,
    dim: usize,
}

impl GaussianMixture {
    pub fn new(components: Vec<GaussianComponent>, dim: usize) -> Self {
        debug_assert!(!components.is_empty());
        Self { components, dim }
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    /// Joint dimension: 1 (phase) + spatial.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Mixture density at a joint-space point.
    pub fn pdf(&self, x: &[f64]) -> f64 {
        em::PreparedMixture::new(self).pdf(x)
    }

    /// Weighted mean over components.
    pub fn mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.dim);
        for c in &self.components {
            m += &c.mean * c.weight;
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitWarning {
    /// All samples coincided in some dimension; a regularized
    /// single-component fit was returned.
    DegenerateData,
    /// Iteration cap reached before the log-likelihood settled; the
    /// best-so-far parameters were returned.
    NonConvergence,
    /// Fewer usable seed samples than requested components; k was reduced.
    ReducedComponents,
}

/// Result of an EM fit: the mixture plus diagnostics.
#[derive(Debug, Clone)]
pub struct GmmFit {
    pub mixture: GaussianMixture,
    pub warnings: Vec<FitWarning>,
    /// Log-likelihood of the (weighted) training data per EM iteration.
    pub log_likelihood_trace: Vec<f64>,
}

/// Fit a `k`-component mixture to the demonstrations with weighted EM.
///
/// Each sample contributes to the responsibility statistics scaled by its
/// demonstration's weight. Deterministic given `(demos, k, seed)`.
pub fn fit_em(demos: &DemoSet, k: usize, seed: u64) -> Result<GmmFit, GmmError> {
    if demos.is_empty() {
        return Err(GmmError::EmptyData);
    }
    let (points, weights) = demos.flatten();
    fit_em_points(&points, &weights, k, seed)
}

/// Fit on raw joint-space points with explicit per-point weights.
///
/// This is the entry point used for avoidance policies, where the data is a
/// selected region of a failed rollout rather than full demonstrations.
pub fn fit_em_points(
    points: &[DVector<f64>],
    weights: &[f64],
    k: usize,
    seed: u64,
) -> Result<GmmFit, GmmError> {
    em::fit(points, weights, k, seed)
}

/// Per-component conditional of a joint mixture given a phase value.
#[derive(Debug, Clone)]
pub struct ConditionalMixture {
    /// Phase-responsibility weights; sum to 1.
    pub weights: Vec<f64>,
    /// Conditional position means.
    pub means: Vec<DVector<f64>>,
    /// Conditional position covariances.
    pub covs: Vec<DMatrix<f64>>,
}

impl ConditionalMixture {
    /// Pooled conditional mean across components.
    pub fn mean(&self) -> DVector<f64> {
        let dim = self.means[0].len();
        let mut m = DVector::zeros(dim);
        for (w, mu) in self.weights.iter().zip(&self.means) {
            m += mu * *w;
        }
        m
    }
}

/// Condition a joint (phase, position) mixture on a phase value.
///
/// Standard Gaussian conditioning per component, with component weights
/// re-weighted by each component's phase density at `phase`.
pub fn gmr_condition(gmm: &GaussianMixture, phase: f64) -> ConditionalMixture {
    debug_assert!((0.0..=1.0).contains(&phase));
    let k = gmm.k();
    let mut weights = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    let mut covs = Vec::with_capacity(k);
    for comp in gmm.components() {
        let d = gmm.dim();
        let mu_t = comp.mean[0];
        let sigma_tt = comp.cov[(0, 0)];
        let sigma_xt = comp.cov.view((1, 0), (d - 1, 1)).into_owned();
        let sigma_xx = comp.cov.view((1, 1), (d - 1, d - 1)).into_owned();
        let mu_x = comp.mean.rows(1, d - 1).into_owned();

        let cond_mean = &mu_x + &sigma_xt * ((phase - mu_t) / sigma_tt);
        let cond_cov = &sigma_xx - &sigma_xt * sigma_xt.transpose() / sigma_tt;
        // Phase marginal density for the responsibility weight.
        let z = (phase - mu_t) * (phase - mu_t) / sigma_tt;
        let log_density = -0.5 * (z + sigma_tt.ln() + (2.0 * std::f64::consts::PI).ln());
        weights.push(comp.weight.ln() + log_density);
        means.push(cond_mean);
        covs.push(cond_cov);
    }
    // Normalize responsibility weights in log space.
    let max_lw = weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max_lw.is_finite() {
        let mut total = 0.0;
        for w in &mut weights {
            *w = (*w - max_lw).exp();
            total += *w;
        }
        for w in &mut weights {
            *w /= total;
        }
    } else {
        // Total phase-density underflow; fall back to the prior weights.
        for (w, comp) in weights.iter_mut().zip(gmm.components()) {
            *w = comp.weight;
        }
    }
    ConditionalMixture {
        weights,
        means,
        covs,
    }
}

/// Evaluate the mixture density at every cell center, scale by cell volume,
/// and normalize to a distribution over the grid.
///
/// Densities are computed in log space and shifted by the grid maximum
/// before exponentiating, so tightly concentrated mixtures (whose absolute
/// densities underflow off-ridge) still rasterize faithfully. The constant
/// cell volume cancels in normalization.
pub fn rasterize(gmm: &GaussianMixture, spec: &GridSpec) -> GridDistribution {
    debug_assert_eq!(gmm.dim(), spec.ndim());
    let prepared = em::PreparedMixture::new(gmm);
    let n = spec.len();
    let mut logs = vec![f64::NEG_INFINITY; n];
    let mut center = vec![0.0; spec.ndim()];
    let mut multi = vec![0usize; spec.ndim()];
    let mut buf = vec![0.0; gmm.k()];
    let mut log_max = f64::NEG_INFINITY;
    for (idx, slot) in logs.iter_mut().enumerate() {
        // Manual odometer walk; avoids per-cell unflatten cost.
        if idx > 0 {
            let mut d = spec.ndim() - 1;
            loop {
                multi[d] += 1;
                if multi[d] < spec.cells()[d] {
                    break;
                }
                multi[d] = 0;
                d -= 1;
            }
        }
        for (d, &i) in multi.iter().enumerate() {
            center[d] = spec.center(d, i);
        }
        *slot = prepared.log_pdf(&center, &mut buf);
        if *slot > log_max {
            log_max = *slot;
        }
    }
    if !log_max.is_finite() {
        // Degenerate mixture with no finite density anywhere on the grid.
        return GridDistribution::uniform(spec.clone());
    }
    let mut total = 0.0;
    let mut values = logs;
    for v in &mut values {
        *v = (*v - log_max).exp();
        total += *v;
    }
    for v in &mut values {
        *v /= total;
    }
    let mut dist = GridDistribution::from_values(spec.clone(), values)
        .expect("rasterized values are finite and non-negative");
    dist.set_normalized(true);
    dist
}
