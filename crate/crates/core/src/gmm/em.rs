//! Weighted expectation-maximization internals.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{FitWarning, GaussianComponent, GaussianMixture, GmmError, GmmFit};

const MAX_ITERS: usize = 300;
const LL_TOL: f64 = 1e-7;
const COV_REG: f64 = 1e-6;
const RESP_FLOOR: f64 = 1e-8;
/// Mixture weight below which a component counts as collapsed.
const COLLAPSE_PRUNE: f64 = 1e-6;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Symmetrize, apply the trace-scaled ridge, and clamp eigenvalues so the
/// minimum eigenvalue is at least the regularization floor.
pub(super) fn regularize_covariance(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let dim = cov.nrows();
    let mut sym = (cov + cov.transpose()) * 0.5;
    let trace_scale = (sym.trace() / dim as f64).max(1e-6);
    let floor = COV_REG * trace_scale;
    for i in 0..dim {
        sym[(i, i)] += floor;
    }
    let eig = sym.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|&l| l >= floor) {
        return sym;
    }
    let mut clamped = eig.eigenvalues.clone();
    for l in clamped.iter_mut() {
        if *l < floor {
            *l = floor;
        }
    }
    &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose()
}

/// Mixture with precomputed inverses for fast repeated density evaluation.
pub(super) struct PreparedMixture {
    comps: Vec<PreparedComponent>,
    dim: usize,
}

struct PreparedComponent {
    log_weight: f64,
    mean: Vec<f64>,
    /// Row-major inverse covariance.
    inv_cov: Vec<f64>,
    /// log(weight) - 0.5*(d*ln(2pi) + ln|cov|), so logpdf = this - 0.5*maha².
    log_norm: f64,
}

impl PreparedMixture {
    pub(super) fn new(gmm: &GaussianMixture) -> Self {
        let dim = gmm.dim();
        let comps = gmm
            .components()
            .iter()
            .map(|c| {
                let reg = regularize_covariance(&c.cov);
                let chol = reg
                    .clone()
                    .cholesky()
                    .unwrap_or_else(|| regularize_covariance(&(reg * 2.0)).cholesky().unwrap());
                let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
                let inv = chol.inverse();
                PreparedComponent {
                    log_weight: c.weight.ln(),
                    mean: c.mean.iter().cloned().collect(),
                    inv_cov: (0..dim)
                        .flat_map(|i| (0..dim).map(move |j| (i, j)))
                        .map(|(i, j)| inv[(i, j)])
                        .collect(),
                    log_norm: -0.5 * (dim as f64 * LN_2PI + log_det),
                }
            })
            .collect();
        Self { comps, dim }
    }

    fn log_component_density(&self, c: &PreparedComponent, x: &[f64]) -> f64 {
        let d = self.dim;
        let mut maha = 0.0;
        for i in 0..d {
            let di = x[i] - c.mean[i];
            for (j, xj) in x.iter().enumerate() {
                maha += di * c.inv_cov[i * d + j] * (xj - c.mean[j]);
            }
        }
        c.log_norm - 0.5 * maha
    }

    /// Per-component log joint density log(w_k) + log N_k(x).
    pub(super) fn log_joint(&self, x: &[f64], out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.comps) {
            *o = c.log_weight + self.log_component_density(c, x);
        }
    }

    pub(super) fn k(&self) -> usize {
        self.comps.len()
    }

    pub(super) fn pdf(&self, x: &[f64]) -> f64 {
        self.comps
            .iter()
            .map(|c| (c.log_weight + self.log_component_density(c, x)).exp())
            .sum()
    }

    /// Log mixture density; `buf` must hold `k()` slots.
    pub(super) fn log_pdf(&self, x: &[f64], buf: &mut [f64]) -> f64 {
        self.log_joint(x, buf);
        log_sum_exp(buf)
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// k-means++ seeding. Selection probability uses |weight| so negative
/// demonstrations can seed their own components (which the M-step then
/// cancels and deletes); sign only matters once EM proper starts.
fn kmeanspp_seeds(
    points: &[DVector<f64>],
    weights: &[f64],
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let candidates: Vec<usize> = (0..points.len()).filter(|&i| weights[i] != 0.0).collect();
    let mut seeds = Vec::with_capacity(k);
    let total: f64 = candidates.iter().map(|&i| weights[i].abs()).sum();
    let mut target = rng.gen::<f64>() * total;
    let mut first = candidates[0];
    for &i in &candidates {
        target -= weights[i].abs();
        if target <= 0.0 {
            first = i;
            break;
        }
    }
    seeds.push(first);
    let mut dist2: Vec<f64> = candidates
        .iter()
        .map(|&i| (&points[i] - &points[first]).norm_squared())
        .collect();
    while seeds.len() < k {
        let mass: f64 = candidates
            .iter()
            .zip(&dist2)
            .map(|(&i, &d)| weights[i].abs() * d)
            .sum();
        let next = if mass > 0.0 {
            let mut target = rng.gen::<f64>() * mass;
            let mut chosen = candidates[0];
            for (&i, &d) in candidates.iter().zip(&dist2) {
                target -= weights[i].abs() * d;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // All remaining candidates coincide with a seed; reuse one.
            candidates[seeds.len() % candidates.len()]
        };
        seeds.push(next);
        for (slot, &i) in dist2.iter_mut().zip(&candidates) {
            let d = (&points[i] - &points[next]).norm_squared();
            if d < *slot {
                *slot = d;
            }
        }
    }
    seeds
}

struct State {
    comps: Vec<GaussianComponent>,
}

/// Initial parameters: nearest-seed clustering with |weight| importance, so
/// both positive and negative regions start with a covering component.
fn initialize(
    points: &[DVector<f64>],
    weights: &[f64],
    seeds: &[usize],
    dim: usize,
) -> State {
    let k = seeds.len();
    let mut cluster_w = vec![0.0; k];
    let mut cluster_mean = vec![DVector::<f64>::zeros(dim); k];
    let mut assignment = vec![0usize; points.len()];
    for (i, p) in points.iter().enumerate() {
        if weights[i] == 0.0 {
            continue;
        }
        let w = weights[i].abs();
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (c, &s) in seeds.iter().enumerate() {
            let d = (p - &points[s]).norm_squared();
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        assignment[i] = best;
        cluster_w[best] += w;
        cluster_mean[best] += p * w;
    }
    // Global |weight| covariance as the fallback for thin clusters.
    let total_w: f64 = weights.iter().map(|w| w.abs()).sum();
    let mut global_mean = DVector::zeros(dim);
    for (p, &w) in points.iter().zip(weights) {
        global_mean += p * w.abs();
    }
    global_mean /= total_w;
    let mut global_cov = DMatrix::zeros(dim, dim);
    for (p, &w) in points.iter().zip(weights) {
        let d = p - &global_mean;
        global_cov += &d * d.transpose() * w.abs();
    }
    global_cov /= total_w;
    let global_cov = regularize_covariance(&global_cov);

    let mut comps = Vec::with_capacity(k);
    for c in 0..k {
        let (mean, weight) = if cluster_w[c] > 0.0 {
            (&cluster_mean[c] / cluster_w[c], cluster_w[c] / total_w)
        } else {
            (points[seeds[c]].clone(), 1.0 / (k * points.len()) as f64)
        };
        let mut cov = DMatrix::zeros(dim, dim);
        let mut cw = 0.0;
        for (i, p) in points.iter().enumerate() {
            if weights[i] != 0.0 && assignment[i] == c {
                let w = weights[i].abs();
                let d = p - &mean;
                cov += &d * d.transpose() * w;
                cw += w;
            }
        }
        let cov = if cw > 0.0 {
            regularize_covariance(&(cov / cw))
        } else {
            global_cov.clone()
        };
        comps.push(GaussianComponent { weight, mean, cov });
    }
    // Renormalize weights (fallback branches can disturb the total).
    let wsum: f64 = comps.iter().map(|c| c.weight).sum();
    for c in &mut comps {
        c.weight /= wsum;
    }
    State { comps }
}

pub(super) fn fit(
    points: &[DVector<f64>],
    weights: &[f64],
    k: usize,
    seed: u64,
) -> Result<GmmFit, GmmError> {
    if k == 0 {
        return Err(GmmError::InvalidK);
    }
    if points.is_empty() {
        return Err(GmmError::EmptyData);
    }
    debug_assert_eq!(points.len(), weights.len());
    if points.len() < k {
        return Err(GmmError::TooFewSamples {
            have: points.len(),
            need: k,
        });
    }
    let dim = points[0].len();
    let mut warnings = Vec::new();

    let positive_count = weights.iter().filter(|&&w| w > 0.0).count();
    if positive_count == 0 {
        return Err(GmmError::AllMassNegative);
    }

    // Degenerate data: every sample coincides in some dimension.
    for d in 0..dim {
        let lo = points.iter().map(|p| p[d]).fold(f64::INFINITY, f64::min);
        let hi = points
            .iter()
            .map(|p| p[d])
            .fold(f64::NEG_INFINITY, f64::max);
        if hi - lo <= 1e-12 * hi.abs().max(1.0) {
            warnings.push(FitWarning::DegenerateData);
            let fit = single_component(points, weights)?;
            return Ok(GmmFit {
                mixture: GaussianMixture::new(vec![fit], dim),
                warnings,
                log_likelihood_trace: Vec::new(),
            });
        }
    }

    let usable_count = weights.iter().filter(|&&w| w != 0.0).count();
    let k = if usable_count < k {
        warnings.push(FitWarning::ReducedComponents);
        usable_count
    } else {
        k
    };

    // Deterministic restart ladder: independent k-means++ draws, best final
    // log-likelihood wins.
    let mut winner: Option<(f64, EmRun)> = None;
    let mut last_err = None;
    for restart in 0..N_INIT {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(restart as u64);
        match run_em_once(points, weights, k, dim, &mut rng) {
            Ok(run) => {
                if winner.as_ref().is_none_or(|(b, _)| run.best_ll > *b) {
                    winner = Some((run.best_ll, run));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let run = match winner {
        Some((_, run)) => run,
        None => return Err(last_err.expect("all restarts failed with an error")),
    };
    if !run.converged {
        warnings.push(FitWarning::NonConvergence);
    }
    finalize(run, dim, warnings)
}

const N_INIT: usize = 3;

struct EmRun {
    best_ll: f64,
    comps: Vec<GaussianComponent>,
    trace: Vec<f64>,
    converged: bool,
}

fn run_em_once(
    points: &[DVector<f64>],
    weights: &[f64],
    k: usize,
    dim: usize,
    rng: &mut ChaCha8Rng,
) -> Result<EmRun, GmmError> {
    let seeds = kmeanspp_seeds(points, weights, k, rng);
    let mut state = initialize(points, weights, &seeds, dim);

    let n = points.len();
    let mut trace: Vec<f64> = Vec::new();
    let mut best: Option<(f64, Vec<GaussianComponent>)> = None;
    let mut converged = false;
    let mut resp = vec![0.0; n * state.comps.len()];

    for _ in 0..MAX_ITERS {
        // E-step in log space; also accumulates the weighted log-likelihood.
        let prepared = PreparedMixture::new(&GaussianMixture::new(state.comps.clone(), dim));
        let kk = prepared.k();
        resp.resize(n * kk, 0.0);
        let mut ll = 0.0;
        let mut log_joint = vec![0.0; kk];
        for (i, p) in points.iter().enumerate() {
            prepared.log_joint(p.as_slice(), &mut log_joint);
            let lse = log_sum_exp(&log_joint);
            if lse.is_finite() {
                ll += weights[i] * lse;
                for c in 0..kk {
                    resp[i * kk + c] = (log_joint[c] - lse).exp();
                }
            } else {
                // Density underflow: the point explains nothing this round.
                for c in 0..kk {
                    resp[i * kk + c] = 0.0;
                }
            }
        }
        if best.as_ref().is_none_or(|(b, _)| ll > *b) {
            best = Some((ll, state.comps.clone()));
        }
        let improved = trace.last().map_or(f64::INFINITY, |prev| ll - prev);
        trace.push(ll);
        if improved < LL_TOL {
            converged = true;
            break;
        }

        // M-step with sample-weight-scaled responsibilities. A component
        // whose responsibility sum collapses to the floor keeps its previous
        // parameters at floor weight: it stays available to absorb negative
        // mass but stops influencing the fit. Final pruning removes it.
        let mut new_comps = Vec::with_capacity(kk);
        let mut collapsed = 0;
        for c in 0..kk {
            let nk: f64 = (0..n).map(|i| weights[i] * resp[i * kk + c]).sum();
            if nk <= RESP_FLOOR {
                let mut frozen = state.comps[c].clone();
                frozen.weight = RESP_FLOOR;
                new_comps.push(frozen);
                collapsed += 1;
                continue;
            }
            let mut mean = DVector::zeros(dim);
            for (i, p) in points.iter().enumerate() {
                mean += p * (weights[i] * resp[i * kk + c]);
            }
            mean /= nk;
            // Scatter accumulates by |weight|: signed weights cancel mass
            // (component weights, means) but a negative contribution to a
            // covariance would collapse it into a degenerate knife edge.
            let mut cov = DMatrix::zeros(dim, dim);
            let mut cov_mass = 0.0;
            for (i, p) in points.iter().enumerate() {
                let r = weights[i].abs() * resp[i * kk + c];
                let d = p - &mean;
                cov += &d * d.transpose() * r;
                cov_mass += r;
            }
            cov /= cov_mass;
            new_comps.push(GaussianComponent {
                weight: nk,
                mean,
                cov: regularize_covariance(&cov),
            });
        }
        if collapsed == kk {
            return Err(GmmError::AllMassNegative);
        }
        let total: f64 = new_comps.iter().map(|c| c.weight).sum();
        for c in &mut new_comps {
            c.weight /= total;
        }
        state = State { comps: new_comps };
    }

    let (best_ll, comps) = best.expect("at least one EM iteration ran");
    Ok(EmRun {
        best_ll,
        comps,
        trace,
        converged,
    })
}

fn finalize(run: EmRun, dim: usize, warnings: Vec<FitWarning>) -> Result<GmmFit, GmmError> {
    // Prune components whose weight collapsed during iteration.
    let kept: Vec<GaussianComponent> = run
        .comps
        .into_iter()
        .filter(|c| c.weight > COLLAPSE_PRUNE)
        .collect();
    if kept.is_empty() {
        return Err(GmmError::AllMassNegative);
    }
    let total: f64 = kept.iter().map(|c| c.weight).sum();
    let comps = kept
        .into_iter()
        .map(|mut c| {
            c.weight /= total;
            c
        })
        .collect();
    Ok(GmmFit {
        mixture: GaussianMixture::new(comps, dim),
        warnings,
        log_likelihood_trace: run.trace,
    })
}

fn single_component(
    points: &[DVector<f64>],
    weights: &[f64],
) -> Result<GaussianComponent, GmmError> {
    let dim = points[0].len();
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(GmmError::AllMassNegative);
    }
    let mut mean = DVector::zeros(dim);
    for (p, &w) in points.iter().zip(weights) {
        mean += p * w;
    }
    mean /= total;
    let mut cov = DMatrix::zeros(dim, dim);
    let mut cov_mass = 0.0;
    for (p, &w) in points.iter().zip(weights) {
        let d = p - &mean;
        cov += &d * d.transpose() * w.abs();
        cov_mass += w.abs();
    }
    cov /= cov_mass;
    Ok(GaussianComponent {
        weight: 1.0,
        mean,
        cov: regularize_covariance(&cov),
    })
}
