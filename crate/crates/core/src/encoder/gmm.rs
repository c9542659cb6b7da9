use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EncoderError, FeatureMatrix};
use crate::things::{PropertyMask, SyntaxMatrix, ThingWindow};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
// fixed chunking keeps the E-step reduction order independent of thread count
const ESTEP_CHUNK: usize = 512;
const DEGENERATE_MASS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmOptions {
    pub max_iterations: usize,
    /// Stop when the relative log-likelihood improvement drops below this.
    pub tolerance: f64,
    pub variance_floor: f64,
}

impl Default for GmmOptions {
    fn default() -> Self {
        GmmOptions {
            max_iterations: 100,
            tolerance: 1e-5,
            variance_floor: 1e-4,
        }
    }
}

/// What happened while fitting.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FitInfo {
    pub windows: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Log-likelihood of the pooled data under the parameters of each
    /// iteration, starting with the initialization.
    pub log_likelihood: Vec<f64>,
    /// Iterations (indices into `log_likelihood`) after which a component
    /// was re-seeded.
    pub reseeded: Vec<usize>,
    /// Per-dimension mean of the fitting data.
    pub feature_mean: Vec<f64>,
}

/// K-component diagonal-covariance Gaussian mixture over window features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGmm", into = "RawGmm")]
pub struct GmmModel {
    mask: PropertyMask,
    dim: usize,
    weights: Vec<f64>,
    means: Vec<f64>,
    variances: Vec<f64>,
    seed: u64,
    options: GmmOptions,
    fit: FitInfo,
}

#[derive(Serialize, Deserialize)]
struct RawGmm {
    #[serde(rename = "K")]
    k: usize,
    properties: PropertyMask,
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
    seed: u64,
    options: GmmOptions,
    #[serde(default)]
    fit: FitInfo,
}

impl From<GmmModel> for RawGmm {
    fn from(m: GmmModel) -> Self {
        RawGmm {
            k: m.k(),
            properties: m.mask,
            means: m.means.chunks(m.dim).map(<[f64]>::to_vec).collect(),
            variances: m.variances.chunks(m.dim).map(<[f64]>::to_vec).collect(),
            weights: m.weights,
            seed: m.seed,
            options: m.options,
            fit: m.fit,
        }
    }
}

impl TryFrom<RawGmm> for GmmModel {
    type Error = EncoderError;

    fn try_from(raw: RawGmm) -> Result<Self, Self::Error> {
        if raw.weights.len() != raw.k || raw.means.len() != raw.k || raw.variances.len() != raw.k {
            return Err(EncoderError::InvalidModel(format!("expected {} components", raw.k)));
        }
        let model = GmmModel::new(
            raw.mask_dim()?,
            raw.properties,
            raw.weights,
            raw.means.concat(),
            raw.variances.concat(),
        )?;
        Ok(GmmModel {
            seed: raw.seed,
            options: raw.options,
            fit: raw.fit,
            ..model
        })
    }
}

impl RawGmm {
    fn mask_dim(&self) -> Result<usize, EncoderError> {
        let dim = self.properties.count();
        if self.means.iter().chain(&self.variances).any(|row| row.len() != dim) {
            return Err(EncoderError::InvalidModel(format!("rows must have {dim} entries")));
        }
        Ok(dim)
    }
}

impl GmmModel {
    /// Builds a model from explicit parameters (flat `K x D` row-major means
    /// and variances), checking every invariant.
    pub fn new(
        dim: usize,
        mask: PropertyMask,
        weights: Vec<f64>,
        means: Vec<f64>,
        variances: Vec<f64>,
    ) -> Result<Self, EncoderError> {
        let k = weights.len();
        if k == 0 || dim != mask.count() || means.len() != k * dim || variances.len() != k * dim {
            return Err(EncoderError::InvalidModel("parameter shapes disagree".into()));
        }
        if weights.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
            return Err(EncoderError::InvalidModel("weights must be positive".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(EncoderError::InvalidModel(format!("weights sum to {sum}, not 1")));
        }
        if means.iter().any(|m| !m.is_finite()) || variances.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(EncoderError::InvalidModel("means must be finite and variances positive".into()));
        }
        Ok(GmmModel {
            mask,
            dim,
            weights,
            means,
            variances,
            seed: 0,
            options: GmmOptions::default(),
            fit: FitInfo::default(),
        })
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mask(&self) -> PropertyMask {
        self.mask
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self, k: usize) -> &[f64] {
        &self.means[k * self.dim..(k + 1) * self.dim]
    }

    pub fn variance(&self, k: usize) -> &[f64] {
        &self.variances[k * self.dim..(k + 1) * self.dim]
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn options(&self) -> &GmmOptions {
        &self.options
    }

    pub fn fit_info(&self) -> &FitInfo {
        &self.fit
    }

    /// Feature vector of a window restricted to this model's properties.
    pub fn features(&self, w: &ThingWindow) -> Vec<f64> {
        self.mask.properties().map(|p| w.value(p)).collect()
    }

    fn log_norms(&self) -> Vec<f64> {
        (0..self.k())
            .map(|k| {
                let log_det: f64 = self.variance(k).iter().map(|v| v.ln()).sum();
                self.weights[k].ln() - 0.5 * (self.dim as f64 * LN_2PI + log_det)
            })
            .collect()
    }

    /// `log(t_k g_k(x))` for every component.
    pub(crate) fn component_log_densities(&self, x: &[f64], log_norms: &[f64], out: &mut [f64]) {
        for (k, slot) in out.iter_mut().enumerate() {
            let mu = self.mean(k);
            let var = self.variance(k);
            let mut q = 0.0;
            for d in 0..self.dim {
                let diff = x[d] - mu[d];
                q += diff * diff / var[d];
            }
            *slot = log_norms[k] - 0.5 * q;
        }
    }

    pub(crate) fn log_norms_cached(&self) -> Vec<f64> {
        self.log_norms()
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Soft assignment of one feature vector; sums to 1.
pub(crate) fn responsibilities_of(model: &GmmModel, x: &[f64], log_norms: &[f64], out: &mut [f64]) -> f64 {
    model.component_log_densities(x, log_norms, out);
    let lse = log_sum_exp(out);
    for v in out.iter_mut() {
        *v = (*v - lse).exp();
    }
    lse
}

/// Posterior component probabilities `γ_k(w)` of a window.
pub fn responsibilities(model: &GmmModel, w: &ThingWindow) -> Vec<f64> {
    let x = model.features(w);
    let mut out = vec![0.0; model.k()];
    responsibilities_of(model, &x, &model.log_norms(), &mut out);
    out
}

/// Total log-likelihood `Σ_w log Σ_k t_k g_k(w)`, computed in the log domain.
pub fn log_likelihood(model: &GmmModel, windows: &[ThingWindow]) -> f64 {
    let ln = model.log_norms();
    let mut buf = vec![0.0; model.k()];
    windows
        .iter()
        .map(|w| {
            model.component_log_densities(&model.features(w), &ln, &mut buf);
            log_sum_exp(&buf)
        })
        .sum()
}

struct Stats {
    ll: f64,
    mass: Vec<f64>,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl Stats {
    fn zeros(k: usize, dim: usize) -> Self {
        Stats {
            ll: 0.0,
            mass: vec![0.0; k],
            first: vec![0.0; k * dim],
            second: vec![0.0; k * dim],
        }
    }

    fn add(&mut self, other: &Stats) {
        self.ll += other.ll;
        for (a, b) in self.mass.iter_mut().zip(&other.mass) {
            *a += b;
        }
        for (a, b) in self.first.iter_mut().zip(&other.first) {
            *a += b;
        }
        for (a, b) in self.second.iter_mut().zip(&other.second) {
            *a += b;
        }
    }
}

fn e_step(model: &GmmModel, data: &FeatureMatrix) -> Stats {
    let k = model.k();
    let dim = model.dim;
    let ln = model.log_norms();
    let partials: Vec<Stats> = data
        .data
        .par_chunks(ESTEP_CHUNK * dim)
        .map(|chunk| {
            let mut s = Stats::zeros(k, dim);
            let mut gamma = vec![0.0; k];
            for x in chunk.chunks(dim) {
                s.ll += responsibilities_of(model, x, &ln, &mut gamma);
                for (c, &g) in gamma.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    s.mass[c] += g;
                    let row = c * dim;
                    for d in 0..dim {
                        s.first[row + d] += g * x[d];
                        s.second[row + d] += g * x[d] * x[d];
                    }
                }
            }
            s
        })
        .collect();
    let mut total = Stats::zeros(k, dim);
    for p in &partials {
        total.add(p);
    }
    total
}

/// Returns true when a degenerate component had to be re-seeded.
fn m_step(model: &mut GmmModel, stats: &Stats, n: usize) -> bool {
    let k = model.k();
    let dim = model.dim;
    let floor = model.options.variance_floor;
    let mut degenerate = Vec::new();
    for c in 0..k {
        let m = stats.mass[c];
        if m < DEGENERATE_MASS {
            degenerate.push(c);
            continue;
        }
        model.weights[c] = m / n as f64;
        for d in 0..dim {
            let i = c * dim + d;
            let mu = stats.first[i] / m;
            let var = stats.second[i] / m - mu * mu;
            model.means[i] = mu;
            model.variances[i] = var.max(floor);
        }
    }
    for &c in &degenerate {
        // split the widest healthy component
        let donor = (0..k)
            .filter(|j| !degenerate.contains(j))
            .max_by(|&a, &b| {
                let va: f64 = model.variance(a).iter().sum();
                let vb: f64 = model.variance(b).iter().sum();
                va.total_cmp(&vb).then(b.cmp(&a))
            })
            .expect("at least one component keeps mass");
        let widest = (0..dim)
            .max_by(|&a, &b| model.variance(donor)[a].total_cmp(&model.variance(donor)[b]).then(b.cmp(&a)))
            .unwrap_or(0);
        log::warn!("re-seeding empty GMM component {c} from component {donor}");
        for d in 0..dim {
            model.means[c * dim + d] = model.means[donor * dim + d];
            model.variances[c * dim + d] = model.variances[donor * dim + d];
        }
        let shift = 0.5 * model.variances[donor * dim + widest].sqrt();
        model.means[c * dim + widest] += shift;
        model.means[donor * dim + widest] -= shift;
        let half = model.weights[donor] / 2.0;
        model.weights[donor] = half;
        model.weights[c] = half;
    }
    // renormalize away rounding drift
    let sum: f64 = model.weights.iter().sum();
    for t in &mut model.weights {
        *t /= sum;
    }
    !degenerate.is_empty()
}

fn kmeans_pp(data: &FeatureMatrix, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let dim = data.dim;
    let n = data.len();
    let mut centers = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centers.extend_from_slice(data.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(data.row(i), data.row(first))).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = data.row(pick).to_vec();
        for (i, slot) in d2.iter_mut().enumerate() {
            *slot = slot.min(sq_dist(data.row(i), &c));
        }
        centers.extend_from_slice(&c);
    }
    centers
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Fits a diagonal GMM to the pooled windows with EM, seeded by k-means++.
pub fn fit_gmm(
    holdout: &[SyntaxMatrix],
    k: usize,
    seed: u64,
    mask: PropertyMask,
    options: GmmOptions,
) -> Result<GmmModel, EncoderError> {
    let windows: Vec<ThingWindow> = holdout.iter().flat_map(|m| m.rows.iter().copied()).collect();
    fit_gmm_windows(&windows, k, seed, mask, options)
}

/// [`fit_gmm`] over an already pooled window list.
pub fn fit_gmm_windows(
    windows: &[ThingWindow],
    k: usize,
    seed: u64,
    mask: PropertyMask,
    options: GmmOptions,
) -> Result<GmmModel, EncoderError> {
    if k == 0 {
        return Err(EncoderError::InvalidComponents);
    }
    let data = FeatureMatrix::from_windows(windows, mask);
    let n = data.len();
    if n < 10 * k {
        return Err(EncoderError::InsufficientData { needed: 10 * k, got: n });
    }
    let dim = data.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = kmeans_pp(&data, k, &mut rng);

    // hard assignment to the seeds gives the starting weights and variances
    let mut feature_mean = vec![0.0; dim];
    let mut global_var = vec![0.0; dim];
    for x in data.rows() {
        for d in 0..dim {
            feature_mean[d] += x[d];
        }
    }
    feature_mean.iter_mut().for_each(|m| *m /= n as f64);
    for x in data.rows() {
        for d in 0..dim {
            global_var[d] += (x[d] - feature_mean[d]).powi(2);
        }
    }
    global_var
        .iter_mut()
        .for_each(|v| *v = (*v / n as f64).max(options.variance_floor));

    let mut counts = vec![0usize; k];
    let mut sums = vec![0.0; k * dim];
    let mut sq = vec![0.0; k * dim];
    for x in data.rows() {
        let c = (0..k)
            .min_by(|&a, &b| {
                sq_dist(x, &centers[a * dim..(a + 1) * dim]).total_cmp(&sq_dist(x, &centers[b * dim..(b + 1) * dim]))
            })
            .expect("k >= 1");
        counts[c] += 1;
        for d in 0..dim {
            sums[c * dim + d] += x[d];
            sq[c * dim + d] += x[d] * x[d];
        }
    }
    let mut weights = Vec::with_capacity(k);
    let mut variances = Vec::with_capacity(k * dim);
    for c in 0..k {
        weights.push((counts[c].max(1)) as f64);
        for d in 0..dim {
            let var = if counts[c] > 1 {
                let m = sums[c * dim + d] / counts[c] as f64;
                sq[c * dim + d] / counts[c] as f64 - m * m
            } else {
                global_var[d]
            };
            variances.push(var.max(options.variance_floor));
        }
    }
    let wsum: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|t| *t /= wsum);

    let mut model = GmmModel::new(dim, mask, weights, centers, variances)?;
    model.seed = seed;
    model.options = options;

    let mut trace = Vec::new();
    let mut reseeded = Vec::new();
    let mut converged = false;
    for it in 0..=options.max_iterations {
        let stats = e_step(&model, &data);
        trace.push(stats.ll);
        if it > 0 {
            let prev = trace[it - 1];
            if (stats.ll - prev).abs() <= options.tolerance * prev.abs() {
                converged = true;
                break;
            }
        }
        if it == options.max_iterations {
            break;
        }
        if m_step(&mut model, &stats, n) {
            reseeded.push(it);
        }
    }
    model.fit = FitInfo {
        windows: n,
        iterations: trace.len() - 1,
        converged,
        log_likelihood: trace,
        reseeded,
        feature_mean,
    };
    Ok(model)
}
