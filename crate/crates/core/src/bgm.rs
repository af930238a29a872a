//! Bounded (box-truncated) Gaussian mixture model.
//!
//! The density is a Gaussian mixture renormalized over a hyper-rectangle:
//!
//! ```text
//! f_BM(x) = sum_k pi_k g_k(x) / sum_k pi_k P_k        for l < x < u, else 0
//! ```
//!
//! where `P_k` is the box mass of component k. Equivalently it is a mixture
//! of box-truncated components `f_k = g_k / P_k` with weights
//! `eta_k = pi_k P_k / sum_j pi_j P_j`.
//!
//! EM fitting follows the truncated-data form: responsibilities are the
//! usual posterior over components, and the M-step mean/covariance updates
//! carry correction terms built from the first and second moments of each
//! component truncated to the box. With an unbounded box both corrections
//! vanish and the iteration reduces exactly to the standard GMM EM.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::CholeskyGaussian;
use crate::qmc::QmcConfig;
use crate::truncated::{box_probability, truncated_gaussian_stats};

/// Box bounds shared by all components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !l.is_finite() || !u.is_finite() || l >= u {
                return Err(Error::DegenerateBox { dim: i });
            }
        }
        Ok(Bounds { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower_vec(&self) -> DVector<f64> {
        DVector::from_vec(self.lower.clone())
    }

    pub fn upper_vec(&self) -> DVector<f64> {
        DVector::from_vec(self.upper.clone())
    }

    pub fn strictly_contains(&self, x: &DVector<f64>) -> bool {
        (0..self.dim()).all(|i| self.lower[i] < x[i] && x[i] < self.upper[i])
    }

    fn first_violation(&self, x: &DVector<f64>) -> Option<usize> {
        (0..self.dim()).find(|&i| !(self.lower[i] < x[i] && x[i] < self.upper[i]))
    }
}

/// A fitted bounded Gaussian mixture. Immutable after construction; all
/// derived quantities (Cholesky factors, per-component box masses, the
/// truncated mixing weights) are computed once up front.
#[derive(Debug, Clone)]
pub struct BoundedGmm {
    weights: Vec<f64>,
    components: Vec<CholeskyGaussian>,
    covariances: Vec<DMatrix<f64>>,
    bounds: Bounds,
    box_probs: Vec<f64>,
    eta: Vec<f64>,
    /// ln sum_k pi_k P_k
    log_norm: f64,
    qmc: QmcConfig,
}

impl BoundedGmm {
    /// Builds a model from the underlying (untruncated) mixing weights
    /// `pi`, component means and covariances, and the box.
    pub fn new(
        weights: Vec<f64>,
        means: Vec<DVector<f64>>,
        covariances: Vec<DMatrix<f64>>,
        bounds: Bounds,
        qmc: QmcConfig,
    ) -> Result<Self> {
        let wsum: f64 = weights.iter().sum();
        if weights.is_empty() || (wsum - 1.0).abs() > 1e-9 || weights.iter().any(|w| *w < 0.0) {
            return Err(Error::InvalidModel {
                reason: format!("weights must be non-negative and sum to 1, got sum {wsum}"),
            });
        }
        Self::build(weights, means, covariances, bounds, qmc)
    }

    /// Builds a model from the truncated-mixture weights `eta` instead of
    /// `pi` (the natural parameterization of the EM iteration).
    pub fn from_eta(
        eta: Vec<f64>,
        means: Vec<DVector<f64>>,
        covariances: Vec<DMatrix<f64>>,
        bounds: Bounds,
        qmc: QmcConfig,
    ) -> Result<Self> {
        let k = eta.len();
        if k == 0 || means.len() != k || covariances.len() != k {
            return Err(Error::InvalidModel {
                reason: "component count mismatch".into(),
            });
        }
        let lower = bounds.lower_vec();
        let upper = bounds.upper_vec();
        let mut pi = Vec::with_capacity(k);
        let mut probs = Vec::with_capacity(k);
        for ((e, m), c) in eta.iter().zip(&means).zip(&covariances) {
            let p = box_probability(m, c, &lower, &upper, &qmc)?;
            if p <= 0.0 {
                return Err(Error::VanishingBoxMass { prob: p });
            }
            pi.push(e / p);
            probs.push(p);
        }
        let s: f64 = pi.iter().sum();
        for w in &mut pi {
            *w /= s;
        }
        Self::build_with_probs(pi, means, covariances, bounds, qmc, probs)
    }

    fn build(
        weights: Vec<f64>,
        means: Vec<DVector<f64>>,
        covariances: Vec<DMatrix<f64>>,
        bounds: Bounds,
        qmc: QmcConfig,
    ) -> Result<Self> {
        let lower = bounds.lower_vec();
        let upper = bounds.upper_vec();
        let mut probs = Vec::with_capacity(means.len());
        for (mean, cov) in means.iter().zip(&covariances) {
            probs.push(box_probability(mean, cov, &lower, &upper, &qmc)?);
        }
        Self::build_with_probs(weights, means, covariances, bounds, qmc, probs)
    }

    fn build_with_probs(
        weights: Vec<f64>,
        means: Vec<DVector<f64>>,
        covariances: Vec<DMatrix<f64>>,
        bounds: Bounds,
        qmc: QmcConfig,
        box_probs: Vec<f64>,
    ) -> Result<Self> {
        let k = weights.len();
        if means.len() != k || covariances.len() != k {
            return Err(Error::InvalidModel {
                reason: "component count mismatch".into(),
            });
        }
        let d = bounds.dim();
        let mut components = Vec::with_capacity(k);
        for (mean, cov) in means.into_iter().zip(&covariances) {
            if mean.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: mean.len(),
                });
            }
            components.push(CholeskyGaussian::new(mean, cov.clone())?);
        }
        let norm: f64 = weights
            .iter()
            .zip(&box_probs)
            .map(|(w, p)| w * p)
            .sum::<f64>();
        if norm <= 0.0 {
            return Err(Error::VanishingBoxMass { prob: norm });
        }
        let eta: Vec<f64> = weights
            .iter()
            .zip(&box_probs)
            .map(|(w, p)| w * p / norm)
            .collect();
        Ok(BoundedGmm {
            weights,
            components,
            covariances,
            bounds,
            box_probs,
            eta,
            log_norm: norm.ln(),
            qmc,
        })
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    /// Underlying (untruncated) mixing weights pi_k.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self, k: usize) -> &DVector<f64> {
        self.components[k].mean()
    }

    pub fn covariance(&self, k: usize) -> &DMatrix<f64> {
        &self.covariances[k]
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    /// Per-component box masses P_k.
    pub fn box_probs(&self) -> &[f64] {
        &self.box_probs
    }

    pub fn qmc(&self) -> &QmcConfig {
        &self.qmc
    }

    /// Mixing weights of the truncated-component decomposition,
    /// eta_k = pi_k P_k / sum_j pi_j P_j. Sums to 1.
    pub fn mixture_weights_eta(&self) -> &[f64] {
        &self.eta
    }

    /// ln f_BM(x); -inf outside the box.
    pub fn log_pdf(&self, x: &DVector<f64>) -> f64 {
        if !self.bounds.strictly_contains(x) {
            return f64::NEG_INFINITY;
        }
        let mut terms = Vec::with_capacity(self.k());
        for (w, g) in self.weights.iter().zip(&self.components) {
            if *w > 0.0 {
                terms.push(w.ln() + g.log_pdf(x));
            }
        }
        log_sum_exp(&terms) - self.log_norm
    }

    /// Renormalized-mixture form of the density (division by the shared
    /// box mass of the whole mixture).
    pub fn pdf(&self, x: &DVector<f64>) -> f64 {
        self.log_pdf(x).exp()
    }

    /// Decomposed form: sum_k eta_k g_k(x) / P_k. Agrees with [`pdf`] up
    /// to rounding; kept as a genuinely separate evaluation path.
    ///
    /// [`pdf`]: BoundedGmm::pdf
    pub fn pdf_mixture_form(&self, x: &DVector<f64>) -> f64 {
        if !self.bounds.strictly_contains(x) {
            return 0.0;
        }
        self.eta
            .iter()
            .zip(&self.components)
            .zip(&self.box_probs)
            .map(|((e, g), p)| e * g.pdf(x) / p)
            .sum()
    }

    /// Observed-data log-likelihood sum_n ln f_BM(x_n).
    pub fn log_likelihood(&self, data: &DMatrix<f64>) -> Result<f64> {
        let rows = data_rows(data, self.dim())?;
        self.log_likelihood_rows(&rows)
    }

    fn log_likelihood_rows(&self, rows: &[DVector<f64>]) -> Result<f64> {
        let mut ll = 0.0;
        for (n, x) in rows.iter().enumerate() {
            if let Some(dim) = self.bounds.first_violation(x) {
                return Err(Error::DataOutsideBox { row: n, dim });
            }
            let lp = self.log_pdf(x);
            if !lp.is_finite() {
                return Err(Error::ZeroDensity { row: n });
            }
            ll += lp;
        }
        Ok(ll)
    }

    /// Bayesian information criterion: -2 ln L + p ln N with
    /// p = (K - 1) + K d + K d (d + 1) / 2.
    pub fn bic(&self, data: &DMatrix<f64>) -> Result<f64> {
        let ll = self.log_likelihood(data)?;
        let n = data.nrows();
        Ok(-2.0 * ll + self.param_count() as f64 * (n as f64).ln())
    }

    pub fn param_count(&self) -> usize {
        let k = self.k();
        let d = self.dim();
        (k - 1) + k * d + k * d * (d + 1) / 2
    }

    /// Draws n points: a component by its truncated weight eta_k, then
    /// rejection sampling of N(mu_k, Sigma_k) until the draw is in the box.
    pub fn sample(&self, n: usize, seed: u64) -> Result<DMatrix<f64>> {
        for (k, &p) in self.box_probs.iter().enumerate() {
            if self.eta[k] > 0.0 && p < 1e-6 {
                return Err(Error::UnsampleableComponent {
                    component: k,
                    prob: p,
                });
            }
        }
        let d = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = DMatrix::zeros(n, d);
        let mut cum = Vec::with_capacity(self.k());
        let mut acc = 0.0;
        for e in &self.eta {
            acc += e;
            cum.push(acc);
        }
        let mut x = DVector::zeros(d);
        for i in 0..n {
            let u: f64 = rng.random();
            let k = cum.iter().position(|c| u <= *c).unwrap_or(self.k() - 1);
            let g = &self.components[k];
            let l = g.lower();
            let mut tries = 0u64;
            loop {
                tries += 1;
                if tries > 10_000_000 {
                    return Err(Error::UnsampleableComponent {
                        component: k,
                        prob: self.box_probs[k],
                    });
                }
                for j in 0..d {
                    x[j] = StandardNormal.sample(&mut rng);
                }
                let y = g.mean() + l * &x;
                if self.bounds.strictly_contains(&y) {
                    out.row_mut(i).copy_from(&y.transpose());
                    break;
                }
            }
        }
        Ok(out)
    }
}

/// `syger` fills only the lower triangle; mirror it upward.
fn mirror_lower(m: &mut DMatrix<f64>) {
    let d = m.nrows();
    for i in 0..d {
        for j in 0..i {
            m[(j, i)] = m[(i, j)];
        }
    }
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

fn data_rows(data: &DMatrix<f64>, dim: usize) -> Result<Vec<DVector<f64>>> {
    if data.ncols() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: data.ncols(),
        });
    }
    let mut rows = Vec::with_capacity(data.nrows());
    for n in 0..data.nrows() {
        for c in 0..dim {
            if !data[(n, c)].is_finite() {
                return Err(Error::NonFiniteData { row: n, col: c });
            }
        }
        rows.push(data.row(n).transpose());
    }
    Ok(rows)
}

/// Posterior component probabilities, one row per observation.
#[derive(Debug, Clone)]
pub struct Responsibilities {
    pub matrix: DMatrix<f64>,
}

impl Responsibilities {
    fn validate(&self) -> Result<()> {
        for n in 0..self.matrix.nrows() {
            let mut s = 0.0;
            for k in 0..self.matrix.ncols() {
                let r = self.matrix[(n, k)];
                if !(0.0..=1.0).contains(&r) {
                    return Err(Error::InvalidModel {
                        reason: format!("responsibility ({n},{k}) = {r} outside [0,1]"),
                    });
                }
                s += r;
            }
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidModel {
                    reason: format!("responsibility row {n} sums to {s}"),
                });
            }
        }
        Ok(())
    }
}

/// E-step: posterior over components for each data row.
pub fn e_step(model: &BoundedGmm, data: &DMatrix<f64>) -> Result<Responsibilities> {
    let rows = data_rows(data, model.dim())?;
    let (resp, _) = e_step_rows(model, &rows)?;
    Ok(resp)
}

fn e_step_rows(model: &BoundedGmm, rows: &[DVector<f64>]) -> Result<(Responsibilities, f64)> {
    let n = rows.len();
    let k = model.k();
    let mut resp = DMatrix::zeros(n, k);
    let mut ll = 0.0;
    let mut terms = vec![0.0; k];
    for (i, x) in rows.iter().enumerate() {
        if let Some(dim) = model.bounds.first_violation(x) {
            return Err(Error::DataOutsideBox { row: i, dim });
        }
        for (j, term) in terms.iter_mut().enumerate() {
            // ln eta_j + ln f_j(x) up to a row constant
            *term = model.eta[j].ln() - model.box_probs[j].ln()
                + model.components[j].log_pdf(x);
        }
        let lse = log_sum_exp(&terms);
        if !lse.is_finite() {
            return Err(Error::ZeroDensity { row: i });
        }
        for j in 0..k {
            resp[(i, j)] = (terms[j] - lse).exp();
        }
        // ln sum_k eta_k g_k / P_k = ln f_BM
        ll += lse;
    }
    Ok((Responsibilities { matrix: resp }, ll))
}

#[derive(Debug, Default, Clone, Copy)]
struct MStepStats {
    spd_rejections: usize,
}

/// M-step with truncated-moment corrections. The corrections are evaluated
/// at the model's current parameters; with an effectively unbounded box
/// they vanish and this is the textbook GMM M-step.
pub fn m_step(
    data: &DMatrix<f64>,
    resp: &Responsibilities,
    model: &BoundedGmm,
) -> Result<BoundedGmm> {
    resp.validate()?;
    let rows = data_rows(data, model.dim())?;
    let (m, _) = m_step_rows(&rows, &resp.matrix, model)?;
    Ok(m)
}

fn m_step_rows(
    rows: &[DVector<f64>],
    resp: &DMatrix<f64>,
    model: &BoundedGmm,
) -> Result<(BoundedGmm, MStepStats)> {
    let n = rows.len();
    let k = model.k();
    let d = model.dim();
    if resp.nrows() != n || resp.ncols() != k {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: resp.nrows(),
        });
    }
    let lower = model.bounds.lower_vec();
    let upper = model.bounds.upper_vec();
    let mut stats = MStepStats::default();

    let mut eta = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    let mut covs = Vec::with_capacity(k);
    for j in 0..k {
        let mass: f64 = (0..n).map(|i| resp[(i, j)]).sum();
        if mass < 1e-8 * n as f64 {
            return Err(Error::DegenerateComponent { component: j });
        }
        eta.push(mass / n as f64);

        // truncated moments of the current component over the box
        let tstats = truncated_gaussian_stats(
            model.mean(j),
            model.covariance(j),
            &lower,
            &upper,
            &model.qmc,
        )?;
        let correction_m = &tstats.mean - model.mean(j);
        let correction_h = model.covariance(j) - &tstats.cov;

        let mut xbar: DVector<f64> = DVector::zeros(d);
        for (i, x) in rows.iter().enumerate() {
            xbar.axpy(resp[(i, j)], x, 1.0);
        }
        xbar /= mass;
        let mu = &xbar - &correction_m;

        let mut scatter: DMatrix<f64> = DMatrix::zeros(d, d);
        let mut diff: DVector<f64> = DVector::zeros(d);
        for (i, x) in rows.iter().enumerate() {
            diff.copy_from(x);
            diff -= &mu;
            scatter.syger(resp[(i, j)], &diff, &diff, 1.0);
        }
        scatter /= mass;
        mirror_lower(&mut scatter);
        let mut cov = scatter + correction_h;
        // symmetrize and regularize
        cov = (&cov + cov.transpose()) * 0.5;
        let ridge = 1e-6 * cov.trace() / d as f64;
        for i in 0..d {
            cov[(i, i)] += ridge;
        }
        let cov = if nalgebra::Cholesky::new(cov.clone()).is_some() {
            cov
        } else {
            stats.spd_rejections += 1;
            model.covariance(j).clone()
        };
        means.push(mu);
        covs.push(cov);
    }
    let new_model = BoundedGmm::from_eta(eta, means, covs, model.bounds.clone(), model.qmc)?;
    Ok((new_model, stats))
}

/// EM configuration. `tol` is the relative log-likelihood change below
/// which the fit is declared converged.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
    #[serde(default)]
    pub qmc_samples: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iter: 500,
            tol: 1e-6,
            seed: 0,
            qmc_samples: QmcConfig::default().samples,
        }
    }
}

impl EmConfig {
    pub fn with_seed(seed: u64) -> Self {
        EmConfig {
            seed,
            ..Default::default()
        }
    }

    fn qmc(&self) -> QmcConfig {
        QmcConfig {
            samples: self.qmc_samples.max(2),
        }
    }
}

/// Fit diagnostics. The trace covers the monotone EM run after the last
/// component reinitialization (reinitializations jump in parameter space
/// and restart the trace).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub loglik: f64,
    pub iterations: usize,
    pub trace: Vec<f64>,
    pub converged: bool,
    /// true when the final update was rejected because it decreased the
    /// log-likelihood (integration noise floor reached)
    pub reverted_final_update: bool,
    pub reinitialized_components: usize,
    pub dropped_components: usize,
}

/// Fits a K-component bounded mixture by EM.
pub fn fit_em(
    data: &DMatrix<f64>,
    k: usize,
    bounds: &Bounds,
    config: &EmConfig,
) -> Result<(BoundedGmm, FitReport)> {
    let d = bounds.dim();
    let rows = data_rows(data, d)?;
    let n = rows.len();
    if k == 0 || n < k {
        return Err(Error::TooFewPoints { n, k });
    }
    for (i, x) in rows.iter().enumerate() {
        if let Some(dim) = bounds.first_violation(x) {
            return Err(Error::DataOutsideBox { row: i, dim });
        }
    }
    let qmc = config.qmc();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = initialize(&rows, k, bounds, &qmc, &mut rng)?;

    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut reverted = false;
    let mut reinits_total = 0usize;
    let mut dropped = 0usize;
    let mut reinit_count = vec![0usize; k];
    let mut prev_model = model.clone();
    let mut iterations = 0usize;

    for _ in 0..config.max_iter {
        let (resp, ll) = e_step_rows(&model, &rows)?;
        if let Some(&prev) = trace.last() {
            if ll < prev {
                // the quadrature noise floor: keep the better iterate
                model = prev_model;
                reverted = true;
                converged = true;
                break;
            }
            trace.push(ll);
            if (ll - prev).abs() <= config.tol * prev.abs().max(1.0) {
                converged = true;
                break;
            }
        } else {
            trace.push(ll);
        }

        // handle components that lost essentially all their mass
        let masses: Vec<f64> = (0..model.k())
            .map(|j| (0..n).map(|i| resp.matrix[(i, j)]).sum())
            .collect();
        if let Some(j) = masses.iter().position(|m| *m < 1e-8 * n as f64) {
            if reinit_count[j] >= 3 {
                model = drop_component(&model, j)?;
                reinit_count.remove(j);
                dropped += 1;
            } else {
                model = reinitialize_component(&model, j, &rows)?;
                reinit_count[j] += 1;
                reinits_total += 1;
            }
            trace.clear();
            prev_model = model.clone();
            continue;
        }

        prev_model = model.clone();
        let (next, _stats) = m_step_rows(&rows, &resp.matrix, &model)?;
        model = next;
        iterations += 1;
    }

    let loglik = match trace.last() {
        Some(&ll) => ll,
        None => model.log_likelihood_rows(&rows)?,
    };
    Ok((
        model,
        FitReport {
            loglik,
            iterations,
            trace,
            converged,
            reverted_final_update: reverted,
            reinitialized_components: reinits_total,
            dropped_components: dropped,
        },
    ))
}

/// k-means++-style seeding on standardized data, then one assignment pass
/// for the initial weights, means, and within-cluster covariances.
fn initialize(
    rows: &[DVector<f64>],
    k: usize,
    bounds: &Bounds,
    qmc: &QmcConfig,
    rng: &mut ChaCha8Rng,
) -> Result<BoundedGmm> {
    let n = rows.len();
    let d = rows[0].len();

    // standardize for the seeding metric only
    let mut mean: DVector<f64> = DVector::zeros(d);
    for x in rows {
        mean += x;
    }
    mean /= n as f64;
    let mut var: DVector<f64> = DVector::zeros(d);
    for x in rows {
        for j in 0..d {
            var[j] += (x[j] - mean[j]).powi(2);
        }
    }
    var /= (n.max(2) - 1) as f64;
    let scale: Vec<f64> = (0..d).map(|j| var[j].sqrt().max(1e-12)).collect();
    let std_rows: Vec<DVector<f64>> = rows
        .iter()
        .map(|x| DVector::from_iterator(d, (0..d).map(|j| (x[j] - mean[j]) / scale[j])))
        .collect();

    // k-means++ seeding
    let mut centers: Vec<usize> = Vec::with_capacity(k);
    centers.push(rng.random_range(0..n));
    let mut d2: Vec<f64> = std_rows
        .iter()
        .map(|x| (x - &std_rows[centers[0]]).norm_squared())
        .collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            rng.random_range(0..n)
        } else {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, w) in d2.iter().enumerate() {
                acc += w;
                if acc >= target {
                    pick = i;
                    break;
                }
            }
            pick
        };
        centers.push(next);
        for (i, x) in std_rows.iter().enumerate() {
            let dist = (x - &std_rows[next]).norm_squared();
            if dist < d2[i] {
                d2[i] = dist;
            }
        }
    }

    // a few Lloyd refinements in the standardized metric, then the final
    // assignment
    let mut centroids: Vec<DVector<f64>> = centers.iter().map(|&i| std_rows[i].clone()).collect();
    let mut assign = vec![0usize; n];
    for _ in 0..5 {
        for (i, x) in std_rows.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, ctr) in centroids.iter().enumerate() {
                let dist = (x - ctr).norm_squared();
                if dist < best_d {
                    best_d = dist;
                    best = c;
                }
            }
            assign[i] = best;
        }
        let mut counts = vec![0usize; k];
        let mut sums: Vec<DVector<f64>> = vec![DVector::zeros(d); k];
        for (i, x) in std_rows.iter().enumerate() {
            counts[assign[i]] += 1;
            sums[assign[i]] += x;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = &sums[c] / counts[c] as f64;
            }
        }
    }

    // global scatter as the fallback covariance
    let mut global: DMatrix<f64> = DMatrix::zeros(d, d);
    let mut diff: DVector<f64> = DVector::zeros(d);
    for x in rows {
        diff.copy_from(x);
        diff -= &mean;
        global.syger(1.0, &diff, &diff, 1.0);
    }
    global /= (n.max(2) - 1) as f64;
    mirror_lower(&mut global);
    let global_ridge = 1e-6 * global.trace() / d as f64 + 1e-12;
    for i in 0..d {
        global[(i, i)] += global_ridge;
    }

    let mut eta = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    let mut covs = Vec::with_capacity(k);
    for c in 0..k {
        let members: Vec<usize> = (0..n).filter(|&i| assign[i] == c).collect();
        let n_c = members.len();
        if n_c == 0 {
            eta.push(1.0 / (n as f64 * k as f64));
            means.push(rows[centers[c]].clone());
            covs.push(global.clone());
            continue;
        }
        let mut mu: DVector<f64> = DVector::zeros(d);
        for &i in &members {
            mu += &rows[i];
        }
        mu /= n_c as f64;
        let cov = if n_c > d {
            let mut w: DMatrix<f64> = DMatrix::zeros(d, d);
            for &i in &members {
                diff.copy_from(&rows[i]);
                diff -= &mu;
                w.syger(1.0, &diff, &diff, 1.0);
            }
            w /= (n_c - 1) as f64;
            mirror_lower(&mut w);
            let ridge = 1e-6 * w.trace() / d as f64 + global_ridge;
            for i in 0..d {
                w[(i, i)] += ridge;
            }
            if nalgebra::Cholesky::new(w.clone()).is_some() {
                w
            } else {
                global.clone()
            }
        } else {
            global.clone()
        };
        eta.push(n_c as f64 / n as f64);
        means.push(mu);
        covs.push(cov);
    }
    let s: f64 = eta.iter().sum();
    for e in &mut eta {
        *e /= s;
    }
    BoundedGmm::from_eta(eta, means, covs, bounds.clone(), *qmc)
}

/// Moves a starved component to the data point with the lowest density
/// under the current model, with the average covariance of the others.
fn reinitialize_component(
    model: &BoundedGmm,
    j: usize,
    rows: &[DVector<f64>],
) -> Result<BoundedGmm> {
    let (worst, _) = rows
        .iter()
        .enumerate()
        .map(|(i, x)| (i, model.log_pdf(x)))
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal))
        .expect("rows non-empty");
    let k = model.k();
    let d = model.dim();
    let mut avg: DMatrix<f64> = DMatrix::zeros(d, d);
    for c in 0..k {
        avg += model.covariance(c);
    }
    avg /= k as f64;

    let mut eta: Vec<f64> = model.eta.clone();
    let refill = 1.0 / rows.len() as f64;
    eta[j] = refill;
    let s: f64 = eta.iter().sum();
    for e in &mut eta {
        *e /= s;
    }
    let mut means: Vec<DVector<f64>> = (0..k).map(|c| model.mean(c).clone()).collect();
    means[j] = rows[worst].clone();
    let mut covs = model.covariances.clone();
    covs[j] = avg;
    BoundedGmm::from_eta(eta, means, covs, model.bounds.clone(), model.qmc)
}

fn drop_component(model: &BoundedGmm, j: usize) -> Result<BoundedGmm> {
    let mut eta: Vec<f64> = model.eta.clone();
    eta.remove(j);
    let s: f64 = eta.iter().sum();
    for e in &mut eta {
        *e /= s;
    }
    let mut means: Vec<DVector<f64>> = (0..model.k()).map(|c| model.mean(c).clone()).collect();
    means.remove(j);
    let mut covs = model.covariances.clone();
    covs.remove(j);
    BoundedGmm::from_eta(eta, means, covs, model.bounds.clone(), model.qmc)
}

/// One row of the BIC scan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BicCurveEntry {
    pub k: usize,
    pub bic: Option<f64>,
    pub loglik: Option<f64>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub error: Option<String>,
}

/// Fits every K in `ks` and returns the argmin-BIC K with the full curve.
/// Ties break toward smaller K; failed fits are recorded in the curve.
pub fn select_components(
    data: &DMatrix<f64>,
    bounds: &Bounds,
    ks: &[usize],
    config: &EmConfig,
) -> Result<(usize, Vec<BicCurveEntry>)> {
    if ks.is_empty() {
        return Err(Error::EmptyKRange);
    }
    let mut ks_sorted: Vec<usize> = ks.to_vec();
    ks_sorted.sort_unstable();
    ks_sorted.dedup();

    let mut curve = Vec::with_capacity(ks_sorted.len());
    let mut best: Option<(usize, f64)> = None;
    let mut first_err: Option<Error> = None;
    for &k in &ks_sorted {
        let cfg = EmConfig {
            seed: crate::synthesis::derive_seed(config.seed, k as u64),
            ..*config
        };
        match fit_em(data, k, bounds, &cfg).and_then(|(m, r)| Ok((m.bic(data)?, r))) {
            Ok((bic, report)) => {
                if best.is_none_or(|(_, b)| bic < b) {
                    best = Some((k, bic));
                }
                curve.push(BicCurveEntry {
                    k,
                    bic: Some(bic),
                    loglik: Some(report.loglik),
                    iterations: Some(report.iterations),
                    converged: Some(report.converged),
                    error: None,
                });
            }
            Err(e) => {
                curve.push(BicCurveEntry {
                    k,
                    bic: None,
                    loglik: None,
                    iterations: None,
                    converged: None,
                    error: Some(e.to_string()),
                });
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
        }
    }
    match best {
        Some((k, _)) => Ok((k, curve)),
        None => Err(first_err.expect("at least one K attempted")),
    }
}
