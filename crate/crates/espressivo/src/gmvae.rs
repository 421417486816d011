//! Probabilistic core: diagonal Gaussians, two-component mixture priors,
//! reparameterized sampling, closed-form KL, mixture responsibilities, and
//! the penalized evidence-lower-bound loss with auxiliary cross-entropy.
//!
//! Everything here is a pure function of explicit inputs (noise included),
//! works per sequence, and is generic over `f32`/`f64` so the same code is
//! used for training and for the high-precision oracle tests.

use ndarray::{Array1, Array2, ArrayView1, NdFloat};
use num_traits::FromPrimitive;

use crate::error::{Error, Result};

/// Floating-point scalar used by the math core.
pub trait Real: NdFloat + FromPrimitive + std::iter::Sum {
    const LN_2PI: Self;
}

impl Real for f32 {
    const LN_2PI: Self = 1.8378770664093453_f64 as f32;
}

impl Real for f64 {
    const LN_2PI: Self = 1.8378770664093453_f64;
}

/// Diagonal Gaussian: a mean vector and a log-variance vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams<F> {
    pub mean: Array1<F>,
    pub log_variance: Array1<F>,
}

impl<F: Real> GaussianParams<F> {
    pub fn new(mean: Array1<F>, log_variance: Array1<F>) -> Result<Self> {
        if mean.len() != log_variance.len() {
            return Err(Error::ShapeMismatch(format!(
                "gaussian mean has dim {}, log-variance {}",
                mean.len(),
                log_variance.len()
            )));
        }
        Ok(GaussianParams {
            mean,
            log_variance,
        })
    }

    /// Standard normal of dimension `d`.
    pub fn standard(d: usize) -> Self {
        GaussianParams {
            mean: Array1::zeros(d),
            log_variance: Array1::zeros(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Log-density of `z` under this Gaussian.
    pub fn log_density(&self, z: ArrayView1<F>) -> F {
        let half = F::from_f64(0.5).unwrap();
        let mut acc = F::zero();
        for d in 0..self.dim() {
            let lv = self.log_variance[d];
            let diff = z[d] - self.mean[d];
            acc = acc + F::LN_2PI + lv + diff * diff * (-lv).exp();
        }
        -half * acc
    }
}

/// Per-frame posterior parameters: T x D means and log-variances.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSequence<F> {
    pub mean: Array2<F>,
    pub log_variance: Array2<F>,
}

impl<F: Real> GaussianSequence<F> {
    pub fn zeros(t: usize, d: usize) -> Self {
        GaussianSequence {
            mean: Array2::zeros((t, d)),
            log_variance: Array2::zeros((t, d)),
        }
    }

    pub fn num_frames(&self) -> usize {
        self.mean.nrows()
    }

    pub fn dim(&self) -> usize {
        self.mean.ncols()
    }

    /// Copy of frame `t`'s parameters.
    pub fn frame(&self, t: usize) -> GaussianParams<F> {
        GaussianParams {
            mean: self.mean.row(t).to_owned(),
            log_variance: self.log_variance.row(t).to_owned(),
        }
    }
}

/// Two-component diagonal-Gaussian mixture; component `k` is tied to
/// condition label `c = k`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixturePrior<F> {
    pub components: [GaussianParams<F>; 2],
    pub weights: [F; 2],
}

impl<F: Real> MixturePrior<F> {
    /// Mixture with fixed uniform weights.
    pub fn uniform(components: [GaussianParams<F>; 2]) -> Self {
        let half = F::from_f64(0.5).unwrap();
        MixturePrior {
            components,
            weights: [half, half],
        }
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }
}

/// Per-frame latent trajectory, T x D.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSequence<F> {
    pub data: Array2<F>,
}

impl<F: Real> LatentSequence<F> {
    pub fn num_frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }
}

/// The scalar pieces of the training objective.
///
/// `total = recon + beta * (kl_art + kl_dyn) + lambda * (ce_art + ce_dyn)`,
/// the negative of the penalized lower bound up to additive constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown<F> {
    pub recon: F,
    pub kl_art: F,
    pub kl_dyn: F,
    pub ce_art: F,
    pub ce_dyn: F,
    pub total: F,
}

impl<F: Real> LossBreakdown<F> {
    /// Assemble the breakdown; `total` is always derived from the parts.
    pub fn compose(recon: F, kl_art: F, kl_dyn: F, ce_art: F, ce_dyn: F, beta: F, lambda: F) -> Self {
        LossBreakdown {
            recon,
            kl_art,
            kl_dyn,
            ce_art,
            ce_dyn,
            total: recon + beta * (kl_art + kl_dyn) + lambda * (ce_art + ce_dyn),
        }
    }

    /// Name of the first non-finite term, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        [
            (self.recon, "recon"),
            (self.kl_art, "kl_art"),
            (self.kl_dyn, "kl_dyn"),
            (self.ce_art, "ce_art"),
            (self.ce_dyn, "ce_dyn"),
            (self.total, "total"),
        ]
        .into_iter()
        .find(|(v, _)| !v.is_finite())
        .map(|(_, name)| name)
    }

    pub fn to_f64(&self) -> LossBreakdown<f64> {
        LossBreakdown {
            recon: self.recon.to_f64().unwrap(),
            kl_art: self.kl_art.to_f64().unwrap(),
            kl_dyn: self.kl_dyn.to_f64().unwrap(),
            ce_art: self.ce_art.to_f64().unwrap(),
            ce_dyn: self.ce_dyn.to_f64().unwrap(),
            total: self.total.to_f64().unwrap(),
        }
    }
}

/// `z_t = mean_t + exp(log_variance_t / 2) * noise_t`, elementwise.
pub fn reparameterize<F: Real>(
    q: &GaussianSequence<F>,
    noise: &Array2<F>,
) -> Result<LatentSequence<F>> {
    if q.mean.dim() != noise.dim() || q.log_variance.dim() != noise.dim() {
        return Err(Error::ShapeMismatch(format!(
            "reparameterize: q is {:?}/{:?}, noise is {:?}",
            q.mean.dim(),
            q.log_variance.dim(),
            noise.dim()
        )));
    }
    let half = F::from_f64(0.5).unwrap();
    let std = q.log_variance.mapv(|lv| (half * lv).exp());
    Ok(LatentSequence {
        data: &q.mean + &(std * noise),
    })
}

/// Closed-form KL divergence between diagonal Gaussians, summed over
/// dimensions:
/// `KL(q || p) = 1/2 * sum_d [lv_p - lv_q + (var_q + (mu_q - mu_p)^2)/var_p - 1]`.
pub fn kl_diag_gaussian<F: Real>(q: &GaussianParams<F>, p: &GaussianParams<F>) -> F {
    debug_assert_eq!(q.dim(), p.dim());
    let half = F::from_f64(0.5).unwrap();
    let mut acc = F::zero();
    for d in 0..q.dim() {
        let lv_q = q.log_variance[d];
        let lv_p = p.log_variance[d];
        let diff = q.mean[d] - p.mean[d];
        acc = acc + lv_p - lv_q + (lv_q.exp() + diff * diff) * (-lv_p).exp() - F::one();
    }
    half * acc
}

/// The mixture component selected by a binary condition label.
pub fn conditional_prior<F: Real>(c: u8, prior: &MixturePrior<F>) -> &GaussianParams<F> {
    &prior.components[usize::from(c != 0)]
}

/// Log of `w_k * N(z; component_k)` for both components.
pub fn component_log_joint<F: Real>(z: ArrayView1<'_, F>, prior: &MixturePrior<F>) -> [F; 2] {
    [
        prior.weights[0].ln() + prior.components[0].log_density(z),
        prior.weights[1].ln() + prior.components[1].log_density(z),
    ]
}

/// Normalize two log-densities into probabilities via log-sum-exp.
pub fn responsibilities_from_log<F: Real>(log_joint: [F; 2]) -> [F; 2] {
    let m = log_joint[0].max(log_joint[1]);
    let e0 = (log_joint[0] - m).exp();
    let e1 = (log_joint[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

/// Posterior probability `p(c = k | z)` of each mixture component.
pub fn responsibilities<F: Real>(z: ArrayView1<'_, F>, prior: &MixturePrior<F>) -> [F; 2] {
    responsibilities_from_log(component_log_joint(z, prior))
}

/// Responsibilities for every frame of a latent sequence, T x 2.
pub fn responsibilities_seq<F: Real>(z: &LatentSequence<F>, prior: &MixturePrior<F>) -> Array2<F> {
    let mut out = Array2::zeros((z.num_frames(), 2));
    for (t, row) in z.data.rows().into_iter().enumerate() {
        let r = responsibilities(row, prior);
        out[(t, 0)] = r[0];
        out[(t, 1)] = r[1];
    }
    out
}

/// Auxiliary cross-entropy: `-(1/T) * sum_t log p(c_t | z_t)`.
pub fn aux_ce_loss<F: Real>(z: &LatentSequence<F>, c: &[u8], prior: &MixturePrior<F>) -> F {
    debug_assert_eq!(z.num_frames(), c.len());
    let mut acc = F::zero();
    for (t, row) in z.data.rows().into_iter().enumerate() {
        let a = component_log_joint(row, prior);
        let m = a[0].max(a[1]);
        let lse = m + ((a[0] - m).exp() + (a[1] - m).exp()).ln();
        let idx = usize::from(c[t] != 0);
        acc = acc - (a[idx] - lse);
    }
    acc / F::from_usize(z.num_frames().max(1)).unwrap()
}

/// Mean over frames of `KL(q_t || p(z | c_t))`.
pub fn kl_sequence<F: Real>(
    q: &GaussianSequence<F>,
    c: &[u8],
    prior: &MixturePrior<F>,
) -> F {
    debug_assert_eq!(q.num_frames(), c.len());
    let mut acc = F::zero();
    for t in 0..q.num_frames() {
        acc = acc + kl_diag_gaussian(&q.frame(t), conditional_prior(c[t], prior));
    }
    acc / F::from_usize(q.num_frames().max(1)).unwrap()
}

/// Mean squared error summed over Mel bins, averaged over frames — the
/// reconstruction term of a fixed-variance Gaussian likelihood.
pub fn recon_loss<F: Real>(x: &Array2<F>, x_hat: &Array2<F>) -> F {
    debug_assert_eq!(x.dim(), x_hat.dim());
    let mut acc = F::zero();
    for (a, b) in x.iter().zip(x_hat.iter()) {
        let d = *b - *a;
        acc = acc + d * d;
    }
    acc / F::from_usize(x.nrows().max(1)).unwrap()
}

/// Arguments of [`elbo_loss`] bundled to keep the signature readable.
pub struct ElboInputs<'a, F> {
    pub x: &'a Array2<F>,
    pub x_hat: &'a Array2<F>,
    pub q_art: &'a GaussianSequence<F>,
    pub q_dyn: &'a GaussianSequence<F>,
    /// Latents sampled from `q_art` via [`reparameterize`]; the CE terms are
    /// evaluated on these.
    pub z_art: &'a LatentSequence<F>,
    pub z_dyn: &'a LatentSequence<F>,
    pub c_art: &'a [u8],
    pub c_dyn: &'a [u8],
    pub prior_art: &'a MixturePrior<F>,
    pub prior_dyn: &'a MixturePrior<F>,
}

/// The full per-sequence objective.
///
/// * `recon` — squared error between `x_hat` and `x`, summed over the 80
///   Mel bins and averaged over frames.
/// * `kl_*` — mean over frames of the closed-form KL between the posterior
///   and the prior component selected by the frame's condition.
/// * `ce_*` — mean over frames of the cross-entropy between the mixture
///   responsibilities of `z_t` and the condition label.
/// * `total` — `recon + beta * KLs + lambda * CEs`.
pub fn elbo_loss<F: Real>(inputs: &ElboInputs<'_, F>, beta: F, lambda: F) -> Result<LossBreakdown<F>> {
    let t = inputs.x.nrows();
    let same = inputs.x_hat.nrows() == t
        && inputs.q_art.num_frames() == t
        && inputs.q_dyn.num_frames() == t
        && inputs.z_art.num_frames() == t
        && inputs.z_dyn.num_frames() == t
        && inputs.c_art.len() == t
        && inputs.c_dyn.len() == t;
    if !same {
        return Err(Error::ShapeMismatch(format!(
            "elbo_loss: inputs disagree on frame count (x has {t})"
        )));
    }
    if inputs.x.ncols() != inputs.x_hat.ncols() {
        return Err(Error::ShapeMismatch(
            "elbo_loss: x and x_hat disagree on band count".into(),
        ));
    }

    let recon = recon_loss(inputs.x, inputs.x_hat);
    let kl_art = kl_sequence(inputs.q_art, inputs.c_art, inputs.prior_art);
    let kl_dyn = kl_sequence(inputs.q_dyn, inputs.c_dyn, inputs.prior_dyn);
    let ce_art = aux_ce_loss(inputs.z_art, inputs.c_art, inputs.prior_art);
    let ce_dyn = aux_ce_loss(inputs.z_dyn, inputs.c_dyn, inputs.prior_dyn);
    let breakdown = LossBreakdown::compose(recon, kl_art, kl_dyn, ce_art, ce_dyn, beta, lambda);
    if let Some(term) = breakdown.first_non_finite() {
        return Err(Error::NonFinite { term });
    }
    Ok(breakdown)
}

/// Gradients of a mean-over-frames loss with respect to one mixture prior's
/// parameters.
#[derive(Debug, Clone)]
pub struct PriorGrad<F> {
    pub mean: [Array1<F>; 2],
    pub log_variance: [Array1<F>; 2],
}

impl<F: Real> PriorGrad<F> {
    pub fn zeros(d: usize) -> Self {
        PriorGrad {
            mean: [Array1::zeros(d), Array1::zeros(d)],
            log_variance: [Array1::zeros(d), Array1::zeros(d)],
        }
    }

    pub fn add(&mut self, other: &PriorGrad<F>) {
        for k in 0..2 {
            self.mean[k] = &self.mean[k] + &other.mean[k];
            self.log_variance[k] = &self.log_variance[k] + &other.log_variance[k];
        }
    }

    pub fn scale(&mut self, s: F) {
        for k in 0..2 {
            self.mean[k] *= s;
            self.log_variance[k] *= s;
        }
    }
}

/// [`kl_sequence`] plus its gradients with respect to the posterior
/// parameters and the prior.
pub fn kl_sequence_with_grad<F: Real>(
    q: &GaussianSequence<F>,
    c: &[u8],
    prior: &MixturePrior<F>,
) -> (F, GaussianSequence<F>, PriorGrad<F>) {
    let t_frames = q.num_frames();
    let d = q.dim();
    let half = F::from_f64(0.5).unwrap();
    let inv_t = F::one() / F::from_usize(t_frames.max(1)).unwrap();

    let mut total = F::zero();
    let mut dq = GaussianSequence::zeros(t_frames, d);
    let mut dp = PriorGrad::zeros(d);

    for t in 0..t_frames {
        let k = usize::from(c[t] != 0);
        let p = &prior.components[k];
        for j in 0..d {
            let lv_q = q.log_variance[(t, j)];
            let lv_p = p.log_variance[j];
            let inv_var_p = (-lv_p).exp();
            let diff = q.mean[(t, j)] - p.mean[j];
            total = total + half * (lv_p - lv_q + (lv_q.exp() + diff * diff) * inv_var_p - F::one());

            dq.mean[(t, j)] = diff * inv_var_p * inv_t;
            dq.log_variance[(t, j)] = half * ((lv_q - lv_p).exp() - F::one()) * inv_t;
            dp.mean[k][j] = dp.mean[k][j] - diff * inv_var_p * inv_t;
            dp.log_variance[k][j] = dp.log_variance[k][j]
                + half * (F::one() - (lv_q.exp() + diff * diff) * inv_var_p) * inv_t;
        }
    }
    (total * inv_t, dq, dp)
}

/// [`aux_ce_loss`] plus its gradients with respect to the latents and the
/// prior parameters.
pub fn aux_ce_with_grad<F: Real>(
    z: &LatentSequence<F>,
    c: &[u8],
    prior: &MixturePrior<F>,
) -> (F, Array2<F>, PriorGrad<F>) {
    let t_frames = z.num_frames();
    let d = z.dim();
    let half = F::from_f64(0.5).unwrap();
    let inv_t = F::one() / F::from_usize(t_frames.max(1)).unwrap();

    let mut total = F::zero();
    let mut dz = Array2::zeros((t_frames, d));
    let mut dp = PriorGrad::zeros(d);

    for t in 0..t_frames {
        let row = z.data.row(t);
        let a = component_log_joint(row, prior);
        let m = a[0].max(a[1]);
        let lse = m + ((a[0] - m).exp() + (a[1] - m).exp()).ln();
        let label = usize::from(c[t] != 0);
        total = total - (a[label] - lse);

        let r = responsibilities_from_log(a);
        for k in 0..2 {
            let delta = if k == label { F::one() } else { F::zero() };
            let g = (r[k] - delta) * inv_t; // d(ce)/d(a_k), already 1/T scaled
            let comp = &prior.components[k];
            for j in 0..d {
                let inv_var = (-comp.log_variance[j]).exp();
                let diff = row[j] - comp.mean[j];
                dz[(t, j)] = dz[(t, j)] - g * diff * inv_var;
                dp.mean[k][j] = dp.mean[k][j] + g * diff * inv_var;
                dp.log_variance[k][j] =
                    dp.log_variance[k][j] - g * half * (F::one() - diff * diff * inv_var);
            }
        }
    }
    (total * inv_t, dz, dp)
}

/// Gradient of [`recon_loss`] with respect to `x_hat`.
pub fn recon_grad<F: Real>(x: &Array2<F>, x_hat: &Array2<F>) -> Array2<F> {
    let two_over_t = F::from_f64(2.0).unwrap() / F::from_usize(x.nrows().max(1)).unwrap();
    (x_hat - x) * two_over_t
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(rng: &mut ChaCha8Rng) -> f64 {
        StandardNormal.sample(rng)
    }

    /// Random moderate-KL pair source: the Monte-Carlo standard error of a
    /// KL estimate grows with the KL itself, so oracle comparisons at 1e-2
    /// absolute need pairs that are not arbitrarily far apart.
    fn random_gaussian(rng: &mut ChaCha8Rng, d: usize) -> GaussianParams<f64> {
        GaussianParams {
            mean: Array1::from_iter((0..d).map(|_| randn(rng) * 0.5)),
            log_variance: Array1::from_iter((0..d).map(|_| randn(rng) * 0.3)),
        }
    }

    #[test]
    fn reparameterize_zero_noise_returns_mean() {
        let q = GaussianSequence {
            mean: array![[1.0, -2.0], [0.5, 3.0]],
            log_variance: array![[0.3, -0.4], [1.0, 0.0]],
        };
        let z = reparameterize(&q, &Array2::zeros((2, 2))).unwrap();
        assert_eq!(z.data, q.mean);
    }

    #[test]
    fn reparameterize_unit_variance_adds_noise() {
        let q = GaussianSequence {
            mean: array![[1.0, -2.0]],
            log_variance: array![[0.0, 0.0]],
        };
        let noise = array![[0.7, -1.3]];
        let z = reparameterize(&q, &noise).unwrap();
        assert_eq!(z.data, array![[1.7, -3.3]]);
    }

    #[test]
    fn reparameterize_rejects_shape_mismatch() {
        let q = GaussianSequence::<f64>::zeros(3, 2);
        assert!(reparameterize(&q, &Array2::zeros((3, 3))).is_err());
    }

    #[test]
    fn reparameterize_monte_carlo_moments() {
        let q = GaussianSequence {
            mean: array![[0.8, -1.2]],
            log_variance: array![[0.5, -0.8]],
        };
        let n = 100_000usize;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut sum = [0.0f64; 2];
        let mut sum_sq = [0.0f64; 2];
        for _ in 0..n {
            let noise = array![[randn(&mut rng), randn(&mut rng)]];
            let z = reparameterize(&q, &noise).unwrap();
            for j in 0..2 {
                sum[j] += z.data[(0, j)];
                sum_sq[j] += z.data[(0, j)] * z.data[(0, j)];
            }
        }
        for j in 0..2 {
            let mean = sum[j] / n as f64;
            let var = sum_sq[j] / n as f64 - mean * mean;
            let true_var = q.log_variance[(0, j)].exp();
            let se_mean = (true_var / n as f64).sqrt();
            // Var(sample variance) ~ 2 var^2 / n for a Gaussian
            let se_var = (2.0 * true_var * true_var / n as f64).sqrt();
            assert!((mean - q.mean[(0, j)]).abs() < 3.0 * se_mean);
            assert!((var - true_var).abs() < 3.0 * se_var);
        }
    }

    #[test]
    fn kl_of_identical_gaussians_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = random_gaussian(&mut rng, 4);
        assert!(kl_diag_gaussian(&g, &g).abs() < 1e-15);
    }

    #[test]
    fn kl_standard_vs_shifted_is_half() {
        let q = GaussianParams::<f64>::standard(1);
        let p = GaussianParams {
            mean: array![1.0],
            log_variance: array![0.0],
        };
        assert!((kl_diag_gaussian(&q, &p) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kl_nonnegative_and_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let d = 3;
            let q = random_gaussian(&mut rng, d);
            let p = random_gaussian(&mut rng, d);
            let closed = kl_diag_gaussian(&q, &p);
            assert!(closed >= 0.0);

            // nonnegativity also holds for widely separated pairs
            let mut far = p.clone();
            far.mean += 40.0;
            assert!(kl_diag_gaussian(&q, &far) > 0.0);

            // MC estimate of E_q[log q - log p]
            let n = 100_000;
            let mut acc = 0.0;
            for _ in 0..n {
                let z: Array1<f64> = Array1::from_iter((0..d).map(|j| {
                    q.mean[j] + (0.5 * q.log_variance[j]).exp() * randn(&mut rng)
                }));
                acc += q.log_density(z.view()) - p.log_density(z.view());
            }
            let mc = acc / n as f64;
            assert!(
                (closed - mc).abs() < 1e-2,
                "closed {closed} vs MC {mc}"
            );
        }
    }

    #[test]
    fn conditional_prior_selects_by_label() {
        let prior = MixturePrior::uniform([
            GaussianParams {
                mean: array![-1.0],
                log_variance: array![0.0],
            },
            GaussianParams {
                mean: array![1.0],
                log_variance: array![0.0],
            },
        ]);
        assert_eq!(conditional_prior(0, &prior).mean[0], -1.0);
        assert_eq!(conditional_prior(1, &prior).mean[0], 1.0);
        let labels = [0u8, 1, 0];
        let means: Vec<f64> = labels
            .iter()
            .map(|&c| conditional_prior(c, &prior).mean[0])
            .collect();
        assert_eq!(means, vec![-1.0, 1.0, -1.0]);
    }

    fn separated_prior(gap: f64, d: usize) -> MixturePrior<f64> {
        MixturePrior::uniform([
            GaussianParams {
                mean: Array1::from_elem(d, -gap / 2.0),
                log_variance: Array1::zeros(d),
            },
            GaussianParams {
                mean: Array1::from_elem(d, gap / 2.0),
                log_variance: Array1::zeros(d),
            },
        ])
    }

    #[test]
    fn responsibilities_symmetric_point_is_half_half() {
        let prior = separated_prior(4.0, 3);
        let z = Array1::zeros(3);
        let r = responsibilities(z.view(), &prior);
        assert!((r[0] - 0.5).abs() < 1e-12);
        assert!((r[1] - 0.5).abs() < 1e-12);
        assert!((r[0] + r[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn responsibilities_at_far_component_mean_saturate() {
        let prior = separated_prior(10.0, 1);
        let z = array![-5.0]; // exactly component 0's mean, 10 away from 1's
        let r = responsibilities(z.view(), &prior);
        assert!(r[0] > 0.999);
    }

    #[test]
    fn responsibilities_sum_to_one_and_are_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let prior = MixturePrior::uniform([
            random_gaussian(&mut rng, 4),
            random_gaussian(&mut rng, 4),
        ]);
        for _ in 0..50 {
            let z = Array1::from_iter((0..4).map(|_| randn(&mut rng) * 3.0));
            let r = responsibilities(z.view(), &prior);
            assert!((r[0] + r[1] - 1.0).abs() < 1e-12);
            assert!(r[0] > 0.0 && r[1] > 0.0);
        }
    }

    #[test]
    fn responsibilities_invariant_to_log_density_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let a = [randn(&mut rng) * 50.0, randn(&mut rng) * 50.0];
            let shift = randn(&mut rng) * 300.0;
            let r0 = responsibilities_from_log(a);
            let r1 = responsibilities_from_log([a[0] + shift, a[1] + shift]);
            assert!((r0[0] - r1[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn aux_ce_is_small_at_separated_means_and_ln2_at_symmetry() {
        let prior = separated_prior(20.0, 2);
        // z exactly at the labelled component's mean, far separation
        let z = LatentSequence {
            data: array![[-10.0, -10.0], [10.0, 10.0]],
        };
        let loss = aux_ce_loss(&z, &[0, 1], &prior);
        assert!(loss >= 0.0);
        assert!(loss < 1e-8, "loss {loss}");

        // symmetric z: responsibilities are (1/2, 1/2), so ce = ln 2
        let z = LatentSequence {
            data: array![[0.0, 0.0]],
        };
        let loss = aux_ce_loss(&z, &[1], &prior);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    fn tiny_elbo_inputs(
        t: usize,
    ) -> (
        Array2<f64>,
        GaussianSequence<f64>,
        GaussianSequence<f64>,
        Vec<u8>,
        Vec<u8>,
        MixturePrior<f64>,
        MixturePrior<f64>,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Array2::from_shape_fn((t, 5), |_| randn(&mut rng));
        let d = 3;
        let q_art = GaussianSequence {
            mean: Array2::from_shape_fn((t, d), |_| randn(&mut rng)),
            log_variance: Array2::from_shape_fn((t, d), |_| randn(&mut rng) * 0.3),
        };
        let q_dyn = GaussianSequence {
            mean: Array2::from_shape_fn((t, d), |_| randn(&mut rng)),
            log_variance: Array2::from_shape_fn((t, d), |_| randn(&mut rng) * 0.3),
        };
        let c_art: Vec<u8> = (0..t).map(|i| (i % 2) as u8).collect();
        let c_dyn: Vec<u8> = (0..t).map(|i| ((i / 2) % 2) as u8).collect();
        let prior_art = separated_prior(2.0, d);
        let prior_dyn = separated_prior(2.0, d);
        (x, q_art, q_dyn, c_art, c_dyn, prior_art, prior_dyn)
    }

    #[test]
    fn elbo_zero_case_and_additivity() {
        let (x, _, _, c_art, c_dyn, prior_art, prior_dyn) = tiny_elbo_inputs(6);
        let t = x.nrows();
        let d = prior_art.dim();

        // q_t equal to the selected prior component, x_hat equal to x
        let mut q_art = GaussianSequence::zeros(t, d);
        let mut q_dyn = GaussianSequence::zeros(t, d);
        for t_i in 0..t {
            q_art
                .mean
                .row_mut(t_i)
                .assign(&conditional_prior(c_art[t_i], &prior_art).mean);
            q_dyn
                .mean
                .row_mut(t_i)
                .assign(&conditional_prior(c_dyn[t_i], &prior_dyn).mean);
        }
        let z_art = reparameterize(&q_art, &Array2::zeros((t, d))).unwrap();
        let z_dyn = reparameterize(&q_dyn, &Array2::zeros((t, d))).unwrap();
        let loss = elbo_loss(
            &ElboInputs {
                x: &x,
                x_hat: &x,
                q_art: &q_art,
                q_dyn: &q_dyn,
                z_art: &z_art,
                z_dyn: &z_dyn,
                c_art: &c_art,
                c_dyn: &c_dyn,
                prior_art: &prior_art,
                prior_dyn: &prior_dyn,
            },
            1.0,
            1.0,
        )
        .unwrap();
        assert_eq!(loss.recon, 0.0);
        assert!(loss.kl_art.abs() < 1e-14);
        assert!(loss.kl_dyn.abs() < 1e-14);

        // additivity of total, for arbitrary beta/lambda
        let (beta, lambda) = (0.37, 2.5);
        let loss = elbo_loss(
            &ElboInputs {
                x: &x,
                x_hat: &x,
                q_art: &q_art,
                q_dyn: &q_dyn,
                z_art: &z_art,
                z_dyn: &z_dyn,
                c_art: &c_art,
                c_dyn: &c_dyn,
                prior_art: &prior_art,
                prior_dyn: &prior_dyn,
            },
            beta,
            lambda,
        )
        .unwrap();
        let recomposed = loss.recon
            + beta * (loss.kl_art + loss.kl_dyn)
            + lambda * (loss.ce_art + loss.ce_dyn);
        assert_eq!(loss.total, recomposed);
    }

    #[test]
    fn elbo_is_permutation_equivariant_over_frames() {
        let (x, q_art, q_dyn, c_art, c_dyn, prior_art, prior_dyn) = tiny_elbo_inputs(7);
        let t = x.nrows();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let noise_a = Array2::from_shape_fn((t, 3), |_| randn(&mut rng));
        let noise_d = Array2::from_shape_fn((t, 3), |_| randn(&mut rng));
        let z_art = reparameterize(&q_art, &noise_a).unwrap();
        let z_dyn = reparameterize(&q_dyn, &noise_d).unwrap();
        let base = elbo_loss(
            &ElboInputs {
                x: &x,
                x_hat: &Array2::zeros(x.dim()),
                q_art: &q_art,
                q_dyn: &q_dyn,
                z_art: &z_art,
                z_dyn: &z_dyn,
                c_art: &c_art,
                c_dyn: &c_dyn,
                prior_art: &prior_art,
                prior_dyn: &prior_dyn,
            },
            1.0,
            1.0,
        )
        .unwrap();

        // rotate every frame-indexed input by 3
        let rot = |a: &Array2<f64>| -> Array2<f64> {
            let mut out = a.clone();
            for t_i in 0..t {
                out.row_mut(t_i).assign(&a.row((t_i + 3) % t));
            }
            out
        };
        let rot_seq = |s: &GaussianSequence<f64>| GaussianSequence {
            mean: rot(&s.mean),
            log_variance: rot(&s.log_variance),
        };
        let rot_c = |c: &[u8]| -> Vec<u8> { (0..t).map(|i| c[(i + 3) % t]).collect() };
        let permuted = elbo_loss(
            &ElboInputs {
                x: &rot(&x),
                x_hat: &Array2::zeros(x.dim()),
                q_art: &rot_seq(&q_art),
                q_dyn: &rot_seq(&q_dyn),
                z_art: &LatentSequence {
                    data: rot(&z_art.data),
                },
                z_dyn: &LatentSequence {
                    data: rot(&z_dyn.data),
                },
                c_art: &rot_c(&c_art),
                c_dyn: &rot_c(&c_dyn),
                prior_art: &prior_art,
                prior_dyn: &prior_dyn,
            },
            1.0,
            1.0,
        )
        .unwrap();
        assert!((base.total - permuted.total).abs() < 1e-12);
        assert!((base.recon - permuted.recon).abs() < 1e-12);
        assert!((base.kl_art - permuted.kl_art).abs() < 1e-12);
        assert!((base.ce_dyn - permuted.ce_dyn).abs() < 1e-12);
    }

    #[test]
    fn elbo_rejects_non_finite_with_term_name() {
        let (x, q_art, q_dyn, c_art, c_dyn, prior_art, prior_dyn) = tiny_elbo_inputs(4);
        let mut x_hat = Array2::zeros(x.dim());
        x_hat[(0, 0)] = f64::NAN;
        let z = LatentSequence {
            data: Array2::zeros((4, 3)),
        };
        let err = elbo_loss(
            &ElboInputs {
                x: &x,
                x_hat: &x_hat,
                q_art: &q_art,
                q_dyn: &q_dyn,
                z_art: &z,
                z_dyn: &z,
                c_art: &c_art,
                c_dyn: &c_dyn,
                prior_art: &prior_art,
                prior_dyn: &prior_dyn,
            },
            1.0,
            1.0,
        )
        .unwrap_err();
        assert!(err.to_string().contains("recon"));
    }

    /// Central finite differences for the fused gradient helpers.
    #[test]
    fn kl_and_ce_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (t, d) = (4, 3);
        let q = GaussianSequence {
            mean: Array2::from_shape_fn((t, d), |_| randn(&mut rng)),
            log_variance: Array2::from_shape_fn((t, d), |_| randn(&mut rng) * 0.4),
        };
        let z = LatentSequence {
            data: Array2::from_shape_fn((t, d), |_| randn(&mut rng)),
        };
        let c: Vec<u8> = vec![0, 1, 1, 0];
        let prior = MixturePrior::uniform([
            random_gaussian(&mut rng, d),
            random_gaussian(&mut rng, d),
        ]);
        let h = 1e-6;

        let (_, dq, dp) = kl_sequence_with_grad(&q, &c, &prior);
        for t_i in 0..t {
            for j in 0..d {
                let mut qp = q.clone();
                qp.mean[(t_i, j)] += h;
                let mut qm = q.clone();
                qm.mean[(t_i, j)] -= h;
                let fd = (kl_sequence(&qp, &c, &prior) - kl_sequence(&qm, &c, &prior)) / (2.0 * h);
                assert!((fd - dq.mean[(t_i, j)]).abs() < 1e-7, "dmean({t_i},{j})");

                let mut qp = q.clone();
                qp.log_variance[(t_i, j)] += h;
                let mut qm = q.clone();
                qm.log_variance[(t_i, j)] -= h;
                let fd = (kl_sequence(&qp, &c, &prior) - kl_sequence(&qm, &c, &prior)) / (2.0 * h);
                assert!((fd - dq.log_variance[(t_i, j)]).abs() < 1e-7);
            }
        }
        for k in 0..2 {
            for j in 0..d {
                let mut pp = prior.clone();
                pp.components[k].mean[j] += h;
                let mut pm = prior.clone();
                pm.components[k].mean[j] -= h;
                let fd = (kl_sequence(&q, &c, &pp) - kl_sequence(&q, &c, &pm)) / (2.0 * h);
                assert!((fd - dp.mean[k][j]).abs() < 1e-7);

                let mut pp = prior.clone();
                pp.components[k].log_variance[j] += h;
                let mut pm = prior.clone();
                pm.components[k].log_variance[j] -= h;
                let fd = (kl_sequence(&q, &c, &pp) - kl_sequence(&q, &c, &pm)) / (2.0 * h);
                assert!((fd - dp.log_variance[k][j]).abs() < 1e-7);
            }
        }

        let (_, dz, dp) = aux_ce_with_grad(&z, &c, &prior);
        for t_i in 0..t {
            for j in 0..d {
                let mut zp = z.clone();
                zp.data[(t_i, j)] += h;
                let mut zm = z.clone();
                zm.data[(t_i, j)] -= h;
                let fd =
                    (aux_ce_loss(&zp, &c, &prior) - aux_ce_loss(&zm, &c, &prior)) / (2.0 * h);
                assert!((fd - dz[(t_i, j)]).abs() < 1e-7, "dz({t_i},{j})");
            }
        }
        for k in 0..2 {
            for j in 0..d {
                let mut pp = prior.clone();
                pp.components[k].mean[j] += h;
                let mut pm = prior.clone();
                pm.components[k].mean[j] -= h;
                let fd =
                    (aux_ce_loss(&z, &c, &pp) - aux_ce_loss(&z, &c, &pm)) / (2.0 * h);
                assert!((fd - dp.mean[k][j]).abs() < 1e-7);

                let mut pp = prior.clone();
                pp.components[k].log_variance[j] += h;
                let mut pm = prior.clone();
                pm.components[k].log_variance[j] -= h;
                let fd =
                    (aux_ce_loss(&z, &c, &pp) - aux_ce_loss(&z, &c, &pm)) / (2.0 * h);
                assert!((fd - dp.log_variance[k][j]).abs() < 1e-7);
            }
        }
    }
}
