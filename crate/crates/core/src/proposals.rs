//! Proposal kernels and the tempered Metropolis–Hastings test.
//!
//! Gradient kernels draw `θ* ~ N(θ + shift(θ), ν2² I)`. For plain Langevin
//! proposals the shift is `ν1 ∇log π(θ)`; the adaptive variant replaces the
//! raw gradient with a bias-corrected moment-scaled step. Because the shift
//! depends on the point, the reverse density `q(θ | θ*)` needs the gradient at
//! `θ*` as well. Log-densities omit the shared Gaussian normalizer.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProposalKind {
    RandomWalk,
    Lg,
    AdaptLg,
}

impl ProposalKind {
    /// Default gradient step scale ν1 for this kernel.
    pub fn default_step_scale(self) -> f64 {
        match self {
            ProposalKind::AdaptLg => 0.01,
            ProposalKind::Lg | ProposalKind::RandomWalk => 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProposalConfig {
    pub kind: ProposalKind,
    /// ν1, the gradient step scale.
    pub step_scale: f64,
    /// ν2, the Gaussian noise standard deviation.
    pub rw_std: f64,
    /// Probability that a step uses the gradient kernel.
    pub lg_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl ProposalConfig {
    pub fn new(kind: ProposalKind) -> Self {
        ProposalConfig {
            kind,
            step_scale: kind.default_step_scale(),
            rw_std: 0.005,
            lg_rate: match kind {
                ProposalKind::RandomWalk => 0.0,
                _ => 0.5,
            },
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_scale > 0.0 && self.step_scale.is_finite()) {
            return Err(Error::invalid(format!("step scale must be positive, got {}", self.step_scale)));
        }
        if !(self.rw_std > 0.0 && self.rw_std.is_finite()) {
            return Err(Error::invalid(format!("random-walk std must be positive, got {}", self.rw_std)));
        }
        if !(0.0..=1.0).contains(&self.lg_rate) {
            return Err(Error::invalid(format!("lg_rate must lie in [0, 1], got {}", self.lg_rate)));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0) {
            return Err(Error::invalid("moment constants need β1, β2 in [0, 1) and ε > 0"));
        }
        Ok(())
    }

    /// Probability that a step uses the gradient kernel.
    pub fn gradient_rate(&self) -> f64 {
        match self.kind {
            ProposalKind::RandomWalk => 0.0,
            _ => self.lg_rate,
        }
    }
}

/// Adaptive-moment buffers for the adaptive Langevin kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamMoments {
    pub fn new(dim: usize) -> Self {
        AdamMoments {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step: 0,
        }
    }

    /// Folds `grad` into the buffers and returns `ν1 m̂ / (√v̂ + ε)`.
    pub fn advance(&mut self, grad: &[f64], step_scale: f64, beta1: f64, beta2: f64, eps: f64) -> Vec<f64> {
        assert_eq!(grad.len(), self.m.len(), "gradient and moment lengths differ");
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let mut dir = Vec::with_capacity(grad.len());
        for ((m, v), &g) in self.m.iter_mut().zip(self.v.iter_mut()).zip(grad) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            dir.push(step_scale * (*m / c1) / ((*v / c2).sqrt() + eps));
        }
        dir
    }
}

/// One adaptive step from a copy of `moments`.
pub fn adapt_step(grad: &[f64], moments: &AdamMoments, cfg: &ProposalConfig) -> (Vec<f64>, AdamMoments) {
    let mut next = moments.clone();
    let dir = next.advance(grad, cfg.step_scale, cfg.beta1, cfg.beta2, cfg.eps);
    (dir, next)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub theta: Vec<f64>,
    pub log_q_forward: f64,
    pub log_q_reverse: f64,
    pub used_gradient: bool,
}

impl Proposal {
    /// `log q(θ | θ*) − log q(θ* | θ)`.
    pub fn log_q_ratio(&self) -> f64 {
        self.log_q_reverse - self.log_q_forward
    }
}

fn gaussian_noise(dim: usize, std: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..dim).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Symmetric Gaussian random walk with standard deviation ν2.
pub fn propose_rw(theta: &[f64], cfg: &ProposalConfig, rng: &mut impl Rng) -> Proposal {
    let noise = gaussian_noise(theta.len(), cfg.rw_std, rng);
    Proposal {
        theta: theta.iter().zip(noise).map(|(t, e)| t + e).collect(),
        log_q_forward: 0.0,
        log_q_reverse: 0.0,
        used_gradient: false,
    }
}

/// `θ + ν1 · grad`.
pub fn langevin_mean(theta: &[f64], grad: &[f64], step_scale: f64) -> Result<Vec<f64>> {
    if grad.len() != theta.len() {
        return Err(Error::Dimension(format!("gradient {} vs θ {}", grad.len(), theta.len())));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient".into()));
    }
    Ok(theta.iter().zip(grad).map(|(t, g)| t + step_scale * g).collect())
}

fn gaussian_log_kernel(x: &[f64], mean: &[f64], std: f64) -> f64 {
    let sq: f64 = x.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum();
    -sq / (2.0 * std * std)
}

/// A gradient proposal together with what was learned at the proposed point.
#[derive(Debug, Clone)]
pub struct LangevinProposal<T> {
    pub proposal: Proposal,
    /// Moment buffers after the forward adaptive step (unchanged for plain LG).
    pub moments: AdamMoments,
    pub at_proposal: T,
    pub grad_at_proposal: Vec<f64>,
}

/// Langevin-gradient proposal. `grad` is the gradient at `theta`;
/// `grad_fn` evaluates the target and its gradient at the proposed point.
///
/// For the adaptive kernel the reverse mean is one adaptive step from `θ*`
/// taken on a copy of the post-forward moment buffers.
pub fn propose_lg<T, F>(
    theta: &[f64],
    grad: &[f64],
    grad_fn: F,
    cfg: &ProposalConfig,
    moments: &AdamMoments,
    rng: &mut impl Rng,
) -> Result<LangevinProposal<T>>
where
    F: FnOnce(&[f64]) -> Result<(T, Vec<f64>)>,
{
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient at the current state".into()));
    }
    let (forward_mean, moments) = match cfg.kind {
        ProposalKind::Lg => (langevin_mean(theta, grad, cfg.step_scale)?, moments.clone()),
        ProposalKind::AdaptLg => {
            let (dir, next) = adapt_step(grad, moments, cfg);
            (langevin_mean(theta, &dir, 1.0)?, next)
        }
        ProposalKind::RandomWalk => {
            return Err(Error::invalid("random-walk configuration has no gradient kernel"));
        }
    };
    let noise = gaussian_noise(theta.len(), cfg.rw_std, rng);
    let proposed: Vec<f64> = forward_mean.iter().zip(noise).map(|(m, e)| m + e).collect();

    let (at_proposal, grad_star) = grad_fn(&proposed)?;
    if grad_star.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient at the proposed state".into()));
    }
    let reverse_mean = match cfg.kind {
        ProposalKind::AdaptLg => {
            let (dir, _) = adapt_step(&grad_star, &moments, cfg);
            langevin_mean(&proposed, &dir, 1.0)?
        }
        _ => langevin_mean(&proposed, &grad_star, cfg.step_scale)?,
    };
    let proposal = Proposal {
        log_q_forward: gaussian_log_kernel(&proposed, &forward_mean, cfg.rw_std),
        log_q_reverse: gaussian_log_kernel(theta, &reverse_mean, cfg.rw_std),
        theta: proposed,
        used_gradient: true,
    };
    Ok(LangevinProposal {
        proposal,
        moments,
        at_proposal,
        grad_at_proposal: grad_star,
    })
}

/// `min{0, Δloglik/t + Δlogprior + log q-ratio}`; only the likelihood is tempered.
pub fn mh_log_acceptance(
    log_lik_star: f64,
    log_lik: f64,
    log_prior_star: f64,
    log_prior: f64,
    log_q_ratio: f64,
    temperature: f64,
) -> Result<f64> {
    let inputs = [log_lik_star, log_lik, log_prior_star, log_prior, log_q_ratio, temperature];
    if inputs.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("NaN in the acceptance test".into()));
    }
    if temperature < 1.0 {
        return Err(Error::invalid(format!("temperature must be >= 1, got {temperature}")));
    }
    let log_alpha = (log_lik_star - log_lik) / temperature + (log_prior_star - log_prior) + log_q_ratio;
    if log_alpha.is_nan() {
        return Err(Error::NonFinite("acceptance log-ratio".into()));
    }
    Ok(log_alpha.min(0.0))
}

/// Tempered Metropolis–Hastings accept/reject. Always consumes one uniform.
pub fn mh_accept(
    log_lik_star: f64,
    log_lik: f64,
    log_prior_star: f64,
    log_prior: f64,
    log_q_ratio: f64,
    temperature: f64,
    rng: &mut impl Rng,
) -> Result<bool> {
    let log_alpha = mh_log_acceptance(log_lik_star, log_lik, log_prior_star, log_prior, log_q_ratio, temperature)?;
    let u: f64 = rng.random();
    Ok(u.ln() < log_alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn random_walk_is_symmetric() {
        let cfg = ProposalConfig::new(ProposalKind::RandomWalk);
        let p = propose_rw(&[1.0, 2.0], &cfg, &mut rng(1));
        assert_eq!(p.log_q_ratio(), 0.0);
        assert!(!p.used_gradient);
    }

    #[test]
    fn random_walk_vanishing_noise() {
        let cfg = ProposalConfig {
            rw_std: 1e-300,
            ..ProposalConfig::new(ProposalKind::RandomWalk)
        };
        let theta = [0.5, -1.5, 3.0];
        assert_eq!(propose_rw(&theta, &cfg, &mut rng(2)).theta, theta);
    }

    #[test]
    fn random_walk_mean_zero() {
        // Monte-Carlo oracle: the mean step over 1e5 draws on a 10-vector
        // stays within 3σ of zero per coordinate.
        let cfg = ProposalConfig::new(ProposalKind::RandomWalk);
        let theta = [0.0; 10];
        let draws = 100_000;
        let mut sums = [0.0; 10];
        let mut r = rng(3);
        for _ in 0..draws {
            let p = propose_rw(&theta, &cfg, &mut r);
            for (s, v) in sums.iter_mut().zip(&p.theta) {
                *s += v;
            }
        }
        let bound = 3.0 * cfg.rw_std / ((draws * 10) as f64).sqrt();
        let overall = sums.iter().sum::<f64>() / (draws * 10) as f64;
        assert!(overall.abs() < bound, "{overall} vs {bound}");
        let per_coord = 3.0 * cfg.rw_std / (draws as f64).sqrt();
        for s in sums {
            assert!((s / draws as f64).abs() < per_coord * 1.5);
        }
    }

    #[test]
    fn langevin_mean_arithmetic() {
        assert_eq!(langevin_mean(&[1.0, 2.0], &[0.0, 0.0], 0.1).unwrap(), vec![1.0, 2.0]);
        assert_abs_diff_eq!(langevin_mean(&[1.0], &[2.0], 0.1).unwrap()[0], 1.2, epsilon = 1e-15);
        assert!(langevin_mean(&[1.0], &[f64::INFINITY], 0.1).is_err());
    }

    #[test]
    fn langevin_mean_at_quadratic_mode() {
        // log p = −(θ − c)ᵀ(θ − c)/2 has zero gradient at c.
        let c = [0.25, -3.0];
        let grad: Vec<f64> = c.iter().zip(&c).map(|(t, m)| -(t - m)).collect();
        assert_eq!(langevin_mean(&c, &grad, 0.1).unwrap(), c.to_vec());
    }

    #[test]
    fn adapt_step_zero_gradient() {
        let cfg = ProposalConfig::new(ProposalKind::AdaptLg);
        let (dir, next) = adapt_step(&[0.0; 3], &AdamMoments::new(3), &cfg);
        assert_eq!(dir, vec![0.0; 3]);
        assert_eq!(next.step, 1);
    }

    #[test]
    fn adapt_step_first_step_algebra() {
        // After one step m̂ = g and v̂ = g², so the direction is ν1 g/(|g| + ε).
        let cfg = ProposalConfig::new(ProposalKind::AdaptLg);
        let g = [3.0, -0.5, 1e-3];
        let (dir, _) = adapt_step(&g, &AdamMoments::new(3), &cfg);
        for (d, gi) in dir.iter().zip(g) {
            assert_abs_diff_eq!(*d, cfg.step_scale * gi / (gi.abs() + cfg.eps), epsilon = 1e-15);
        }
    }

    #[test]
    fn adapt_step_constant_gradient_limit() {
        let cfg = ProposalConfig::new(ProposalKind::AdaptLg);
        let g = [2.0, -7.0];
        let mut moments = AdamMoments::new(2);
        let mut dir = vec![];
        for _ in 0..5000 {
            let (d, next) = adapt_step(&g, &moments, &cfg);
            dir = d;
            moments = next;
        }
        assert_abs_diff_eq!(dir[0], cfg.step_scale, epsilon = 1e-9);
        assert_abs_diff_eq!(dir[1], -cfg.step_scale, epsilon = 1e-9);
    }

    #[test]
    fn adapt_step_is_deterministic() {
        let cfg = ProposalConfig::new(ProposalKind::AdaptLg);
        let grads: Vec<Vec<f64>> = (0..50).map(|i| vec![(i as f64).sin(), (i as f64 * 0.3).cos()]).collect();
        let run = || {
            let mut m = AdamMoments::new(2);
            for g in &grads {
                m = adapt_step(g, &m, &cfg).1;
            }
            m
        };
        let (a, b) = (run(), run());
        assert_eq!(a.m.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.m.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(a.v.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.v.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    fn quadratic(theta: &[f64]) -> Result<((), Vec<f64>)> {
        Ok(((), theta.iter().map(|t| -t).collect()))
    }

    #[test]
    fn lg_without_step_is_symmetric() {
        let cfg = ProposalConfig {
            step_scale: 0.0,
            ..ProposalConfig::new(ProposalKind::Lg)
        };
        let p = propose_lg(&[1.0, -2.0], &[-1.0, 2.0], quadratic, &cfg, &AdamMoments::new(2), &mut rng(4)).unwrap();
        assert_eq!(p.proposal.log_q_forward, p.proposal.log_q_reverse);
    }

    #[test]
    fn lg_quadratic_q_ratio() {
        // log p(θ) = −θ²/2, θ = 1, ν1 = 0.1, ν2 = 0.005: forward mean 0.9,
        // reverse mean 0.9 θ*.
        let cfg = ProposalConfig {
            step_scale: 0.1,
            rw_std: 0.005,
            ..ProposalConfig::new(ProposalKind::Lg)
        };
        let p = propose_lg(&[1.0], &[-1.0], quadratic, &cfg, &AdamMoments::new(1), &mut rng(5)).unwrap();
        let star = p.proposal.theta[0];
        let var = 0.005f64 * 0.005;
        let fwd = -(star - 0.9) * (star - 0.9) / (2.0 * var);
        let rev = -(1.0 - 0.9 * star) * (1.0 - 0.9 * star) / (2.0 * var);
        assert_abs_diff_eq!(p.proposal.log_q_forward, fwd, epsilon = 1e-9);
        assert_abs_diff_eq!(p.proposal.log_q_reverse, rev, epsilon = 1e-9);
        assert_abs_diff_eq!(p.proposal.log_q_ratio(), rev - fwd, epsilon = 1e-9);
        assert_eq!(p.grad_at_proposal, vec![-star]);
    }

    #[test]
    fn adapt_lg_reverse_uses_post_forward_snapshot() {
        let cfg = ProposalConfig::new(ProposalKind::AdaptLg);
        let theta = [0.4, -0.2];
        let grad = [-0.4, 0.2];
        let start = AdamMoments::new(2);
        let p = propose_lg(&theta, &grad, quadratic, &cfg, &start, &mut rng(6)).unwrap();
        let (fwd_dir, after) = adapt_step(&grad, &start, &cfg);
        assert_eq!(p.moments, after);
        let star = &p.proposal.theta;
        let (rev_dir, _) = adapt_step(&p.grad_at_proposal, &after, &cfg);
        let var = cfg.rw_std * cfg.rw_std;
        let fwd: f64 = (0..2).map(|i| -(star[i] - theta[i] - fwd_dir[i]).powi(2) / (2.0 * var)).sum();
        let rev: f64 = (0..2).map(|i| -(theta[i] - star[i] - rev_dir[i]).powi(2) / (2.0 * var)).sum();
        assert_abs_diff_eq!(p.proposal.log_q_forward, fwd, epsilon = 1e-9);
        assert_abs_diff_eq!(p.proposal.log_q_reverse, rev, epsilon = 1e-9);
    }

    #[test]
    fn lg_rejects_non_finite_gradient() {
        let cfg = ProposalConfig::new(ProposalKind::Lg);
        let err = propose_lg(&[1.0], &[f64::NAN], quadratic, &cfg, &AdamMoments::new(1), &mut rng(7)).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        let bad = |_: &[f64]| Ok(((), vec![f64::INFINITY]));
        let err = propose_lg(&[1.0], &[0.0], bad, &cfg, &AdamMoments::new(1), &mut rng(7)).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn coincident_points_have_zero_ratio() {
        // θ* = θ with a zero gradient on both sides.
        let log_f = gaussian_log_kernel(&[0.3], &[0.3], 0.005);
        let log_r = gaussian_log_kernel(&[0.3], &[0.3], 0.005);
        assert_eq!(log_r - log_f, 0.0);
    }

    #[test]
    fn mh_accepts_improvements_and_ties() {
        let mut r = rng(8);
        for _ in 0..1000 {
            assert!(mh_accept(-1.0, -2.0, -1.0, -1.5, 0.0, 1.0, &mut r).unwrap());
            assert!(mh_accept(-1.0, -1.0, -1.0, -1.0, 0.0, 3.0, &mut r).unwrap());
        }
    }

    #[test]
    fn mh_rejects_bad_inputs() {
        let mut r = rng(9);
        assert!(mh_accept(f64::NAN, 0.0, 0.0, 0.0, 0.0, 1.0, &mut r).is_err());
        assert!(mh_accept(0.0, 0.0, 0.0, 0.0, 0.0, 0.5, &mut r).is_err());
    }

    #[test]
    fn tempering_attenuates_likelihood_only() {
        let a = mh_log_acceptance(-4.0, 0.0, 0.0, 0.0, 0.0, 2.0).unwrap();
        assert_eq!(a, -2.0);
        let b = mh_log_acceptance(0.0, 0.0, -4.0, 0.0, 0.0, 2.0).unwrap();
        assert_eq!(b, -4.0);
    }

    #[test]
    fn standard_normal_acceptance_matches_reference() {
        // Independent scalar reference sampler with its own stream.
        let steps = 100_000;
        let std = 2.4;
        let reference = {
            let mut r = rng(100);
            let (mut x, mut acc) = (0.0f64, 0usize);
            for _ in 0..steps {
                let y = x + std * r.sample::<f64, _>(StandardNormal);
                let ratio = (-(y * y) / 2.0 + x * x / 2.0).exp();
                if r.random::<f64>() < ratio {
                    x = y;
                    acc += 1;
                }
            }
            acc as f64 / steps as f64
        };
        let cfg = ProposalConfig {
            rw_std: std,
            ..ProposalConfig::new(ProposalKind::RandomWalk)
        };
        let mut r = rng(200);
        let (mut x, mut acc) = (vec![0.0f64], 0usize);
        for _ in 0..steps {
            let p = propose_rw(&x, &cfg, &mut r);
            let ll = |v: f64| -v * v / 2.0;
            if mh_accept(ll(p.theta[0]), ll(x[0]), 0.0, 0.0, p.log_q_ratio(), 1.0, &mut r).unwrap() {
                x = p.theta;
                acc += 1;
            }
        }
        let rate = acc as f64 / steps as f64;
        assert!((rate - reference).abs() < 0.01, "{rate} vs {reference}");
    }

    #[test]
    fn discrete_target_stationarity() {
        let target: [f64; 3] = [0.2, 0.3, 0.5];
        let mut r = rng(10);
        let mut state = 0usize;
        let mut counts = [0usize; 3];
        let steps = 1_000_000;
        for _ in 0..steps {
            let jump = 1 + r.random_range(0..2usize);
            let next = (state + jump) % 3;
            let accept = mh_accept(target[next].ln(), target[state].ln(), 0.0, 0.0, 0.0, 1.0, &mut r).unwrap();
            if accept {
                state = next;
            }
            counts[state] += 1;
        }
        let tv: f64 = counts
            .iter()
            .zip(target)
            .map(|(&c, p)| (c as f64 / steps as f64 - p).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.01, "total variation {tv}");
    }

    proptest::proptest! {
        #[test]
        fn acceptance_non_decreasing_in_temperature(dlik in -50.0f64..-1e-6, t1 in 1.0f64..10.0, dt in 0.0f64..10.0) {
            let a = mh_log_acceptance(dlik, 0.0, 0.0, 0.0, 0.0, t1).unwrap();
            let b = mh_log_acceptance(dlik, 0.0, 0.0, 0.0, 0.0, t1 + dt).unwrap();
            proptest::prop_assert!(b >= a);
        }
    }
}
