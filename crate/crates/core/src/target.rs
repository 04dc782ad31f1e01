use rand_chacha::ChaCha8Rng;

use crate::error::Result;

/// Random stream owned by one replica or by the swap manager.
pub type StreamRng = ChaCha8Rng;

/// Log-densities and metrics at one parameter vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub log_lik: f64,
    pub log_prior: f64,
    /// Percentages; NaN when the target has no notion of accuracy.
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

/// A posterior the sampler can explore: a tempered likelihood times an
/// untempered prior, with the gradient of their (untempered) sum.
pub trait LogTarget: Sync {
    fn dim(&self) -> usize;

    fn evaluate(&self, theta: &[f64]) -> Result<Evaluation>;

    /// Evaluation plus `∇θ (log_lik + log_prior)`.
    fn evaluate_with_gradient(&self, theta: &[f64]) -> Result<(Evaluation, Vec<f64>)>;

    fn initial_position(&self, rng: &mut StreamRng) -> Vec<f64>;
}
