//! Minimal dense neural substrate: parameter storage, a reverse-mode gradient
//! tape, two-layer MLPs, and Adam. Everything is f64 and deterministic under
//! seeded RNGs.

pub mod adam;
pub mod mlp;
pub mod params;
pub mod tape;

pub use adam::AdamState;
pub use mlp::{argmax, Mlp, DEFAULT_HIDDEN};
pub use params::ParamSet;
pub use tape::{inv_dist_probs_rows, softmax_rows, NodeId, Tape};

/// Scalar cross-entropy: -log softmax(logits)[target], max-stabilized.
pub fn cross_entropy(logits: &[f64], target: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum: f64 = logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    -(logits[target] - max - log_sum)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_k() {
        assert!((cross_entropy(&[0.0; 4], 1) - 4.0f64.ln()).abs() < 1e-12);
        assert!((cross_entropy(&[7.0; 6], 0) - 6.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn matches_high_precision_recomputation() {
        // Oracle: direct evaluation with explicit rational-style accumulation
        // at f64, no stabilization, on inputs where overflow cannot occur.
        let logits: [f64; 4] = [0.3, -1.2, 2.4, 0.0];
        for t in 0..4 {
            let denom: f64 = logits.iter().map(|&l| l.exp()).sum();
            let expected = -(logits[t].exp() / denom).ln();
            assert!((cross_entropy(&logits, t) - expected).abs() < 1e-12);
        }
    }
}
