#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

/// How a token is drawn from a row of logits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampleMode {
    Greedy,
    Categorical { temperature: f64 },
}

impl Default for SampleMode {
    fn default() -> Self {
        SampleMode::Categorical { temperature: 1.0 }
    }
}

fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

/// Draws one token. Greedy ties go to the lowest index. A non-positive
/// temperature falls back to greedy.
pub fn sample_action<R: Rng + ?Sized>(logits: &[f64], mode: SampleMode, rng: &mut R) -> usize {
    assert!(!logits.is_empty(), "sample_action needs at least one logit");
    let tau = match mode {
        SampleMode::Greedy => return argmax(logits),
        SampleMode::Categorical { temperature } if !(temperature > 0.0) => return argmax(logits),
        SampleMode::Categorical { temperature } => temperature,
    };
    let m = logits[argmax(logits)];
    let total: f64 = logits.iter().map(|&l| ((l - m) / tau).exp()).sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &l) in logits.iter().enumerate() {
        let p = ((l - m) / tau).exp();
        if u < p {
            return i;
        }
        u -= p;
    }
    // Rounding can leave a sliver of mass past the end.
    argmax(logits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn greedy_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_action(&[0.0, 10.0, 0.0], SampleMode::Greedy, &mut rng), 1);
        assert_eq!(sample_action(&[2.0, 2.0, 2.0], SampleMode::Greedy, &mut rng), 0);
    }

    #[test]
    fn cold_categorical_is_greedy() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let logits = [0.1, 0.5, 0.45, -1.0];
        let hits = (0..10_000).filter(|_| sample_action(&logits, SampleMode::Categorical { temperature: 1e-3 }, &mut rng) == 1).count();
        assert_eq!(hits, 10_000);
    }

    #[test]
    fn categorical_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let logits = [0.0, 2f64.ln()];
        let ones = (0..30_000).filter(|_| sample_action(&logits, SampleMode::default(), &mut rng) == 1).count();
        let p = ones as f64 / 30_000.0;
        assert!((p - 2.0 / 3.0).abs() < 0.015, "{p}");
    }
}
