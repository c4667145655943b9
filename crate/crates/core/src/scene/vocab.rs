use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dynamics::{agent_deltas, Delta};
use super::{AgentClass, Scene, SceneError};
use crate::pga::wrap_angle;
#[allow(unused_imports)]
use num_traits::Float;

/// Meters per radian in the tokenization metric.
pub const DEFAULT_HEADING_WEIGHT: f64 = 1.0;

/// `sqrt(Δdx² + Δdy² + (w_θ wrap(Δdθ))²)`.
pub fn delta_distance(a: &Delta, b: &Delta, w_theta: f64) -> f64 {
    let dx = a.dx - b.dx;
    let dy = a.dy - b.dy;
    let dt = w_theta * wrap_angle(a.dtheta - b.dtheta);
    (dx * dx + dy * dy + dt * dt).sqrt()
}

/// Per-class lists of local action deltas.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionVocab {
    /// Disk radius per class, meters under the tokenization metric.
    pub k_r: [f64; 3],
    pub w_theta: f64,
    pub seed: u64,
    /// Corpus size per class at build time.
    pub sample_counts: [usize; 3],
    /// Indexed by [`AgentClass::index`].
    pub deltas: [Vec<Delta>; 3],
}

impl ActionVocab {
    pub fn size(&self, class: AgentClass) -> usize {
        self.deltas[class.index()].len()
    }

    pub fn sizes(&self) -> [usize; 3] {
        [self.deltas[0].len(), self.deltas[1].len(), self.deltas[2].len()]
    }

    /// Nearest entry under the tokenization metric; ties go to the lowest index.
    pub fn tokenize(&self, delta: &Delta, class: AgentClass) -> Result<usize, SceneError> {
        let entries = &self.deltas[class.index()];
        if entries.is_empty() {
            return Err(SceneError::EmptyTransitions(class.as_str()));
        }
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, e) in entries.iter().enumerate() {
            let d = delta_distance(delta, e, self.w_theta);
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        Ok(best)
    }

    pub fn detokenize(&self, token: usize, class: AgentClass) -> Result<Delta, SceneError> {
        let entries = &self.deltas[class.index()];
        entries.get(token).copied().ok_or(SceneError::TokenRange { token, class: class.as_str(), size: entries.len() })
    }
}

/// Collects every consecutive-step delta of every agent, grouped by class.
pub fn transitions_by_class<'a>(scenes: impl IntoIterator<Item = &'a Scene>) -> [Vec<Delta>; 3] {
    let mut out: [Vec<Delta>; 3] = Default::default();
    for s in scenes {
        for a in &s.agents {
            out[a.class.index()].extend(agent_deltas(&a.states));
        }
    }
    out
}

fn greedy(shuffled: &[Delta], k_r: f64, cap: usize, w_theta: f64) -> Vec<Delta> {
    let mut kept: Vec<Delta> = Vec::new();
    for d in shuffled {
        if kept.len() >= cap {
            break;
        }
        if kept.iter().all(|k| delta_distance(d, k, w_theta) > k_r) {
            kept.push(*d);
        }
    }
    kept
}

fn shuffled(transitions: &[Delta], seed: u64, class: usize) -> Vec<Delta> {
    let mut v = transitions.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((class as u64 + 1) << 32));
    v.shuffle(&mut rng);
    v
}

/// Greedy k-disk selection per class: shuffle with `seed`, keep a candidate
/// iff it is farther than that class's radius from every kept entry, stop at `cap`.
pub fn build_kdisk_vocab(
    transitions: &[Vec<Delta>; 3],
    k_r: [f64; 3],
    cap: usize,
    w_theta: f64,
    seed: u64,
) -> Result<ActionVocab, SceneError> {
    if let Some(&r) = k_r.iter().find(|r| !(**r > 0.0)) {
        return Err(SceneError::BadRadius(r));
    }
    let mut deltas: [Vec<Delta>; 3] = Default::default();
    for class in AgentClass::ALL {
        let c = class.index();
        if transitions[c].is_empty() {
            return Err(SceneError::EmptyTransitions(class.as_str()));
        }
        deltas[c] = greedy(&shuffled(&transitions[c], seed, c), k_r[c], cap.max(1), w_theta);
    }
    Ok(ActionVocab { k_r, w_theta, seed, sample_counts: [transitions[0].len(), transitions[1].len(), transitions[2].len()], deltas })
}

/// Per class, the smallest radius (to bisection precision) at which the
/// uncapped greedy selection fits within `cap`. The cap then never truncates
/// the selection, so every transition stays within its class radius of the
/// vocabulary while the vocabulary comes as close to `cap` as the corpus allows.
pub fn select_radius(transitions: &[Vec<Delta>; 3], cap: usize, w_theta: f64, seed: u64) -> Result<[f64; 3], SceneError> {
    let mut out = [0.0; 3];
    for class in AgentClass::ALL {
        let c = class.index();
        if transitions[c].is_empty() {
            return Err(SceneError::EmptyTransitions(class.as_str()));
        }
        let set = shuffled(&transitions[c], seed, c);
        let fits = |r: f64| greedy(&set, r, cap + 1, w_theta).len() <= cap;
        let mut hi = 1e-3;
        while !fits(hi) {
            hi *= 2.0;
            if hi > 1e6 {
                return Err(SceneError::BadRadius(hi));
            }
        }
        let mut lo = 0.0;
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if fits(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        out[c] = hi;
    }
    Ok(out)
}
