use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use planar_gatr_core::scene::{ActionVocab, AgentClass, Delta};

use super::{IoError, Provenance};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PerClass<T> {
    pub vehicle: T,
    pub pedestrian: T,
    pub cyclist: T,
}

impl<T: Clone> PerClass<T> {
    pub fn from_array(a: &[T; 3]) -> Self {
        PerClass { vehicle: a[0].clone(), pedestrian: a[1].clone(), cyclist: a[2].clone() }
    }

    pub fn into_array(self) -> [T; 3] {
        [self.vehicle, self.pedestrian, self.cyclist]
    }
}

/// Vocabulary content; this is what the vocabulary hash covers.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct VocabBody {
    pub k_r: PerClass<f64>,
    pub w_theta: f64,
    pub seed: u64,
    pub sample_counts: PerClass<usize>,
    /// `[dx, dy, dtheta]` per entry.
    pub deltas: PerClass<Vec<[f64; 3]>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabFile {
    pub provenance: Provenance,
    pub vocab: VocabBody,
}

impl From<&ActionVocab> for VocabBody {
    fn from(v: &ActionVocab) -> Self {
        let deltas = v.deltas.clone().map(|d| d.iter().map(|e| [e.dx, e.dy, e.dtheta]).collect::<Vec<_>>());
        VocabBody {
            k_r: PerClass::from_array(&v.k_r),
            w_theta: v.w_theta,
            seed: v.seed,
            sample_counts: PerClass::from_array(&v.sample_counts),
            deltas: PerClass::from_array(&deltas),
        }
    }
}

impl VocabBody {
    pub fn to_vocab(&self) -> Result<ActionVocab, IoError> {
        let deltas = self.deltas.clone().into_array().map(|d| d.into_iter().map(|[x, y, t]| Delta::new(x, y, t)).collect::<Vec<_>>());
        for class in AgentClass::ALL {
            if deltas[class.index()].is_empty() {
                return Err(IoError::Invalid(format!("vocabulary has no {} entries", class.as_str())));
            }
        }
        Ok(ActionVocab {
            k_r: self.k_r.clone().into_array(),
            w_theta: self.w_theta,
            seed: self.seed,
            sample_counts: self.sample_counts.clone().into_array(),
            deltas,
        })
    }
}

/// SHA-256 of the compact JSON of the vocabulary content, hex encoded.
pub fn vocab_hash(v: &ActionVocab) -> String {
    let bytes = serde_json::to_vec(&VocabBody::from(v)).expect("vocab serialization cannot fail");
    hex(&Sha256::digest(bytes))
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn vocab_to_json(v: &ActionVocab, provenance: Provenance) -> Vec<u8> {
    serde_json::to_vec_pretty(&VocabFile { provenance, vocab: VocabBody::from(v) }).expect("vocab serialization cannot fail")
}

pub fn vocab_from_json(bytes: &[u8]) -> Result<ActionVocab, IoError> {
    let f: VocabFile = serde_json::from_slice(bytes).map_err(|e| IoError::Parse { what: "vocab", msg: e.to_string() })?;
    f.vocab.to_vocab()
}
