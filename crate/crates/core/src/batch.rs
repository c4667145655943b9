//! Dense row-major containers for multivector channels `[batch.., C, 8]` and
//! auxiliary scalar channels `[batch.., C']`.

use alloc::vec;
use alloc::vec::Vec;

use crate::pga::{tables, Motor};
use crate::real::Real;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BatchError {
    #[error("data length {len} does not match shape (expected {expected})")]
    DataLength { len: usize, expected: usize },
    #[error("leading dims differ: {left:?} vs {right:?}")]
    LeadingMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("split sizes sum to {sum}, expected {channels}")]
    BadSplit { sum: usize, channels: usize },
    #[error("expected {expected} motors (one per token), got {got}")]
    MotorCount { expected: usize, got: usize },
}

fn prod(dims: &[usize]) -> usize {
    dims.iter().product()
}

/// Multivector features with shape `[lead.., channels, 8]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MvArray<T = f64> {
    lead: Vec<usize>,
    channels: usize,
    data: Vec<T>,
}

/// Scalar features with shape `[lead.., channels]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarArray<T = f64> {
    lead: Vec<usize>,
    channels: usize,
    data: Vec<T>,
}

impl<T: Real> MvArray<T> {
    pub fn zeros(lead: &[usize], channels: usize) -> Self {
        MvArray { lead: lead.to_vec(), channels, data: vec![T::zero(); prod(lead) * channels * 8] }
    }

    pub fn from_vec(lead: &[usize], channels: usize, data: Vec<T>) -> Result<Self, BatchError> {
        let expected = prod(lead) * channels * 8;
        if data.len() != expected {
            return Err(BatchError::DataLength { len: data.len(), expected });
        }
        Ok(MvArray { lead: lead.to_vec(), channels, data })
    }

    /// Builds `[tokens, channels, 8]` from per-token, per-channel multivectors.
    pub fn from_fn(tokens: usize, channels: usize, mut f: impl FnMut(usize, usize) -> [T; 8]) -> Self {
        let mut data = Vec::with_capacity(tokens * channels * 8);
        for n in 0..tokens {
            for c in 0..channels {
                data.extend_from_slice(&f(n, c));
            }
        }
        MvArray { lead: vec![tokens], channels, data }
    }

    pub fn lead(&self) -> &[usize] {
        &self.lead
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of tokens: the product of the leading dimensions.
    pub fn tokens(&self) -> usize {
        prod(&self.lead)
    }

    pub fn shape(&self) -> Vec<usize> {
        let mut s = self.lead.clone();
        s.push(self.channels);
        s.push(8);
        s
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, token: usize, channel: usize) -> [T; 8] {
        let o = (token * self.channels + channel) * 8;
        let mut m = [T::zero(); 8];
        m.copy_from_slice(&self.data[o..o + 8]);
        m
    }

    pub fn set(&mut self, token: usize, channel: usize, value: [T; 8]) {
        let o = (token * self.channels + channel) * 8;
        self.data[o..o + 8].copy_from_slice(&value);
    }

    pub fn reshape_lead(mut self, lead: &[usize]) -> Result<Self, BatchError> {
        if prod(lead) != self.tokens() {
            return Err(BatchError::LeadingMismatch { left: self.lead, right: lead.to_vec() });
        }
        self.lead = lead.to_vec();
        Ok(self)
    }

    pub fn map(&self, mut f: impl FnMut(&[T; 8]) -> [T; 8]) -> Self {
        let mut out = self.clone();
        for chunk in out.data.chunks_exact_mut(8) {
            let mut m = [T::zero(); 8];
            m.copy_from_slice(chunk);
            chunk.copy_from_slice(&f(&m));
        }
        out
    }

    pub fn concat_channels(&self, other: &Self) -> Result<Self, BatchError> {
        if self.lead != other.lead {
            return Err(BatchError::LeadingMismatch { left: self.lead.clone(), right: other.lead.clone() });
        }
        let (ca, cb) = (self.channels * 8, other.channels * 8);
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        for n in 0..self.tokens() {
            data.extend_from_slice(&self.data[n * ca..(n + 1) * ca]);
            data.extend_from_slice(&other.data[n * cb..(n + 1) * cb]);
        }
        Ok(MvArray { lead: self.lead.clone(), channels: self.channels + other.channels, data })
    }

    pub fn split_channels(&self, sizes: &[usize]) -> Result<Vec<Self>, BatchError> {
        let sum: usize = sizes.iter().sum();
        if sum != self.channels {
            return Err(BatchError::BadSplit { sum, channels: self.channels });
        }
        let mut out = Vec::with_capacity(sizes.len());
        let mut start = 0;
        for &s in sizes {
            let mut data = Vec::with_capacity(self.tokens() * s * 8);
            for n in 0..self.tokens() {
                let o = (n * self.channels + start) * 8;
                data.extend_from_slice(&self.data[o..o + s * 8]);
            }
            out.push(MvArray { lead: self.lead.clone(), channels: s, data });
            start += s;
        }
        Ok(out)
    }

    /// `[lead.., C, 8] -> [lead.., 8C]` with component `(c, k)` at `8c + k`.
    pub fn flatten_components(&self) -> ScalarArray<T> {
        ScalarArray { lead: self.lead.clone(), channels: self.channels * 8, data: self.data.clone() }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (*a - *b).abs().as_f64()).fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|a| a.abs().as_f64()).fold(0.0, f64::max)
    }
}

impl<T: Real> ScalarArray<T> {
    pub fn zeros(lead: &[usize], channels: usize) -> Self {
        ScalarArray { lead: lead.to_vec(), channels, data: vec![T::zero(); prod(lead) * channels] }
    }

    pub fn from_vec(lead: &[usize], channels: usize, data: Vec<T>) -> Result<Self, BatchError> {
        let expected = prod(lead) * channels;
        if data.len() != expected {
            return Err(BatchError::DataLength { len: data.len(), expected });
        }
        Ok(ScalarArray { lead: lead.to_vec(), channels, data })
    }

    pub fn lead(&self) -> &[usize] {
        &self.lead
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn tokens(&self) -> usize {
        prod(&self.lead)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, token: usize) -> &[T] {
        &self.data[token * self.channels..(token + 1) * self.channels]
    }

    pub fn concat_channels(&self, other: &Self) -> Result<Self, BatchError> {
        if self.lead != other.lead {
            return Err(BatchError::LeadingMismatch { left: self.lead.clone(), right: other.lead.clone() });
        }
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        for n in 0..self.tokens() {
            data.extend_from_slice(self.row(n));
            data.extend_from_slice(other.row(n));
        }
        Ok(ScalarArray { lead: self.lead.clone(), channels: self.channels + other.channels, data })
    }

    pub fn split_channels(&self, sizes: &[usize]) -> Result<Vec<Self>, BatchError> {
        let sum: usize = sizes.iter().sum();
        if sum != self.channels {
            return Err(BatchError::BadSplit { sum, channels: self.channels });
        }
        let mut out = Vec::with_capacity(sizes.len());
        let mut start = 0;
        for &s in sizes {
            let mut data = Vec::with_capacity(self.tokens() * s);
            for n in 0..self.tokens() {
                data.extend_from_slice(&self.row(n)[start..start + s]);
            }
            out.push(ScalarArray { lead: self.lead.clone(), channels: s, data });
            start += s;
        }
        Ok(out)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (*a - *b).abs().as_f64()).fold(0.0, f64::max)
    }
}

/// Applies one motor per token to every channel of that token.
pub fn batched_sandwich<T: Real>(motors: &[Motor], x: &MvArray<T>) -> Result<MvArray<T>, BatchError> {
    if motors.len() != x.tokens() {
        return Err(BatchError::MotorCount { expected: x.tokens(), got: motors.len() });
    }
    let mut out = x.clone();
    let c = x.channels();
    for (n, m) in motors.iter().enumerate() {
        let u = motor_coeffs::<T>(m);
        for ch in 0..c {
            let y = tables::sandwich(&u, &x.get(n, ch));
            out.set(n, ch, y);
        }
    }
    Ok(out)
}

/// Motor coefficients embedded as an 8-component even multivector of type `T`.
pub fn motor_coeffs<T: Real>(m: &Motor) -> [T; 8] {
    m.to_multivector().0.map(T::cast)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pga::{sandwich, Multivector, Pose2};

    fn ramp(lead: &[usize], c: usize, offset: f64) -> MvArray<f64> {
        let n = prod(lead) * c * 8;
        MvArray::from_vec(lead, c, (0..n).map(|i| i as f64 + offset).collect()).unwrap()
    }

    #[test]
    fn concat_shapes() {
        let a = ramp(&[2, 3], 2, 0.0);
        let b = ramp(&[2, 3], 3, 1000.0);
        let c = a.concat_channels(&b).unwrap();
        assert_eq!(c.shape(), vec![2, 3, 5, 8]);
        let parts = c.split_channels(&[2, 3]).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
        let empty = MvArray::<f64>::zeros(&[2, 3], 0);
        assert_eq!(a.concat_channels(&empty).unwrap(), a);
    }

    #[test]
    fn concat_rejects_mismatch() {
        let a = ramp(&[2, 3], 2, 0.0);
        let b = ramp(&[3, 2], 2, 0.0);
        assert!(matches!(a.concat_channels(&b), Err(BatchError::LeadingMismatch { .. })));
        assert!(matches!(a.split_channels(&[1, 2]), Err(BatchError::BadSplit { sum: 3, channels: 2 })));
        assert!(MvArray::<f64>::from_vec(&[2], 1, vec![0.0; 15]).is_err());
    }

    #[test]
    fn split_into_four() {
        let x = ramp(&[3], 4, 0.0);
        let parts = x.split_channels(&[1, 1, 1, 1]).unwrap();
        assert_eq!(parts.len(), 4);
        for (c, p) in parts.iter().enumerate() {
            assert_eq!(p.shape(), vec![3, 1, 8]);
            assert_eq!(p.get(2, 0), x.get(2, c));
        }
    }

    #[test]
    fn flatten_layout() {
        let x = ramp(&[2], 2, 0.0);
        let f = x.flatten_components();
        assert_eq!(f.channels(), 16);
        for n in 0..2 {
            for c in 0..2 {
                for k in 0..8 {
                    assert_eq!(f.row(n)[8 * c + k], x.get(n, c)[k]);
                }
            }
        }
        let z = MvArray::<f64>::zeros(&[4], 3).flatten_components();
        assert!(z.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn scalar_concat_split() {
        let a = ScalarArray::from_vec(&[2], 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = ScalarArray::from_vec(&[2], 1, vec![9.0, 8.0]).unwrap();
        let c = a.concat_channels(&b).unwrap();
        assert_eq!(c.data(), &[1.0, 2.0, 9.0, 3.0, 4.0, 8.0]);
        let s = c.split_channels(&[2, 1]).unwrap();
        assert_eq!(s[0], a);
        assert_eq!(s[1], b);
    }

    #[test]
    fn sandwich_identity_and_reduction() {
        let x = ramp(&[2], 3, -20.0);
        let same = batched_sandwich(&[Motor::IDENTITY; 2], &x).unwrap();
        assert_eq!(same, x);

        let u = Motor::from_pose(&Pose2::new(1.0, -2.0, 0.4));
        let one = MvArray::from_vec(&[1], 1, x.get(0, 1).to_vec()).unwrap();
        let y = batched_sandwich(&[u], &one).unwrap();
        assert_eq!(y.get(0, 0), sandwich(&u, &Multivector(x.get(0, 1))).unwrap().0);
        assert!(batched_sandwich(&[u], &x).is_err());
    }
}
