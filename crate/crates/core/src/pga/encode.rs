use super::multivector::Multivector;
use super::tables::idx;
use super::PgaError;
#[allow(unused_imports)]
use num_traits::Float;

/// Below this `|e12|` a point is treated as ideal (at infinity).
pub const IDEAL_POINT_THRESHOLD: f64 = 1e-12;

/// `x e20 + y e01 + e12`.
pub fn encode_point(x: f64, y: f64) -> Multivector {
    let mut m = Multivector::ZERO;
    m[idx::E20] = x;
    m[idx::E01] = y;
    m[idx::E12] = 1.0;
    m
}

/// Projectively normalized `(x, y)` of the bivector part of `m`.
pub fn decode_point(m: &Multivector) -> Result<(f64, f64), PgaError> {
    let w = m[idx::E12];
    if !(w.abs() > IDEAL_POINT_THRESHOLD) {
        return Err(PgaError::IdealPoint { weight: w });
    }
    Ok((m[idx::E20] / w, m[idx::E01] / w))
}

/// The line `a x + b y + c = 0` as `a e1 + b e2 + c e0`, optionally scaled to a unit normal.
pub fn encode_line(a: f64, b: f64, c: f64, normalize: bool) -> Result<Multivector, PgaError> {
    let n = (a * a + b * b).sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(PgaError::DegenerateLine);
    }
    let k = if normalize { 1.0 / n } else { 1.0 };
    let mut m = Multivector::ZERO;
    m[idx::E1] = a * k;
    m[idx::E2] = b * k;
    m[idx::E0] = c * k;
    Ok(m)
}

/// `(a, b, c)` of the vector part of `m`.
pub fn decode_line(m: &Multivector) -> (f64, f64, f64) {
    (m[idx::E1], m[idx::E2], m[idx::E0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_encoding() {
        let p = encode_point(1.0, 2.0);
        assert_eq!(p, Multivector::E20 + 2.0 * Multivector::E01 + Multivector::E12);
        assert_eq!(decode_point(&p.scale(2.0)).unwrap(), (1.0, 2.0));
        assert_eq!(decode_point(&Multivector::E12).unwrap(), (0.0, 0.0));
        assert!(matches!(decode_point(&Multivector::E20), Err(PgaError::IdealPoint { .. })));
    }

    #[test]
    fn line_encoding() {
        assert_eq!(encode_line(0.0, 1.0, 0.0, true).unwrap(), Multivector::E2);
        assert_eq!(encode_line(0.0, 0.0, 1.0, true), Err(PgaError::DegenerateLine));
        let l = encode_line(3.0, 4.0, 10.0, true).unwrap();
        assert!((l[idx::E1] - 0.6).abs() < 1e-15 && (l[idx::E0] - 2.0).abs() < 1e-15);
        let raw = encode_line(3.0, 4.0, 10.0, false).unwrap();
        assert_eq!(decode_line(&raw), (3.0, 4.0, 10.0));
    }
}
