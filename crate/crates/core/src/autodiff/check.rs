use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AutodiffError, Tape, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    pub coords_total: usize,
    /// `(input index, coordinate)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub seed: u64,
    /// `(analytic, numeric)` for every checked coordinate, in check order.
    pub pairs: Vec<(f64, f64)>,
}

impl GradCheckReport {
    /// Largest `|a - n| / max(|a|, |n|, scale)`.
    ///
    /// Central differences carry an absolute rounding error of roughly
    /// `ε |f| / step` whatever the gradient size, so coordinates with
    /// gradients far below `scale` are judged on absolute error instead.
    pub fn max_error_at_scale(&self, scale: f64) -> f64 {
        self.pairs.iter().map(|&(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(scale)).fold(0.0, f64::max)
    }
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences.
///
/// `f` records the function on a fresh tape given one input `Var` per entry
/// of `inputs`. When there are more than `max_coords` coordinates, a seeded
/// random subset of `max_coords` is checked. Relative error per coordinate is
/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<F>(
    f: F,
    inputs: &[(Vec<usize>, Vec<f64>)],
    step: f64,
    max_coords: usize,
    seed: u64,
) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, AutodiffError>,
{
    let eval = |vals: &[Vec<f64>], grad: bool| -> Result<(Tape<f64>, Var, Vec<Var>), AutodiffError> {
        let mut tape = Tape::new();
        let vars = inputs
            .iter()
            .zip(vals)
            .map(|((shape, _), v)| if grad { tape.input(shape, v.clone()) } else { tape.constant(shape, v.clone()) })
            .collect::<Result<Vec<_>, _>>()?;
        let out = f(&mut tape, &vars)?;
        Ok((tape, out, vars))
    };

    let base: Vec<Vec<f64>> = inputs.iter().map(|(_, v)| v.clone()).collect();
    let (tape, out, vars) = eval(&base, true)?;
    let grads = tape.backward(out, 1.0)?;

    let offsets: Vec<usize> = base
        .iter()
        .scan(0, |acc, v| {
            let o = *acc;
            *acc += v.len();
            Some(o)
        })
        .collect();
    let total: usize = base.iter().map(Vec::len).sum();
    let coords: Vec<usize> = if total <= max_coords {
        (0..total).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c = sample(&mut rng, total, max_coords).into_vec();
        c.sort_unstable();
        c
    };

    let mut report =
        GradCheckReport { max_rel_error: 0.0, coords_checked: coords.len(), coords_total: total, worst: None, seed, pairs: Vec::new() };
    let mut vals = base.clone();
    for flat in coords {
        let i = offsets.partition_point(|&o| o <= flat) - 1;
        let j = flat - offsets[i];
        let analytic = grads.get(vars[i]).map_or(0.0, |g| g[j]);
        let x0 = base[i][j];
        vals[i][j] = x0 + step;
        let (tp, op, _) = eval(&vals, false)?;
        let fp = tp.value(op)[0];
        vals[i][j] = x0 - step;
        let (tm, om, _) = eval(&vals, false)?;
        let fm = tm.value(om)[0];
        vals[i][j] = x0;
        let numeric = (fp - fm) / (2.0 * step);
        report.pairs.push((analytic, numeric));
        let denom = analytic.abs().max(numeric.abs()).max(1e-8);
        let err = (analytic - numeric).abs() / denom;
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            if err >= report.max_rel_error {
                report.worst = Some((i, j));
            }
        }
    }
    Ok(report)
}
