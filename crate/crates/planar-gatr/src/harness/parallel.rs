use std::thread;

use planar_gatr_core::model::{LossRecord, Model, ModelError, TokenBatch, TrainConfig, Trainer};
use planar_gatr_core::Real;

/// Maps `f` over `items` on up to `threads` scoped threads. Items are split
/// into contiguous chunks and results come back in input order.
pub fn par_map<I: Sync, O: Send>(items: &[I], threads: usize, f: impl Fn(usize, &I) -> O + Sync) -> Vec<O> {
    let threads = threads.clamp(1, items.len().max(1));
    if threads == 1 {
        return items.iter().enumerate().map(|(i, x)| f(i, x)).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let f = &f;
    thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .enumerate()
            .map(|(c, part)| s.spawn(move || part.iter().enumerate().map(|(i, x)| f(c * chunk + i, x)).collect::<Vec<O>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker thread panicked")).collect()
    })
}

/// Mean loss and gradients over `batches`, computed on up to `threads`
/// threads with private tapes.
///
/// Each thread handles a contiguous slice of scenes; the partial results are
/// combined in slice order, weighted by target count, so the result is the
/// same on every run with the same thread count. With one thread this is
/// exactly [`Model::loss_and_grads`].
pub fn parallel_loss_and_grads<T: Real>(
    model: &Model<T>,
    batches: &[&TokenBatch],
    threads: usize,
) -> Result<(f64, usize, Vec<Vec<T>>), ModelError> {
    let threads = threads.clamp(1, batches.len().max(1));
    if threads == 1 {
        return model.loss_and_grads(batches);
    }
    let chunk = batches.len().div_ceil(threads);
    let parts: Vec<&[&TokenBatch]> = batches.chunks(chunk).collect();
    let results = par_map(&parts, parts.len(), |_, p| model.loss_and_grads(p));
    let parts: Vec<(f64, usize, Vec<Vec<T>>)> = results.into_iter().collect::<Result<_, _>>()?;
    let total: usize = parts.iter().map(|p| p.1).sum();
    let mut loss = 0.0;
    let mut grads: Vec<Vec<T>> = parts[0].2.iter().map(|g| vec![T::zero(); g.len()]).collect();
    for (l, count, g) in &parts {
        let w = *count as f64 / total as f64;
        loss += w * l;
        let wt = T::cast(w);
        for (acc, gi) in grads.iter_mut().zip(g) {
            acc.iter_mut().zip(gi).for_each(|(a, &b)| *a += wt * b);
        }
    }
    Ok((loss, total, grads))
}

/// Training loop with gradients spread over `threads` threads. Calls
/// `on_step` after every optimizer step. Bitwise reproducible for a fixed
/// seed and thread count; one thread matches the core training loop exactly.
pub fn train_parallel<T: Real>(
    model: Model<T>,
    data: &[TokenBatch],
    cfg: TrainConfig,
    threads: usize,
    mut on_step: impl FnMut(&LossRecord),
) -> Result<(Model<T>, Vec<LossRecord>), ModelError> {
    if data.is_empty() {
        return Err(ModelError::Shape("training needs at least one scene".into()));
    }
    let mut tr = Trainer::new(model, cfg);
    let mut curve = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let rec = if threads <= 1 {
            tr.step(data)?
        } else {
            let picks = tr.next_batch(data.len());
            let batches: Vec<&TokenBatch> = picks.iter().map(|&i| &data[i]).collect();
            let (loss, _, grads) = parallel_loss_and_grads(&tr.model, &batches, threads)?;
            tr.apply(loss, &grads)?
        };
        on_step(&rec);
        curve.push(rec);
    }
    Ok((tr.model, curve))
}
