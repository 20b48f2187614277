//! Mini-batch training loop shared by every trainable network.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::error::TrainError;
use crate::optim::{Adam, OptimConfig};
use crate::params::ParamStore;
use crate::scalar::Scalar;

/// Runs `optim.max_steps` Adam steps over examples `0..n_examples`.
///
/// `loss_fn(tape, i, batch)` returns the summed loss of example `i` (a member of
/// `batch`) and the number of terms in that sum; each batch minimises the mean over all terms. Examples
/// are visited in a seeded permutation that is redrawn every epoch. Returns the
/// mean loss of every step.
pub fn run_training<T, F>(
    params: &mut ParamStore<T>,
    n_examples: usize,
    optim: &OptimConfig,
    dropout: f64,
    mut loss_fn: F,
) -> Result<Vec<f64>, TrainError>
where
    T: Scalar,
    F: FnMut(&mut Tape<'_, T>, usize, &[usize]) -> Result<(Var, usize), TrainError>,
{
    if n_examples == 0 {
        return Err(TrainError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(optim.seed);
    let mut adam = Adam::new(optim.clone(), params);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut curve = Vec::with_capacity(optim.max_steps);
    let batch = optim.batch_size.max(1);
    for step in 1..=optim.max_steps {
        let mut grads = params.zero_grads();
        let (mut total, mut count) = (0.0, 0usize);
        let mut members = Vec::with_capacity(batch);
        for _ in 0..batch {
            if cursor == order.len() {
                order = (0..n_examples).collect();
                order.shuffle(&mut rng);
                cursor = 0;
            }
            members.push(order[cursor]);
            cursor += 1;
        }
        for &i in &members {
            let mut tape = if dropout > 0.0 {
                use rand::Rng;
                Tape::training(params, dropout, rng.gen())
            } else {
                Tape::new(params)
            };
            let (loss, n) = loss_fn(&mut tape, i, &members)?;
            total += tape.scalar(loss).as_f64();
            count += n;
            tape.backward_into(loss, &mut grads);
        }
        let mean = total / count.max(1) as f64;
        if !mean.is_finite() {
            return Err(TrainError::NonFiniteLoss { step });
        }
        grads.scale(T::of(1.0 / count.max(1) as f64));
        adam.step(params, &mut grads);
        curve.push(mean);
    }
    Ok(curve)
}
