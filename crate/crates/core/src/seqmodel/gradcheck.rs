use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::Tape;
use crate::error::ModelError;
use crate::params::Grads;
use crate::seqmodel::assembly::ContextAssembly;
use crate::seqmodel::model::Seq2Seq;

#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub coords: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }

    pub fn coords_checked(&self) -> usize {
        self.tensors.iter().map(|t| t.coords).sum()
    }
}

/// `|a - n| / max(|a|, |n|)`, and 0 when both sides are below `1e-8`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-8 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Reverse-mode gradient of the mean per-token NLL.
pub fn analytic_gradients(
    model: &Seq2Seq<f64>,
    a: &ContextAssembly<f64>,
    target: &[u32],
) -> Result<Grads<f64>, ModelError> {
    let mut t = Tape::new(model.params());
    let (loss, n) = model.layout().nll_sum(&mut t, model.config(), a, target)?;
    let mut grads = model.params().zero_grads();
    t.backward_into(loss, &mut grads);
    grads.scale(1.0 / n as f64);
    Ok(grads)
}

/// Compares `grads` with central differences of [`Seq2Seq::sequence_nll`] on up
/// to `coords_per_tensor` seeded coordinates of every tensor.
pub fn check_gradients(
    model: &Seq2Seq<f64>,
    a: &ContextAssembly<f64>,
    target: &[u32],
    grads: &Grads<f64>,
    epsilon: f64,
    coords_per_tensor: usize,
    seed: u64,
) -> Result<GradCheckReport, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = model.clone();
    let mut tensors = Vec::new();
    let ids: Vec<_> = model.params().ids().collect();
    for id in ids {
        let numel = model.params().get(id).len();
        let picks = sample(&mut rng, numel, coords_per_tensor.min(numel));
        let mut worst: f64 = 0.0;
        for k in picks.iter() {
            let orig = model.params().get(id).data()[k];
            probe.params_mut().get_mut(id).data_mut()[k] = orig + epsilon;
            let up = probe.sequence_nll(a, target)?;
            probe.params_mut().get_mut(id).data_mut()[k] = orig - epsilon;
            let down = probe.sequence_nll(a, target)?;
            probe.params_mut().get_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            worst = worst.max(relative_error(grads.get(id).data()[k], numeric));
        }
        tensors.push(TensorCheck { name: model.params().name(id).to_string(), coords: picks.len(), max_rel_error: worst });
    }
    let max_rel_error = tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport { max_rel_error, tensors })
}

/// Analytic versus finite-difference gradients of `sequence_nll`.
pub fn grad_check(
    model: &Seq2Seq<f64>,
    a: &ContextAssembly<f64>,
    target: &[u32],
    epsilon: f64,
    coords_per_tensor: usize,
    seed: u64,
) -> Result<GradCheckReport, ModelError> {
    let grads = analytic_gradients(model, a, target)?;
    check_gradients(model, a, target, &grads, epsilon, coords_per_tensor, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Episode, Turn};
    use crate::seqmodel::assembly::assemble_nv;
    use crate::seqmodel::config::{Mode, ModelConfig};

    fn setup() -> (Seq2Seq<f64>, ContextAssembly<f64>) {
        let ep = Episode {
            id: "g".into(),
            turns: vec![
                Turn { tokens: vec![7, 8], coarse_idx: 0, object_idx: 0 },
                Turn { tokens: vec![9, 10, 11], coarse_idx: 0, object_idx: 0 },
            ],
        };
        let cfg = ModelConfig { enc_layers: 1, dec_layers: 1, ..ModelConfig::tiny(Mode::Nv, 12, 0) };
        let m = Seq2Seq::new(cfg, 5).unwrap();
        let a = assemble_nv(&ep, 1, m.config()).unwrap();
        (m, a)
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1e-9, -5e-9), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn unused_table_has_zero_gradient() {
        let (m, a) = setup();
        let g = analytic_gradients(&m, &a, &[9, 10]).unwrap();
        assert!(g.get(m.layout().img_pos).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn small_model_passes_and_corruption_fails() {
        let (m, a) = setup();
        let target = [9, 10, 11];
        let report = grad_check(&m, &a, &target, 1e-4, 20, 0).unwrap();
        assert!(report.passes(1e-4), "{report:?}");
        let mut g = analytic_gradients(&m, &a, &target).unwrap();
        let w = m.layout().out.w;
        g.get_mut(w).scale(2.0);
        let bad = check_gradients(&m, &a, &target, &g, 1e-4, 20, 0).unwrap();
        assert!(!bad.passes(1e-4));
        assert!(bad.tensors.iter().find(|t| t.name == "out.w").unwrap().max_rel_error > 0.3);
    }
}
