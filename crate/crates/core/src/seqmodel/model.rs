use std::sync::Arc;

use crate::autograd::{Tape, Var};
use crate::corpus::vocab::{is_special, BOS, EOS};
use crate::error::ModelError;
use crate::nn::{AttnMask, DecoderBlock, EncoderBlock, LayerNorm, Linear};
use crate::params::{Init, Initializer, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::seqmodel::assembly::{ContextAssembly, SlotContent};
use crate::seqmodel::config::ModelConfig;
use crate::tensor::Matrix;

/// Parameter handles of an encoder-decoder network; values live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Layout {
    pub tok_emb: ParamId,
    pub enc_pos: ParamId,
    pub sent_emb: ParamId,
    pub img_pos: ParamId,
    pub vis_proj: ParamId,
    pub dec_pos: ParamId,
    pub enc: Vec<EncoderBlock>,
    pub dec: Vec<DecoderBlock>,
    pub ln_f: LayerNorm,
    pub out: Linear,
}

impl Layout {
    pub fn build<T: Scalar>(cfg: &ModelConfig, store: &mut ParamStore<T>, seed: u64) -> Self {
        let d = cfg.d_model;
        let emb = 1.0 / (d as f64).sqrt();
        let mut init = Initializer::new(store, seed);
        let tok_emb = init.add("tok_emb", cfg.vocab_size, d, Init::Normal(emb));
        let enc_pos = init.add("enc_pos", cfg.max_src_len, d, Init::Normal(emb));
        let sent_emb = init.add("sent_emb", cfg.max_turns + 2, d, Init::Normal(emb));
        let img_pos = init.add("img_pos", cfg.max_turns + 2, d, Init::Normal(emb));
        let vis_proj =
            init.add("vis_proj", cfg.d_visual, d, Init::Normal(1.0 / (cfg.d_visual.max(1) as f64).sqrt()));
        let dec_pos = init.add("dec_pos", cfg.max_tgt_len + 1, d, Init::Normal(emb));
        let enc = (0..cfg.enc_layers)
            .map(|l| EncoderBlock::new(&mut init, &format!("enc.{l}"), d, cfg.heads, cfg.ffn_dim))
            .collect();
        let dec = (0..cfg.dec_layers)
            .map(|l| DecoderBlock::new(&mut init, &format!("dec.{l}"), d, cfg.heads, cfg.ffn_dim))
            .collect();
        let ln_f = LayerNorm::new(&mut init, "dec.ln_f", d);
        let out = Linear::new(&mut init, "out", d, cfg.vocab_size, 0.02);
        Self { tok_emb, enc_pos, sent_emb, img_pos, vis_proj, dec_pos, enc, dec, ln_f, out }
    }

    fn check_assembly<T: Scalar>(&self, cfg: &ModelConfig, a: &ContextAssembly<T>) -> Result<(), ModelError> {
        if a.mode != cfg.mode {
            return Err(ModelError::ModeMismatch(format!("{} assembly fed to a {} model", a.mode, cfg.mode)));
        }
        if a.is_empty() {
            return Err(ModelError::ContextEmpty);
        }
        if a.len() > cfg.max_src_len {
            return Err(ModelError::InvalidConfig(format!("assembly of {} exceeds max_src_len", a.len())));
        }
        if a.visual.rows() > 0 && a.visual.cols() != cfg.d_visual {
            return Err(ModelError::DimMismatch { expected: cfg.d_visual, found: a.visual.cols() });
        }
        for s in &a.slots {
            if let SlotContent::Token(id) = s.content {
                if id as usize >= cfg.vocab_size {
                    return Err(ModelError::TokenOutOfRange(id));
                }
            }
            if s.turn > cfg.max_turns + 1 || s.image.is_some_and(|i| i > cfg.max_turns + 1) {
                return Err(ModelError::InvalidConfig("turn index exceeds max_turns".into()));
            }
        }
        Ok(())
    }

    /// Encoder states, one row per assembly slot.
    pub fn encode<T: Scalar>(&self, t: &mut Tape<'_, T>, cfg: &ModelConfig, a: &ContextAssembly<T>) -> Result<Var, ModelError> {
        self.check_assembly(cfg, a)?;
        let n = a.len();
        let tok_table = t.param(self.tok_emb);
        let ids: Vec<Option<usize>> = a.ids().into_iter().map(|i| i.map(|v| v as usize)).collect();
        let mut x = t.gather(tok_table, Arc::new(ids));
        let pos = t.param(self.enc_pos);
        let pos = t.gather_rows(pos, &(0..n).collect::<Vec<_>>());
        x = t.add(x, pos);
        let sent = t.param(self.sent_emb);
        let sent = t.gather_rows(sent, &a.turn_indices());
        x = t.add(x, sent);
        if a.slots.iter().any(|s| s.image.is_some()) {
            let img = t.param(self.img_pos);
            let img = t.gather(img, Arc::new(a.slots.iter().map(|s| s.image).collect()));
            x = t.add(x, img);
        }
        if a.visual.rows() > 0 {
            let raw = t.constant(a.visual.clone());
            let w = t.param(self.vis_proj);
            let proj = t.matmul(raw, w);
            let content: Vec<Option<usize>> = a
                .slots
                .iter()
                .map(|s| match s.content {
                    SlotContent::Visual(r) => Some(r),
                    SlotContent::Token(_) => None,
                })
                .collect();
            if content.iter().any(Option::is_some) {
                let c = t.gather(proj, Arc::new(content));
                x = t.add(x, c);
            }
            let additive: Vec<Option<usize>> = a.slots.iter().map(|s| s.additive).collect();
            if additive.iter().any(Option::is_some) {
                let add = t.gather(proj, Arc::new(additive));
                x = t.add(x, add);
            }
        }
        x = t.dropout(x);
        let mask = AttnMask::keys(n, &a.padding_mask());
        for block in &self.enc {
            x = block.forward(t, x, &mask);
        }
        Ok(x)
    }

    /// Decoder logits for every position of `inputs` (which start with `[BOS]`).
    pub fn decode<T: Scalar>(
        &self,
        t: &mut Tape<'_, T>,
        cfg: &ModelConfig,
        memory: Var,
        memory_padding: &[bool],
        inputs: &[u32],
    ) -> Result<Var, ModelError> {
        let m = inputs.len();
        if m > cfg.max_tgt_len + 1 {
            return Err(ModelError::InvalidConfig(format!("decoder input of {m} exceeds max_tgt_len + 1")));
        }
        if let Some(&bad) = inputs.iter().find(|&&id| id as usize >= cfg.vocab_size) {
            return Err(ModelError::TokenOutOfRange(bad));
        }
        let tok_table = t.param(self.tok_emb);
        let mut y = t.gather_rows(tok_table, &inputs.iter().map(|&i| i as usize).collect::<Vec<_>>());
        let pos = t.param(self.dec_pos);
        let pos = t.gather_rows(pos, &(0..m).collect::<Vec<_>>());
        y = t.add(y, pos);
        y = t.dropout(y);
        let self_mask = AttnMask::causal(m);
        let cross_mask = AttnMask::keys(m, memory_padding);
        for block in &self.dec {
            y = block.forward(t, y, memory, &self_mask, &cross_mask);
        }
        let y = self.ln_f.forward(t, y);
        Ok(self.out.forward(t, y))
    }

    /// Teacher-forced summed NLL of `target ⧺ [EOS]` and the number of predicted tokens.
    pub fn nll_sum<T: Scalar>(
        &self,
        t: &mut Tape<'_, T>,
        cfg: &ModelConfig,
        a: &ContextAssembly<T>,
        target: &[u32],
    ) -> Result<(Var, usize), ModelError> {
        let (inputs, targets) = teacher_forcing(cfg, target)?;
        let memory = self.encode(t, cfg, a)?;
        let logits = self.decode(t, cfg, memory, &a.padding_mask(), &inputs)?;
        let n = targets.len();
        Ok((t.cross_entropy_sum(logits, Arc::new(targets)), n))
    }
}

/// Decoder inputs `[BOS] ⧺ target` and outputs `target ⧺ [EOS]`; targets
/// longer than `max_tgt_len` are cut.
pub fn teacher_forcing(cfg: &ModelConfig, target: &[u32]) -> Result<(Vec<u32>, Vec<usize>), ModelError> {
    if target.is_empty() {
        return Err(ModelError::EmptyTarget);
    }
    let target = &target[..target.len().min(cfg.max_tgt_len)];
    let mut inputs = Vec::with_capacity(target.len() + 1);
    inputs.push(BOS);
    inputs.extend_from_slice(target);
    let mut outputs: Vec<usize> = target.iter().map(|&v| v as usize).collect();
    outputs.push(EOS as usize);
    Ok((inputs, outputs))
}

pub(crate) fn log_softmax<T: Scalar>(row: &[T]) -> Vec<T> {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
    row.iter().map(|&v| v - lse).collect()
}

/// Output of the encoder, one `d_model` row per input slot.
#[derive(Clone, Debug, PartialEq)]
pub struct TextEncoding<T> {
    pub states: Matrix<T>,
    pub padding: Vec<bool>,
}

/// Encoder-decoder dialog model in one of the three fusion modes.
#[derive(Clone, Debug)]
pub struct Seq2Seq<T: Scalar> {
    cfg: ModelConfig,
    params: ParamStore<T>,
    layout: Layout,
}

impl<T: Scalar> Seq2Seq<T> {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let layout = Layout::build(&cfg, &mut params, seed);
        Ok(Self { cfg, params, layout })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub(crate) fn parts_mut(&mut self) -> (&ModelConfig, &Layout, &mut ParamStore<T>) {
        (&self.cfg, &self.layout, &mut self.params)
    }

    /// Same network in another precision.
    pub fn cast<U: Scalar>(&self) -> Seq2Seq<U> {
        Seq2Seq { cfg: self.cfg.clone(), params: self.params.cast(), layout: self.layout.clone() }
    }

    pub fn encode(&self, a: &ContextAssembly<T>) -> Result<TextEncoding<T>, ModelError> {
        let mut t = Tape::new(&self.params);
        let v = self.layout.encode(&mut t, &self.cfg, a)?;
        Ok(TextEncoding { states: t.value(v).clone(), padding: a.padding_mask() })
    }

    /// Mean per-token negative log-likelihood (natural log) of `target ⧺ [EOS]`.
    pub fn sequence_nll(&self, a: &ContextAssembly<T>, target: &[u32]) -> Result<T, ModelError> {
        let mut t = Tape::new(&self.params);
        let (loss, n) = self.layout.nll_sum(&mut t, &self.cfg, a, target)?;
        Ok(t.scalar(loss) / T::of(n as f64))
    }

    /// Decoder logits for explicit decoder inputs.
    pub fn logits(&self, a: &ContextAssembly<T>, inputs: &[u32]) -> Result<Matrix<T>, ModelError> {
        let enc = self.encode(a)?;
        self.logits_from(&enc, inputs)
    }

    pub fn logits_from(&self, enc: &TextEncoding<T>, inputs: &[u32]) -> Result<Matrix<T>, ModelError> {
        let mut t = Tape::new(&self.params);
        let memory = t.constant(enc.states.clone());
        let v = self.layout.decode(&mut t, &self.cfg, memory, &enc.padding, inputs)?;
        Ok(t.value(v).clone())
    }

    /// Log-probability of each token of `target ⧺ [EOS]` under teacher forcing.
    pub fn token_logprobs(&self, a: &ContextAssembly<T>, target: &[u32]) -> Result<Vec<T>, ModelError> {
        let (inputs, outputs) = teacher_forcing(&self.cfg, target)?;
        let logits = self.logits(a, &inputs)?;
        Ok(outputs.iter().enumerate().map(|(r, &tok)| log_softmax(logits.row(r))[tok]).collect())
    }

    /// Teacher-forced argmax prediction at every position of `target ⧺ [EOS]`.
    pub fn predict_next(&self, a: &ContextAssembly<T>, target: &[u32]) -> Result<Vec<u32>, ModelError> {
        let (inputs, _) = teacher_forcing(&self.cfg, target)?;
        let logits = self.logits(a, &inputs)?;
        Ok((0..logits.rows())
            .map(|r| {
                let row = logits.row(r);
                (0..row.len()).fold(0, |b, k| if row[k] > row[b] { k } else { b }) as u32
            })
            .collect())
    }

    /// Log-distribution over the next token after `prefix` (which excludes `[BOS]`).
    pub fn next_logprobs(&self, enc: &TextEncoding<T>, prefix: &[u32]) -> Result<Vec<T>, ModelError> {
        let mut inputs = Vec::with_capacity(prefix.len() + 1);
        inputs.push(BOS);
        inputs.extend_from_slice(prefix);
        let logits = self.logits_from(enc, &inputs)?;
        Ok(log_softmax(logits.row(logits.rows() - 1)))
    }

    /// Tokens a decoder may emit: every non-special id plus `[EOS]`.
    pub fn emittable(&self) -> impl Iterator<Item = u32> + '_ {
        (0..self.cfg.vocab_size as u32).filter(|&id| !is_special(id) || id == EOS)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Episode, Turn};
    use crate::seqmodel::assembly::assemble_nv;
    use crate::seqmodel::config::Mode;

    fn episode() -> Episode {
        Episode {
            id: "e".into(),
            turns: vec![
                Turn { tokens: vec![7, 8, 9], coarse_idx: 0, object_idx: 0 },
                Turn { tokens: vec![10, 11], coarse_idx: 1, object_idx: 1 },
                Turn { tokens: vec![12], coarse_idx: 2, object_idx: 2 },
            ],
        }
    }

    fn tiny_nv(vocab: usize) -> Seq2Seq<f64> {
        Seq2Seq::new(ModelConfig::tiny(Mode::Nv, vocab, 0), 1).unwrap()
    }

    fn zero_out_projection(m: &mut Seq2Seq<f64>) {
        let (w, b) = (m.layout().out.w, m.layout().out.b);
        m.params_mut().get_mut(w).fill(0.0);
        m.params_mut().get_mut(b).fill(0.0);
    }

    #[test]
    fn uniform_logits_give_log_vocab() {
        let mut m = tiny_nv(100);
        zero_out_projection(&mut m);
        let a = assemble_nv(&episode(), 2, m.config()).unwrap();
        let nll = m.sequence_nll(&a, &[12, 13, 14]).unwrap();
        assert!((nll - 100f64.ln()).abs() < 1e-12);
        assert!((100f64.ln() - 4.6052).abs() < 1e-4);
    }

    #[test]
    fn certain_prediction_costs_nothing() {
        let mut m = tiny_nv(20);
        zero_out_projection(&mut m);
        let b = m.layout().out.b;
        m.params_mut().get_mut(b).data_mut()[EOS as usize] = 1e4;
        let a = assemble_nv(&episode(), 1, m.config()).unwrap();
        let lp = m.token_logprobs(&a, &[9]).unwrap();
        assert_eq!(lp[1], 0.0, "the [EOS] position is certain");
        assert!(m.sequence_nll(&a, &[9]).unwrap() >= 0.0);
    }

    #[test]
    fn empty_target_is_rejected() {
        let m = tiny_nv(20);
        let a = assemble_nv(&episode(), 1, m.config()).unwrap();
        assert!(matches!(m.sequence_nll(&a, &[]), Err(ModelError::EmptyTarget)));
    }

    #[test]
    fn encoding_is_deterministic() {
        let m = tiny_nv(20);
        let a = assemble_nv(&episode(), 2, m.config()).unwrap();
        assert_eq!(m.encode(&a).unwrap(), m.encode(&a).unwrap());
    }

    #[test]
    fn padding_tail_does_not_leak() {
        let m = tiny_nv(20);
        let a = assemble_nv(&episode(), 2, m.config()).unwrap();
        let base = m.encode(&a).unwrap();
        let mut padded = a.clone();
        padded.pad_to(a.len() + 4);
        let mut shuffled = padded.clone();
        for (k, s) in shuffled.slots[a.len()..].iter_mut().enumerate() {
            s.turn = 3 - k % 3;
            s.content = SlotContent::Token(13 + k as u32);
        }
        for p in [padded, shuffled] {
            let enc = m.encode(&p).unwrap();
            for r in 0..a.len() {
                for (x, y) in enc.states.row(r).iter().zip(base.states.row(r)) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    /// Hand trace: with every non-embedding tensor at zero each block adds
    /// nothing to the residual stream, so the encoder returns the input sum.
    #[test]
    fn zero_blocks_pass_embeddings_through() {
        let mut m = tiny_nv(20);
        let keep = ["tok_emb", "enc_pos", "sent_emb", "img_pos", "dec_pos"];
        let ids: Vec<_> = m.params().iter().filter(|(_, n, _)| !keep.contains(n)).map(|(id, _, _)| id).collect();
        for id in ids {
            m.params_mut().get_mut(id).fill(0.0);
        }
        let a = assemble_nv(&episode(), 2, m.config()).unwrap();
        let enc = m.encode(&a).unwrap();
        let p = m.params();
        let (tok, pos, sent) = (p.get(m.layout().tok_emb), p.get(m.layout().enc_pos), p.get(m.layout().sent_emb));
        for (r, slot) in a.slots.iter().enumerate() {
            let SlotContent::Token(id) = slot.content else { unreachable!() };
            for c in 0..m.config().d_model {
                let expect = tok.get(id as usize, c) + pos.get(r, c) + sent.get(slot.turn, c);
                assert!((enc.states.get(r, c) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mode_mismatch_is_caught() {
        let m: Seq2Seq<f64> = Seq2Seq::new(ModelConfig::tiny(Mode::Cv, 20, 4), 1).unwrap();
        let a = assemble_nv(&episode(), 1, m.config()).unwrap();
        assert!(matches!(m.encode(&a), Err(ModelError::ModeMismatch(_))));
    }

    #[test]
    fn precisions_share_initialisation() {
        let m64 = tiny_nv(20);
        let m32: Seq2Seq<f32> = Seq2Seq::new(ModelConfig::tiny(Mode::Nv, 20, 0), 1).unwrap();
        let a64 = assemble_nv(&episode(), 2, m64.config()).unwrap();
        let a32 = assemble_nv(&episode(), 2, m32.config()).unwrap();
        let (l64, l32) = (m64.sequence_nll(&a64, &[12]).unwrap(), m32.sequence_nll(&a32, &[12]).unwrap());
        assert!((l64 - l32 as f64).abs() < 1e-4);
    }
}
