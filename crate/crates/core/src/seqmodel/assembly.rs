//! Encoder input layouts for the three fusion modes.
//!
//! ```text
//! NV:  x_1 [SEP] x_2 [SEP] ... x_j [SEP]
//! CV:  [CLS] x_1 [SEP] ... x_j [SEP] <f_{j+1}> [SEP]      (f_k added to every word of x_k)
//! FV:  [CLS] O_1 ... O_{j+1} [EOI] x_1 [SEP] ... x_j [SEP]
//! ```
//! When a context is too long the oldest turns are dropped whole, together
//! with their images. Turn and image indices are renumbered from 1 over the
//! turns that remain.

use crate::corpus::vocab::{CLS, EOI, PAD, SEP};
use crate::corpus::{CoarseFeatureStore, Episode, ObjectFeatureStore};
use crate::error::ModelError;
use crate::scalar::Scalar;
use crate::seqmodel::config::{Mode, ModelConfig};
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlotContent {
    Token(u32),
    /// Content is a projected row of [`ContextAssembly::visual`]; no word embedding.
    Visual(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Slot {
    pub content: SlotContent,
    /// Sentence-position index; 0 for slots outside any turn.
    pub turn: usize,
    /// Image-position index (FV prefix only).
    pub image: Option<usize>,
    /// Row of [`ContextAssembly::visual`] added on top of the word embedding (CV).
    pub additive: Option<usize>,
    pub padding: bool,
}

impl Slot {
    fn token(id: u32, turn: usize) -> Self {
        Self { content: SlotContent::Token(id), turn, image: None, additive: None, padding: false }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContextAssembly<T> {
    pub mode: Mode,
    pub slots: Vec<Slot>,
    /// Raw visual vectors referenced by the slots, `d_visual` wide.
    pub visual: Matrix<T>,
}

impl<T: Scalar> ContextAssembly<T> {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Word id per slot; `None` for visual-content slots.
    pub fn ids(&self) -> Vec<Option<u32>> {
        self.slots
            .iter()
            .map(|s| match s.content {
                SlotContent::Token(id) => Some(id),
                SlotContent::Visual(_) => None,
            })
            .collect()
    }

    pub fn turn_indices(&self) -> Vec<usize> {
        self.slots.iter().map(|s| s.turn).collect()
    }

    /// Image-position ids of the object slots, in order.
    pub fn object_image_positions(&self) -> Vec<usize> {
        self.slots
            .iter()
            .filter(|s| matches!(s.content, SlotContent::Visual(_)))
            .filter_map(|s| s.image)
            .collect()
    }

    pub fn padding_mask(&self) -> Vec<bool> {
        self.slots.iter().map(|s| s.padding).collect()
    }

    /// Appends `[PAD]` slots up to `len`.
    pub fn pad_to(&mut self, len: usize) {
        while self.slots.len() < len {
            self.slots.push(Slot { padding: true, ..Slot::token(PAD, 0) });
        }
    }
}

fn text_len(turns: &[Vec<u32>]) -> usize {
    turns.iter().map(|t| t.len() + 1).sum()
}

fn check_context(ep: &Episode, j: usize) -> Result<(), ModelError> {
    if j == 0 || j >= ep.turns.len() {
        return Err(ModelError::BadContextIndex { j, turns: ep.turns.len() });
    }
    Ok(())
}

/// First kept turn (0-based) for a context of `j` turns, or `ContextEmpty`.
fn first_kept(j: usize, max_turns: usize, max_len: usize, len_from: impl Fn(usize) -> usize) -> Result<usize, ModelError> {
    (j.saturating_sub(max_turns)..j).find(|&s| len_from(s) <= max_len).ok_or(ModelError::ContextEmpty)
}

fn push_text(slots: &mut Vec<Slot>, turns: &[Vec<u32>], additive_base: Option<usize>) {
    for (i, t) in turns.iter().enumerate() {
        for &w in t {
            slots.push(Slot { additive: additive_base.map(|b| b + i), ..Slot::token(w, i + 1) });
        }
        slots.push(Slot::token(SEP, i + 1));
    }
}

/// Packs arbitrary turns as NV text: `t_1 [SEP] ... t_k [SEP]`.
pub fn assemble_text<T: Scalar>(turns: &[Vec<u32>], cfg: &ModelConfig) -> Result<ContextAssembly<T>, ModelError> {
    let j = turns.len();
    if j == 0 {
        return Err(ModelError::ContextEmpty);
    }
    let s = first_kept(j, cfg.max_turns, cfg.max_src_len, |s| text_len(&turns[s..]))?;
    let mut slots = Vec::new();
    push_text(&mut slots, &turns[s..], None);
    Ok(ContextAssembly { mode: Mode::Nv, slots, visual: Matrix::zeros(0, cfg.d_visual) })
}

pub fn assemble_nv<T: Scalar>(ep: &Episode, j: usize, cfg: &ModelConfig) -> Result<ContextAssembly<T>, ModelError> {
    check_context(ep, j)?;
    let turns: Vec<Vec<u32>> = ep.turns[..j].iter().map(|t| t.tokens.clone()).collect();
    assemble_text(&turns, cfg)
}

pub fn assemble_cv<T: Scalar>(
    ep: &Episode,
    j: usize,
    cfg: &ModelConfig,
    coarse: &CoarseFeatureStore,
) -> Result<ContextAssembly<T>, ModelError> {
    check_context(ep, j)?;
    if coarse.dim() != cfg.d_visual {
        return Err(ModelError::DimMismatch { expected: cfg.d_visual, found: coarse.dim() });
    }
    let turns: Vec<Vec<u32>> = ep.turns[..j].iter().map(|t| t.tokens.clone()).collect();
    let s = first_kept(j, cfg.max_turns, cfg.max_src_len, |s| 3 + text_len(&turns[s..]))?;
    let kept = &turns[s..];
    let mut rows: Vec<f32> = Vec::new();
    for t in &ep.turns[s..=j] {
        rows.extend_from_slice(coarse.row(t.coarse_idx));
    }
    let mut slots = vec![Slot::token(CLS, 0)];
    push_text(&mut slots, kept, Some(0));
    let last = kept.len() + 1;
    slots.push(Slot { content: SlotContent::Visual(kept.len()), ..Slot::token(PAD, last) });
    slots.push(Slot::token(SEP, last));
    let visual = Matrix::from_vec(kept.len() + 1, coarse.dim(), rows.into_iter().map(|v| T::of(v as f64)).collect());
    Ok(ContextAssembly { mode: Mode::Cv, slots, visual })
}

pub fn assemble_fv<T: Scalar>(
    ep: &Episode,
    j: usize,
    cfg: &ModelConfig,
    objects: &ObjectFeatureStore,
) -> Result<ContextAssembly<T>, ModelError> {
    check_context(ep, j)?;
    if objects.dim() != cfg.d_visual {
        return Err(ModelError::DimMismatch { expected: cfg.d_visual, found: objects.dim() });
    }
    let turns: Vec<Vec<u32>> = ep.turns[..j].iter().map(|t| t.tokens.clone()).collect();
    let counts: Vec<usize> = ep.turns[..=j].iter().map(|t| objects.num_objects(t.object_idx)).collect();
    let s = first_kept(j, cfg.max_turns, cfg.max_src_len, |s| {
        2 + counts[s..].iter().sum::<usize>() + text_len(&turns[s..])
    })?;
    let mut slots = vec![Slot { image: Some(0), ..Slot::token(CLS, 0) }];
    let mut rows: Vec<f32> = Vec::new();
    let mut row = 0;
    for (i, t) in ep.turns[s..=j].iter().enumerate() {
        rows.extend_from_slice(objects.objects(t.object_idx));
        for _ in 0..objects.num_objects(t.object_idx) {
            slots.push(Slot { content: SlotContent::Visual(row), image: Some(i + 1), ..Slot::token(PAD, 0) });
            row += 1;
        }
    }
    slots.push(Slot { image: Some(0), ..Slot::token(EOI, 0) });
    push_text(&mut slots, &turns[s..], None);
    let visual = Matrix::from_vec(row, objects.dim(), rows.into_iter().map(|v| T::of(v as f64)).collect());
    Ok(ContextAssembly { mode: Mode::Fv, slots, visual })
}

/// Mode dispatch. The store for the model's mode must be supplied.
pub fn assemble<T: Scalar>(
    ep: &Episode,
    j: usize,
    cfg: &ModelConfig,
    coarse: Option<&CoarseFeatureStore>,
    objects: Option<&ObjectFeatureStore>,
) -> Result<ContextAssembly<T>, ModelError> {
    match cfg.mode {
        Mode::Nv => assemble_nv(ep, j, cfg),
        Mode::Cv => assemble_cv(
            ep,
            j,
            cfg,
            coarse.ok_or_else(|| ModelError::ModeMismatch("CV mode needs coarse features".into()))?,
        ),
        Mode::Fv => assemble_fv(
            ep,
            j,
            cfg,
            objects.ok_or_else(|| ModelError::ModeMismatch("FV mode needs object features".into()))?,
        ),
    }
}

/// Untruncated layout length for a context of turn lengths `turn_lens` (x_1..x_j)
/// and object counts `object_counts` (images 1..j+1, FV only).
pub fn layout_len(mode: Mode, turn_lens: &[usize], object_counts: &[usize]) -> usize {
    let text: usize = turn_lens.iter().map(|n| n + 1).sum();
    match mode {
        Mode::Nv => text,
        Mode::Cv => text + 3,
        Mode::Fv => 2 + object_counts.iter().sum::<usize>() + text,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Turn;

    fn episode(lens: &[usize]) -> Episode {
        Episode {
            id: "e".into(),
            turns: lens
                .iter()
                .enumerate()
                .map(|(i, &n)| Turn { tokens: (0..n).map(|k| 7 + k as u32).collect(), coarse_idx: i, object_idx: i })
                .collect(),
        }
    }

    fn cfg(mode: Mode, d_visual: usize) -> ModelConfig {
        ModelConfig::tiny(mode, 30, d_visual)
    }

    #[test]
    fn nv_layout_and_truncation() {
        let ep = episode(&[3, 2, 4]);
        let a: ContextAssembly<f64> = assemble_nv(&ep, 2, &cfg(Mode::Nv, 0)).unwrap();
        assert_eq!(a.len(), 7);
        assert_eq!(a.turn_indices(), vec![1, 1, 1, 1, 2, 2, 2]);
        assert_eq!(a.ids()[3], Some(SEP));

        let a: ContextAssembly<f64> = assemble_nv(&episode(&[4, 1]), 1, &cfg(Mode::Nv, 0)).unwrap();
        assert_eq!(a.len(), 5);
        assert!(a.turn_indices().iter().all(|&t| t == 1));

        let short = ModelConfig { max_src_len: 8, ..cfg(Mode::Nv, 0) };
        let ep = episode(&[3, 5, 1]);
        let a: ContextAssembly<f64> = assemble_nv(&ep, 2, &short).unwrap();
        assert_eq!(a.len(), 6);
        assert_eq!(a.turn_indices(), vec![1; 6]);

        let tiny = ModelConfig { max_src_len: 8, ..cfg(Mode::Nv, 0) };
        let err = assemble_nv::<f64>(&episode(&[9, 1]), 1, &tiny).unwrap_err();
        assert!(matches!(err, ModelError::ContextEmpty));
    }

    #[test]
    fn nv_drops_oldest_turn_to_fit() {
        // Layout validation would reject max_src_len < 8; assembly itself does not care.
        let c = ModelConfig { max_src_len: 6, ..cfg(Mode::Nv, 0) };
        let a: ContextAssembly<f64> = assemble_nv(&episode(&[3, 2, 1]), 2, &c).unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(a.ids(), vec![Some(7), Some(8), Some(SEP)]);
    }

    #[test]
    fn cv_layout() {
        let ep = episode(&[3, 2, 4]);
        let store = CoarseFeatureStore::new(4, (0..12).map(|v| v as f32).collect()).unwrap();
        let a: ContextAssembly<f64> = assemble_cv(&ep, 2, &cfg(Mode::Cv, 4), &store).unwrap();
        assert_eq!(a.len(), 10);
        assert_eq!(a.ids()[0], Some(CLS));
        assert_eq!(a.ids()[8], None);
        assert_eq!(a.slots[8].content, SlotContent::Visual(2));
        assert_eq!(a.visual.row(2), store.row(2).iter().map(|&v| v as f64).collect::<Vec<_>>().as_slice());
        assert_eq!(a.slots[1].additive, Some(0));
        assert_eq!(a.slots[5].additive, Some(1));
        assert_eq!(a.slots[4].additive, None, "separators carry no image");

        let err = assemble_cv::<f64>(&ep, 2, &cfg(Mode::Cv, 8), &store).unwrap_err();
        assert!(matches!(err, ModelError::DimMismatch { expected: 8, found: 4 }));
    }

    #[test]
    fn fv_layout() {
        let ep = episode(&[3, 2, 4]);
        let store = ObjectFeatureStore::new(2, &[vec![0.0; 4], vec![1.0; 2], vec![2.0; 4]]).unwrap();
        let a: ContextAssembly<f64> = assemble_fv(&ep, 2, &cfg(Mode::Fv, 2), &store).unwrap();
        assert_eq!(a.len(), 14);
        assert_eq!(a.object_image_positions(), vec![1, 1, 2, 3, 3]);
        assert_eq!(a.ids()[6], Some(EOI));
        assert_eq!(a.visual.rows(), 5);

        let ep = episode(&[3, 1]);
        let store = ObjectFeatureStore::new(2, &[vec![0.0; 2], vec![1.0; 2]]).unwrap();
        let a: ContextAssembly<f64> = assemble_fv(&ep, 1, &cfg(Mode::Fv, 2), &store).unwrap();
        assert_eq!(a.len(), 1 + 2 + 1 + 3 + 1);
    }

    #[test]
    fn padding_marks_tail() {
        let mut a: ContextAssembly<f32> = assemble_nv(&episode(&[2, 2]), 1, &cfg(Mode::Nv, 0)).unwrap();
        a.pad_to(6);
        assert_eq!(a.padding_mask(), vec![false, false, false, true, true, true]);
    }
}
