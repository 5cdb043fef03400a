//! Flat parameter storage with named matrix entries.

use std::fmt;

use ndarray::{Array2, ArrayView2, ArrayViewMut2};
use serde::{Deserialize, Serialize};

/// Coarse parameter categories used for reporting and gradient checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Embeddings,
    EncoderAttention,
    EncoderFfn,
    EncoderNorm,
    AnnotatorTable,
    AnnotatorProjection,
    FeatureAttention,
    FeatureFfn,
    FeatureNorm,
    Head,
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParamGroup::Embeddings => "embeddings",
            ParamGroup::EncoderAttention => "encoder_attention",
            ParamGroup::EncoderFfn => "encoder_ffn",
            ParamGroup::EncoderNorm => "encoder_norm",
            ParamGroup::AnnotatorTable => "annotator_table",
            ParamGroup::AnnotatorProjection => "annotator_projection",
            ParamGroup::FeatureAttention => "feature_attention",
            ParamGroup::FeatureFfn => "feature_ffn",
            ParamGroup::FeatureNorm => "feature_norm",
            ParamGroup::Head => "head",
        })
    }
}

/// Index of an entry in a [`ParamStore`].
pub type ParamId = usize;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub group: ParamGroup,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub trainable: bool,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    values: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    /// Appends a `rows x cols` matrix filled row-major by `init`.
    pub fn add(
        &mut self,
        name: impl Into<String>,
        group: ParamGroup,
        rows: usize,
        cols: usize,
        mut init: impl FnMut() -> f64,
    ) -> ParamId {
        let offset = self.values.len();
        self.values.extend((0..rows * cols).map(|_| init()));
        self.entries.push(ParamEntry {
            name: name.into(),
            group,
            offset,
            rows,
            cols,
            trainable: true,
        });
        self.entries.len() - 1
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.entries[id].trainable = trainable;
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn view(&self, id: ParamId) -> ArrayView2<'_, f64> {
        let e = &self.entries[id];
        ArrayView2::from_shape((e.rows, e.cols), &self.values[e.range()]).expect("entry shape")
    }

    pub fn view_mut(&mut self, id: ParamId) -> ArrayViewMut2<'_, f64> {
        let e = &self.entries[id];
        ArrayViewMut2::from_shape((e.rows, e.cols), &mut self.values[e.range()]).expect("entry shape")
    }

    pub fn to_array(&self, id: ParamId) -> Array2<f64> {
        self.view(id).to_owned()
    }

    /// A zeroed gradient buffer with this store's layout.
    pub fn zeros_like(&self) -> Gradients {
        Gradients {
            values: vec![0.0; self.values.len()],
        }
    }

    /// Element mask of trainable coordinates.
    pub fn trainable_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.values.len()];
        for e in &self.entries {
            mask[e.range()].fill(e.trainable);
        }
        mask
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Gradient buffer laid out like its [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub values: Vec<f64>,
}

impl Gradients {
    pub fn view(&self, store: &ParamStore, id: ParamId) -> ArrayView2<'_, f64> {
        let e = store.entry(id);
        ArrayView2::from_shape((e.rows, e.cols), &self.values[e.range()]).expect("entry shape")
    }

    pub fn view_mut(&mut self, store: &ParamStore, id: ParamId) -> ArrayViewMut2<'_, f64> {
        let e = store.entry(id);
        ArrayViewMut2::from_shape((e.rows, e.cols), &mut self.values[e.range()]).expect("entry shape")
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_views() {
        let mut s = ParamStore::new();
        let mut c = 0.0;
        let a = s.add("a", ParamGroup::Head, 2, 3, || {
            c += 1.0;
            c
        });
        let b = s.add("b", ParamGroup::Head, 1, 2, || 0.5);
        assert_eq!(s.len(), 8);
        assert_eq!(s.view(a)[[1, 0]], 4.0);
        assert_eq!(s.entry(b).offset, 6);
        s.view_mut(b)[[0, 1]] = 7.0;
        assert_eq!(s.values()[7], 7.0);
        s.set_trainable(a, false);
        let mask = s.trainable_mask();
        assert_eq!(mask, vec![false, false, false, false, false, false, true, true]);
        assert_eq!(s.find("b"), Some(b));
        let mut g = s.zeros_like();
        g.view_mut(&s, a)[[0, 2]] = 3.0;
        assert_eq!(g.values[2], 3.0);
        assert_eq!(g.norm(), 3.0);
    }
}
