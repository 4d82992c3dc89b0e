use std::rc::Rc;

use super::layout::{FeatureSource, ModelLayout};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::grad::{RowLists, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub enum FeatureRows {
    /// One row per sample.
    Single(Rc<[usize]>),
    /// Pooled multi-hot rows per sample.
    Multi(Rc<RowLists>),
}

/// Model-ready mini-batch: table rows per feature plus labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub features: Vec<FeatureRows>,
    pub labels: Vec<f64>,
}

fn rows_for(source: FeatureSource, s: &Sample) -> Vec<usize> {
    match source {
        FeatureSource::User => vec![s.user as usize],
        FeatureSource::UserSide(i) => vec![s.user_side.get(i).copied().unwrap_or(0) as usize],
        FeatureSource::History => {
            if s.history.is_empty() {
                vec![0]
            } else {
                s.history.iter().map(|&i| i as usize + 1).collect()
            }
        }
        FeatureSource::Item => vec![s.item as usize],
        FeatureSource::ItemSide(i) => vec![s.item_side.get(i).copied().unwrap_or(0) as usize],
    }
}

impl Batch {
    pub fn from_samples(layout: &ModelLayout, samples: &[&Sample]) -> Result<Batch> {
        let mut features = Vec::with_capacity(layout.features.len());
        for feat in &layout.features {
            let check = |r: usize| -> Result<usize> {
                if r >= feat.vocab {
                    Err(Error::IndexOutOfRange {
                        what: format!("feature {}", feat.name),
                        index: r,
                        size: feat.vocab,
                    })
                } else {
                    Ok(r)
                }
            };
            if feat.source == FeatureSource::History {
                let mut lists = RowLists::new();
                for s in samples {
                    let rows = rows_for(feat.source, s);
                    for &r in &rows {
                        check(r)?;
                    }
                    lists.push(&rows);
                }
                features.push(FeatureRows::Multi(Rc::new(lists)));
            } else {
                let rows = samples
                    .iter()
                    .map(|s| check(rows_for(feat.source, s)[0]))
                    .collect::<Result<Vec<_>>>()?;
                features.push(FeatureRows::Single(rows.into()));
            }
        }
        Ok(Batch {
            features,
            labels: samples.iter().map(|s| f64::from(s.label)).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn for_each_row(&self, f: usize, mut visit: impl FnMut(usize)) {
        match &self.features[f] {
            FeatureRows::Single(rows) => rows.iter().for_each(|&r| visit(r)),
            FeatureRows::Multi(lists) => {
                (0..lists.len()).for_each(|i| lists.get(i).iter().for_each(|&r| visit(r)))
            }
        }
    }

    fn remap(&self, f: usize, local: &[u32]) -> FeatureRows {
        match &self.features[f] {
            FeatureRows::Single(rows) => {
                FeatureRows::Single(rows.iter().map(|&r| local[r] as usize).collect())
            }
            FeatureRows::Multi(lists) => {
                let mut out = RowLists::new();
                let mut buf = Vec::new();
                for i in 0..lists.len() {
                    buf.clear();
                    buf.extend(lists.get(i).iter().map(|&r| local[r] as usize));
                    out.push(&buf);
                }
                FeatureRows::Multi(Rc::new(out))
            }
        }
    }
}

/// A compact slice of the flat parameter vector: the embedding rows some
/// batches reference plus every dense-layer parameter.
///
/// Compact positions are laid out table by table (rows in ascending order)
/// followed by the dense layers in layout order. The batches are rewritten
/// to index the compact tables.
#[derive(Clone, Debug)]
pub struct SubsetPlan {
    coords: Vec<usize>,
    /// `(compact start, row count)` per embedding table.
    tables: Vec<(usize, usize)>,
    mlp_start: usize,
    batches: Vec<Batch>,
}

impl SubsetPlan {
    /// Only the rows referenced by `batches`.
    pub fn touched(layout: &ModelLayout, batches: &[Batch]) -> SubsetPlan {
        Self::build(layout, batches, false)
    }

    /// Every coordinate, in layout order.
    pub fn full(layout: &ModelLayout, batches: &[Batch]) -> SubsetPlan {
        Self::build(layout, batches, true)
    }

    fn build(layout: &ModelLayout, batches: &[Batch], all_rows: bool) -> SubsetPlan {
        let d = layout.embed_dim;
        let mut coords = Vec::new();
        let mut tables = Vec::with_capacity(layout.features.len());
        let mut locals = Vec::with_capacity(layout.features.len());
        for (f, feat) in layout.features.iter().enumerate() {
            let rows: Vec<usize> = if all_rows {
                (0..feat.vocab).collect()
            } else {
                let mut mark = vec![false; feat.vocab];
                for b in batches {
                    b.for_each_row(f, |r| mark[r] = true);
                }
                mark.iter()
                    .enumerate()
                    .filter(|(_, &m)| m)
                    .map(|(r, _)| r)
                    .collect()
            };
            let mut local = vec![u32::MAX; feat.vocab];
            for (i, &r) in rows.iter().enumerate() {
                local[r] = i as u32;
            }
            let offset = layout.table_offset(f);
            tables.push((coords.len(), rows.len()));
            for &r in &rows {
                coords.extend(offset + r * d..offset + (r + 1) * d);
            }
            locals.push(local);
        }
        let mlp_start = coords.len();
        let emb = layout.embedding_params();
        coords.extend(emb..emb + layout.mlp_params());

        let batches = batches
            .iter()
            .map(|b| Batch {
                features: (0..layout.features.len())
                    .map(|f| b.remap(f, &locals[f]))
                    .collect(),
                labels: b.labels.clone(),
            })
            .collect();
        SubsetPlan {
            coords,
            tables,
            mlp_start,
            batches,
        }
    }

    /// Global coordinate of every compact position.
    pub fn coords(&self) -> &[usize] {
        &self.coords
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn batches(&self) -> &[Batch] {
        &self.batches
    }

    pub fn table_range(&self, f: usize) -> (usize, usize) {
        self.tables[f]
    }

    pub fn mlp_start(&self) -> usize {
        self.mlp_start
    }

    /// `theta[coords]` as a `[C, 1]` column.
    pub fn gather(&self, theta: &[f64]) -> Tensor {
        Tensor::column(self.coords.iter().map(|&c| theta[c]).collect())
    }

    /// Adds a compact `[C, 1]` gradient into a full-length buffer.
    pub fn scatter_add(&self, compact: &[f64], full: &mut [f64]) {
        for (&c, &g) in self.coords.iter().zip(compact) {
            full[c] += g;
        }
    }
}
