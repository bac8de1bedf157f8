//! Embedding datasets, episodic task sampling and task mixup.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::numerics::{tensor, Tensor};
use crate::rng::{self, Rng};

/// One image with its embedding and labels; the mask lives in the dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub image_id: u64,
    pub embedding: Vec<f64>,
    pub class_label: u16,
    pub domain_id: u16,
    /// Index into the owning dataset's mask store.
    pub mask_id: usize,
}

/// An immutable collection of records sharing one embedding width and mask geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    d: usize,
    mask_h: usize,
    mask_w: usize,
    records: Vec<EmbeddingRecord>,
    masks: Vec<Mask>,
    heldout_labels: BTreeSet<u16>,
    by_id: BTreeMap<u64, usize>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        d: usize,
        (mask_h, mask_w): (usize, usize),
        records: Vec<EmbeddingRecord>,
        masks: Vec<Mask>,
    ) -> Result<Self> {
        if d == 0 || mask_h == 0 || mask_w == 0 {
            return Err(Error::invalid("dataset dimensions must be positive"));
        }
        let mut by_id = BTreeMap::new();
        for (pos, r) in records.iter().enumerate() {
            if r.embedding.len() != d {
                return Err(Error::shape(alloc::format!(
                    "record {} has dimension {}, dataset declares {d}",
                    r.image_id,
                    r.embedding.len()
                )));
            }
            let n = tensor::norm(&r.embedding);
            if !(n > 0.0 && n.is_finite()) {
                return Err(Error::ZeroNorm(pos));
            }
            let m = masks.get(r.mask_id).ok_or_else(|| {
                Error::invalid(alloc::format!("record {} points at missing mask {}", r.image_id, r.mask_id))
            })?;
            if (m.h(), m.w()) != (mask_h, mask_w) {
                return Err(Error::Geometry(m.h(), m.w(), mask_h, mask_w));
            }
            if by_id.insert(r.image_id, pos).is_some() {
                return Err(Error::DuplicateId(r.image_id));
            }
        }
        Ok(Dataset { name: name.into(), d, mask_h, mask_w, records, masks, heldout_labels: BTreeSet::new(), by_id })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn mask_geometry(&self) -> (usize, usize) {
        (self.mask_h, self.mask_w)
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn mask(&self, mask_id: usize) -> &Mask {
        &self.masks[mask_id]
    }

    pub fn heldout_labels(&self) -> &BTreeSet<u16> {
        &self.heldout_labels
    }

    pub fn labels(&self) -> BTreeSet<u16> {
        self.records.iter().map(|r| r.class_label).collect()
    }

    pub fn record(&self, image_id: u64) -> Result<&EmbeddingRecord> {
        self.by_id.get(&image_id).map(|&p| &self.records[p]).ok_or(Error::UnknownId(image_id))
    }

    /// A new dataset holding the records at `positions`, in that order.
    pub fn subset(&self, name: impl Into<String>, positions: impl IntoIterator<Item = usize>) -> Result<Dataset> {
        let mut records = Vec::new();
        let mut masks = Vec::new();
        for p in positions {
            let r = self.records.get(p).ok_or_else(|| Error::invalid(alloc::format!("record position {p}")))?;
            masks.push(self.masks[r.mask_id].clone());
            records.push(EmbeddingRecord { mask_id: masks.len() - 1, ..r.clone() });
        }
        let mut ds = Dataset::new(name, self.d, (self.mask_h, self.mask_w), records, masks)?;
        let labels = ds.labels();
        ds.heldout_labels = self.heldout_labels.intersection(&labels).copied().collect();
        Ok(ds)
    }

    /// Resolves a record into a self-contained [`Item`].
    pub fn item(&self, image_id: u64) -> Result<Item> {
        let r = self.record(image_id)?;
        Ok(Item {
            image_id,
            embedding: r.embedding.clone(),
            class_label: r.class_label,
            domain_id: r.domain_id,
            mask: self.masks[r.mask_id].clone(),
        })
    }

    pub fn materialize(&self, task: &MetaTask) -> Result<Episode> {
        let support = task.support_ids.iter().map(|&id| self.item(id)).collect::<Result<_>>()?;
        let query = task.query.iter().map(|&(id, _)| self.item(id)).collect::<Result<_>>()?;
        Ok(Episode { support, query })
    }
}

/// Marks `labels` as held out. Records are untouched.
pub fn split_heldout(ds: &Dataset, labels: &BTreeSet<u16>) -> Result<Dataset> {
    let present = ds.labels();
    if let Some(&bad) = labels.iter().find(|l| !present.contains(l)) {
        return Err(Error::UnknownLabel(bad));
    }
    let mut out = ds.clone();
    out.heldout_labels = labels.clone();
    Ok(out)
}

/// One episode by reference: a support pool and a labeled query set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaTask {
    pub support_ids: Vec<u64>,
    /// `(image_id, mask_id)` pairs.
    pub query: Vec<(u64, usize)>,
}

/// Which label pool a task is drawn from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Phase {
    /// Non-held-out labels only.
    Train,
    /// A mix where `heldout_fraction` of the `n + m` records carry held-out labels.
    Validation { heldout_fraction: f64 },
}

/// Draws `n + m` distinct records uniformly from the phase's eligible pool;
/// the first `n` form the support pool, the rest the query set.
pub fn sample_meta_task(ds: &Dataset, n: usize, m: usize, phase: Phase, rng: &mut Rng) -> Result<MetaTask> {
    if n == 0 || m == 0 {
        return Err(Error::invalid("task sizes must be positive"));
    }
    let total = n + m;
    let (seen, held): (Vec<usize>, Vec<usize>) =
        (0..ds.records.len()).partition(|&p| !ds.heldout_labels.contains(&ds.records[p].class_label));
    let picks = match phase {
        Phase::Train => draw(&seen, total, rng)?,
        Phase::Validation { .. } if held.is_empty() || seen.is_empty() => {
            let all: Vec<usize> = (0..ds.records.len()).collect();
            draw(&all, total, rng)?
        }
        Phase::Validation { heldout_fraction } => {
            if !(0.0..=1.0).contains(&heldout_fraction) {
                return Err(Error::invalid("heldout_fraction must lie in [0, 1]"));
            }
            let n_held = libm::round(heldout_fraction * total as f64) as usize;
            let mut picks = draw(&held, n_held, rng)?;
            picks.extend(draw(&seen, total - n_held, rng)?);
            rng::shuffle(rng, &mut picks);
            picks
        }
    };
    let support_ids = picks[..n].iter().map(|&p| ds.records[p].image_id).collect();
    let query = picks[n..].iter().map(|&p| (ds.records[p].image_id, ds.records[p].mask_id)).collect();
    Ok(MetaTask { support_ids, query })
}

fn draw(pool: &[usize], k: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if pool.len() < k {
        return Err(Error::Insufficient { needed: k, available: pool.len() });
    }
    Ok(rng::sample_indices(rng, pool.len(), k).into_iter().map(|i| pool[i]).collect())
}

/// A record resolved together with its ground-truth mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    pub image_id: u64,
    pub embedding: Vec<f64>,
    pub class_label: u16,
    pub domain_id: u16,
    pub mask: Mask,
}

/// A materialized task.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub support: Vec<Item>,
    pub query: Vec<Item>,
}

impl Episode {
    pub fn support_matrix(&self) -> Result<Tensor> {
        stack(&self.support)
    }

    pub fn query_matrix(&self) -> Result<Tensor> {
        stack(&self.query)
    }

    pub fn selected(&self, indices: &[usize]) -> Vec<&Item> {
        indices.iter().map(|&i| &self.support[i]).collect()
    }
}

fn stack(items: &[Item]) -> Result<Tensor> {
    let d = items.first().ok_or(Error::EmptyPool)?.embedding.len();
    let data = items.iter().flat_map(|it| it.embedding.iter().copied()).collect();
    Tensor::matrix(items.len(), d, data)
}

/// Soft mask fields of a mixed task, one per item, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMasks {
    pub support: Vec<Vec<f64>>,
    pub query: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedTask {
    pub lambda: f64,
    pub parents: (MetaTask, MetaTask),
    /// Interpolated records with masks thresholded at 0.5.
    pub episode: Episode,
    pub soft_masks: SoftMasks,
}

/// Interpolates task `i` towards task `j` position by position.
pub fn mixup_tasks(ds: &Dataset, task_i: &MetaTask, task_j: &MetaTask, lambda: f64) -> Result<MixedTask> {
    let a = ds.materialize(task_i)?;
    let b = ds.materialize(task_j)?;
    let (episode, soft_masks) = mixup_episodes(&a, &b, lambda)?;
    Ok(MixedTask { lambda, parents: (task_i.clone(), task_j.clone()), episode, soft_masks })
}

/// `(1 - lambda) * a + lambda * b` for embeddings and masks.
///
/// Labels follow the dominant parent. A mixed record keeps its parent's
/// image id at `lambda` 0 or 1 and gets a fresh id derived from both parents
/// otherwise.
pub fn mixup_episodes(a: &Episode, b: &Episode, lambda: f64) -> Result<(Episode, SoftMasks)> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(alloc::format!("mixing ratio {lambda} outside [0, 1]")));
    }
    if a.support.len() != b.support.len() || a.query.len() != b.query.len() {
        return Err(Error::shape("mixup of tasks with different sizes"));
    }
    let mut soft = SoftMasks { support: Vec::new(), query: Vec::new() };
    let mut support = Vec::with_capacity(a.support.len());
    for (x, y) in a.support.iter().zip(&b.support) {
        let (item, field) = mix_item(x, y, lambda)?;
        support.push(item);
        soft.support.push(field);
    }
    let mut query = Vec::with_capacity(a.query.len());
    for (x, y) in a.query.iter().zip(&b.query) {
        let (item, field) = mix_item(x, y, lambda)?;
        query.push(item);
        soft.query.push(field);
    }
    Ok((Episode { support, query }, soft))
}

fn mix_item(x: &Item, y: &Item, lambda: f64) -> Result<(Item, Vec<f64>)> {
    if x.embedding.len() != y.embedding.len() {
        return Err(Error::shape(alloc::format!(
            "mixup of dimension {} with {}",
            x.embedding.len(),
            y.embedding.len()
        )));
    }
    x.mask.check_geometry(&y.mask)?;
    let mut embedding: Vec<f64> =
        x.embedding.iter().zip(&y.embedding).map(|(a, b)| (1.0 - lambda) * a + lambda * b).collect();
    if lambda == 0.0 {
        embedding.clone_from(&x.embedding);
    } else if lambda == 1.0 {
        embedding.clone_from(&y.embedding);
    }
    if tensor::norm(&embedding) == 0.0 {
        // Antipodal parents at lambda = 1/2; fall back to the anchor direction.
        embedding.clone_from(&x.embedding);
    }
    let field: Vec<f64> =
        x.mask.to_f64().iter().zip(y.mask.to_f64()).map(|(a, b)| (1.0 - lambda) * a + lambda * b).collect();
    let mask = if lambda == 0.0 {
        x.mask.clone()
    } else if lambda == 1.0 {
        y.mask.clone()
    } else {
        Mask::from_soft(x.mask.h(), x.mask.w(), &field)?
    };
    let (anchor, image_id) = if lambda == 0.0 {
        (x, x.image_id)
    } else if lambda == 1.0 {
        (y, y.image_id)
    } else {
        let mixed = rng::splitmix64(x.image_id ^ rng::splitmix64(y.image_id ^ lambda.to_bits()));
        (if lambda <= 0.5 { x } else { y }, mixed | 1 << 63)
    };
    let item = Item { image_id, embedding, class_label: anchor.class_label, domain_id: anchor.domain_id, mask };
    Ok((item, field))
}
