use rand::seq::{index, IndexedRandom, SliceRandom};
use rand::Rng;

use crate::error::{Error, Result};
use crate::multitask::{PairBatch, PairLabel};
use crate::tensor::Tensor;

use super::augment::{augment, AugmentConfig};
use super::dataset::Dataset;

/// Record positions of one training pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairSpec {
    pub a: usize,
    pub b: usize,
    pub label: PairLabel,
}

pub fn positive_count(batch_size: usize, positive_fraction: f64) -> usize {
    (batch_size as f64 * positive_fraction).round() as usize
}

/// Precomputed candidate sets for pair sampling; distractors are absent.
#[derive(Debug, Clone)]
struct Pools {
    /// identity → positions, non-distractor identities only
    by_identity: Vec<(i64, Vec<usize>)>,
    /// positions whose identity has at least two images
    positive_anchors: Vec<usize>,
}

impl Pools {
    fn new(ds: &Dataset) -> Self {
        let by_identity: Vec<(i64, Vec<usize>)> = ds
            .identity_index()
            .iter()
            .filter(|(&id, _)| id >= 0)
            .map(|(&id, v)| (id, v.clone()))
            .collect();
        let positive_anchors = by_identity
            .iter()
            .filter(|(_, v)| v.len() >= 2)
            .flat_map(|(_, v)| v.iter().copied())
            .collect();
        Self {
            by_identity,
            positive_anchors,
        }
    }

    fn check(&self, batch_size: usize, positive_fraction: f64) -> Result<usize> {
        if batch_size == 0 {
            return Err(Error::PairComposition("batch size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&positive_fraction) {
            return Err(Error::PairComposition(format!(
                "positive fraction {positive_fraction} outside [0,1]"
            )));
        }
        let n_pos = positive_count(batch_size, positive_fraction);
        if n_pos > 0 && self.positive_anchors.is_empty() {
            return Err(Error::PairComposition(
                "positive pairs requested but no identity has two images".into(),
            ));
        }
        if n_pos < batch_size && self.by_identity.len() < 2 {
            return Err(Error::PairComposition(format!(
                "negative pairs need two identities, dataset has {}",
                self.by_identity.len()
            )));
        }
        Ok(n_pos)
    }

    fn identity_of(&self, ds: &Dataset, pos: usize) -> usize {
        let id = ds.records()[pos].identity;
        self.by_identity
            .binary_search_by_key(&id, |(i, _)| *i)
            .expect("anchor drawn from a training identity")
    }

    fn pair(&self, ds: &Dataset, anchor: usize, label: PairLabel, rng: &mut impl Rng) -> PairSpec {
        match label {
            PairLabel::Same => {
                let mut a = anchor;
                if self.by_identity[self.identity_of(ds, a)].1.len() < 2 {
                    a = *self.positive_anchors.choose(rng).expect("checked non-empty");
                }
                let members = &self.by_identity[self.identity_of(ds, a)].1;
                let own = members.iter().position(|&p| p == a).expect("member of own identity");
                let k = rng.random_range(0..members.len() - 1);
                let b = members[if k >= own { k + 1 } else { k }];
                PairSpec { a, b, label }
            }
            PairLabel::Different => {
                let own = self.identity_of(ds, anchor);
                let k = rng.random_range(0..self.by_identity.len() - 1);
                let other = if k >= own { k + 1 } else { k };
                let b = *self.by_identity[other].1.choose(rng).expect("identity has images");
                PairSpec { a: anchor, b, label }
            }
        }
    }

    fn batch(
        &self,
        ds: &Dataset,
        anchors: &[usize],
        n_pos: usize,
        rng: &mut impl Rng,
    ) -> Vec<PairSpec> {
        let mut labels = vec![PairLabel::Different; anchors.len()];
        for i in index::sample(rng, anchors.len(), n_pos) {
            labels[i] = PairLabel::Same;
        }
        anchors
            .iter()
            .zip(labels)
            .map(|(&a, l)| self.pair(ds, a, l, rng))
            .collect()
    }
}

/// Samples `batch_size` pairs with `round(batch_size · positive_fraction)`
/// positives; anchors are drawn uniformly from non-distractor records.
pub fn sample_pair_batch(
    ds: &Dataset,
    batch_size: usize,
    positive_fraction: f64,
    rng: &mut impl Rng,
) -> Result<Vec<PairSpec>> {
    let pools = Pools::new(ds);
    let n_pos = pools.check(batch_size, positive_fraction)?;
    let trainable = ds.trainable_positions();
    let anchors: Vec<usize> = (0..batch_size)
        .map(|_| *trainable.choose(rng).expect("pools checked"))
        .collect();
    Ok(pools.batch(ds, &anchors, n_pos, rng))
}

/// Epoch-wise sampler: anchors visit every non-distractor record once per
/// epoch in a freshly shuffled order.
#[derive(Debug, Clone)]
pub struct PairSampler {
    pools: Pools,
    order: Vec<usize>,
    cursor: usize,
    batch_size: usize,
    n_pos: usize,
}

impl PairSampler {
    pub fn new(ds: &Dataset, batch_size: usize, positive_fraction: f64) -> Result<Self> {
        let pools = Pools::new(ds);
        let n_pos = pools.check(batch_size, positive_fraction)?;
        let order = ds.trainable_positions();
        Ok(Self {
            pools,
            cursor: order.len(),
            order,
            batch_size,
            n_pos,
        })
    }

    /// Iterations needed for one pass over the anchors.
    pub fn batches_per_epoch(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    pub fn next_pairs(&mut self, ds: &Dataset, rng: &mut impl Rng) -> Vec<PairSpec> {
        let mut anchors = Vec::with_capacity(self.batch_size);
        while anchors.len() < self.batch_size {
            if self.cursor == self.order.len() {
                self.order.shuffle(rng);
                self.cursor = 0;
            }
            let take = (self.batch_size - anchors.len()).min(self.order.len() - self.cursor);
            anchors.extend_from_slice(&self.order[self.cursor..self.cursor + take]);
            self.cursor += take;
        }
        self.pools.batch(ds, &anchors, self.n_pos, rng)
    }
}

/// Augments both images of every pair and stacks them into a batch with
/// class-index labels.
pub fn assemble_batch(
    ds: &Dataset,
    images: &[Tensor<f32>],
    pairs: &[PairSpec],
    aug: &AugmentConfig,
    rng: &mut impl Rng,
) -> Result<PairBatch<f32>> {
    let class = |pos: usize| {
        ds.class_of(ds.records()[pos].identity)
            .ok_or_else(|| Error::PairComposition(format!("{} is a distractor", ds.records()[pos].image_path)))
    };
    let mut a = Vec::with_capacity(pairs.len());
    let mut b = Vec::with_capacity(pairs.len());
    let mut labels_a = Vec::with_capacity(pairs.len());
    let mut labels_b = Vec::with_capacity(pairs.len());
    for p in pairs {
        a.push(augment(&images[p.a], aug, rng)?);
        b.push(augment(&images[p.b], aug, rng)?);
        labels_a.push(class(p.a)?);
        labels_b.push(class(p.b)?);
    }
    PairBatch::new(
        Tensor::stack(&a)?,
        Tensor::stack(&b)?,
        labels_a,
        labels_b,
        pairs.iter().map(|p| p.label).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::dataset::DatasetRecord;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dataset(ids: &[(i64, usize)]) -> Dataset {
        let mut recs = Vec::new();
        for &(id, n) in ids {
            for j in 0..n {
                recs.push(DatasetRecord {
                    image_path: format!("{id}_{j}.rten"),
                    identity: id,
                    camera: 1 + (j % 2) as u32,
                });
            }
        }
        Dataset::from_records(".", recs).unwrap()
    }

    fn check_consistent(ds: &Dataset, pairs: &[PairSpec]) {
        for p in pairs {
            let (ia, ib) = (ds.records()[p.a].identity, ds.records()[p.b].identity);
            assert!(ia >= 0 && ib >= 0);
            match p.label {
                PairLabel::Same => {
                    assert_eq!(ia, ib);
                    assert_ne!(p.a, p.b);
                }
                PairLabel::Different => assert_ne!(ia, ib),
            }
        }
    }

    #[test]
    fn balanced_batch_of_sixteen() {
        let ds = dataset(&[(1, 3), (2, 1), (3, 4), (-1, 5)]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let pairs = sample_pair_batch(&ds, 16, 0.5, &mut rng).unwrap();
            assert_eq!(pairs.len(), 16);
            assert_eq!(pairs.iter().filter(|p| p.label == PairLabel::Same).count(), 8);
            check_consistent(&ds, &pairs);
        }
    }

    #[test]
    fn single_identity_cannot_make_negatives() {
        let ds = dataset(&[(4, 5)]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_pair_batch(&ds, 4, 0.5, &mut rng),
            Err(Error::PairComposition(_))
        ));
        assert!(sample_pair_batch(&ds, 4, 1.0, &mut rng).is_ok());
    }

    #[test]
    fn positives_need_a_repeated_identity() {
        let ds = dataset(&[(1, 1), (2, 1)]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_pair_batch(&ds, 4, 0.5, &mut rng).is_err());
        assert!(sample_pair_batch(&ds, 4, 0.0, &mut rng).is_ok());
    }

    #[test]
    fn sampler_covers_every_anchor_each_epoch() {
        let ds = dataset(&[(1, 3), (2, 3), (3, 4), (-1, 2)]);
        let mut sampler = PairSampler::new(&ds, 5, 0.0).unwrap();
        assert_eq!(sampler.batches_per_epoch(), 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut seen: Vec<usize> = (0..2).flat_map(|_| sampler.next_pairs(&ds, &mut rng)).map(|p| p.a).collect();
        seen.sort();
        assert_eq!(seen, ds.trainable_positions());
    }

    #[test]
    fn sampling_is_reproducible() {
        let ds = dataset(&[(1, 3), (2, 3), (3, 4)]);
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut s = PairSampler::new(&ds, 4, 0.5).unwrap();
            (0..5).flat_map(|_| s.next_pairs(&ds, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10));
    }

    #[test]
    fn assembled_batch_labels_follow_classes() {
        let ds = dataset(&[(5, 2), (9, 2)]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let images: Vec<Tensor<f32>> = (0..ds.len()).map(|_| Tensor::uniform(&[3, 8, 4], 0.0, 1.0, &mut rng)).collect();
        let aug = AugmentConfig {
            crop_h: 8,
            crop_w: 4,
            ..Default::default()
        };
        let pairs = sample_pair_batch(&ds, 6, 0.5, &mut rng).unwrap();
        let batch = assemble_batch(&ds, &images, &pairs, &aug, &mut rng).unwrap();
        assert_eq!(batch.images_a.dims(), &[6, 3, 8, 4]);
        for (i, p) in pairs.iter().enumerate() {
            assert_eq!(ds.classes()[batch.labels_a[i]], ds.records()[p.a].identity);
        }
    }
}
