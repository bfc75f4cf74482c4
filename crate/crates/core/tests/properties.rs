use std::collections::BTreeSet;

use proptest::prelude::*;
use r2reid::datapipe::{random_erase, sample_pair_batch, AugmentConfig, Dataset, DatasetRecord, PairSampler};
use r2reid::multitask::PairLabel;
use r2reid::retrieval::{average_precision, evaluate, rank_query, GalleryIndex, Query};
use r2reid::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn descriptor(dim: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-1.0f32..1.0, dim).prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
}

/// Gallery of 4..12 rows over 3 identities and 2 cameras, plus queries.
fn retrieval_case() -> impl Strategy<Value = (Vec<Vec<f32>>, Vec<i32>, Vec<u32>, Vec<Query>)> {
    (4usize..12, 1usize..5).prop_flat_map(|(g, q)| {
        (
            prop::collection::vec(descriptor(4), g),
            prop::collection::vec(0i32..3, g),
            prop::collection::vec(1u32..3, g),
            prop::collection::vec((descriptor(4), 0i32..3, 1u32..3), q),
        )
            .prop_map(|(d, ids, cams, qs)| {
                let qs = qs
                    .into_iter()
                    .map(|(descriptor, identity, camera)| Query { descriptor, identity, camera })
                    .collect();
                (d, ids, cams, qs)
            })
    })
}

fn gallery(d: &[Vec<f32>], ids: &[i32], cams: &[u32]) -> GalleryIndex {
    let names: Vec<String> = (0..d.len()).map(|i| format!("g{i}")).collect();
    GalleryIndex::build(d, ids.to_vec(), cams.to_vec(), &names).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn cmc_is_monotone_and_map_is_mean_ap((d, ids, cams, qs) in retrieval_case()) {
        let g = gallery(&d, &ids, &cams);
        let Ok(res) = evaluate(&qs, &g, d.len()) else { return Ok(()) };
        for w in res.cmc.windows(2) {
            prop_assert!(w[0] <= w[1]);
        }
        prop_assert!(res.cmc.iter().all(|&a| (0.0..=1.0).contains(&a)));
        // every valid query has a match somewhere in the candidate list
        prop_assert_eq!(*res.cmc.last().unwrap(), 1.0);
        prop_assert!(res.per_query_ap.iter().all(|&ap| ap > 0.0 && ap <= 1.0));
        let mean = res.per_query_ap.iter().sum::<f64>() / res.per_query_ap.len() as f64;
        prop_assert!((res.map - mean).abs() < 1e-12);
        prop_assert_eq!(res.valid_queries() + res.dropped.len(), qs.len());
    }

    #[test]
    fn metrics_ignore_descriptor_scale((d, ids, cams, qs) in retrieval_case(), k in -8i32..8, j in -8i32..8) {
        // power-of-two factors scale exactly, so any difference is a real dependence on norm
        let (sg, sq) = (2f32.powi(k), 2f32.powi(j));
        let base = evaluate(&qs, &gallery(&d, &ids, &cams), d.len());
        let scaled_d: Vec<Vec<f32>> = d.iter().map(|r| r.iter().map(|v| v * sg).collect()).collect();
        let scaled_q: Vec<Query> = qs
            .iter()
            .map(|q| Query { descriptor: q.descriptor.iter().map(|v| v * sq).collect(), ..q.clone() })
            .collect();
        let scaled = evaluate(&scaled_q, &gallery(&scaled_d, &ids, &cams), d.len());
        match (base, scaled) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
            (a, b) => prop_assert_eq!(a.is_err(), b.is_err()),
        }
    }

    #[test]
    fn ranking_is_a_sorted_permutation(d in prop::collection::vec(descriptor(3), 1..10), q in descriptor(3)) {
        let n = d.len();
        let g = gallery(&d, &vec![0; n], &vec![1; n]);
        let r = rank_query(&q, &g, |_| false).unwrap();
        let mut seen = r.order.clone();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
        for w in r.similarities.windows(2) {
            prop_assert!(w[0] >= w[1]);
        }
        prop_assert!(r.similarities.iter().all(|s| (-1.0 - 1e-9..=1.0 + 1e-9).contains(s)));
    }

    #[test]
    fn ap_is_one_iff_relevant_items_lead(n in 2usize..10, k in 1usize..10, shift in 0usize..3) {
        let k = k.min(n);
        let d: Vec<Vec<f32>> = (0..n).map(|i| vec![1.0, -(i as f32) * 0.1]).collect();
        let g = gallery(&d, &vec![0; n], &vec![1; n]);
        let r = rank_query(&[1.0, 0.0], &g, |_| false).unwrap();
        let shift = shift.min(n - k);
        let relevant: BTreeSet<usize> = (shift..shift + k).map(|i| r.order[i]).collect();
        let ap = average_precision(&r, &relevant).unwrap();
        prop_assert!(ap > 0.0 && ap <= 1.0);
        prop_assert_eq!(ap == 1.0, shift == 0);
    }

    #[test]
    fn erase_keeps_dims_and_pixels_outside(h in 4usize..40, w in 4usize..40, seed in any::<u64>()) {
        let image = Tensor::<f32>::from_fn(&[3, h, w], |i| (i % 7) as f32 * 10.0 + 2.0);
        let cfg = AugmentConfig { rea_probability: 1.0, ..AugmentConfig::default() };
        let (out, region) = random_erase(&image, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(out.dims(), image.dims());
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    let i = (c * h + y) * w + x;
                    let inside = region.as_ref().is_some_and(|r| r.contains(y, x));
                    if inside {
                        prop_assert!((0.0..1.0).contains(&out.data()[i]));
                    } else {
                        prop_assert_eq!(out.data()[i], image.data()[i]);
                    }
                }
            }
        }
        if let Some(r) = region {
            let area = r.area_ratio(h, w);
            prop_assert!((cfg.rea_area_range.0..=cfg.rea_area_range.1).contains(&area));
            prop_assert!(r.top + r.height <= h && r.left + r.width <= w);
        }
    }

    #[test]
    fn sampled_pairs_are_consistent(
        counts in prop::collection::vec(1usize..5, 2..6),
        distractors in 0usize..3,
        batch in 1usize..20,
        seed in any::<u64>(),
    ) {
        let mut records = Vec::new();
        for (id, &n) in counts.iter().enumerate() {
            for j in 0..n {
                records.push(DatasetRecord { image_path: format!("{id}_{j}.rten"), identity: id as i64, camera: 1 });
            }
        }
        for j in 0..distractors {
            records.push(DatasetRecord { image_path: format!("d{j}.rten"), identity: -1, camera: 2 });
        }
        let ds = Dataset::from_records("/", records).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let check = |pairs: &[r2reid::datapipe::PairSpec]| -> Result<(), TestCaseError> {
            prop_assert_eq!(pairs.len(), batch);
            let positives = pairs.iter().filter(|p| p.label == PairLabel::Same).count();
            prop_assert_eq!(positives, (batch as f64 * 0.5).round() as usize);
            for p in pairs {
                let (ra, rb) = (&ds.records()[p.a], &ds.records()[p.b]);
                prop_assert!(!ra.is_distractor() && !rb.is_distractor());
                prop_assert_eq!(p.label, PairLabel::of(ra.identity as usize, rb.identity as usize));
            }
            Ok(())
        };
        match sample_pair_batch(&ds, batch, 0.5, &mut rng) {
            Ok(pairs) => check(&pairs)?,
            // positives need an identity with two images
            Err(_) => prop_assert!(counts.iter().all(|&n| n < 2)),
        }
        if let Ok(mut sampler) = PairSampler::new(&ds, batch, 0.5) {
            let trainable: usize = counts.iter().sum();
            prop_assert_eq!(sampler.batches_per_epoch(), trainable.div_ceil(batch));
            for _ in 0..3 {
                check(&sampler.next_pairs(&ds, &mut rng))?;
            }
        }
    }
}
