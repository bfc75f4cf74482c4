use std::collections::BTreeSet;

use rayon::prelude::*;

use crate::error::{Error, Result};

use super::index::GalleryIndex;
use super::rank::{rank_query, RankedList};

/// Average precision of a ranking: mean over relevant items of the precision
/// at each hit. Relevant items missing from the ranking count as misses.
pub fn average_precision(ranked: &RankedList, relevant: &BTreeSet<usize>) -> Result<f64> {
    if relevant.is_empty() {
        return Err(Error::NoGroundTruth);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (r, pos) in ranked.order.iter().enumerate() {
        if relevant.contains(pos) {
            hits += 1;
            sum += hits as f64 / (r + 1) as f64;
        }
    }
    Ok(sum / relevant.len() as f64)
}

/// One query: its descriptor and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub descriptor: Vec<f32>,
    pub identity: i32,
    pub camera: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    /// `cmc[k-1]` = Acc_k for k = 1..=k_max.
    pub cmc: Vec<f64>,
    pub map: f64,
    /// AP of every valid query, in query order.
    pub per_query_ap: Vec<f64>,
    /// Query positions without retained ground truth.
    pub dropped: Vec<usize>,
}

impl EvalResult {
    pub fn rank1(&self) -> f64 {
        self.cmc.first().copied().unwrap_or(0.0)
    }

    pub fn valid_queries(&self) -> usize {
        self.per_query_ap.len()
    }

    /// CSV `k,acc_k` rows followed by `mAP,<value>`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,acc_k\n");
        for (k, acc) in self.cmc.iter().enumerate() {
            out.push_str(&format!("{},{:?}\n", k + 1, acc));
        }
        out.push_str(&format!("mAP,{:?}\n", self.map));
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "queries: {} evaluated, {} without ground truth\n",
            self.valid_queries(),
            self.dropped.len()
        );
        out.push_str(&format!("{:>6}  {:>8}\n", "rank", "accuracy"));
        for (k, acc) in self.cmc.iter().enumerate() {
            if k < 10 || k + 1 == self.cmc.len() {
                out.push_str(&format!("{:>6}  {:>8.4}\n", k + 1, acc));
            }
        }
        out.push_str(&format!("{:>6}  {:>8.4}\n", "mAP", self.map));
        out
    }
}

enum QueryOutcome {
    Scored { first_hit: usize, ap: f64 },
    NoGroundTruth,
}

fn score(q: &Query, gallery: &GalleryIndex) -> Result<QueryOutcome> {
    let same_view = |i: usize| gallery.identity(i) == q.identity && gallery.camera(i) == q.camera;
    let relevant: BTreeSet<usize> = (0..gallery.len())
        .filter(|&i| q.identity >= 0 && gallery.identity(i) == q.identity && !same_view(i))
        .collect();
    if relevant.is_empty() {
        return Ok(QueryOutcome::NoGroundTruth);
    }
    let ranked = rank_query(&q.descriptor, gallery, same_view)?;
    let first_hit = ranked
        .order
        .iter()
        .position(|p| relevant.contains(p))
        .expect("relevant rows survive exclusion");
    Ok(QueryOutcome::Scored {
        first_hit,
        ap: average_precision(&ranked, &relevant)?,
    })
}

/// Single-query protocol: gallery rows sharing the query's identity and
/// camera are excluded, distractors stay as negatives, and queries without
/// a cross-camera match are dropped from the means.
pub fn evaluate(queries: &[Query], gallery: &GalleryIndex, k_max: usize) -> Result<EvalResult> {
    if queries.is_empty() {
        return Err(Error::Config("evaluation needs at least one query".into()));
    }
    if k_max == 0 {
        return Err(Error::Config("k_max must be at least 1".into()));
    }
    let outcomes = queries
        .par_iter()
        .map(|q| score(q, gallery))
        .collect::<Result<Vec<_>>>()?;
    let mut hits_at = vec![0usize; k_max];
    let mut per_query_ap = Vec::new();
    let mut dropped = Vec::new();
    for (i, o) in outcomes.into_iter().enumerate() {
        match o {
            QueryOutcome::Scored { first_hit, ap } => {
                if first_hit < k_max {
                    hits_at[first_hit] += 1;
                }
                per_query_ap.push(ap);
            }
            QueryOutcome::NoGroundTruth => dropped.push(i),
        }
    }
    let q = per_query_ap.len();
    if q == 0 {
        return Err(Error::NoGroundTruth);
    }
    let mut cumulative = 0;
    let cmc = hits_at
        .iter()
        .map(|&h| {
            cumulative += h;
            cumulative as f64 / q as f64
        })
        .collect();
    let map = per_query_ap.iter().sum::<f64>() / q as f64;
    Ok(EvalResult {
        cmc,
        map,
        per_query_ap,
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ranked(order: Vec<usize>) -> RankedList {
        let n = order.len();
        RankedList {
            order,
            similarities: vec![0.0; n],
        }
    }

    #[test]
    fn ap_hand_cases() {
        let rel: BTreeSet<usize> = [0].into();
        assert_eq!(average_precision(&ranked(vec![0, 1, 2]), &rel).unwrap(), 1.0);
        let rel: BTreeSet<usize> = [10, 12].into();
        let ap = average_precision(&ranked(vec![10, 11, 12, 13]), &rel).unwrap();
        assert!((ap - 0.833_333_333_3).abs() < 1e-9, "{ap}");
        let rel: BTreeSet<usize> = [4].into();
        assert_eq!(average_precision(&ranked(vec![0, 1, 2, 3, 4]), &rel).unwrap(), 1.0 / 5.0);
        assert!(matches!(
            average_precision(&ranked(vec![0]), &BTreeSet::new()),
            Err(Error::NoGroundTruth)
        ));
    }

    fn index(rows: Vec<Vec<f32>>, ids: Vec<i32>, cams: Vec<u32>) -> GalleryIndex {
        let names: Vec<String> = (0..rows.len()).map(|i| i.to_string()).collect();
        GalleryIndex::build(&rows, ids, cams, &names).unwrap()
    }

    fn query(d: Vec<f32>, identity: i32, camera: u32) -> Query {
        Query {
            descriptor: d,
            identity,
            camera,
        }
    }

    #[test]
    fn perfect_retrieval() {
        let g = index(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![1, 2], vec![2, 2]);
        let qs = [query(vec![1.0, 0.1], 1, 1), query(vec![0.1, 1.0], 2, 1)];
        let r = evaluate(&qs, &g, 2).unwrap();
        assert_eq!(r.cmc, vec![1.0, 1.0]);
        assert_eq!(r.map, 1.0);
        assert!(r.to_csv().contains("1,1.0\n"));
        assert!(r.to_csv().ends_with("mAP,1.0\n"));
    }

    #[test]
    fn map_is_mean_of_ap() {
        // query 0 hits at rank 1; query 1 at rank 2 behind a distractor
        let g = index(
            vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.1, 1.0]],
            vec![1, 2, -1],
            vec![2, 2, 2],
        );
        let qs = [query(vec![1.0, 0.0], 1, 1), query(vec![0.1, 1.0], 2, 1)];
        let r = evaluate(&qs, &g, 3).unwrap();
        assert_eq!(r.per_query_ap, vec![1.0, 0.5]);
        assert_eq!(r.map, 0.75);
        assert_eq!(r.cmc, vec![0.5, 1.0, 1.0]);
    }

    #[test]
    fn same_camera_matches_are_excluded_and_queries_dropped() {
        let g = index(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![1, 2], vec![1, 2]);
        let qs = [query(vec![1.0, 0.0], 1, 1), query(vec![0.0, 1.0], 2, 1)];
        let r = evaluate(&qs, &g, 1).unwrap();
        assert_eq!(r.dropped, vec![0]);
        assert_eq!(r.per_query_ap, vec![1.0]);
        assert!(matches!(evaluate(&qs[..1], &g, 1), Err(Error::NoGroundTruth)));
    }
}
