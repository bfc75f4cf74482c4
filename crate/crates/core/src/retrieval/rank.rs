use std::cmp::Ordering;

use crate::error::{Error, Result};

use super::index::{norm_f64, GalleryIndex};

/// Gallery positions by descending cosine similarity, ties by ascending
/// position. `similarities[i]` belongs to `order[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub order: Vec<usize>,
    pub similarities: Vec<f64>,
}

impl RankedList {
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Cosine distances `1 - similarity`, in rank order.
    pub fn distances(&self) -> Vec<f64> {
        self.similarities.iter().map(|s| 1.0 - s).collect()
    }
}

/// Cosine similarity of `query` against every stored row.
pub fn similarities(query: &[f32], gallery: &GalleryIndex) -> Result<Vec<f64>> {
    if query.len() != gallery.dim() {
        return Err(Error::shape("rank_query", &[query.len()], &[gallery.dim()]));
    }
    let norm = norm_f64(query);
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::ZeroNorm("query".into()));
    }
    let q: Vec<f64> = query.iter().map(|&v| v as f64 / norm).collect();
    Ok((0..gallery.len())
        .map(|i| gallery.row(i).iter().zip(&q).map(|(&g, &q)| g as f64 * q).sum())
        .collect())
}

/// Ranks the rows for which `exclude` is false.
pub fn rank_query(query: &[f32], gallery: &GalleryIndex, exclude: impl Fn(usize) -> bool) -> Result<RankedList> {
    let sims = similarities(query, gallery)?;
    let mut order: Vec<usize> = (0..gallery.len()).filter(|&i| !exclude(i)).collect();
    if order.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    order.sort_by(|&a, &b| {
        sims[b]
            .partial_cmp(&sims[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let similarities = order.iter().map(|&i| sims[i]).collect();
    Ok(RankedList { order, similarities })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gallery(rows: Vec<Vec<f32>>) -> GalleryIndex {
        let n = rows.len();
        let names: Vec<String> = (0..n).map(|i| i.to_string()).collect();
        GalleryIndex::build(&rows, vec![0; n], vec![1; n], &names).unwrap()
    }

    #[test]
    fn hand_dot_products() {
        let g = gallery(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.8]]);
        let r = rank_query(&[1.0, 0.0], &g, |_| false).unwrap();
        assert_eq!(r.order, vec![0, 2, 1]);
        assert_eq!(r.similarities[0], 1.0);
        assert!((r.similarities[1] - 0.6).abs() < 1e-6);
        assert_eq!(r.similarities[2], 0.0);
        assert_eq!(r.distances()[2], 1.0);
    }

    #[test]
    fn ties_break_by_index_and_scaling_is_invisible() {
        let g = gallery(vec![vec![0.0, 1.0], vec![2.0, 0.0], vec![0.0, 5.0], vec![1.0, 0.0]]);
        let r = rank_query(&[0.3, 0.0], &g, |_| false).unwrap();
        assert_eq!(r.order, vec![1, 3, 0, 2]);
        let r3 = rank_query(&[0.9, 0.0], &g, |_| false).unwrap();
        assert_eq!(r.order, r3.order);
    }

    #[test]
    fn exclusion_and_errors() {
        let g = gallery(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let r = rank_query(&[1.0, 0.0], &g, |i| i == 0).unwrap();
        assert_eq!(r.order, vec![1]);
        assert!(matches!(rank_query(&[1.0, 0.0], &g, |_| true), Err(Error::EmptyCandidates)));
        assert!(matches!(rank_query(&[0.0, 0.0], &g, |_| false), Err(Error::ZeroNorm(_))));
        assert!(rank_query(&[1.0], &g, |_| false).is_err());
    }
}
