//! Cosine similarity, score-to-rank conversion and Spearman rank correlation.

use std::collections::HashMap;

use thiserror::Error;

use crate::scalar::Scalar;

/// Vectors with a Euclidean norm below this are rejected by
/// [`cosine_similarity`].
pub const MIN_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("vector norm below {MIN_NORM}")]
    ZeroNorm,
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("no items to rank")]
    EmptyInput,
    #[error("score for `{item}` is not finite")]
    NonFiniteScore { item: String },
    #[error("item `{item}` appears more than once")]
    DuplicateItem { item: String },
    #[error("rank tables cover different items: {0}")]
    ItemSetMismatch(String),
    #[error("correlation undefined: every rank in a table is tied")]
    DegenerateInput,
    #[error("need at least two items, got {n}")]
    TooFewItems { n: usize },
    #[error("ranks of {n} items do not sum to n(n+1)/2")]
    InvalidRanks { n: usize },
}

/// Cosine of the angle between two vectors, clamped to `[-1, 1]`.
pub fn cosine_similarity<T: Scalar>(a: &[T], b: &[T]) -> Result<T, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let mut dot = T::zero();
    let mut aa = T::zero();
    let mut bb = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        aa += x * x;
        bb += y * y;
    }
    let (na, nb) = (aa.sqrt(), bb.sqrt());
    let min = T::of(MIN_NORM);
    if !(na >= min && nb >= min) {
        return Err(MetricsError::ZeroNorm);
    }
    let cos = dot / (na * nb);
    Ok(cos.max(-T::one()).min(T::one()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Direction {
    /// Rank 1 goes to the largest score.
    #[default]
    Descending,
    Ascending,
}

/// Fractional ranks for a set of items; tied items share the mean of the
/// positions they span.
#[derive(Debug, Clone, PartialEq)]
pub struct RankTable<T = f64> {
    items: Vec<String>,
    ranks: Vec<T>,
    has_ties: bool,
}

impl<T: Scalar> RankTable<T> {
    /// Wraps precomputed ranks. They must sum to `n(n+1)/2` within 1e-9.
    pub fn from_ranks(items: Vec<String>, ranks: Vec<T>) -> Result<Self, MetricsError> {
        let n = items.len();
        if n == 0 {
            return Err(MetricsError::EmptyInput);
        }
        if ranks.len() != n {
            return Err(MetricsError::InvalidRanks { n });
        }
        check_unique(&items)?;
        let expected = (n * (n + 1)) as f64 / 2.0;
        let sum: f64 = ranks.iter().map(|r| r.as_f64()).sum();
        let consistent = (sum - expected).abs() <= 1e-9 * expected.max(1.0);
        if !consistent {
            return Err(MetricsError::InvalidRanks { n });
        }
        let mut sorted: Vec<T> = ranks.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite ranks"));
        let has_ties = sorted.windows(2).any(|w| w[0] == w[1]);
        Ok(RankTable {
            items,
            ranks,
            has_ties,
        })
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn ranks(&self) -> &[T] {
        &self.ranks
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn has_ties(&self) -> bool {
        self.has_ties
    }

    pub fn rank_of(&self, item: &str) -> Option<T> {
        self.items
            .iter()
            .position(|i| i == item)
            .map(|idx| self.ranks[idx])
    }

    /// True when every item shares one rank.
    pub fn all_tied(&self) -> bool {
        self.ranks.windows(2).all(|w| w[0] == w[1])
    }

    /// Ranks re-ordered to follow `items`.
    fn aligned_to(&self, items: &[String]) -> Result<Vec<T>, MetricsError> {
        let index: HashMap<&str, usize> = self
            .items
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        items
            .iter()
            .map(|item| {
                index
                    .get(item.as_str())
                    .map(|&i| self.ranks[i])
                    .ok_or_else(|| MetricsError::ItemSetMismatch(format!("`{item}` missing")))
            })
            .collect()
    }
}

fn check_unique(items: &[String]) -> Result<(), MetricsError> {
    let mut seen = HashMap::with_capacity(items.len());
    for item in items {
        if seen.insert(item.as_str(), ()).is_some() {
            return Err(MetricsError::DuplicateItem { item: item.clone() });
        }
    }
    Ok(())
}

/// Ranks items by score. Tied scores share the average of the ranks they
/// span, so input order never influences the result.
pub fn rank_by_score<T, S, I>(scores: I, direction: Direction) -> Result<RankTable<T>, MetricsError>
where
    T: Scalar,
    S: Into<String>,
    I: IntoIterator<Item = (S, T)>,
{
    let (items, values): (Vec<String>, Vec<T>) =
        scores.into_iter().map(|(s, v)| (s.into(), v)).unzip();
    if items.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(MetricsError::NonFiniteScore {
            item: items[i].clone(),
        });
    }
    check_unique(&items)?;

    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        let ord = values[a].partial_cmp(&values[b]).expect("finite scores");
        match direction {
            Direction::Descending => ord.reverse(),
            Direction::Ascending => ord,
        }
    });

    let mut ranks = vec![T::zero(); values.len()];
    let mut has_ties = false;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        has_ties |= end - start > 1;
        // positions start+1 ..= end, averaged
        let rank = T::of((start + 1 + end) as f64) / T::of(2.0);
        for &idx in &order[start..end] {
            ranks[idx] = rank;
        }
        start = end;
    }
    Ok(RankTable {
        items,
        ranks,
        has_ties,
    })
}

/// `1 - 6 Σd² / (n(n² - 1))` over paired ranks. Exact only without ties.
pub fn spearman_closed_form<T: Scalar>(x: &[T], y: &[T]) -> T {
    let n = T::of(x.len() as f64);
    let sum_d2: T = x.iter().zip(y).map(|(&a, &b)| (a - b) * (a - b)).sum();
    T::one() - T::of(6.0) * sum_d2 / (n * (n * n - T::one()))
}

/// Pearson correlation; `None` when either input has zero variance.
pub fn pearson<T: Scalar>(x: &[T], y: &[T]) -> Option<T> {
    let n = T::of(x.len() as f64);
    let mx = x.iter().copied().sum::<T>() / n;
    let my = y.iter().copied().sum::<T>() / n;
    let mut sxy = T::zero();
    let mut sxx = T::zero();
    let mut syy = T::zero();
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == T::zero() || syy == T::zero() {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Spearman's ρ between two rankings of the same items.
///
/// Tie-free tables use the closed form; otherwise the Pearson correlation of
/// the fractional ranks, which agrees with the closed form when there are no
/// ties.
pub fn spearman_rho<T: Scalar>(x: &RankTable<T>, y: &RankTable<T>) -> Result<T, MetricsError> {
    let n = x.len();
    if n != y.len() {
        return Err(MetricsError::ItemSetMismatch(format!(
            "{n} items vs {} items",
            y.len()
        )));
    }
    if n < 2 {
        return Err(MetricsError::TooFewItems { n });
    }
    let y_ranks = y.aligned_to(&x.items)?;
    if x.all_tied() || y.all_tied() {
        return Err(MetricsError::DegenerateInput);
    }
    let rho = if !x.has_ties && !y.has_ties {
        spearman_closed_form(&x.ranks, &y_ranks)
    } else {
        pearson(&x.ranks, &y_ranks).ok_or(MetricsError::DegenerateInput)?
    };
    Ok(rho.max(-T::one()).min(T::one()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(ranks: &[f64]) -> RankTable {
        let items = (0..ranks.len()).map(|i| format!("i{i}")).collect();
        RankTable::from_ranks(items, ranks.to_vec()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine_similarity(&[1.0f64, 2.0], &[2.0, 4.0]).unwrap() - 1.0).abs() < 1e-15);
        // dot 24, norms 5 and 5
        assert!((cosine_similarity(&[3.0f64, 4.0], &[4.0, 3.0]).unwrap() - 0.96).abs() < 1e-15);
        assert!(cosine_similarity(&[3.0f32, 4.0], &[4.0, 3.0]).unwrap() > 0.959);
    }

    #[test]
    fn cosine_errors() {
        assert_eq!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(MetricsError::ZeroNorm)
        );
        assert_eq!(
            cosine_similarity(&[1.0], &[1.0, 0.0]),
            Err(MetricsError::DimensionMismatch { left: 1, right: 2 })
        );
    }

    #[test]
    fn cosine_is_clamped() {
        let a = [0.1, 0.2, 0.3];
        let c = cosine_similarity(&a, &a).unwrap();
        assert!(c <= 1.0);
    }

    #[test]
    fn ranks_without_ties() {
        let t = rank_by_score([("a", 0.9), ("b", 0.5), ("c", 0.1)], Direction::Descending).unwrap();
        assert_eq!(t.ranks(), &[1.0, 2.0, 3.0]);
        assert!(!t.has_ties());
        let t = rank_by_score([("a", 0.9), ("b", 0.5), ("c", 0.1)], Direction::Ascending).unwrap();
        assert_eq!(t.ranks(), &[3.0, 2.0, 1.0]);
    }

    #[test]
    fn ranks_with_ties() {
        let t = rank_by_score([("a", 0.5), ("b", 0.5)], Direction::Descending).unwrap();
        assert_eq!(t.ranks(), &[1.5, 1.5]);
        let t = rank_by_score(
            [("a", 3.0), ("b", 1.0), ("c", 3.0), ("d", 0.0)],
            Direction::Descending,
        )
        .unwrap();
        assert_eq!(t.ranks(), &[1.5, 3.0, 1.5, 4.0]);
        assert_eq!(t.rank_of("c"), Some(1.5));
        assert!(t.has_ties());
    }

    #[test]
    fn rank_errors() {
        assert_eq!(
            rank_by_score(Vec::<(&str, f64)>::new(), Direction::Descending),
            Err(MetricsError::EmptyInput)
        );
        assert!(matches!(
            rank_by_score([("a", 1.0), ("b", f64::NAN)], Direction::Descending),
            Err(MetricsError::NonFiniteScore { ref item }) if item == "b"
        ));
        assert!(matches!(
            rank_by_score([("a", 1.0), ("a", 2.0)], Direction::Descending),
            Err(MetricsError::DuplicateItem { .. })
        ));
    }

    #[test]
    fn spearman_examples() {
        let x = table(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let y = table(&[2.0, 1.0, 4.0, 3.0, 5.0]);
        // Σd² = 4, 1 - 24/120
        assert!((spearman_rho(&x, &y).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(spearman_rho(&x, &x).unwrap(), 1.0);
        let rev = table(&[5.0, 4.0, 3.0, 2.0, 1.0]);
        assert_eq!(spearman_rho(&x, &rev).unwrap(), -1.0);
    }

    #[test]
    fn spearman_matches_items_by_name() {
        let x = RankTable::from_ranks(vec!["a".into(), "b".into(), "c".into()], vec![1.0, 2.0, 3.0])
            .unwrap();
        let y = RankTable::from_ranks(vec!["c".into(), "a".into(), "b".into()], vec![3.0, 1.0, 2.0])
            .unwrap();
        assert_eq!(spearman_rho(&x, &y).unwrap(), 1.0);
    }

    #[test]
    fn spearman_errors() {
        let x = table(&[1.0, 2.0]);
        let other =
            RankTable::from_ranks(vec!["z0".into(), "z1".into()], vec![1.0, 2.0]).unwrap();
        assert!(matches!(
            spearman_rho(&x, &other),
            Err(MetricsError::ItemSetMismatch(_))
        ));
        assert!(matches!(
            spearman_rho(&x, &table(&[1.0, 2.0, 3.0])),
            Err(MetricsError::ItemSetMismatch(_))
        ));
        assert_eq!(
            spearman_rho(&x, &table(&[1.5, 1.5])),
            Err(MetricsError::DegenerateInput)
        );
        assert_eq!(
            spearman_rho(&table(&[1.0]), &table(&[1.0])),
            Err(MetricsError::TooFewItems { n: 1 })
        );
    }

    #[test]
    fn spearman_with_ties_uses_pearson_on_ranks() {
        let x = table(&[1.5, 1.5, 3.0, 4.0]);
        let y = table(&[1.0, 2.0, 3.0, 4.0]);
        // by hand: x - 2.5 = (-1,-1,.5,1.5), y - 2.5 = (-1.5,-.5,.5,1.5)
        // sxy = 1.5+.5+.25+2.25 = 4.5, sxx = 1+1+.25+2.25 = 4.5, syy = 5
        let expected = 4.5 / (4.5f64 * 5.0).sqrt();
        assert!((spearman_rho(&x, &y).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn from_ranks_validates_sum() {
        assert!(RankTable::from_ranks(vec!["a".into(), "b".into()], vec![1.0, 1.0]).is_err());
        assert!(RankTable::<f64>::from_ranks(vec![], vec![]).is_err());
    }

    proptest! {
        #[test]
        fn rank_sum_is_triangular(scores in prop::collection::vec(-5i32..5, 1..40)) {
            let n = scores.len();
            let t = rank_by_score(
                scores.iter().enumerate().map(|(i, &s)| (format!("i{i}"), s as f64)),
                Direction::Descending,
            ).unwrap();
            let sum: f64 = t.ranks().iter().sum();
            prop_assert!((sum - (n * (n + 1)) as f64 / 2.0).abs() < 1e-9);
        }

        #[test]
        fn ranking_is_invariant_under_increasing_transforms(
            scores in prop::collection::hash_set(-1000i32..1000, 1..40)
        ) {
            let scores: Vec<f64> = scores.into_iter().map(|s| s as f64 / 10.0).collect();
            let rank = |f: &dyn Fn(f64) -> f64| {
                rank_by_score(
                    scores.iter().enumerate().map(|(i, &s)| (format!("i{i}"), f(s))),
                    Direction::Descending,
                ).unwrap()
            };
            let base = rank(&|s| s);
            prop_assert_eq!(&base, &rank(&|s| 2.0 * s + 1.0));
            prop_assert_eq!(&base, &rank(&|s| s * s * s));
        }

        #[test]
        fn spearman_is_symmetric(
            a in prop::collection::vec(0i32..6, 2..30),
            seed in any::<u64>(),
        ) {
            let n = a.len();
            let b: Vec<f64> = (0..n).map(|i| ((seed >> (i % 60)) & 7) as f64).collect();
            let x = rank_by_score(a.iter().enumerate().map(|(i, &v)| (format!("i{i}"), v as f64)), Direction::Descending).unwrap();
            let y = rank_by_score(b.iter().enumerate().map(|(i, &v)| (format!("i{i}"), v)), Direction::Descending).unwrap();
            match (spearman_rho(&x, &y), spearman_rho(&y, &x)) {
                (Ok(r1), Ok(r2)) => {
                    prop_assert!((r1 - r2).abs() <= 1e-12);
                    prop_assert!((-1.0..=1.0).contains(&r1));
                }
                (Err(e1), Err(e2)) => prop_assert_eq!(e1, e2),
                other => prop_assert!(false, "asymmetric outcome {:?}", other),
            }
        }

        #[test]
        fn cosine_is_scale_invariant(
            a in prop::collection::vec(-10.0f64..10.0, 8),
            b in prop::collection::vec(-10.0f64..10.0, 8),
            alpha in 0.01f64..100.0,
        ) {
            prop_assume!(a.iter().map(|x| x * x).sum::<f64>() > 1e-6);
            prop_assume!(b.iter().map(|x| x * x).sum::<f64>() > 1e-6);
            let scaled: Vec<f64> = a.iter().map(|x| alpha * x).collect();
            let c1 = cosine_similarity(&a, &b).unwrap();
            let c2 = cosine_similarity(&scaled, &b).unwrap();
            prop_assert!((c1 - c2).abs() <= 1e-12);
            prop_assert!((c1 - cosine_similarity(&b, &a).unwrap()).abs() <= 1e-15);
        }
    }
}
