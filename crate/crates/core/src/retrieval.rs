//! Descriptor databases, top-N retrieval, Recall@N and precision-recall
//! curves under a geographic tolerance, plus SAD and PCA baselines.

use crate::contrastive::cosine_sim;
use crate::error::{Error, Result};
use crate::event::{EventHistogram, Position};
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub theta_m: f64,
    pub n_values: Vec<usize>,
    pub pca_k: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            theta_m: 30.0,
            n_values: vec![1, 5, 10, 20],
            pca_k: 64,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta_m > 0.0 && self.theta_m.is_finite()) {
            return Err(Error::InvalidConfig(format!("eval.theta_m must be positive, got {}", self.theta_m)));
        }
        if self.n_values.is_empty() || self.n_values.contains(&0) {
            return Err(Error::InvalidConfig("eval.n_values must be a non-empty list of N >= 1".into()));
        }
        if self.pca_k == 0 {
            return Err(Error::InvalidConfig("eval.pca_k must be at least 1".into()));
        }
        Ok(())
    }

    pub fn max_n(&self) -> usize {
        self.n_values.iter().copied().max().unwrap_or(1)
    }
}

/// Identity and ground-truth position of one database row or query.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaceMeta {
    pub place_id: u32,
    pub traverse_id: u32,
    pub position: Position,
}

/// A ranked candidate; higher score is better.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ranked {
    pub row: usize,
    pub score: f64,
}

/// Sorts by descending score, ties by ascending place id and then row.
fn rank(mut scored: Vec<Ranked>, meta: &[PlaceMeta]) -> Vec<Ranked> {
    scored.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(Ordering::Equal)
            .then(meta[a.row].place_id.cmp(&meta[b.row].place_id))
            .then(a.row.cmp(&b.row))
    });
    scored
}

#[derive(Clone, Debug, Default)]
pub struct DescriptorDb {
    dim: usize,
    rows: Vec<Vec<f64>>,
    meta: Vec<PlaceMeta>,
    keys: HashSet<(u32, u32)>,
}

impl DescriptorDb {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Default::default()
        }
    }

    pub fn push(&mut self, meta: PlaceMeta, descriptor: Vec<f64>) -> Result<()> {
        if descriptor.len() != self.dim {
            return Err(Error::Shape(format!(
                "descriptor of length {} in a database of dimension {}",
                descriptor.len(),
                self.dim
            )));
        }
        if descriptor.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("database descriptor".into()));
        }
        if descriptor.iter().all(|&v| v == 0.0) {
            return Err(Error::ZeroNorm);
        }
        if !self.keys.insert((meta.traverse_id, meta.place_id)) {
            return Err(Error::DuplicateEntry {
                traverse: meta.traverse_id,
                place: meta.place_id,
            });
        }
        self.rows.push(descriptor);
        self.meta.push(meta);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn meta(&self) -> &[PlaceMeta] {
        &self.meta
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    /// The `n` rows most cosine-similar to `q` (all rows if `n >= len`).
    pub fn query_topn(&self, q: &[f64], n: usize) -> Result<Vec<Ranked>> {
        if self.is_empty() {
            return Err(Error::EmptyDatabase);
        }
        if n == 0 {
            return Err(Error::InvalidConfig("query_topn needs n >= 1".into()));
        }
        let scored = self
            .rows
            .iter()
            .enumerate()
            .map(|(row, r)| Ok(Ranked { row, score: cosine_sim(q, r)? }))
            .collect::<Result<Vec<_>>>()?;
        let mut ranked = rank(scored, &self.meta);
        ranked.truncate(n);
        Ok(ranked)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub place_id: u32,
    pub traverse_id: u32,
    pub similarity: f64,
    pub distance_m: f64,
    pub correct: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub query: PlaceMeta,
    pub matches: Vec<Match>,
    /// Some reference lies within the tolerance.
    pub has_valid_match: bool,
}

impl QueryResult {
    pub fn top1_score(&self) -> Option<f64> {
        self.matches.first().map(|m| m.similarity)
    }

    fn correct_within(&self, n: usize) -> bool {
        self.matches.iter().take(n).any(|m| m.correct)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub queries: Vec<QueryResult>,
}

impl RetrievalResult {
    pub fn valid_count(&self) -> usize {
        self.queries.iter().filter(|q| q.has_valid_match).count()
    }

    pub fn excluded_count(&self) -> usize {
        self.queries.len() - self.valid_count()
    }

    pub fn write_report(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Turns a full ranking into a query result keeping the top `keep`.
pub fn score_query(query: PlaceMeta, ranking: &[Ranked], refs: &[PlaceMeta], keep: usize, theta_m: f64) -> QueryResult {
    let matches = ranking
        .iter()
        .take(keep)
        .map(|r| {
            let m = refs[r.row];
            let distance_m = query.position.distance_m(&m.position);
            Match {
                place_id: m.place_id,
                traverse_id: m.traverse_id,
                similarity: r.score,
                distance_m,
                correct: distance_m <= theta_m,
            }
        })
        .collect();
    QueryResult {
        query,
        matches,
        has_valid_match: refs.iter().any(|m| query.position.distance_m(&m.position) <= theta_m),
    }
}

/// Runs every query against the database, keeping `max(n_values)` matches.
pub fn evaluate(db: &DescriptorDb, queries: &[(PlaceMeta, Vec<f64>)], cfg: &EvalConfig) -> Result<RetrievalResult> {
    cfg.validate()?;
    let keep = cfg.max_n();
    let queries = queries
        .iter()
        .map(|(meta, q)| {
            let ranking = db.query_topn(q, keep)?;
            Ok(score_query(*meta, &ranking, db.meta(), keep, cfg.theta_m))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RetrievalResult { queries })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecallCurve {
    pub points: Vec<(usize, f64)>,
    pub valid_queries: usize,
    pub excluded_queries: usize,
}

impl RecallCurve {
    pub fn at(&self, n: usize) -> Option<f64> {
        self.points.iter().find(|p| p.0 == n).map(|p| p.1)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,recall\n");
        for (n, r) in &self.points {
            let _ = writeln!(s, "{n},{r}");
        }
        s
    }
}

/// Fraction of queries with a valid match whose top N holds a correct
/// reference. Queries without any reference inside the tolerance are
/// excluded and counted.
pub fn recall_at_n(results: &RetrievalResult, n_values: &[usize]) -> RecallCurve {
    let valid: Vec<&QueryResult> = results.queries.iter().filter(|q| q.has_valid_match).collect();
    let points = n_values
        .iter()
        .map(|&n| {
            let hits = valid.iter().filter(|q| q.correct_within(n)).count();
            let r = if valid.is_empty() { 0.0 } else { hits as f64 / valid.len() as f64 };
            (n, r)
        })
        .collect();
    RecallCurve {
        points,
        valid_queries: valid.len(),
        excluded_queries: results.queries.len() - valid.len(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// Thresholds from the highest to the lowest top-1 score.
    pub points: Vec<PrPoint>,
    /// Precision once every valid query is accepted (0 if never reached).
    pub precision_at_full_recall: f64,
}

impl PrCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,recall,precision\n");
        for p in &self.points {
            let _ = writeln!(s, "{},{},{}", p.threshold, p.recall, p.precision);
        }
        s
    }
}

/// Sweeps the acceptance threshold over the distinct top-1 scores. A query
/// is accepted when its top-1 score reaches the threshold; accepted queries
/// count as TP or FP by top-1 correctness and rejected ones as FN. Queries
/// without a valid match take no part.
pub fn precision_recall(results: &RetrievalResult) -> PrCurve {
    let scored: Vec<(f64, bool)> = results
        .queries
        .iter()
        .filter(|q| q.has_valid_match)
        .filter_map(|q| q.top1_score().map(|s| (s, q.matches[0].correct)))
        .collect();
    let mut thresholds: Vec<f64> = scored.iter().map(|s| s.0).collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
    thresholds.dedup();
    let total = scored.len();
    let points: Vec<PrPoint> = thresholds
        .iter()
        .map(|&tau| {
            let (mut tp, mut fp) = (0, 0);
            for &(s, correct) in &scored {
                if s >= tau {
                    if correct {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
            }
            let fn_ = total - tp - fp;
            PrPoint {
                threshold: tau,
                recall: (tp + fp) as f64 / total as f64,
                precision: if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 },
                tp,
                fp,
                fn_,
            }
        })
        .collect();
    let precision_at_full_recall = points
        .iter()
        .filter(|p| p.fn_ == 0)
        .map(|p| p.precision)
        .fold(0.0, f64::max);
    PrCurve {
        points,
        precision_at_full_recall,
    }
}

/// References ranked by ascending sum of absolute differences, ties by
/// index. Scores are negated distances.
pub fn sad_rank(refs: &[EventHistogram], query: &EventHistogram) -> Result<Vec<(usize, u64)>> {
    let mut out = refs
        .iter()
        .enumerate()
        .map(|(i, r)| Ok((i, query.sad(r)?)))
        .collect::<Result<Vec<_>>>()?;
    out.sort_by_key(|&(i, d)| (d, i));
    Ok(out)
}

/// Principal-component projection fitted on reference vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Pca {
    mean: Vec<f64>,
    /// `k` orthonormal directions of length `dim`.
    components: Vec<Vec<f64>>,
}

impl Pca {
    /// Fits via the eigendecomposition of the `M x M` Gram matrix of the
    /// centered data. `k` is reduced (with a warning) to the data rank.
    pub fn fit(refs: &[Vec<f64>], k: usize) -> Result<Self> {
        let m = refs.len();
        if m < 2 {
            return Err(Error::InvalidConfig(format!("PCA needs at least 2 references, got {m}")));
        }
        let dim = refs[0].len();
        if refs.iter().any(|r| r.len() != dim) {
            return Err(Error::Shape("PCA references differ in length".into()));
        }
        let mut mean = vec![0.0; dim];
        for r in refs {
            for (a, v) in mean.iter_mut().zip(r) {
                *a += v;
            }
        }
        mean.iter_mut().for_each(|a| *a /= m as f64);
        let x = DMatrix::from_fn(m, dim, |i, j| refs[i][j] - mean[j]);
        let gram = &x * x.transpose();
        let eig = SymmetricEigen::new(gram);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap_or(Ordering::Equal));
        let top = eig.eigenvalues[order[0]].max(0.0);
        let tol = top * 1e-10 * m as f64;
        let rank = order.iter().filter(|&&i| eig.eigenvalues[i] > tol && eig.eigenvalues[i] > 0.0).count();
        let limit = k.min(dim).min(rank);
        if limit < k {
            log::warn!("PCA: requested {k} components but the data rank allows {limit}; using {limit}");
        }
        let components = order[..limit]
            .iter()
            .map(|&i| {
                let v = eig.eigenvectors.column(i);
                let u = x.transpose() * v;
                let norm = u.norm();
                u.iter().map(|a| a / norm).collect()
            })
            .collect();
        Ok(Self { mean, components })
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.components
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.mean.len() {
            return Err(Error::Shape(format!("PCA input of length {} (expected {})", x.len(), self.mean.len())));
        }
        Ok(self
            .components
            .iter()
            .map(|c| c.iter().zip(x).zip(&self.mean).map(|((a, v), m)| a * (v - m)).sum())
            .collect())
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// References ranked by ascending Euclidean distance in the projected
/// space, ties by index.
pub fn pca_rank(pca: &Pca, projected_refs: &[Vec<f64>], query: &[f64]) -> Result<Vec<(usize, f64)>> {
    let q = pca.project(query)?;
    let mut out: Vec<(usize, f64)> = projected_refs.iter().map(|r| euclidean(r, &q)).enumerate().collect();
    out.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
    Ok(out)
}

/// Ranks from a baseline distance list (ascending) as scored candidates
/// with negated distances; the order is kept.
pub fn distances_to_ranking(dist: &[(usize, f64)]) -> Vec<Ranked> {
    dist.iter().map(|&(row, d)| Ranked { row, score: -d }).collect()
}

/// Baseline evaluation from per-query rankings.
pub fn evaluate_rankings(
    refs: &[PlaceMeta],
    queries: &[PlaceMeta],
    rankings: &[Vec<Ranked>],
    cfg: &EvalConfig,
) -> Result<RetrievalResult> {
    cfg.validate()?;
    if queries.len() != rankings.len() {
        return Err(Error::Shape("one ranking per query required".into()));
    }
    Ok(RetrievalResult {
        queries: queries
            .iter()
            .zip(rankings)
            .map(|(q, r)| score_query(*q, r, refs, cfg.max_n(), cfg.theta_m))
            .collect(),
    })
}

pub fn sad_evaluate(
    refs: &[(PlaceMeta, EventHistogram)],
    queries: &[(PlaceMeta, EventHistogram)],
    cfg: &EvalConfig,
) -> Result<RetrievalResult> {
    let ref_h: Vec<EventHistogram> = refs.iter().map(|r| r.1.clone()).collect();
    let rankings = queries
        .iter()
        .map(|(_, h)| {
            let d: Vec<(usize, f64)> = sad_rank(&ref_h, h)?.into_iter().map(|(i, d)| (i, d as f64)).collect();
            Ok(distances_to_ranking(&d))
        })
        .collect::<Result<Vec<_>>>()?;
    let ref_meta: Vec<PlaceMeta> = refs.iter().map(|r| r.0).collect();
    let q_meta: Vec<PlaceMeta> = queries.iter().map(|q| q.0).collect();
    evaluate_rankings(&ref_meta, &q_meta, &rankings, cfg)
}

pub fn pca_evaluate(
    refs: &[(PlaceMeta, EventHistogram)],
    queries: &[(PlaceMeta, EventHistogram)],
    cfg: &EvalConfig,
) -> Result<RetrievalResult> {
    let ref_x: Vec<Vec<f64>> = refs.iter().map(|r| r.1.to_f64()).collect();
    let pca = Pca::fit(&ref_x, cfg.pca_k)?;
    let projected = ref_x.iter().map(|r| pca.project(r)).collect::<Result<Vec<_>>>()?;
    let rankings = queries
        .iter()
        .map(|(_, h)| Ok(distances_to_ranking(&pca_rank(&pca, &projected, &h.to_f64())?)))
        .collect::<Result<Vec<_>>>()?;
    let ref_meta: Vec<PlaceMeta> = refs.iter().map(|r| r.0).collect();
    let q_meta: Vec<PlaceMeta> = queries.iter().map(|q| q.0).collect();
    evaluate_rankings(&ref_meta, &q_meta, &rankings, cfg)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::Geometry;
    use crate::rng::rng_from;
    use proptest::prelude::*;
    use rand::Rng;

    fn meta(place: u32, traverse: u32, pos: f64) -> PlaceMeta {
        PlaceMeta {
            place_id: place,
            traverse_id: traverse,
            position: Position::Route(pos),
        }
    }

    fn random_db(seed: u64, m: usize, dim: usize) -> DescriptorDb {
        let mut rng = rng_from(seed);
        let mut db = DescriptorDb::new(dim);
        for i in 0..m {
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            db.push(meta(i as u32, 0, i as f64 * 10.0), v).unwrap();
        }
        db
    }

    #[test]
    fn self_retrieval_and_exhaustive() {
        let db = random_db(1, 30, 8);
        let q = db.row(7).to_vec();
        let top = db.query_topn(&q, 3).unwrap();
        assert_eq!(top[0].row, 7);
        assert!((top[0].score - 1.0).abs() < 1e-12);
        let all = db.query_topn(&q, 100).unwrap();
        assert_eq!(all.len(), 30);
        assert!(all.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn database_errors() {
        let mut db = DescriptorDb::new(2);
        assert!(matches!(db.query_topn(&[1.0, 0.0], 1), Err(Error::EmptyDatabase)));
        db.push(meta(0, 0, 0.0), vec![1.0, 0.0]).unwrap();
        assert!(matches!(
            db.push(meta(0, 0, 0.0), vec![0.0, 1.0]),
            Err(Error::DuplicateEntry { .. })
        ));
        assert!(matches!(db.push(meta(1, 0, 0.0), vec![0.0, 0.0]), Err(Error::ZeroNorm)));
        assert!(db.push(meta(2, 0, 0.0), vec![1.0]).is_err());
    }

    #[test]
    fn ties_break_by_place_id() {
        let mut db = DescriptorDb::new(2);
        db.push(meta(5, 0, 0.0), vec![1.0, 0.0]).unwrap();
        db.push(meta(2, 0, 0.0), vec![2.0, 0.0]).unwrap();
        db.push(meta(9, 0, 0.0), vec![0.0, 1.0]).unwrap();
        let r = db.query_topn(&[3.0, 0.0], 3).unwrap();
        let ids: Vec<u32> = r.iter().map(|x| db.meta()[x.row].place_id).collect();
        assert_eq!(ids, vec![2, 5, 9]);
    }

    #[test]
    fn perfect_retrieval_recall_and_precision() {
        let db = random_db(2, 20, 6);
        let queries: Vec<(PlaceMeta, Vec<f64>)> =
            (0..20).map(|i| (meta(i, 1, i as f64 * 10.0), db.row(i as usize).to_vec())).collect();
        let cfg = EvalConfig {
            theta_m: 5.0,
            n_values: vec![1, 20],
            ..Default::default()
        };
        let res = evaluate(&db, &queries, &cfg).unwrap();
        let rc = recall_at_n(&res, &cfg.n_values);
        assert_eq!(rc.at(1), Some(1.0));
        assert_eq!(rc.at(20), Some(1.0));
        let pr = precision_recall(&res);
        assert!(pr.points.iter().all(|p| p.precision == 1.0));
        assert_eq!(pr.precision_at_full_recall, 1.0);
    }

    #[test]
    fn half_correct_uniform_scores() {
        let refs = vec![meta(0, 0, 0.0), meta(1, 0, 100.0)];
        let queries: Vec<PlaceMeta> = (0..4).map(|i| meta(i, 1, if i % 2 == 0 { 0.0 } else { 100.0 })).collect();
        // every query's top-1 is reference 0 at the same score
        let rankings: Vec<Vec<Ranked>> = (0..4)
            .map(|_| vec![Ranked { row: 0, score: 0.5 }, Ranked { row: 1, score: 0.1 }])
            .collect();
        let res = evaluate_rankings(&refs, &queries, &rankings, &EvalConfig::default()).unwrap();
        let pr = precision_recall(&res);
        assert_eq!(pr.points.len(), 1);
        assert_eq!(pr.points[0].recall, 1.0);
        assert_eq!(pr.precision_at_full_recall, 0.5);
    }

    #[test]
    fn queries_without_match_are_excluded() {
        let refs = vec![meta(0, 0, 0.0)];
        let queries = vec![meta(0, 1, 0.0), meta(1, 1, 500.0)];
        let rankings = vec![vec![Ranked { row: 0, score: 1.0 }]; 2];
        let res = evaluate_rankings(&refs, &queries, &rankings, &EvalConfig::default()).unwrap();
        let rc = recall_at_n(&res, &[1]);
        assert_eq!((rc.valid_queries, rc.excluded_queries), (1, 1));
        assert_eq!(rc.at(1), Some(1.0));
    }

    fn hist(seed: u64) -> EventHistogram {
        let mut rng = rng_from(seed);
        let counts = (0..18).map(|_| rng.random_range(0..5)).collect();
        EventHistogram::from_counts(Geometry::new(3, 3), (0, 1), counts).unwrap()
    }

    #[test]
    fn sad_matches_scan_and_is_symmetric() {
        let refs: Vec<EventHistogram> = (0..10).map(hist).collect();
        let q = refs[4].clone();
        let r = sad_rank(&refs, &q).unwrap();
        assert_eq!(r[0], (4, 0));
        for (i, h) in refs.iter().enumerate() {
            let scan: u64 = h
                .counts()
                .iter()
                .zip(q.counts())
                .map(|(a, b)| (i64::from(*a) - i64::from(*b)).unsigned_abs())
                .sum();
            assert_eq!(r.iter().find(|x| x.0 == i).unwrap().1, scan);
            assert_eq!(h.sad(&q).unwrap(), q.sad(h).unwrap());
        }
        let other = EventHistogram::zeros(Geometry::new(2, 2), (0, 1));
        assert!(sad_rank(&refs, &other).is_err());
    }

    #[test]
    fn pca_recovers_known_axis() {
        let mut rng = rng_from(3);
        let axis = [0.6, 0.8];
        let refs: Vec<Vec<f64>> = (0..200)
            .map(|_| {
                let a: f64 = rng.random_range(-10.0..10.0);
                let b: f64 = rng.random_range(-0.1..0.1);
                vec![a * axis[0] - b * axis[1] + 3.0, a * axis[1] + b * axis[0] - 1.0]
            })
            .collect();
        let pca = Pca::fit(&refs, 1).unwrap();
        let c = &pca.components()[0];
        let dot = (c[0] * axis[0] + c[1] * axis[1]).abs();
        assert!((dot - 1.0).abs() < 1e-6, "{dot}");
    }

    #[test]
    fn pca_degenerate_and_full_rank() {
        let same = vec![vec![1.0, 2.0, 3.0]; 5];
        let pca = Pca::fit(&same, 2).unwrap();
        assert_eq!(pca.k(), 0);
        let proj: Vec<Vec<f64>> = same.iter().map(|r| pca.project(r).unwrap()).collect();
        let r = pca_rank(&pca, &proj, &[0.0, 0.0, 0.0]).unwrap();
        assert!(r.iter().all(|x| x.1 == 0.0));

        let mut rng = rng_from(8);
        let refs: Vec<Vec<f64>> = (0..12).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let pca = Pca::fit(&refs, 4).unwrap();
        assert_eq!(pca.k(), 4);
        let proj: Vec<Vec<f64>> = refs.iter().map(|r| pca.project(r).unwrap()).collect();
        let q: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let got: Vec<usize> = pca_rank(&pca, &proj, &q).unwrap().iter().map(|x| x.0).collect();
        let mut raw: Vec<(usize, f64)> = refs.iter().map(|r| euclidean(r, &q)).enumerate().collect();
        raw.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        assert_eq!(got, raw.iter().map(|x| x.0).collect::<Vec<_>>());
    }

    proptest! {
        #[test]
        fn recall_monotone_and_pr_counts_consistent(seed in 0u64..1000) {
            let db = random_db(seed, 40, 5);
            let mut rng = rng_from(seed ^ 77);
            let queries: Vec<(PlaceMeta, Vec<f64>)> = (0..15)
                .map(|i| {
                    let v = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
                    (meta(i, 1, rng.random_range(0.0..500.0)), v)
                })
                .collect();
            let cfg = EvalConfig { theta_m: 15.0, n_values: vec![1, 2, 5, 10, 40], ..Default::default() };
            let res = evaluate(&db, &queries, &cfg).unwrap();
            let rc = recall_at_n(&res, &cfg.n_values);
            prop_assert!(rc.points.windows(2).all(|w| w[0].1 <= w[1].1));
            prop_assert!(rc.points.iter().all(|p| (0.0..=1.0).contains(&p.1)));
            let valid = res.valid_count();
            for p in precision_recall(&res).points {
                prop_assert_eq!(p.tp + p.fp + p.fn_, valid);
            }
            // common positive rescaling leaves everything unchanged
            let mut scaled = DescriptorDb::new(5);
            for i in 0..db.len() {
                scaled.push(db.meta()[i], db.row(i).iter().map(|v| v * 4.0).collect()).unwrap();
            }
            let res2 = evaluate(&scaled, &queries, &cfg).unwrap();
            prop_assert_eq!(recall_at_n(&res2, &cfg.n_values), rc);
        }
    }
}
