//! Few-shot exemplar selection.
//!
//! Two routes: a manually curated id list, or embedding-based selection that
//! clusters the candidate pool with k-means and then takes, from each of the
//! `shots` clusters nearest the query, the member closest to the query.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_SHOTS: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum SelectionError {
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,
    #[error("embedding has a non-finite entry")]
    NonFinite,
    #[error("embedding is empty")]
    Empty,
    #[error("k = {k} exceeds the {available} available vectors")]
    TooManyClusters { k: usize, available: usize },
    #[error("k must be at least 1")]
    ZeroClusters,
    #[error("max_iters must be at least 1")]
    ZeroIterations,
    #[error("shots = {shots} exceeds {available}")]
    TooManyShots { shots: usize, available: usize },
    #[error("few-shot selection needs at least one shot")]
    ZeroShots,
    #[error("duplicate exemplar id {0}")]
    DuplicateId(String),
    #[error("candidate {0} is not in the clustering")]
    UnknownCandidate(String),
}

/// A finite, non-empty embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = SelectionError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        if values.is_empty() {
            return Err(SelectionError::Empty);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SelectionError::NonFinite);
        }
        Ok(EmbeddingVector(values))
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, SelectionError> {
        values.try_into()
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, SelectionError> {
    if a.dim() != b.dim() {
        return Err(SelectionError::DimMismatch(a.dim(), b.dim()));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(SelectionError::ZeroVector);
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub k: usize,
    pub seed: u64,
    pub centroids: Vec<EmbeddingVector>,
    pub assignment: BTreeMap<String, usize>,
    /// Inertia after each assignment step.
    pub inertia_trace: Vec<f64>,
    pub iterations: usize,
}

impl Clustering {
    pub fn inertia(&self) -> f64 {
        self.inertia_trace.last().copied().unwrap_or(0.0)
    }

    pub fn members(&self, cluster: usize) -> impl Iterator<Item = &str> {
        self.assignment
            .iter()
            .filter(move |(_, &c)| c == cluster)
            .map(|(id, _)| id.as_str())
    }
}

fn check_dims(vectors: &BTreeMap<String, EmbeddingVector>) -> Result<usize, SelectionError> {
    let mut it = vectors.values();
    let dim = it.next().map_or(0, EmbeddingVector::dim);
    for v in it {
        if v.dim() != dim {
            return Err(SelectionError::DimMismatch(dim, v.dim()));
        }
    }
    Ok(dim)
}

/// k-means++ seeding driven by a ChaCha stream derived from `seed`.
fn seed_centroids(points: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut chosen: Vec<usize> = vec![rng.random_range(0..points.len())];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                if target < w {
                    pick = Some(i);
                    break;
                }
                target -= w;
            }
            // rounding can leave `target` just past the last positive weight
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).expect("positive weight"))
        } else {
            // all remaining points coincide with a centroid: take an unused one
            let unused: Vec<usize> = (0..points.len()).filter(|i| !chosen.contains(i)).collect();
            unused[rng.random_range(0..unused.len())]
        };
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, points[next]));
        }
    }
    chosen.into_iter().map(|i| points[i].to_vec()).collect()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(c, centroid)| (c, sq_dist(point, centroid)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

/// Lloyd's algorithm with seeded k-means++ initialization.
///
/// Stops when no assignment changes or after `max_iters` assignment steps.
/// An empty cluster is reseeded with the point farthest from its own centroid.
pub fn kmeans(
    vectors: &BTreeMap<String, EmbeddingVector>,
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<Clustering, SelectionError> {
    if k == 0 {
        return Err(SelectionError::ZeroClusters);
    }
    if max_iters == 0 {
        return Err(SelectionError::ZeroIterations);
    }
    if k > vectors.len() {
        return Err(SelectionError::TooManyClusters {
            k,
            available: vectors.len(),
        });
    }
    let dim = check_dims(vectors)?;
    let ids: Vec<&String> = vectors.keys().collect();
    let points: Vec<&[f64]> = vectors.values().map(EmbeddingVector::values).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(&points, k, &mut rng);

    let mut labels: Vec<usize> = vec![usize::MAX; points.len()];
    let mut trace = Vec::new();
    let mut iterations = 0;
    loop {
        iterations += 1;
        let mut changed = false;
        let mut inertia = 0.0;
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest(p, &centroids);
            inertia += d;
            if labels[i] != c {
                labels[i] = c;
                changed = true;
            }
        }
        trace.push(inertia);
        if !changed || iterations >= max_iters {
            break;
        }

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            counts[labels[i]] += 1;
            for (s, v) in sums[labels[i]].iter_mut().zip(p.iter()) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let farthest = (0..points.len())
                .filter(|&i| counts[labels[i]] > 1)
                .map(|i| (i, sq_dist(points[i], &centroids[labels[i]])))
                .fold(None::<(usize, f64)>, |best, cur| match best {
                    Some(b) if b.1 >= cur.1 => Some(b),
                    _ => Some(cur),
                });
            if let Some((i, _)) = farthest {
                counts[labels[i]] -= 1;
                counts[c] = 1;
                labels[i] = c;
                centroids[c] = points[i].to_vec();
            }
        }
    }

    let assignment = ids
        .into_iter()
        .zip(&labels)
        .map(|(id, &c)| (id.clone(), c))
        .collect();
    let centroids = centroids
        .into_iter()
        .map(|c| EmbeddingVector::new(c).expect("centroid of finite points is finite"))
        .collect();
    Ok(Clustering {
        k,
        seed,
        centroids,
        assignment,
        inertia_trace: trace,
        iterations,
    })
}

/// Picks one exemplar from each of the `shots` clusters whose centroid is most
/// similar to the query; returns ids by descending similarity, ties to the smaller id.
pub fn select_exemplars(
    clustering: &Clustering,
    query: &EmbeddingVector,
    shots: usize,
    candidates: &BTreeMap<String, EmbeddingVector>,
) -> Result<Vec<String>, SelectionError> {
    if shots == 0 {
        return Err(SelectionError::ZeroShots);
    }
    if shots > clustering.k {
        return Err(SelectionError::TooManyShots {
            shots,
            available: clustering.k,
        });
    }

    let mut best_per_cluster: BTreeMap<usize, (f64, &str)> = BTreeMap::new();
    for (id, v) in candidates {
        let &cluster = clustering
            .assignment
            .get(id)
            .ok_or_else(|| SelectionError::UnknownCandidate(id.clone()))?;
        let sim = cosine_similarity(v, query)?;
        let entry = best_per_cluster.entry(cluster).or_insert((sim, id));
        // ids iterate in ascending order, so strict > keeps the smaller id on ties
        if sim > entry.0 {
            *entry = (sim, id);
        }
    }

    let mut clusters: Vec<(f64, usize)> = best_per_cluster
        .keys()
        .map(|&c| {
            let sim = cosine_similarity(&clustering.centroids[c], query).unwrap_or(f64::NEG_INFINITY);
            (sim, c)
        })
        .collect();
    if clusters.len() < shots {
        return Err(SelectionError::TooManyShots {
            shots,
            available: clusters.len(),
        });
    }
    clusters.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let mut picked: Vec<(f64, &str)> = clusters[..shots]
        .iter()
        .map(|&(_, c)| best_per_cluster[&c])
        .collect();
    picked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
    Ok(picked.into_iter().map(|(_, id)| id.to_string()).collect())
}

/// Rejects curated lists with repeated ids.
pub fn validate_curated(curated: &[String]) -> Result<(), SelectionError> {
    let mut seen = BTreeSet::new();
    for id in curated {
        if !seen.insert(id) {
            return Err(SelectionError::DuplicateId(id.clone()));
        }
    }
    Ok(())
}

/// The first `shots` ids of a curated list.
pub fn manual_exemplars(curated: &[String], shots: usize) -> Result<Vec<String>, SelectionError> {
    validate_curated(curated)?;
    if shots == 0 {
        return Err(SelectionError::ZeroShots);
    }
    if shots > curated.len() {
        return Err(SelectionError::TooManyShots {
            shots,
            available: curated.len(),
        });
    }
    Ok(curated[..shots].to_vec())
}
