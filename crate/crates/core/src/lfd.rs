//! Layer-wise feature disentanglement.
//!
//! Samples of one layer's feature map are grouped by the connected components
//! of their first-neighbor graph, where each sample is represented by its
//! per-channel spatial mean and compared under cosine similarity.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::FeatureMap;

/// Norm floor applied before dividing by an instance-mean vector's length.
pub const NORM_FLOOR: f64 = 1e-12;

/// Row `i` holds the per-channel spatial means of sample `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceStats<T> {
    batch: usize,
    channels: usize,
    means: Vec<T>,
}

impl<T: Scalar> InstanceStats<T> {
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let channels = rows.first().map(Vec::len).ok_or(Error::EmptySelection)?;
        if channels == 0 || rows.iter().any(|r| r.len() != channels) {
            return Err(Error::Dims("instance rows must share a nonzero length".into()));
        }
        let means: Vec<T> = rows.iter().flatten().copied().collect();
        if means.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("instance stats"));
        }
        Ok(InstanceStats {
            batch: rows.len(),
            channels,
            means,
        })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.means[i * self.channels..(i + 1) * self.channels]
    }
}

/// Dense symmetric `B x B` cosine similarity matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix<T> {
    size: usize,
    sim: Vec<T>,
}

impl<T: Scalar> SimilarityMatrix<T> {
    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.sim[i * self.size + j]
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.sim[i * self.size..(i + 1) * self.size]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FirstNeighborGraph {
    first: Vec<usize>,
    adjacency: Vec<bool>,
}

impl FirstNeighborGraph {
    pub fn len(&self) -> usize {
        self.first.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first.is_empty()
    }

    /// `first()[i]` is the most similar sample other than `i`.
    pub fn first(&self) -> &[usize] {
        &self.first
    }

    #[inline]
    pub fn linked(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.first.len() + j]
    }

    /// Connected components, each sorted ascending and ordered by their
    /// smallest member.
    pub fn components(&self) -> Partition {
        let n = self.first.len();
        let mut seen = vec![false; n];
        let mut groups = Vec::new();
        let mut queue = VecDeque::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            queue.push_back(start);
            let mut group = Vec::new();
            while let Some(i) = queue.pop_front() {
                group.push(i);
                for j in 0..n {
                    if !seen[j] && self.linked(i, j) {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
            group.sort_unstable();
            groups.push(group);
        }
        Partition { groups }
    }
}

/// Disjoint groups of batch indices covering `0..B`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Partition {
    groups: Vec<Vec<usize>>,
}

impl Partition {
    /// Checks that the groups are nonempty, disjoint and cover `0..batch`.
    pub fn new(groups: Vec<Vec<usize>>, batch: usize) -> Result<Self> {
        let p = Partition { groups };
        p.validate(batch)?;
        Ok(p)
    }

    pub fn single(batch: usize) -> Self {
        Partition {
            groups: vec![(0..batch).collect()],
        }
    }

    /// Builds groups from one label per sample, in order of first appearance.
    pub fn from_labels(labels: &[usize]) -> Self {
        let mut order: Vec<usize> = Vec::new();
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for (i, &l) in labels.iter().enumerate() {
            match order.iter().position(|&o| o == l) {
                Some(g) => groups[g].push(i),
                None => {
                    order.push(l);
                    groups.push(vec![i]);
                }
            }
        }
        Partition { groups }
    }

    pub fn validate(&self, batch: usize) -> Result<()> {
        if self.groups.is_empty() {
            return Err(Error::Partition("no groups".into()));
        }
        let mut owner = vec![false; batch];
        for g in &self.groups {
            if g.is_empty() {
                return Err(Error::Partition("empty group".into()));
            }
            for &i in g {
                if i >= batch {
                    return Err(Error::Partition(format!(
                        "index {i} outside batch of {batch}"
                    )));
                }
                if std::mem::replace(&mut owner[i], true) {
                    return Err(Error::Partition(format!("index {i} appears twice")));
                }
            }
        }
        if let Some(missing) = owner.iter().position(|o| !o) {
            return Err(Error::Partition(format!("index {missing} not covered")));
        }
        Ok(())
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    /// Number of groups.
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Group id of every sample.
    pub fn labels(&self) -> Vec<usize> {
        let n: usize = self.groups.iter().map(Vec::len).sum();
        let mut labels = vec![0; n];
        for (g, members) in self.groups.iter().enumerate() {
            for &i in members {
                labels[i] = g;
            }
        }
        labels
    }
}

pub fn instance_channel_means<T: Scalar>(f: &FeatureMap<T>) -> InstanceStats<T> {
    let (batch, channels) = (f.batch(), f.channels());
    let l = f.spatial() as f64;
    let mut means = Vec::with_capacity(batch * channels);
    for b in 0..batch {
        for c in 0..channels {
            let sum: f64 = f.plane(b, c).iter().map(|v| v.to_f64_lossless()).sum();
            means.push(T::from_f64_lossy(sum / l));
        }
    }
    InstanceStats {
        batch,
        channels,
        means,
    }
}

pub fn cosine_similarity_matrix<T: Scalar>(s: &InstanceStats<T>) -> SimilarityMatrix<T> {
    let n = s.batch();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| s.row(i).iter().map(|v| v.to_f64_lossless()).collect())
        .collect();
    let norms: Vec<f64> = rows
        .iter()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_FLOOR))
        .collect();
    let mut sim = vec![T::zero(); n * n];
    for i in 0..n {
        for j in i..n {
            let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
            let v = T::from_f64_lossy((dot / (norms[i] * norms[j])).clamp(-1.0, 1.0));
            sim[i * n + j] = v;
            sim[j * n + i] = v;
        }
    }
    SimilarityMatrix { size: n, sim }
}

pub fn first_neighbor_adjacency<T: Scalar>(m: &SimilarityMatrix<T>) -> Result<FirstNeighborGraph> {
    let n = m.size();
    if n < 2 {
        return Err(Error::Contract(
            "first-neighbor graph needs at least two samples".into(),
        ));
    }
    let first: Vec<usize> = (0..n)
        .map(|i| {
            let row = m.row(i);
            let mut best = if i == 0 { 1 } else { 0 };
            for j in best + 1..n {
                if j != i && row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect();
    let mut adjacency = vec![false; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j && (first[i] == j || first[j] == i || first[i] == first[j]) {
                adjacency[i * n + j] = true;
            }
        }
    }
    Ok(FirstNeighborGraph { first, adjacency })
}

/// Groups the batch by one first-neighbor pass. A batch of one sample is its
/// own group.
pub fn lfd_partition<T: Scalar>(f: &FeatureMap<T>) -> Partition {
    if f.batch() < 2 {
        return Partition::single(f.batch());
    }
    let sim = cosine_similarity_matrix(&instance_channel_means(f));
    first_neighbor_adjacency(&sim)
        .expect("batch has at least two samples")
        .components()
}
