//! Supporting/contrasting exemplar retrieval.
//!
//! Supporting exemplars are the exact Euclidean nearest neighbours of the
//! target (k-d tree). Contrasting exemplars come from the coarse
//! quantization: take the k-means centroid farthest from the target and
//! return the members closest to that centroid. Distance ties are broken
//! by ascending sample id.

mod kdtree;
mod kmeans;

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use kdtree::{KdTree, Neighbor};
pub use kmeans::{kmeans, KMeans};

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use kmeans::sq_dist;

pub const DEFAULT_CLUSTERS: usize = 50;
pub const DEFAULT_K: usize = 5;

const MAGIC: &[u8; 8] = b"VQGXIDX\0";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Exemplars {
    pub supporting: Vec<String>,
    pub contrasting: Vec<String>,
}

/// Positions into the index, as returned by the `*_positions` queries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExemplarPositions {
    pub supporting: Vec<usize>,
    pub contrasting: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct ExemplarIndex {
    ids: Vec<String>,
    features: Vec<Vec<f64>>,
    centroids: Vec<Vec<f64>>,
    assignment: Vec<usize>,
    seed: u64,
    tree: KdTree,
    /// Position of each sample in ascending-id order.
    rank: Vec<usize>,
    by_id: HashMap<String, usize>,
}

impl ExemplarIndex {
    pub fn build(entries: Vec<(String, Vec<f64>)>, n_clusters: usize, seed: u64) -> Result<Self> {
        if entries.len() < 2 {
            return Err(Error::invalid("an exemplar index needs at least 2 samples"));
        }
        if n_clusters > entries.len() {
            return Err(Error::invalid(format!(
                "{n_clusters} clusters requested for {} samples",
                entries.len()
            )));
        }
        let dim = entries[0].1.len();
        if let Some((id, _)) = entries.iter().find(|(_, f)| f.len() != dim) {
            return Err(Error::Sample {
                id: id.clone(),
                msg: format!("feature length differs from {dim}"),
            });
        }
        let (ids, features): (Vec<String>, Vec<Vec<f64>>) = entries.into_iter().unzip();
        let km = kmeans(&features, n_clusters, seed)?;
        Self::assemble(ids, features, km.centroids, km.assignment, seed)
    }

    pub fn from_dataset(dataset: &Dataset, n_clusters: usize, seed: u64) -> Result<Self> {
        let entries = dataset
            .samples
            .iter()
            .map(|s| (s.id.clone(), s.features.clone()))
            .collect();
        Self::build(entries, n_clusters, seed)
    }

    fn assemble(
        ids: Vec<String>,
        features: Vec<Vec<f64>>,
        centroids: Vec<Vec<f64>>,
        assignment: Vec<usize>,
        seed: u64,
    ) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if by_id.insert(id.clone(), i).is_some() {
                return Err(Error::Sample {
                    id: id.clone(),
                    msg: "duplicate id in exemplar index".into(),
                });
            }
        }
        let mut order: Vec<usize> = (0..ids.len()).collect();
        order.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
        let mut rank = vec![0; ids.len()];
        for (r, &i) in order.iter().enumerate() {
            rank[i] = r;
        }
        let tree = KdTree::build(&features);
        Ok(Self {
            ids,
            features,
            centroids,
            assignment,
            seed,
            tree,
            rank,
            by_id,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn n_clusters(&self) -> usize {
        self.centroids.len()
    }

    pub fn centroids(&self) -> &[Vec<f64>] {
        &self.centroids
    }

    pub fn features(&self, position: usize) -> &[f64] {
        &self.features[position]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn cluster_of(&self, id: &str) -> Option<usize> {
        self.position(id).map(|p| self.assignment[p])
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    fn check_query(&self, target_id: &str, k: usize) -> Result<usize> {
        let pos = self
            .position(target_id)
            .ok_or_else(|| Error::UnknownId(target_id.to_string()))?;
        if k == 0 || k >= self.len() {
            return Err(Error::invalid(format!(
                "k = {k} must be in 1..{} for an index of {} samples",
                self.len(),
                self.len()
            )));
        }
        Ok(pos)
    }

    fn to_ids(&self, positions: &[usize]) -> Vec<String> {
        positions.iter().map(|&p| self.ids[p].clone()).collect()
    }

    /// The `k` nearest neighbours of the query point among indexed samples.
    pub fn nearest(&self, query: &[f64], k: usize, exclude: Option<usize>) -> Vec<Neighbor> {
        self.tree.knn(&self.features, query, k, exclude, &self.rank)
    }

    pub fn find_exemplars(&self, target_id: &str, k: usize) -> Result<Exemplars> {
        let p = self.find_exemplar_positions(target_id, k)?;
        Ok(Exemplars {
            supporting: self.to_ids(&p.supporting),
            contrasting: self.to_ids(&p.contrasting),
        })
    }

    pub fn find_exemplar_positions(&self, target_id: &str, k: usize) -> Result<ExemplarPositions> {
        let pos = self.check_query(target_id, k)?;
        let target = &self.features[pos];
        let supporting = self
            .nearest(target, k, Some(pos))
            .into_iter()
            .map(|n| n.index)
            .collect();

        let mut by_far: Vec<(f64, usize)> = self
            .centroids
            .iter()
            .enumerate()
            .map(|(c, centroid)| (sq_dist(target, centroid), c))
            .collect();
        by_far.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut contrasting = Vec::with_capacity(k);
        for (_, c) in by_far {
            let mut members: Vec<(f64, usize)> = (0..self.len())
                .filter(|&i| self.assignment[i] == c && i != pos)
                .map(|i| (sq_dist(&self.features[i], &self.centroids[c]), i))
                .collect();
            members.sort_by(|a, b| a.0.total_cmp(&b.0).then(self.rank[a.1].cmp(&self.rank[b.1])));
            for (_, i) in members {
                if contrasting.len() == k {
                    break;
                }
                contrasting.push(i);
            }
            if contrasting.len() == k {
                break;
            }
        }
        Ok(ExemplarPositions {
            supporting,
            contrasting,
        })
    }

    /// Uniform draws without replacement from every sample but the target;
    /// the two sets are drawn independently.
    pub fn random_exemplars(&self, target_id: &str, k: usize, seed: u64) -> Result<Exemplars> {
        let p = self.random_exemplar_positions(target_id, k, seed)?;
        Ok(Exemplars {
            supporting: self.to_ids(&p.supporting),
            contrasting: self.to_ids(&p.contrasting),
        })
    }

    pub fn random_exemplar_positions(
        &self,
        target_id: &str,
        k: usize,
        seed: u64,
    ) -> Result<ExemplarPositions> {
        let pos = self.check_query(target_id, k)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || -> Vec<usize> {
            rand::seq::index::sample(&mut rng, self.len() - 1, k)
                .into_iter()
                .map(|j| if j >= pos { j + 1 } else { j })
                .collect()
        };
        let supporting = draw();
        let contrasting = draw();
        Ok(ExemplarPositions {
            supporting,
            contrasting,
        })
    }

    /// Versioned little-endian binary encoding:
    ///
    /// ```text
    /// magic "VQGXIDX\0" | u32 version | u32 n | u32 dim | u32 clusters | u64 seed
    /// n × (u32 byte length, utf-8 id)
    /// n × dim f64 features | clusters × dim f64 centroids | n × u32 assignment
    /// ```
    ///
    /// The k-d tree is rebuilt on load.
    pub fn to_bytes(&self) -> Vec<u8> {
        let dim = self.features[0].len();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        for v in [VERSION, self.len() as u32, dim as u32, self.n_clusters() as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.seed.to_le_bytes());
        for id in &self.ids {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        for v in self.features.iter().chain(&self.centroids).flatten() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &a in &self.assignment {
            out.extend_from_slice(&(a as u32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::invalid("not an exemplar index file (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::invalid(format!("unsupported index version {version}")));
        }
        let n = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let clusters = r.u32()? as usize;
        let seed = r.u64()?;
        let mut ids = Vec::with_capacity(n);
        for _ in 0..n {
            let len = r.u32()? as usize;
            let id = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::invalid("index id is not valid utf-8"))?;
            ids.push(id.to_string());
        }
        let mut matrix = |rows: usize| -> Result<Vec<Vec<f64>>> {
            (0..rows)
                .map(|_| (0..dim).map(|_| r.f64()).collect())
                .collect()
        };
        let features = matrix(n)?;
        let centroids = matrix(clusters)?;
        let assignment = (0..n)
            .map(|_| r.u32().map(|a| a as usize))
            .collect::<Result<Vec<_>>>()?;
        if r.at != bytes.len() {
            return Err(Error::invalid("trailing bytes after exemplar index"));
        }
        if n < 2 || clusters == 0 || assignment.iter().any(|&a| a >= clusters) {
            return Err(Error::invalid("exemplar index file is inconsistent"));
        }
        Self::assemble(ids, features, centroids, assignment, seed)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::invalid("exemplar index file is truncated"))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
