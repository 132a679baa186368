//! Perceptual cleaning: cluster synthetic images, then keep the ones whose
//! nearest real neighbour is closest within each cluster.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::LabeledImage;
use crate::error::{Error, Result};
use crate::imaging::Image;

pub const KMEANS_MAX_ITER: usize = 100;
pub const KMEANS_TOL: f64 = 1e-6;

/// Deterministic image → fixed-length feature map.
pub trait PerceptualEmbedder {
    fn dim(&self) -> usize;
    fn embed(&self, image: &Image) -> Result<Vec<f64>>;
}

/// Mean absolute 8×8 DCT-II coefficient per frequency, for luma and each
/// RGB channel: `4 × 64 = 256` dimensions.
#[derive(Debug, Clone)]
pub struct BlockDctEmbedder {
    basis: [[f64; 8]; 8],
}

impl Default for BlockDctEmbedder {
    fn default() -> Self {
        let mut basis = [[0.0; 8]; 8];
        for (u, row) in basis.iter_mut().enumerate() {
            let scale = if u == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
            for (x, b) in row.iter_mut().enumerate() {
                *b = scale * ((2 * x + 1) as f64 * u as f64 * PI / 16.0).cos();
            }
        }
        Self { basis }
    }
}

impl BlockDctEmbedder {
    fn block_dct(&self, block: &[[f64; 8]; 8]) -> [[f64; 8]; 8] {
        let mut tmp = [[0.0; 8]; 8];
        for y in 0..8 {
            for u in 0..8 {
                tmp[y][u] = (0..8).map(|x| self.basis[u][x] * block[y][x]).sum();
            }
        }
        let mut out = [[0.0; 8]; 8];
        for v in 0..8 {
            for u in 0..8 {
                out[v][u] = (0..8).map(|y| self.basis[v][y] * tmp[y][u]).sum();
            }
        }
        out
    }
}

impl PerceptualEmbedder for BlockDctEmbedder {
    fn dim(&self) -> usize {
        256
    }

    fn embed(&self, image: &Image) -> Result<Vec<f64>> {
        let img;
        let image = if image.width() < 8 || image.height() < 8 {
            img = image.resize(image.width().max(8), image.height().max(8));
            &img
        } else {
            image
        };
        let (bw, bh) = (image.width() / 8, image.height() / 8);
        let mut out = vec![0.0; 256];
        let channel = |x: usize, y: usize, ch: usize| match ch {
            0 => 0.299 * image.get(x, y, 0) + 0.587 * image.get(x, y, 1) + 0.114 * image.get(x, y, 2),
            c => image.get(x, y, c - 1),
        };
        for ch in 0..4 {
            for by in 0..bh {
                for bx in 0..bw {
                    let mut block = [[0.0; 8]; 8];
                    for (y, row) in block.iter_mut().enumerate() {
                        for (x, v) in row.iter_mut().enumerate() {
                            *v = channel(bx * 8 + x, by * 8 + y, ch);
                        }
                    }
                    let coef = self.block_dct(&block);
                    for v in 0..8 {
                        for u in 0..8 {
                            out[ch * 64 + v * 8 + u] += coef[v][u].abs();
                        }
                    }
                }
            }
        }
        let n = (bw * bh) as f64;
        out.iter_mut().for_each(|v| *v /= n);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("perceptual embedding".into()));
        }
        Ok(out)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub iterations: usize,
}

/// Lloyd's algorithm with k-means++ seeding. An emptied cluster is re-seeded
/// with the point farthest from its centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeansResult> {
    if points.is_empty() || k == 0 {
        return Err(Error::Empty("k-means needs points and k ≥ 1".into()));
    }
    if k > points.len() {
        return Err(Error::InvalidArgument(format!("k = {k} exceeds {} points", points.len())));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Shape("k-means points differ in length".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut nearest: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total <= 0.0 {
            rng.random_range(0..points.len())
        } else {
            let mut target = rng.random::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, &d) in nearest.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        };
        centroids.push(points[next].clone());
        for (n, p) in nearest.iter_mut().zip(points) {
            *n = n.min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }
    let mut assignments = vec![0; points.len()];
    let mut iterations = 0;
    for _ in 0..KMEANS_MAX_ITER {
        iterations += 1;
        for (a, p) in assignments.iter_mut().zip(points) {
            *a = (0..k)
                .min_by(|&i, &j| sq_dist(p, &centroids[i]).total_cmp(&sq_dist(p, &centroids[j])))
                .expect("k ≥ 1");
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assignments.iter().zip(points) {
            counts[a] += 1;
            sums[a].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        let mut shift = 0.0f64;
        for c in 0..k {
            let updated = if counts[c] == 0 {
                let far = (0..points.len())
                    .max_by(|&i, &j| {
                        sq_dist(&points[i], &centroids[assignments[i]])
                            .total_cmp(&sq_dist(&points[j], &centroids[assignments[j]]))
                    })
                    .expect("nonempty");
                assignments[far] = c;
                points[far].clone()
            } else {
                sums[c].iter().map(|s| s / counts[c] as f64).collect()
            };
            shift = shift.max(sq_dist(&updated, &centroids[c]).sqrt());
            centroids[c] = updated;
        }
        if shift <= KMEANS_TOL {
            break;
        }
    }
    Ok(KMeansResult { centroids, assignments, iterations })
}

/// Selection on precomputed embeddings. `real_pools[i]` lists which rows of
/// `real` are candidates for synthetic row `i`. Returns selected synthetic
/// indices in ascending order.
pub fn clean_select_embedded(
    synth: &[Vec<f64>],
    real: &[Vec<f64>],
    real_pools: &[Vec<usize>],
    k_clusters: usize,
    top_k: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    if synth.is_empty() || real.is_empty() {
        return Err(Error::Empty("cleaning needs synthetic and real images".into()));
    }
    if synth.len() < k_clusters {
        return Err(Error::InvalidArgument(format!(
            "{} synthetic images for {k_clusters} clusters",
            synth.len()
        )));
    }
    if real_pools.len() != synth.len() || real_pools.iter().any(|p| p.is_empty()) {
        return Err(Error::Shape("every synthetic image needs a nonempty real pool".into()));
    }
    let clusters = kmeans(synth, k_clusters, seed)?;
    let nearest_real: Vec<f64> = synth
        .iter()
        .zip(real_pools)
        .map(|(s, pool)| pool.iter().map(|&r| sq_dist(s, &real[r])).fold(f64::INFINITY, f64::min).sqrt())
        .collect();
    let mut selected = Vec::new();
    for c in 0..k_clusters {
        let mut members: Vec<usize> = (0..synth.len()).filter(|&i| clusters.assignments[i] == c).collect();
        members.sort_by(|&a, &b| nearest_real[a].total_cmp(&nearest_real[b]).then(a.cmp(&b)));
        selected.extend(members.into_iter().take(top_k));
    }
    selected.sort_unstable();
    Ok(selected)
}

/// Ids of the synthetic images kept by cleaning. Real candidates are limited
/// to the synthetic image's own semantic class, falling back to every real
/// image when that class has none.
pub fn clean_select(
    synth: &[LabeledImage],
    real: &[LabeledImage],
    embedder: &dyn PerceptualEmbedder,
    k_clusters: usize,
    top_k: usize,
    seed: u64,
) -> Result<Vec<String>> {
    if synth.is_empty() || real.is_empty() {
        return Err(Error::Empty("cleaning needs synthetic and real images".into()));
    }
    let embed_all = |items: &[LabeledImage]| -> Result<Vec<Vec<f64>>> {
        items
            .iter()
            .map(|it| {
                let e = embedder.embed(&it.pixels)?;
                if e.len() != embedder.dim() {
                    return Err(Error::Shape(format!("embedder returned {} of {} dims", e.len(), embedder.dim())));
                }
                Ok(e)
            })
            .collect()
    };
    let se = embed_all(synth)?;
    let re = embed_all(real)?;
    let pools: Vec<Vec<usize>> = synth
        .iter()
        .map(|s| {
            let same: Vec<usize> = (0..real.len()).filter(|&r| real[r].semantic_label == s.semantic_label).collect();
            if same.is_empty() {
                (0..real.len()).collect()
            } else {
                same
            }
        })
        .collect();
    let picked = clean_select_embedded(&se, &re, &pools, k_clusters, top_k, seed)?;
    Ok(picked.into_iter().map(|i| synth[i].id.clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dct_of_constant_is_dc_only() {
        let e = BlockDctEmbedder::default();
        let v = e.embed(&Image::filled(16, 16, 0.5)).unwrap();
        assert_eq!(v.len(), 256);
        assert!((v[0] - 4.0).abs() < 1e-12, "luma DC = 8 * 0.5");
        assert!(v[1..64].iter().all(|c| c.abs() < 1e-12));
    }

    #[test]
    fn kmeans_separates_planted_blobs() {
        let mut pts = Vec::new();
        for i in 0..10 {
            pts.push(vec![i as f64 * 0.01, 0.0]);
            pts.push(vec![10.0 + i as f64 * 0.01, 5.0]);
        }
        let r = kmeans(&pts, 2, 4).unwrap();
        for i in (0..20).step_by(2) {
            assert_eq!(r.assignments[i], r.assignments[0]);
            assert_ne!(r.assignments[i + 1], r.assignments[0]);
        }
        assert!(kmeans(&pts, 0, 0).is_err());
        assert!(kmeans(&[], 1, 0).is_err());
    }

    #[test]
    fn large_top_k_keeps_everything() {
        let synth: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64, (i % 3) as f64]).collect();
        let real = vec![vec![0.0, 0.0]];
        let pools = vec![vec![0]; 12];
        let kept = clean_select_embedded(&synth, &real, &pools, 3, 100, 1).unwrap();
        assert_eq!(kept, (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn single_cluster_is_global_top_k() {
        let synth: Vec<Vec<f64>> = (0..10).map(|i| vec![(i as f64 - 4.3).abs()]).collect();
        let real = vec![vec![0.0]];
        let kept = clean_select_embedded(&synth, &real, &vec![vec![0]; 10], 1, 3, 1).unwrap();
        assert_eq!(kept, vec![3, 4, 5]);
    }
}
