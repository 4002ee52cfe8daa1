//! Fuzzy C-Means over per-pixel color features, k-means grouping of the
//! resulting centroids, and the unsupervised segmentation pipeline built
//! on top of them.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::colorspace::rescale_max_dim;
use crate::dataio::{luma, BinaryMask, RgbImage};
use crate::error::{Error, Result};
use crate::morphology::{dark_border_mask, fill_holes, largest_component, remove_hair, HairParams};
use crate::par::Exec;

/// Row-major `n × d` feature matrix with the pixel each row came from.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub n: usize,
    pub d: usize,
    pub rows: Vec<f64>,
    /// Raster index (`y·width + x`) of each row.
    pub index_map: Vec<usize>,
}

impl FeatureMatrix {
    pub fn new(d: usize, rows: Vec<f64>, index_map: Vec<usize>) -> Result<Self> {
        if d == 0 || !rows.len().is_multiple_of(d) || rows.len() / d != index_map.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} values with d={} do not match {} index entries",
                rows.len(),
                d,
                index_map.len()
            )));
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature values must be finite"));
        }
        Ok(FeatureMatrix { n: index_map.len(), d, rows, index_map })
    }

    /// RGB features of every pixel not excluded by `exclude`.
    pub fn from_rgb(img: &RgbImage, exclude: Option<&BinaryMask>) -> FeatureMatrix {
        let mut rows = Vec::new();
        let mut index_map = Vec::new();
        for (i, p) in img.pixels().enumerate() {
            if exclude.is_some_and(|m| m.data()[i]) {
                continue;
            }
            rows.extend_from_slice(&p);
            index_map.push(i);
        }
        FeatureMatrix { n: index_map.len(), d: 3, rows, index_map }
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.rows[j * self.d..(j + 1) * self.d]
    }
}

/// Fuzzy memberships, stored pixel-major (`n × c`).
#[derive(Clone, Debug, PartialEq)]
pub struct MembershipMatrix {
    pub c: usize,
    pub n: usize,
    data: Vec<f64>,
}

impl MembershipMatrix {
    /// Membership of pixel `j` in cluster `i`.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.c + i]
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.c..(j + 1) * self.c]
    }

    /// Hard assignment by maximal membership (ties to the lower index).
    pub fn argmax(&self) -> Vec<usize> {
        (0..self.n)
            .map(|j| {
                let col = self.column(j);
                let mut best = 0;
                for i in 1..self.c {
                    if col[i] > col[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }
}

/// Cluster centers, `c × d` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Centroids {
    pub c: usize,
    pub d: usize,
    pub v: Vec<f64>,
}

impl Centroids {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.v[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.c).map(|i| self.row(i).to_vec()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FcmResult {
    pub memberships: MembershipMatrix,
    pub centroids: Centroids,
    /// Objective after each membership update.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FcmParams {
    pub c: usize,
    pub fuzzifier: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for FcmParams {
    fn default() -> Self {
        FcmParams { c: 5, fuzzifier: 2.0, tol: 1e-4, max_iter: 100, seed: 0 }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Initial centers: `c` rows drawn without replacement from the
/// lexicographically sorted data, so the draw ignores input row order.
fn initial_centroids(x: &FeatureMatrix, c: usize, seed: u64) -> Result<Centroids> {
    let mut order: Vec<usize> = (0..x.n).collect();
    order.sort_by(|&a, &b| {
        x.row(a)
            .iter()
            .zip(x.row(b))
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _attempt in 0..=10 {
        let mut picks = sample(&mut rng, x.n, c).into_vec();
        picks.sort_unstable();
        let v: Vec<f64> = picks.iter().flat_map(|&p| x.row(order[p]).to_vec()).collect();
        let cents = Centroids { c, d: x.d, v };
        let distinct = (0..c).all(|i| (0..i).all(|k| cents.row(i) != cents.row(k)));
        if distinct {
            return Ok(cents);
        }
    }
    Err(Error::Degenerate(format!("could not draw {c} distinct initial centroids")))
}

fn update_memberships(x: &FeatureMatrix, v: &Centroids, fuzzifier: f64, exec: Exec) -> MembershipMatrix {
    let c = v.c;
    let expo = 1.0 / (fuzzifier - 1.0);
    let mut data = vec![0.0; x.n * c];
    let block = 1024;
    exec.for_each_chunk_mut(&mut data, block * c, |b, chunk| {
        let mut d2 = vec![0.0; c];
        for (k, col) in chunk.chunks_exact_mut(c).enumerate() {
            let row = x.row(b * block + k);
            for (i, d) in d2.iter_mut().enumerate() {
                *d = sq_dist(row, v.row(i));
            }
            if let Some(hit) = d2.iter().position(|&d| d == 0.0) {
                col.fill(0.0);
                col[hit] = 1.0;
                continue;
            }
            for i in 0..c {
                // (d_i/d_k)^(2/(m-1)) == (d_i²/d_k²)^(1/(m-1))
                let s: f64 = d2.iter().map(|&dk| (d2[i] / dk).powf(expo)).sum();
                col[i] = 1.0 / s;
            }
        }
    });
    MembershipMatrix { c, n: x.n, data }
}

fn objective(x: &FeatureMatrix, u: &MembershipMatrix, v: &Centroids, fuzzifier: f64) -> f64 {
    let mut j = 0.0;
    for p in 0..x.n {
        let row = x.row(p);
        for i in 0..v.c {
            j += u.get(i, p).powf(fuzzifier) * sq_dist(row, v.row(i));
        }
    }
    j
}

fn update_centroids(x: &FeatureMatrix, u: &MembershipMatrix, prev: &Centroids, fuzzifier: f64) -> Centroids {
    let (c, d) = (prev.c, x.d);
    let mut num = vec![0.0; c * d];
    let mut den = vec![0.0; c];
    for p in 0..x.n {
        let row = x.row(p);
        for i in 0..c {
            let w = u.get(i, p).powf(fuzzifier);
            den[i] += w;
            for (a, &f) in num[i * d..(i + 1) * d].iter_mut().zip(row) {
                *a += w * f;
            }
        }
    }
    let mut v = prev.v.clone();
    for i in 0..c {
        if den[i] > 0.0 {
            for k in 0..d {
                v[i * d + k] = num[i * d + k] / den[i];
            }
        }
    }
    Centroids { c, d, v }
}

/// Standard alternating-optimization FCM.
///
/// Membership updates fan out over pixel blocks (each block owns its
/// output); centroid sums and the objective accumulate in row order, so
/// results do not depend on the thread count.
pub fn fcm_fit(x: &FeatureMatrix, params: FcmParams) -> Result<FcmResult> {
    fcm_fit_with(x, params, Exec::default())
}

pub fn fcm_fit_with(x: &FeatureMatrix, params: FcmParams, exec: Exec) -> Result<FcmResult> {
    let FcmParams { c, fuzzifier, tol, max_iter, seed } = params;
    if c == 0 || x.n < c {
        return Err(Error::invalid(format!("need at least c={c} >= 1 points, got {}", x.n)));
    }
    if !(fuzzifier > 1.0) {
        return Err(Error::invalid(format!("fuzzifier must exceed 1, got {fuzzifier}")));
    }
    let mut v = initial_centroids(x, c, seed)?;
    let mut u = update_memberships(x, &v, fuzzifier, exec);
    let mut trace = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iter.max(1) {
        iterations += 1;
        if iterations > 1 {
            u = update_memberships(x, &v, fuzzifier, exec);
        }
        trace.push(objective(x, &u, &v, fuzzifier));
        let next = update_centroids(x, &u, &v, fuzzifier);
        let shift = (0..c).map(|i| sq_dist(next.row(i), v.row(i)).sqrt()).fold(0.0, f64::max);
        v = next;
        if shift < tol {
            break;
        }
    }
    Ok(FcmResult { memberships: u, centroids: v, objective_trace: trace, iterations })
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    /// Group label per point, numbered by first appearance.
    pub labels: Vec<usize>,
    pub wgss: f64,
}

fn lloyd(points: &[Vec<f64>], mut centers: Vec<Vec<f64>>) -> (Vec<usize>, f64) {
    let k = centers.len();
    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..100 {
        let mut changed = false;
        for (p, l) in points.iter().zip(labels.iter_mut()) {
            let mut best = 0;
            let mut best_d = sq_dist(p, &centers[0]);
            for (g, c) in centers.iter().enumerate().skip(1) {
                let d = sq_dist(p, c);
                if d < best_d {
                    best = g;
                    best_d = d;
                }
            }
            if *l != best {
                *l = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for (g, center) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = points.iter().zip(&labels).filter(|(_, &l)| l == g).map(|(p, _)| p).collect();
            if members.is_empty() {
                continue;
            }
            for (dim, c) in center.iter_mut().enumerate() {
                *c = members.iter().map(|m| m[dim]).sum::<f64>() / members.len() as f64;
            }
        }
    }
    debug_assert!(k > 0);
    let wgss = points.iter().zip(&labels).map(|(p, &l)| sq_dist(p, &centers[l])).sum();
    (labels, wgss)
}

fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map: Vec<(usize, usize)> = Vec::new();
    labels
        .iter()
        .map(|&l| match map.iter().find(|(from, _)| *from == l) {
            Some(&(_, to)) => to,
            None => {
                let to = map.len();
                map.push((l, to));
                to
            }
        })
        .collect()
}

/// Lloyd's algorithm, best of `restarts` seeded initializations by
/// within-group sum of squares.
pub fn kmeans_fit(points: &[Vec<f64>], k: usize, restarts: usize, seed: u64) -> Result<KMeansResult> {
    if k == 0 || points.len() < k {
        return Err(Error::invalid(format!("need at least k={k} >= 1 points, got {}", points.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..restarts.max(1) {
        let mut picks = sample(&mut rng, points.len(), k).into_vec();
        picks.sort_unstable();
        let centers = picks.iter().map(|&i| points[i].clone()).collect();
        let (labels, wgss) = lloyd(points, centers);
        if best.as_ref().is_none_or(|(_, b)| wgss < *b) {
            best = Some((labels, wgss));
        }
    }
    let (labels, wgss) = best.expect("at least one restart");
    Ok(KMeansResult { labels: canonical_labels(&labels), wgss })
}

/// Cluster indices of the group whose centroids have the lowest mean
/// luminance; ties go to the group holding the lowest cluster index.
pub fn select_darkest_group(labels: &[usize], centroids: &Centroids) -> Vec<usize> {
    assert_eq!(labels.len(), centroids.c);
    let groups = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut best: Option<(f64, usize, usize)> = None;
    for g in 0..groups {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == g).collect();
        if members.is_empty() {
            continue;
        }
        let mean = members
            .iter()
            .map(|&i| {
                let r = centroids.row(i);
                luma([r[0], r[1], r[2]])
            })
            .sum::<f64>()
            / members.len() as f64;
        let key = (mean, members[0], g);
        let better = match best {
            None => true,
            Some((m, lo, _)) => mean < m || (mean == m && members[0] < lo),
        };
        if better {
            best = Some(key);
        }
    }
    let g = best.map(|b| b.2).unwrap_or(0);
    (0..labels.len()).filter(|&i| labels[i] == g).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClusterConfig {
    pub fcm: FcmParams,
    pub k: usize,
    pub restarts: usize,
    pub hair: HairParams,
    pub hair_removal: bool,
    pub border_lum: f64,
    /// Working resolution (longest side).
    pub content: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            fcm: FcmParams::default(),
            k: 2,
            restarts: 10,
            hair: HairParams::default(),
            hair_removal: true,
            border_lum: 0.1,
            content: 250,
        }
    }
}

/// Intermediate products of one clustering run, at working resolution.
#[derive(Clone, Debug)]
pub struct ClusterOutcome {
    pub mask: BinaryMask,
    pub working_mask: BinaryMask,
    pub border_mask: BinaryMask,
    pub hair_mask: BinaryMask,
    pub fcm: FcmResult,
    pub lesion_clusters: Vec<usize>,
}

pub fn cluster_segment(img: &RgbImage, cfg: &ClusterConfig) -> Result<BinaryMask> {
    Ok(cluster_segment_detailed(img, cfg)?.mask)
}

pub fn cluster_segment_detailed(img: &RgbImage, cfg: &ClusterConfig) -> Result<ClusterOutcome> {
    let work = rescale_max_dim(img, cfg.content);
    let (w, h) = work.dims();
    let (clean, hair_mask) =
        if cfg.hair_removal { remove_hair(&work, cfg.hair)? } else { (work.clone(), BinaryMask::empty(w, h)) };
    let border_mask = dark_border_mask(&clean, cfg.border_lum);
    let features = FeatureMatrix::from_rgb(&clean, Some(&border_mask));
    if features.n < cfg.fcm.c {
        return Err(Error::Degenerate(format!("only {} valid pixels for {} clusters", features.n, cfg.fcm.c)));
    }
    let fcm = fcm_fit(&features, cfg.fcm)?;
    let assignment = fcm.memberships.argmax();
    let groups = kmeans_fit(&fcm.centroids.rows(), cfg.k.min(cfg.fcm.c), cfg.restarts, cfg.fcm.seed)?;
    let lesion_clusters = select_darkest_group(&groups.labels, &fcm.centroids);

    let mut selected = BinaryMask::empty(w, h);
    for (row, &cluster) in assignment.iter().enumerate() {
        if lesion_clusters.contains(&cluster) {
            selected.data_mut()[features.index_map[row]] = true;
        }
    }
    let filled = fill_holes(&selected.and_not(&border_mask)).and_not(&border_mask);
    let working_mask = largest_component(&filled);
    let (ow, oh) = img.dims();
    let mask = largest_component(&fill_holes(&working_mask.resize_nearest(ow, oh)));
    Ok(ClusterOutcome { mask, working_mask, border_mask, hair_mask, fcm, lesion_clusters })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{synth_lesion, synth_lesion_full, SynthSpec};
    use crate::morphology::connected_components;
    use crate::posteval::jaccard;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn matrix(points: &[[f64; 3]]) -> FeatureMatrix {
        FeatureMatrix::new(3, points.iter().flatten().copied().collect(), (0..points.len()).collect()).unwrap()
    }

    fn random_points(seed: u64, n: usize) -> Vec<[f64; 3]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect()
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = random_points(1, 50);
        let r = fcm_fit(&matrix(&pts), FcmParams { c: 1, ..Default::default() }).unwrap();
        for d in 0..3 {
            let mean = pts.iter().map(|p| p[d]).sum::<f64>() / 50.0;
            assert!((r.centroids.v[d] - mean).abs() < 1e-12);
        }
        assert!((0..50).all(|j| r.memberships.get(0, j) == 1.0));
    }

    #[test]
    fn two_blobs_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noise = Normal::new(0.0, 0.02).unwrap();
        let mut pts = Vec::new();
        for center in [0.2, 0.8] {
            for _ in 0..200 {
                pts.push([0; 3].map(|_: i32| center + noise.sample(&mut rng)));
            }
        }
        let blob_mean = |k: usize, d: usize| pts[k * 200..(k + 1) * 200].iter().map(|p| p[d]).sum::<f64>() / 200.0;
        let r = fcm_fit(&matrix(&pts), FcmParams { c: 2, ..Default::default() }).unwrap();
        let mut cents = r.centroids.rows();
        cents.sort_by(|a, b| a[0].total_cmp(&b[0]));
        for (k, cent) in cents.iter().enumerate() {
            for (d, &v) in cent.iter().enumerate() {
                assert!((v - blob_mean(k, d)).abs() < 0.02);
            }
        }
    }

    #[test]
    fn crisp_membership_at_centroid() {
        let x = matrix(&[[0.1, 0.1, 0.1], [0.9, 0.9, 0.9], [0.5, 0.4, 0.3]]);
        let v = Centroids { c: 2, d: 3, v: vec![0.1, 0.1, 0.1, 0.7, 0.7, 0.7] };
        let u = update_memberships(&x, &v, 2.0, Exec::Sequential);
        assert_eq!(u.column(0), &[1.0, 0.0]);
        assert!((u.column(2).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn objective_monotone_and_columns_normalized() {
        for seed in 0..20 {
            let x = matrix(&random_points(seed, 120));
            let r = fcm_fit(&x, FcmParams { c: 4, seed, tol: 1e-9, ..Default::default() }).unwrap();
            for w in r.objective_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-9);
            }
            for j in 0..x.n {
                assert!((r.memberships.column(j).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn fcm_errors() {
        let x = matrix(&[[0.1; 3], [0.2; 3]]);
        assert!(fcm_fit(&x, FcmParams { c: 3, ..Default::default() }).is_err());
        assert!(fcm_fit(&x, FcmParams { c: 2, fuzzifier: 1.0, ..Default::default() }).is_err());
        let dup = matrix(&[[0.3; 3]; 6]);
        assert!(fcm_fit(&dup, FcmParams { c: 2, ..Default::default() }).is_err());
    }

    #[test]
    fn permutation_equivariance_and_determinism() {
        let pts = random_points(4, 90);
        let params = FcmParams { c: 3, seed: 17, ..Default::default() };
        let a = fcm_fit(&matrix(&pts), params).unwrap();
        assert_eq!(a, fcm_fit(&matrix(&pts), params).unwrap());
        let mut perm: Vec<usize> = (0..90).collect();
        perm.reverse();
        perm.swap(3, 40);
        let permuted: Vec<[f64; 3]> = perm.iter().map(|&i| pts[i]).collect();
        let b = fcm_fit(&matrix(&permuted), params).unwrap();
        for (new_j, &old_j) in perm.iter().enumerate() {
            for i in 0..3 {
                assert!((a.memberships.get(i, old_j) - b.memberships.get(i, new_j)).abs() < 1e-9);
            }
        }
        for (x, y) in a.centroids.v.iter().zip(&b.centroids.v) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn sequential_and_parallel_fcm_agree() {
        let x = matrix(&random_points(8, 5000));
        let p = FcmParams { c: 5, seed: 2, ..Default::default() };
        assert_eq!(fcm_fit_with(&x, p, Exec::Sequential).unwrap(), fcm_fit_with(&x, p, Exec::Parallel).unwrap());
    }

    /// Exhaustive bipartition search: the WGSS-optimal 2-grouping.
    fn best_bipartition(v: &[f64]) -> (u32, f64) {
        let n = v.len();
        let mut best = (0u32, f64::INFINITY);
        for bits in 1..(1u32 << n) - 1 {
            let mut ss = 0.0;
            for side in [true, false] {
                let g: Vec<f64> = (0..n).filter(|&i| (bits >> i & 1 == 1) == side).map(|i| v[i]).collect();
                let m = g.iter().sum::<f64>() / g.len() as f64;
                ss += g.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
            }
            if ss < best.1 {
                best = (bits, ss);
            }
        }
        best
    }

    #[test]
    fn kmeans_matches_bipartition_oracle() {
        let lum = [0.2, 0.25, 0.3, 0.8, 0.85];
        let (bits, ss) = best_bipartition(&lum);
        let pts: Vec<Vec<f64>> = lum.iter().map(|&v| vec![v]).collect();
        let r = kmeans_fit(&pts, 2, 10, 3).unwrap();
        assert_eq!(r.labels, vec![0, 0, 0, 1, 1]);
        let oracle: Vec<bool> = (0..5).map(|i| bits >> i & 1 == 1).collect();
        for i in 0..5 {
            assert_eq!(oracle[i] == oracle[0], r.labels[i] == r.labels[0]);
        }
        assert!((r.wgss - ss).abs() < 1e-12);
    }

    #[test]
    fn kmeans_degenerate_cases() {
        let pts: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64, 1.0]).collect();
        let r = kmeans_fit(&pts, 4, 3, 0).unwrap();
        assert_eq!(r.wgss, 0.0);
        assert_eq!(r.labels, vec![0, 1, 2, 3]);
        let same = vec![vec![0.4, 0.4]; 5];
        let r = kmeans_fit(&same, 2, 3, 0).unwrap();
        assert!(r.labels.iter().all(|&l| l == 0));
        assert!(kmeans_fit(&same, 6, 3, 0).is_err());
    }

    #[test]
    fn darkest_group_selection() {
        let gray = |vals: &[f64]| Centroids { c: vals.len(), d: 3, v: vals.iter().flat_map(|&v| [v, v, v]).collect() };
        let cents = gray(&[0.2, 0.25, 0.3, 0.8, 0.85]);
        assert_eq!(select_darkest_group(&[0, 0, 0, 1, 1], &cents), vec![0, 1, 2]);
        assert_eq!(select_darkest_group(&[1, 1, 1, 0, 0], &cents), vec![0, 1, 2]);
        assert_eq!(select_darkest_group(&[0, 0, 0, 0, 0], &cents), vec![0, 1, 2, 3, 4]);
        let tied = gray(&[0.5, 0.4, 0.6]);
        assert_eq!(select_darkest_group(&[1, 0, 1], &tied), vec![1]);
        let tied = gray(&[0.5, 0.5]);
        assert_eq!(select_darkest_group(&[1, 0], &tied), vec![0]);
    }

    #[test]
    fn clean_synthetic_lesion_segmented() {
        let spec = SynthSpec::random(5, 128, 0, false);
        let (img, truth) = synth_lesion(&spec).unwrap();
        let mask = cluster_segment(&img, &ClusterConfig::default()).unwrap();
        assert_eq!(mask.dims(), img.dims());
        assert!(jaccard(&mask, &truth).unwrap() >= 0.85);
        assert_eq!(connected_components(&mask).count, 1);
        assert_eq!(fill_holes(&mask), mask);
    }

    #[test]
    fn vignette_pixels_never_selected() {
        let spec = SynthSpec::random(12, 250, 0, true);
        let s = synth_lesion_full(&spec).unwrap();
        let out = cluster_segment_detailed(&s.image, &ClusterConfig::default()).unwrap();
        assert!(!out.mask.intersects(&dark_border_mask(&s.image, 0.1)));
        assert!(!out.working_mask.intersects(&out.border_mask));
        assert!(jaccard(&out.mask, &s.mask).unwrap() > 0.8);
    }

    #[test]
    fn too_few_valid_pixels() {
        let img = RgbImage::filled(20, 20, [0.0; 3]);
        assert!(cluster_segment(&img, &ClusterConfig::default()).is_err());
    }
}
