//! Deterministic synthetic multimodal data.
//!
//! K modality clusters with centers spaced at least `delta` apart, each
//! holding C sub-clusters at radius `r_sub` around the modality center.
//! Samples get Gaussian within-cluster noise `sigma_in` and M augmented
//! views: 2 "global" views (additive noise) and M-2 "local" views that
//! additionally zero out a random subset of coordinates, keeping a
//! fraction in [0.3, 0.6]. Everything is a pure function of the seed.

use crate::error::{Error, Result};
use crate::math;
use crate::rng::SeedStream;
use crate::tensor::DenseArray;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

pub const DEFAULT_MODALITIES: usize = 3;
pub const DEFAULT_SUBCLUSTERS: usize = 4;
pub const DEFAULT_INPUT_DIM: usize = 32;
pub const DEFAULT_DELTA: f64 = 10.0;
pub const DEFAULT_SUBCLUSTER_RADIUS: f64 = 1.5;
pub const DEFAULT_SIGMA_IN: f64 = 0.3;
pub const DEFAULT_SIGMA_AUG: f64 = 0.2;
pub const DEFAULT_VIEWS: usize = 8;
pub const GLOBAL_VIEWS: usize = 2;
pub const LOCAL_KEEP_MIN: f64 = 0.3;
pub const LOCAL_KEEP_MAX: f64 = 0.6;

/// Geometry of the synthetic corpus; defaults are the desk-scale setup.
#[derive(Debug, Clone, PartialEq)]
pub struct DataGeometry {
    pub modalities: usize,
    pub subclusters: usize,
    pub input_dim: usize,
    pub delta: f64,
    pub subcluster_radius: f64,
    pub sigma_in: f64,
    pub sigma_aug: f64,
    pub views: usize,
}

impl Default for DataGeometry {
    fn default() -> Self {
        Self {
            modalities: DEFAULT_MODALITIES,
            subclusters: DEFAULT_SUBCLUSTERS,
            input_dim: DEFAULT_INPUT_DIM,
            delta: DEFAULT_DELTA,
            subcluster_radius: DEFAULT_SUBCLUSTER_RADIUS,
            sigma_in: DEFAULT_SIGMA_IN,
            sigma_aug: DEFAULT_SIGMA_AUG,
            views: DEFAULT_VIEWS,
        }
    }
}

/// One modality cluster: its center and sub-cluster centers.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalitySpec {
    pub modality: usize,
    pub center: Vec<f64>,
    pub subcluster_centers: Vec<Vec<f64>>,
}

/// Builds the modality specs for a geometry.
///
/// Modality centers are seeded random sign codes (+-a per coordinate,
/// a = delta * sqrt(2 / input_dim)) with pairwise Hamming distance at
/// least input_dim / 4, giving pairwise center distance at least
/// delta * sqrt(2). Sign codes matter for the local views: under any
/// coordinate mask, every kept coordinate pulls a sample toward its own
/// center at least as strongly as toward any other (per-coordinate margin
/// a^2 - c_k[i] * c_j[i] >= 0), so masking degrades separability only
/// through the noise terms. Sub-cluster centers sit at radius
/// `subcluster_radius` in seeded random directions.
pub fn make_specs(geom: &DataGeometry, seed: u64) -> Result<Vec<ModalitySpec>> {
    if geom.modalities == 0 || geom.subclusters == 0 {
        return Err(Error::Invalid("need at least one modality and sub-cluster".into()));
    }
    if geom.input_dim < geom.modalities {
        return Err(Error::Invalid(format!(
            "input_dim {} must be >= modalities {}",
            geom.input_dim, geom.modalities
        )));
    }
    if geom.delta <= 4.0 * (geom.subcluster_radius + geom.sigma_in) {
        return Err(Error::Invalid(format!(
            "delta {} too small for separability: need > 4 * (r_sub + sigma_in) = {}",
            geom.delta,
            4.0 * (geom.subcluster_radius + geom.sigma_in)
        )));
    }
    let rng = SeedStream::new(seed).derive("specs");
    let mut center_rng = rng.derive("centers");
    let amplitude = geom.delta * math::sqrt(2.0 / geom.input_dim as f64);
    let min_hamming = geom.input_dim.div_ceil(4);
    let mut codes: Vec<Vec<f64>> = Vec::with_capacity(geom.modalities);
    while codes.len() < geom.modalities {
        let code: Vec<f64> = (0..geom.input_dim)
            .map(|_| if center_rng.uniform() < 0.5 { -1.0 } else { 1.0 })
            .collect();
        let separated = codes.iter().all(|c| {
            c.iter().zip(&code).filter(|(a, b)| a != b).count() >= min_hamming
        });
        if separated {
            codes.push(code);
        }
    }
    let mut specs = Vec::with_capacity(geom.modalities);
    for k in 0..geom.modalities {
        let center: Vec<f64> = codes[k].iter().map(|s| s * amplitude).collect();
        let mut sub_rng = rng.derive(&format!("modality-{k}"));
        let mut subcluster_centers = Vec::with_capacity(geom.subclusters);
        for _ in 0..geom.subclusters {
            let dir = unit_direction(geom.input_dim, &mut sub_rng);
            let sub: Vec<f64> = center
                .iter()
                .zip(&dir)
                .map(|(c, d)| c + geom.subcluster_radius * d)
                .collect();
            subcluster_centers.push(sub);
        }
        specs.push(ModalitySpec {
            modality: k,
            center,
            subcluster_centers,
        });
    }
    Ok(specs)
}

fn unit_direction(dim: usize, rng: &mut SeedStream) -> Vec<f64> {
    loop {
        let v = rng.normal_vec(dim);
        let norm = math::sqrt(v.iter().map(|x| x * x).sum());
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Which augmentation to apply to a raw sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViewKind {
    Global,
    Local,
}

/// One augmented view: global adds Gaussian noise; local first zeros a
/// random coordinate subset, keeping a fraction in [0.3, 0.6].
pub fn augment_view(
    sample: &[f64],
    kind: ViewKind,
    sigma_aug: f64,
    rng: &mut SeedStream,
) -> Vec<f64> {
    match kind {
        ViewKind::Global => masked_view(sample, 1.0, 1.0, sigma_aug, rng),
        ViewKind::Local => masked_view(sample, LOCAL_KEEP_MIN, LOCAL_KEEP_MAX, sigma_aug, rng),
    }
}

fn masked_view(
    sample: &[f64],
    keep_min: f64,
    keep_max: f64,
    sigma_aug: f64,
    rng: &mut SeedStream,
) -> Vec<f64> {
    let dim = sample.len();
    let mut out = sample.to_vec();
    if keep_max < 1.0 {
        let f = rng.uniform_in(keep_min, keep_max);
        let lo = libm::ceil(keep_min * dim as f64) as usize;
        let hi = libm::floor(keep_max * dim as f64) as usize;
        let keep = (libm::round(f * dim as f64) as usize).clamp(lo.max(1), hi.max(1));
        let mut indices: Vec<usize> = (0..dim).collect();
        rng.shuffle(&mut indices);
        for &i in &indices[keep..] {
            out[i] = 0.0;
        }
    }
    for v in &mut out {
        *v += sigma_aug * rng.normal();
    }
    out
}

/// One generated sample with its hidden labels and augmented views.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub raw: Vec<f64>,
    pub modality: usize,
    pub subcluster: usize,
    pub views: Vec<Vec<f64>>,
}

/// A modality-balanced batch of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBatch {
    pub samples: Vec<Sample>,
    pub input_dim: usize,
    pub views: usize,
}

impl SyntheticBatch {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// All views stacked as a `(len * views) x input_dim` matrix, rows
    /// grouped per sample in batch order.
    pub fn views_matrix(&self) -> DenseArray {
        let rows = self.samples.len() * self.views;
        let mut data = Vec::with_capacity(rows * self.input_dim);
        for s in &self.samples {
            for v in &s.views {
                data.extend(v.iter().copied());
            }
        }
        DenseArray::matrix(rows, self.input_dim, data).expect("consistent batch shapes")
    }

    /// Raw features as a `len x input_dim` matrix.
    pub fn raw_matrix(&self) -> DenseArray {
        let mut data = Vec::with_capacity(self.samples.len() * self.input_dim);
        for s in &self.samples {
            data.extend(s.raw.iter().copied());
        }
        DenseArray::matrix(self.samples.len(), self.input_dim, data)
            .expect("consistent batch shapes")
    }
}

/// Draws a modality-balanced, shuffled batch with `views` augmented views
/// per sample (2 global, the rest local).
pub fn sample_batch(
    specs: &[ModalitySpec],
    geom: &DataGeometry,
    batch: usize,
    seed: u64,
) -> Result<SyntheticBatch> {
    if specs.is_empty() {
        return Err(Error::Invalid("no modality specs".into()));
    }
    if batch % specs.len() != 0 {
        return Err(Error::Invalid(format!(
            "batch {batch} not divisible by {} modalities",
            specs.len()
        )));
    }
    if geom.views < GLOBAL_VIEWS {
        return Err(Error::Invalid(format!(
            "need at least {GLOBAL_VIEWS} views, got {}",
            geom.views
        )));
    }
    let per_modality = batch / specs.len();
    let root = SeedStream::new(seed).derive("batch");
    let mut samples = Vec::with_capacity(batch);
    for spec in specs {
        let mut rng = root.derive(&format!("modality-{}", spec.modality));
        for _ in 0..per_modality {
            let subcluster = rng.below(spec.subcluster_centers.len());
            let raw: Vec<f64> = spec.subcluster_centers[subcluster]
                .iter()
                .map(|c| c + geom.sigma_in * rng.normal())
                .collect();
            let mut views = Vec::with_capacity(geom.views);
            for v in 0..geom.views {
                let kind = if v < GLOBAL_VIEWS {
                    ViewKind::Global
                } else {
                    ViewKind::Local
                };
                views.push(augment_view(&raw, kind, geom.sigma_aug, &mut rng));
            }
            samples.push(Sample {
                raw,
                modality: spec.modality,
                subcluster,
                views,
            });
        }
    }
    let mut order: Vec<usize> = (0..batch).collect();
    root.derive("shuffle").shuffle(&mut order);
    let mut shuffled = Vec::with_capacity(batch);
    for i in order {
        shuffled.push(samples[i].clone());
    }
    Ok(SyntheticBatch {
        samples: shuffled,
        input_dim: geom.input_dim,
        views: geom.views,
    })
}

/// Index of the nearest modality center by Euclidean distance.
pub fn nearest_modality(specs: &[ModalitySpec], point: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, spec) in specs.iter().enumerate() {
        let d: f64 = spec
            .center
            .iter()
            .zip(point)
            .map(|(c, p)| (c - p) * (c - p))
            .sum();
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    best
}

/// Formats a batch's raw features as CSV with hidden labels, for external
/// inspection.
pub fn batch_to_csv(batch: &SyntheticBatch) -> String {
    let mut out = String::from("sample_id,modality,subcluster");
    for d in 0..batch.input_dim {
        out.push_str(&format!(",feature_{d}"));
    }
    out.push('\n');
    for (i, s) in batch.samples.iter().enumerate() {
        out.push_str(&format!("{i},{},{}", s.modality, s.subcluster));
        for v in &s.raw {
            out.push_str(&format!(",{:.16e}", v));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(a: &[f64], b: &[f64]) -> f64 {
        math::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
    }

    #[test]
    fn centers_are_spaced_at_least_delta() {
        let geom = DataGeometry::default();
        let specs = make_specs(&geom, 7).unwrap();
        for a in 0..specs.len() {
            for b in (a + 1)..specs.len() {
                assert!(dist(&specs[a].center, &specs[b].center) >= geom.delta);
            }
            for sub in &specs[a].subcluster_centers {
                let r = dist(sub, &specs[a].center);
                assert!((r - geom.subcluster_radius).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn make_specs_rejects_bad_geometry() {
        let mut geom = DataGeometry::default();
        geom.delta = 7.0; // 4 * (1.5 + 0.3) = 7.2 > 7.0
        assert!(make_specs(&geom, 1).is_err());
        let mut geom = DataGeometry::default();
        geom.modalities = 0;
        assert!(make_specs(&geom, 1).is_err());
    }

    #[test]
    fn degenerate_noise_collapses_to_modality_center() {
        let geom = DataGeometry {
            subcluster_radius: 0.0,
            sigma_in: 0.0,
            ..DataGeometry::default()
        };
        let specs = make_specs(&geom, 3).unwrap();
        let batch = sample_batch(&specs, &geom, 6, 11).unwrap();
        for s in &batch.samples {
            assert_eq!(s.raw, specs[s.modality].center);
        }
    }

    #[test]
    fn batch_is_modality_balanced() {
        let geom = DataGeometry::default();
        let specs = make_specs(&geom, 3).unwrap();
        let batch = sample_batch(&specs, &geom, 12, 5).unwrap();
        let mut counts = [0usize; 3];
        for s in &batch.samples {
            counts[s.modality] += 1;
        }
        assert_eq!(counts, [4, 4, 4]);
        assert!(sample_batch(&specs, &geom, 13, 5).is_err());
    }

    #[test]
    fn identical_seeds_reproduce_batches_exactly() {
        let geom = DataGeometry::default();
        let specs = make_specs(&geom, 3).unwrap();
        let a = sample_batch(&specs, &geom, 30, 99).unwrap();
        let b = sample_batch(&specs, &geom, 30, 99).unwrap();
        assert_eq!(a, b);
        let c = sample_batch(&specs, &geom, 30, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn noiseless_global_view_is_identity() {
        let sample = alloc::vec![1.0, -2.0, 3.0, 0.5];
        let mut rng = SeedStream::new(17);
        let v = augment_view(&sample, ViewKind::Global, 0.0, &mut rng);
        assert_eq!(v, sample);
    }

    #[test]
    fn full_keep_local_view_matches_global_behavior() {
        let sample = alloc::vec![1.0, -2.0, 3.0, 0.5];
        let mut rng = SeedStream::new(17);
        let v = masked_view(&sample, 1.0, 1.0, 0.0, &mut rng);
        assert_eq!(v, sample);
    }

    #[test]
    fn local_view_keeps_fraction_in_range_and_replays() {
        let sample = alloc::vec![1.0; 32];
        for trial in 0..50 {
            let mut rng = SeedStream::new(1000 + trial);
            let v = augment_view(&sample, ViewKind::Local, 0.0, &mut rng);
            let kept = v.iter().filter(|x| **x != 0.0).count();
            let f = kept as f64 / 32.0;
            assert!((LOCAL_KEEP_MIN..=LOCAL_KEEP_MAX).contains(&f), "f = {f}");
            let mut rng2 = SeedStream::new(1000 + trial);
            assert_eq!(v, augment_view(&sample, ViewKind::Local, 0.0, &mut rng2));
        }
    }

    #[test]
    fn raw_samples_classify_perfectly_by_nearest_center() {
        let geom = DataGeometry::default();
        let specs = make_specs(&geom, 3).unwrap();
        let batch = sample_batch(&specs, &geom, 300, 21).unwrap();
        for s in &batch.samples {
            assert_eq!(nearest_modality(&specs, &s.raw), s.modality);
        }
    }

    #[test]
    fn augmented_views_stay_near_their_own_modality() {
        let geom = DataGeometry::default();
        let specs = make_specs(&geom, 3).unwrap();
        let mut total = 0usize;
        let mut correct = 0usize;
        for seed in 0..210 {
            let batch = sample_batch(&specs, &geom, 60, 500 + seed).unwrap();
            for s in &batch.samples {
                for v in &s.views {
                    total += 1;
                    if nearest_modality(&specs, v) == s.modality {
                        correct += 1;
                    }
                }
            }
        }
        assert!(correct as f64 / total as f64 > 0.999, "{correct}/{total}");
    }

    #[test]
    fn matrix_views_have_expected_shapes() {
        let geom = DataGeometry::default();
        let specs = make_specs(&geom, 3).unwrap();
        let batch = sample_batch(&specs, &geom, 6, 2).unwrap();
        let vm = batch.views_matrix();
        assert_eq!(vm.shape(), &[6 * 8, 32]);
        assert_eq!(batch.raw_matrix().shape(), &[6, 32]);
        // Row order matches samples x views.
        assert_eq!(vm.row(8 + 3), &batch.samples[1].views[3][..]);
    }

    #[test]
    fn csv_dump_lists_every_sample_with_labels() {
        let geom = DataGeometry::default();
        let specs = make_specs(&geom, 3).unwrap();
        let batch = sample_batch(&specs, &geom, 3, 4).unwrap();
        let csv = batch_to_csv(&batch);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].starts_with("sample_id,modality,subcluster,feature_0"));
        assert!(lines[0].ends_with("feature_31"));
        assert_eq!(lines[1].split(',').count(), 3 + 32);
    }
}
