//! Synthetic multi-structure phantoms and a stochastic segmenter over
//! them. The phantom is a set of nested ellipsoid shells plus one
//! offset ellipsoid ("blob", the highest structure id), each with its
//! own intensity mean and Gaussian texture. The segmenter scores each
//! class from a signed-distance prior and an intensity likelihood,
//! both read through a per-sample smooth warp field; the warp is a
//! frozen subject-level bias (model error, shared by all samples)
//! plus per-sample jitter, and a per-sample dropout gate that blanks
//! the likelihood over random regions. Everything is keyed on seeds,
//! so a (spec, seed) pair reproduces bit-for-bit.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distance::{signed_distance_maps, DistanceMaps};
use crate::error::{Error, Result};
use crate::io::cohort::{CohortRow, CohortTable};
use crate::rng::{self, CounterRng};
use crate::volume::{
    aggregate_mean_argmax, structure_volume, Dims, IntensityVolume, LabelVolume, McSampleSet,
    ProbStack,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: Dims,
    /// Structure count K: labels 1..K−1 are nested shells, label K is
    /// the offset blob. K = 1 gives a single ellipsoid and no blob.
    pub num_structures: u16,
    pub seed: u64,
    pub background_mean: f32,
    /// Structure k's intensity mean is background + k · step.
    pub intensity_step: f32,
    pub texture_std: f32,
    /// Target blob volume as a fraction of total foreground; `None`
    /// uses a fixed default radius.
    pub blob_volume_fraction: Option<f64>,
}

impl PhantomSpec {
    pub fn new(dims: Dims, num_structures: u16, seed: u64) -> Self {
        PhantomSpec {
            dims,
            num_structures,
            seed,
            background_mean: 1.0,
            intensity_step: 0.06,
            texture_std: 0.01,
            blob_volume_fraction: None,
        }
    }
}

impl Dims {
    fn min_dim(&self) -> usize {
        self.x.min(self.y).min(self.z)
    }
}

const STREAM_GEOMETRY: u64 = 0x47454F4D;
const STREAM_TEXTURE: u64 = 0x54455854;

struct Ellipsoid {
    center: [f64; 3],
    radii: [f64; 3],
}

impl Ellipsoid {
    fn contains(&self, x: usize, y: usize, z: usize) -> bool {
        let dx = (x as f64 - self.center[0]) / self.radii[0];
        let dy = (y as f64 - self.center[1]) / self.radii[1];
        let dz = (z as f64 - self.center[2]) / self.radii[2];
        dx * dx + dy * dy + dz * dz <= 1.0
    }

}

/// Deterministic phantom: truth labels plus a textured intensity image.
pub fn make_phantom(spec: &PhantomSpec) -> Result<(LabelVolume, IntensityVolume)> {
    let dims = spec.dims;
    let k = spec.num_structures;
    if k < 1 {
        return Err(Error::GeometryOverflow(
            "at least one structure required".to_string(),
        ));
    }
    if dims.min_dim() < 12 {
        return Err(Error::GeometryOverflow(format!(
            "dims {dims} too small, every axis must be at least 12"
        )));
    }
    let min_dim = dims.min_dim() as f64;
    let mut geo = CounterRng::new(spec.seed, STREAM_GEOMETRY);

    // Nest: concentric shells around a point in the lower corner
    // region; shell j sits between radii R·s^j and R·s^(j−1).
    let nest_center = [
        dims.x as f64 * 0.38 + geo.next_range(-0.6, 0.6),
        dims.y as f64 * 0.38 + geo.next_range(-0.6, 0.6),
        dims.z as f64 * 0.38 + geo.next_range(-0.6, 0.6),
    ];
    let nest_ratios = [
        geo.next_range(0.88, 1.12),
        geo.next_range(0.88, 1.12),
        geo.next_range(0.88, 1.12),
    ];
    let nest_r = 0.26 * min_dim;
    let n_nests = if k == 1 { 1 } else { (k - 1) as usize };
    let shrink = 0.72f64;
    let nests: Vec<Ellipsoid> = (0..n_nests)
        .map(|j| {
            let r = nest_r * shrink.powi(j as i32);
            Ellipsoid {
                center: nest_center,
                radii: [
                    r * nest_ratios[0],
                    r * nest_ratios[1],
                    r * nest_ratios[2],
                ],
            }
        })
        .collect();
    for e in &nests {
        check_fits(dims, e)?;
    }

    let voxels = dims.voxel_count();
    let mut labels = vec![0u16; voxels];
    let mut nest_count = 0usize;
    for idx in 0..voxels {
        let (x, y, z) = dims.coords(idx);
        // Innermost containing shell wins.
        for j in (0..n_nests).rev() {
            if nests[j].contains(x, y, z) {
                labels[idx] = (j + 1) as u16;
                nest_count += 1;
                break;
            }
        }
    }
    if nest_count == 0 {
        return Err(Error::GeometryOverflow("nest rasterized empty".to_string()));
    }

    // Blob: offset toward the opposite corner, sized either by the
    // requested foreground fraction or a fixed default.
    if k >= 2 {
        let blob_ratios = [
            geo.next_range(0.9, 1.1),
            geo.next_range(0.9, 1.1),
            geo.next_range(0.9, 1.1),
        ];
        let blob_center = [
            dims.x as f64 * 0.76 + geo.next_range(-0.5, 0.5),
            dims.y as f64 * 0.76 + geo.next_range(-0.5, 0.5),
            dims.z as f64 * 0.76 + geo.next_range(-0.5, 0.5),
        ];
        let blob_r = match spec.blob_volume_fraction {
            Some(v) => {
                if !(0.0..1.0).contains(&v) || v == 0.0 {
                    return Err(Error::GeometryOverflow(format!(
                        "blob fraction {v} outside (0, 1)"
                    )));
                }
                let target = v * nest_count as f64 / (1.0 - v);
                let q = blob_ratios[0] * blob_ratios[1] * blob_ratios[2];
                let r = (3.0 * target / (4.0 * std::f64::consts::PI * q)).cbrt();
                if !(1.2..=0.17 * min_dim).contains(&r) {
                    return Err(Error::GeometryOverflow(format!(
                        "blob fraction {v} needs radius {r:.2}, outside [1.2, {:.2}]",
                        0.17 * min_dim
                    )));
                }
                r
            }
            None => 0.13 * min_dim,
        };
        let blob = Ellipsoid {
            center: blob_center,
            radii: [
                blob_r * blob_ratios[0],
                blob_r * blob_ratios[1],
                blob_r * blob_ratios[2],
            ],
        };
        check_fits(dims, &blob)?;
        let mut blob_count = 0usize;
        for idx in 0..voxels {
            let (x, y, z) = dims.coords(idx);
            if blob.contains(x, y, z) {
                if labels[idx] != 0 {
                    return Err(Error::GeometryOverflow(
                        "blob intersects the nest".to_string(),
                    ));
                }
                labels[idx] = k;
                blob_count += 1;
            }
        }
        if blob_count == 0 {
            return Err(Error::GeometryOverflow("blob rasterized empty".to_string()));
        }
    }
    for s in 1..=k {
        if !labels.contains(&s) {
            return Err(Error::GeometryOverflow(format!(
                "structure {s} rasterized empty"
            )));
        }
    }

    let image: Vec<f32> = labels
        .iter()
        .enumerate()
        .map(|(idx, &l)| {
            let mean = spec.background_mean + spec.intensity_step * l as f32;
            let noise = rng::gaussian(spec.seed, STREAM_TEXTURE, idx as u64) as f32;
            (mean + spec.texture_std * noise).max(0.0)
        })
        .collect();

    let labels = LabelVolume::new(dims, k + 1, labels)?;
    let image = IntensityVolume::new(dims, image)?;
    Ok((labels, image))
}

fn check_fits(dims: Dims, e: &Ellipsoid) -> Result<()> {
    for (axis, &extent) in [dims.x, dims.y, dims.z].iter().enumerate() {
        let lo = e.center[axis] - e.radii[axis];
        let hi = e.center[axis] + e.radii[axis];
        if lo < 0.0 || hi > extent as f64 - 1.0 {
            return Err(Error::GeometryOverflow(format!(
                "ellipsoid spans [{lo:.1}, {hi:.1}] on axis {axis}, volume holds [0, {}]",
                extent - 1
            )));
        }
    }
    Ok(())
}

/// Stochastic segmenter configuration. `rho` scales the total warp
/// error (0 = faithful), `dropout_rate` is the fraction of dropped
/// basis nodes per sample for both the jitter mask and the likelihood
/// gate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerSpec {
    pub n_samples: usize,
    pub rho: f64,
    pub tau: f64,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for SamplerSpec {
    fn default() -> Self {
        SamplerSpec {
            n_samples: 15,
            rho: 1.0,
            tau: 0.5,
            dropout_rate: 0.2,
            seed: 0,
        }
    }
}

impl SamplerSpec {
    fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::DegenerateInput("n_samples must be positive".into()));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::DegenerateInput(format!("tau {} not positive", self.tau)));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(Error::DegenerateInput(format!("rho {} negative", self.rho)));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::DegenerateInput(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

// Warp-field shares: the subject-level bias dominates the per-sample
// jitter, keeping the N-way IoU of the samples close to the final
// segmentation's true Dice (both erode under rho at matched rates).
const BIAS_SCALE: f64 = 0.55;
const JITTER_SCALE: f64 = 0.065;
const LIKELIHOOD_WEIGHT: f64 = 1.0;
// The observation model assumes a nominal contrast-to-noise: sigma is
// this fraction of the smallest class-mean gap, not the measured
// residual spread. Noise beyond that budget degrades the samples, as
// it would a model trained on cleaner data.
const SIGMA_GAP_FRACTION: f64 = 0.2;
const SIGMA_FLOOR: f64 = 1e-6;

const STREAM_BIAS: u64 = 0x42494153;
const STREAM_JITTER: u64 = 0x4A495454;
const STREAM_JITTER_MASK: u64 = 0x4D41534B;
const STREAM_GATE: u64 = 0x47415445;

/// Coarse node grid spanning the volume; values interpolate
/// trilinearly to voxel positions.
struct NodeGrid {
    n: [usize; 3],
    scale: [f64; 3],
}

impl NodeGrid {
    fn new(dims: Dims) -> Self {
        let count = |d: usize| (d / 6 + 1).max(4);
        let n = [count(dims.x), count(dims.y), count(dims.z)];
        let scale = [
            (n[0] - 1) as f64 / (dims.x.max(2) - 1) as f64,
            (n[1] - 1) as f64 / (dims.y.max(2) - 1) as f64,
            (n[2] - 1) as f64 / (dims.z.max(2) - 1) as f64,
        ];
        NodeGrid { n, scale }
    }

    fn node_count(&self) -> usize {
        self.n[0] * self.n[1] * self.n[2]
    }

    /// Trilinear interpolation of per-node values at a voxel position.
    fn interp(&self, values: &[f64], x: f64, y: f64, z: f64) -> f64 {
        let gx = (x * self.scale[0]).clamp(0.0, (self.n[0] - 1) as f64);
        let gy = (y * self.scale[1]).clamp(0.0, (self.n[1] - 1) as f64);
        let gz = (z * self.scale[2]).clamp(0.0, (self.n[2] - 1) as f64);
        let (x0, fx) = split(gx, self.n[0]);
        let (y0, fy) = split(gy, self.n[1]);
        let (z0, fz) = split(gz, self.n[2]);
        let at = |xi: usize, yi: usize, zi: usize| values[(zi * self.n[1] + yi) * self.n[0] + xi];
        lerp(
            lerp(
                lerp(at(x0, y0, z0), at(x0 + 1, y0, z0), fx),
                lerp(at(x0, y0 + 1, z0), at(x0 + 1, y0 + 1, z0), fx),
                fy,
            ),
            lerp(
                lerp(at(x0, y0, z0 + 1), at(x0 + 1, y0, z0 + 1), fx),
                lerp(at(x0, y0 + 1, z0 + 1), at(x0 + 1, y0 + 1, z0 + 1), fx),
                fy,
            ),
            fz,
        )
    }
}

#[inline]
fn split(g: f64, n: usize) -> (usize, f64) {
    let i = (g.floor() as usize).min(n - 2);
    (i, g - i as f64)
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Trilinear read of a full-resolution f32 volume at a (clamped)
/// fractional position.
fn sample_volume(data: &[f32], dims: Dims, x: f64, y: f64, z: f64) -> f64 {
    let x = x.clamp(0.0, (dims.x - 1) as f64);
    let y = y.clamp(0.0, (dims.y - 1) as f64);
    let z = z.clamp(0.0, (dims.z - 1) as f64);
    let (x0, fx) = split(x, dims.x.max(2));
    let (y0, fy) = split(y, dims.y.max(2));
    let (z0, fz) = split(z, dims.z.max(2));
    let at = |xi: usize, yi: usize, zi: usize| data[dims.index(xi, yi, zi)] as f64;
    lerp(
        lerp(
            lerp(at(x0, y0, z0), at(x0 + 1, y0, z0), fx),
            lerp(at(x0, y0 + 1, z0), at(x0 + 1, y0 + 1, z0), fx),
            fy,
        ),
        lerp(
            lerp(at(x0, y0, z0 + 1), at(x0 + 1, y0, z0 + 1), fx),
            lerp(at(x0, y0 + 1, z0 + 1), at(x0 + 1, y0 + 1, z0 + 1), fx),
            fy,
        ),
        fz,
    )
}

/// Per-class intensity model estimated from the image over the truth
/// partition (the argmin of the distance maps).
struct Likelihood {
    means: Vec<f64>,
    sigma: f64,
}

fn fit_likelihood(image: &IntensityVolume, dist: &DistanceMaps) -> Likelihood {
    let classes = dist.num_classes() as usize;
    let mut sums = vec![0.0f64; classes];
    let mut counts = vec![0usize; classes];
    let voxels = image.dims().voxel_count();
    for v in 0..voxels {
        let mut best = f32::INFINITY;
        let mut best_c = 0usize;
        for c in 0..classes as u16 {
            let d = dist.value(c, v);
            if d < best {
                best = d;
                best_c = c as usize;
            }
        }
        sums[best_c] += image.data()[v] as f64;
        counts[best_c] += 1;
    }
    let means: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &n)| if n > 0 { s / n as f64 } else { 0.0 })
        .collect();
    let mut sorted = means.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let min_gap = sorted
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    let sigma = if min_gap.is_finite() {
        (SIGMA_GAP_FRACTION * min_gap).max(SIGMA_FLOOR)
    } else {
        SIGMA_FLOOR
    };
    Likelihood { means, sigma }
}

/// Runs the stochastic segmenter: N softmax probability stacks over
/// the distance prior and intensity likelihood, each perturbed by its
/// own warp and dropout gate. With `rho == 0` and `dropout_rate == 0`
/// the output is N identical one-hot stacks that reproduce the truth
/// labels exactly.
pub fn mc_segment(
    image: &IntensityVolume,
    dist: &DistanceMaps,
    spec: &SamplerSpec,
) -> Result<McSampleSet> {
    spec.validate()?;
    let dims = dist.dims();
    if image.dims() != dims {
        return Err(Error::ShapeMismatch {
            expected: dims,
            actual: image.dims(),
        });
    }
    let classes = dist.num_classes() as usize;
    let voxels = dims.voxel_count();

    if spec.rho == 0.0 && spec.dropout_rate == 0.0 {
        // Deterministic limit: indicator stacks of the distance argmin.
        let mut data = vec![0.0f32; classes * voxels];
        for v in 0..voxels {
            let mut best = f32::INFINITY;
            let mut best_c = 0usize;
            for c in 0..classes {
                let d = dist.value(c as u16, v);
                if d < best {
                    best = d;
                    best_c = c;
                }
            }
            data[best_c * voxels + v] = 1.0;
        }
        let stack = ProbStack::new(dims, dist.num_classes(), data)?;
        return McSampleSet::from_prob_stacks("phantom", vec![stack; spec.n_samples]);
    }

    let grid = NodeGrid::new(dims);
    let nodes = grid.node_count();
    let like = fit_likelihood(image, dist);
    let inv_two_sigma_sq = 1.0 / (2.0 * like.sigma * like.sigma);

    // Subject-level bias field, shared by every sample.
    let bias: Vec<[f64; 3]> = (0..nodes)
        .map(|n| {
            [
                rng::gaussian(spec.seed, STREAM_BIAS, (n * 3) as u64),
                rng::gaussian(spec.seed, STREAM_BIAS, (n * 3 + 1) as u64),
                rng::gaussian(spec.seed, STREAM_BIAS, (n * 3 + 2) as u64),
            ]
        })
        .collect();

    let keep = 1.0 - spec.dropout_rate;
    let stacks: Result<Vec<ProbStack>> = (0..spec.n_samples)
        .into_par_iter()
        .map(|i| {
            // Per-sample warp nodes and likelihood gate.
            let mut ux = vec![0.0f64; nodes];
            let mut uy = vec![0.0f64; nodes];
            let mut uz = vec![0.0f64; nodes];
            let mut gate = vec![0.0f64; nodes];
            for n in 0..nodes {
                let ctr = (i * nodes + n) as u64;
                let masked = rng::unit(spec.seed, STREAM_JITTER_MASK, ctr) > keep;
                let jitter = if masked {
                    [0.0, 0.0, 0.0]
                } else {
                    [
                        rng::gaussian(spec.seed, STREAM_JITTER, ctr * 3),
                        rng::gaussian(spec.seed, STREAM_JITTER, ctr * 3 + 1),
                        rng::gaussian(spec.seed, STREAM_JITTER, ctr * 3 + 2),
                    ]
                };
                ux[n] = spec.rho * (BIAS_SCALE * bias[n][0] + JITTER_SCALE * jitter[0]);
                uy[n] = spec.rho * (BIAS_SCALE * bias[n][1] + JITTER_SCALE * jitter[1]);
                uz[n] = spec.rho * (BIAS_SCALE * bias[n][2] + JITTER_SCALE * jitter[2]);
                gate[n] = f64::from(rng::unit(spec.seed, STREAM_GATE, ctr) <= keep);
            }

            let mut data = vec![0.0f32; classes * voxels];
            let mut scores = vec![0.0f64; classes];
            for v in 0..voxels {
                let (xi, yi, zi) = dims.coords(v);
                let (x, y, z) = (xi as f64, yi as f64, zi as f64);
                let px = x + grid.interp(&ux, x, y, z);
                let py = y + grid.interp(&uy, x, y, z);
                let pz = z + grid.interp(&uz, x, y, z);
                let g = grid.interp(&gate, x, y, z).clamp(0.0, 1.0);
                let intensity = sample_volume(image.data(), dims, px, py, pz);

                let mut max_score = f64::NEG_INFINITY;
                for (c, s) in scores.iter_mut().enumerate() {
                    let d = sample_volume(dist.map(c as u16), dims, px, py, pz);
                    let resid = intensity - like.means[c];
                    *s = -d / spec.tau
                        - LIKELIHOOD_WEIGHT * g * resid * resid * inv_two_sigma_sq;
                    if *s > max_score {
                        max_score = *s;
                    }
                }
                let mut total = 0.0f64;
                for s in scores.iter_mut() {
                    *s = (*s - max_score).exp();
                    total += *s;
                }
                for (c, &s) in scores.iter().enumerate() {
                    data[c * voxels + v] = (s / total) as f32;
                }
            }
            ProbStack::new(dims, dist.num_classes(), data)
        })
        .collect();

    McSampleSet::from_prob_stacks("phantom", stacks?)
}

/// Linear model planting covariate effects into the blob's foreground
/// fraction: v = intercept + βa·age + βs·sex + βd·diagnosis + site
/// offset + noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateModel {
    pub intercept: f64,
    pub beta_age: f64,
    pub beta_sex: f64,
    pub beta_diagnosis: f64,
    /// Site k (round-robin assignment) shifts v by site_shift · k.
    pub site_shift: f64,
    pub noise_std: f64,
    pub age_range: (f64, f64),
    pub sites: Vec<String>,
}

impl Default for CovariateModel {
    fn default() -> Self {
        CovariateModel {
            intercept: 0.145,
            beta_age: -5e-4,
            beta_sex: 0.006,
            beta_diagnosis: -0.018,
            site_shift: 0.003,
            noise_std: 0.004,
            age_range: (50.0, 90.0),
            sites: vec!["site_a".to_string(), "site_b".to_string()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub n_subjects: usize,
    pub dims: Dims,
    /// K ≥ 2: the planted effect targets the blob (structure K).
    pub num_structures: u16,
    /// Segmenter severity drawn uniformly per subject.
    pub rho_range: (f64, f64),
    pub model: CovariateModel,
    /// Template: per-subject runs override `rho` and `seed`.
    pub sampler: SamplerSpec,
    pub seed: u64,
}

impl CohortSpec {
    pub fn new(n_subjects: usize, dims: Dims, num_structures: u16, seed: u64) -> Self {
        CohortSpec {
            n_subjects,
            dims,
            num_structures,
            rho_range: (0.2, 3.0),
            model: CovariateModel::default(),
            sampler: SamplerSpec::default(),
            seed,
        }
    }
}

/// Everything generated for one subject.
#[derive(Debug, Clone)]
pub struct GeneratedSubject {
    pub subject_id: String,
    pub rho: f64,
    pub age: f64,
    pub sex: u8,
    pub diagnosis: u8,
    pub site: String,
    pub truth: LabelVolume,
    pub image: IntensityVolume,
    pub samples: McSampleSet,
    pub final_seg: LabelVolume,
    /// The blob fraction the covariate model asked for, before
    /// rasterization and measurement.
    pub target_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct GeneratedCohort {
    pub subjects: Vec<GeneratedSubject>,
    /// Volumes measured from each subject's final segmentation,
    /// normalized by its foreground voxel count.
    pub table: CohortTable,
    /// The planted coefficients, for recovery checks.
    pub model: CovariateModel,
}

const STREAM_COVARIATES: u64 = 0x434F5641;
const STREAM_PHANTOM: u64 = 0x5048414E;
const STREAM_SAMPLER: u64 = 0x53414D50;

const FRACTION_BOUNDS: (f64, f64) = (0.03, 0.19);

/// Generates a full cohort: per subject a phantom sized by the
/// covariate model, a Monte Carlo segmentation at a subject-specific
/// severity, and a cohort row of volumes measured from the final
/// segmentation.
pub fn cohort_generate(spec: &CohortSpec) -> Result<GeneratedCohort> {
    if spec.n_subjects == 0 {
        return Err(Error::EmptyInput);
    }
    if spec.num_structures < 2 {
        return Err(Error::DegenerateInput(
            "cohort needs the blob structure, so at least 2 structures".to_string(),
        ));
    }
    if spec.model.sites.is_empty() {
        return Err(Error::DegenerateInput("no sites".to_string()));
    }
    if !(spec.rho_range.0 <= spec.rho_range.1 && spec.rho_range.0 >= 0.0) {
        return Err(Error::DegenerateInput(format!(
            "bad rho range [{}, {}]",
            spec.rho_range.0, spec.rho_range.1
        )));
    }
    spec.sampler.validate()?;

    let k = spec.num_structures;
    let subjects: Result<Vec<GeneratedSubject>> = (0..spec.n_subjects)
        .into_par_iter()
        .map(|i| {
            let mut rng = CounterRng::new(rng::hash3(spec.seed, STREAM_COVARIATES, i as u64), 0);
            let age = rng.next_range(spec.model.age_range.0, spec.model.age_range.1);
            let sex = u8::from(rng.next_bool(0.5));
            let diagnosis = u8::from(rng.next_bool(0.5));
            let site_idx = i % spec.model.sites.len();
            let noise = rng.next_gaussian() * spec.model.noise_std;
            let target = (spec.model.intercept
                + spec.model.beta_age * age
                + spec.model.beta_sex * sex as f64
                + spec.model.beta_diagnosis * diagnosis as f64
                + spec.model.site_shift * site_idx as f64
                + noise)
                .clamp(FRACTION_BOUNDS.0, FRACTION_BOUNDS.1);
            let rho = rng.next_range(spec.rho_range.0, spec.rho_range.1);

            let phantom_spec = PhantomSpec {
                blob_volume_fraction: Some(target),
                ..PhantomSpec::new(spec.dims, k, rng::hash3(spec.seed, STREAM_PHANTOM, i as u64))
            };
            let (truth, image) = make_phantom(&phantom_spec)?;
            let dist = signed_distance_maps(&truth)?;
            let sampler = SamplerSpec {
                rho,
                seed: rng::hash3(spec.seed, STREAM_SAMPLER, i as u64),
                ..spec.sampler
            };
            let subject_id = format!("subj_{i:03}");
            let samples = mc_segment(&image, &dist, &sampler)?.with_subject_id(&subject_id);
            let final_seg = aggregate_mean_argmax(&samples)?;
            Ok(GeneratedSubject {
                subject_id,
                rho,
                age,
                sex,
                diagnosis,
                site: spec.model.sites[site_idx].clone(),
                truth,
                image,
                samples,
                final_seg,
                target_fraction: target,
            })
        })
        .collect();
    let subjects = subjects?;

    let structures: Vec<u16> = (1..=k).collect();
    let rows: Vec<CohortRow> = subjects
        .iter()
        .map(|s| {
            let foreground: usize = structures
                .iter()
                .map(|&st| structure_volume(&s.final_seg, st))
                .sum();
            let volumes: Vec<f64> = structures
                .iter()
                .map(|&st| {
                    if foreground == 0 {
                        0.0
                    } else {
                        structure_volume(&s.final_seg, st) as f64 / foreground as f64
                    }
                })
                .collect();
            CohortRow {
                subject_id: s.subject_id.clone(),
                age: s.age,
                sex: s.sex,
                diagnosis: s.diagnosis,
                site: s.site.clone(),
                volumes,
                weights: vec![None; structures.len()],
            }
        })
        .collect();

    Ok(GeneratedCohort {
        subjects,
        table: CohortTable { structures, rows },
        model: spec.model.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{dice, mean_dice_over_structures};

    fn dims() -> Dims {
        Dims::new(24, 24, 24)
    }

    #[test]
    fn phantom_is_deterministic() {
        let spec = PhantomSpec::new(dims(), 3, 7);
        let (l1, i1) = make_phantom(&spec).unwrap();
        let (l2, i2) = make_phantom(&spec).unwrap();
        assert_eq!(l1, l2);
        assert_eq!(i1, i2);
        let (l3, _) = make_phantom(&PhantomSpec::new(dims(), 3, 8)).unwrap();
        assert_ne!(l1, l3);
    }

    #[test]
    fn phantom_has_all_structures() {
        for k in 1..=4u16 {
            let (labels, _) = make_phantom(&PhantomSpec::new(dims(), k, 11)).unwrap();
            assert_eq!(labels.num_classes(), k + 1);
            for s in 0..=k {
                assert!(structure_volume(&labels, s) > 0, "structure {s} empty (k={k})");
            }
        }
    }

    #[test]
    fn phantom_rejects_tiny_volumes() {
        let spec = PhantomSpec::new(Dims::new(8, 24, 24), 2, 0);
        assert!(matches!(
            make_phantom(&spec),
            Err(Error::GeometryOverflow(_))
        ));
    }

    #[test]
    fn blob_fraction_is_respected() {
        for (seed, target) in [(1u64, 0.06), (2, 0.10), (3, 0.16)] {
            let spec = PhantomSpec {
                blob_volume_fraction: Some(target),
                ..PhantomSpec::new(Dims::new(28, 28, 28), 2, seed)
            };
            let (labels, _) = make_phantom(&spec).unwrap();
            let blob = structure_volume(&labels, 2) as f64;
            let nest = structure_volume(&labels, 1) as f64;
            let got = blob / (blob + nest);
            assert!(
                (got - target).abs() < 0.015,
                "seed {seed}: fraction {got} vs target {target}"
            );
        }
    }

    #[test]
    fn unreachable_fraction_is_rejected() {
        let spec = PhantomSpec {
            blob_volume_fraction: Some(0.9),
            ..PhantomSpec::new(dims(), 2, 0)
        };
        assert!(matches!(
            make_phantom(&spec),
            Err(Error::GeometryOverflow(_))
        ));
    }

    #[test]
    fn intensity_tracks_structure() {
        let spec = PhantomSpec::new(dims(), 2, 5);
        let (labels, image) = make_phantom(&spec).unwrap();
        for s in 0..=2u16 {
            let mut sum = 0.0f64;
            let mut n = 0usize;
            for (v, &l) in labels.data().iter().enumerate() {
                if l == s {
                    sum += image.data()[v] as f64;
                    n += 1;
                }
            }
            let mean = sum / n as f64;
            let expect = 1.0 + 0.06 * s as f64;
            assert!((mean - expect).abs() < 0.01, "structure {s}: mean {mean}");
        }
    }

    #[test]
    fn zero_noise_sampler_reproduces_truth_exactly() {
        let (truth, image) = make_phantom(&PhantomSpec::new(dims(), 3, 2)).unwrap();
        let dist = signed_distance_maps(&truth).unwrap();
        let spec = SamplerSpec {
            n_samples: 3,
            rho: 0.0,
            dropout_rate: 0.0,
            ..SamplerSpec::default()
        };
        let samples = mc_segment(&image, &dist, &spec).unwrap();
        assert_eq!(samples.n_samples(), 3);
        for stack in samples.prob_stacks().unwrap() {
            assert!(stack.is_normalized());
            assert!(stack.data().iter().all(|&p| p == 0.0 || p == 1.0));
        }
        for l in samples.labels() {
            assert_eq!(l.data(), truth.data());
        }
        let final_seg = aggregate_mean_argmax(&samples).unwrap();
        assert_eq!(final_seg.data(), truth.data());
    }

    #[test]
    fn sampler_is_deterministic_and_seed_sensitive() {
        let (truth, image) = make_phantom(&PhantomSpec::new(dims(), 2, 3)).unwrap();
        let dist = signed_distance_maps(&truth).unwrap();
        let spec = SamplerSpec {
            n_samples: 4,
            seed: 9,
            ..SamplerSpec::default()
        };
        let a = mc_segment(&image, &dist, &spec).unwrap();
        let b = mc_segment(&image, &dist, &spec).unwrap();
        for (sa, sb) in a.prob_stacks().unwrap().iter().zip(b.prob_stacks().unwrap()) {
            assert_eq!(sa.data(), sb.data());
        }
        let c = mc_segment(&image, &dist, &SamplerSpec { seed: 10, ..spec }).unwrap();
        assert_ne!(
            a.prob_stacks().unwrap()[0].data(),
            c.prob_stacks().unwrap()[0].data()
        );
    }

    #[test]
    fn samples_differ_from_each_other() {
        let (truth, image) = make_phantom(&PhantomSpec::new(dims(), 2, 4)).unwrap();
        let dist = signed_distance_maps(&truth).unwrap();
        let samples = mc_segment(&image, &dist, &SamplerSpec::default()).unwrap();
        let l = samples.labels();
        let differing = (1..l.len()).filter(|&i| l[i].data() != l[0].data()).count();
        assert!(differing > 0, "all samples identical under jitter");
    }

    #[test]
    fn severity_degrades_accuracy_monotonically() {
        let (truth, image) = make_phantom(&PhantomSpec::new(Dims::new(28, 28, 28), 2, 6)).unwrap();
        let dist = signed_distance_maps(&truth).unwrap();
        let structures = [1u16, 2];
        let mut dices = Vec::new();
        for rho in [0.3, 1.5, 3.0] {
            let spec = SamplerSpec {
                rho,
                seed: 13,
                ..SamplerSpec::default()
            };
            let samples = mc_segment(&image, &dist, &spec).unwrap();
            let seg = aggregate_mean_argmax(&samples).unwrap();
            let d = mean_dice_over_structures(&seg, &truth, &structures)
                .unwrap()
                .unwrap();
            dices.push(d);
        }
        assert!(dices[0] > 0.9, "low severity should stay accurate: {dices:?}");
        assert!(
            dices[0] > dices[1] && dices[1] > dices[2],
            "dice not decreasing: {dices:?}"
        );
    }

    #[test]
    fn sampler_validates_spec() {
        let (truth, image) = make_phantom(&PhantomSpec::new(dims(), 2, 0)).unwrap();
        let dist = signed_distance_maps(&truth).unwrap();
        for bad in [
            SamplerSpec { n_samples: 0, ..SamplerSpec::default() },
            SamplerSpec { tau: 0.0, ..SamplerSpec::default() },
            SamplerSpec { rho: -1.0, ..SamplerSpec::default() },
            SamplerSpec { dropout_rate: 1.0, ..SamplerSpec::default() },
        ] {
            assert!(mc_segment(&image, &dist, &bad).is_err());
        }
    }

    #[test]
    fn cohort_rows_align_with_subjects() {
        let spec = CohortSpec {
            sampler: SamplerSpec {
                n_samples: 4,
                ..SamplerSpec::default()
            },
            n_subjects: 6,
            ..CohortSpec::new(6, dims(), 2, 42)
        };
        let cohort = cohort_generate(&spec).unwrap();
        assert_eq!(cohort.subjects.len(), 6);
        assert_eq!(cohort.table.rows.len(), 6);
        assert_eq!(cohort.table.structures, vec![1, 2]);
        for (i, (s, r)) in cohort.subjects.iter().zip(&cohort.table.rows).enumerate() {
            assert_eq!(s.subject_id, format!("subj_{i:03}"));
            assert_eq!(r.subject_id, s.subject_id);
            assert!((spec.rho_range.0..=spec.rho_range.1).contains(&s.rho));
            assert!((spec.model.age_range.0..=spec.model.age_range.1).contains(&r.age));
            assert!(r.volumes.iter().all(|&v| (0.0..=1.0).contains(&v)));
            // Measured blob fraction should track the planted target.
            let measured = r.volumes[1];
            assert!(
                (measured - s.target_fraction).abs() < 0.08,
                "measured {measured} vs target {}",
                s.target_fraction
            );
            let d = dice(&s.final_seg, &s.truth, 2).unwrap();
            assert!(d.is_some());
        }
        // Round-robin sites.
        assert_eq!(cohort.table.rows[0].site, "site_a");
        assert_eq!(cohort.table.rows[1].site, "site_b");
        assert_eq!(cohort.table.rows[2].site, "site_a");
    }

    #[test]
    fn cohort_is_deterministic() {
        let mut spec = CohortSpec::new(3, dims(), 2, 5);
        spec.sampler.n_samples = 3;
        let a = cohort_generate(&spec).unwrap();
        let b = cohort_generate(&spec).unwrap();
        assert_eq!(a.table, b.table);
        for (x, y) in a.subjects.iter().zip(&b.subjects) {
            assert_eq!(x.truth, y.truth);
            assert_eq!(x.final_seg, y.final_seg);
        }
    }

    #[test]
    fn cohort_validates_inputs() {
        assert!(cohort_generate(&CohortSpec::new(0, dims(), 2, 0)).is_err());
        assert!(cohort_generate(&CohortSpec::new(2, dims(), 1, 0)).is_err());
        let mut bad = CohortSpec::new(2, dims(), 2, 0);
        bad.rho_range = (2.0, 1.0);
        assert!(cohort_generate(&bad).is_err());
    }
}
