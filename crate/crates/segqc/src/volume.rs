use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid extents of a volume. Linear index is `((z * y) + y') * x + x'`,
/// so x varies fastest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub x: usize,
    pub y: usize,
    pub z: usize,
}

impl Dims {
    pub fn new(x: usize, y: usize, z: usize) -> Self {
        Dims { x, y, z }
    }

    pub fn voxel_count(&self) -> usize {
        self.x * self.y * self.z
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.y + y) * self.x + x
    }

    /// Inverse of `index`.
    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize, usize) {
        let x = idx % self.x;
        let rest = idx / self.x;
        (x, rest % self.y, rest / self.y)
    }

    fn validate(&self) -> Result<()> {
        if self.x == 0 || self.y == 0 || self.z == 0 {
            return Err(Error::InvalidVolume(format!("zero-sized dims {self}")));
        }
        Ok(())
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.x, self.y, self.z)
    }
}

/// Dense label map. Every voxel holds a class id below `num_classes`;
/// class 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVolume {
    dims: Dims,
    num_classes: u16,
    data: Vec<u16>,
}

impl LabelVolume {
    pub fn new(dims: Dims, num_classes: u16, data: Vec<u16>) -> Result<Self> {
        dims.validate()?;
        if num_classes < 2 {
            return Err(Error::InvalidVolume(format!(
                "num_classes must be at least 2, got {num_classes}"
            )));
        }
        if data.len() != dims.voxel_count() {
            return Err(Error::InvalidVolume(format!(
                "label data holds {} voxels, dims {} need {}",
                data.len(),
                dims,
                dims.voxel_count()
            )));
        }
        if let Some(&bad) = data.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidVolume(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(LabelVolume {
            dims,
            num_classes,
            data,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn num_classes(&self) -> u16 {
        self.num_classes
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    #[inline]
    pub fn label_at(&self, idx: usize) -> u16 {
        self.data[idx]
    }
}

/// Per-class probability maps for one segmentation sample, stored
/// class-major: class `c` occupies `data[c * V .. (c + 1) * V]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbStack {
    dims: Dims,
    num_classes: u16,
    data: Vec<f32>,
    normalized: bool,
}

const PROB_VALUE_TOL: f32 = 1e-6;
const PROB_SUM_TOL: f64 = 1e-4;

impl ProbStack {
    /// Values may stray from [0, 1] by at most 1e-6 (float slack).
    /// `normalized` records whether every voxel's class sum is within
    /// 1e-4 of one.
    pub fn new(dims: Dims, num_classes: u16, data: Vec<f32>) -> Result<Self> {
        dims.validate()?;
        if num_classes < 2 {
            return Err(Error::InvalidVolume(format!(
                "num_classes must be at least 2, got {num_classes}"
            )));
        }
        let voxels = dims.voxel_count();
        let expected = voxels * num_classes as usize;
        if data.len() != expected {
            return Err(Error::InvalidVolume(format!(
                "probability data holds {} values, dims {} with {} classes need {}",
                data.len(),
                dims,
                num_classes,
                expected
            )));
        }
        for &p in &data {
            if !p.is_finite() || p < -PROB_VALUE_TOL || p > 1.0 + PROB_VALUE_TOL {
                return Err(Error::InvalidVolume(format!(
                    "probability {p} outside [0, 1]"
                )));
            }
        }
        let mut normalized = true;
        for v in 0..voxels {
            let mut sum = 0.0f64;
            for c in 0..num_classes as usize {
                sum += data[c * voxels + v] as f64;
            }
            if (sum - 1.0).abs() > PROB_SUM_TOL {
                normalized = false;
                break;
            }
        }
        Ok(ProbStack {
            dims,
            num_classes,
            data,
            normalized,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn num_classes(&self) -> u16 {
        self.num_classes
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn class_slice(&self, class: u16) -> &[f32] {
        let voxels = self.dims.voxel_count();
        let c = class as usize;
        &self.data[c * voxels..(c + 1) * voxels]
    }

    #[inline]
    pub fn value(&self, class: u16, idx: usize) -> f32 {
        self.data[class as usize * self.dims.voxel_count() + idx]
    }

    /// Hardens to labels; ties go to the lowest class id.
    pub fn argmax_labels(&self) -> LabelVolume {
        let voxels = self.dims.voxel_count();
        let mut labels = vec![0u16; voxels];
        for (v, out) in labels.iter_mut().enumerate() {
            let mut best = self.data[v];
            let mut best_c = 0u16;
            for c in 1..self.num_classes {
                let p = self.data[c as usize * voxels + v];
                if p > best {
                    best = p;
                    best_c = c;
                }
            }
            *out = best_c;
        }
        LabelVolume {
            dims: self.dims,
            num_classes: self.num_classes,
            data: labels,
        }
    }
}

/// Scalar image on the same grid as the segmentations. Values are
/// finite and non-negative (magnitude data).
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityVolume {
    dims: Dims,
    data: Vec<f32>,
}

impl IntensityVolume {
    pub fn new(dims: Dims, data: Vec<f32>) -> Result<Self> {
        dims.validate()?;
        if data.len() != dims.voxel_count() {
            return Err(Error::InvalidVolume(format!(
                "intensity data holds {} voxels, dims {} need {}",
                data.len(),
                dims,
                dims.voxel_count()
            )));
        }
        if let Some(&bad) = data.iter().find(|&&v| !v.is_finite() || v < 0.0) {
            return Err(Error::InvalidVolume(format!(
                "intensity {bad} is negative or non-finite"
            )));
        }
        Ok(IntensityVolume { dims, data })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Root mean square over all voxels.
    pub fn rms(&self) -> f64 {
        let sum_sq: f64 = self.data.iter().map(|&v| (v as f64) * (v as f64)).sum();
        (sum_sq / self.data.len() as f64).sqrt()
    }
}

/// A set of N segmentation samples for one subject, all on the same
/// grid with the same class count. Label volumes are always present;
/// probability stacks only when the sampler produced soft output.
#[derive(Debug, Clone)]
pub struct McSampleSet {
    subject_id: String,
    dims: Dims,
    num_classes: u16,
    prob_stacks: Option<Vec<ProbStack>>,
    label_volumes: Vec<LabelVolume>,
}

impl McSampleSet {
    pub fn from_prob_stacks(subject_id: impl Into<String>, stacks: Vec<ProbStack>) -> Result<Self> {
        if stacks.is_empty() {
            return Err(Error::EmptyInput);
        }
        let dims = stacks[0].dims();
        let num_classes = stacks[0].num_classes();
        for s in &stacks[1..] {
            if s.dims() != dims {
                return Err(Error::ShapeMismatch {
                    expected: dims,
                    actual: s.dims(),
                });
            }
            if s.num_classes() != num_classes {
                return Err(Error::InvalidVolume(format!(
                    "sample has {} classes, expected {}",
                    s.num_classes(),
                    num_classes
                )));
            }
        }
        let labels = stacks.iter().map(|s| s.argmax_labels()).collect();
        Ok(McSampleSet {
            subject_id: subject_id.into(),
            dims,
            num_classes,
            prob_stacks: Some(stacks),
            label_volumes: labels,
        })
    }

    pub fn from_labels(subject_id: impl Into<String>, labels: Vec<LabelVolume>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyInput);
        }
        let dims = labels[0].dims();
        let num_classes = labels[0].num_classes();
        for l in &labels[1..] {
            if l.dims() != dims {
                return Err(Error::ShapeMismatch {
                    expected: dims,
                    actual: l.dims(),
                });
            }
            if l.num_classes() != num_classes {
                return Err(Error::InvalidVolume(format!(
                    "sample has {} classes, expected {}",
                    l.num_classes(),
                    num_classes
                )));
            }
        }
        Ok(McSampleSet {
            subject_id: subject_id.into(),
            dims,
            num_classes,
            prob_stacks: None,
            label_volumes: labels,
        })
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn with_subject_id(mut self, subject_id: impl Into<String>) -> Self {
        self.subject_id = subject_id.into();
        self
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn num_classes(&self) -> u16 {
        self.num_classes
    }

    pub fn n_samples(&self) -> usize {
        self.label_volumes.len()
    }

    pub fn labels(&self) -> &[LabelVolume] {
        &self.label_volumes
    }

    pub fn prob_stacks(&self) -> Option<&[ProbStack]> {
        self.prob_stacks.as_deref()
    }

    pub(crate) fn require_probs(&self) -> Result<&[ProbStack]> {
        self.prob_stacks.as_deref().ok_or(Error::ProbRequired)
    }
}

/// Final segmentation: per-voxel argmax of the mean probability over
/// all samples. Ties go to the lowest class id.
pub fn aggregate_mean_argmax(samples: &McSampleSet) -> Result<LabelVolume> {
    let stacks = samples.require_probs()?;
    let dims = samples.dims();
    let voxels = dims.voxel_count();
    let classes = samples.num_classes() as usize;
    let mut labels = vec![0u16; voxels];
    // Comparing per-class sums picks the same argmax as the mean and
    // avoids a division.
    for (v, out) in labels.iter_mut().enumerate() {
        let mut best = f64::NEG_INFINITY;
        let mut best_c = 0u16;
        for c in 0..classes {
            let sum: f64 = stacks.iter().map(|s| s.data()[c * voxels + v] as f64).sum();
            if sum > best {
                best = sum;
                best_c = c as u16;
            }
        }
        *out = best_c;
    }
    LabelVolume::new(dims, samples.num_classes(), labels)
}

/// Dice overlap 2|A∩B| / (|A| + |B|) for one structure. `None` when the
/// structure is absent from both volumes.
pub fn dice(a: &LabelVolume, b: &LabelVolume, structure: u16) -> Result<Option<f64>> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch {
            expected: a.dims(),
            actual: b.dims(),
        });
    }
    let mut in_a = 0usize;
    let mut in_b = 0usize;
    let mut both = 0usize;
    for (&la, &lb) in a.data().iter().zip(b.data()) {
        let hit_a = la == structure;
        let hit_b = lb == structure;
        in_a += hit_a as usize;
        in_b += hit_b as usize;
        both += (hit_a && hit_b) as usize;
    }
    if in_a + in_b == 0 {
        return Ok(None);
    }
    Ok(Some(2.0 * both as f64 / (in_a + in_b) as f64))
}

/// Mean Dice over the given structures, skipping those absent from
/// both volumes. `None` when every structure was skipped.
pub fn mean_dice_over_structures(
    a: &LabelVolume,
    b: &LabelVolume,
    structures: &[u16],
) -> Result<Option<f64>> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for &s in structures {
        if let Some(d) = dice(a, b, s)? {
            sum += d;
            n += 1;
        }
    }
    if n == 0 {
        return Ok(None);
    }
    Ok(Some(sum / n as f64))
}

/// Voxel count of one structure.
pub fn structure_volume(labels: &LabelVolume, structure: u16) -> usize {
    labels.data().iter().filter(|&&l| l == structure).count()
}
