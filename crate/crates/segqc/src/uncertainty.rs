//! Structure-wise agreement metrics over a Monte Carlo sample set.
//!
//! Four complementary views of how much the N samples disagree:
//! volume spread (CV), pairwise overlap (mean Dice), N-way overlap
//! (IoU), and mean voxel entropy inside the final structure mask.
//! Each returns `None` ("missing") instead of a number when a
//! structure vanishes from the relevant volumes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{dice, Dims, LabelVolume, McSampleSet};

/// Scalar voxel map of accumulated entropy.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyVolume {
    dims: Dims,
    data: Vec<f64>,
}

impl EntropyVolume {
    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// Extends -p·ln(p) to the closed interval: 0 at both endpoints.
/// Inputs may stray past [0, 1] by float slack, so clamp first.
#[inline]
fn neg_p_ln_p(p: f64) -> f64 {
    let p = p.clamp(0.0, 1.0);
    if p == 0.0 || p == 1.0 {
        0.0
    } else {
        -p * p.ln()
    }
}

/// Per-voxel entropy of one structure, summed over samples:
/// U_s(x) = Σ_i −P_i_s(x)·ln P_i_s(x). Grows with N; see
/// [`voxel_entropy_normalized`] for the per-sample average.
pub fn voxel_entropy(samples: &McSampleSet, structure: u16) -> Result<EntropyVolume> {
    let stacks = samples.require_probs()?;
    let dims = samples.dims();
    check_structure(samples, structure)?;
    let mut data = vec![0.0f64; dims.voxel_count()];
    for stack in stacks {
        for (acc, &p) in data.iter_mut().zip(stack.class_slice(structure)) {
            *acc += neg_p_ln_p(p as f64);
        }
    }
    Ok(EntropyVolume { dims, data })
}

/// [`voxel_entropy`] divided by the sample count, so values are
/// comparable across different N.
pub fn voxel_entropy_normalized(samples: &McSampleSet, structure: u16) -> Result<EntropyVolume> {
    let mut e = voxel_entropy(samples, structure)?;
    let n = samples.n_samples() as f64;
    for v in &mut e.data {
        *v /= n;
    }
    Ok(e)
}

/// Total entropy per voxel: the structure-wise sums accumulated over
/// every class, background included.
pub fn global_entropy(samples: &McSampleSet) -> Result<EntropyVolume> {
    let stacks = samples.require_probs()?;
    let dims = samples.dims();
    let mut data = vec![0.0f64; dims.voxel_count()];
    for stack in stacks {
        for c in 0..samples.num_classes() {
            for (acc, &p) in data.iter_mut().zip(stack.class_slice(c)) {
                *acc += neg_p_ln_p(p as f64);
            }
        }
    }
    Ok(EntropyVolume { dims, data })
}

/// [`global_entropy`] divided by the sample count.
pub fn global_entropy_normalized(samples: &McSampleSet) -> Result<EntropyVolume> {
    let mut e = global_entropy(samples)?;
    let n = samples.n_samples() as f64;
    for v in &mut e.data {
        *v /= n;
    }
    Ok(e)
}

/// Coefficient of variation of the structure's voxel count across
/// samples: sample std (N−1 denominator) over mean. `None` when fewer
/// than two samples or the structure is absent from every sample.
pub fn cv_volume(samples: &McSampleSet, structure: u16) -> Option<f64> {
    counts_cv(&per_sample_counts(samples, structure))
}

/// Mean Dice over all N(N−1)/2 unordered sample pairs. Pairs where the
/// structure is absent from both members are skipped; `None` when every
/// pair was skipped or there are fewer than two samples.
pub fn pairwise_dice(samples: &McSampleSet, structure: u16) -> Option<f64> {
    let labels = samples.labels();
    let n = labels.len();
    if n < 2 {
        return None;
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            // Same grid by construction, so dice cannot fail.
            if let Some(d) = dice(&labels[i], &labels[j], structure).expect("consistent grids") {
                sum += d;
                pairs += 1;
            }
        }
    }
    if pairs == 0 {
        return None;
    }
    Some(sum / pairs as f64)
}

/// N-way intersection over N-way union of the structure masks.
/// `None` when the union is empty.
pub fn mc_iou(samples: &McSampleSet, structure: u16) -> Option<f64> {
    let labels = samples.labels();
    let mut inter = 0usize;
    let mut union = 0usize;
    for v in 0..samples.dims().voxel_count() {
        let mut all = true;
        let mut any = false;
        for l in labels {
            if l.label_at(v) == structure {
                any = true;
            } else {
                all = false;
            }
        }
        inter += (all && any) as usize;
        union += any as usize;
    }
    if union == 0 {
        return None;
    }
    Some(inter as f64 / union as f64)
}

/// Mean global entropy over the voxels the final segmentation assigns
/// to the structure. `None` when the structure is absent from the
/// final segmentation.
pub fn mean_structure_entropy(
    samples: &McSampleSet,
    final_seg: &LabelVolume,
    structure: u16,
) -> Result<Option<f64>> {
    let global = global_entropy(samples)?;
    Ok(mask_mean(&global, final_seg, structure))
}

fn mask_mean(entropy: &EntropyVolume, final_seg: &LabelVolume, structure: u16) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (v, &l) in final_seg.data().iter().enumerate() {
        if l == structure {
            sum += entropy.data[v];
            n += 1;
        }
    }
    if n == 0 {
        return None;
    }
    Some(sum / n as f64)
}

/// One step of the sample-count sweep: mean |ΔU| between the entropy
/// maps built from the first `from` and first `to` samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityTransition {
    pub from: usize,
    pub to: usize,
    pub mean_abs_diff: f64,
}

/// Mean absolute change of the per-sample-normalized global entropy
/// map between consecutive sample counts. Normalizing by the count
/// puts all prefixes on one scale, so the sequence shrinks as the
/// Monte Carlo average converges; the raw sums would instead grow
/// with every added sample.
pub fn entropy_stability(samples: &McSampleSet, counts: &[usize]) -> Result<Vec<StabilityTransition>> {
    let stacks = samples.require_probs()?;
    let n = stacks.len();
    if counts.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut prev = 0usize;
    for &c in counts {
        if c <= prev || c > n {
            return Err(Error::CountOutOfRange {
                count: c,
                available: n,
            });
        }
        prev = c;
    }

    let voxels = samples.dims().voxel_count();
    let mut running = vec![0.0f64; voxels];
    let mut consumed = 0usize;
    let mut prev_map: Option<Vec<f64>> = None;
    let mut prev_count = 0usize;
    let mut out = Vec::with_capacity(counts.len().saturating_sub(1));
    for &count in counts {
        while consumed < count {
            let stack = &stacks[consumed];
            for c in 0..samples.num_classes() {
                for (acc, &p) in running.iter_mut().zip(stack.class_slice(c)) {
                    *acc += neg_p_ln_p(p as f64);
                }
            }
            consumed += 1;
        }
        let map: Vec<f64> = running.iter().map(|&u| u / count as f64).collect();
        if let Some(prev_map) = &prev_map {
            let sum_abs: f64 = map
                .iter()
                .zip(prev_map)
                .map(|(a, b)| (a - b).abs())
                .sum();
            out.push(StabilityTransition {
                from: prev_count,
                to: count,
                mean_abs_diff: sum_abs / voxels as f64,
            });
        }
        prev_map = Some(map);
        prev_count = count;
    }
    Ok(out)
}

/// All four agreement metrics plus volume statistics for one structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureMetrics {
    pub structure: u16,
    pub cv: Option<f64>,
    pub dmc: Option<f64>,
    pub iou: Option<f64>,
    pub mean_entropy: Option<f64>,
    pub mean_volume: f64,
    pub volume_std: f64,
}

fn per_sample_counts(samples: &McSampleSet, structure: u16) -> Vec<usize> {
    samples
        .labels()
        .iter()
        .map(|l| l.data().iter().filter(|&&v| v == structure).count())
        .collect()
}

fn counts_mean_std(counts: &[usize]) -> (f64, f64) {
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<usize>() as f64 / n;
    if counts.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = counts
        .iter()
        .map(|&c| {
            let d = c as f64 - mean;
            d * d
        })
        .sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

fn counts_cv(counts: &[usize]) -> Option<f64> {
    if counts.len() < 2 {
        return None;
    }
    let (mean, std) = counts_mean_std(counts);
    if mean == 0.0 {
        return None;
    }
    Some(std / mean)
}

fn check_structure(samples: &McSampleSet, structure: u16) -> Result<()> {
    if structure >= samples.num_classes() {
        return Err(Error::InvalidVolume(format!(
            "structure {structure} out of range for {} classes",
            samples.num_classes()
        )));
    }
    Ok(())
}

/// Metrics for one structure. `final_seg` feeds the mean-entropy
/// metric; without it (or without probability stacks) that field is
/// `None`.
pub fn compute_structure_metrics(
    samples: &McSampleSet,
    final_seg: Option<&LabelVolume>,
    structure: u16,
) -> Result<StructureMetrics> {
    let counts = per_sample_counts(samples, structure);
    let (mean_volume, volume_std) = counts_mean_std(&counts);
    let mean_entropy = match (samples.prob_stacks(), final_seg) {
        (Some(_), Some(seg)) => {
            if seg.dims() != samples.dims() {
                return Err(Error::ShapeMismatch {
                    expected: samples.dims(),
                    actual: seg.dims(),
                });
            }
            mean_structure_entropy(samples, seg, structure)?
        }
        _ => None,
    };
    Ok(StructureMetrics {
        structure,
        cv: counts_cv(&counts),
        dmc: pairwise_dice(samples, structure),
        iou: mc_iou(samples, structure),
        mean_entropy,
        mean_volume,
        volume_std,
    })
}

/// Metrics for every foreground structure (class ids 1..num_classes),
/// sharing the per-pair and entropy passes across structures.
pub fn compute_all_structure_metrics(
    samples: &McSampleSet,
    final_seg: Option<&LabelVolume>,
) -> Result<Vec<StructureMetrics>> {
    let labels = samples.labels();
    let n = labels.len();
    let classes = samples.num_classes() as usize;
    let voxels = samples.dims().voxel_count();

    if let Some(seg) = final_seg {
        if seg.dims() != samples.dims() {
            return Err(Error::ShapeMismatch {
                expected: samples.dims(),
                actual: seg.dims(),
            });
        }
    }

    // Per-sample voxel counts for every class in one pass per sample.
    let mut counts = vec![vec![0usize; classes]; n];
    for (i, l) in labels.iter().enumerate() {
        for &v in l.data() {
            counts[i][v as usize] += 1;
        }
    }

    // N-way intersection and union per class.
    let mut inter = vec![0usize; classes];
    let mut union = vec![0usize; classes];
    for v in 0..voxels {
        let first = labels[0].label_at(v);
        let mut all_same = true;
        for l in &labels[1..] {
            let lv = l.label_at(v);
            if lv != first {
                all_same = false;
            }
        }
        if all_same {
            inter[first as usize] += 1;
            union[first as usize] += 1;
        } else {
            let mut seen = vec![false; classes];
            for l in labels {
                seen[l.label_at(v) as usize] = true;
            }
            for (c, &hit) in seen.iter().enumerate() {
                union[c] += hit as usize;
            }
        }
    }

    // Pairwise intersections: only voxels where both samples agree on a
    // label contribute to that label's intersection.
    let mut dmc_sum = vec![0.0f64; classes];
    let mut dmc_pairs = vec![0usize; classes];
    for i in 0..n {
        for j in (i + 1)..n {
            let mut pair_inter = vec![0usize; classes];
            for v in 0..voxels {
                let a = labels[i].label_at(v);
                if a == labels[j].label_at(v) {
                    pair_inter[a as usize] += 1;
                }
            }
            for c in 0..classes {
                let denom = counts[i][c] + counts[j][c];
                if denom > 0 {
                    dmc_sum[c] += 2.0 * pair_inter[c] as f64 / denom as f64;
                    dmc_pairs[c] += 1;
                }
            }
        }
    }

    // One global entropy map shared across structures.
    let entropy = match (samples.prob_stacks(), final_seg) {
        (Some(_), Some(_)) => Some(global_entropy(samples)?),
        _ => None,
    };

    let mut out = Vec::with_capacity(classes - 1);
    for c in 1..classes {
        let class_counts: Vec<usize> = counts.iter().map(|row| row[c]).collect();
        let (mean_volume, volume_std) = counts_mean_std(&class_counts);
        let iou = if union[c] == 0 {
            None
        } else {
            Some(inter[c] as f64 / union[c] as f64)
        };
        let dmc = if n < 2 || dmc_pairs[c] == 0 {
            None
        } else {
            Some(dmc_sum[c] / dmc_pairs[c] as f64)
        };
        let mean_entropy = match (&entropy, final_seg) {
            (Some(e), Some(seg)) => mask_mean(e, seg, c as u16),
            _ => None,
        };
        out.push(StructureMetrics {
            structure: c as u16,
            cv: counts_cv(&class_counts),
            dmc,
            iou,
            mean_entropy,
            mean_volume,
            volume_std,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{aggregate_mean_argmax, ProbStack};

    fn labels(dims: Dims, c: u16, data: Vec<u16>) -> LabelVolume {
        LabelVolume::new(dims, c, data).unwrap()
    }

    fn label_set(c: u16, rows: Vec<Vec<u16>>) -> McSampleSet {
        let dims = Dims::new(rows[0].len(), 1, 1);
        let vols = rows
            .into_iter()
            .map(|r| labels(dims, c, r))
            .collect();
        McSampleSet::from_labels("s", vols).unwrap()
    }

    #[test]
    fn entropy_of_coin_flip_is_ln_two_per_sample() {
        let d = Dims::new(1, 1, 1);
        let stacks = vec![
            ProbStack::new(d, 2, vec![0.5, 0.5]).unwrap(),
            ProbStack::new(d, 2, vec![0.5, 0.5]).unwrap(),
        ];
        let set = McSampleSet::from_prob_stacks("s", stacks).unwrap();
        let u = voxel_entropy(&set, 1).unwrap();
        // Two samples, each contributing 0.5·ln 2 → ln 2 total.
        assert!((u.data()[0] - std::f64::consts::LN_2).abs() < 1e-12);
        let un = voxel_entropy_normalized(&set, 1).unwrap();
        assert!((un.data()[0] - std::f64::consts::LN_2 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn entropy_sums_literally_over_samples() {
        let d = Dims::new(1, 1, 1);
        let stacks = vec![
            ProbStack::new(d, 2, vec![0.0, 1.0]).unwrap(),
            ProbStack::new(d, 2, vec![0.5, 0.5]).unwrap(),
            ProbStack::new(d, 2, vec![0.5, 0.5]).unwrap(),
        ];
        let set = McSampleSet::from_prob_stacks("s", stacks).unwrap();
        let u = voxel_entropy(&set, 1).unwrap();
        // 0 + 2·(0.5·ln 2) = ln 2 ≈ 0.6931.
        assert!((u.data()[0] - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn certain_voxels_have_zero_entropy() {
        let d = Dims::new(2, 1, 1);
        let stacks = vec![
            ProbStack::new(d, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            ProbStack::new(d, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
        ];
        let set = McSampleSet::from_prob_stacks("s", stacks).unwrap();
        let g = global_entropy(&set).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0]);
    }

    #[test]
    fn global_entropy_sums_structure_entropies() {
        let d = Dims::new(1, 1, 1);
        let stacks = vec![
            ProbStack::new(d, 3, vec![0.2, 0.3, 0.5]).unwrap(),
            ProbStack::new(d, 3, vec![0.6, 0.1, 0.3]).unwrap(),
        ];
        let set = McSampleSet::from_prob_stacks("s", stacks).unwrap();
        let total: f64 = (0..3)
            .map(|c| voxel_entropy(&set, c).unwrap().data()[0])
            .sum();
        let g = global_entropy(&set).unwrap().data()[0];
        assert!((g - total).abs() < 1e-12);
    }

    #[test]
    fn entropy_requires_probs() {
        let set = label_set(2, vec![vec![0, 1], vec![1, 0]]);
        assert!(matches!(voxel_entropy(&set, 1), Err(Error::ProbRequired)));
        assert!(matches!(global_entropy(&set), Err(Error::ProbRequired)));
    }

    #[test]
    fn cv_known_value() {
        // Counts 8, 10, 12 → mean 10, sample std 2 → CV 0.2.
        let set = label_set(
            2,
            vec![
                vec![1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0],
                vec![1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0],
                vec![1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1],
            ],
        );
        let cv = cv_volume(&set, 1).unwrap();
        assert!((cv - 0.2).abs() < 1e-12);
    }

    #[test]
    fn cv_missing_cases() {
        let set = label_set(2, vec![vec![0, 0], vec![0, 0]]);
        assert_eq!(cv_volume(&set, 1), None);
        let single = label_set(2, vec![vec![1, 0]]);
        assert_eq!(cv_volume(&single, 1), None);
    }

    #[test]
    fn pairwise_dice_known_value() {
        // Samples {a,b}, {a}, {a,b}: pair dice 2/3, 2/3, 1 → wait:
        // (1,2): inter 1, sizes 2+1 → 2/3; (1,3): 1.0; (2,3): 2/3.
        let set = label_set(2, vec![vec![1, 1], vec![1, 0], vec![1, 1]]);
        let d = pairwise_dice(&set, 1).unwrap();
        assert!((d - (2.0 / 3.0 + 1.0 + 2.0 / 3.0) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn pairwise_dice_skips_empty_pairs() {
        // Structure present only in sample 3: pairs (1,2) skipped,
        // (1,3) and (2,3) are 0.
        let set = label_set(2, vec![vec![0, 0], vec![0, 0], vec![1, 1]]);
        assert_eq!(pairwise_dice(&set, 1), Some(0.0));
        let all_empty = label_set(2, vec![vec![0, 0], vec![0, 0]]);
        assert_eq!(pairwise_dice(&all_empty, 1), None);
    }

    #[test]
    fn mc_iou_known_value() {
        // Samples {a,b}, {a}, {a,b}: intersection {a}, union {a,b} → 0.5.
        let set = label_set(2, vec![vec![1, 1], vec![1, 0], vec![1, 1]]);
        assert_eq!(mc_iou(&set, 1), Some(0.5));
        let empty = label_set(2, vec![vec![0, 0], vec![0, 0]]);
        assert_eq!(mc_iou(&empty, 1), None);
    }

    #[test]
    fn mc_iou_never_exceeds_pairwise_dice() {
        let set = label_set(
            3,
            vec![vec![1, 1, 2, 0], vec![1, 2, 2, 0], vec![1, 1, 0, 2]],
        );
        for s in 1..3 {
            let iou = mc_iou(&set, s).unwrap();
            let dmc = pairwise_dice(&set, s).unwrap();
            assert!(iou <= dmc, "structure {s}: iou {iou} > dmc {dmc}");
        }
    }

    #[test]
    fn mean_entropy_masks_by_final_seg() {
        let d = Dims::new(2, 1, 1);
        // Voxel 0 entropy per sample ln 2 (two samples → global 2·... ),
        // voxel 1 certain background.
        let stacks = vec![
            ProbStack::new(d, 2, vec![0.5, 1.0, 0.5, 0.0]).unwrap(),
            ProbStack::new(d, 2, vec![0.5, 1.0, 0.5, 0.0]).unwrap(),
        ];
        let set = McSampleSet::from_prob_stacks("s", stacks).unwrap();
        let seg = labels(d, 2, vec![1, 0]);
        let got = mean_structure_entropy(&set, &seg, 1).unwrap().unwrap();
        assert!((got - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(mean_structure_entropy(&set, &seg, 0).unwrap().unwrap(), 0.0);
        // Structure absent from the final segmentation → missing.
        let seg_bg = labels(d, 2, vec![0, 0]);
        assert_eq!(mean_structure_entropy(&set, &seg_bg, 1).unwrap(), None);
    }

    #[test]
    fn mean_entropy_example() {
        // Entropy map [0.2, 0.4] over a two-voxel structure → 0.3.
        let e = EntropyVolume {
            dims: Dims::new(2, 1, 1),
            data: vec![0.2, 0.4],
        };
        let seg = labels(Dims::new(2, 1, 1), 2, vec![1, 1]);
        assert!((mask_mean(&e, &seg, 1).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn stability_validates_counts() {
        let d = Dims::new(1, 1, 1);
        let stacks: Vec<_> = (0..5)
            .map(|_| ProbStack::new(d, 2, vec![0.5, 0.5]).unwrap())
            .collect();
        let set = McSampleSet::from_prob_stacks("s", stacks).unwrap();
        assert!(matches!(
            entropy_stability(&set, &[2, 2]),
            Err(Error::CountOutOfRange { count: 2, .. })
        ));
        assert!(matches!(
            entropy_stability(&set, &[3, 6]),
            Err(Error::CountOutOfRange { count: 6, available: 5 })
        ));
        assert!(matches!(
            entropy_stability(&set, &[]),
            Err(Error::EmptyInput)
        ));
    }

    #[test]
    fn stability_zero_for_identical_samples() {
        let d = Dims::new(2, 2, 1);
        let stacks: Vec<_> = (0..6)
            .map(|_| ProbStack::new(d, 2, vec![0.3; 4].into_iter().chain(vec![0.7; 4]).collect()).unwrap())
            .collect();
        let set = McSampleSet::from_prob_stacks("s", stacks).unwrap();
        let t = entropy_stability(&set, &[2, 4, 6]).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!((t[0].from, t[0].to), (2, 4));
        assert_eq!((t[1].from, t[1].to), (4, 6));
        for tr in t {
            assert!(tr.mean_abs_diff.abs() < 1e-12);
        }
    }

    #[test]
    fn stability_matches_direct_prefix_computation() {
        let d = Dims::new(2, 1, 1);
        let mk = |p: f32| ProbStack::new(d, 2, vec![p, 1.0 - p, 1.0 - p, p]).unwrap();
        let stacks = vec![mk(0.9), mk(0.4), mk(0.7), mk(0.2)];
        let set = McSampleSet::from_prob_stacks("s", stacks.clone()).unwrap();
        let t = entropy_stability(&set, &[2, 4]).unwrap();

        let prefix = |k: usize| {
            let sub = McSampleSet::from_prob_stacks("p", stacks[..k].to_vec()).unwrap();
            let g = global_entropy(&sub).unwrap();
            g.data().iter().map(|&u| u / k as f64).collect::<Vec<_>>()
        };
        let a = prefix(2);
        let b = prefix(4);
        let expect = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / 2.0;
        assert!((t[0].mean_abs_diff - expect).abs() < 1e-12);
    }

    #[test]
    fn structure_metrics_gathers_everything() {
        let d = Dims::new(3, 1, 1);
        let stacks = vec![
            ProbStack::new(d, 2, vec![0.1, 0.2, 0.9, 0.9, 0.8, 0.1]).unwrap(),
            ProbStack::new(d, 2, vec![0.2, 0.6, 0.8, 0.8, 0.4, 0.2]).unwrap(),
        ];
        let set = McSampleSet::from_prob_stacks("s", stacks).unwrap();
        let seg = aggregate_mean_argmax(&set).unwrap();
        let m = compute_structure_metrics(&set, Some(&seg), 1).unwrap();
        assert_eq!(m.structure, 1);
        assert!(m.cv.is_some() && m.dmc.is_some() && m.iou.is_some());
        assert!(m.mean_entropy.is_some());
        let all = compute_all_structure_metrics(&set, Some(&seg)).unwrap();
        assert_eq!(all.len(), 1);
        assert_eq!(&all[0], &m);
    }

    #[test]
    fn batch_metrics_match_single_structure_path() {
        let d = Dims::new(4, 2, 1);
        let mk = |data: Vec<u16>| labels(d, 4, data);
        let set = McSampleSet::from_labels(
            "s",
            vec![
                mk(vec![0, 1, 1, 2, 2, 3, 0, 0]),
                mk(vec![1, 1, 2, 2, 3, 3, 0, 0]),
                mk(vec![0, 1, 1, 1, 2, 3, 3, 0]),
            ],
        )
        .unwrap();
        let all = compute_all_structure_metrics(&set, None).unwrap();
        assert_eq!(all.len(), 3);
        for m in &all {
            let single = compute_structure_metrics(&set, None, m.structure).unwrap();
            assert_eq!(m, &single);
        }
    }

    #[test]
    fn label_only_metrics_have_no_entropy() {
        let set = label_set(2, vec![vec![1, 0], vec![1, 1]]);
        let m = compute_structure_metrics(&set, None, 1).unwrap();
        assert_eq!(m.mean_entropy, None);
        assert!(m.cv.is_some());
    }
}
