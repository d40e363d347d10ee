//! Structure-wise uncertainty metrics and quality control for
//! multi-structure volume segmentations.
//!
//! The crate models a Monte Carlo segmentation workflow: N stochastic
//! segmentation samples per subject are reduced to a final label map,
//! then per-structure agreement metrics (coefficient of variation,
//! pairwise Dice, intersection-over-union, mean voxel entropy) grade
//! how trustworthy each structure is without any ground truth. The
//! same metrics drive reliability weights for group-level volume
//! regression, and a synthetic phantom pipeline exercises everything
//! end to end.

pub mod degrade;
pub mod distance;
pub mod error;
pub mod io;
pub mod phantom;
pub mod quality;
pub mod regression;
pub mod uncertainty;
pub mod volume;

mod rng;

pub use degrade::{rician_corrupt, NoiseSpec};
pub use distance::{signed_distance_maps, DistanceMaps};
pub use phantom::{
    cohort_generate, make_phantom, mc_segment, CohortSpec, CovariateModel, GeneratedCohort,
    GeneratedSubject, PhantomSpec, SamplerSpec,
};

pub use error::{Error, Result};
pub use regression::{
    design_matrix, group_analysis, group_analysis_all, ols_fit, regression_to_csv,
    regression_to_json, weight_from_metrics, weights_from_metrics, wls_fit, DesignMatrix,
    RegressionResult, WeightScheme, WEIGHT_CAP, WEIGHT_FLOOR,
};
pub use quality::{
    classify, correlation_report, eval_records, iou_proxy_mae, pearson, proxy_accuracy, EvalRecord,
    MetricKind, QualityClass,
};
pub use uncertainty::{
    compute_all_structure_metrics, compute_structure_metrics, cv_volume, entropy_stability,
    global_entropy, global_entropy_normalized, mc_iou, mean_structure_entropy, pairwise_dice,
    voxel_entropy, voxel_entropy_normalized, EntropyVolume, StabilityTransition, StructureMetrics,
};
pub use volume::{
    aggregate_mean_argmax, dice, mean_dice_over_structures, structure_volume, Dims,
    IntensityVolume, LabelVolume, McSampleSet, ProbStack,
};

// The guide's code blocks compile and run as doc-tests, so the book
// cannot drift from the API.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/volumes.md")]
    mod volumes {}
    #[doc = include_str!("../../../book/src/uncertainty.md")]
    mod uncertainty {}
    #[doc = include_str!("../../../book/src/quality.md")]
    mod quality {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/degradation.md")]
    mod degradation {}
    #[doc = include_str!("../../../book/src/regression.md")]
    mod regression {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
