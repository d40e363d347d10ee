//! Weighted least-squares group analysis: regress normalized structure
//! volumes on demographics, with per-subject weights derived from the
//! agreement metrics so unreliable segmentations count less.

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::io::cohort::{CohortRow, CohortTable};
use crate::io::report::MetricsTable;
use crate::uncertainty::StructureMetrics;

/// Largest weight a scheme may produce.
pub const WEIGHT_CAP: f64 = 1e6;
/// Smallest denominator used by the inverse schemes, so `cv = 0` and
/// `dmc = 1` map to the cap instead of infinity.
pub const WEIGHT_FLOOR: f64 = 1e-9;

/// How a subject's reliability weight is derived from its metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    /// Every subject weighs 1; ordinary least squares.
    Uniform,
    /// 1 / cv: tight volume spread earns a large weight.
    InvCv,
    /// 1 / (1 - dmc): high sample agreement earns a large weight.
    InvOneMinusDmc,
    /// The intersection-over-union itself, already in [0, 1].
    Iou,
}

impl WeightScheme {
    pub fn name(self) -> &'static str {
        match self {
            WeightScheme::Uniform => "uniform",
            WeightScheme::InvCv => "inv_cv",
            WeightScheme::InvOneMinusDmc => "inv_one_minus_dmc",
            WeightScheme::Iou => "iou",
        }
    }
}

impl std::fmt::Display for WeightScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for WeightScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "uniform" => Ok(WeightScheme::Uniform),
            "inv_cv" | "invcv" => Ok(WeightScheme::InvCv),
            "inv_one_minus_dmc" | "invdmc" => Ok(WeightScheme::InvOneMinusDmc),
            "iou" => Ok(WeightScheme::Iou),
            other => Err(Error::DegenerateInput(format!(
                "unknown weight scheme `{other}`; expected uniform, invcv, invdmc, or iou"
            ))),
        }
    }
}

/// Weight for one subject, or `None` when the metric the scheme needs
/// is missing and the subject must be excluded.
pub fn weight_from_metrics(metrics: &StructureMetrics, scheme: WeightScheme) -> Option<f64> {
    let w = match scheme {
        WeightScheme::Uniform => Some(1.0),
        WeightScheme::InvCv => metrics.cv.map(|cv| 1.0 / cv.max(WEIGHT_FLOOR)),
        WeightScheme::InvOneMinusDmc => metrics.dmc.map(|d| 1.0 / (1.0 - d).max(WEIGHT_FLOOR)),
        WeightScheme::Iou => metrics.iou,
    };
    w.map(|w| w.min(WEIGHT_CAP))
}

/// Weights for a batch of subjects; `None` entries mark exclusions.
pub fn weights_from_metrics(
    metrics: &[StructureMetrics],
    scheme: WeightScheme,
) -> Vec<Option<f64>> {
    metrics
        .iter()
        .map(|m| weight_from_metrics(m, scheme))
        .collect()
}

/// Covariate matrix with one row per subject. Columns are intercept,
/// age, sex, diagnosis, then one indicator per site beyond the first
/// in sorted order (the dropped site is the reference level).
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub matrix: DMatrix<f64>,
    pub names: Vec<String>,
}

impl DesignMatrix {
    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn k(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Builds the design matrix for every row of a cohort.
pub fn design_matrix(cohort: &CohortTable) -> DesignMatrix {
    let rows: Vec<&CohortRow> = cohort.rows.iter().collect();
    design_from_rows(&rows)
}

fn design_from_rows(rows: &[&CohortRow]) -> DesignMatrix {
    let mut sites: Vec<&str> = rows.iter().map(|r| r.site.as_str()).collect();
    sites.sort_unstable();
    sites.dedup();
    // Reference level: the first site in sorted order gets no column.
    let extra: Vec<&str> = if sites.len() > 1 { sites[1..].to_vec() } else { Vec::new() };

    let k = 4 + extra.len();
    let mut names = vec![
        "intercept".to_string(),
        "age".to_string(),
        "sex".to_string(),
        "diagnosis".to_string(),
    ];
    names.extend(extra.iter().map(|s| format!("site_{s}")));

    let mut matrix = DMatrix::zeros(rows.len(), k);
    for (i, row) in rows.iter().enumerate() {
        matrix[(i, 0)] = 1.0;
        matrix[(i, 1)] = row.age;
        matrix[(i, 2)] = row.sex as f64;
        matrix[(i, 3)] = row.diagnosis as f64;
        if let Some(j) = extra.iter().position(|s| *s == row.site) {
            matrix[(i, 4 + j)] = 1.0;
        }
    }
    DesignMatrix { matrix, names }
}

/// Fitted coefficients with classical WLS inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    /// Column names, aligned with `beta`, `se`, `t`, `p`.
    pub names: Vec<String>,
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub t: Vec<f64>,
    /// Two-sided p-values from the Student-t survival function.
    pub p: Vec<f64>,
    /// Residual degrees of freedom, n - k.
    pub dof: usize,
    pub scheme: WeightScheme,
    /// Rows that entered the fit.
    pub n_used: usize,
    /// Rows dropped because the scheme's metric was missing.
    pub n_excluded: usize,
}

impl RegressionResult {
    pub fn coefficient(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Diagnosis effect size, the headline number of a group analysis.
    pub fn beta_diagnosis(&self) -> f64 {
        self.beta[self.coefficient("diagnosis").expect("diagnosis column")]
    }

    pub fn p_diagnosis(&self) -> f64 {
        self.p[self.coefficient("diagnosis").expect("diagnosis column")]
    }

    pub fn se_diagnosis(&self) -> f64 {
        self.se[self.coefficient("diagnosis").expect("diagnosis column")]
    }

    pub fn t_diagnosis(&self) -> f64 {
        self.t[self.coefficient("diagnosis").expect("diagnosis column")]
    }
}

/// Weighted least squares via the normal equations.
///
/// Minimizes sum of `w_i (y_i - x_i beta)^2`. Standard errors come
/// from `sigma^2 (X' W X)^-1` with `sigma^2` the weighted residual
/// sum of squares over `n - k`; multiplying all weights by a positive
/// constant therefore changes nothing.
pub fn wls_fit(
    x: &DesignMatrix,
    y: &[f64],
    weights: &[f64],
    scheme: WeightScheme,
) -> Result<RegressionResult> {
    let n = x.n();
    let k = x.k();
    if y.len() != n || weights.len() != n {
        return Err(Error::DegenerateInput(format!(
            "design has {n} rows but y has {} and weights {}",
            y.len(),
            weights.len()
        )));
    }
    if n <= k {
        return Err(Error::InsufficientData { n, k });
    }
    if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return Err(Error::DegenerateInput(format!(
            "weights must be finite and non-negative, got {w}"
        )));
    }
    let n_pos = weights.iter().filter(|w| **w > 0.0).count();
    if n_pos < k {
        return Err(Error::InsufficientData { n: n_pos, k });
    }

    // X' W X and X' W y without materializing the diagonal W.
    let mut wx = x.matrix.clone();
    for (i, &w) in weights.iter().enumerate() {
        wx.row_mut(i).scale_mut(w);
    }
    let xtwx = x.matrix.transpose() * &wx;
    let yv = DVector::from_column_slice(y);
    let xtwy = wx.transpose() * &yv;

    let chol = Cholesky::new(xtwx).ok_or(Error::RankDeficient)?;
    let beta = chol.solve(&xtwy);
    let cov_unscaled = chol.inverse();

    let residuals = &yv - &x.matrix * &beta;
    let rss_w: f64 = residuals
        .iter()
        .zip(weights)
        .map(|(r, w)| w * r * r)
        .sum();
    let dof = n - k;
    let sigma2 = rss_w / dof as f64;

    let mut se = Vec::with_capacity(k);
    let mut t = Vec::with_capacity(k);
    let mut p = Vec::with_capacity(k);
    // dof >= 1 here, so the distribution always constructs.
    let dist = StudentsT::new(0.0, 1.0, dof as f64)
        .map_err(|e| Error::DegenerateInput(format!("t distribution: {e}")))?;
    for j in 0..k {
        let var = sigma2 * cov_unscaled[(j, j)];
        let se_j = if var > 0.0 { var.sqrt() } else { 0.0 };
        // Perfect fits give se = 0: the coefficient is known exactly,
        // so any nonzero estimate is infinitely significant.
        let t_j = if se_j > 0.0 {
            beta[j] / se_j
        } else if beta[j] == 0.0 {
            0.0
        } else {
            f64::INFINITY * beta[j].signum()
        };
        let p_j = if t_j.is_finite() {
            (2.0 * (1.0 - dist.cdf(t_j.abs()))).clamp(0.0, 1.0)
        } else {
            0.0
        };
        se.push(se_j);
        t.push(t_j);
        p.push(p_j);
    }

    Ok(RegressionResult {
        names: x.names.clone(),
        beta: beta.iter().copied().collect(),
        se,
        t,
        p,
        dof,
        scheme,
        n_used: n,
        n_excluded: 0,
    })
}

/// Ordinary least squares: `wls_fit` with every weight exactly 1.
pub fn ols_fit(x: &DesignMatrix, y: &[f64]) -> Result<RegressionResult> {
    wls_fit(x, y, &vec![1.0; x.n()], WeightScheme::Uniform)
}

/// Regresses one structure's normalized volumes on the cohort
/// covariates, weighting subjects by `scheme`.
///
/// Weights come from `metrics` when given, else from the cohort's own
/// weight column for that structure. Subjects whose weight source is
/// missing are excluded and counted in `n_excluded`, and the site
/// indicator columns are rebuilt from the subjects that remain.
pub fn group_analysis(
    cohort: &CohortTable,
    structure: u16,
    scheme: WeightScheme,
    metrics: Option<&MetricsTable>,
) -> Result<RegressionResult> {
    let idx = cohort
        .structure_index(structure)
        .ok_or_else(|| Error::MissingColumn(format!("vol_{structure}")))?;

    let mut rows: Vec<&CohortRow> = Vec::new();
    let mut y = Vec::new();
    let mut w = Vec::new();
    for row in &cohort.rows {
        let weight = match scheme {
            WeightScheme::Uniform => Some(1.0),
            _ => match metrics {
                Some(table) => table
                    .get(&row.subject_id, structure)
                    .and_then(|rec| weight_from_metrics(&rec.metrics(), scheme)),
                None => row.weights[idx].map(|w| w.min(WEIGHT_CAP)),
            },
        };
        if let Some(weight) = weight {
            rows.push(row);
            y.push(row.volumes[idx]);
            w.push(weight);
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }

    let design = design_from_rows(&rows);
    let mut fit = wls_fit(&design, &y, &w, scheme)?;
    fit.n_excluded = cohort.rows.len() - rows.len();
    Ok(fit)
}

/// Runs `group_analysis` for every structure of the cohort in
/// parallel. Results come back in structure order.
pub fn group_analysis_all(
    cohort: &CohortTable,
    scheme: WeightScheme,
    metrics: Option<&MetricsTable>,
) -> Result<Vec<(u16, RegressionResult)>> {
    cohort
        .structures
        .par_iter()
        .map(|&s| group_analysis(cohort, s, scheme, metrics).map(|r| (s, r)))
        .collect()
}

/// One line per structure: the diagnosis coefficient and its
/// inference, which is what a group comparison reports.
pub fn regression_to_csv(rows: &[(u16, RegressionResult)]) -> String {
    let mut out = String::from("structure,scheme,beta_d,se_d,t_d,p_d,n_used,n_excluded\n");
    for (structure, r) in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            structure,
            r.scheme,
            r.beta_diagnosis(),
            r.se_diagnosis(),
            r.t_diagnosis(),
            r.p_diagnosis(),
            r.n_used,
            r.n_excluded
        ));
    }
    out
}

pub fn regression_to_json(rows: &[(u16, RegressionResult)]) -> String {
    let items: Vec<serde_json::Value> = rows
        .iter()
        .map(|(structure, r)| {
            let mut v = serde_json::to_value(r).expect("regression result serializes");
            v.as_object_mut()
                .expect("object")
                .insert("structure".to_string(), serde_json::json!(structure));
            v
        })
        .collect();
    let mut text =
        serde_json::to_string_pretty(&items).expect("regression table serializes");
    text.push('\n');
    text
}
