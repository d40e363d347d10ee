//! Batch front end for the segmentation QC library: compute agreement
//! metrics for sample sets on disk, simulate synthetic cohorts, corrupt
//! images with Rician noise, run weighted volume regressions, and
//! tabulate entropy stability. Every subcommand is deterministic given
//! its seed and inputs; exit code 0 on success, 2 on usage or input
//! errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use segqc::io::cohort::{read_cohort_csv_file, write_cohort_csv};
use segqc::io::report::{eval_to_csv, eval_to_json, metrics_records, MetricsTable};
use segqc::io::svol::{read_svol_file, write_svol_file, Volume};
use segqc::{
    aggregate_mean_argmax, cohort_generate, entropy_stability, eval_records, group_analysis,
    group_analysis_all, regression_to_csv, regression_to_json, rician_corrupt, CohortSpec, Dims,
    EvalRecord, IntensityVolume, LabelVolume, McSampleSet, NoiseSpec, ProbStack, RegressionResult,
    WeightScheme,
};

#[derive(Parser)]
#[command(name = "segqc", version, about = "Segmentation quality control from Monte Carlo samples")]
struct Cli {
    /// Worker threads (env SEGQC_JOBS is the fallback; default: all cores).
    /// Outputs are identical regardless of the setting.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-structure agreement metrics from a directory of SVOL samples
    Metrics(MetricsArgs),
    /// Generate a synthetic cohort: images, truths, samples, cohort CSV
    Simulate(SimulateArgs),
    /// Corrupt an intensity volume with Rician noise at one or more levels
    Degrade(DegradeArgs),
    /// Weighted regression of structure volume on cohort covariates
    Regress(RegressArgs),
    /// Mean absolute entropy-map change across growing sample counts
    Stability(StabilityArgs),
}

#[derive(Args)]
struct MetricsArgs {
    /// Directory holding one subject's sample_*.svol files, or a
    /// directory of such per-subject directories
    #[arg(long)]
    samples: PathBuf,

    /// Output directory for metrics.json/metrics.csv (plus
    /// eval.json/eval.csv when a truth is available)
    #[arg(long)]
    out: PathBuf,

    /// Reference labels; defaults to truth.svol next to the samples
    /// when present (single-subject mode only)
    #[arg(long)]
    truth: Option<PathBuf>,

    /// Subject id for the report rows; defaults to the directory name
    #[arg(long)]
    subject: Option<String>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Number of subjects
    #[arg(long)]
    subjects: usize,

    /// Per-subject perturbation severity range, drawn uniformly
    #[arg(long, value_name = "LO,HI", default_value = "0.2,3.0")]
    rho_range: String,

    /// Master seed; the whole cohort is a pure function of it
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Output directory (cohort.csv plus subjects/<id>/*.svol)
    #[arg(long)]
    out: PathBuf,

    /// Grid size: one value for a cube or X,Y,Z
    #[arg(long, default_value = "48")]
    dims: String,

    /// Number of labeled structures (>= 2; background excluded)
    #[arg(long, default_value_t = 3)]
    structures: u16,

    /// Monte Carlo samples per subject
    #[arg(long, default_value_t = 15)]
    n_samples: usize,

    /// Write samples as probability stacks instead of label volumes
    /// (larger files; required downstream by `stability`)
    #[arg(long)]
    emit_probs: bool,
}

#[derive(Args)]
struct DegradeArgs {
    /// Input intensity volume
    #[arg(long)]
    img: PathBuf,

    /// Noise levels in dB
    #[arg(long, value_name = "DB,...", default_value = "3,5,7,9")]
    levels: String,

    /// Noise seed, shared across levels so they differ only in amplitude
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Output directory for noisy_<level>db.svol files
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RegressArgs {
    /// Cohort CSV (subject_id,age,sex,diagnosis,site,vol_*)
    #[arg(long)]
    cohort: PathBuf,

    /// Metrics JSON from `segqc metrics`; source of the subject
    /// weights for every scheme except uniform
    #[arg(long)]
    metrics: Option<PathBuf>,

    /// Structure id; default: every structure in the cohort
    #[arg(long)]
    structure: Option<u16>,

    /// Subject weighting: iou, invcv, invdmc, or uniform
    #[arg(long, default_value = "uniform")]
    scheme: String,

    /// Also write the table (.json for JSON, anything else CSV)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StabilityArgs {
    /// Directory holding one subject's sample_*.svol probability stacks
    #[arg(long)]
    samples: PathBuf,

    /// Strictly increasing prefix sizes to compare
    #[arg(long, value_name = "N,...", default_value = "3,6,9,12,15")]
    counts: String,

    /// Also write the transition table as CSV
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_jobs(cli.jobs);
    let result = match cli.command {
        Command::Metrics(a) => cmd_metrics(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Degrade(a) => cmd_degrade(&a),
        Command::Regress(a) => cmd_regress(&a),
        Command::Stability(a) => cmd_stability(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

/// `--jobs`, then SEGQC_JOBS, then rayon's default. Results never
/// depend on the pool size, only wall time does.
fn init_jobs(flag: Option<usize>) {
    let jobs = flag.or_else(|| {
        std::env::var("SEGQC_JOBS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = jobs.filter(|&n| n > 0) {
        // Ignore "already built": the pool is configured once.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
}

type CmdResult<T = ()> = Result<T, String>;

fn ctx<T, E: std::fmt::Display>(r: Result<T, E>, path: &Path) -> CmdResult<T> {
    r.map_err(|e| format!("{}: {e}", path.display()))
}

// ---------------------------------------------------------------------------
// metrics

/// One subject's samples loaded from disk, plus whatever reference
/// labels were found next to them.
struct LoadedSubject {
    id: String,
    samples: McSampleSet,
    truth: Option<LabelVolume>,
}

fn cmd_metrics(args: &MetricsArgs) -> CmdResult {
    let subjects = load_subjects(args)?;

    let mut metric_rows = Vec::new();
    let mut eval_rows: Vec<EvalRecord> = Vec::new();
    for s in &subjects {
        let final_seg = match s.samples.prob_stacks() {
            Some(_) => Some(ctx(aggregate_mean_argmax(&s.samples), &args.samples)?),
            None => None,
        };
        metric_rows.extend(ctx(
            metrics_records(&s.id, &s.samples, final_seg.as_ref()),
            &args.samples,
        )?);
        if let Some(truth) = &s.truth {
            let seg = final_seg.as_ref().ok_or_else(|| {
                format!(
                    "{}: evaluation against truth needs probability samples",
                    args.samples.display()
                )
            })?;
            eval_rows.extend(ctx(eval_records(&s.samples, seg, truth), &args.samples)?);
        }
    }

    // All inputs parsed and all numbers computed; only now touch disk.
    ctx(fs::create_dir_all(&args.out), &args.out)?;
    let table = MetricsTable::new(metric_rows);
    write_text(&args.out.join("metrics.json"), &table.to_json())?;
    write_text(&args.out.join("metrics.csv"), &table.to_csv())?;
    if !eval_rows.is_empty() {
        write_text(&args.out.join("eval.json"), &eval_to_json(&eval_rows))?;
        write_text(&args.out.join("eval.csv"), &eval_to_csv(&eval_rows))?;
    }
    Ok(())
}

/// Single-subject mode when `--samples` holds sample_*.svol directly;
/// otherwise every subdirectory with such files is one subject.
fn load_subjects(args: &MetricsArgs) -> CmdResult<Vec<LoadedSubject>> {
    let dir = &args.samples;
    if !sample_paths(dir)?.is_empty() {
        let id = args
            .subject
            .clone()
            .or_else(|| dir.file_name().map(|n| n.to_string_lossy().into_owned()))
            .unwrap_or_else(|| "subject".to_string());
        return Ok(vec![load_one_subject(dir, id, args.truth.as_deref())?]);
    }
    if args.truth.is_some() || args.subject.is_some() {
        return Err(format!(
            "{}: --truth/--subject apply to a single-subject directory, \
             and this one has no sample_*.svol files",
            dir.display()
        ));
    }
    let mut subject_dirs: Vec<PathBuf> = ctx(fs::read_dir(dir), dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subject_dirs.sort();
    let mut subjects = Vec::new();
    for sub in subject_dirs {
        if sample_paths(&sub)?.is_empty() {
            continue;
        }
        let id = sub
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "subject".to_string());
        subjects.push(load_one_subject(&sub, id, None)?);
    }
    if subjects.is_empty() {
        return Err(format!(
            "{}: no sample_*.svol files here or in any subdirectory",
            dir.display()
        ));
    }
    Ok(subjects)
}

fn sample_paths(dir: &Path) -> CmdResult<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(format!("{}: not a directory", dir.display()));
    }
    let mut paths: Vec<PathBuf> = ctx(fs::read_dir(dir), dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .map(|n| n.to_string_lossy())
                .is_some_and(|n| n.starts_with("sample_") && n.ends_with(".svol"))
        })
        .collect();
    paths.sort();
    Ok(paths)
}

fn load_one_subject(dir: &Path, id: String, truth: Option<&Path>) -> CmdResult<LoadedSubject> {
    let mut probs: Vec<ProbStack> = Vec::new();
    let mut labels: Vec<LabelVolume> = Vec::new();
    for path in sample_paths(dir)? {
        match ctx(read_svol_file(&path), &path)? {
            Volume::Prob(p) => probs.push(p),
            Volume::Labels(l) => labels.push(l),
            Volume::Intensity(_) => {
                return Err(format!(
                    "{}: intensity volume where a sample was expected",
                    path.display()
                ))
            }
        }
    }
    let samples = match (probs.is_empty(), labels.is_empty()) {
        (false, true) => ctx(McSampleSet::from_prob_stacks(&id, probs), dir)?,
        (true, false) => ctx(McSampleSet::from_labels(&id, labels), dir)?,
        _ => {
            return Err(format!(
                "{}: samples mix probability and label volumes",
                dir.display()
            ))
        }
    };
    let truth_path = match truth {
        Some(p) => Some(p.to_path_buf()),
        None => Some(dir.join("truth.svol")).filter(|p| p.is_file()),
    };
    let truth = truth_path
        .map(|p| match ctx(read_svol_file(&p), &p)? {
            Volume::Labels(l) => Ok(l),
            other => Err(format!(
                "{}: truth must be a label volume, got {}",
                p.display(),
                other.kind()
            )),
        })
        .transpose()?;
    Ok(LoadedSubject { id, samples, truth })
}

// ---------------------------------------------------------------------------
// simulate

fn cmd_simulate(args: &SimulateArgs) -> CmdResult {
    let dims = parse_dims(&args.dims)?;
    let (lo, hi) = parse_pair(&args.rho_range)
        .ok_or_else(|| format!("--rho-range wants LO,HI, got `{}`", args.rho_range))?;

    let mut spec = CohortSpec::new(args.subjects, dims, args.structures, args.seed);
    spec.rho_range = (lo, hi);
    spec.sampler.n_samples = args.n_samples;
    let cohort = cohort_generate(&spec).map_err(|e| e.to_string())?;

    ctx(fs::create_dir_all(&args.out), &args.out)?;
    write_text(&args.out.join("cohort.csv"), &write_cohort_csv(&cohort.table))?;
    for s in &cohort.subjects {
        let dir = args.out.join("subjects").join(&s.subject_id);
        ctx(fs::create_dir_all(&dir), &dir)?;
        write_volume(&dir.join("img.svol"), s.image.clone().into())?;
        write_volume(&dir.join("truth.svol"), s.truth.clone().into())?;
        if args.emit_probs {
            let stacks = s.samples.prob_stacks().expect("simulator emits probs");
            for (i, p) in stacks.iter().enumerate() {
                write_volume(&dir.join(format!("sample_{i:02}.svol")), p.clone().into())?;
            }
        } else {
            for (i, l) in s.samples.labels().iter().enumerate() {
                write_volume(&dir.join(format!("sample_{i:02}.svol")), l.clone().into())?;
            }
        }
    }
    println!(
        "wrote {} subjects ({} samples each) to {}",
        cohort.subjects.len(),
        args.n_samples,
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// degrade

fn cmd_degrade(args: &DegradeArgs) -> CmdResult {
    let img = match ctx(read_svol_file(&args.img), &args.img)? {
        Volume::Intensity(v) => v,
        other => {
            return Err(format!(
                "{}: expected an intensity volume, got {}",
                args.img.display(),
                other.kind()
            ))
        }
    };
    let levels = parse_list::<f64>(&args.levels)
        .ok_or_else(|| format!("--levels wants numbers, got `{}`", args.levels))?;
    if levels.is_empty() {
        return Err("--levels is empty".to_string());
    }
    ctx(fs::create_dir_all(&args.out), &args.out)?;
    for &db in &levels {
        let noisy: IntensityVolume = rician_corrupt(&img, &NoiseSpec::new(db, args.seed));
        write_volume(&args.out.join(format!("noisy_{db}db.svol")), noisy.into())?;
    }
    println!("wrote {} levels to {}", levels.len(), args.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// regress

fn cmd_regress(args: &RegressArgs) -> CmdResult {
    let cohort = ctx(read_cohort_csv_file(&args.cohort), &args.cohort)?;
    let scheme: WeightScheme = args.scheme.parse().map_err(|e| format!("{e}"))?;
    let metrics = args
        .metrics
        .as_ref()
        .map(|p| {
            let text = ctx(fs::read_to_string(p), p)?;
            ctx(MetricsTable::from_json(&text), p)
        })
        .transpose()?;

    let rows: Vec<(u16, RegressionResult)> = match args.structure {
        Some(s) => vec![(
            s,
            group_analysis(&cohort, s, scheme, metrics.as_ref()).map_err(|e| e.to_string())?,
        )],
        None => group_analysis_all(&cohort, scheme, metrics.as_ref()).map_err(|e| e.to_string())?,
    };

    println!(
        "{:<10} {:<8} {:>12} {:>12} {:>9} {:>11} {:>6} {:>5}",
        "structure", "scheme", "beta_d", "se_d", "t_d", "p_d", "n", "excl"
    );
    for (s, r) in &rows {
        println!(
            "{:<10} {:<8} {:>12.6} {:>12.6} {:>9.3} {:>11.3e} {:>6} {:>5}",
            s,
            r.scheme.name(),
            r.beta_diagnosis(),
            r.se_diagnosis(),
            r.t_diagnosis(),
            r.p_diagnosis(),
            r.n_used,
            r.n_excluded
        );
    }

    if let Some(out) = &args.out {
        let text = if out.extension().is_some_and(|e| e == "json") {
            regression_to_json(&rows)
        } else {
            regression_to_csv(&rows)
        };
        write_text(out, &text)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// stability

fn cmd_stability(args: &StabilityArgs) -> CmdResult {
    let paths = sample_paths(&args.samples)?;
    if paths.is_empty() {
        return Err(format!(
            "{}: no sample_*.svol files",
            args.samples.display()
        ));
    }
    let mut probs = Vec::new();
    for path in &paths {
        match ctx(read_svol_file(path), path)? {
            Volume::Prob(p) => probs.push(p),
            other => {
                return Err(format!(
                    "{}: stability needs probability stacks, got {}",
                    path.display(),
                    other.kind()
                ))
            }
        }
    }
    let set = ctx(McSampleSet::from_prob_stacks("subject", probs), &args.samples)?;
    let counts = parse_list::<usize>(&args.counts)
        .ok_or_else(|| format!("--counts wants integers, got `{}`", args.counts))?;
    let transitions = ctx(entropy_stability(&set, &counts), &args.samples)?;

    let mut csv = String::from("from,to,mean_abs_diff\n");
    for t in &transitions {
        csv.push_str(&format!("{},{},{}\n", t.from, t.to, t.mean_abs_diff));
    }
    print!("{csv}");
    if let Some(out) = &args.out {
        write_text(out, &csv)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// shared plumbing

fn write_text(path: &Path, text: &str) -> CmdResult {
    ctx(fs::write(path, text), path)
}

fn write_volume(path: &Path, volume: Volume) -> CmdResult {
    ctx(write_svol_file(path, &volume), path)
}

fn parse_list<T: std::str::FromStr>(s: &str) -> Option<Vec<T>> {
    s.split(',')
        .map(|p| p.trim().parse().ok())
        .collect()
}

fn parse_pair(s: &str) -> Option<(f64, f64)> {
    match parse_list::<f64>(s)?.as_slice() {
        [a, b] => Some((*a, *b)),
        _ => None,
    }
}

fn parse_dims(s: &str) -> CmdResult<Dims> {
    let parts = parse_list::<usize>(s).ok_or_else(|| format!("--dims wants integers, got `{s}`"))?;
    match parts.as_slice() {
        [n] => Ok(Dims::new(*n, *n, *n)),
        [x, y, z] => Ok(Dims::new(*x, *y, *z)),
        _ => Err(format!("--dims wants one value or X,Y,Z, got `{s}`")),
    }
}
