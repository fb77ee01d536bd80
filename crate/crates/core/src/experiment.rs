//! Experiment presets and the batch runner.
//!
//! An [`ExperimentSpec`] pins everything a study needs: the scenario, the
//! solver controls, the sweep grid, and the number of seeds. Each
//! (sweep value, seed, architecture variant) triple becomes one independent
//! job; all variants of a seed share the same channel realization, so
//! cross-architecture comparisons are paired. Jobs run in parallel when the
//! `parallel` feature is active (the default) and sequentially otherwise or
//! on request; both orders produce byte-identical output because every job
//! is deterministic and records are sorted before emission.
//!
//! A failed solve is kept as a flagged record rather than aborting the
//! whole batch; a sweep point whose every seed failed is an error.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bcd::{run_bcd, TraceRow};
use crate::channel::generate_channel_set;
use crate::config::{FileConfig, PddOptions, RisConfig, ScenarioConfig, SolverOptions};
use crate::error::{Error, Result};
use crate::metrics::{beampattern, default_theta_grid, normalize_beampatterns, BeamKind};
use crate::reciprocity::{colinearity_gap, dl_power_bound, ul_power_bound};
use crate::CMat;

/// The built-in study families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Per-iteration objective traces of all three architectures on one
    /// multi-user scene.
    Convergence,
    /// Weighted sum rate versus the number of surface elements.
    SweepElements,
    /// Weighted sum rate versus the UL user's angular position.
    SweepUlAngle,
    /// DL/UL rate trade-off traced by sweeping the DL weight.
    RateRegion,
    /// Weighted sum rate versus the group size of a group-connected surface.
    GroupSize,
    /// Weighted sum rate versus the residual self-interference level.
    SiSweep,
    /// Solve one scene, then scan the four surface beampatterns.
    Beampattern,
    /// Closed-form single-user surface-power bounds and their attainment.
    BoundCheck,
    /// Rate region of the two-DL/two-UL scene.
    MuRateRegion,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 9] = [
        ExperimentKind::Convergence,
        ExperimentKind::SweepElements,
        ExperimentKind::SweepUlAngle,
        ExperimentKind::RateRegion,
        ExperimentKind::GroupSize,
        ExperimentKind::SiSweep,
        ExperimentKind::Beampattern,
        ExperimentKind::BoundCheck,
        ExperimentKind::MuRateRegion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Convergence => "convergence",
            ExperimentKind::SweepElements => "sweep_elements",
            ExperimentKind::SweepUlAngle => "sweep_ul_angle",
            ExperimentKind::RateRegion => "rate_region",
            ExperimentKind::GroupSize => "group_size",
            ExperimentKind::SiSweep => "si_sweep",
            ExperimentKind::Beampattern => "beampattern",
            ExperimentKind::BoundCheck => "bound_check",
            ExperimentKind::MuRateRegion => "mu_rate_region",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = ExperimentKind::ALL.iter().map(|k| k.name()).collect();
                Error::InvalidArgument(format!(
                    "unknown experiment kind '{s}'; expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

/// Optional `[experiment]` table of a config file; everything not set here
/// falls back to the preset of the chosen kind.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentOverrides {
    pub kind: Option<ExperimentKind>,
    pub sweep_values: Option<Vec<f64>>,
    pub n_seeds: Option<usize>,
    pub base_seed: Option<u64>,
    pub output: Option<String>,
}

/// A fully pinned experiment: scenario, solver controls, sweep and seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub scenario: ScenarioConfig,
    /// Architecture used by the `beampattern` kind; the comparison kinds
    /// run their fixed variant set instead.
    pub ris: RisConfig,
    pub solver: SolverOptions,
    pub pdd: PddOptions,
    /// Sweep grid; the kind decides which scenario field it drives. Kinds
    /// without a sweep use a single placeholder value.
    pub sweep_values: Vec<f64>,
    /// Seeds `base_seed..base_seed + n_seeds` give paired channel draws.
    pub n_seeds: usize,
    pub base_seed: u64,
    /// Output stem for the emit helpers; `None` leaves writing to the caller.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub output: Option<String>,
}

impl ExperimentSpec {
    /// The reference preset of a kind: geometry, sweep grid and seed count.
    pub fn canonical(kind: ExperimentKind) -> Self {
        let mut scenario = ScenarioConfig::default();
        let mut ris = RisConfig::full(false);
        let mut sweep_values = vec![0.0];
        let mut n_seeds = 1;
        match kind {
            ExperimentKind::Convergence => {
                scenario.n_bs_antennas = 2;
                scenario.n_ris_elements = 32;
                scenario.n_dl_users = 2;
                scenario.n_ul_users = 2;
                scenario.angles_dl_deg = vec![150.0, 120.0];
                scenario.angles_ul_deg = vec![75.0, 45.0];
                scenario.direct_links_blocked = false;
            }
            ExperimentKind::SweepElements => {
                scenario.angles_dl_deg = vec![150.0];
                scenario.angles_ul_deg = vec![75.0];
                scenario.direct_links_blocked = true;
                sweep_values = vec![4.0, 8.0, 16.0, 24.0, 32.0];
                n_seeds = 10;
            }
            ExperimentKind::SweepUlAngle => {
                scenario.angles_dl_deg = vec![90.0];
                scenario.direct_links_blocked = true;
                sweep_values = (0..=12).map(|i| 15.0 * i as f64).collect();
                n_seeds = 10;
            }
            ExperimentKind::RateRegion => {
                scenario.angles_dl_deg = vec![90.0];
                scenario.angles_ul_deg = vec![60.0];
                scenario.direct_links_blocked = true;
                sweep_values = (0..=10).map(|i| i as f64 / 10.0).collect();
                n_seeds = 10;
            }
            ExperimentKind::GroupSize => {
                scenario.angles_dl_deg = vec![90.0];
                scenario.angles_ul_deg = vec![60.0];
                scenario.direct_links_blocked = true;
                sweep_values = vec![1.0, 2.0, 4.0, 8.0, 16.0];
                n_seeds = 20;
            }
            ExperimentKind::SiSweep => {
                scenario.angles_dl_deg = vec![150.0];
                scenario.angles_ul_deg = vec![75.0];
                scenario.direct_links_blocked = false;
                sweep_values = (0..=6).map(|i| -130.0 + 10.0 * i as f64).collect();
                n_seeds = 10;
            }
            ExperimentKind::Beampattern => {
                scenario.angles_dl_deg = vec![150.0];
                scenario.angles_ul_deg = vec![75.0];
                scenario.direct_links_blocked = true;
            }
            ExperimentKind::BoundCheck => {
                scenario.direct_links_blocked = true;
                sweep_values = vec![2.0, 4.0, 8.0, 16.0];
                n_seeds = 25;
            }
            ExperimentKind::MuRateRegion => {
                scenario.n_bs_antennas = 2;
                scenario.n_dl_users = 2;
                scenario.n_ul_users = 2;
                scenario.angles_dl_deg = vec![90.0, 135.0];
                scenario.angles_ul_deg = vec![60.0, 30.0];
                scenario.direct_links_blocked = true;
                sweep_values = (0..=10).map(|i| i as f64 / 10.0).collect();
                n_seeds = 10;
            }
        }
        if kind == ExperimentKind::Beampattern {
            ris = RisConfig::full(false);
        }
        ExperimentSpec {
            kind,
            scenario,
            ris,
            solver: SolverOptions::default(),
            pdd: PddOptions::default(),
            sweep_values,
            n_seeds,
            base_seed: 1,
            output: None,
        }
    }

    /// Builds a spec from a config file: the file's tables replace the
    /// preset scenario and solver controls wholesale, while sweep grid,
    /// seed count and output fall back to the preset when the file leaves
    /// them out. The kind comes from `kind` or the file, in that order.
    pub fn from_file_config(kind: Option<ExperimentKind>, file: &FileConfig) -> Result<Self> {
        let kind = kind.or(file.experiment.kind).ok_or_else(|| {
            Error::Config("no experiment kind given on the command line or in the file".into())
        })?;
        let preset = Self::canonical(kind);
        Ok(ExperimentSpec {
            kind,
            scenario: file.scenario.clone(),
            ris: file.ris,
            solver: file.solver,
            pdd: file.pdd,
            sweep_values: file
                .experiment
                .sweep_values
                .clone()
                .unwrap_or(preset.sweep_values),
            n_seeds: file.experiment.n_seeds.unwrap_or(preset.n_seeds),
            base_seed: file.experiment.base_seed.unwrap_or(preset.base_seed),
            output: file.experiment.output.clone(),
        })
    }
}

/// One solved (or failed) job.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Record {
    pub sweep_value: f64,
    pub seed: u64,
    pub variant: String,
    /// DL sum rate in bit/s/Hz; for `bound_check`, the DL power bound.
    pub dl_rate: Option<f64>,
    /// UL sum rate in bit/s/Hz; for `bound_check`, the UL power bound.
    pub ul_rate: Option<f64>,
    /// Weighted sum rate; for `bound_check`, the channel colinearity gap.
    pub sum_rate: Option<f64>,
    pub iters: usize,
    /// Final scattering-update split norm; for `bound_check`, the larger of
    /// the two bound-attainment residuals.
    pub pdd_violation: Option<f64>,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

/// Mean and spread over the successful seeds of one (sweep value, variant)
/// cell. The standard deviation is the sample estimate (zero for one seed).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Aggregate {
    pub sweep_value: f64,
    pub variant: String,
    pub n_ok: usize,
    pub mean_dl_rate: f64,
    pub mean_ul_rate: f64,
    pub mean_sum_rate: f64,
    pub std_sum_rate: f64,
}

/// Objective trace of one convergence job.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceSeries {
    pub variant: String,
    pub seed: u64,
    pub rows: Vec<TraceRow>,
}

/// Normalized beampatterns scanned after a `beampattern` solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatternTable {
    pub theta_deg: Vec<f64>,
    pub kinds: Vec<BeamKind>,
    /// One normalized pattern per entry of `kinds`, over `theta_deg`.
    pub values: Vec<Vec<f64>>,
}

/// Everything a finished experiment reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentSpec,
    pub records: Vec<Record>,
    pub aggregates: Vec<Aggregate>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub traces: Vec<TraceSeries>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub patterns: Option<PatternTable>,
}

#[derive(Debug, Clone)]
pub(crate) struct Job {
    pub sweep_value: f64,
    pub seed: u64,
    pub variant: String,
    pub scenario: ScenarioConfig,
    pub ris: RisConfig,
}

struct JobOutput {
    record: Record,
    trace: Option<Vec<TraceRow>>,
    scattering: Option<CMat>,
}

fn sweep_as_count(v: f64, what: &str) -> Result<usize> {
    let rounded = v.round();
    if !(v.is_finite() && (v - rounded).abs() < 1e-9 && rounded >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "sweep value {v} is not a valid {what} (need a positive integer)"
        )));
    }
    Ok(rounded as usize)
}

fn variant_label(ris: &RisConfig) -> &'static str {
    use crate::config::RisArchitecture;
    match (ris.architecture, ris.reciprocal) {
        (RisArchitecture::Single, _) => "diagonal",
        (_, true) => "reciprocal",
        (_, false) => "non_reciprocal",
    }
}

/// The fixed architecture comparison run by most kinds.
fn comparison_variants() -> Vec<(String, RisConfig)> {
    vec![
        ("non_reciprocal".into(), RisConfig::full(false)),
        ("reciprocal".into(), RisConfig::full(true)),
        ("diagonal".into(), RisConfig::single()),
    ]
}

pub(crate) fn jobs_for(spec: &ExperimentSpec) -> Result<Vec<Job>> {
    if spec.sweep_values.is_empty() {
        return Err(Error::InvalidArgument("sweep_values must not be empty".into()));
    }
    if spec.n_seeds == 0 {
        return Err(Error::InvalidArgument("n_seeds must be >= 1".into()));
    }
    let mut jobs = Vec::new();
    for &v in &spec.sweep_values {
        let mut scenario = spec.scenario.clone();
        match spec.kind {
            ExperimentKind::SweepElements | ExperimentKind::BoundCheck => {
                scenario.n_ris_elements = sweep_as_count(v, "element count")?;
            }
            ExperimentKind::SweepUlAngle => {
                if scenario.n_ul_users != 1 {
                    return Err(Error::InvalidArgument(
                        "sweep_ul_angle needs exactly one UL user".into(),
                    ));
                }
                scenario.angles_ul_deg = vec![v];
            }
            ExperimentKind::RateRegion | ExperimentKind::MuRateRegion => {
                scenario.alpha_dl = v;
            }
            ExperimentKind::SiSweep => {
                scenario.si_power_db = v;
            }
            ExperimentKind::GroupSize
            | ExperimentKind::Convergence
            | ExperimentKind::Beampattern => {}
        }
        let variants: Vec<(String, RisConfig)> = match spec.kind {
            ExperimentKind::GroupSize => {
                let m_g = sweep_as_count(v, "group size")?;
                vec![
                    ("non_reciprocal".into(), RisConfig::group(m_g, false)),
                    ("reciprocal".into(), RisConfig::group(m_g, true)),
                ]
            }
            ExperimentKind::Beampattern => {
                vec![(variant_label(&spec.ris).into(), spec.ris)]
            }
            ExperimentKind::BoundCheck => vec![("bounds".into(), RisConfig::single())],
            _ => comparison_variants(),
        };
        scenario.validate()?;
        for (label, ris) in &variants {
            ris.validate(scenario.n_ris_elements)?;
            for j in 0..spec.n_seeds {
                let mut scen = scenario.clone();
                scen.rng_seed = spec.base_seed + j as u64;
                jobs.push(Job {
                    sweep_value: v,
                    seed: scen.rng_seed,
                    variant: label.clone(),
                    scenario: scen,
                    ris: *ris,
                });
            }
        }
    }
    Ok(jobs)
}

fn failed_record(job: &Job, err: &Error) -> Record {
    Record {
        sweep_value: job.sweep_value,
        seed: job.seed,
        variant: job.variant.clone(),
        dl_rate: None,
        ul_rate: None,
        sum_rate: None,
        iters: 0,
        pdd_violation: None,
        ok: false,
        error: Some(err.to_string()),
    }
}

fn run_solver_job(job: &Job, spec: &ExperimentSpec) -> JobOutput {
    let solved = generate_channel_set(&job.scenario)
        .and_then(|ch| run_bcd(&ch, &job.scenario, &job.ris, &spec.solver, &spec.pdd));
    match solved {
        Ok(res) => JobOutput {
            record: Record {
                sweep_value: job.sweep_value,
                seed: job.seed,
                variant: job.variant.clone(),
                dl_rate: Some(res.dl_rate),
                ul_rate: Some(res.ul_rate),
                sum_rate: Some(res.weighted_rate),
                iters: res.iters_used,
                pdd_violation: Some(res.pdd_violation),
                ok: true,
                error: None,
            },
            trace: (spec.kind == ExperimentKind::Convergence).then(|| res.trace.clone()),
            scattering: (spec.kind == ExperimentKind::Beampattern)
                .then(|| res.final_state.scattering.clone()),
        },
        Err(e) => JobOutput { record: failed_record(job, &e), trace: None, scattering: None },
    }
}

fn run_bound_job(job: &Job) -> JobOutput {
    let out = generate_channel_set(&job.scenario).and_then(|ch| {
        let g = ch.bs_ris.column(0).into_owned();
        let ul = ul_power_bound(&g, &ch.ris_ul[0])?;
        let dl = dl_power_bound(&ch.ris_dl[0], &g)?;
        let gap = colinearity_gap(&ch.ris_dl[0], &ch.ris_ul[0])?;
        Ok((dl, ul, gap))
    });
    match out {
        Ok((dl, ul, gap)) => JobOutput {
            record: Record {
                sweep_value: job.sweep_value,
                seed: job.seed,
                variant: job.variant.clone(),
                dl_rate: Some(dl.bound_value),
                ul_rate: Some(ul.bound_value),
                sum_rate: Some(gap),
                iters: 0,
                pdd_violation: Some(dl.residual.max(ul.residual)),
                ok: true,
                error: None,
            },
            trace: None,
            scattering: None,
        },
        Err(e) => JobOutput { record: failed_record(job, &e), trace: None, scattering: None },
    }
}

fn run_job(job: &Job, spec: &ExperimentSpec) -> JobOutput {
    match spec.kind {
        ExperimentKind::BoundCheck => run_bound_job(job),
        _ => run_solver_job(job, spec),
    }
}

enum ExecMode {
    Sequential,
    #[cfg_attr(not(feature = "parallel"), allow(dead_code))]
    Parallel(Option<usize>),
}

#[cfg(feature = "parallel")]
fn map_jobs(jobs: &[Job], spec: &ExperimentSpec, mode: &ExecMode) -> Result<Vec<JobOutput>> {
    use rayon::prelude::*;
    match mode {
        ExecMode::Sequential => Ok(jobs.iter().map(|j| run_job(j, spec)).collect()),
        ExecMode::Parallel(threads) => {
            let run = || jobs.par_iter().map(|j| run_job(j, spec)).collect();
            match threads {
                Some(n) => {
                    let pool = rayon::ThreadPoolBuilder::new()
                        .num_threads(*n)
                        .build()
                        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
                    Ok(pool.install(run))
                }
                None => Ok(run()),
            }
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn map_jobs(jobs: &[Job], spec: &ExperimentSpec, _mode: &ExecMode) -> Result<Vec<JobOutput>> {
    Ok(jobs.iter().map(|j| run_job(j, spec)).collect())
}

fn run_core(spec: &ExperimentSpec, mode: ExecMode) -> Result<ExperimentResult> {
    let jobs = jobs_for(spec)?;
    let mut outputs = map_jobs(&jobs, spec, &mode)?;
    outputs.sort_by(|a, b| {
        a.record
            .sweep_value
            .total_cmp(&b.record.sweep_value)
            .then(a.record.variant.cmp(&b.record.variant))
            .then(a.record.seed.cmp(&b.record.seed))
    });

    // Every (sweep value, variant) cell must have at least one success.
    {
        let mut idx = 0;
        while idx < outputs.len() {
            let key = (
                outputs[idx].record.sweep_value.to_bits(),
                outputs[idx].record.variant.clone(),
            );
            let mut any_ok = false;
            let mut first_error = None;
            let mut end = idx;
            while end < outputs.len()
                && outputs[end].record.sweep_value.to_bits() == key.0
                && outputs[end].record.variant == key.1
            {
                any_ok |= outputs[end].record.ok;
                if first_error.is_none() {
                    first_error = outputs[end].record.error.clone();
                }
                end += 1;
            }
            if !any_ok {
                return Err(Error::numerical(
                    "experiment batch",
                    format!(
                        "every seed failed at sweep value {} for variant '{}': {}",
                        outputs[idx].record.sweep_value,
                        key.1,
                        first_error.unwrap_or_default()
                    ),
                ));
            }
            idx = end;
        }
    }

    let mut aggregates = Vec::new();
    {
        let mut idx = 0;
        while idx < outputs.len() {
            let sweep = outputs[idx].record.sweep_value;
            let variant = outputs[idx].record.variant.clone();
            let mut dl = Vec::new();
            let mut ul = Vec::new();
            let mut sum = Vec::new();
            let mut end = idx;
            while end < outputs.len()
                && outputs[end].record.sweep_value.to_bits() == sweep.to_bits()
                && outputs[end].record.variant == variant
            {
                let r = &outputs[end].record;
                if r.ok {
                    dl.push(r.dl_rate.unwrap_or(0.0));
                    ul.push(r.ul_rate.unwrap_or(0.0));
                    sum.push(r.sum_rate.unwrap_or(0.0));
                }
                end += 1;
            }
            let n = sum.len();
            let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
            let mean_sum = mean(&sum);
            let std_sum = if n > 1 {
                (sum.iter().map(|x| (x - mean_sum).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            aggregates.push(Aggregate {
                sweep_value: sweep,
                variant,
                n_ok: n,
                mean_dl_rate: mean(&dl),
                mean_ul_rate: mean(&ul),
                mean_sum_rate: mean_sum,
                std_sum_rate: std_sum,
            });
            idx = end;
        }
    }

    let mut traces = Vec::new();
    let mut patterns = None;
    for out in &outputs {
        if let Some(rows) = &out.trace {
            traces.push(TraceSeries {
                variant: out.record.variant.clone(),
                seed: out.record.seed,
                rows: rows.clone(),
            });
        }
    }
    if spec.kind == ExperimentKind::Beampattern {
        if let Some(out) = outputs.iter().find(|o| o.scattering.is_some()) {
            let scen = ScenarioConfig {
                rng_seed: out.record.seed,
                ..spec.scenario.clone()
            };
            let ch = generate_channel_set(&scen)?;
            let phi = out.scattering.as_ref().expect("checked above");
            let grid = default_theta_grid();
            let kinds = vec![
                BeamKind::DlImpinging,
                BeamKind::DlReflected,
                BeamKind::UlImpinging,
                BeamKind::UlReflected,
            ];
            let raw: Vec<Vec<f64>> = kinds
                .iter()
                .map(|&k| beampattern(&ch, phi, k, 0, &grid, scen.structural_scattering))
                .collect::<Result<_>>()?;
            patterns = Some(PatternTable {
                theta_deg: grid,
                kinds,
                values: normalize_beampatterns(&raw),
            });
        }
    }

    Ok(ExperimentResult {
        config: spec.clone(),
        records: outputs.into_iter().map(|o| o.record).collect(),
        aggregates,
        traces,
        patterns,
    })
}

/// Runs the experiment, in parallel when the `parallel` feature is active.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    run_core(spec, ExecMode::Parallel(None))
}

/// Runs the experiment on a pool of exactly `threads` workers (parallel
/// builds only; otherwise sequential).
pub fn run_experiment_with_threads(
    spec: &ExperimentSpec,
    threads: Option<usize>,
) -> Result<ExperimentResult> {
    run_core(spec, ExecMode::Parallel(threads))
}

/// Runs the experiment strictly sequentially, regardless of features.
pub fn run_experiment_sequential(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    run_core(spec, ExecMode::Sequential)
}

/// Output serialization formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::InvalidArgument(format!(
                "unknown output format '{other}'; expected csv or json"
            ))),
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn config_echo_lines(spec: &ExperimentSpec) -> Result<Vec<String>> {
    let to_line = |label: &str, json: serde_json::Result<String>| -> Result<String> {
        Ok(format!("# {label} = {}", json.map_err(|e| Error::Config(e.to_string()))?))
    };
    Ok(vec![
        format!("# kind = {}", spec.kind),
        format!("# base_seed = {}", spec.base_seed),
        format!("# n_seeds = {}", spec.n_seeds),
        to_line("sweep_values", serde_json::to_string(&spec.sweep_values))?,
        to_line("scenario", serde_json::to_string(&spec.scenario))?,
        to_line("ris", serde_json::to_string(&spec.ris))?,
        to_line("solver", serde_json::to_string(&spec.solver))?,
        to_line("pdd", serde_json::to_string(&spec.pdd))?,
    ])
}

/// Writes the per-job records as CSV: `#`-prefixed config echo, a header,
/// one row per record.
pub fn write_records_csv<W: Write>(result: &ExperimentResult, out: &mut W) -> Result<()> {
    for line in config_echo_lines(&result.config)? {
        writeln!(out, "{line}")?;
    }
    writeln!(out, "sweep_value,seed,variant,dl_rate,ul_rate,sum_rate,iters,pdd_violation,ok")?;
    for r in &result.records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.sweep_value,
            r.seed,
            r.variant,
            fmt_opt(r.dl_rate),
            fmt_opt(r.ul_rate),
            fmt_opt(r.sum_rate),
            r.iters,
            fmt_opt(r.pdd_violation),
            r.ok
        )?;
    }
    Ok(())
}

/// Writes the per-cell aggregates as CSV.
pub fn write_aggregates_csv<W: Write>(result: &ExperimentResult, out: &mut W) -> Result<()> {
    writeln!(
        out,
        "sweep_value,variant,n_ok,mean_dl_rate,mean_ul_rate,mean_sum_rate,std_sum_rate"
    )?;
    for a in &result.aggregates {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            a.sweep_value,
            a.variant,
            a.n_ok,
            a.mean_dl_rate,
            a.mean_ul_rate,
            a.mean_sum_rate,
            a.std_sum_rate
        )?;
    }
    Ok(())
}

fn write_patterns_csv<W: Write>(table: &PatternTable, out: &mut W) -> Result<()> {
    let names: Vec<String> = table
        .kinds
        .iter()
        .map(|k| {
            serde_json::to_string(k)
                .map(|s| s.trim_matches('"').to_string())
                .map_err(|e| Error::Config(e.to_string()))
        })
        .collect::<Result<_>>()?;
    writeln!(out, "theta_deg,{}", names.join(","))?;
    for (t, &theta) in table.theta_deg.iter().enumerate() {
        let row: Vec<String> = table.values.iter().map(|v| v[t].to_string()).collect();
        writeln!(out, "{theta},{}", row.join(","))?;
    }
    Ok(())
}

/// Serializes the whole result as pretty JSON.
pub fn write_json<W: Write>(result: &ExperimentResult, out: &mut W) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, result).map_err(|e| Error::Config(e.to_string()))?;
    writeln!(out)?;
    Ok(())
}

/// Writes the result under `stem` (extension ignored): `<stem>.json`, or
/// for CSV `<stem>.csv`, `<stem>_aggregates.csv` and, when present,
/// `<stem>_trace_<variant>_s<seed>.csv` and `<stem>_patterns.csv`.
/// Returns the paths written.
pub fn emit_results(
    result: &ExperimentResult,
    format: OutputFormat,
    stem: &Path,
) -> Result<Vec<PathBuf>> {
    let stem = stem.with_extension("");
    if let Some(parent) = stem.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let sibling = |suffix: &str, ext: &str| -> PathBuf {
        let name = stem.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        stem.with_file_name(format!("{name}{suffix}.{ext}"))
    };
    let mut written = Vec::new();
    match format {
        OutputFormat::Json => {
            let path = stem.with_extension("json");
            let mut f = fs::File::create(&path)?;
            write_json(result, &mut f)?;
            written.push(path);
        }
        OutputFormat::Csv => {
            let path = stem.with_extension("csv");
            let mut f = fs::File::create(&path)?;
            write_records_csv(result, &mut f)?;
            written.push(path);
            let path = sibling("_aggregates", "csv");
            let mut f = fs::File::create(&path)?;
            write_aggregates_csv(result, &mut f)?;
            written.push(path);
            for series in &result.traces {
                let path = sibling(&format!("_trace_{}_s{}", series.variant, series.seed), "csv");
                let mut f = fs::File::create(&path)?;
                writeln!(f, "iter,f_o,dl_rate,ul_rate,pdd_violation")?;
                for row in &series.rows {
                    writeln!(
                        f,
                        "{},{},{},{},{}",
                        row.iter, row.objective, row.dl_rate, row.ul_rate, row.pdd_violation
                    )?;
                }
                written.push(path);
            }
            if let Some(table) = &result.patterns {
                let path = sibling("_patterns", "csv");
                let mut f = fs::File::create(&path)?;
                write_patterns_csv(table, &mut f)?;
                written.push(path);
            }
        }
    }
    Ok(written)
}
