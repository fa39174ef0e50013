//! End-to-end assessment: designs, CPF evaluations, emulator training,
//! surrogate or direct Monte Carlo evaluation, statistics and outputs.

mod config;
mod stats;

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{
    apply_inputs, GrowthMode, GrowthSettings, InputKind, InputRole, InputSpec, InputTarget, ScenarioConfig,
    MIN_MC_SAMPLES,
};
pub use stats::{
    kde, ks_one_sample, ks_two_sample, quantile_sorted, summary_stats, trapezoid, StatsError, SummaryStats,
    KDE_GRID_POINTS,
};

use crate::case_model::{parse_case, CaseError, NetworkCase};
use crate::cpf::{load_margin, trace_continuation, ContinuationTrace, CpfError, CpfOptions, GrowthDirection};
use crate::gpe::{train, GpeError, KernelFamily, TrainOptions, TrainedEmulator};
use crate::powerflow::{solve_nr, BusInjections, PowerFlowOptions, VoltageState};
use crate::sampling::{
    correlate, lhs, mc_uniform, to_physical, DesignMatrix, SamplingError,
};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("case error: {0}")]
    Case(#[from] CaseError),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl PipelineError {
    /// Process exit code: 2 for bad input, 3 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Case(_) => 2,
            PipelineError::Numerical(_) | PipelineError::Io { .. } => 3,
        }
    }
}

impl From<SamplingError> for PipelineError {
    fn from(e: SamplingError) -> Self {
        PipelineError::Numerical(e.to_string())
    }
}

impl From<GpeError> for PipelineError {
    fn from(e: GpeError) -> Self {
        PipelineError::Numerical(e.to_string())
    }
}

impl From<StatsError> for PipelineError {
    fn from(e: StatsError) -> Self {
        PipelineError::Numerical(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "gpe")]
    Gpe,
    #[serde(rename = "mc")]
    DirectMc,
}

impl Method {
    pub fn tag(&self) -> &'static str {
        match self {
            Method::Gpe => "gpe",
            Method::DirectMc => "mc",
        }
    }
}

/// Wall-clock seconds spent in each stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub t_train_cpf: f64,
    pub t_gpe_train: f64,
    pub t_gpe_eval: f64,
    pub t_mc_cpf: f64,
    pub t_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub n_requested: usize,
    pub n_used: usize,
    pub dropped_rows: Vec<usize>,
    pub kernel: KernelFamily,
    pub log_likelihood: f64,
    pub warning: Option<String>,
}

/// A labelled design matrix produced during a run.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedDesign {
    pub name: String,
    pub design: DesignMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentResult {
    pub method: Method,
    /// Load margin at the target bus (MW), one per evaluated sample.
    pub margins: Vec<f64>,
    pub stats: SummaryStats,
    pub pdf_points: Vec<(f64, f64)>,
    pub timing: Timing,
    pub seed: u64,
    pub target_bus: u32,
    pub n_requested: usize,
    /// Rows of the evaluation design that could not be evaluated.
    pub excluded_rows: Vec<usize>,
    /// SHA-256 of the physical evaluation design.
    pub evaluation_digest: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingSummary>,
    #[serde(skip)]
    pub emulator: Option<TrainedEmulator>,
    #[serde(skip)]
    pub designs: Vec<NamedDesign>,
}

impl AssessmentResult {
    pub fn exclusion_rate(&self) -> f64 {
        self.excluded_rows.len() as f64 / self.n_requested.max(1) as f64
    }
}

/// A loaded case together with everything that stays fixed across samples.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub case: NetworkCase,
    pub direction: GrowthDirection,
    pub cpf_options: CpfOptions,
}

impl Scenario {
    pub fn prepare(config: &ScenarioConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let path = config.resolved_case_path();
        let text = std::fs::read_to_string(&path)
            .map_err(|e| PipelineError::Config(format!("cannot read case {}: {e}", path.display())))?;
        let case = parse_case(&text)?;
        Self::with_case(config, case)
    }

    pub fn with_case(config: &ScenarioConfig, case: NetworkCase) -> Result<Self, PipelineError> {
        config.validate()?;
        config.validate_against(&case)?;
        let direction = match config.growth.mode {
            GrowthMode::System => GrowthDirection::system_wide(&case),
            GrowthMode::Target => GrowthDirection::single_bus(&case, config.target_bus),
        }
        .map_err(|e| PipelineError::Config(format!("growth direction: {e}")))?;
        let base = solve_nr(&case, &BusInjections::from_case(&case), &VoltageState::from_case(&case), &PowerFlowOptions::default())
            .map_err(|e| PipelineError::Numerical(format!("base case power flow: {e}")))?;
        if !base.converged {
            return Err(PipelineError::Numerical(format!(
                "base case power flow did not converge (mismatch {:.3e})",
                base.max_mismatch
            )));
        }
        Ok(Scenario { config: config.clone(), case, direction, cpf_options: CpfOptions::default() })
    }

    fn chain(&self, uniform: DesignMatrix, prefix: &str) -> Result<Vec<NamedDesign>, PipelineError> {
        let uniform = uniform.with_labels(self.config.labels());
        let correlated = match &self.config.vine {
            Some(v) => correlate(&uniform, v)?,
            None => uniform.clone(),
        };
        let physical = to_physical(&correlated, &self.config.marginals())?;
        let mut out = vec![NamedDesign { name: format!("{prefix}_uniform"), design: uniform }];
        if self.config.vine.is_some() {
            out.push(NamedDesign { name: format!("{prefix}_correlated"), design: correlated });
        }
        out.push(NamedDesign { name: format!("{prefix}_physical"), design: physical });
        Ok(out)
    }

    /// LHS -> vine -> marginals, on the training stream.
    pub fn training_designs(&self) -> Result<Vec<NamedDesign>, PipelineError> {
        let c = &self.config;
        self.chain(lhs(c.n_train, c.inputs.len(), c.seed), "training")
    }

    /// Monte Carlo -> vine -> marginals, on the evaluation stream.
    pub fn evaluation_designs(&self) -> Result<Vec<NamedDesign>, PipelineError> {
        let c = &self.config;
        if c.n_mc == 0 {
            return Err(PipelineError::Config("n_mc must be positive".into()));
        }
        self.chain(mc_uniform(c.n_mc, c.inputs.len(), c.seed), "evaluation")
    }

    /// Full PV curve for one physical input row.
    pub fn trace(&self, x: &[f64], options: &CpfOptions) -> Result<ContinuationTrace, PipelineError> {
        let inj = apply_inputs(&self.case, x, &self.config)?;
        trace_continuation(&self.case, &inj, &self.direction, options)
            .map_err(|e| PipelineError::Numerical(e.to_string()))
    }

    /// Load margin at the target bus for one physical input row. A failed
    /// or unreliable trace is retried once with tightened steps.
    pub fn margin(&self, x: &[f64]) -> Result<f64, PipelineError> {
        let inj = apply_inputs(&self.case, x, &self.config)?;
        let attempt = |opts: &CpfOptions| -> Result<f64, CpfError> {
            let trace = trace_continuation(&self.case, &inj, &self.direction, opts)?;
            let m = load_margin(&trace, &self.direction, self.config.target_bus)?;
            if m.reliable {
                Ok(m.margin_at_bus_mw)
            } else {
                Err(CpfError::Options("trace ended before the nose was located"))
            }
        };
        attempt(&self.cpf_options)
            .or_else(|first| {
                log::debug!("retrying CPF with tightened steps after: {first}");
                attempt(&self.cpf_options.tightened())
            })
            .map_err(|e| PipelineError::Numerical(e.to_string()))
    }

    /// Margins for every row, evaluated in parallel; result order follows
    /// row order. Failed rows come back as `None`.
    pub fn margins(&self, design: &DesignMatrix) -> Vec<Option<f64>> {
        let rows: Vec<&[f64]> = design.rows().collect();
        rows.par_iter()
            .enumerate()
            .map(|(i, x)| match self.margin(x) {
                Ok(m) => Some(m),
                Err(e) => {
                    log::warn!("sample {i}: {e}");
                    None
                }
            })
            .collect()
    }

    /// Runs the training stage and fits the emulator with `kernel`.
    pub fn train_emulator(
        &self,
        kernel: KernelFamily,
    ) -> Result<(TrainedEmulator, TrainingSummary, Vec<NamedDesign>, Timing), PipelineError> {
        let mut timing = Timing::default();
        let designs = self.training_designs()?;
        let physical = &designs.last().expect("chain ends in the physical stage").design;
        let t0 = Instant::now();
        let ys = self.margins(physical);
        timing.t_train_cpf = t0.elapsed().as_secs_f64();

        let mut rows = Vec::new();
        let mut y = Vec::new();
        let mut dropped = Vec::new();
        for (i, m) in ys.iter().enumerate() {
            match m {
                Some(v) => {
                    rows.push(physical.row(i).to_vec());
                    y.push(*v);
                }
                None => dropped.push(i),
            }
        }
        let p = self.config.inputs.len();
        let needed = self.config.basis.width(p) + 1;
        if rows.len() < needed {
            return Err(PipelineError::Numerical(format!(
                "only {} of {} training points evaluated; at least {needed} are needed",
                rows.len(),
                ys.len()
            )));
        }
        if !dropped.is_empty() {
            log::warn!("dropped {} training points after CPF failures: {dropped:?}", dropped.len());
        }
        let x = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
        let yv = DVector::from_vec(y);
        let t1 = Instant::now();
        let emulator = train(&x, &yv, self.config.basis, kernel, &TrainOptions::default())?;
        timing.t_gpe_train = t1.elapsed().as_secs_f64();
        let summary = TrainingSummary {
            n_requested: ys.len(),
            n_used: rows.len(),
            dropped_rows: dropped,
            kernel,
            log_likelihood: emulator.log_likelihood,
            warning: emulator.report.as_ref().and_then(|r| r.warning.clone()),
        };
        Ok((emulator, summary, designs, timing))
    }

    /// Surrogate assessment with the configured kernel.
    pub fn run_assessment(&self) -> Result<AssessmentResult, PipelineError> {
        self.run_assessment_with(self.config.kernel)
    }

    /// Surrogate assessment with an explicit kernel family.
    pub fn run_assessment_with(&self, kernel: KernelFamily) -> Result<AssessmentResult, PipelineError> {
        let start = Instant::now();
        let (emulator, summary, mut designs, mut timing) = self.train_emulator(kernel)?;
        let eval = self.evaluation_designs()?;
        let physical = eval.last().expect("physical stage").design.clone();
        let rows: Vec<Vec<f64>> = physical.rows().map(<[f64]>::to_vec).collect();
        let t0 = Instant::now();
        let margins = emulator.predict_mean_rows(&rows);
        timing.t_gpe_eval = t0.elapsed().as_secs_f64();
        designs.extend(eval);
        let mut r = self.finish(Method::Gpe, margins, vec![], &physical, timing, designs)?;
        r.training = Some(summary);
        r.emulator = Some(emulator);
        r.timing.t_total = start.elapsed().as_secs_f64();
        Ok(r)
    }

    /// Every evaluation sample through the real CPF.
    pub fn run_mc_benchmark(&self) -> Result<AssessmentResult, PipelineError> {
        let start = Instant::now();
        let designs = self.evaluation_designs()?;
        let physical = designs.last().expect("physical stage").design.clone();
        let t0 = Instant::now();
        let results = self.margins(&physical);
        let mut timing = Timing { t_mc_cpf: t0.elapsed().as_secs_f64(), ..Default::default() };
        let excluded: Vec<usize> = results.iter().enumerate().filter(|(_, m)| m.is_none()).map(|(i, _)| i).collect();
        let margins: Vec<f64> = results.into_iter().flatten().collect();
        if !excluded.is_empty() {
            log::warn!(
                "excluded {} of {} Monte Carlo samples after CPF failures",
                excluded.len(),
                physical.n_rows()
            );
        }
        let mut r = self.finish(Method::DirectMc, margins, excluded, &physical, timing, designs)?;
        timing.t_total = start.elapsed().as_secs_f64();
        r.timing.t_total = timing.t_total;
        Ok(r)
    }

    fn finish(
        &self,
        method: Method,
        margins: Vec<f64>,
        excluded_rows: Vec<usize>,
        physical: &DesignMatrix,
        timing: Timing,
        designs: Vec<NamedDesign>,
    ) -> Result<AssessmentResult, PipelineError> {
        if margins.is_empty() {
            return Err(PipelineError::Numerical("no sample could be evaluated".into()));
        }
        let stats = summary_stats(&margins)?;
        let pdf_points = kde(&margins, None)?;
        Ok(AssessmentResult {
            method,
            margins,
            stats,
            pdf_points,
            timing,
            seed: self.config.seed,
            target_bus: self.config.target_bus,
            n_requested: physical.n_rows(),
            excluded_rows,
            evaluation_digest: physical.digest(),
            training: None,
            emulator: None,
            designs,
        })
    }
}

/// Loads the case and runs the surrogate assessment.
pub fn run_assessment(config: &ScenarioConfig) -> Result<AssessmentResult, PipelineError> {
    Scenario::prepare(config)?.run_assessment()
}

/// Loads the case and runs the direct Monte Carlo benchmark.
pub fn run_mc_benchmark(config: &ScenarioConfig) -> Result<AssessmentResult, PipelineError> {
    Scenario::prepare(config)?.run_mc_benchmark()
}

/// Side-by-side comparison of a surrogate run against the benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub mean_relative_error: f64,
    pub std_relative_error: f64,
    pub ks_statistic: f64,
    pub speedup_per_sample: f64,
    pub same_evaluation_samples: bool,
}

/// Compares a surrogate run with a direct Monte Carlo run on the same samples.
/// The speedup compares per-sample surrogate time with per-sample CPF time.
pub fn compare(gpe: &AssessmentResult, mc: &AssessmentResult) -> Result<Comparison, PipelineError> {
    let per_cpf = mc.timing.t_mc_cpf / mc.n_requested.max(1) as f64;
    let per_gpe = gpe.timing.t_gpe_eval / gpe.n_requested.max(1) as f64;
    Ok(Comparison {
        mean_relative_error: (gpe.stats.mean - mc.stats.mean).abs() / mc.stats.mean.abs(),
        std_relative_error: (gpe.stats.std - mc.stats.std).abs() / mc.stats.std.abs(),
        ks_statistic: ks_two_sample(&gpe.margins, &mc.margins)?,
        speedup_per_sample: per_cpf / per_gpe.max(f64::MIN_POSITIVE),
        same_evaluation_samples: gpe.evaluation_digest == mc.evaluation_digest,
    })
}

fn write_file(path: &Path, text: &str) -> Result<(), PipelineError> {
    std::fs::write(path, text).map_err(|source| PipelineError::Io { path: path.display().to_string(), source })
}

pub fn margins_csv(r: &AssessmentResult) -> String {
    let mut s = String::from("margin_mw\n");
    for m in &r.margins {
        writeln!(s, "{m:.16e}").unwrap();
    }
    s
}

pub fn pdf_csv(r: &AssessmentResult) -> String {
    let mut s = String::from("margin_mw,density\n");
    for (x, d) in &r.pdf_points {
        writeln!(s, "{x:.16e},{d:.16e}").unwrap();
    }
    s
}

/// Writes margins, pdf, summary, designs and (for surrogate runs) the
/// emulator into `dir`. File names carry `tag`, usually the method name.
pub fn write_outputs(
    dir: &Path,
    tag: &str,
    r: &AssessmentResult,
    config: &ScenarioConfig,
) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(|source| PipelineError::Io { path: dir.display().to_string(), source })?;
    write_file(&dir.join(format!("margins_{tag}.csv")), &margins_csv(r))?;
    write_file(&dir.join(format!("pdf_{tag}.csv")), &pdf_csv(r))?;
    let summary = serde_json::to_string_pretty(r).expect("result serializes");
    let summary = summary_without_arrays(&summary);
    write_file(&dir.join(format!("summary_{tag}.json")), &summary)?;
    let marginals = config.marginals();
    for d in &r.designs {
        let m = (d.design.stage == crate::sampling::Stage::Physical).then_some(marginals.as_slice());
        d.design
            .write(dir, &format!("design_{}", d.name), m)
            .map_err(|e| PipelineError::Io { path: dir.display().to_string(), source: std::io::Error::other(e.to_string()) })?;
    }
    if let Some(e) = &r.emulator {
        write_file(&dir.join(format!("emulator_{tag}.json")), &e.to_json())?;
    }
    Ok(())
}

// The summary keeps scalar results; the arrays already have their own CSVs.
fn summary_without_arrays(json: &str) -> String {
    let mut v: serde_json::Value = serde_json::from_str(json).expect("valid json");
    if let Some(o) = v.as_object_mut() {
        o.remove("margins");
        o.remove("pdf_points");
    }
    serde_json::to_string_pretty(&v).expect("json serializes")
}

#[cfg(test)]
mod tests;
