use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use loadmargin::pipeline::{compare, write_outputs, AssessmentResult, PipelineError, Scenario, ScenarioConfig};

#[derive(Parser)]
#[command(name = "loadmargin", version, about = "Probabilistic load-margin assessment with a GP emulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Gpe,
    Mc,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Run the assessment and write margins, pdf, summary and designs.
    Assess {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "gpe")]
        method: MethodArg,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; defaults to the config's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the number of evaluation samples.
        #[arg(long)]
        n_mc: Option<usize>,
    },
    /// Parse and check a config together with its case file.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
    /// Trace the full PV curve for one physical sample row.
    PvCurve {
        #[arg(long)]
        config: PathBuf,
        /// 0-based row of the evaluation design (or training design with --training).
        #[arg(long)]
        sample: usize,
        #[arg(long)]
        training: bool,
        /// CSV file to write; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load(config: &Path) -> Result<Scenario, PipelineError> {
    let cfg = ScenarioConfig::load(config)?;
    Scenario::prepare(&cfg)
}

fn run(command: Command) -> Result<(), PipelineError> {
    match command {
        Command::Assess { config, method, seed, out, n_mc } => {
            let mut cfg = ScenarioConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(n) = n_mc {
                cfg.n_mc = n;
            }
            let scenario = Scenario::prepare(&cfg)?;
            let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
            let gpe = matches!(method, MethodArg::Gpe | MethodArg::Both)
                .then(|| scenario.run_assessment())
                .transpose()?;
            let mc = matches!(method, MethodArg::Mc | MethodArg::Both)
                .then(|| scenario.run_mc_benchmark())
                .transpose()?;
            for r in gpe.iter().chain(mc.iter()) {
                write_outputs(&dir, r.method.tag(), r, &cfg)?;
                report(r);
            }
            if let (Some(g), Some(m)) = (&gpe, &mc) {
                let c = compare(g, m)?;
                println!(
                    "comparison: mean error {:.3}%, std error {:.3}%, KS {:.4}, per-sample speedup {:.0}x",
                    100.0 * c.mean_relative_error,
                    100.0 * c.std_relative_error,
                    c.ks_statistic,
                    c.speedup_per_sample
                );
                let path = dir.join("comparison.json");
                std::fs::write(&path, serde_json::to_string_pretty(&c).expect("serializes"))
                    .map_err(|source| PipelineError::Io { path: path.display().to_string(), source })?;
            }
            println!("outputs written to {}", dir.display());
            Ok(())
        }
        Command::ValidateConfig { config } => {
            let s = load(&config)?;
            println!(
                "ok: {} inputs, {} buses, target bus {}, n_train {}, n_mc {}",
                s.config.inputs.len(),
                s.case.n_buses(),
                s.config.target_bus,
                s.config.n_train,
                s.config.n_mc
            );
            Ok(())
        }
        Command::PvCurve { config, sample, training, out } => {
            let s = load(&config)?;
            let designs = if training { s.training_designs()? } else { s.evaluation_designs()? };
            let physical = &designs.last().expect("physical stage").design;
            if sample >= physical.n_rows() {
                return Err(PipelineError::Config(format!(
                    "sample {sample} is out of range; the design has {} rows",
                    physical.n_rows()
                )));
            }
            let trace = s.trace(physical.row(sample), &s.cpf_options)?;
            let csv = trace.to_csv();
            match out {
                Some(p) => std::fs::write(&p, csv)
                    .map_err(|source| PipelineError::Io { path: p.display().to_string(), source })?,
                None => print!("{csv}"),
            }
            log::info!("lambda_max = {:.6}", trace.lambda_max());
            Ok(())
        }
    }
}

fn report(r: &AssessmentResult) {
    let st = &r.stats;
    println!(
        "{}: bus {} margin mean {:.4} MW, std {:.4} MW, q05 {:.4}, q50 {:.4}, q95 {:.4} ({} samples, {} excluded)",
        r.method.tag(),
        r.target_bus,
        st.mean,
        st.std,
        st.q05,
        st.q50,
        st.q95,
        r.margins.len(),
        r.excluded_rows.len()
    );
    let t = &r.timing;
    println!(
        "  timing: train cpf {:.3}s, gpe train {:.3}s, gpe eval {:.4}s, mc cpf {:.3}s, total {:.3}s",
        t.t_train_cpf, t.t_gpe_train, t.t_gpe_eval, t.t_mc_cpf, t.t_total
    );
}
