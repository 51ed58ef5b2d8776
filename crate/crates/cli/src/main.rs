mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ddquad::estimator::{bootstrap_ci, BootstrapResult, CellCounts, CellPhase};
use ddquad::noise::NoiseModel;
use ddquad::sampler::{read_campaign_csv, run_campaign, write_campaign_csv};
use ddquad::scenario::{
    analyze_campaign, area_grid, rabi_scan, write_frequency_vs_gradient_csv, write_phase_vs_beta_csv,
    write_phase_vs_time_csv, write_rabi_csv, CampaignAnalysis, PaperScenario,
};
use ddquad::sequence::{parse_sequence_text, serialize_sequence};
use ddquad::ErrorKind;
use serde::Serialize;
use serde_json::json;

use config::ScenarioConfig;
use output::Outputs;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] ddquad::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 3,
            CliError::Core(
                ddquad::Error::Syntax { .. } | ddquad::Error::Semantic { .. } | ddquad::Error::UnboundVariable(_),
            ) => 3,
            CliError::Core(e) => match e.kind() {
                ErrorKind::Simulation => 4,
                ErrorKind::Fit => 5,
                ErrorKind::Io => 6,
            },
            CliError::Io(_) => 6,
        }
    }

    fn kind(&self) -> &'static str {
        match self.exit_code() {
            3 => "config",
            4 => "simulation",
            5 => "fit",
            _ => "io",
        }
    }
}

#[derive(Parser)]
#[command(name = "ddquad", version, about = "Simulate and fit dynamically decoupled quadrupole-shift measurements")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration; defaults to the built-in scenario.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override a config entry, e.g. `--set plan.shots_per_point=100`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// D-manifold populations against RF pulse area.
    SimulateRabi(Common),
    /// One signal fringe and its τ = 0 reference, from the first grid entries of [plan].
    SimulateFringe {
        #[command(flatten)]
        common: Common,
        /// Pulse program using `$tau` and `$phi_laser`.
        #[arg(long)]
        sequence_file: Option<PathBuf>,
    },
    /// Simulate the [plan] campaign and fit it.
    RunCampaign {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        sequence_file: Option<PathBuf>,
    },
    /// Fit a campaign CSV.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Campaign CSV as written by run-campaign.
        #[arg(long)]
        data: PathBuf,
    },
    /// Built-in angle and time scans, joint fit and comparison table.
    ReproducePaper {
        #[command(flatten)]
        common: Common,
        /// Exact probabilities, no field noise.
        #[arg(long)]
        noiseless: bool,
    },
    /// Check a pulse program and print its canonical form.
    Parse {
        file: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out_hint = match &cli.command {
        Command::SimulateRabi(c)
        | Command::SimulateFringe { common: c, .. }
        | Command::RunCampaign { common: c, .. }
        | Command::Fit { common: c, .. }
        | Command::ReproducePaper { common: c, .. }
        | Command::Parse { common: c, .. } => c.out.clone(),
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err((err, dir)) => {
            eprintln!("error: {err}");
            if let Some(dir) = dir.or(out_hint) {
                let body = json!({
                    "schema_version": output::SCHEMA_VERSION,
                    "exit_code": err.exit_code(),
                    "kind": err.kind(),
                    "message": err.to_string(),
                });
                if std::fs::create_dir_all(&dir).is_ok() {
                    let _ = std::fs::write(dir.join("error.json"), format!("{body:#}\n"));
                }
            }
            ExitCode::from(err.exit_code())
        }
    }
}

type Failure = (CliError, Option<PathBuf>);

fn resolve(common: &Common) -> Result<ScenarioConfig, CliError> {
    let mut cfg = ScenarioConfig::load(common.config.as_deref(), &common.overrides)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Writes to stdout; a closed pipe is not an error.
fn emit(text: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|()| out.flush());
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Parse { file, common } => parse(&file, &common).map_err(|e| (e, None)),
        Command::SimulateRabi(common) => with_config(&common, Ok, simulate_rabi),
        Command::SimulateFringe { common, sequence_file } => {
            with_config(&common, |cfg| attach_sequence(cfg, sequence_file.as_deref()), simulate_fringe)
        }
        Command::RunCampaign { common, sequence_file } => {
            with_config(&common, |cfg| attach_sequence(cfg, sequence_file.as_deref()), run_campaign_cmd)
        }
        Command::Fit { common, data } => with_config(&common, Ok, |cfg, out| fit_cmd(cfg, out, &data)),
        Command::ReproducePaper { common, noiseless } => with_config(
            &common,
            |mut cfg| {
                if noiseless {
                    cfg.noise = NoiseModel::none();
                    cfg.plan.exact = true;
                    cfg.time_plan.exact = true;
                    cfg.field.beta_calibration_sigma = 0.0;
                }
                Ok(cfg)
            },
            reproduce_paper,
        ),
    }
}

/// Resolves the config, lets the command adjust it, writes it back, then runs
/// the command against an output sink stamped with its hash.
fn with_config(
    common: &Common,
    adjust: impl FnOnce(ScenarioConfig) -> Result<ScenarioConfig, CliError>,
    body: impl FnOnce(&ScenarioConfig, &Outputs) -> Result<(), CliError>,
) -> Result<(), Failure> {
    let cfg = resolve(common).and_then(adjust).map_err(|e| (e, None))?;
    let dir = cfg.output_dir.clone();
    let fail = |e: CliError| (e, Some(dir.clone()));
    let out = Outputs::create(&cfg).map_err(fail)?;
    body(&cfg, &out).map_err(fail)
}

fn attach_sequence(mut cfg: ScenarioConfig, file: Option<&Path>) -> Result<ScenarioConfig, CliError> {
    if let Some(path) = file {
        let text = read_text(path)?;
        parse_sequence_text(&text)?;
        cfg.plan.sequence_text = Some(text);
    }
    Ok(cfg)
}

fn parse(file: &Path, common: &Common) -> Result<(), CliError> {
    let text = read_text(file)?;
    let seq = parse_sequence_text(&text)?;
    let canonical = serialize_sequence(&seq);
    emit(&canonical);
    if let Some(dir) = &common.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("sequence.txt"), &canonical)?;
        let vars: Vec<String> = seq.variables().into_iter().collect();
        let body = json!({
            "schema_version": output::SCHEMA_VERSION,
            "n_echo": seq.n_echo(),
            "variables": vars,
            "elements": seq.elements.len(),
        });
        std::fs::write(dir.join("sequence.json"), format!("{body:#}\n"))?;
    }
    Ok(())
}

fn simulate_rabi(cfg: &ScenarioConfig, out: &Outputs) -> Result<(), CliError> {
    let rows = rabi_scan(&area_grid(cfg.rabi.points, cfg.rabi.max_area), cfg.rabi.rf_phase)?;
    out.csv("rabi.csv", |w| write_rabi_csv(&rows, w))?;
    eprintln!("wrote {} rows to {}", rows.len(), out.path("rabi.csv").display());
    Ok(())
}

fn simulate_fringe(cfg: &ScenarioConfig, out: &Outputs) -> Result<(), CliError> {
    let mut plan = cfg.plan.clone();
    plan.betas.truncate(1);
    plan.gradients.truncate(1);
    plan.tau_totals.truncate(1);
    plan.angle_phase_offsets.truncate(1);
    let model = cfg.ion_model();
    let data = run_campaign(&plan, &model, &cfg.noise, cfg.seed)?;
    out.csv("fringe.csv", |w| write_campaign_csv(&data, w))?;
    let cells = CellCounts::from_campaign(&data);
    let phases = ddquad::estimator::fit_cell_phases(&cells)?;
    let cell = &data.cells[0];
    let analytic = cell.tau_total
        * ddquad::atom::arm_phase_rate(&cell.fringe.context.trap, model.theta, cell.fringe.context.field.beta)
        + if model.second_order_zeeman {
            std::f64::consts::TAU
                * ddquad::atom::second_order_differential(&model.field, &model.species)
                * cell.tau_total
        } else {
            0.0
        };
    out.json("fringe_fit.json", &json!({ "cell": phases[0], "analytic_phase": analytic }))?;
    let p = &phases[0];
    emit(&format!(
        "phi_total = {:.6} rad (sigma {:.6}), analytic {:.6} rad, contrast {:.4}\n",
        p.point.phase, p.point.sigma, analytic, p.signal.contrast
    ));
    Ok(())
}

#[derive(Serialize)]
struct FitOutput<'a> {
    analysis: &'a CampaignAnalysis,
    bootstrap: Option<BootstrapResult>,
}

fn analyze_and_write(
    cfg: &ScenarioConfig,
    out: &Outputs,
    cells: &[CellCounts],
    exact: bool,
) -> Result<CampaignAnalysis, CliError> {
    let analysis = analyze_campaign(cells, &cfg.fit, &cfg.ion)?;
    let bootstrap = if cfg.bootstrap.n_resamples > 0 && analysis.joint.is_some() {
        Some(bootstrap_ci(cells, &analysis.phases, &cfg.fit, cfg.bootstrap.n_resamples, cfg.seed, exact)?)
    } else {
        None
    };
    write_tables(cfg, out, &analysis, &analysis)?;
    out.json("fit.json", &FitOutput { analysis: &analysis, bootstrap })?;
    if let Some(report) = &analysis.report {
        out.text("report.txt", &report.to_string())?;
        emit(&report.to_string());
    }
    summarize_phases(&analysis.phases);
    Ok(analysis)
}

fn write_tables(
    cfg: &ScenarioConfig,
    out: &Outputs,
    time: &CampaignAnalysis,
    angle: &CampaignAnalysis,
) -> Result<(), CliError> {
    out.csv("fig2_phase_vs_time.csv", |w| write_phase_vs_time_csv(time, w))?;
    out.csv("fig2_frequency_vs_gradient.csv", |w| write_frequency_vs_gradient_csv(time, w))?;
    out.csv("fig3_phase_vs_beta.csv", |w| write_phase_vs_beta_csv(angle, &cfg.fit, w))?;
    Ok(())
}

fn summarize_phases(phases: &[CellPhase]) {
    let ambiguous = phases.iter().filter(|p| p.ambiguous).count();
    if ambiguous > 0 {
        eprintln!("note: {ambiguous} of {} cells had no reliable unwrapping prediction", phases.len());
    }
}

fn run_campaign_cmd(cfg: &ScenarioConfig, out: &Outputs) -> Result<(), CliError> {
    let data = run_campaign(&cfg.plan, &cfg.ion_model(), &cfg.noise, cfg.seed)?;
    out.csv("campaign.csv", |w| write_campaign_csv(&data, w))?;
    analyze_and_write(cfg, out, &CellCounts::from_campaign(&data), cfg.plan.exact)?;
    Ok(())
}

fn fit_cmd(cfg: &ScenarioConfig, out: &Outputs, data: &Path) -> Result<(), CliError> {
    let file = std::fs::File::open(data)?;
    let cells: Vec<CellCounts> = read_campaign_csv(file)?.into_iter().map(CellCounts::from).collect();
    let exact = cells.iter().flat_map(|c| c.fringe.iter().chain(&c.reference_fringe)).any(|p| p.k_d.fract() != 0.0);
    analyze_and_write(cfg, out, &cells, exact)?;
    Ok(())
}

fn reproduce_paper(cfg: &ScenarioConfig, out: &Outputs) -> Result<(), CliError> {
    let scenario = PaperScenario {
        model: cfg.ion_model(),
        noise: cfg.noise.clone(),
        angle_plan: cfg.plan.clone(),
        time_plan: cfg.time_plan.clone(),
        fit: cfg.fit.clone(),
    };
    let (angle, time) = scenario.simulate(cfg.seed)?;
    out.csv("angle_campaign.csv", |w| write_campaign_csv(&angle, w))?;
    out.csv("time_campaign.csv", |w| write_campaign_csv(&time, w))?;
    let run = scenario.analyze(&angle, &time)?;
    let bootstrap = if cfg.bootstrap.n_resamples > 0 {
        Some(bootstrap_ci(
            &CellCounts::from_campaign(&angle),
            &run.angle_scan.phases,
            &cfg.fit,
            cfg.bootstrap.n_resamples,
            cfg.seed,
            cfg.plan.exact,
        )?)
    } else {
        None
    };
    write_tables(cfg, out, &run.time_scan, &run.angle_scan)?;
    out.json("fit.json", &json!({ "run": run, "bootstrap": bootstrap }))?;
    let joint = run.angle_scan.joint.as_ref().expect("angle scan has a joint fit");
    let mut text = format!(
        "Θ̂ = {:.4} +{:.4} −{:.4} e·a₀² (true {:.4}, deviation {:+.4}, truth {} the 95% CI)\n",
        joint.theta,
        joint.ci95_theta.1 - joint.theta,
        joint.theta - joint.ci95_theta.0,
        run.theta_true,
        run.deviation_from_truth,
        if run.truth_covered { "inside" } else { "outside" },
    );
    if let Some(b) = &bootstrap {
        text.push_str(&format!("bootstrap 95% CI {:.4} .. {:.4} ({} failures)\n", b.lo, b.hi, b.failures));
    }
    if let Some(report) = &run.angle_scan.report {
        text.push_str(&report.to_string());
    }
    out.text("report.txt", &text)?;
    emit(&text);
    summarize_phases(&run.angle_scan.phases);
    Ok(())
}
