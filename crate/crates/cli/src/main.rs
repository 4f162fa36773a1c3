use canyon_eval::report::{self, Reports};
use canyon_eval::{compute_metrics, run_on, EvalError, Mode, RunConfig};
use canyon_rtk::io::read_trajectory;
use canyon_sim::{Dataset, Scenario};
use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "canyon", version, about = "GNSS-RTK/IMU/LiDAR positioning on simulated urban canyons")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset from a scenario file.
    Simulate { scenario: PathBuf, outdir: PathBuf },
    /// Run the estimator described by a run config and write its reports.
    Run { config: PathBuf },
    /// Score an estimated trajectory against the truth.
    Evaluate {
        estimate: PathBuf,
        truth: PathBuf,
        /// Per-epoch status file for fix rate and availability.
        #[arg(long)]
        status: Option<PathBuf>,
        /// Directory for the error trace and summary.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean ADOP for a range of virtual-satellite weights.
    AdopSweep {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,0.5,1,1.5,2,2.5")]
        weights: Vec<f64>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { scenario, outdir } => simulate(&scenario, &outdir),
        Command::Run { config } => run(&config),
        Command::Evaluate {
            estimate,
            truth,
            status,
            out,
        } => evaluate(&estimate, &truth, status.as_deref(), out.as_deref()),
        Command::AdopSweep { config, weights } => adop_sweep(&config, &weights),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn simulate(scenario: &Path, outdir: &Path) -> Result<(), EvalError> {
    let s = Scenario::load(scenario)?;
    let g = canyon_sim::generate(&s, outdir)?;
    println!(
        "wrote {} epochs, {} keyframes, {} IMU samples to {}",
        g.epochs.len(),
        g.keyframes.len(),
        g.imu.len(),
        outdir.display()
    );
    Ok(())
}

fn run(config: &Path) -> Result<(), EvalError> {
    let cfg = RunConfig::load(config)?;
    let data = Dataset::load(&cfg.dataset)?;
    let out = run_on(&cfg, &data)?;
    let mut methods = Vec::new();
    if cfg.compare_baseline && cfg.mode != Mode::RtkOnly {
        let base = RunConfig {
            mode: Mode::RtkOnly,
            ..cfg.clone()
        };
        let b = run_on(&base, &data)?;
        methods.push((Mode::RtkOnly.to_string(), compute_metrics(&b.trajectory, &data.truth, &b.statuses)?));
    }
    let metrics = compute_metrics(&out.trajectory, &data.truth, &out.statuses)?;
    methods.push((cfg.mode.to_string(), metrics.clone()));
    std::fs::create_dir_all(&cfg.output).map_err(|e| EvalError::io(&cfg.output, e))?;
    let traj = cfg.output.join("trajectory.csv");
    canyon_rtk::io::write_trajectory(&traj, &out.trajectory)?;
    canyon_rtk::cycle_slip::write_slip_report(&cfg.output.join("slips.csv"), &out.slips)?;
    let adop = out.adop_rows(if cfg.mode == Mode::RtkOnly { 0.0 } else { cfg.pipeline.vs_scale });
    report::emit_reports(
        &cfg.output,
        &Reports {
            methods: &methods,
            traced: Some(&metrics),
            statuses: &out.statuses,
            skyplot: &out.skyplot,
            adop: &adop,
        },
    )?;
    print!("{}", report::summary_text(&methods));
    Ok(())
}

fn evaluate(estimate: &Path, truth: &Path, status: Option<&Path>, out: Option<&Path>) -> Result<(), EvalError> {
    let est = read_trajectory(estimate)?;
    let tr = read_trajectory(truth)?;
    let statuses = match status {
        Some(p) => report::read_status_file(p)?,
        None => Vec::new(),
    };
    let m = compute_metrics(&est, &tr, &statuses)?;
    let methods = vec![("estimate".to_string(), m.clone())];
    if let Some(dir) = out {
        report::emit_reports(
            dir,
            &Reports {
                methods: &methods,
                traced: Some(&m),
                statuses: &statuses,
                skyplot: &[],
                adop: &[],
            },
        )?;
    }
    print!("{}", report::summary_text(&methods));
    Ok(())
}

fn adop_sweep(config: &Path, weights: &[f64]) -> Result<(), EvalError> {
    let cfg = RunConfig::load(config)?;
    if cfg.mode == Mode::RtkOnly {
        return Err(EvalError::Config {
            path: config.to_path_buf(),
            message: "adop-sweep needs a fusion mode".into(),
        });
    }
    let data = Dataset::load(&cfg.dataset)?;
    let mut rows = Vec::new();
    println!("{:>10} {:>12}", "vs_weight", "mean ADOP");
    for &w in weights {
        let mut c = cfg.clone();
        c.pipeline.vs_scale = w;
        let out = run_on(&c, &data)?;
        let mean = out.mean_adop();
        println!("{w:>10} {:>12}", mean.map(|m| format!("{m:.5}")).unwrap_or_else(|| "-".into()));
        rows.extend(out.adop_rows(w));
    }
    std::fs::create_dir_all(&cfg.output).map_err(|e| EvalError::io(&cfg.output, e))?;
    report::write_adop(&cfg.output, &rows)?;
    Ok(())
}
