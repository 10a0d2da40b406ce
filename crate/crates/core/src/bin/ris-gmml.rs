use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ris_gmml::harness::{emit, run_experiment, ExperimentFile, Format, Method, ResultTable, SweepKind};

#[derive(Parser)]
#[command(name = "ris-gmml", version, about = "RIS-aided MU-MISO beamforming experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// SE versus transmit power (dBm).
    SweepPower(Common),
    /// SE versus RIS element count.
    SweepRis(Common),
    /// SE versus BS antenna count.
    SweepAntennas(Common),
    /// SE versus channel estimation error (dB).
    SweepCee(Common),
    /// Best SE at epoch checkpoints.
    Convergence(Common),
    /// Median solve time versus BS antenna count (single thread).
    Timing(Common),
    /// SE versus hidden width or depth.
    NnSize {
        #[arg(long, value_enum, default_value_t = Axis::Width)]
        axis: Axis,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Width,
    Depth,
}

#[derive(Args)]
struct Common {
    /// TOML experiment file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    format: String,
    #[arg(long)]
    samples: Option<usize>,
    /// Comma-separated method names.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Comma-separated sweep values.
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<f64>>,
}

fn defaults(kind: SweepKind) -> (Vec<f64>, Vec<Method>) {
    use Method::*;
    let all = vec![Gmml, Gml, Ml, Ao, RandomPhase, UpperBound];
    match kind {
        SweepKind::Power => (vec![0.0, 5.0, 10.0, 15.0, 20.0], all),
        SweepKind::RisElements => (vec![20.0, 60.0, 100.0, 140.0, 180.0], all),
        SweepKind::Antennas => (vec![16.0, 32.0, 64.0, 128.0], all),
        SweepKind::Cee => (vec![-20.0, -15.0, -10.0, -5.0, 0.0], vec![Gmml, Gml, Ml, Ao, RandomPhase]),
        SweepKind::Convergence => (vec![1.0, 10.0, 50.0, 100.0, 200.0, 300.0, 400.0, 500.0], vec![Gmml, Gml, Ml, Ao]),
        SweepKind::Timing => (vec![32.0, 64.0, 128.0, 256.0], vec![Gmml, Ao]),
        SweepKind::Width => (vec![50.0, 100.0, 200.0, 400.0], vec![Gmml]),
        SweepKind::Depth => (vec![1.0, 2.0, 3.0], vec![Gmml]),
    }
}

fn execute(kind: SweepKind, c: &Common) -> ris_gmml::Result<ResultTable> {
    let file = match &c.config {
        Some(p) => ExperimentFile::load(p)?,
        None => ExperimentFile::default(),
    };
    let (values, methods) = defaults(kind);
    let mut spec = file.spec(kind, values);
    if file.experiment.methods.is_none() {
        spec.methods = methods;
    }
    if let Some(v) = &c.values {
        spec.values = v.clone();
    }
    if let Some(s) = c.seed {
        spec.seed = s;
    }
    if let Some(n) = c.samples {
        spec.samples = n;
    }
    if let Some(ms) = &c.methods {
        spec.methods = ms.iter().map(|m| m.trim().parse()).collect::<ris_gmml::Result<_>>()?;
    }
    let table = run_experiment(&spec)?;
    let format: Format = c.format.parse()?;
    match &c.out {
        Some(p) => emit(&table, p, format)?,
        None => print!("{}", table.render(format)),
    }
    Ok(table)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, common) = match &cli.command {
        Command::SweepPower(c) => (SweepKind::Power, c),
        Command::SweepRis(c) => (SweepKind::RisElements, c),
        Command::SweepAntennas(c) => (SweepKind::Antennas, c),
        Command::SweepCee(c) => (SweepKind::Cee, c),
        Command::Convergence(c) => (SweepKind::Convergence, c),
        Command::Timing(c) => (SweepKind::Timing, c),
        Command::NnSize { axis: Axis::Width, common } => (SweepKind::Width, common),
        Command::NnSize { axis: Axis::Depth, common } => (SweepKind::Depth, common),
    };
    match execute(kind, common) {
        Ok(table) if table.total_failures() == 0 => ExitCode::SUCCESS,
        Ok(table) => {
            eprintln!("{} sample(s) failed:", table.total_failures());
            for r in table.rows.iter().filter(|r| r.failures > 0) {
                eprintln!("  {} at {}: {} of {}", r.method.name(), r.sweep_value, r.failures, r.failures + r.samples);
            }
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
