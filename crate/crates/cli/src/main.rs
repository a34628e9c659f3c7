use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use robust_stop::bounds::BoundsReport;
use robust_stop::harness::{
    run_boundary, run_price, run_table, write_table_csv, BoundaryRow, ExperimentConfig, LipschitzK,
    TableConfig,
};
use robust_stop::oracle::{dp_value, enumerate_policies, tree_bounds, TreeSizes, TreeSpec};
use robust_stop::{Error, Exact};

#[derive(Parser)]
#[command(
    name = "robust-stop",
    version,
    about = "Robust optimal multiple stopping: bounds, boundaries and tables"
)]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(clap::Args, Clone)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Multiplies every sample size and the steps per interval.
    #[arg(long)]
    scale: Option<f64>,
    /// Output file; stdout if absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Tracking-error constant: `one`, `theory` or a number.
    #[arg(long)]
    lipschitz_k: Option<String>,
}

#[derive(Subcommand)]
enum Verb {
    /// Lower and upper bounds for one configuration.
    Price(Common),
    /// Exercise thresholds per date and right.
    Boundary(Common),
    /// One row per point of an ambiguity and/or rights sweep.
    Table(Common),
    /// Exact values on a scenario tree.
    Oracle {
        /// Tree file (JSON).
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        rights: usize,
        /// Also enumerate all policies, up to this many combinations.
        #[arg(long)]
        enumerate: Option<f64>,
        /// Also run the Monte Carlo bounds on the tree with this seed.
        #[arg(long)]
        bounds_seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.verb) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<Error>() {
                Some(err) if err.is_config() => ExitCode::from(2),
                Some(_) => ExitCode::from(3),
                None => ExitCode::from(2),
            }
        }
    }
}

fn load_config(c: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_json(&read(&c.config)?)?;
    apply(&mut cfg, c)?;
    if let Some(s) = c.scale {
        cfg = cfg.scaled(s)?;
    }
    Ok(cfg)
}

fn apply(cfg: &mut ExperimentConfig, c: &Common) -> anyhow::Result<()> {
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(k) = &c.lipschitz_k {
        cfg.lipschitz_k = LipschitzK::parse(k)?;
    }
    Ok(())
}

fn read(p: &Path) -> anyhow::Result<String> {
    fs::read_to_string(p)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())).into())
}

fn emit(out: Option<&PathBuf>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Error::Io(e).into()),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn run(verb: Verb) -> anyhow::Result<()> {
    match verb {
        Verb::Price(c) => {
            let cfg = load_config(&c)?;
            let r = run_price(&cfg)?;
            let text = format!("{}\n{}\n", BoundsReport::CSV_HEADER, r.csv_row());
            emit(
                c.out
                    .as_ref()
                    .or(cfg.output.as_ref().map(PathBuf::from).as_ref()),
                &text,
            )
        }
        Verb::Boundary(c) => {
            let cfg = load_config(&c)?;
            let rows = run_boundary(&cfg)?;
            let mut text = format!("{}\n", BoundaryRow::CSV_HEADER);
            for r in rows {
                text.push_str(&r.csv_row());
                text.push('\n');
            }
            emit(c.out.as_ref(), &text)
        }
        Verb::Table(c) => {
            let mut t = TableConfig::from_json(&read(&c.config)?)?;
            apply(&mut t.base, &c)?;
            if let Some(s) = c.scale {
                t = t.scaled(s)?;
            }
            let rows = run_table(&t);
            let mut buf = Vec::new();
            write_table_csv(&mut buf, &rows)?;
            emit(c.out.as_ref(), &String::from_utf8(buf)?)
        }
        Verb::Oracle {
            config,
            rights,
            enumerate,
            bounds_seed,
            out,
        } => {
            let spec = TreeSpec::from_json(&read(&config)?)?;
            let exact = spec.build::<Exact>()?;
            let mut text = format!("dp_value,{}\n", dp_value(&exact, rights).value(rights));
            if let Some(guard) = enumerate {
                text.push_str(&format!(
                    "enumerated,{}\n",
                    enumerate_policies(&exact, rights, guard)?
                ));
            }
            if let Some(seed) = bounds_seed {
                let b = tree_bounds(&spec.build::<f64>()?, rights, TreeSizes::default(), seed)?;
                text.push_str(&format!(
                    "lb,{:.6},{:.6}\nub,{:.6}\ny0_upper,{:.6}\nte,{:.6}\n",
                    b.lb.mean, b.lb.std_error, b.ub, b.y0_upper, b.tracking_error
                ));
            }
            emit(out.as_ref(), &text)
        }
    }
}
