//! `vstsae` — batch estimation for transformed-scale small area models.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use vstsae::model::VarianceMethod;
use vstsae::simulation::{Menus, TableFormat};
use vstsae::transforms::BoundaryPolicy;
use vstsae_cli::commands::{self, DataOptions, SimulateOptions};
use vstsae_cli::config::{resolve, resolve_bool, ConfigFile};

#[derive(Parser)]
#[command(
    name = "vstsae",
    version,
    about = "Small area estimation under variance-stabilizing transformations",
    after_help = "Exit codes: 0 ok, 2 input error, 3 numerical error, 4 bootstrap budget exceeded.\n\
                  The default output directory comes from VSTSAE_OUT_DIR, falling back to ./out."
)]
struct Cli {
    /// Flat key=value config file; flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for artifacts.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads (default: all cores). Results are identical for any
    /// thread count.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Input CSV (area_id, y_direct, n, sum_w2 | w1..wK, x1..xp[, d][, w_median]).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Transform family (see `vstsae transforms list`).
    #[arg(long)]
    family: Option<String>,
    /// Shape parameter for negbinomial/gamma-log/lognormal.
    #[arg(long)]
    shape: Option<f64>,
    /// Variance-component method: REML, YL or LL.
    #[arg(long)]
    method: Option<String>,
    /// Boundary handling for out-of-domain direct estimates: clamp or reject.
    #[arg(long)]
    boundary: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Inspect the transform catalog.
    Transforms {
        #[command(subcommand)]
        action: TransformsAction,
    },
    /// Fit the transformed-scale model and write fit.json.
    Fit {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Point estimates (direct, nbt, peb, eb) per area.
    Estimate {
        #[command(flatten)]
        data: DataArgs,
        /// Gauss-Hermite nodes for posterior integrals.
        #[arg(long)]
        nodes: Option<usize>,
        /// Also write estimates.svg.
        #[arg(long)]
        plot: bool,
    },
    /// MSE estimates (m1, ms, pms) per area.
    Mse {
        #[command(flatten)]
        data: DataArgs,
        /// Bootstrap replicates for the bias correction.
        #[arg(long)]
        bootstrap: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Confidence intervals per area.
    Intervals {
        #[command(flatten)]
        data: DataArgs,
        /// Comma-separated methods: TDirect,TEB.YL,Boot,TEB.B,pTEB.B,Mpnaive.
        #[arg(long)]
        methods: Option<String>,
        #[arg(long)]
        alpha: Option<f64>,
        /// Bootstrap replicates for the calibrated intervals.
        #[arg(long)]
        bootstrap: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Apply the Yates continuity correction using w_median.
        #[arg(long)]
        yates: bool,
        /// Also write intervals.svg.
        #[arg(long)]
        plot: bool,
    },
    /// Monte Carlo study over an (m, n) grid; writes table files.
    Simulate {
        /// Comma-separated area counts.
        #[arg(long)]
        m_list: Option<String>,
        /// Comma-separated per-area sample sizes.
        #[arg(long)]
        n_list: Option<String>,
        #[arg(long)]
        replications: Option<usize>,
        #[arg(long)]
        mse_bootstrap: Option<usize>,
        #[arg(long)]
        interval_bootstrap: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        alpha: Option<f64>,
        /// Table format: csv, json or both.
        #[arg(long)]
        format: Option<String>,
        /// Point estimators to evaluate (default: all).
        #[arg(long)]
        estimators: Option<String>,
        /// MSE estimators to evaluate (default: all).
        #[arg(long)]
        mse_estimators: Option<String>,
        /// Interval methods to evaluate (default: all).
        #[arg(long)]
        interval_methods: Option<String>,
        /// Conventional PRRMSE reading (1/sqrt(R) inside the root).
        #[arg(long)]
        prrmse_conventional: bool,
    },
}

#[derive(Subcommand)]
enum TransformsAction {
    /// Print name, domain, (a, b) and the variance function per family.
    List {
        /// Shape parameter used for the parametric families.
        #[arg(long)]
        shape: Option<f64>,
    },
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(exit_code(&err));
        }
    }
}

fn exit_code(err: &anyhow::Error) -> i32 {
    match err.downcast_ref::<vstsae::Error>() {
        Some(vstsae::Error::BootstrapBudget { .. }) => 4,
        Some(vstsae::Error::Domain { .. }) | Some(vstsae::Error::NonConvergence { .. }) => 3,
        Some(_) => 2,
        None => 2,
    }
}

fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    if let Some(threads) = resolve(cli.threads, &file, "threads")? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("cannot configure worker threads")?;
    }
    let out_dir = resolve(cli.out_dir, &file, "out_dir")?
        .or_else(|| std::env::var_os("VSTSAE_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));

    match cli.command {
        Command::Transforms {
            action: TransformsAction::List { shape },
        } => {
            let shape = resolve(shape, &file, "shape")?;
            commands::cmd_transforms_list(shape)?;
            Ok(())
        }
        Command::Fit { data } => {
            let (data, echo) = resolve_data(data, &file, &out_dir)?;
            commands::cmd_fit(&out_dir, &echo, &data)?;
            Ok(())
        }
        Command::Estimate { data, nodes, plot } => {
            let (data, mut echo) = resolve_data(data, &file, &out_dir)?;
            let nodes = resolve(nodes, &file, "nodes")?
                .unwrap_or(vstsae::estimators::DEFAULT_QUADRATURE_NODES);
            let plot = plot || resolve_bool(false, &file, "plot")?;
            echo.insert("nodes".into(), nodes.to_string());
            commands::cmd_estimate(&out_dir, &echo, &data, nodes, plot)?;
            Ok(())
        }
        Command::Mse {
            data,
            bootstrap,
            seed,
        } => {
            let (data, mut echo) = resolve_data(data, &file, &out_dir)?;
            let bootstrap = resolve(bootstrap, &file, "bootstrap")?.unwrap_or(100);
            let seed = resolve(seed, &file, "seed")?.unwrap_or(0);
            echo.insert("bootstrap".into(), bootstrap.to_string());
            echo.insert("seed".into(), seed.to_string());
            commands::cmd_mse(&out_dir, &echo, &data, bootstrap, seed)?;
            Ok(())
        }
        Command::Intervals {
            data,
            methods,
            alpha,
            bootstrap,
            seed,
            yates,
            plot,
        } => {
            let (data, mut echo) = resolve_data(data, &file, &out_dir)?;
            let methods_raw = resolve(methods, &file, "methods")?
                .unwrap_or_else(|| "TDirect,TEB.YL,Boot,TEB.B,pTEB.B,Mpnaive".to_string());
            let methods = commands::parse_ci_methods(&methods_raw)?;
            let alpha = resolve(alpha, &file, "alpha")?.unwrap_or(0.05);
            let bootstrap = resolve(bootstrap, &file, "bootstrap")?.unwrap_or(1000);
            let seed = resolve(seed, &file, "seed")?.unwrap_or(0);
            let yates = yates || resolve_bool(false, &file, "yates")?;
            let plot = plot || resolve_bool(false, &file, "plot")?;
            echo.insert("methods".into(), methods_raw);
            echo.insert("alpha".into(), alpha.to_string());
            echo.insert("bootstrap".into(), bootstrap.to_string());
            echo.insert("seed".into(), seed.to_string());
            echo.insert("yates".into(), yates.to_string());
            commands::cmd_intervals(
                &out_dir, &echo, &data, &methods, alpha, bootstrap, seed, yates, plot,
            )?;
            Ok(())
        }
        Command::Simulate {
            m_list,
            n_list,
            replications,
            mse_bootstrap,
            interval_bootstrap,
            seed,
            alpha,
            format,
            estimators,
            mse_estimators,
            interval_methods,
            prrmse_conventional,
        } => {
            let m_list = parse_usize_list(
                &resolve(m_list, &file, "m_list")?.unwrap_or_else(|| "15,50".into()),
            )?;
            let n_list = parse_usize_list(
                &resolve(n_list, &file, "n_list")?.unwrap_or_else(|| "10,100".into()),
            )?;
            let replications = resolve(replications, &file, "replications")?.unwrap_or(500);
            let mse_bootstrap = resolve(mse_bootstrap, &file, "mse_bootstrap")?.unwrap_or(100);
            let interval_bootstrap =
                resolve(interval_bootstrap, &file, "interval_bootstrap")?.unwrap_or(1000);
            let seed = resolve(seed, &file, "seed")?.unwrap_or(0);
            let alpha = resolve(alpha, &file, "alpha")?.unwrap_or(0.05);
            let format = match resolve(format, &file, "format")?
                .unwrap_or_else(|| "both".into())
                .to_ascii_lowercase()
                .as_str()
            {
                "csv" => TableFormat::Csv,
                "json" => TableFormat::Json,
                "both" => TableFormat::Both,
                other => bail!("unknown table format '{other}' (csv, json or both)"),
            };
            let full = Menus::full();
            let menus = Menus {
                estimators: match resolve(estimators, &file, "estimators")? {
                    Some(raw) => commands::parse_point_estimators(&raw)?,
                    None => full.estimators,
                },
                mse: match resolve(mse_estimators, &file, "mse_estimators")? {
                    Some(raw) => commands::parse_mse_estimators(&raw)?,
                    None => full.mse,
                },
                intervals: match resolve(interval_methods, &file, "interval_methods")? {
                    Some(raw) => commands::parse_ci_methods(&raw)?,
                    None => full.intervals,
                },
            };
            let prrmse_literal =
                !(prrmse_conventional || resolve_bool(false, &file, "prrmse_conventional")?);

            let mut echo = BTreeMap::new();
            echo.insert("out_dir".into(), out_dir.display().to_string());
            echo.insert(
                "m_list".into(),
                m_list.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
            );
            echo.insert(
                "n_list".into(),
                n_list.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
            );
            echo.insert("replications".into(), replications.to_string());
            echo.insert("mse_bootstrap".into(), mse_bootstrap.to_string());
            echo.insert("interval_bootstrap".into(), interval_bootstrap.to_string());
            echo.insert("seed".into(), seed.to_string());
            echo.insert("alpha".into(), alpha.to_string());
            echo.insert("prrmse_literal".into(), prrmse_literal.to_string());

            let opts = SimulateOptions {
                m_list,
                n_list,
                replications,
                mse_bootstrap,
                interval_bootstrap,
                seed,
                alpha,
                prrmse_literal,
                format,
                menus,
            };
            commands::cmd_simulate(&out_dir, &echo, &opts)?;
            Ok(())
        }
    }
}

fn resolve_data(
    args: DataArgs,
    file: &ConfigFile,
    out_dir: &std::path::Path,
) -> Result<(DataOptions, BTreeMap<String, String>)> {
    let input: PathBuf = resolve(args.input, file, "input")?
        .ok_or_else(|| vstsae::Error::input("missing --input (or 'input' config key)"))?;
    let family = resolve(args.family, file, "family")?
        .ok_or_else(|| vstsae::Error::input("missing --family (or 'family' config key)"))?;
    let shape: Vec<f64> = match resolve(args.shape, file, "shape")? {
        Some(s) => vec![s],
        None => vec![],
    };
    let method: VarianceMethod = resolve(args.method, file, "method")?
        .unwrap_or_else(|| "YL".to_string())
        .parse()?;
    let boundary = match resolve(args.boundary, file, "boundary")?
        .unwrap_or_else(|| "clamp".to_string())
        .to_ascii_lowercase()
        .as_str()
    {
        "clamp" => BoundaryPolicy::Clamp,
        "reject" => BoundaryPolicy::Reject,
        other => bail!("unknown boundary policy '{other}' (clamp or reject)"),
    };

    let mut echo = BTreeMap::new();
    echo.insert("input".into(), input.display().to_string());
    echo.insert("family".into(), family.clone());
    if let Some(s) = shape.first() {
        echo.insert("shape".into(), s.to_string());
    }
    echo.insert("method".into(), method.tag().to_string());
    echo.insert(
        "boundary".into(),
        if boundary == BoundaryPolicy::Clamp { "clamp" } else { "reject" }.into(),
    );
    echo.insert("out_dir".into(), out_dir.display().to_string());

    Ok((
        DataOptions {
            input,
            family,
            shape,
            method,
            boundary,
        },
        echo,
    ))
}

fn parse_usize_list(raw: &str) -> Result<Vec<usize>> {
    let list: Vec<usize> = raw
        .split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().with_context(|| format!("bad list entry '{s}'")))
        .collect::<Result<_>>()?;
    if list.is_empty() {
        bail!("empty list '{raw}'");
    }
    Ok(list)
}
