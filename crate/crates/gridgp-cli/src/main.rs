//! Command-line harness around the gridgp library: simulate datasets, build
//! train/test splits, run the method competition, and score or re-export
//! prediction files.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use gridgp::gpcore::{Location, TrendSpec};
use gridgp::harness::{
    export, load_dataset, resolve_dataset, resolve_split, run_competition, save_dataset,
    MethodSpec, RunConfig,
};
use gridgp::scoring::score_predictions;

#[derive(Parser)]
#[command(name = "gridgp", version, about = "Scalable Gaussian-process methods for large gridded spatial data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw the configured simulated dataset and write it as a grid CSV.
    Simulate {
        /// TOML run configuration.
        #[arg(long)]
        config: PathBuf,
        /// Override the configured seeds.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (defaults to the configured one).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the train/test split and write train.csv, test-locations.csv,
    /// and the sequestered truth.csv.
    Split {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the competition: fit and predict with every configured method,
    /// score against the held-out truth, and export all artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Execution thread count; overrides the configured worker count for
        /// scheduling only (results never depend on it).
        #[arg(long)]
        workers: Option<usize>,
        /// Comma-separated subset of method ids to run.
        #[arg(long)]
        methods: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score one predictions file against a truth file.
    Score {
        /// CSV with header lon,lat,mean,se,lower,upper.
        #[arg(long)]
        predictions: PathBuf,
        /// CSV with header lon,lat,value at the same locations.
        #[arg(long)]
        truth: PathBuf,
        /// Method name to print in the report row.
        #[arg(long, default_value = "method")]
        method: String,
    },
    /// Recompute scores.csv from the prediction files of a previous run.
    Export {
        /// Directory holding predictions-*.csv and truth.csv.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let mut config = RunConfig::from_toml(&text)?;
    if let Some(s) = seed {
        config.seed = s;
        if let Some(sim) = config.data.simulate.as_mut() {
            sim.seed = s;
        }
        if let Some(clouds) = config.split.clouds.as_mut() {
            clouds.seed = s;
        }
    }
    Ok(config)
}

fn out_dir(config: &RunConfig, flag: Option<PathBuf>) -> PathBuf {
    flag.unwrap_or_else(|| config.output.clone())
}

fn parse_prediction_csv(path: &Path) -> Result<Vec<(Location, f64, f64, f64, f64)>> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 6 {
            bail!("{}:{}: expected 6 fields", path.display(), i + 1);
        }
        let nums: Vec<f64> = parts
            .iter()
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .with_context(|| format!("{}:{}", path.display(), i + 1))?;
        rows.push((
            Location::new(nums[0], nums[1]),
            nums[2],
            nums[3],
            nums[4],
            nums[5],
        ));
    }
    Ok(rows)
}

fn parse_truth_csv(path: &Path) -> Result<Vec<(Location, f64)>> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            bail!("{}:{}: expected 3 fields", path.display(), i + 1);
        }
        rows.push((
            Location::new(parts[0].trim().parse()?, parts[1].trim().parse()?),
            parts[2].trim().parse()?,
        ));
    }
    Ok(rows)
}

fn score_files(predictions: &Path, truth: &Path, method: &str) -> Result<String> {
    let preds = parse_prediction_csv(predictions)?;
    let truths = parse_truth_csv(truth)?;
    // Join on coordinates.
    let key = |l: &Location| format!("{}:{}", l.lon, l.lat);
    let map: std::collections::HashMap<String, f64> =
        truths.iter().map(|(l, v)| (key(l), *v)).collect();
    let mut y = Vec::new();
    let mut means = Vec::new();
    let mut ses = Vec::new();
    let mut lowers = Vec::new();
    let mut uppers = Vec::new();
    for (loc, mean, se, lower, upper) in &preds {
        let Some(&v) = map.get(&key(loc)) else {
            bail!("no truth value at lon {}, lat {}", loc.lon, loc.lat);
        };
        y.push(v);
        means.push(*mean);
        ses.push(*se);
        lowers.push(*lower);
        uppers.push(*upper);
    }
    let report = score_predictions(method, &y, &means, &ses, &lowers, &uppers, 0.0, 1)?;
    Ok(format!(
        "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
        report.method, report.mae, report.rmse, report.crps, report.interval_score, report.coverage
    ))
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Simulate { config, seed, out } => {
            let config = load_config(&config, seed)?;
            if config.data.simulate.is_none() {
                bail!("config has no [data.simulate] block");
            }
            let dataset = resolve_dataset(&config)?;
            let dir = out_dir(&config, out);
            fs::create_dir_all(&dir)?;
            let path = dir.join("dataset.csv");
            save_dataset(&dataset, &path)?;
            println!(
                "wrote {} ({} x {} grid, {} observed)",
                path.display(),
                dataset.geometry.n_rows,
                dataset.geometry.n_cols,
                dataset.n_observed()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Split { config, seed, out } => {
            let config = load_config(&config, seed)?;
            let dataset = resolve_dataset(&config)?;
            let split = resolve_split(&config, &dataset)?;
            let dir = out_dir(&config, out);
            fs::create_dir_all(&dir)?;
            save_dataset(&split.train, &dir.join("train.csv"))?;
            let mut locs = String::from("lon,lat\n");
            let mut truth = String::from("lon,lat,value\n");
            for (l, v) in split.test_locations.iter().zip(&split.truth) {
                locs.push_str(&format!("{},{}\n", l.lon, l.lat));
                truth.push_str(&format!("{},{},{}\n", l.lon, l.lat, v));
            }
            fs::write(dir.join("test-locations.csv"), locs)?;
            fs::write(dir.join("truth.csv"), truth)?;
            println!(
                "train {} / test {} -> {}",
                split.train.n_observed(),
                split.test_locations.len(),
                dir.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Run { config, seed, workers, methods, out } => {
            let mut config = load_config(&config, seed)?;
            if let Some(list) = methods {
                let chosen: Vec<&str> = list.split(',').map(|s| s.trim()).collect();
                let mut selected = Vec::new();
                for id in chosen {
                    let spec = config
                        .methods
                        .iter()
                        .find(|m| m.id == id)
                        .cloned()
                        .unwrap_or(MethodSpec { id: id.to_string(), params: Default::default() });
                    selected.push(spec);
                }
                config.methods = selected;
            }
            if let Some(dir) = out {
                config.output = dir;
            }
            let artifacts = run_competition(&config, workers)?;
            export(&artifacts, &config.output)?;
            // The sequestered truth is an organizer-side artifact for later
            // re-scoring.
            let mut truth = String::from("lon,lat,value\n");
            for (l, v) in artifacts.test_locations.iter().zip(&artifacts.truth) {
                truth.push_str(&format!("{},{},{}\n", l.lon, l.lat, v));
            }
            fs::write(config.output.join("truth.csv"), truth)?;

            let mut failed = false;
            for o in &artifacts.outcomes {
                match &o.report {
                    Some(r) => println!(
                        "{:20} MAE {:.4}  RMSE {:.4}  CRPS {:.4}  INT {:.4}  CVG {:.3}  [{:.2} min]",
                        r.method, r.mae, r.rmse, r.crps, r.interval_score, r.coverage, r.run_time_min
                    ),
                    None => {
                        failed = true;
                        println!(
                            "{:20} FAILED: {}",
                            o.id,
                            o.error.as_deref().unwrap_or("unknown error")
                        );
                    }
                }
                for w in &o.warnings {
                    println!("{:20}   warning: {w}", "");
                }
            }
            println!("artifacts in {}", config.output.display());
            Ok(if failed { ExitCode::FAILURE } else { ExitCode::SUCCESS })
        }
        Command::Score { predictions, truth, method } => {
            println!("method,mae,rmse,crps,int,cvg");
            println!("{}", score_files(&predictions, &truth, &method)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Export { input, out } => {
            fs::create_dir_all(&out)?;
            let truth_path = input.join("truth.csv");
            if !truth_path.exists() {
                bail!("{} has no truth.csv", input.display());
            }
            let mut rows = vec![String::from("method,mae,rmse,crps,int,cvg")];
            let mut entries: Vec<PathBuf> = fs::read_dir(&input)?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| {
                    p.file_name()
                        .and_then(|n| n.to_str())
                        .map(|n| n.starts_with("predictions-") && n.ends_with(".csv"))
                        .unwrap_or(false)
                })
                .collect();
            entries.sort();
            for path in entries {
                let name = path.file_stem().unwrap().to_string_lossy();
                let method = name.trim_start_matches("predictions-").to_string();
                rows.push(score_files(&path, &truth_path, &method)?);
            }
            let table = rows.join("\n") + "\n";
            fs::write(out.join("scores.csv"), &table)?;
            print!("{table}");
            // Regenerate heatmaps when the training grid is available.
            let train_path = input.join("train.csv");
            if train_path.exists() {
                let train = load_dataset(&train_path, TrendSpec::constant())?;
                let g = train.geometry.clone();
                let (dlon, dlat) = g.spacing();
                let mut entries: Vec<PathBuf> = fs::read_dir(&input)?
                    .filter_map(|e| e.ok())
                    .map(|e| e.path())
                    .filter(|p| {
                        p.file_name()
                            .and_then(|n| n.to_str())
                            .map(|n| n.starts_with("predictions-") && n.ends_with(".csv"))
                            .unwrap_or(false)
                    })
                    .collect();
                entries.sort();
                for path in entries {
                    let name = path.file_stem().unwrap().to_string_lossy();
                    let method = name.trim_start_matches("predictions-").to_string();
                    let preds = parse_prediction_csv(&path)?;
                    let mut vmin = f64::INFINITY;
                    let mut vmax = f64::NEG_INFINITY;
                    let mut surface: Vec<Option<f64>> =
                        (0..g.cell_count()).map(|i| train.value(i)).collect();
                    for v in surface.iter().flatten() {
                        vmin = vmin.min(*v);
                        vmax = vmax.max(*v);
                    }
                    for (loc, mean, ..) in &preds {
                        vmin = vmin.min(*mean);
                        vmax = vmax.max(*mean);
                        let c = ((loc.lon - g.lon_min) / dlon).round() as usize;
                        let r = ((g.lat_max - loc.lat) / dlat).round() as usize;
                        if r < g.n_rows && c < g.n_cols {
                            surface[g.index_of(r, c)] = Some(*mean);
                        }
                    }
                    gridgp::harness::write_pgm(
                        &surface,
                        &g,
                        vmin,
                        vmax,
                        &out.join(format!("surface-{method}.pgm")),
                    )?;
                }
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
