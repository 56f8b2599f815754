//! The common-task driver: a registry mapping method ids onto fit/predict
//! entry points, sequential execution with exclusive timing, scoring against
//! the sequestered truth, and artifact export.

use std::fmt::Write as _;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::basis::{frk_fit, frk_predict, lk_fit, lk_predict, pp_fit, pp_predict, FrkParams, LkParams, PpParams};
use crate::ensemble::{
    estimate_gram, make_partition, metakrige_predict, partition_fit, partition_predict,
    probe_samples, subset_fit, weiszfeld_weights,
};
use crate::error::{Error, Result};
use crate::gpcore::{
    krige, CovarianceSpec, FitOptions, Location, PredictionResult, SpatialDataset, TrendKind,
    TrendSpec,
};
use crate::localgp::{lagp_batch, LocalGpParams};
use crate::scoring::{score_predictions, se_from_interval, ScoreReport};
use crate::spectral::{pe_fit_predict, PeParams};
use crate::taper::{empirical_cov_gridded, taper_fit, taper_predict, TaperSpec};
use crate::vecchia::{conjugate_nngp, log_space, nngp_predict, nngp_response_fit, ConjugateConfig};

use super::io::{load_dataset, save_dataset, write_pgm};
use super::split::{split_with_clouds, split_with_mask, CloudConfig, Split};

/// Registered method identifiers, in the order they appear in reports.
pub const METHOD_IDS: [&str; 11] = [
    "exact-gp",
    "frk",
    "latticekrig",
    "pred-proc",
    "partition",
    "taper",
    "nngp-response",
    "nngp-conjugate",
    "lagp",
    "periodic-embedding",
    "metakriging",
];

/// Simulation block of a run configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub n_rows: usize,
    pub n_cols: usize,
    pub lon_range: (f64, f64),
    pub lat_range: (f64, f64),
    pub partial_sill: f64,
    pub range: f64,
    pub nugget: f64,
    #[serde(default = "default_trend_coefficients")]
    pub trend_coefficients: Vec<f64>,
    pub seed: u64,
    #[serde(default = "default_sim_ceiling")]
    pub ceiling: usize,
}

fn default_trend_coefficients() -> Vec<f64> {
    vec![44.0]
}
fn default_sim_ceiling() -> usize {
    20_000
}

/// Where the data come from: a file or a simulation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DataConfig {
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub simulate: Option<SimulateConfig>,
    #[serde(default = "default_trend")]
    pub trend: TrendKind,
}

fn default_trend() -> TrendKind {
    TrendKind::Constant
}

/// How the train/test split is formed.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplitConfig {
    #[serde(default)]
    pub mask_path: Option<PathBuf>,
    #[serde(default)]
    pub clouds: Option<CloudConfig>,
}

/// One requested method with its free-form parameter table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MethodSpec {
    pub id: String,
    #[serde(default)]
    pub params: toml::value::Table,
}

/// Full run configuration; see the guide for the file format.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    pub data: DataConfig,
    pub split: SplitConfig,
    pub methods: Vec<MethodSpec>,
    /// With timing off the run-time column is written as zero, which makes
    /// whole artifacts byte-reproducible.
    #[serde(default = "default_true")]
    pub record_timing: bool,
}

fn default_workers() -> usize {
    1
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}
fn default_true() -> bool {
    true
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// Resolve the configured dataset.
pub fn resolve_dataset(config: &RunConfig) -> Result<SpatialDataset> {
    match (&config.data.path, &config.data.simulate) {
        (Some(path), None) => {
            let trend = TrendSpec { kind: config.data.trend, coefficients: None };
            load_dataset(path, trend)
        }
        (None, Some(sim)) => {
            let g = crate::gpcore::GridGeometry::new(
                sim.n_rows,
                sim.n_cols,
                sim.lon_range,
                sim.lat_range,
            );
            let spec = CovarianceSpec::new(sim.partial_sill, sim.range, sim.nugget);
            let trend = TrendSpec {
                kind: config.data.trend,
                coefficients: Some(sim.trend_coefficients.clone()),
            };
            crate::gpcore::simulate_gp(&g, &spec, &trend, sim.seed, sim.ceiling)
        }
        _ => Err(Error::InvalidConfig(
            "data needs exactly one of `path` or `simulate`".into(),
        )),
    }
}

/// Resolve the configured split.
pub fn resolve_split(config: &RunConfig, dataset: &SpatialDataset) -> Result<Split> {
    match (&config.split.mask_path, &config.split.clouds) {
        (Some(path), None) => {
            let mask = load_dataset(path, TrendSpec::constant())?;
            split_with_mask(dataset, &mask)
        }
        (None, Some(clouds)) => split_with_clouds(dataset, clouds),
        _ => Err(Error::InvalidConfig(
            "split needs exactly one of `mask_path` or `clouds`".into(),
        )),
    }
}

/// A data-driven starting point for covariance searches.
fn default_init(train: &SpatialDataset) -> CovarianceSpec {
    let y = train.observed_values();
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let var = (y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / y.len() as f64).max(1e-6);
    CovarianceSpec::new(0.9 * var, 0.15 * train.geometry.diameter(), 0.1 * var)
}

fn grab_f64(table: &toml::value::Table, key: &str) -> Option<f64> {
    table.get(key).and_then(|v| v.as_float().or(v.as_integer().map(|i| i as f64)))
}

fn fit_opts_from(table: &toml::value::Table, tol: f64, max_eval: usize) -> FitOptions {
    FitOptions {
        tol: grab_f64(table, "tol").unwrap_or(tol),
        max_eval: table
            .get("max_eval")
            .and_then(|v| v.as_integer())
            .map(|v| v as usize)
            .unwrap_or(max_eval),
        ..Default::default()
    }
}

/// Dispatch a method id onto its implementation. Every entry point consumes
/// the training dataset and the test locations and emits predictions.
pub fn run_method(
    id: &str,
    train: &SpatialDataset,
    test: &[Location],
    params: &toml::value::Table,
    seed: u64,
) -> Result<PredictionResult> {
    let init = default_init(train);
    match id {
        "exact-gp" => {
            let max_fit_n = params
                .get("max_fit_n")
                .and_then(|v| v.as_integer())
                .map(|v| v as usize)
                .unwrap_or(1500);
            let ceiling = params
                .get("ceiling")
                .and_then(|v| v.as_integer())
                .map(|v| v as usize)
                .unwrap_or(crate::gpcore::DEFAULT_EXACT_CEILING);
            let opts = fit_opts_from(params, 1e-5, 400);
            let fit_data = train.subsample(max_fit_n, seed ^ 0x5eed);
            let fit = crate::gpcore::fit_ml(&fit_data, &init, opts)?;
            let mut out = krige(train, test, &fit.spec, ceiling)?;
            if !fit.converged {
                out.warnings.push("covariance fit did not converge".into());
            }
            Ok(out)
        }
        "frk" => {
            let spacing = grab_f64(params, "coarsest_spacing")
                .unwrap_or((train.geometry.lon_max - train.geometry.lon_min) / 2.9);
            let fp = FrkParams {
                resolutions: params
                    .get("resolutions")
                    .and_then(|v| v.as_integer())
                    .map(|v| v as usize)
                    .unwrap_or(3),
                coarsest_spacing: spacing,
                overlap: grab_f64(params, "overlap").unwrap_or(1.5),
                fixed_noise: grab_f64(params, "fixed_noise"),
                fit_opts: fit_opts_from(params, 1e-5, 900),
            };
            let fit = frk_fit(train, &fp)?;
            let mut out = frk_predict(&fit, &train.trend.kind, test)?;
            if !fit.converged {
                out.warnings.push("marginal likelihood search hit the evaluation cap".into());
            }
            Ok(out)
        }
        "latticekrig" => {
            let spacing = grab_f64(params, "coarsest_spacing")
                .unwrap_or((train.geometry.lon_max - train.geometry.lon_min) / 6.0);
            let kappa_grid = params
                .get("kappa_grid")
                .and_then(|v| v.as_array())
                .map(|a| a.iter().filter_map(|v| v.as_float()).collect::<Vec<_>>())
                .unwrap_or_else(|| vec![0.05, 0.15, 0.5, 1.5]);
            let lp = LkParams {
                resolutions: params
                    .get("resolutions")
                    .and_then(|v| v.as_integer())
                    .map(|v| v as usize)
                    .unwrap_or(3),
                coarsest_spacing: spacing,
                overlap: grab_f64(params, "overlap").unwrap_or(2.5),
                kappa_grid,
                fit_opts: fit_opts_from(params, 1e-4, 150),
            };
            let fit = lk_fit(train, &lp)?;
            lk_predict(&fit, &train.trend.kind, test)
        }
        "pred-proc" => {
            let pp = PpParams {
                knots: params
                    .get("knots")
                    .and_then(|v| v.as_integer())
                    .map(|v| v as usize)
                    .unwrap_or(25),
                kmeans_knots: params
                    .get("kmeans")
                    .and_then(|v| v.as_bool())
                    .unwrap_or(false),
                init,
                fit_opts: fit_opts_from(params, 1e-4, 300),
                seed,
            };
            let fit = pp_fit(train, &pp)?;
            pp_predict(&fit, &train.trend.kind, test)
        }
        "partition" => {
            let target = params
                .get("target")
                .and_then(|v| v.as_integer())
                .map(|v| v as usize)
                .unwrap_or(900);
            let sweeps = params
                .get("sweeps")
                .and_then(|v| v.as_integer())
                .map(|v| v as usize)
                .unwrap_or(3);
            let locs = train.observed_locations();
            let partition = make_partition(&locs, target);
            let fit = partition_fit(train, partition, &init, fit_opts_from(params, 1e-4, 200), sweeps)?;
            partition_predict(&fit, test)
        }
        "taper" => {
            let (dlon, dlat) = train.geometry.spacing();
            let mean_spacing = 0.5 * (dlon + dlat);
            // Default taper range targets roughly 50 neighbors per point.
            let gamma = grab_f64(params, "gamma")
                .unwrap_or((50.0 / std::f64::consts::PI).sqrt() * mean_spacing);
            let max_lag = params
                .get("max_lag")
                .and_then(|v| v.as_integer())
                .map(|v| v as usize)
                .unwrap_or(10);
            let target_lags = params
                .get("target_lags")
                .and_then(|v| v.as_integer())
                .map(|v| v as usize)
                .unwrap_or(60);
            let emp = empirical_cov_gridded(train, max_lag, target_lags)?;
            let fit = taper_fit(&emp, train.geometry.diameter())?;
            let taper = TaperSpec::new(gamma);
            let mut out = taper_predict(train, test, &fit.spec, &taper)?;
            if !fit.converged {
                out.warnings.push("covariance least squares hit a search boundary".into());
            }
            Ok(out)
        }
        "nngp-response" => {
            let m = params
                .get("m")
                .and_then(|v| v.as_integer())
                .map(|v| v as usize)
                .unwrap_or(20);
            let fit = nngp_response_fit(train, m, &init, fit_opts_from(params, 1e-5, 400))?;
            let mut out = nngp_predict(train, test, &fit.spec, m)?;
            out.method = "nngp-response".into();
            if !fit.converged {
                out.warnings.push("likelihood search hit the evaluation cap".into());
            }
            Ok(out)
        }
        "nngp-conjugate" => {
            let m = params
                .get("m")
                .and_then(|v| v.as_integer())
                .map(|v| v as usize)
                .unwrap_or(20);
            let folds = params
                .get("folds")
                .and_then(|v| v.as_integer())
                .map(|v| v as usize)
                .unwrap_or(5);
            let diam = train.geometry.diameter();
            let config = ConjugateConfig {
                alphas: log_space(
                    grab_f64(params, "alpha_lo").unwrap_or(0.01),
                    grab_f64(params, "alpha_hi").unwrap_or(2.0),
                    params
                        .get("alpha_grid")
                        .and_then(|v| v.as_integer())
                        .map(|v| v as usize)
                        .unwrap_or(10),
                ),
                phis: log_space(
                    grab_f64(params, "phi_lo_frac").unwrap_or(0.05) * diam,
                    grab_f64(params, "phi_hi_frac").unwrap_or(2.0) * diam,
                    params
                        .get("phi_grid")
                        .and_then(|v| v.as_integer())
                        .map(|v| v as usize)
                        .unwrap_or(10),
                ),
                folds,
                seed,
            };
            let (out, _fit) = conjugate_nngp(train, test, &config, m)?;
            Ok(out)
        }
        "lagp" => {
            let lp = LocalGpParams {
                m0: params
                    .get("m0")
                    .and_then(|v| v.as_integer())
                    .map(|v| v as usize)
                    .unwrap_or(6),
                m: params
                    .get("m")
                    .and_then(|v| v.as_integer())
                    .map(|v| v as usize)
                    .unwrap_or(50),
                pool: params
                    .get("pool")
                    .and_then(|v| v.as_integer())
                    .map(|v| v as usize)
                    .unwrap_or(500),
                per_location_fit: params
                    .get("per_location_fit")
                    .and_then(|v| v.as_bool())
                    .unwrap_or(true),
                spec: init,
                fit_opts: fit_opts_from(params, 1e-4, 200),
            };
            lagp_batch(train, test, &lp)
        }
        "periodic-embedding" => {
            let pe = PeParams {
                tau: grab_f64(params, "tau").unwrap_or(1.2),
                iterations: params
                    .get("iterations")
                    .and_then(|v| v.as_integer())
                    .map(|v| v as usize)
                    .unwrap_or(20),
                ensemble: params
                    .get("ensemble")
                    .and_then(|v| v.as_integer())
                    .map(|v| v as usize)
                    .unwrap_or(100),
                bandwidth: params
                    .get("bandwidth")
                    .and_then(|v| v.as_integer())
                    .map(|v| v as usize)
                    .unwrap_or(3),
                seed,
                ..Default::default()
            };
            let (out, _) = pe_fit_predict(train, test, &pe)?;
            Ok(out)
        }
        "metakriging" => {
            let k = params
                .get("subsets")
                .and_then(|v| v.as_integer())
                .map(|v| v as usize)
                .unwrap_or(30);
            let samples = params
                .get("samples")
                .and_then(|v| v.as_integer())
                .map(|v| v as usize)
                .unwrap_or(64);
            let n_probes = params
                .get("probes")
                .and_then(|v| v.as_integer())
                .map(|v| v as usize)
                .unwrap_or(200);
            let subsets = subset_fit(train, k, samples, seed, &init, fit_opts_from(params, 1e-4, 300))?;
            // Common random probe set over the test locations.
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed ^ 0x9e3779b9);
            let mut probe_pool: Vec<Location> = test.to_vec();
            probe_pool.shuffle(&mut rng);
            probe_pool.truncate(n_probes.min(test.len()).max(2));
            let samples_mats = probe_samples(&subsets, &probe_pool)?;
            let gram = estimate_gram(&samples_mats);
            let weights = weiszfeld_weights(&gram, 1e-8, 500);
            let mut out = metakrige_predict(&subsets, &weights, test)?;
            if !weights.converged {
                out.warnings.push("geometric-median iteration hit the cap".into());
            }
            Ok(out)
        }
        other => Err(Error::UnknownMethod(other.to_string())),
    }
}

/// What happened to one method in a run.
#[derive(Clone, Debug, Serialize)]
pub struct MethodOutcome {
    pub id: String,
    pub failed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub warnings: Vec<String>,
    pub seconds: f64,
    #[serde(skip)]
    pub prediction: Option<PredictionResult>,
    #[serde(skip)]
    pub report: Option<ScoreReport>,
}

/// Everything a finished run carries into export.
pub struct CompetitionArtifacts {
    pub config: RunConfig,
    pub train: SpatialDataset,
    pub test_locations: Vec<Location>,
    pub truth: Vec<f64>,
    pub outcomes: Vec<MethodOutcome>,
    pub total_seconds: f64,
}

/// Run every requested method sequentially (exclusive timing), score against
/// the sequestered truth, and isolate failures per method.
///
/// `workers_override` changes only how many threads execute; every method is
/// scheduling-invariant, so results and the reported cores column (which
/// echoes the configured worker count) do not depend on it.
pub fn run_competition(
    config: &RunConfig,
    workers_override: Option<usize>,
) -> Result<CompetitionArtifacts> {
    for m in &config.methods {
        if !METHOD_IDS.contains(&m.id.as_str()) {
            return Err(Error::UnknownMethod(m.id.clone()));
        }
    }
    let dataset = resolve_dataset(config)?;
    let split = resolve_split(config, &dataset)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers_override.unwrap_or(config.workers).max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;

    let total_start = Instant::now();
    let mut outcomes = Vec::with_capacity(config.methods.len());
    for mspec in &config.methods {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| {
            pool.install(|| {
                run_method(
                    &mspec.id,
                    &split.train,
                    &split.test_locations,
                    &mspec.params,
                    config.seed,
                )
            })
        }));
        let seconds = if config.record_timing {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        };
        let outcome = match result {
            Ok(Ok(mut prediction)) => {
                prediction.seconds = seconds;
                prediction.cores_used = config.workers.max(1);
                // Fill a missing standard error from the interval rule.
                for row in prediction.rows.iter_mut() {
                    if !row.se.is_finite() && row.lower.is_finite() && row.upper.is_finite() {
                        row.se = se_from_interval(row.lower, row.upper);
                    }
                }
                let report = score_predictions(
                    &mspec.id,
                    &split.truth,
                    &prediction.means(),
                    &prediction.ses(),
                    &prediction.lowers(),
                    &prediction.uppers(),
                    seconds / 60.0,
                    config.workers.max(1),
                )?;
                MethodOutcome {
                    id: mspec.id.clone(),
                    failed: false,
                    error: None,
                    warnings: prediction.warnings.clone(),
                    seconds,
                    prediction: Some(prediction),
                    report: Some(report),
                }
            }
            Ok(Err(e)) => MethodOutcome {
                id: mspec.id.clone(),
                failed: true,
                error: Some(e.to_string()),
                warnings: Vec::new(),
                seconds,
                prediction: None,
                report: None,
            },
            Err(panic) => {
                let msg = panic
                    .downcast_ref::<&str>()
                    .map(|s| s.to_string())
                    .or_else(|| panic.downcast_ref::<String>().cloned())
                    .unwrap_or_else(|| "panic".into());
                MethodOutcome {
                    id: mspec.id.clone(),
                    failed: true,
                    error: Some(format!("panicked: {msg}")),
                    warnings: Vec::new(),
                    seconds,
                    prediction: None,
                    report: None,
                }
            }
        };
        outcomes.push(outcome);
    }
    Ok(CompetitionArtifacts {
        config: config.clone(),
        train: split.train,
        test_locations: split.test_locations,
        truth: split.truth,
        outcomes,
        total_seconds: if config.record_timing {
            total_start.elapsed().as_secs_f64()
        } else {
            0.0
        },
    })
}

/// Render one row of scores.csv.
fn score_row(out: &mut String, outcome: &MethodOutcome) {
    match &outcome.report {
        Some(r) => {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.2},{}",
                r.method,
                r.mae,
                r.rmse,
                r.crps,
                r.interval_score,
                r.coverage,
                r.run_time_min,
                r.cores_used
            );
        }
        None => {
            let _ = writeln!(out, "{},NA,NA,NA,NA,NA,NA,NA", outcome.id);
        }
    }
}

/// Write scores.csv, per-method predictions and heatmaps, the training grid,
/// and a JSON manifest into `dir`.
pub fn export(artifacts: &CompetitionArtifacts, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut scores = String::from("method,mae,rmse,crps,int,cvg,run_time_min,cores_used\n");
    for outcome in &artifacts.outcomes {
        score_row(&mut scores, outcome);
    }
    fs::write(dir.join("scores.csv"), &scores)?;

    // Heatmap range shared across methods: training values and every
    // predicted mean.
    let g = &artifacts.train.geometry;
    let mut vmin = f64::INFINITY;
    let mut vmax = f64::NEG_INFINITY;
    for i in 0..g.cell_count() {
        if let Some(v) = artifacts.train.value(i) {
            vmin = vmin.min(v);
            vmax = vmax.max(v);
        }
    }
    for o in &artifacts.outcomes {
        if let Some(p) = &o.prediction {
            for row in &p.rows {
                if row.mean.is_finite() {
                    vmin = vmin.min(row.mean);
                    vmax = vmax.max(row.mean);
                }
            }
        }
    }

    for outcome in &artifacts.outcomes {
        let Some(pred) = &outcome.prediction else { continue };
        let mut csv = String::from("lon,lat,mean,se,lower,upper\n");
        for row in &pred.rows {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{}",
                row.location.lon, row.location.lat, row.mean, row.se, row.lower, row.upper
            );
        }
        fs::write(dir.join(format!("predictions-{}.csv", outcome.id)), csv)?;

        // Surface: training values where observed, predicted means at test
        // cells, black elsewhere.
        let (dlon, dlat) = g.spacing();
        let mut surface: Vec<Option<f64>> =
            (0..g.cell_count()).map(|i| artifacts.train.value(i)).collect();
        for row in &pred.rows {
            let c = if dlon > 0.0 { ((row.location.lon - g.lon_min) / dlon).round() as usize } else { 0 };
            let r = if dlat > 0.0 { ((g.lat_max - row.location.lat) / dlat).round() as usize } else { 0 };
            if r < g.n_rows && c < g.n_cols {
                surface[g.index_of(r, c)] = Some(row.mean);
            }
        }
        write_pgm(
            &surface,
            g,
            vmin,
            vmax,
            &dir.join(format!("surface-{}.pgm", outcome.id)),
        )?;
    }

    save_dataset(&artifacts.train, &dir.join("train.csv"))?;

    #[derive(Serialize)]
    struct Manifest<'a> {
        config: &'a RunConfig,
        n_train: usize,
        n_test: usize,
        heatmap_value_range: (f64, f64),
        total_seconds: f64,
        methods: &'a [MethodOutcome],
    }
    let manifest = Manifest {
        config: &artifacts.config,
        n_train: artifacts.train.n_observed(),
        n_test: artifacts.test_locations.len(),
        heatmap_value_range: (vmin, vmax),
        total_seconds: artifacts.total_seconds,
        methods: &artifacts.outcomes,
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mini_config(dir: &Path, workers: usize) -> RunConfig {
        RunConfig {
            seed: 20160804,
            workers,
            output: dir.to_path_buf(),
            data: DataConfig {
                path: None,
                simulate: Some(SimulateConfig {
                    n_rows: 20,
                    n_cols: 30,
                    lon_range: (0.0, 1.45),
                    lat_range: (0.0, 0.95),
                    partial_sill: 4.0,
                    range: 0.3,
                    nugget: 0.25,
                    trend_coefficients: vec![44.0],
                    seed: 20160804,
                    ceiling: 20_000,
                }),
                trend: TrendKind::Constant,
            },
            split: SplitConfig {
                mask_path: None,
                clouds: Some(CloudConfig {
                    seed: 1,
                    disks: 4,
                    radius_cells: (2.0, 4.0),
                    random_fraction: 0.02,
                }),
            },
            methods: vec![
                MethodSpec { id: "exact-gp".into(), params: Default::default() },
                MethodSpec {
                    id: "nngp-response".into(),
                    params: {
                        let mut t = toml::value::Table::new();
                        t.insert("m".into(), toml::Value::Integer(10));
                        t
                    },
                },
            ],
            record_timing: false,
        }
    }

    #[test]
    fn config_round_trips_through_toml() {
        let dir = std::env::temp_dir();
        let cfg = mini_config(&dir, 2);
        let text = cfg.to_toml();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(back.seed, cfg.seed);
        assert_eq!(back.methods.len(), 2);
        assert_eq!(back.methods[1].id, "nngp-response");
    }

    #[test]
    fn competition_runs_scores_and_sequesters() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = mini_config(dir.path(), 1);
        let artifacts = run_competition(&cfg, None).unwrap();
        assert_eq!(artifacts.outcomes.len(), 2);
        for o in &artifacts.outcomes {
            assert!(!o.failed, "{:?}", o.error);
            let r = o.report.as_ref().unwrap();
            assert!(r.mae <= r.rmse);
            assert!(r.coverage >= 0.8, "{} coverage {}", o.id, r.coverage);
        }
        // Truth sequestration: every test cell is unobserved in train.
        let g = &artifacts.train.geometry;
        let (dlon, dlat) = g.spacing();
        for loc in &artifacts.test_locations {
            let c = ((loc.lon - g.lon_min) / dlon).round() as usize;
            let r = ((g.lat_max - loc.lat) / dlat).round() as usize;
            assert!(!artifacts.train.is_observed(g.index_of(r, c)));
        }

        export(&artifacts, dir.path()).unwrap();
        let scores = std::fs::read_to_string(dir.path().join("scores.csv")).unwrap();
        assert!(scores.starts_with("method,mae,rmse,crps,int,cvg,run_time_min,cores_used\n"));
        assert_eq!(scores.lines().count(), 3);
        assert!(dir.path().join("predictions-exact-gp.csv").exists());
        assert!(dir.path().join("surface-nngp-response.pgm").exists());
        assert!(dir.path().join("manifest.json").exists());
    }

    #[test]
    fn identical_scores_across_worker_counts() {
        let dir1 = tempfile::tempdir().unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let cfg = mini_config(dir1.path(), 2);
        let a = run_competition(&cfg, Some(1)).unwrap();
        let b = run_competition(&cfg, Some(4)).unwrap();
        export(&a, dir1.path()).unwrap();
        export(&b, dir2.path()).unwrap();
        let sa = std::fs::read(dir1.path().join("scores.csv")).unwrap();
        let sb = std::fs::read(dir2.path().join("scores.csv")).unwrap();
        assert_eq!(sa, sb, "scores.csv must be byte-identical across workers");
    }

    #[test]
    fn failures_are_isolated() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = mini_config(dir.path(), 1);
        // An impossible parameterization: metakriging with far too many
        // subsets for the training size.
        cfg.methods.push(MethodSpec {
            id: "metakriging".into(),
            params: {
                let mut t = toml::value::Table::new();
                t.insert("subsets".into(), toml::Value::Integer(500));
                t
            },
        });
        let artifacts = run_competition(&cfg, None).unwrap();
        assert!(!artifacts.outcomes[0].failed);
        assert!(!artifacts.outcomes[1].failed);
        assert!(artifacts.outcomes[2].failed);
        export(&artifacts, dir.path()).unwrap();
        let scores = std::fs::read_to_string(dir.path().join("scores.csv")).unwrap();
        let last = scores.lines().last().unwrap();
        assert!(last.starts_with("metakriging,NA,NA"));
    }

    #[test]
    fn unknown_method_rejected_and_empty_reports_export() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = mini_config(dir.path(), 1);
        cfg.methods = vec![MethodSpec { id: "kriging-2000".into(), params: Default::default() }];
        assert!(matches!(run_competition(&cfg, None), Err(Error::UnknownMethod(_))));

        cfg.methods.clear();
        let artifacts = run_competition(&cfg, None).unwrap();
        export(&artifacts, dir.path()).unwrap();
        let scores = std::fs::read_to_string(dir.path().join("scores.csv")).unwrap();
        assert_eq!(scores.lines().count(), 1, "header-only scores.csv");
    }

    #[test]
    fn timing_totals_bound_method_times() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = mini_config(dir.path(), 1);
        cfg.record_timing = true;
        let artifacts = run_competition(&cfg, None).unwrap();
        let sum: f64 = artifacts.outcomes.iter().map(|o| o.seconds).sum();
        assert!(artifacts.total_seconds >= sum);
    }
}
