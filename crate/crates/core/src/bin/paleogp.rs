//! Command-line front end: synth → preprocess → fit → predict/export-grid/
//! validate, all driven by one TOML config with flag overrides.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use paleogp::baseline::{BaselineModel, GriddedSlice};
use paleogp::checkpoint::{BaselineFile, Checkpoint};
use paleogp::config::RunConfig;
use paleogp::data;
use paleogp::error::{Error, Result};
use paleogp::synth;
use paleogp::training::{self, substream, EvalReport, FittedModel};

#[derive(Parser)]
#[command(
    name = "paleogp",
    about = "Spatiotemporal Gaussian-process temperature-field reconstruction",
    version
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML). Missing file = all defaults.
    #[arg(long, global = true, default_value = "run_config.toml")]
    config: PathBuf,
    /// Override the config's root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for the leave-one-out sweep (default 1).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with known ground-truth hyperparameters.
    Synth,
    /// Fit the baseline m(x), center the observations, write ingest report.
    Preprocess,
    /// Train the model on the preprocessed data.
    Fit,
    /// Posterior predictive at points from a CSV (`lon,lat,age_bp`).
    Predict {
        /// Model checkpoint (defaults to <out>/checkpoint.toml).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Query points CSV.
        #[arg(long)]
        points: PathBuf,
        /// Output CSV (defaults to <out>/predictions.csv).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Posterior mean/std on a regular lon/lat grid, one file per age.
    ExportGrid {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Grid bounding box as lon_min,lon_max,lat_min,lat_max (defaults to
        /// the model's inducing bounding box).
        #[arg(long, value_delimiter = ',')]
        bbox: Option<Vec<f64>>,
        /// Points per axis (resolution × resolution grid).
        #[arg(long, default_value_t = 25)]
        resolution: usize,
        /// Ages (years BP), comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        ages: Vec<f64>,
    },
    /// Leave-one-time-slice-out validation (single split or full sweep).
    Validate {
        /// Hold out this age (years BP) only; omit for a full sweep.
        #[arg(long)]
        age: Option<f64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut cfg = if cli.common.config.exists() {
        match RunConfig::load(&cli.common.config) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(e.exit_code() as u8);
            }
        }
    } else {
        RunConfig::default()
    };
    if let Some(seed) = cli.common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.common.out {
        cfg.out_dir = out;
    }
    cfg.train.seed = cfg.seed;

    let run = || -> Result<()> {
        std::fs::create_dir_all(&cfg.out_dir)
            .map_err(|e| Error::io(cfg.out_dir.display().to_string(), e))?;
        match &cli.command {
            Command::Synth => cmd_synth(&cfg),
            Command::Preprocess => cmd_preprocess(&cfg),
            Command::Fit => cmd_fit(&cfg),
            Command::Predict {
                checkpoint,
                points,
                output,
            } => cmd_predict(&cfg, checkpoint.as_deref(), points, output.as_deref()),
            Command::ExportGrid {
                checkpoint,
                bbox,
                resolution,
                ages,
            } => cmd_export_grid(&cfg, checkpoint.as_deref(), bbox.as_deref(), *resolution, ages),
            Command::Validate { age } => cmd_validate(&cfg, *age, cli.common.threads),
        }
    };
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn fmt_age(age: f64) -> String {
    // ages arrive in years BP and are file-name material
    if age == age.trunc() {
        format!("{}", age as i64)
    } else {
        format!("{age}")
    }
}

fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    let corpus = synth::generate(&cfg.synth, substream(cfg.seed, "synth-corpus"))?;
    let obs_path = cfg.out_dir.join("observations.csv");
    data::save_observations(&obs_path, &corpus.records, false)?;

    let mut slice_refs = Vec::new();
    for (age, nodes) in &corpus.slices {
        let path = cfg.out_dir.join(format!("slice_{}.csv", fmt_age(*age)));
        let mut text = String::from("lon,lat,value_c\n");
        for (lon, lat, v) in nodes {
            text.push_str(&format!("{lon},{lat},{v}\n"));
        }
        write_text(&path, &text)?;
        slice_refs.push((path, *age));
    }

    let truth = format!(
        "ell_lon = {}\nell_lat = {}\nell_t = {}\nsigma_f = {}\nsigma = {}\n",
        corpus.spatial.ell_lon,
        corpus.spatial.ell_lat,
        corpus.temporal.ell_t,
        corpus.temporal.sigma_f,
        corpus.sigma
    );
    write_text(&cfg.out_dir.join("ground_truth.toml"), &truth)?;

    // a ready-to-run config pointing at the generated files: the baseline is
    // fitted on the most recent (mid-Holocene-like) slice
    let mut run_cfg = cfg.clone();
    run_cfg.data.observations = obs_path;
    run_cfg.data.simulation_id = "sim".into();
    let mh_age = cfg
        .synth
        .sim_ages
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    run_cfg.data.baseline_slices = slice_refs
        .iter()
        .filter(|(_, age)| *age == mh_age)
        .map(|(path, age)| paleogp::config::SliceRef {
            path: path.clone(),
            age_bp: *age,
            simulation_id: "sim".into(),
        })
        .collect();
    write_text(&cfg.out_dir.join("run_config.toml"), &run_cfg.to_toml())?;
    println!(
        "synth: {} records, {} slices -> {}",
        corpus.records.len(),
        corpus.slices.len(),
        cfg.out_dir.display()
    );
    Ok(())
}

fn load_slice(path: &Path, id: &str) -> Result<GriddedSlice> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some("lon,lat,value_c") => {}
        _ => {
            return Err(Error::Parse(format!(
                "{}: expected header `lon,lat,value_c`",
                path.display()
            )))
        }
    }
    let mut nodes = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let parsed: Option<Vec<f64>> = fields.iter().map(|f| f.trim().parse().ok()).collect();
        match parsed {
            Some(v) if v.len() == 3 && v.iter().all(|x| x.is_finite()) => {
                nodes.push((v[0], v[1], v[2]))
            }
            _ => {
                return Err(Error::Parse(format!(
                    "{} line {}: bad slice row",
                    path.display(),
                    i + 2
                )))
            }
        }
    }
    Ok(GriddedSlice {
        id: id.to_string(),
        nodes,
    })
}

fn cmd_preprocess(cfg: &RunConfig) -> Result<()> {
    if cfg.data.baseline_slices.is_empty() {
        return Err(Error::invalid(
            "config lists no baseline slices (data.baseline_slices)",
        ));
    }
    // a missing input is a validation error (exit 2), not an I/O failure
    for path in std::iter::once(&cfg.data.observations)
        .chain(cfg.data.baseline_slices.iter().map(|s| &s.path))
    {
        if !path.exists() {
            return Err(Error::invalid(format!(
                "missing input file: {}",
                path.display()
            )));
        }
    }
    let (mut records, report) = data::load_observations(&cfg.data.observations)?;
    let slices: Vec<GriddedSlice> = cfg
        .data
        .baseline_slices
        .iter()
        .map(|s| load_slice(&s.path, &format!("{}@{}", s.simulation_id, s.age_bp)))
        .collect::<Result<_>>()?;
    let baseline = BaselineModel::fit(&slices, cfg.baseline.max_nodes)?;
    data::center(&mut records, &baseline);

    data::save_observations(&cfg.out_dir.join("centered.csv"), &records, true)?;
    BaselineFile::from_model(&baseline).save(&cfg.out_dir.join("baseline.toml"))?;
    write_text(&cfg.out_dir.join("ingest_report.txt"), &report.to_string())?;
    print!("{report}");
    Ok(())
}

fn load_preprocessed(cfg: &RunConfig) -> Result<(Vec<data::ObservationRecord>, BaselineModel)> {
    let centered = cfg.out_dir.join("centered.csv");
    let (mut records, _) = data::load_observations(&centered)?;
    let baseline = BaselineFile::load(&cfg.out_dir.join("baseline.toml"))?.to_model()?;
    // the centered file stores Ȳ in the value column; restore both fields
    for r in &mut records {
        let centered_value = r.value;
        r.value = data::uncenter(centered_value, r.lon, r.lat, &baseline);
        r.value_centered = Some(centered_value);
    }
    Ok((records, baseline))
}

fn print_summary(model: &FittedModel) {
    let h = &model.hyper;
    println!("fitted hyperparameters:");
    println!("  ell_lon = {:.4} degrees", h.spatial.ell_lon);
    println!("  ell_lat = {:.4} degrees", h.spatial.ell_lat);
    println!("  ell_t   = {:.4} ka", h.temporal.ell_t);
    println!("  sigma_f = {:.4} C", h.temporal.sigma_f);
    println!("  sigma   = {:.4} C", h.noise_sigma);
    println!("inducing locations ({}):", h.inducing.z_s.len());
    for &(lon, lat) in &h.inducing.z_s {
        println!("  {lon:.4} {lat:.4}");
    }
}

fn cmd_fit(cfg: &RunConfig) -> Result<()> {
    let (records, baseline) = load_preprocessed(cfg)?;
    let (model, trace) = training::fit(&cfg.train, &records, &baseline)?;

    let mut trace_csv = String::from("iteration,epoch,elbo_estimate\n");
    for row in &trace {
        trace_csv.push_str(&format!(
            "{},{},{}\n",
            row.iteration, row.epoch, row.elbo_estimate
        ));
    }
    write_text(&cfg.out_dir.join("elbo_trace.csv"), &trace_csv)?;
    Checkpoint::from_model(&model, &cfg.sha256()).save(&cfg.out_dir.join("checkpoint.toml"))?;
    print_summary(&model);
    Ok(())
}

fn load_model(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<FittedModel> {
    let default = cfg.out_dir.join("checkpoint.toml");
    Checkpoint::load(checkpoint.unwrap_or(&default))?.to_model()
}

fn load_points(path: &Path) -> Result<Vec<(f64, f64, f64)>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some("lon,lat,age_bp") => {}
        _ => {
            return Err(Error::Parse(format!(
                "{}: expected header `lon,lat,age_bp`",
                path.display()
            )))
        }
    }
    let mut points = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Option<Vec<f64>> = line.split(',').map(|f| f.trim().parse().ok()).collect();
        match parsed {
            Some(v) if v.len() == 3 && v.iter().all(|x| x.is_finite()) => {
                points.push((v[0], v[1], v[2]))
            }
            _ => {
                return Err(Error::Parse(format!(
                    "{} line {}: bad point row",
                    path.display(),
                    i + 2
                )))
            }
        }
    }
    Ok(points)
}

fn prediction_rows(model: &FittedModel, points: &[(f64, f64, f64)]) -> Result<String> {
    let preds = model.predict(points)?;
    let mut out = String::from("lon,lat,age_bp,mean_c,std_latent,std_predictive\n");
    for (&(lon, lat, age), p) in points.iter().zip(&preds) {
        out.push_str(&format!(
            "{lon},{lat},{age},{},{},{}\n",
            p.mean,
            p.var_latent.sqrt(),
            p.var_observation.sqrt()
        ));
    }
    Ok(out)
}

fn cmd_predict(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    points_path: &Path,
    output: Option<&Path>,
) -> Result<()> {
    let model = load_model(cfg, checkpoint)?;
    let points = load_points(points_path)?;
    let rows = prediction_rows(&model, &points)?;
    let default = cfg.out_dir.join("predictions.csv");
    let out_path = output.unwrap_or(&default);
    write_text(out_path, &rows)?;
    println!("predict: {} points -> {}", points.len(), out_path.display());
    Ok(())
}

fn cmd_export_grid(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    bbox: Option<&[f64]>,
    resolution: usize,
    ages: &[f64],
) -> Result<()> {
    if resolution == 0 {
        return Err(Error::invalid("resolution must be positive"));
    }
    let model = load_model(cfg, checkpoint)?;
    let bb = model.hyper.inducing.bounding_box;
    let (lon_min, lon_max, lat_min, lat_max) = match bbox {
        Some([a, b, c, d]) if a < b && c < d => (*a, *b, *c, *d),
        Some(_) => return Err(Error::invalid("bbox must be lon_min<lon_max,lat_min<lat_max")),
        None => (bb.lon_min, bb.lon_max, bb.lat_min, bb.lat_max),
    };
    let axis = |lo: f64, hi: f64, i: usize| {
        if resolution == 1 {
            0.5 * (lo + hi)
        } else {
            lo + (hi - lo) * i as f64 / (resolution - 1) as f64
        }
    };
    for &age in ages {
        let mut points = Vec::with_capacity(resolution * resolution);
        for j in 0..resolution {
            for i in 0..resolution {
                points.push((axis(lon_min, lon_max, i), axis(lat_min, lat_max, j), age));
            }
        }
        let rows = prediction_rows(&model, &points)?;
        let path = cfg.out_dir.join(format!("grid_{}.csv", fmt_age(age)));
        write_text(&path, &rows)?;
        println!("export-grid: {} rows -> {}", points.len(), path.display());
    }
    Ok(())
}

fn report_text(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("n = {}\n", report.n));
    out.push_str(&format!("mean_error_c = {}\n", report.mean_error));
    out.push_str(&format!("mean_abs_error_c = {}\n", report.mean_abs_error));
    for (lvl, lo, hi) in &report.intervals {
        out.push_str(&format!(
            "central_interval_{:.0} = ({lo}, {hi})\n",
            lvl * 100.0
        ));
    }
    for (k, cov) in report.coverage.iter().enumerate() {
        out.push_str(&format!("coverage_{}sigma = {cov}\n", k + 1));
    }
    out
}

fn write_report(cfg: &RunConfig, tag: &str, report: &EvalReport) -> Result<()> {
    write_text(
        &cfg.out_dir.join(format!("report_{tag}.txt")),
        &report_text(report),
    )?;
    let mut errs = String::from("error,normalized_error\n");
    for (e, z) in report.errors.iter().zip(&report.normalized_errors) {
        errs.push_str(&format!("{e},{z}\n"));
    }
    write_text(&cfg.out_dir.join(format!("errors_{tag}.csv")), &errs)?;
    let mut dens = String::from("normalized_error,density\n");
    for (x, d) in report.normalized_error_density(101) {
        dens.push_str(&format!("{x},{d}\n"));
    }
    write_text(&cfg.out_dir.join(format!("density_{tag}.csv")), &dens)?;
    Ok(())
}

fn cmd_validate(cfg: &RunConfig, age: Option<f64>, threads: usize) -> Result<()> {
    let (records, baseline) = load_preprocessed(cfg)?;
    let sim = &cfg.data.simulation_id;
    match age {
        Some(age) => {
            let (train, test) = data::split_leave_time_slice_out(&records, age, sim)?;
            let (model, _) = training::fit(&cfg.train, &train, &baseline)?;
            let report = training::validate(&model, &test)?;
            write_report(cfg, &fmt_age(age), &report)?;
            print!("{}", report_text(&report));
        }
        None => {
            let (per_age, aggregate) =
                training::sweep_leave_one_out(&cfg.train, &records, sim, &baseline, threads)?;
            for (age, report) in &per_age {
                write_report(cfg, &fmt_age(*age), report)?;
            }
            write_report(cfg, "aggregate", &aggregate)?;
            print!("{}", report_text(&aggregate));
        }
    }
    Ok(())
}
