use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use log::info;
use serde::Serialize;

use flipst::config::RunConfig;
use flipst::eval::{run_model, ModelSpec, NamedRegion, Region};
use flipst::grid::{flip_field, Field};
use flipst::io::{load_stack, render_heatmap, save_stack, ColorScale, GridStack};
use flipst::kalman::{estimate_variances, MleOptions};
use flipst::pipeline;
use flipst::preprocess::reflectivity_to_rain;
use flipst::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "flipst", version, about = "Spectral spatio-temporal models with mirror-flip Gibbs suppression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Preset name (exampleI, table1, storm) or path to a TOML config.
    #[arg(long, global = true, default_value = "exampleI")]
    config: String,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Retained coefficients for single-model commands.
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true, action = clap::ArgAction::Set)]
    flip: Option<bool>,
    #[arg(long, global = true, action = clap::ArgAction::Set)]
    window: Option<bool>,
    #[arg(long, global = true)]
    steps: Option<usize>,
    #[arg(long, global = true)]
    horizon: Option<usize>,
    /// Extra scoring region `x0,x1,y0,y1`.
    #[arg(long, global = true)]
    region: Option<String>,
    /// Read frames from this stack directory instead of generating them.
    #[arg(long, global = true)]
    input: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Generate the configured dataset as a frame stack.
    Simulate,
    /// Write the double-mirror-flipped stack.
    Flip,
    /// Estimate velocity and diffusivity from consecutive frames.
    Velocity,
    /// Fit noise variances by maximum likelihood for one model.
    Fit,
    /// Filtered fields over the training steps for one model.
    Filter,
    /// Forecast fields after the training steps for one model.
    Predict,
    /// Run every configured model and write the MAE report.
    Evaluate,
    /// Render every frame of `--input` as a grayscale heatmap.
    Render,
    /// Convert a dBZ stack to rain rate (mm/hr).
    Convert,
}

#[derive(Serialize)]
struct RunLog<'a> {
    command: String,
    config: &'a RunConfig,
    config_hash: String,
    version: &'static str,
    wall_time_s: f64,
    outputs: Vec<String>,
    status: String,
}

fn parse_region(s: &str) -> Result<Region> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Config(format!("--region {s:?}: {e}")))?;
    if v.len() != 4 {
        return Err(Error::Config("--region expects x0,x1,y0,y1".into()));
    }
    Region::new((v[0], v[1]), (v[2], v[3])).map_err(|e| Error::Config(e.to_string()))
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&cli.config)?;
    if let Some(s) = cli.seed {
        cfg.simulation.seed = s;
        cfg.storm.seed = s;
    }
    if let Some(n) = cli.steps {
        cfg.simulation.steps = n;
        cfg.storm.steps = n;
        cfg.comparison.eval_times.retain(|&t| t < n);
        cfg.comparison.train_steps = cfg.comparison.train_steps.min(n);
    }
    if let Some(r) = &cli.region {
        cfg.comparison.regions.push(NamedRegion {
            name: "cli".into(),
            region: parse_region(r)?,
        });
    }
    let single = matches!(cli.command, Command::Fit | Command::Filter | Command::Predict);
    if single || cli.k.is_some() || cli.flip.is_some() || cli.window.is_some() {
        let base = cfg.models.first().cloned().unwrap_or_else(|| ModelSpec::direct(100));
        let flip = cli.flip.unwrap_or(base.flip);
        let window = cli.window.unwrap_or(base.window);
        let k = cli.k.unwrap_or(base.k);
        let prefix = match (flip, window) {
            (true, true) => "HWF",
            (true, false) => "F",
            (false, true) => "HWNF",
            (false, false) => "NF",
        };
        let spec = ModelSpec {
            label: format!("{prefix}{k}"),
            flip,
            window,
            k,
        };
        if single || cli.command == Command::Evaluate {
            cfg.models = vec![spec];
        }
    }
    if let Some(h) = cli.horizon {
        let steps = cfg.comparison.train_steps + h;
        if steps > cfg.steps() {
            cfg.simulation.steps = steps;
            cfg.storm.steps = steps;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Frames the models are fitted on: `--input` if given, else generated.
fn frames(cli: &Cli, cfg: &RunConfig) -> Result<Vec<Field>> {
    match &cli.input {
        Some(dir) => {
            let s = load_stack(dir)?;
            if s.manifest.units.eq_ignore_ascii_case("dbz") {
                return Err(Error::Config(format!(
                    "{} holds dBZ; run `flipst convert` first",
                    dir.display()
                )));
            }
            Ok(s.frames)
        }
        None => pipeline::model_frames(cfg),
    }
}

fn input_stack(cli: &Cli) -> Result<GridStack> {
    let dir = cli
        .input
        .as_ref()
        .ok_or_else(|| Error::Config("this command needs --input DIR".into()))?;
    load_stack(dir)
}

fn write_text(path: &Path, text: &str, outputs: &mut Vec<String>) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    outputs.push(path.display().to_string());
    Ok(())
}

fn save(dir: PathBuf, stack: &GridStack, outputs: &mut Vec<String>) -> Result<()> {
    save_stack(&dir, stack)?;
    outputs.push(dir.display().to_string());
    Ok(())
}

fn run(cli: &Cli, cfg: &RunConfig, outputs: &mut Vec<String>) -> Result<()> {
    let hash = cfg.hash();
    let out = &cli.out;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let delta = cfg.comparison.delta;
    match cli.command {
        Command::Simulate => {
            let (frames, units) = pipeline::raw_frames(cfg)?;
            let stack = GridStack::new(frames, delta, units, &hash)?;
            save(out.join(format!("simulate_{hash}")), &stack, outputs)?;
        }
        Command::Convert => {
            let s = input_stack(cli)?;
            if !s.manifest.units.eq_ignore_ascii_case("dbz") {
                return Err(Error::Config(format!("expected a dBZ stack, found {}", s.manifest.units)));
            }
            let frames = s.frames.iter().map(reflectivity_to_rain).collect();
            let stack = GridStack::new(frames, s.manifest.delta, "mm/hr", &hash)?;
            save(out.join(format!("rain_{hash}")), &stack, outputs)?;
        }
        Command::Flip => {
            let f = frames(cli, cfg)?;
            let flipped = f.iter().map(|x| flip_field(x, cfg.comparison.variant)).collect();
            let stack = GridStack::new(flipped, delta, "flipped", &hash)?;
            save(out.join(format!("flip_{hash}")), &stack, outputs)?;
        }
        Command::Velocity => {
            let f = frames(cli, cfg)?;
            let mut c = cfg.clone();
            c.physics = flipst::config::PhysicsSource::Estimated;
            let phys = pipeline::physics(&c, &f)?;
            let g = phys.velocity.grid;
            let vx = Field::new(g, phys.velocity.vx.clone())?;
            let vy = Field::new(g, phys.velocity.vy.clone())?;
            let d = Field::new(g, phys.diffusivity.dxx.clone())?;
            let stack = GridStack::new(vec![vx, vy, d], delta, "vx,vy,diffusivity", &hash)?;
            save(out.join(format!("velocity_{hash}")), &stack, outputs)?;
            let (lo, hi) = phys
                .velocity
                .speeds()
                .fold((f64::INFINITY, 0.0f64), |(a, b), s| (a.min(s), b.max(s)));
            let inside = lo >= cfg.speed_band.0 && hi <= cfg.speed_band.1;
            println!(
                "speed range [{lo:.5}, {hi:.5}] per step; band [{}, {}]: {}",
                cfg.speed_band.0,
                cfg.speed_band.1,
                if inside { "inside" } else { "OUTSIDE" }
            );
        }
        Command::Fit => {
            let f = frames(cli, cfg)?;
            let phys = pipeline::physics(cfg, &f)?;
            let spec = &cfg.models[0];
            let mut tpl = flipst::eval::build_model(spec, f[0].grid(), &phys, &cfg.comparison)?;
            let inputs: Vec<Field> = f[..cfg.comparison.train_steps]
                .iter()
                .map(|x| {
                    let x = if spec.window {
                        let w = flipst::preprocess::hamming2d(x.grid(), cfg.comparison.hamming);
                        flipst::preprocess::apply_window(x, &w)?
                    } else {
                        x.clone()
                    };
                    Ok(if spec.flip { flip_field(&x, cfg.comparison.variant) } else { x })
                })
                .collect::<Result<_>>()?;
            let obs = inputs
                .iter()
                .map(|x| flipst::spectral::analyze(x, &tpl.ordering).map(|s| s.alpha))
                .collect::<Result<Vec<_>>>()?;
            let mut opts = match &cfg.comparison.noise {
                flipst::eval::NoiseChoice::Fit(o) => o.clone(),
                flipst::eval::NoiseChoice::Fixed(_) => MleOptions::default(),
            };
            if spec.flip {
                match cfg.comparison.flipped_obs_variance {
                    Some(v) => tpl.noise.sigma2_obs = v,
                    None => opts.fit_obs = true,
                }
            }
            let est = estimate_variances(&tpl, &obs, &opts)?;
            let json = serde_json::json!({
                "model": spec.label,
                "k": tpl.dim(),
                "sigma2_alpha": est.noise.sigma2_alpha,
                "sigma2_beta": est.noise.sigma2_beta,
                "sigma2_obs": est.noise.sigma2_obs,
                "loglik": est.loglik,
                "grid_loglik": est.grid_loglik,
                "evaluations": est.evaluations,
                "converged": est.converged,
            });
            println!("{json}");
            let p = out.join(format!("fit_{}_{hash}.json", spec.label));
            write_text(&p, &format!("{json:#}\n"), outputs)?;
        }
        Command::Filter | Command::Predict => {
            let f = frames(cli, cfg)?;
            let phys = pipeline::physics(cfg, &f)?;
            let spec = &cfg.models[0];
            let train = cfg.comparison.train_steps;
            let horizon = cli.horizon.unwrap_or(f.len().saturating_sub(train)).max(1);
            let take = (train + horizon).min(f.len()).max(train);
            let mut data = f[..take].to_vec();
            while data.len() < train + horizon {
                // forecast-only times beyond the data: placeholders, never scored
                data.push(data[data.len() - 1].clone());
            }
            let runm = run_model(spec, &data, &phys, &cfg.comparison)?;
            let range = if cli.command == Command::Filter {
                0..train
            } else {
                train..train + horizon
            };
            let fields = range
                .map(|t| runm.field_at(t, cfg.comparison.variant))
                .collect::<Result<Vec<_>>>()?;
            let kind = if cli.command == Command::Filter { "filter" } else { "predict" };
            let stack = GridStack::new(fields, delta, "field", &hash)?;
            save(out.join(format!("{kind}_{}_{hash}", spec.label)), &stack, outputs)?;
            println!(
                "{}: K = {}, s2_alpha = {:.4e}, s2_beta = {:.4e}, s2_obs = {:.4e}",
                spec.label,
                runm.ordering.len(),
                runm.noise.sigma2_alpha,
                runm.noise.sigma2_beta,
                runm.noise.sigma2_obs
            );
        }
        Command::Evaluate => {
            let f = frames(cli, cfg)?;
            let phys = pipeline::physics(cfg, &f)?;
            let (report, _) =
                flipst::eval::run_comparison(&f, &cfg.models, &phys, &cfg.comparison, &hash)?;
            write_text(&out.join(format!("report_{hash}.csv")), &report.to_csv(), outputs)?;
            let summary = report.summary();
            write_text(&out.join(format!("summary_{hash}.txt")), &summary, outputs)?;
            print!("{summary}");
        }
        Command::Render => {
            let s = input_stack(cli)?;
            let (lo, hi) = s.frames.iter().flat_map(|f| f.values().iter()).fold(
                (f64::INFINITY, f64::NEG_INFINITY),
                |(a, b), &v| (a.min(v), b.max(v)),
            );
            let dir = out.join(format!("render_{hash}"));
            for (t, f) in s.frames.iter().enumerate() {
                let p = dir.join(format!("frame_{t:04}.pgm"));
                render_heatmap(f, &p, ColorScale::Fixed { min: lo, max: hi })?;
            }
            outputs.push(dir.display().to_string());
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    if e.is_config() {
        2
    } else if e.is_numerical() {
        3
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let start = Instant::now();
    let cfg = match resolve_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code(&e));
        }
    };
    let mut outputs = Vec::new();
    let result = run(&cli, &cfg, &mut outputs);
    let status = match &result {
        Ok(()) => "ok".to_string(),
        Err(e) => format!("error: {e}"),
    };
    let log = RunLog {
        command: format!("{:?}", cli.command).to_lowercase(),
        config: &cfg,
        config_hash: cfg.hash(),
        version: env!("CARGO_PKG_VERSION"),
        wall_time_s: start.elapsed().as_secs_f64(),
        outputs,
        status,
    };
    let log_path = cli.out.join(format!("run_log_{}_{}.json", log.command, log.config_hash));
    if fs::create_dir_all(&cli.out).is_ok() {
        if let Ok(text) = serde_json::to_string_pretty(&log) {
            if let Err(e) = fs::write(&log_path, text) {
                eprintln!("warning: cannot write run log {}: {e}", log_path.display());
            }
        }
    }
    match result {
        Ok(()) => {
            info!("done in {:.2}s", log.wall_time_s);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
