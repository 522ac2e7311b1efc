//! Command-line front end: run, replay, compare, profile, sweep.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sketchtile::canvas::{export_pgm_frames, load_sgtn, save_sgtn};
use sketchtile::config::RunConfig;
use sketchtile::metrics::{fidelity, profile_csv, similarity_profile};
use sketchtile::pipeline::Pipeline;
use sketchtile::predictor::FULL_CANVAS_TILE;
use sketchtile::tiling::{fuse_noise, shift_offset, tiles_with_offset};
use sketchtile::trace::Trace;
use sketchtile::Error;

const EXIT_RUNTIME: u8 = 1;
const EXIT_CONFIG: u8 = 2;

/// Environment variable naming the default output root.
const OUT_ROOT_ENV: &str = "SKETCHTILE_OUT";

#[derive(Parser)]
#[command(
    name = "sketchtile",
    version,
    about = "Two-stage tiled diffusion experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the two-stage pipeline and write report plus dumps.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override any config key, e.g. --set workers=4.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Optional reference SGTN dump for fidelity reporting.
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Re-run a recorded trace; equivalent to run with backend=replay.
    Replay {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare two SGTN dumps and print a fidelity JSON.
    Compare { a: PathBuf, b: PathBuf },
    /// Adjacent-step similarity profile of a recorded trace (CSV).
    Profile {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one config across several values of one key; aggregate CSV.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        axis: String,
        /// Comma-separated values for the axis key.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e.downcast_ref::<Error>() {
                Some(Error::Config(_)) => ExitCode::from(EXIT_CONFIG),
                _ => ExitCode::from(EXIT_RUNTIME),
            }
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run {
            config,
            sets,
            out,
            baseline,
        } => run(config.as_deref(), &sets, out, baseline.as_deref()),
        Command::Replay {
            config,
            trace,
            sets,
            out,
        } => {
            let mut sets = sets;
            sets.push("backend=replay".to_string());
            sets.push(format!("trace.replay={}", trace.display()));
            run(config.as_deref(), &sets, out, None)
        }
        Command::Compare { a, b } => compare(&a, &b),
        Command::Profile {
            config,
            trace,
            sets,
            out,
        } => profile(config.as_deref(), &trace, &sets, out),
        Command::Sweep {
            config,
            axis,
            values,
            sets,
            out,
        } => sweep(config.as_deref(), &axis, &values, &sets, out),
    }
}

fn load_config(path: Option<&Path>, sets: &[String]) -> anyhow::Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(sets)?;
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(requested: Option<PathBuf>) -> anyhow::Result<PathBuf> {
    let dir = requested.unwrap_or_else(|| {
        std::env::var(OUT_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|_| PathBuf::from("out"))
    });
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn run(
    config: Option<&Path>,
    sets: &[String],
    out: Option<PathBuf>,
    baseline: Option<&Path>,
) -> anyhow::Result<()> {
    let cfg = load_config(config, sets)?;
    let dir = out_dir(out)?;
    let pipeline = Pipeline::new(cfg.clone())?;
    let mut artifacts = pipeline.generate()?;

    if let Some(path) = baseline {
        let reference = load_sgtn(path)?;
        artifacts.report.fidelity = Some(fidelity(&artifacts.final_latent, &reference)?.into());
    }

    if cfg.dump_final {
        save_sgtn(&artifacts.final_latent, dir.join("final.sgtn"))?;
    }
    if cfg.dump_pgm {
        export_pgm_frames(&artifacts.pixels, dir.join("frames"))?;
    }
    std::fs::write(dir.join("report.json"), artifacts.report.to_json()?)?;
    std::fs::write(
        dir.join("sched_log.jsonl"),
        artifacts.report.scheduling_log()?,
    )?;
    std::fs::write(
        dir.join("cache_log.jsonl"),
        cache_log_lines(&artifacts.report)?,
    )?;

    println!("config digest: {}", artifacts.report.config_digest);
    println!("output digest: {}", artifacts.report.output_digest);
    println!(
        "steps: {}  predictor calls: {}  skipped tiles: {}  cost units: {}  makespan units: {}",
        artifacts.report.steps.len(),
        artifacts.report.totals.predictor_calls,
        artifacts.report.totals.skipped_tiles,
        artifacts.report.totals.cost_units,
        artifacts.report.totals.makespan_units,
    );
    Ok(())
}

fn cache_log_lines(report: &sketchtile::report::RunReport) -> anyhow::Result<String> {
    let mut text = String::new();
    for s in &report.steps {
        for (tile, info) in s.tiles.iter().enumerate() {
            let line = serde_json::json!({
                "step": s.step,
                "tile": tile,
                "decision": info.decision,
                "k": info.k,
                "l_acc": info.l_acc,
                "sigma": info.sigma,
                "tau_i": info.tau_i,
            });
            text.push_str(&serde_json::to_string(&line)?);
            text.push('\n');
        }
    }
    Ok(text)
}

fn compare(a: &Path, b: &Path) -> anyhow::Result<()> {
    let left = load_sgtn(a)?;
    let right = load_sgtn(b)?;
    let f = fidelity(&left, &right)?;
    println!("{}", serde_json::to_string_pretty(&f)?);
    Ok(())
}

fn profile(
    config: Option<&Path>,
    trace_path: &Path,
    sets: &[String],
    out: Option<PathBuf>,
) -> anyhow::Result<()> {
    let cfg = load_config(config, sets)?;
    let trace = Trace::load(trace_path)?;
    let grid = sketchtile::tiling::TileGrid::new(
        cfg.target_height,
        cfg.target_width,
        cfg.tile_height,
        cfg.tile_width,
        cfg.loop_step,
        cfg.shift_mode,
    )?;

    // Group records by step, splitting the untiled stage-1 segment from the
    // tiled stage-2 segment.
    let mut stage1: Vec<(usize, sketchtile::LatentCanvas, sketchtile::LatentCanvas)> = Vec::new();
    let mut stage2_steps: std::collections::BTreeMap<u32, Vec<&sketchtile::trace::TraceRecord>> =
        std::collections::BTreeMap::new();
    for rec in trace.records.values() {
        if rec.tile_index as usize == FULL_CANVAS_TILE {
            stage1.push((rec.step as usize, rec.input.clone(), rec.output.clone()));
        } else {
            stage2_steps.entry(rec.step).or_default().push(rec);
        }
    }

    let mut stage2 = Vec::new();
    for (step, recs) in &stage2_steps {
        let shift_index = match cfg.shift_every {
            0 => 0,
            every => *step as usize / every,
        };
        let (dy, dx) = shift_offset(shift_index, &grid);
        let refs = tiles_with_offset(&grid, dy, dx, *step as usize);
        if recs.len() != refs.len() {
            return Err(Error::Replay {
                step: *step,
                tile: recs.len() as u32,
                msg: format!(
                    "profile needs a gap-free trace: step has {} records, grid has {} tiles \
                     (record with cache disabled)",
                    recs.len(),
                    refs.len()
                ),
            }
            .into());
        }
        let inputs: Vec<_> = recs
            .iter()
            .map(|r| (refs[r.tile_index as usize], r.input.clone()))
            .collect();
        let outputs: Vec<_> = recs
            .iter()
            .map(|r| (refs[r.tile_index as usize], r.output.clone()))
            .collect();
        let i_canvas = fuse_noise(&inputs, cfg.frames, cfg.channels, &grid)?;
        let o_canvas = fuse_noise(&outputs, cfg.frames, cfg.channels, &grid)?;
        stage2.push((*step as usize, i_canvas, o_canvas));
    }

    let mut rows = similarity_profile(&stage1, cfg.cache.norm)?;
    rows.extend(similarity_profile(&stage2, cfg.cache.norm)?);
    let csv = profile_csv(&rows);
    match out {
        Some(path) => {
            std::fs::write(&path, csv)?;
            println!("profile written to {}", path.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn sweep(
    config: Option<&Path>,
    axis: &str,
    values: &[String],
    sets: &[String],
    out: Option<PathBuf>,
) -> anyhow::Result<()> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".to_string()).into());
    }
    // Validate the axis key up front so unknown keys fail with exit 2.
    {
        let mut probe = load_config(config, sets)?;
        probe.apply(axis, values[0].trim())?;
    }

    let mut csv = String::from(
        "axis_value,output_digest,predictor_calls,skipped_tiles,cost_units,makespan_units,\
         psnr_db,ssim,rel_l1,cos_sim,bit_exact\n",
    );
    for value in values {
        let mut cfg = load_config(config, sets)?;
        cfg.apply(axis, value.trim())?;
        cfg.validate()?;

        let mut baseline_cfg = cfg.clone();
        baseline_cfg.cache.enabled = false;
        let baseline = Pipeline::new(baseline_cfg)?.generate()?;

        let run = Pipeline::new(cfg)?.generate()?;
        let f = fidelity(&run.final_latent, &baseline.final_latent)?;
        csv.push_str(&format!(
            "{},{},{},{},{},{},{:.6},{:.6},{:.9},{:.9},{}\n",
            value,
            run.report.output_digest,
            run.report.totals.predictor_calls,
            run.report.totals.skipped_tiles,
            run.report.totals.cost_units,
            run.report.totals.makespan_units,
            f.psnr_db,
            f.ssim,
            f.rel_l1,
            f.cos_sim,
            f.bit_exact,
        ));
    }
    match out {
        Some(path) => {
            let path = if path.is_dir() {
                path.join("sweep.csv")
            } else {
                path
            };
            std::fs::write(&path, csv)?;
            println!("sweep written to {}", path.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}
