//! `derain`: training, inference, evaluation and data tools for the
//! dual-branch deraining network.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 runtime error.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser, Subcommand};
use log::info;

use derain::fsutil::write_atomic;
use derain::image::{
    decompose_label, load_image, save_image, signed_to_display, synthesize_rain,
    synthetic::write_toy_dataset, DatasetManifest, RainParams,
};
use derain::net::ForwardOptions;
use derain::train::{derain as derain_image, evaluate, load_model, Checkpoint, RunConfig, Trainer};
use derain::{Error, Result, Tensor};

#[derive(Parser)]
#[command(
    name = "derain",
    version,
    about = "Dual-branch frequency-decomposition deraining"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a `key = value` config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Derain one image.
    Derain {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Write per-stage channel-mean feature maps into this directory.
        #[arg(long)]
        dump_features: Option<PathBuf>,
    },
    /// PSNR/SSIM of inputs and outputs over a manifest.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a clean image into structure and detail labels.
    Decompose {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        structure: PathBuf,
        /// Written as 0.5 + detail / 2.
        #[arg(long)]
        detail: PathBuf,
    },
    /// Add synthetic rain streaks to an image.
    Rainfall {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 10.0)]
        angle: f64,
        #[arg(long, default_value_t = 2.0)]
        density: f64,
        #[arg(long, default_value_t = 0.6)]
        intensity: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Write a synthetic clean/rainy toy dataset with a manifest.
    Toyset {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = 16)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10.0)]
        angle: f64,
        #[arg(long, default_value_t = 2.0)]
        density: f64,
        #[arg(long, default_value_t = 0.6)]
        intensity: f64,
    },
}

fn train(config: &Path, resume: Option<&Path>) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    for (k, v) in cfg.to_pairs() {
        info!("config {k} = {v}");
    }
    let mut trainer = match resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            let t = Trainer::resume(cfg, &ckpt)?;
            info!(
                "resuming from {} at iteration {}",
                path.display(),
                t.state.iteration
            );
            t
        }
        None => Trainer::new(cfg)?,
    };
    trainer.run()?;
    info!("wrote {}", trainer.config.output_dir.display());
    Ok(())
}

/// Channel mean of a `1 x C x H x W` feature tensor as a `1 x H x W` map.
fn channel_mean(t: &Tensor<f32>) -> Result<Tensor<f32>> {
    let (_, c, h, w) = t.dims4()?;
    let hw = h * w;
    let data = t.data();
    Tensor::new(
        [1, h, w],
        (0..hw)
            .map(|p| (0..c).map(|ch| data[ch * hw + p]).sum::<f32>() / c as f32)
            .collect(),
    )
}

fn dump_features(dir: &Path, features: &[(Tensor<f32>, Option<Tensor<f32>>)]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut note = String::from(
        "# channel-mean feature maps; detail maps shown as 0.5 + x/2, structure maps as x, both clamped to [0, 1]\n",
    );
    for (t, (detail, structure)) in features.iter().enumerate() {
        let maps = [("detail", Some(detail)), ("structure", structure.as_ref())];
        for (branch, map) in maps {
            let Some(map) = map else { continue };
            let mean = channel_mean(map)?;
            let (lo, hi) = mean
                .data()
                .iter()
                .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| {
                    (a.min(v), b.max(v))
                });
            let name = format!("stage{}_{branch}.png", t + 1);
            let shown = if branch == "detail" {
                signed_to_display(&mean)
            } else {
                mean
            };
            save_image(&shown, &dir.join(&name))?;
            let _ = writeln!(note, "{name} min={lo} max={hi}");
        }
    }
    write_atomic(&dir.join("features.txt"), note.as_bytes())
}

fn derain_cmd(model: &Path, input: &Path, output: &Path, dump: Option<&Path>) -> Result<()> {
    let (model, store) = load_model(model)?;
    let image: Tensor<f32> = load_image(input)?;
    if let Some(dir) = dump {
        let p = model.predict(
            &store,
            &image.clone().unsqueeze0(),
            ForwardOptions::default(),
        )?;
        dump_features(dir, &p.features)?;
    }
    let out = derain_image(&model, &store, &image)?;
    save_image(&out, output)
}

fn eval_cmd(model: &Path, manifest: &Path, out: &Path) -> Result<()> {
    let (model, store) = load_model(model)?;
    let manifest = DatasetManifest::load(manifest)?;
    let report = evaluate(&model, &store, &manifest)?;
    write_atomic(out, report.to_csv()?.as_bytes())?;
    println!("{}", report.summary());
    Ok(())
}

fn decompose_cmd(input: &Path, structure: &Path, detail: &Path) -> Result<()> {
    let clean: Tensor<f32> = load_image(input)?;
    let (s, d) = decompose_label(&clean)?;
    save_image(&s, structure)?;
    save_image(&signed_to_display(&d), detail)
}

fn rain_params(angle: f64, density: f64, intensity: f64, seed: u64) -> Result<RainParams> {
    let params = RainParams {
        angle_degrees: angle,
        density,
        intensity,
        seed,
        ..Default::default()
    };
    params
        .validate()
        .map_err(|e| Error::Config(e.to_string()))?;
    Ok(params)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, resume } => train(&config, resume.as_deref()),
        Command::Derain {
            model,
            input,
            output,
            dump_features,
        } => derain_cmd(&model, &input, &output, dump_features.as_deref()),
        Command::Eval {
            model,
            manifest,
            out,
        } => eval_cmd(&model, &manifest, &out),
        Command::Decompose {
            input,
            structure,
            detail,
        } => decompose_cmd(&input, &structure, &detail),
        Command::Rainfall {
            input,
            angle,
            density,
            intensity,
            seed,
            output,
        } => {
            let params = rain_params(angle, density, intensity, seed)?;
            let clean: Tensor<f32> = load_image(&input)?;
            save_image(&synthesize_rain(&clean, &params)?, &output)
        }
        Command::Toyset {
            dir,
            count,
            size,
            seed,
            angle,
            density,
            intensity,
        } => {
            let params = rain_params(angle, density, intensity, 0)?;
            let manifest = write_toy_dataset(&dir, count, size, seed, &params)?;
            info!("wrote {} pairs to {}", manifest.len(), dir.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            e.exit()
        }
        Err(e) => {
            // clap only appends usage for some error kinds; every usage error gets it here
            let rendered = e.render().to_string();
            eprint!("{rendered}");
            if !rendered.contains("Usage:") {
                eprintln!("\n{}", Cli::command().render_usage());
            }
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
