use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use latentmix::data::{generate_synthetic, read_image, write_dataset, Split, SyntheticDomainSpec};
use latentmix::harness::eval::{desk_phi, Metric};
use latentmix::harness::train::save_checkpoint;
use latentmix::harness::{
    load_dataset, render_interpolation_grid, run_interpolation_eval, train_loop, EvalParams, Setting, TrainConfig,
    TrainData, TrainState,
};
use latentmix::networks::Checkpoint;
use latentmix::perceptual::{ConvBackbone, PerceptualEmbedder};

#[derive(Parser)]
#[command(name = "latentmix", version, about = "Style-space regularized multi-domain image translation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoints and loss logs to a directory.
    Train {
        /// key = value configuration; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        setting: Option<Setting>,
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the configured number of steps.
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint with the interpolation protocol.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "fid,lpips,ppl,p2,p2eq")]
        metrics: String,
        #[arg(long, default_value_t = 200)]
        num_sources: usize,
        /// Frames per interpolation path.
        #[arg(long, default_value_t = 20)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Saved feature extractor; trained on the training split when omitted.
        #[arg(long)]
        phi: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render an interpolation grid between the styles of two references.
    Interp {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        ref_a: PathBuf,
        #[arg(long)]
        ref_b: PathBuf,
        #[arg(long, default_value_t = 20)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic multi-domain dataset as PNG files plus a manifest.
    Synth {
        #[arg(long, default_value_t = 2)]
        domains: usize,
        #[arg(long, default_value_t = 2000)]
        per_domain: usize,
        /// Images per domain moved to the test split.
        #[arg(long, default_value_t = 0)]
        test_per_domain: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Train { config, setting, seed, steps, out } => train(config, setting, seed, steps, &out),
        Command::Eval { checkpoint, metrics, num_sources, steps, seed, phi, out } => {
            let params =
                EvalParams { num_sources, steps, seed, metrics: Metric::parse_list(&metrics)?, ..Default::default() };
            eval(&checkpoint, params, phi.as_deref(), &out)
        }
        Command::Interp { checkpoint, source, ref_a, ref_b, steps, out } => {
            interp(&checkpoint, &source, &ref_a, &ref_b, steps, &out)
        }
        Command::Synth { domains, per_domain, test_per_domain, size, seed, out } => {
            let specs = SyntheticDomainSpec::defaults(domains)?;
            let set = generate_synthetic(&specs, per_domain, size, seed)?.with_test_split(test_per_domain)?;
            let manifest = write_dataset(&set.data, &out)?;
            log::info!("wrote {} images to {}", manifest.len(), out.display());
            Ok(())
        }
    }
}

fn train(
    config: Option<PathBuf>,
    setting: Option<Setting>,
    seed: Option<u64>,
    steps: Option<u64>,
    out: &Path,
) -> Result<()> {
    let mut cfg = match config {
        Some(p) => TrainConfig::read(&p).with_context(|| format!("reading {}", p.display()))?,
        None => TrainConfig::default(),
    };
    if let Some(s) = setting {
        cfg.setting = s;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(s) = steps {
        cfg.steps = s;
    }
    cfg.validate()?;
    fs::create_dir_all(out)?;
    cfg.write(&out.join("config.toml"))?;

    let dataset = load_dataset(&cfg)?;
    let (images, labels) = dataset.split(Split::Train);
    if labels.is_empty() {
        bail!("dataset has no training images");
    }
    let data = TrainData::new(images, labels, dataset.manifest.num_domains())?;
    let mut state = TrainState::new(cfg.clone(), data.len())?;
    let mut log = fs::File::create(out.join("losses.tsv"))?;
    let started = std::time::Instant::now();
    let mut write_err = None;
    train_loop(&mut state, &data, cfg.steps, Some(out), &mut |step, record| {
        let fields: Vec<String> = record.iter().map(|(k, v)| format!("{k}={v}")).collect();
        if let Err(e) = writeln!(log, "{step}\t{}", fields.join("\t")) {
            write_err.get_or_insert(e);
        }
        if cfg.log_every > 0 && step % cfg.log_every == 0 {
            let secs = started.elapsed().as_secs_f64();
            log::info!("step {step}/{} ({:.2} s/step) {}", cfg.steps, secs / step as f64, fields.join(" "));
        }
    })?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    save_checkpoint(&state, &out.join("final.safetensors"))?;
    log::info!("finished {} steps in {:.1} s", cfg.steps, started.elapsed().as_secs_f64());
    Ok(())
}

fn eval(checkpoint: &Path, params: EvalParams, phi_path: Option<&Path>, out: &Path) -> Result<()> {
    let ckpt = Checkpoint::read(checkpoint)?;
    let cfg = TrainConfig::from_text(&ckpt.meta).context("checkpoint carries no training configuration")?;
    let models = ckpt.into_models(&cfg.network())?;
    let dataset = load_dataset(&cfg)?;
    let (train_images, train_labels) = dataset.split(Split::Train);
    let m = dataset.manifest.num_domains();
    let phi = match phi_path {
        Some(p) => {
            let mut backbone = ConvBackbone::desk_default(cfg.channels, m as i64, 0)?;
            backbone.load(p)?;
            PerceptualEmbedder::uniform(Box::new(backbone))?
        }
        None => {
            let (phi, acc) = desk_phi(&train_images, &train_labels, m, params.seed)?;
            log::info!("feature extractor trained to {:.1}% domain accuracy", 100.0 * acc);
            phi
        }
    };
    let mut test = dataset.by_domain(Split::Test);
    if test.iter().any(|t| t.size()[0] == 0) {
        log::warn!("dataset has no test split; evaluating on training images");
        test = dataset.by_domain(Split::Train);
    }
    let report =
        run_interpolation_eval(models.eval_translator(), &test, &phi, &checkpoint.display().to_string(), &params)?;
    report.write(out)?;
    print!("{report}");
    Ok(())
}

fn interp(checkpoint: &Path, source: &Path, ref_a: &Path, ref_b: &Path, steps: usize, out: &Path) -> Result<()> {
    let ckpt = Checkpoint::read(checkpoint)?;
    let cfg = TrainConfig::from_text(&ckpt.meta).context("checkpoint carries no training configuration")?;
    let models = ckpt.into_models(&cfg.network())?;
    let size = cfg.image_size as u32;
    let grid = render_interpolation_grid(
        models.eval_translator(),
        &read_image(source, size)?,
        &read_image(ref_a, size)?,
        &read_image(ref_b, size)?,
        steps,
        out,
    )?;
    log::info!("wrote {} frames to {}", grid.frames.len(), out.display());
    Ok(())
}
