//! Subcommand front end binding the library: datagen, train, eval, rollout,
//! ablate, bench.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric
//! failure. Every run dumps its effective config and SHA-256 hash next to
//! the outputs. BCAT_THREADS caps worker threads (0 = auto).

mod config;

use anyhow::{anyhow, bail, Context, Result};
use bcat_core::dataio::{read_trajectory, DataError};
use bcat_core::datagen::{make_dataset, Family, GenError};
use bcat_core::eval::{ablate, ablation_csv, evaluate, vit_direct_predict, AblationCase};
use bcat_core::model::{
    load_checkpoint, MaskKind, ModelError, ModelParams, Variant,
};
use bcat_core::numerics::NumericsError;
use bcat_core::rollout::{
    measure_resources, rollout_next_frame, rollout_next_token, write_rollout_dump, RolloutError,
    RolloutMode, RolloutReport,
};
use bcat_core::training::{train, Dataset, TrainError};
use clap::{Parser, Subcommand};
use config::RunConfig;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "bcat", version, about = "Block-causal transformer for next-frame PDE prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON run configuration; command-line flags win over file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed override for generation, init, and training.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory for all artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trajectory dataset plus manifest.
    Datagen {
        /// PDE family: adv_diff | linear_swe | ins_vorticity.
        #[arg(long)]
        family: Option<String>,
        /// Number of trajectories.
        #[arg(long, default_value_t = 16)]
        n: usize,
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        viscosity: Option<f64>,
    },
    /// Train a model on a generated dataset.
    Train {
        /// Training manifest (overrides paths.data).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        /// bcat | next_token | time_then_space | vit_direct.
        #[arg(long)]
        variant: Option<String>,
        #[arg(long = "patch-size")]
        patch_size: Option<usize>,
        /// block_causal | causal | full (defaults to the variant's canonical mask).
        #[arg(long)]
        mask: Option<String>,
    },
    /// Score a checkpoint on held-out manifests.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated manifest paths, one per family.
        #[arg(long, value_delimiter = ',')]
        data: Vec<PathBuf>,
    },
    /// Predict future frames from an input trajectory file.
    Rollout {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Input trajectory (only the model's input window is consumed).
        #[arg(long)]
        input: Option<PathBuf>,
        /// Frames to generate (default: the model horizon).
        #[arg(long)]
        frames: Option<usize>,
        /// Disable KV caching.
        #[arg(long)]
        no_cache: bool,
    },
    /// Train and score architecture variants under one shared budget.
    Ablate {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long = "test-data", value_delimiter = ',')]
        test_data: Vec<PathBuf>,
        /// Axes to sweep: alignment,mask,activation,qk_norm,patch,variant.
        #[arg(long, value_delimiter = ',', default_value = "alignment,mask")]
        axes: Vec<String>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Measure rollout wall time and call counts (next-frame vs next-token).
    Bench {
        /// Checkpoint to time (default: randomly initialized model config).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        repeats: usize,
        #[arg(long, default_value_t = 5)]
        warmup: usize,
        #[arg(long)]
        frames: Option<usize>,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints its own usage text; help/version requests are success
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    configure_threads();
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(exit_code(&e));
        }
    }
}

fn configure_threads() {
    if let Ok(v) = std::env::var("BCAT_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

/// 3 for numeric failures, 2 for data problems, 1 for everything else.
fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(t) = cause.downcast_ref::<TrainError>() {
            if matches!(t, TrainError::NumericFailure { .. } | TrainError::NonFiniteGradient { .. }) {
                return 3;
            }
        }
        if let Some(r) = cause.downcast_ref::<RolloutError>() {
            if matches!(r, RolloutError::NonFinite { .. }) {
                return 3;
            }
        }
        if let Some(n) = cause.downcast_ref::<NumericsError>() {
            if matches!(n, NumericsError::NonFinite { .. }) {
                return 3;
            }
        }
        if let Some(g) = cause.downcast_ref::<GenError>() {
            if matches!(g, GenError::Unstable(_)) {
                return 3;
            }
        }
    }
    for cause in err.chain() {
        if cause.downcast_ref::<DataError>().is_some() {
            return 2;
        }
        if let Some(m) = cause.downcast_ref::<ModelError>() {
            if matches!(m, ModelError::Checkpoint { .. } | ModelError::Io { .. }) {
                return 2;
            }
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    1
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
        cfg.datagen.seed = seed;
    }
    Ok(cfg)
}

fn parse_family(s: &str) -> Result<Family> {
    Family::parse(s).ok_or_else(|| {
        anyhow!("--family must be one of adv_diff, linear_swe, ins_vorticity (got {s})")
    })
}

fn parse_variant(s: &str) -> Result<Variant> {
    match s {
        "bcat" => Ok(Variant::Bcat),
        "next_token" => Ok(Variant::NextToken),
        "time_then_space" => Ok(Variant::TimeThenSpace),
        "vit_direct" => Ok(Variant::VitDirect),
        _ => bail!("--variant must be one of bcat, next_token, time_then_space, vit_direct (got {s})"),
    }
}

fn parse_mask(s: &str) -> Result<MaskKind> {
    match s {
        "block_causal" => Ok(MaskKind::BlockCausal),
        "causal" => Ok(MaskKind::Causal),
        "full" => Ok(MaskKind::Full),
        _ => bail!("--mask must be one of block_causal, causal, full (got {s})"),
    }
}

fn canonical_mask(variant: Variant) -> MaskKind {
    match variant {
        Variant::Bcat | Variant::TimeThenSpace => MaskKind::BlockCausal,
        Variant::NextToken => MaskKind::Causal,
        Variant::VitDirect => MaskKind::Full,
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    let out = cli.out.clone();

    match cli.command {
        Command::Datagen { ref family, n, resolution, frames, dt, viscosity } => {
            if let Some(f) = family {
                cfg.datagen.family = parse_family(f)?;
            }
            if let Some(r) = resolution {
                cfg.datagen.resolution = r;
            }
            if let Some(t) = frames {
                cfg.datagen.n_frames = t;
            }
            if let Some(v) = dt {
                cfg.datagen.dt = v;
            }
            if let Some(v) = viscosity {
                cfg.datagen.viscosity = v;
            }
            cfg.datagen.validate()?;
            let hash = cfg.dump(&out, "datagen")?;
            let manifest = make_dataset(&cfg.datagen, n, cfg.datagen.seed, &out)?;
            println!(
                "wrote {} {} trajectories under {} (config {})",
                manifest.files.len(),
                manifest.family,
                out.display(),
                &hash[..12]
            );
        }

        Command::Train { ref data, steps, batch, ref variant, patch_size, ref mask } => {
            if let Some(v) = variant {
                let v = parse_variant(v)?;
                cfg.model.variant = v;
                cfg.model.mask_kind = canonical_mask(v);
            }
            if let Some(m) = mask {
                cfg.model.mask_kind = parse_mask(m)?;
            }
            if let Some(p) = patch_size {
                cfg.model.patch_size = p;
            }
            if let Some(s) = steps {
                cfg.train.total_steps = s;
            }
            if let Some(b) = batch {
                cfg.train.batch_size = b;
            }
            let manifest = data
                .clone()
                .or(cfg.paths.data.clone())
                .ok_or_else(|| anyhow!("--data (or paths.data in the config) is required"))?;
            cfg.model.validate()?;
            cfg.train.validate()?;
            let hash = cfg.dump(&out, "train")?;
            let dataset = Dataset::load(&manifest, &cfg.model)?;
            let result = train(&cfg.model, &cfg.train, &dataset, &out)?;
            println!(
                "trained {} steps on {} trajectories: final loss {:.6}, checkpoint {} (config {})",
                cfg.train.total_steps,
                dataset.examples.len(),
                result.final_loss,
                result.checkpoint_path.display(),
                &hash[..12]
            );
        }

        Command::Eval { ref checkpoint, ref data } => {
            let ckpt = checkpoint
                .clone()
                .or(cfg.paths.checkpoint.clone())
                .ok_or_else(|| anyhow!("--checkpoint is required"))?;
            let manifests: Vec<PathBuf> = if data.is_empty() {
                cfg.paths.test_data.clone()
            } else {
                data.clone()
            };
            if manifests.is_empty() {
                bail!("--data with at least one manifest is required");
            }
            let hash = cfg.dump(&out, "eval")?;
            let params = load_checkpoint(&ckpt)?;
            let report = evaluate(&params, &manifests, &cfg.eval)?;
            std::fs::write(out.join("report.csv"), report.to_csv())
                .context("cannot write report.csv")?;
            let summary = serde_json::json!({
                "config_hash": hash,
                "grand_average": report.grand_average,
                "families": report.families,
            });
            std::fs::write(
                out.join("summary.json"),
                serde_json::to_string_pretty(&summary).expect("summary serializes"),
            )
            .context("cannot write summary.json")?;
            for f in &report.families {
                println!("{:>16}: rel_l2 {:.6} over {} trajectories", f.family, f.mean_rel_l2, f.n_trajectories);
            }
            println!("grand average: {:.6} (config {})", report.grand_average, &hash[..12]);
        }

        Command::Rollout { ref checkpoint, ref input, frames, no_cache } => {
            let ckpt = checkpoint
                .clone()
                .or(cfg.paths.checkpoint.clone())
                .ok_or_else(|| anyhow!("--checkpoint is required"))?;
            let input_path = input
                .clone()
                .or(cfg.paths.input.clone())
                .ok_or_else(|| anyhow!("--input trajectory file is required"))?;
            let hash = cfg.dump(&out, "rollout")?;
            let params = load_checkpoint(&ckpt)?;
            let traj = read_trajectory(&input_path)?;
            let t0 = params.config.t_input.min(traj.t_total);
            let window = traj.slice_frames(0, t0)?;
            let horizon = frames.unwrap_or(params.config.t_horizon);
            let report: RolloutReport = match params.config.variant {
                Variant::Bcat | Variant::TimeThenSpace => {
                    rollout_next_frame(&params, &window, horizon, !no_cache)?
                }
                Variant::NextToken => rollout_next_token(&params, &window, horizon, !no_cache)?,
                Variant::VitDirect => vit_direct_predict(&params, &window, horizon)?,
            };
            let base = out.join("rollout");
            write_rollout_dump(&report, &window, &base, &hash)?;
            println!(
                "generated {} frames in {} model calls, {:.2} ms (dump {}.btrj, config {})",
                report.t_frames,
                report.model_calls,
                report.wall_time_ms,
                base.display(),
                &hash[..12]
            );
        }

        Command::Ablate { ref data, ref test_data, ref axes, steps } => {
            let manifest = data
                .clone()
                .or(cfg.paths.data.clone())
                .ok_or_else(|| anyhow!("--data is required"))?;
            let tests: Vec<PathBuf> = if test_data.is_empty() {
                cfg.paths.test_data.clone()
            } else {
                test_data.clone()
            };
            if tests.is_empty() {
                bail!("--test-data with at least one manifest is required");
            }
            if let Some(s) = steps {
                cfg.train.total_steps = s;
            }
            let cases = expand_axes(axes, &cfg)?;
            let hash = cfg.dump(&out, "ablate")?;
            println!("running {} ablation cases x {} steps", cases.len(), cfg.train.total_steps);
            let rows = ablate(&cases, &cfg.model, &cfg.train, &manifest, &tests, &cfg.eval, &out)?;
            let csv = ablation_csv(&rows);
            std::fs::write(out.join("ablation.csv"), &csv).context("cannot write ablation.csv")?;
            print!("{csv}");
            println!("(config {})", &hash[..12]);
        }

        Command::Bench { ref checkpoint, repeats, warmup, frames } => {
            if repeats == 0 {
                bail!("--repeats must be at least 1");
            }
            let hash = cfg.dump(&out, "bench")?;
            let mut params = match checkpoint {
                Some(p) => load_checkpoint(p)?,
                None => ModelParams::init(&cfg.model, cfg.train.seed)?,
            };
            if !matches!(params.config.variant, Variant::Bcat | Variant::NextToken) {
                bail!(
                    "bench compares next-frame and next-token rollouts; got a {} model",
                    params.config.variant.as_str()
                );
            }
            // tie the same weights to both alignments
            let mut frame_params = params.clone();
            frame_params.config.variant = Variant::Bcat;
            frame_params.config.mask_kind = MaskKind::BlockCausal;
            params.config.variant = Variant::NextToken;
            params.config.mask_kind = MaskKind::Causal;
            let token_params = params;

            let mut gen_spec = cfg.datagen.clone();
            gen_spec.resolution = frame_params.config.resolution;
            gen_spec.n_frames = frame_params.config.t_input.max(2);
            let input = bcat_core::datagen::generate(&gen_spec)?;
            let window = input.slice_frames(0, frame_params.config.t_input.min(input.t_total))?;
            let horizon = frames.unwrap_or(frame_params.config.t_horizon);

            let nf = measure_resources(
                &frame_params,
                &window,
                horizon,
                repeats,
                warmup,
                RolloutMode::NextFrame { use_cache: true },
            )?;
            let nt = measure_resources(
                &token_params,
                &window,
                horizon,
                repeats,
                warmup,
                RolloutMode::NextToken { use_cache: true },
            )?;
            let ratio = nt.mean_ms / nf.mean_ms;
            println!("mode        calls   mean_ms   median_ms   peak_bytes");
            println!(
                "next-frame  {:>5}   {:>8.2}  {:>8.2}   {:>10}",
                nf.model_calls, nf.mean_ms, nf.median_ms, nf.peak_scratch_bytes
            );
            println!(
                "next-token  {:>5}   {:>8.2}  {:>8.2}   {:>10}",
                nt.model_calls, nt.mean_ms, nt.median_ms, nt.peak_scratch_bytes
            );
            println!("wall-time ratio next_token/next_frame: {ratio:.1}x (config {})", &hash[..12]);
            let bench = serde_json::json!({
                "config_hash": hash,
                "repeats": repeats,
                "warmup": warmup,
                "horizon": horizon,
                "next_frame": {
                    "calls": nf.model_calls, "mean_ms": nf.mean_ms, "median_ms": nf.median_ms,
                    "peak_scratch_bytes": nf.peak_scratch_bytes, "deterministic": nf.outputs_identical,
                },
                "next_token": {
                    "calls": nt.model_calls, "mean_ms": nt.mean_ms, "median_ms": nt.median_ms,
                    "peak_scratch_bytes": nt.peak_scratch_bytes, "deterministic": nt.outputs_identical,
                },
                "ratio": ratio,
            });
            std::fs::write(
                out.join("bench.json"),
                serde_json::to_string_pretty(&bench).expect("bench serializes"),
            )
            .context("cannot write bench.json")?;
        }
    }
    Ok(())
}

/// Expand named ablation axes into concrete cases around the base config.
fn expand_axes(axes: &[String], cfg: &RunConfig) -> Result<Vec<AblationCase>> {
    let base = &cfg.model;
    let mut cases: Vec<AblationCase> = vec![AblationCase::from_base("base", base)];
    for axis in axes {
        match axis.as_str() {
            "alignment" => {
                let mut c = AblationCase::from_base("next_token", base);
                c.variant = Variant::NextToken;
                c.mask_kind = MaskKind::Causal;
                cases.push(c);
            }
            "mask" => {
                let mut c = AblationCase::from_base("causal_mask", base);
                c.mask_kind = MaskKind::Causal;
                cases.push(c);
            }
            "activation" => {
                let mut c = AblationCase::from_base("gelu", base);
                c.activation = match base.activation {
                    bcat_core::model::Activation::Swiglu => bcat_core::model::Activation::Gelu,
                    bcat_core::model::Activation::Gelu => bcat_core::model::Activation::Swiglu,
                };
                cases.push(c);
            }
            "qk_norm" => {
                let mut c = AblationCase::from_base("qk_norm_off", base);
                c.qk_norm = !base.qk_norm;
                cases.push(c);
            }
            "patch" => {
                for p in [base.resolution / 8, base.resolution / 4, base.resolution / 2] {
                    if p == 0 || base.resolution % p != 0 || p == base.patch_size {
                        continue;
                    }
                    let mut c = AblationCase::from_base(&format!("patch_{p}"), base);
                    c.patch_size = p;
                    cases.push(c);
                }
            }
            "variant" => {
                let mut tts = AblationCase::from_base("time_then_space", base);
                tts.variant = Variant::TimeThenSpace;
                tts.mask_kind = MaskKind::BlockCausal;
                cases.push(tts);
                let mut vit = AblationCase::from_base("vit_direct", base);
                vit.variant = Variant::VitDirect;
                vit.mask_kind = MaskKind::Full;
                cases.push(vit);
            }
            other => bail!(
                "unknown ablation axis {other}; expected alignment, mask, activation, qk_norm, patch, variant"
            ),
        }
    }
    let mut seen = std::collections::HashSet::new();
    cases.retain(|c| seen.insert(c.name.clone()));
    Ok(cases)
}
