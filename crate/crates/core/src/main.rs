use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use avsep::checks::{gradient_suite, GRAD_TOL};
use avsep::eval::{
    classification_csv, evaluate_oracle, separate, summary_csv, OracleMask, SeparationStatus, TAU_SWEEP,
};
use avsep::{
    evaluate_classification, evaluate_separation, generate_clips, load_corpus, write_corpus, AvError, Clip, EvalSet,
    Frontend, Image, MaskKind, Model, Preset, Result, Split, TrainConfig, Trainer,
};
use avsep_dsp::io::{read_wav, save_spec1, write_wav};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "avsep", about = "Audio-visual sound source detection and separation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus.
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Replace an existing corpus directory.
        #[arg(long)]
        overwrite: bool,
    },
    /// Train a model and write its checkpoint and loss log.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Separate one clip into WAV stems and SPEC1 mask dumps.
    Separate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// PNG or PPM frame.
        #[arg(long)]
        frame: PathBuf,
        /// Mixture WAV at the preset sample rate and length.
        #[arg(long)]
        mixture: PathBuf,
    },
    /// Separation metrics of one or more checkpoints (`name=path` or `path`).
    EvalSep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long = "model", value_name = "NAME=PATH")]
        models: Vec<String>,
    },
    /// Classification accuracy over the threshold sweep.
    EvalCls {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long = "model", value_name = "NAME=PATH")]
        models: Vec<String>,
    },
    /// Ideal-mask upper bounds against the mixture baseline.
    Oracle {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Finite-difference gradient suite in 64-bit precision.
    Gradcheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

/// A JSON config file plus per-key overrides. Precedence: flag, then
/// `MBS_SEED` (seed only), then file, then defaults.
#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<Preset>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    mask: Option<MaskKind>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    duet_fraction: Option<f64>,
    /// Global gradient-norm clip; 0 disables clipping.
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    filter_len: Option<usize>,
    #[arg(long)]
    eval_mixtures: Option<usize>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut c = match &self.config {
            Some(p) => TrainConfig::from_json(&fs::read_to_string(p)?)?,
            None => TrainConfig::default(),
        };
        if let Ok(s) = std::env::var("MBS_SEED") {
            c.seed = s.trim().parse().map_err(|_| AvError::Config(format!("MBS_SEED must be an integer, got `{s}`")))?;
        }
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = &self.$f { c.$f = v.clone(); })* };
        }
        set!(preset, classes, lr, momentum, batch_size, steps, lambda, tau, mask, seed, duet_fraction, filter_len, eval_mixtures);
        if self.k.is_some() {
            c.k = self.k;
        }
        if self.depth.is_some() {
            c.depth = self.depth;
        }
        if let Some(v) = self.clip_norm {
            c.clip_norm = (v > 0.0).then_some(v);
        }
        for (dst, src) in [(&mut c.data_dir, &self.data_dir), (&mut c.checkpoint, &self.checkpoint), (&mut c.out_dir, &self.out_dir)] {
            if src.is_some() {
                *dst = src.clone();
            }
        }
        c.validate()?;
        Ok(c)
    }
}

fn out_dir(cfg: &TrainConfig) -> Result<PathBuf> {
    let dir = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// The corpus on disk when `data_dir` holds one, otherwise generated in memory.
fn clips(cfg: &TrainConfig) -> Result<Vec<Clip>> {
    match &cfg.data_dir {
        Some(d) if d.join(avsep::corpus::MANIFEST).exists() => load_corpus(d),
        _ => generate_clips(&cfg.audio(), cfg.arch().frame_size, cfg.classes, &cfg.corpus, cfg.seed),
    }
}

fn load_model(cfg: &TrainConfig, path: &Path) -> Result<Model<f32>> {
    let mut m = Model::new(&cfg.arch(), cfg.seed)?;
    m.load(path)?;
    Ok(m)
}

fn checkpoint_path(cfg: &TrainConfig) -> PathBuf {
    cfg.checkpoint.clone().unwrap_or_else(|| PathBuf::from("model.ckpt"))
}

fn parse_models(cfg: &TrainConfig, specs: &[String]) -> Vec<(String, PathBuf)> {
    if specs.is_empty() {
        return vec![(cfg.mask.name().to_string(), checkpoint_path(cfg))];
    }
    specs
        .iter()
        .map(|s| match s.split_once('=') {
            Some((n, p)) => (n.to_string(), PathBuf::from(p)),
            None => {
                let p = PathBuf::from(s);
                (p.file_stem().map_or(s.clone(), |f| f.to_string_lossy().into_owned()), p)
            }
        })
        .collect()
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { cfg, overwrite } => {
            let cfg = cfg.resolve()?;
            let dir = cfg.data_dir.clone().unwrap_or_else(|| PathBuf::from("data"));
            let clips = generate_clips(&cfg.audio(), cfg.arch().frame_size, cfg.classes, &cfg.corpus, cfg.seed)?;
            write_corpus(&dir, &clips, overwrite)?;
            write(&dir.join("config.json"), &cfg.to_json())?;
            println!("{} clips in {}", clips.len(), dir.display());
        }
        Command::Train { cfg } => {
            let cfg = cfg.resolve()?;
            let clips = clips(&cfg)?;
            let mut trainer = Trainer::new(&cfg, &clips)?;
            let mut log = String::from("step,c_loss1,c_loss2,sep_loss,total,grad_norm\n");
            let every = (cfg.steps / 20).max(1);
            trainer.run(|r| {
                log.push_str(&format!(
                    "{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                    r.step, r.c_loss1, r.c_loss2, r.sep_loss, r.total, r.grad_norm
                ));
                if r.step % every == 0 || r.step + 1 == cfg.steps {
                    eprintln!(
                        "step {:>6}  c1 {:.4}  c2 {:.4}  sep {:.4}  total {:.4}",
                        r.step, r.c_loss1, r.c_loss2, r.sep_loss, r.total
                    );
                }
            })?;
            let ckpt = checkpoint_path(&cfg);
            trainer.model.save(&ckpt)?;
            println!("wrote {}", ckpt.display());
            write(&out_dir(&cfg)?.join("train_log.csv"), &log)?;
        }
        Command::Separate { cfg, frame, mixture } => {
            let cfg = cfg.resolve()?;
            let model = load_model(&cfg, &checkpoint_path(&cfg))?;
            let frontend = Frontend::new(&cfg.audio())?;
            let image = Image::load(&frame)?;
            let mix = read_wav(&mixture)?;
            let sep = separate(&model, &frontend, &image, &mix, cfg.tau)?;
            let dir = out_dir(&cfg)?;
            let probs: Vec<String> = sep.probabilities.iter().map(|p| format!("{p:.4}")).collect();
            println!("class probabilities: {}", probs.join(" "));
            if sep.status == SeparationStatus::NothingDetected {
                eprintln!("warning: no class reached tau = {}, nothing separated", cfg.tau);
            }
            for s in &sep.sources {
                let wav = dir.join(format!("class{}.wav", s.class));
                write_wav(&wav, &s.waveform)?;
                save_spec1(&dir.join(format!("class{}_mask.spec1", s.class)), &s.linear_mask, None)?;
                println!("class {} (p = {:.3}) -> {}", s.class, s.probability, wav.display());
            }
        }
        Command::EvalSep { cfg, models } => {
            let cfg = cfg.resolve()?;
            let clips = clips(&cfg)?;
            let frontend = Frontend::new(&cfg.audio())?;
            let set = EvalSet::from_config(&cfg, &clips, &frontend)?;
            let dir = out_dir(&cfg)?;
            let mut reports = Vec::new();
            for (name, path) in parse_models(&cfg, &models) {
                let model = load_model(&cfg, &path)?;
                let rep = evaluate_separation(&model, &name, &frontend, &clips, &set, cfg.tau)?;
                for m in [&rep.protocol, &rep.deployment, &rep.all_classes] {
                    write(&dir.join(format!("sep_{name}_{}.csv", m.mode.name())), &m.to_csv())?;
                }
                if rep.protocol.mean().sir < rep.all_classes.mean().sir {
                    eprintln!("warning: {name}: protocol mean SIR is below the all-classes mode");
                }
                reports.push(rep);
            }
            write(&dir.join("sep_baseline.csv"), &set.baseline.to_csv())?;
            let summary = summary_csv(&reports);
            print!("{summary}");
            write(&dir.join("sep_summary.csv"), &summary)?;
        }
        Command::EvalCls { cfg, models } => {
            let cfg = cfg.resolve()?;
            let clips = clips(&cfg)?;
            let mut rows = Vec::new();
            for (name, path) in parse_models(&cfg, &models) {
                let model = load_model(&cfg, &path)?;
                rows.push((name, evaluate_classification(&model, &clips, Split::Test, &TAU_SWEEP)?));
            }
            let csv = classification_csv(&TAU_SWEEP, &rows);
            print!("{csv}");
            write(&out_dir(&cfg)?.join("classification.csv"), &csv)?;
        }
        Command::Oracle { cfg } => {
            let cfg = cfg.resolve()?;
            let clips = clips(&cfg)?;
            let frontend = Frontend::new(&cfg.audio())?;
            let set = EvalSet::from_config(&cfg, &clips, &frontend)?;
            let dir = out_dir(&cfg)?;
            let base = set.baseline.mean();
            let mut summary = String::from("mask,SDR,SIR,SAR,SDR_over_baseline\n");
            summary.push_str(&format!("baseline,{:.4},{:.4},{:.4},0.0000\n", base.sdr, base.sir, base.sar));
            for kind in OracleMask::ALL {
                let rep = evaluate_oracle(&frontend, &clips, &set, kind)?;
                let m = rep.mean();
                summary.push_str(&format!("{},{:.4},{:.4},{:.4},{:.4}\n", kind.name(), m.sdr, m.sir, m.sar, m.sdr - base.sdr));
                write(&dir.join(format!("oracle_{}.csv", kind.name())), &rep.to_csv())?;
            }
            print!("{summary}");
            write(&dir.join("oracle_summary.csv"), &summary)?;
        }
        Command::Gradcheck { seed } => {
            let mut failed = 0;
            for r in gradient_suite(seed)? {
                let ok = r.max_rel_err < GRAD_TOL;
                failed += usize::from(!ok);
                println!("{:<4} {:<36} max rel err {:.3e}", if ok { "ok" } else { "FAIL" }, r.name, r.max_rel_err);
            }
            if failed > 0 {
                return Err(AvError::Config(format!("{failed} gradient checks exceeded {GRAD_TOL:e}")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
