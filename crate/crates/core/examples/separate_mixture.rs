//! Separates a two-clip test mixture with a trained model, conditioning on
//! each frame in turn, and writes the estimates as WAV files.
//!
//! cargo run --release --example separate_mixture -- desk.ckpt /tmp/sep
//!
//! Without a checkpoint a short model is trained first.

use std::path::PathBuf;

use avsep::mixing::mix_pair;
use avsep::{generate_clips, separate, Frontend, Model, Result, Split, TrainConfig};
use avsep_dsp::io::write_wav;
use avsep_dsp::BssProjector;

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let ckpt = args.next().filter(|p| p != "-");
    let out = PathBuf::from(args.next().unwrap_or_else(|| "separated".into()));
    let cfg = TrainConfig { steps: 300, ..TrainConfig::default() };
    let clips = generate_clips(&cfg.audio(), cfg.arch().frame_size, cfg.classes, &cfg.corpus, cfg.seed)?;
    let model = match ckpt {
        Some(p) => {
            let mut m = Model::<f32>::new(&cfg.arch(), cfg.seed)?;
            m.load(p.as_ref())?;
            m
        }
        None => avsep::train(&cfg, &clips, |_| {})?.0,
    };

    let test: Vec<usize> = (0..clips.len()).filter(|&i| clips[i].split == Split::Test && !clips[i].is_duet()).collect();
    let a = test[0];
    let b = *test.iter().find(|&&i| clips[i].classes != clips[a].classes).expect("two classes in the test split");
    let item = mix_pair(&clips, a, b);
    let fe = Frontend::new(&cfg.audio())?;
    let proj = BssProjector::new(&item.references(), cfg.filter_len)?;
    std::fs::create_dir_all(&out)?;
    write_wav(out.join("mixture.wav"), &item.mixture)?;

    for (slot, &ci) in item.clips.iter().enumerate() {
        let sep = separate(&model, &fe, &clips[ci].frame, &item.mixture, cfg.tau)?;
        let probs: Vec<String> = sep.probabilities.iter().map(|p| format!("{p:.2}")).collect();
        println!("frame {} (class {:?}): probabilities [{}]", clips[ci].id, clips[ci].classes, probs.join(", "));
        for s in &sep.sources {
            let path = out.join(format!("frame{slot}_class{}.wav", s.class));
            write_wav(&path, &s.waveform)?;
            let target = item.sources.iter().position(|src| src.class == s.class);
            match target {
                Some(j) => {
                    let m = proj.score(&s.waveform.samples, j)?;
                    println!("  class {} -> {}  SDR {:.2}  SIR {:.2}  SAR {:.2}", s.class, path.display(), m.sdr, m.sir, m.sar);
                }
                None => println!("  class {} -> {}  (false alarm)", s.class, path.display()),
            }
        }
    }
    Ok(())
}
