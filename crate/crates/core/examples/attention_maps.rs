//! Class scores and attention maps of a duet frame, dumped per class as
//! SPEC1 grids next to the frame itself.
//!
//! cargo run --release --example attention_maps -- /tmp/attention desk.ckpt
//!
//! Without a checkpoint a short model is trained first.

use std::path::PathBuf;

use avsep::vision::sigmoid;
use avsep::{generate_clips, Model, Result, TrainConfig};
use avsep_dsp::io::save_spec1;
use avsep_dsp::Grid;
use avsep_tensor::{Graph, Mode};

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "attention".into()));
    let ckpt = args.next();
    let cfg = TrainConfig { steps: 200, ..TrainConfig::default() };
    let clips = generate_clips(&cfg.audio(), cfg.arch().frame_size, cfg.classes, &cfg.corpus, cfg.seed)?;
    let model = match ckpt {
        Some(p) => {
            let mut m = Model::<f32>::new(&cfg.arch(), cfg.seed)?;
            m.load(p.as_ref())?;
            m
        }
        None => avsep::train(&cfg, &clips, |_| {})?.0,
    };
    let clip = clips.iter().find(|c| c.is_duet()).expect("a duet clip");

    let size = cfg.arch().frame_size;
    let mut g = Graph::with_params(&model.store, Mode::Eval, 0);
    let frame = avsep_tensor::Array::new(vec![1, 3, size, size], clip.frame.to_chw().iter().map(|&v| v as f32).collect())?;
    let x = g.input(frame)?;
    let v = model.vision.forward(&mut g, x)?;
    let scores: Vec<f64> = g.value(v.scores).data().iter().map(|&s| sigmoid(s as f64)).collect();
    println!("frame {} shows classes {:?}; probabilities {scores:.3?}", clip.id, clip.classes);

    std::fs::create_dir_all(&out)?;
    clip.frame.save_ppm(out.join("frame.ppm"))?;
    let side = cfg.arch().feature_size();
    let maps = g.value(v.combined).data();
    for c in 0..cfg.classes {
        let plane: Vec<f64> = maps[c * side * side..(c + 1) * side * side].iter().map(|&m| m as f64).collect();
        let peak = plane.iter().copied().fold(f64::MIN, f64::max);
        save_spec1(out.join(format!("class{c}_attention.spec1")), &Grid::new(side, side, plane)?, None)?;
        println!("class {c}: attention peak {peak:.3}");
    }
    Ok(())
}
