//! Generates a small synthetic corpus and writes it to disk.
//!
//! cargo run --release --example synth_corpus -- /tmp/avsep-data

use avsep::config::CorpusCounts;
use avsep::corpus::{class_specs, load_corpus};
use avsep::{generate_clips, write_corpus, Result, Split, TrainConfig};

fn main() -> Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "avsep-data".into());
    let cfg = TrainConfig { corpus: CorpusCounts { train: 10, val: 2, test: 2, duets: 10 }, ..TrainConfig::default() };
    let clips = generate_clips(&cfg.audio(), cfg.arch().frame_size, cfg.classes, &cfg.corpus, cfg.seed)?;
    write_corpus(dir.as_ref(), &clips, true)?;

    for spec in class_specs(cfg.classes)? {
        println!("class {} {:<8} f0 {:>4.0}-{:<4.0} Hz  {:?} {:?}", spec.id, spec.name, spec.f0.0, spec.f0.1, spec.shape, spec.envelope);
    }
    let back = load_corpus(dir.as_ref())?;
    assert_eq!(back, clips);
    for split in [Split::Train, Split::Val, Split::Test] {
        let n = clips.iter().filter(|c| c.split == split).count();
        let duets = clips.iter().filter(|c| c.split == split && c.is_duet()).count();
        println!("{:<5} {n:>3} clips ({duets} duets)", split.name());
    }
    println!("wrote {} clips to {dir}", clips.len());
    Ok(())
}
