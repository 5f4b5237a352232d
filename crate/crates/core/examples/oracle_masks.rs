//! Upper bounds from ideal masks on desk test mixtures, against the
//! unprocessed mixture.

use avsep::eval::{evaluate_oracle, OracleMask};
use avsep::{generate_clips, EvalSet, Frontend, Result, Split, TrainConfig};

fn main() -> Result<()> {
    let cfg = TrainConfig::default();
    let clips = generate_clips(&cfg.audio(), cfg.arch().frame_size, cfg.classes, &cfg.corpus, cfg.seed)?;
    let fe = Frontend::new(&cfg.audio())?;
    let set = EvalSet::build(&clips, Split::Test, 12, 0.0, cfg.seed, &fe, cfg.filter_len)?;
    let base = set.baseline.mean();
    println!("{:<11} {:>7} {:>7} {:>7}", "mask", "SDR", "SIR", "SAR");
    println!("{:<11} {:>7.2} {:>7.2} {:>7.2}", "mixture", base.sdr, base.sir, base.sar);
    for kind in OracleMask::ALL {
        let m = evaluate_oracle(&fe, &clips, &set, kind)?.mean();
        println!("{:<11} {:>7.2} {:>7.2} {:>7.2}", kind.name(), m.sdr, m.sir, m.sar);
    }
    Ok(())
}
