//! SDR, SIR and SAR of a few hand-made estimates, plus permutation search
//! for a swapped pair.

use avsep_dsp::{evaluate_pair, BssProjector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> avsep_dsp::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let len = 2000;
    let refs: Vec<Vec<f64>> = (0..2).map(|_| (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let proj = BssProjector::new(&refs, 32)?;

    let leak: Vec<f64> = (0..len).map(|i| refs[0][i] + 0.1 * refs[1][i]).collect();
    let hiss: Vec<f64> = (0..len).map(|i| refs[0][i] + 0.1 * rng.gen_range(-1.0..1.0)).collect();
    // a short echo stays inside the allowed distortion filter
    let echo: Vec<f64> = (0..len).map(|i| refs[0][i] + if i >= 5 { 0.5 * refs[0][i - 5] } else { 0.0 }).collect();
    for (name, est) in [("reference", &refs[0]), ("interference", &leak), ("noise", &hiss), ("echo", &echo)] {
        let m = proj.score(est, 0)?;
        println!("{name:<13} SDR {:>7.2}  SIR {:>7.2}  SAR {:>7.2}", m.sdr, m.sir, m.sar);
    }

    let swapped = vec![refs[1].clone(), leak];
    let report = evaluate_pair(&swapped, &refs, 32)?;
    println!("best permutation {:?}, SDR {:.2} / {:.2}", report.permutation, report.metrics[0].sdr, report.metrics[1].sdr);
    Ok(())
}
