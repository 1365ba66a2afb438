//! Scores sharp, flat and ambiguous responses and runs the confidence gate
//! over a stream where the target disappears.
use ndarray::Array2;
use siampf::confidence::{apce, apcep, ConfidenceHistory, GateConfig};
use siampf::ResponseMap;

fn bump(peaks: &[(f64, f64, f64)]) -> ResponseMap {
    let map = Array2::from_shape_fn((17, 17), |(r, c)| {
        peaks.iter().map(|&(pr, pc, h)| h * (-((r as f64 - pr).powi(2) + (c as f64 - pc).powi(2)) / 4.0).exp()).sum()
    });
    ResponseMap::new(map).unwrap()
}

fn main() -> siampf::Result<()> {
    let sharp = bump(&[(8.0, 8.0, 1.0)]);
    let twin = bump(&[(4.0, 4.0, 1.0), (12.0, 12.0, 0.95)]);
    let flat = ResponseMap::filled(17, 0.5);
    for (name, m) in [("sharp", &sharp), ("two peaks", &twin), ("flat", &flat)] {
        println!("{name:<10} APCE {:>8.3}  APCEP {:>8.3}", apce(m)?, apcep(m)?);
    }
    let cfg = GateConfig::default();
    let mut history = ConfidenceHistory::from_config(&cfg);
    for (i, m) in [&sharp, &sharp, &sharp, &sharp, &twin, &flat, &sharp].iter().enumerate() {
        let score = apcep(m)?;
        let ok = history.gate(score, cfg.ratio);
        println!("frame {i}: APCEP {score:>8.3}  gate {ok}  mean {:.3}", history.running_mean());
    }
    Ok(())
}
