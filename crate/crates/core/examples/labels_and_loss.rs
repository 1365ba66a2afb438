//! Builds the 17x17 training label, its balanced weights and the logistic
//! loss of a few candidate responses.
use siampf::correlation::ResponseMap;
use siampf::labels_loss::{balance_weights, logistic_loss, make_label_map, GridPoint};

fn main() -> siampf::Result<()> {
    let labels = make_label_map(17, 8, 16.0, GridPoint::center_of(17))?;
    for row in labels.values().outer_iter().skip(6).take(5) {
        let line: String = row.iter().map(|v| if *v > 0 { '+' } else { '.' }).collect();
        println!("{line}");
    }
    let w = balance_weights(&labels);
    println!("{} positives, {} negatives, weights {:.4} / {:.5}", labels.positives(), labels.negatives(), w.get(8, 8), w.get(0, 0));
    for scale in [0.0, 1.0, 4.0] {
        let r = ResponseMap::new(labels.values().mapv(|y| scale * f64::from(y)))?;
        println!("agreement {scale}: loss {:.4}", logistic_loss(&r, &labels, &w)?);
    }
    Ok(())
}
