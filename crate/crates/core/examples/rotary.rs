//! Log-time rotary phases and the relative property of rotated scores.

use tempoformer::rotary::{rope_scores, stream_phases, TimeAnchor};
use tempoformer::tensor::Tensor;

fn main() -> tempoformer::Result<()> {
    let minute = 60.0;
    let times = [0.0, 5.0 * minute, 6.0 * minute, 600.0 * minute];
    for anchor in [TimeAnchor::First, TimeAnchor::Current] {
        let phases = stream_phases(&times, anchor);
        println!("{anchor:?}: {:?}", phases.iter().map(|p| format!("{p:.3}")).collect::<Vec<_>>());
    }

    let q = Tensor::<f64>::new(&[3, 4], vec![0.3, -1.0, 0.8, 0.1, 1.2, 0.4, -0.5, 0.9, -0.7, 0.2, 0.6, -0.3])?;
    let k = Tensor::<f64>::new(&[3, 4], vec![0.5, 0.5, -0.2, 1.0, -1.1, 0.3, 0.7, 0.2, 0.4, -0.6, 0.1, 0.8])?;
    let phases = [0.0, 1.5, 4.0];
    let shifted: Vec<f64> = phases.iter().map(|p| p + 17.0).collect();
    let a = rope_scores(&q, &k, &phases)?;
    let b = rope_scores(&q, &k, &shifted)?;
    println!("scores {:?}", a.data().iter().map(|s| format!("{s:.4}")).collect::<Vec<_>>());
    println!("largest change after shifting every phase by 17: {:.2e}", a.max_abs_diff(&b));
    Ok(())
}
