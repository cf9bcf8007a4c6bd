// Fold a few samples through the dithered modulo channel and undo the fold
// with knowledge of the true value, showing that the only residual is the
// dither term `(z + 1/2) / alpha`.

use modunfold::modcore::{center_mod, reconstruct, unfolded_value, ChannelState, ModRange};

pub fn run_example() -> modunfold::Result<()> {
    let range = ModRange::new(4)?;
    let alpha = 2.5;
    let mut channel = ChannelState::new(range, alpha, 7)?;
    println!("delta = {}, alpha = {alpha}", range.delta());
    println!("{:>8} {:>10} {:>10} {:>10} {:>12}", "x", "z", "y", "folds", "x_hat - x");
    for &x in &[0.1, 1.7, -2.3, 5.9, -7.4] {
        let folded = channel.fold_sample(x)?;
        let v = unfolded_value(alpha, x, folded.z);
        let folds = ((v - folded.y) / range.delta()).round();
        let x_hat = reconstruct(folded.y + folds * range.delta(), alpha)?;
        println!(
            "{x:>8.3} {:>10.4} {:>10.4} {folds:>10} {:>12.2e}",
            folded.z,
            folded.y,
            x_hat - x
        );
        assert!((x_hat - x - (folded.z + 0.5) / alpha).abs() < 1e-12);
    }
    // the centered residue is what the unfolder sees after removing a prediction
    println!("center_mod(9.2, 16) = {}", center_mod(9.2, 16.0)?);
    Ok(())
}

#[allow(dead_code)]
fn main() -> modunfold::Result<()> {
    run_example()
}
