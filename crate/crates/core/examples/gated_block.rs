//! Forward and backward through one gated residual unit, showing how the
//! gate gradient relates to the shortcut input.

use bbg::layers::{gated_block_backward, gated_block_forward, BlockVariant, Mode, ResidualUnit};
use bbg::quant::WeightQuant;
use bbg::rng::{SeedRng, Stream};
use bbg::tensor::Tensor4;

fn main() -> bbg::Result<()> {
    let mut rng = SeedRng::new(3).stream(Stream::Test, 0);
    let mut unit = ResidualUnit::<f64>::build(BlockVariant::Gated, WeightQuant::Balanced, 4, 4, 1, &mut rng);
    let mut bireal = unit.clone();
    bireal.shortcut = bbg::layers::Shortcut::Identity;

    let x = Tensor4::uniform([2, 4, 6, 6], 0.0, 1.0, &mut rng);
    let y = gated_block_forward(&x, &mut unit, Mode::Train)?;
    let yb = gated_block_forward(&x, &mut bireal, Mode::Train)?;
    println!("gates start at one, so the unit equals its ungated twin: {}", y == yb);

    unit.shortcut.gate_mut().unwrap().s.value = Tensor4::vector(vec![0.5, 1.0, 1.5, -1.0]);
    let y = gated_block_forward(&x, &mut unit, Mode::Train)?;
    let g = gated_block_backward(&Tensor4::filled(y.shape(), 1.0), &mut unit)?;
    let g_s = g.g_s.expect("gated unit");
    for c in 0..4 {
        let sum_x: f64 = (0..2).map(|n| x.plane(n, c).iter().sum::<f64>()).sum();
        println!("channel {c}: dL/ds {:+.4}, sum of x {:+.4}", g_s.data()[c], sum_x);
    }
    Ok(())
}
