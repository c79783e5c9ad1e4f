//! Packed vs float inference time for binary ResNet-20 on CIFAR-sized
//! input, single thread by default.
//!
//! ```text
//! cargo run --release --example bench_resnet20 -- [batch] [iters] [threads]
//! ```

use bbg::bitpack::{benchmark, PackedModel};
use bbg::layers::{Model, ModelSpec};
use bbg::rng::{SeedRng, Stream};
use bbg::tensor::Tensor4;

fn main() -> bbg::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("integer argument"));
    let batch = args.next().unwrap_or(16);
    let iters = args.next().unwrap_or(10);
    let threads = args.next().unwrap_or(1);

    let model = Model::<f32>::new(&ModelSpec::resnet20(), 42)?;
    let packed = PackedModel::from_model(&model)?;
    let mut rng = SeedRng::new(42).stream(Stream::Test, 0);
    let x = Tensor4::uniform(model.input_shape(batch), 0.0, 1.0, &mut rng);

    let r = benchmark(&packed, &model, &x, iters, 3, threads)?;
    println!("batch {batch}, {iters} iterations, {} thread(s), popcount {}", r.threads, r.popcount);
    println!("float  median {:>9.2} ms", r.float_median_ms);
    println!("packed median {:>9.2} ms", r.packed_median_ms);
    println!("speedup {:.2}x", r.speedup);
    Ok(())
}
