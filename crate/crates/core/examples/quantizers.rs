//! Balanced weight quantization and activation binarization on a small
//! random filter bank.

use bbg::quant::{binarize_activations, center_weights, WeightQuant};
use bbg::layers::BinaryConv;
use bbg::rng::{SeedRng, Stream};
use bbg::tensor::Tensor4;

fn main() {
    let mut rng = SeedRng::new(1).stream(Stream::Test, 0);
    let v = Tensor4::<f32>::randn([4, 2, 3, 3], 1.0, &mut rng).map(|x| x + 0.7);

    for quant in [WeightQuant::Vanilla, WeightQuant::Balanced] {
        let conv = BinaryConv::new(v.clone(), quant, 1, 1);
        let bw = conv.balanced_weight();
        println!("{quant}: alpha {:.4}", bw.alpha);
        for o in 0..4 {
            let filter = bw.signs.item(o);
            let plus = filter.iter().filter(|&&s| s > 0.0).count();
            let mean: f32 = bw.w.item(o).iter().sum::<f32>() / filter.len() as f32;
            println!("  filter {o}: mean w {mean:+.5}, {plus}/{} signs positive", filter.len());
        }
    }

    let w = center_weights(&v);
    let again = center_weights(&w);
    println!("centering idempotent: {}", w.max_abs_diff(&again) == 0.0);

    let x = Tensor4::from_vec([1, 1, 1, 6], vec![-0.3, 0.0, 0.49, 0.5, 0.9, 1.4]).unwrap();
    let a = binarize_activations(&x);
    println!("x     {:?}", x.data());
    println!("x_b   {:?}", a.xb.data());
    println!("mask  {:?}", a.mask);
}
