use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Mode, Model};
use crate::tensor::Tensor4;

use super::model::PackedModel;

/// Iterations discarded before timing starts.
pub const MIN_WARMUP: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub batch: usize,
    pub iters: usize,
    pub warmup: usize,
    pub threads: usize,
    pub packed_median_ms: f64,
    pub float_median_ms: f64,
    /// `float_median_ms / packed_median_ms`.
    pub speedup: f64,
    pub popcount: String,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

fn split(x: &Tensor4<f32>, threads: usize) -> Vec<Tensor4<f32>> {
    let n = x.shape().n;
    let per = n.div_ceil(threads.max(1));
    (0..n)
        .step_by(per.max(1))
        .map(|s| x.gather_items(&(s..(s + per).min(n)).collect::<Vec<_>>()))
        .collect()
}

fn time_ms(iters: usize, warmup: usize, mut f: impl FnMut() -> Result<()>) -> Result<Vec<f64>> {
    for _ in 0..warmup {
        f()?;
    }
    let mut out = Vec::with_capacity(iters);
    for _ in 0..iters {
        let t = Instant::now();
        f()?;
        out.push(t.elapsed().as_secs_f64() * 1e3);
    }
    Ok(out)
}

/// Median wall-clock of one forward pass over `x` for the packed engine and
/// the float engine it was exported from. With `threads > 1` the batch is
/// split across scoped threads for both engines.
pub fn benchmark(
    packed: &PackedModel,
    float: &Model<f32>,
    x: &Tensor4<f32>,
    iters: usize,
    warmup: usize,
    threads: usize,
) -> Result<BenchReport> {
    if iters == 0 || threads == 0 {
        return Err(Error::InvalidArgument("benchmark needs iters >= 1 and threads >= 1".into()));
    }
    let warmup = warmup.max(MIN_WARMUP);
    let chunks = split(x, threads);
    let mut floats: Vec<Model<f32>> = chunks.iter().map(|_| float.clone()).collect();

    let packed_ms = time_ms(iters, warmup, || {
        if chunks.len() == 1 {
            return packed.forward(&chunks[0]).map(drop);
        }
        std::thread::scope(|s| {
            let handles: Vec<_> = chunks.iter().map(|c| s.spawn(|| packed.forward(c).map(drop))).collect();
            handles.into_iter().try_for_each(|h| h.join().expect("bench worker panicked"))
        })
    })?;
    let float_ms = time_ms(iters, warmup, || {
        if chunks.len() == 1 {
            return floats[0].forward(&chunks[0], Mode::Eval).map(drop);
        }
        std::thread::scope(|s| {
            let handles: Vec<_> = floats
                .iter_mut()
                .zip(&chunks)
                .map(|(m, c)| s.spawn(move || m.forward(c, Mode::Eval).map(drop)))
                .collect();
            handles.into_iter().try_for_each(|h| h.join().expect("bench worker panicked"))
        })
    })?;

    let (p, f) = (median(packed_ms), median(float_ms));
    Ok(BenchReport {
        batch: x.shape().n,
        iters,
        warmup,
        threads: chunks.len(),
        packed_median_ms: p,
        float_median_ms: f,
        speedup: f / p,
        popcount: super::conv::popcount_backend().to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::ModelSpec;

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn single_iteration_reports() {
        let spec = ModelSpec::basiccnn().with_input([1, 8, 8], 2);
        let m = Model::<f32>::new(&spec, 1).unwrap();
        let p = PackedModel::from_model(&m).unwrap();
        let x = Tensor4::filled([3, 1, 8, 8], 0.7);
        let r = benchmark(&p, &m, &x, 1, 0, 2).unwrap();
        assert_eq!(r.iters, 1);
        assert_eq!(r.warmup, MIN_WARMUP);
        assert_eq!(r.threads, 2);
        assert!(r.speedup > 0.0);
    }
}
