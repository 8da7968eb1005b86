//! Fixture helpers shared by the criterion benchmarks.

use errseg_core::aggregation::{AggregationConfig, ClassBlock, SpatialBlock};
use errseg_core::rng::Rng;
use errseg_core::tensor::attention;
use errseg_core::{ParamStore, Tape, Tensor};

pub fn block_pair(c: usize, c_prime: usize, r1: usize, r2: usize) -> (ParamStore, SpatialBlock, ClassBlock) {
    let config = AggregationConfig { c, c_prime, r1, r2, num_blocks: 1, depthwise_kernel: 3 };
    let mut store = ParamStore::new();
    let mut rng = Rng::new(7);
    let spatial = SpatialBlock::init(&mut store, config, &mut rng);
    let class = ClassBlock::init(&mut store, config, &mut rng);
    (store, spatial, class)
}

pub fn bench_volume(p: usize, c: usize, hs: usize) -> Tensor {
    let mut rng = Rng::new(11);
    Tensor::randn(&[p, c, hs, hs], 0.5, &mut rng)
}

pub fn run_blocks(store: &ParamStore, spatial: &SpatialBlock, class: &ClassBlock, volume: &Tensor) -> f64 {
    let mut tape = Tape::new();
    let s = tape.input(volume.clone());
    let y = spatial.forward(&mut tape, store, s).expect("spatial block");
    let z = class.forward(&mut tape, store, y).expect("class block");
    tape.data(z)[0]
}

pub fn run_attention(batch: usize, lq: usize, lk: usize, c: usize) -> f64 {
    let mut rng = Rng::new(13);
    let mut tape = Tape::new();
    let q = tape.input(Tensor::randn(&[batch, lq, c], 0.5, &mut rng));
    let k = tape.input(Tensor::randn(&[batch, lk, c], 0.5, &mut rng));
    let v = tape.input(Tensor::randn(&[batch, lk, c], 0.5, &mut rng));
    let out = attention(&mut tape, q, k, v).expect("attention");
    tape.data(out)[0]
}
