//! Per-operation checks against independent naive references and
//! central differences, plus the compositional block oracles.

mod common;

use common::{assert_bits_equal, max_abs_diff, naive_attention, naive_avg_pool2d, naive_conv2d};
use errseg_core::aggregation::{AggregationConfig, ClassBlock, SpatialBlock, StarMlp};
use errseg_core::cost::{cosine_cost_map, CostVolume};
use errseg_core::rng::Rng;
use errseg_core::tensor::{attention, gradient_check, gradient_check_params, UpsampleMode};
use errseg_core::{ParamStore, Tape, Tensor};

#[test]
fn conv2d_matches_naive_on_spec_example() {
    // random 1x2x4x4 input, 3x2x3x3 weight, stride 1, padding 1
    let mut rng = Rng::new(41);
    let x = Tensor::randn(&[1, 2, 4, 4], 1.0, &mut rng);
    let w = Tensor::randn(&[3, 2, 3, 3], 0.5, &mut rng);
    let b = Tensor::randn(&[3], 0.2, &mut rng);
    let want = naive_conv2d(&x, &w, Some(&b), 1, 1, 1);
    let mut tape = Tape::new();
    let (xi, wi, bi) = (tape.input(x), tape.input(w), tape.input(b));
    let got = tape.conv2d(xi, wi, Some(bi), 1, 1, 1).unwrap();
    assert!(max_abs_diff(tape.data(got), want.data()) <= 1e-12);
}

#[test]
fn conv2d_matches_naive_randomized_including_groups() {
    let mut rng = Rng::new(42);
    for trial in 0..60 {
        let groups = [1usize, 2][rng.below(2)];
        let cin = groups * (1 + rng.below(3));
        let cout = groups * (1 + rng.below(3));
        let b = 1 + rng.below(2);
        let k = 1 + rng.below(3);
        let h = k + rng.below(5);
        let w = k + rng.below(5);
        let stride = 1 + rng.below(2);
        let padding = rng.below(2);
        let x = Tensor::randn(&[b, cin, h, w], 1.0, &mut rng);
        let wt = Tensor::randn(&[cout, cin / groups, k, k], 0.6, &mut rng);
        let bias = Tensor::randn(&[cout], 0.3, &mut rng);
        let want = naive_conv2d(&x, &wt, Some(&bias), stride, padding, groups);
        let mut tape = Tape::new();
        let (xi, wi, bi) = (tape.input(x), tape.input(wt), tape.input(bias));
        let got = tape.conv2d(xi, wi, Some(bi), stride, padding, groups).unwrap();
        assert_eq!(tape.shape(got), want.shape(), "trial {trial}");
        assert!(max_abs_diff(tape.data(got), want.data()) <= 1e-12, "trial {trial}");
    }
}

#[test]
fn avg_pool_matches_naive() {
    let mut rng = Rng::new(43);
    for _ in 0..30 {
        let r = 1 + rng.below(3);
        let h = r * (1 + rng.below(3));
        let w = r * (1 + rng.below(3));
        let x = Tensor::randn(&[1 + rng.below(2), 1 + rng.below(3), h, w], 1.0, &mut rng);
        let want = naive_avg_pool2d(&x, r);
        let mut tape = Tape::new();
        let xi = tape.input(x);
        let got = tape.avg_pool2d(xi, r).unwrap();
        assert!(max_abs_diff(tape.data(got), want.data()) <= 1e-12);
    }
}

#[test]
fn attention_matches_naive_on_spec_example() {
    // random B=1, Lq=3, Lk=5, C=4
    let mut rng = Rng::new(44);
    let q = Tensor::randn(&[1, 3, 4], 0.8, &mut rng);
    let k = Tensor::randn(&[1, 5, 4], 0.8, &mut rng);
    let v = Tensor::randn(&[1, 5, 4], 0.8, &mut rng);
    let want = naive_attention(&q, &k, &v);
    let mut tape = Tape::new();
    let (qi, ki, vi) = (tape.input(q), tape.input(k), tape.input(v));
    let got = attention(&mut tape, qi, ki, vi).unwrap();
    assert!(max_abs_diff(tape.data(got), want.data()) <= 1e-12);
}

#[test]
fn cosine_map_matches_direct_loop() {
    // random D=4, 2x2 pixels, K=3
    let mut rng = Rng::new(45);
    let feats = Tensor::randn(&[4, 2, 2], 1.0, &mut rng);
    let emb = Tensor::randn(&[3, 4], 1.0, &mut rng);
    let mut want = vec![0.0f64; 3 * 4];
    for p in 0..4 {
        let f: Vec<f64> = (0..4).map(|c| feats.data()[c * 4 + p]).collect();
        let nf = f.iter().map(|v| v * v).sum::<f64>().sqrt();
        for t in 0..3 {
            let e = &emb.data()[t * 4..(t + 1) * 4];
            let ne = e.iter().map(|v| v * v).sum::<f64>().sqrt();
            let dot: f64 = f.iter().zip(e).map(|(a, b)| a * b).sum();
            want[t * 4 + p] = dot / (nf * ne);
        }
    }
    let mut tape = Tape::new();
    let (fi, ei) = (tape.input(feats), tape.input(emb));
    let got = tape.cosine_map(fi, ei).unwrap();
    assert!(max_abs_diff(tape.data(got), &want) <= 1e-12);
    let vol = cosine_cost_map(&mut tape, fi, ei).unwrap();
    assert_eq!(vol.class_ids, vec![0, 1, 2]);
}

#[test]
fn elementwise_op_gradients_pass_central_difference() {
    let rng = Rng::new(46);
    for seed in 0..5u64 {
        let mut r = rng.derive(seed);
        let x = Tensor::randn(&[2, 3, 4], 0.8, &mut r);
        // gelu -> softmax -> scale -> sum
        let err = gradient_check(
            |tape, ids| {
                let g = tape.gelu(ids[0])?;
                let s = tape.softmax(g)?;
                let sc = tape.scale(s, 1.7)?;
                tape.sum_all(sc)
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn structural_op_gradients_pass_central_difference() {
    let rng = Rng::new(47);
    for seed in 0..5u64 {
        let mut r = rng.derive(seed);
        let a = Tensor::randn(&[2, 2, 3], 0.8, &mut r);
        let b = Tensor::randn(&[2, 1, 3], 0.8, &mut r);
        let err = gradient_check(
            |tape, ids| {
                let cat = tape.concat(&[ids[0], ids[1]], 1)?;
                let perm = tape.permute(cat, &[1, 0, 2])?;
                let resh = tape.reshape(perm, &[3, 6])?;
                let sel = tape.index_select0(resh, &[2, 0])?;
                let bc = tape.broadcast0(sel, 2)?;
                tape.sum_all(bc)
            },
            &[a, b],
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn pool_upsample_cosine_gradients_pass_central_difference() {
    let rng = Rng::new(48);
    for seed in 0..5u64 {
        let mut r = rng.derive(seed);
        let x = Tensor::randn(&[1, 2, 4, 4], 0.8, &mut r);
        let emb = Tensor::randn(&[3, 2], 1.0, &mut r);
        let err = gradient_check(
            |tape, ids| {
                let up = tape.upsample2d(ids[0], 2, UpsampleMode::Bilinear)?;
                let down = tape.avg_pool2d(up, 4)?;
                let feats = tape.reshape(down, &[2, 2, 2])?;
                let cos = tape.cosine_map(feats, ids[1])?;
                tape.sum_all(cos)
            },
            &[x, emb],
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn cross_entropy_gradient_passes_central_difference() {
    let rng = Rng::new(49);
    const IGNORE: usize = usize::MAX;
    let targets = [0usize, 2, IGNORE, 1];
    for seed in 0..5u64 {
        let mut r = rng.derive(seed);
        let logits = Tensor::randn(&[3, 2, 2], 1.0, &mut r);
        let err = gradient_check(
            |tape, ids| tape.cross_entropy(ids[0], &targets, IGNORE),
            &[logits],
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn scene_density_matches_the_generator_law() {
    use errseg_core::pipeline::{expected_present_mean, synth_dataset, synthetic_vocabulary, PipelineConfig};
    let cfg = PipelineConfig::default(); // K=64, up to 4 present classes
    let vocab = synthetic_vocabulary(cfg.k, cfg.d).unwrap();
    let scenes = synth_dataset(1000, &cfg, &vocab, 0xdead);
    let mean = scenes.iter().map(|s| s.present_classes.len() as f64).sum::<f64>() / 1000.0;
    let expect = expected_present_mean(&cfg);
    assert!(
        (mean - expect).abs() <= 0.1 * expect,
        "measured {mean:.3} vs law {expect:.3}"
    );
}

#[test]
fn star_mlp_matches_direct_formula() {
    // random C=3, C'=6 against a direct evaluation
    let mut rng = Rng::new(50);
    let mut store = ParamStore::new();
    let mlp = StarMlp::init(&mut store, 3, 6, &mut rng);
    let x = Tensor::randn(&[4, 3], 0.9, &mut rng);

    let linear = |w: &Tensor, b: &Tensor, row: &[f64]| -> Vec<f64> {
        let (cin, cout) = (w.shape()[0], w.shape()[1]);
        (0..cout)
            .map(|j| {
                b.data()[j] + (0..cin).map(|i| row[i] * w.data()[i * cout + j]).sum::<f64>()
            })
            .collect()
    };
    let gelu = |v: f64| 0.5 * v * (1.0 + (0.7978845608028654 * (v + 0.044715 * v * v * v)).tanh());
    let mut want = vec![0.0f64; 4 * 3];
    for r in 0..4 {
        let row = &x.data()[r * 3..(r + 1) * 3];
        let h1 = linear(store.get(mlp.f_in1_w), store.get(mlp.f_in1_b), row);
        let h2 = linear(store.get(mlp.f_in2_w), store.get(mlp.f_in2_b), row);
        let prod: Vec<f64> = h1.iter().zip(&h2).map(|(a, b)| gelu(a * b)).collect();
        let out = linear(store.get(mlp.f_out_w), store.get(mlp.f_out_b), &prod);
        want[r * 3..(r + 1) * 3].copy_from_slice(&out);
    }

    let mut tape = Tape::new();
    let xi = tape.input(x);
    let got = mlp.forward(&mut tape, &store, xi).unwrap();
    assert!(max_abs_diff(tape.data(got), &want) <= 1e-12);
}

#[test]
fn spatial_reduce_matches_conv_then_project_composition() {
    // the reduce path must equal conv(stride r1) -> reshape -> linear
    let mut rng = Rng::new(51);
    let mut store = ParamStore::new();
    let config = AggregationConfig { c: 4, c_prime: 8, r1: 2, r2: 2, num_blocks: 1, depthwise_kernel: 3 };
    let block = SpatialBlock::init(&mut store, config, &mut rng);
    let s = Tensor::randn(&[2, 4, 4, 4], 0.7, &mut rng);

    let conv = naive_conv2d(&s, store.get(block.reduce_w), Some(store.get(block.reduce_b)), 2, 0, 1);
    // [P,2C,2,2] -> [P, 4, 2C] -> linear
    let pw = store.get(block.proj_w);
    let pb = store.get(block.proj_b);
    let mut want = vec![0.0f64; 2 * 4 * 4];
    for p in 0..2 {
        for pos in 0..4 {
            let (y, x) = (pos / 2, pos % 2);
            let row: Vec<f64> = (0..8).map(|ch| conv.data()[((p * 8 + ch) * 2 + y) * 2 + x]).collect();
            for j in 0..4 {
                let mut acc = pb.data()[j];
                for (i, rv) in row.iter().enumerate() {
                    acc += rv * pw.data()[i * 4 + j];
                }
                want[(p * 4 + pos) * 4 + j] = acc;
            }
        }
    }

    let mut tape = Tape::new();
    let si = tape.input(s);
    let got = block.spatial_reduce(&mut tape, &store, si).unwrap();
    assert!(max_abs_diff(tape.data(got), &want) <= 1e-12);
}

#[test]
fn class_reduce_matches_pool_then_reshape_bit_for_bit() {
    let mut rng = Rng::new(52);
    let mut store = ParamStore::new();
    let config = AggregationConfig { c: 2, c_prime: 4, r1: 1, r2: 2, num_blocks: 1, depthwise_kernel: 3 };
    let block = ClassBlock::init(&mut store, config, &mut rng);
    let s = Tensor::randn(&[3, 2, 4, 4], 0.7, &mut rng);

    let mut tape = Tape::new();
    let si = tape.input(s.clone());
    let got = block.class_reduce(&mut tape, si).unwrap();

    let pooled = {
        let mut t = Tape::new();
        let id = t.input(s);
        let p = t.avg_pool2d(id, 2).unwrap();
        t.value(p).clone()
    };
    let mut want = vec![0.0f64; 4 * 3 * 2];
    for y in 0..2 {
        for x in 0..2 {
            for p in 0..3 {
                for c in 0..2 {
                    want[((y * 2 + x) * 3 + p) * 2 + c] = pooled.data()[((p * 2 + c) * 2 + y) * 2 + x];
                }
            }
        }
    }
    assert_bits_equal(tape.data(got), &want, "class_reduce");
}

#[test]
fn spatial_block_matches_step_by_step_composition() {
    let mut rng = Rng::new(53);
    let mut store = ParamStore::new();
    let config = AggregationConfig { c: 4, c_prime: 8, r1: 2, r2: 2, num_blocks: 1, depthwise_kernel: 3 };
    let block = SpatialBlock::init(&mut store, config, &mut rng);
    let s = Tensor::randn(&[2, 4, 4, 4], 0.6, &mut rng);

    // reference composition on a second tape, spelled out step by step
    let want = {
        let mut t = Tape::new();
        let si = t.input(s.clone());
        let q = t.permute(si, &[0, 2, 3, 1]).unwrap();
        let q = t.reshape(q, &[2, 16, 4]).unwrap();
        let red = block.spatial_reduce(&mut t, &store, si).unwrap();
        let attn = attention(&mut t, q, red, red).unwrap();
        let ow = t.param(&store, block.out_w);
        let ob = t.param(&store, block.out_b);
        let delta = t.linear(attn, ow, Some(ob)).unwrap();
        let s1 = t.add(q, delta).unwrap();
        let grid = t.reshape(s1, &[2, 4, 4, 4]).unwrap();
        let grid = t.permute(grid, &[0, 3, 1, 2]).unwrap();
        let dw = t.param(&store, block.dw_w);
        let db = t.param(&store, block.dw_b);
        let conv = t.conv2d(grid, dw, Some(db), 1, 1, 4).unwrap();
        let s2 = t.add(grid, conv).unwrap();
        let seq = t.permute(s2, &[0, 2, 3, 1]).unwrap();
        let seq = t.reshape(seq, &[2, 16, 4]).unwrap();
        let mlp = block.mlp.forward(&mut t, &store, seq).unwrap();
        let s3 = t.add(seq, mlp).unwrap();
        let out = t.reshape(s3, &[2, 4, 4, 4]).unwrap();
        let out = t.permute(out, &[0, 3, 1, 2]).unwrap();
        t.data(out).to_vec()
    };

    let mut tape = Tape::new();
    let si = tape.input(s);
    let got = block.forward(&mut tape, &store, si).unwrap();
    assert!(max_abs_diff(tape.data(got), &want) <= 1e-12);
}

#[test]
fn class_block_matches_step_by_step_composition() {
    let mut rng = Rng::new(54);
    let mut store = ParamStore::new();
    let config = AggregationConfig { c: 2, c_prime: 4, r1: 2, r2: 2, num_blocks: 1, depthwise_kernel: 3 };
    let block = ClassBlock::init(&mut store, config, &mut rng);
    let s = Tensor::randn(&[3, 2, 4, 4], 0.6, &mut rng);

    let want = {
        let mut t = Tape::new();
        let si = t.input(s.clone());
        let pooled = block.class_reduce(&mut t, si).unwrap();
        let attn = attention(&mut t, pooled, pooled, pooled).unwrap();
        let ow = t.param(&store, block.out_w);
        let ob = t.param(&store, block.out_b);
        let a = t.linear(attn, ow, Some(ob)).unwrap();
        let u = t.add(pooled, a).unwrap();
        let m = block.mlp.forward(&mut t, &store, u).unwrap();
        let delta = t.add(a, m).unwrap();
        let grid = t.reshape(delta, &[2, 2, 3, 2]).unwrap();
        let grid = t.permute(grid, &[2, 3, 0, 1]).unwrap();
        let up = t.upsample2d(grid, 2, UpsampleMode::Nearest).unwrap();
        let out = t.add(si, up).unwrap();
        t.data(out).to_vec()
    };

    let mut tape = Tape::new();
    let si = tape.input(s);
    let got = block.forward(&mut tape, &store, si).unwrap();
    assert!(max_abs_diff(tape.data(got), &want) <= 1e-12);
}

#[test]
fn reduction_disabled_blocks_match_reference_bit_for_bit() {
    // r1 = r2 = 1 with identity-configured reducers equals an unreduced
    // attention block exactly
    let mut rng = Rng::new(55);
    let mut store = ParamStore::new();
    let config = AggregationConfig { c: 3, c_prime: 6, r1: 1, r2: 1, num_blocks: 1, depthwise_kernel: 3 };
    let block = SpatialBlock::init(&mut store, config, &mut rng);
    // identity reduce: conv 1x1 [2C,C] with [I; 0] then proj [I 0]^T
    {
        let c = 3;
        let rw = store.get_mut(block.reduce_w);
        let n = rw.numel();
        rw.data_mut().copy_from_slice(&vec![0.0; n]);
        for ch in 0..c {
            rw.data_mut()[ch * c + ch] = 1.0;
        }
        let pw = store.get_mut(block.proj_w);
        let n = pw.numel();
        pw.data_mut().copy_from_slice(&vec![0.0; n]);
        for ch in 0..c {
            pw.data_mut()[ch * c + ch] = 1.0;
        }
    }
    let s = Tensor::randn(&[2, 3, 4, 4], 0.6, &mut rng);

    let want = {
        let mut t = Tape::new();
        let si = t.input(s.clone());
        let q = t.permute(si, &[0, 2, 3, 1]).unwrap();
        let q = t.reshape(q, &[2, 16, 3]).unwrap();
        // unreduced reference: the full sequence is key and value
        let attn = attention(&mut t, q, q, q).unwrap();
        let ow = t.param(&store, block.out_w);
        let ob = t.param(&store, block.out_b);
        let delta = t.linear(attn, ow, Some(ob)).unwrap();
        let s1 = t.add(q, delta).unwrap();
        let grid = t.reshape(s1, &[2, 4, 4, 3]).unwrap();
        let grid = t.permute(grid, &[0, 3, 1, 2]).unwrap();
        let dw = t.param(&store, block.dw_w);
        let db = t.param(&store, block.dw_b);
        let conv = t.conv2d(grid, dw, Some(db), 1, 1, 3).unwrap();
        let s2 = t.add(grid, conv).unwrap();
        let seq = t.permute(s2, &[0, 2, 3, 1]).unwrap();
        let seq = t.reshape(seq, &[2, 16, 3]).unwrap();
        let mlp = block.mlp.forward(&mut t, &store, seq).unwrap();
        let s3 = t.add(seq, mlp).unwrap();
        let out = t.reshape(s3, &[2, 4, 4, 3]).unwrap();
        let out = t.permute(out, &[0, 3, 1, 2]).unwrap();
        t.data(out).to_vec()
    };

    let mut tape = Tape::new();
    let si = tape.input(s);
    let got = block.forward(&mut tape, &store, si).unwrap();
    assert_bits_equal(tape.data(got), &want, "reduction-disabled spatial block");
}

#[test]
fn decoder_stage_matches_composition() {
    let mut rng = Rng::new(56);
    let mut store = ParamStore::new();
    let stage = errseg_core::decoder::UpsampleStage::init(&mut store, 4, 2, 3, &mut rng);
    let s = Tensor::randn(&[2, 4, 2, 2], 0.6, &mut rng);
    let guide = Tensor::randn(&[2, 4, 4], 0.6, &mut rng);

    let want = {
        let mut t = Tape::new();
        let si = t.input(s.clone());
        let gi = t.input(guide.clone());
        let up = t.upsample2d(si, 2, UpsampleMode::Nearest).unwrap();
        let g4 = t.reshape(gi, &[1, 2, 4, 4]).unwrap();
        let gw = t.param(&store, stage.guide_w);
        let gb = t.param(&store, stage.guide_b);
        let g = t.conv2d(g4, gw, Some(gb), 1, 1, 1).unwrap();
        let g = t.reshape(g, &[2, 4, 4]).unwrap();
        let g = t.broadcast0(g, 2).unwrap();
        let cat = t.concat(&[up, g], 1).unwrap();
        let w1 = t.param(&store, stage.refine1_w);
        let b1 = t.param(&store, stage.refine1_b);
        let r1 = t.conv2d(cat, w1, Some(b1), 1, 1, 1).unwrap();
        let act = t.gelu(r1).unwrap();
        let w2 = t.param(&store, stage.refine2_w);
        let b2 = t.param(&store, stage.refine2_b);
        let out = t.conv2d(act, w2, Some(b2), 1, 1, 1).unwrap();
        t.data(out).to_vec()
    };

    let mut tape = Tape::new();
    let si = tape.input(s);
    let gi = tape.input(guide);
    let got = stage.forward(&mut tape, &store, si, gi).unwrap();
    assert!(max_abs_diff(tape.data(got), &want) <= 1e-12);
}

#[test]
fn embed_merge_matches_composition() {
    let mut rng = Rng::new(57);
    let mut store = ParamStore::new();
    let embed = errseg_core::cost::CostEmbed::init(&mut store, 5, &mut rng);
    let s3v = Tensor::from_fn(&[2, 4, 4], |_| rng.range(-1.0, 1.0));
    let s4v = Tensor::from_fn(&[2, 2, 2], |_| rng.range(-1.0, 1.0));

    let want = {
        let mut t = Tape::new();
        let a = t.input(s3v.clone());
        let b = t.input(s4v.clone());
        let a = t.reshape(a, &[2, 1, 4, 4]).unwrap();
        let b = t.reshape(b, &[2, 1, 2, 2]).unwrap();
        let e3w = t.param(&store, embed.embed3_w);
        let e3b = t.param(&store, embed.embed3_b);
        let m3w = t.param(&store, embed.merge3_w);
        let m3b = t.param(&store, embed.merge3_b);
        let e4w = t.param(&store, embed.embed4_w);
        let e4b = t.param(&store, embed.embed4_b);
        let m4w = t.param(&store, embed.merge4_w);
        let m4b = t.param(&store, embed.merge4_b);
        let e3 = t.conv2d(a, e3w, Some(e3b), 1, 1, 1).unwrap();
        let m3 = t.conv2d(e3, m3w, Some(m3b), 1, 1, 1).unwrap();
        let e4 = t.conv2d(b, e4w, Some(e4b), 1, 1, 1).unwrap();
        let m4 = t.conv2d(e4, m4w, Some(m4b), 1, 1, 1).unwrap();
        let u4 = t.upsample2d(m4, 2, UpsampleMode::Nearest).unwrap();
        let out = t.add(m3, u4).unwrap();
        t.data(out).to_vec()
    };

    let mut tape = Tape::new();
    let a = tape.input(s3v);
    let b = tape.input(s4v);
    let s3 = CostVolume::raw(&tape, a, vec![3, 8]).unwrap();
    let s4 = CostVolume::raw(&tape, b, vec![3, 8]).unwrap();
    let got = embed.forward(&mut tape, &store, &s3, &s4).unwrap();
    assert!(max_abs_diff(tape.data(got.data), &want) <= 1e-12);
}

#[test]
fn block_parameter_gradients_pass_central_difference() {
    let mut rng = Rng::new(58);
    let config = AggregationConfig { c: 3, c_prime: 4, r1: 2, r2: 2, num_blocks: 1, depthwise_kernel: 3 };
    let mut store = ParamStore::new();
    let block = SpatialBlock::init(&mut store, config, &mut rng);
    let params = [
        block.reduce_w, block.reduce_b, block.proj_w, block.proj_b,
        block.out_w, block.out_b, block.dw_w, block.dw_b,
        block.mlp.f_in1_w, block.mlp.f_in1_b, block.mlp.f_in2_w, block.mlp.f_in2_b,
        block.mlp.f_out_w, block.mlp.f_out_b,
    ];
    let x = Tensor::randn(&[1, 3, 4, 4], 0.5, &mut rng);
    let err = gradient_check_params(
        &mut store,
        &params,
        &[x],
        |tape, store, ids| {
            let y = block.forward(tape, store, ids[0])?;
            tape.sum_all(y)
        },
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-4, "{err}");
}
