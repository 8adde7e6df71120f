use super::init::Init;
use super::layers::LN_EPS;
use super::*;
use crate::rng::SplitMix64;
use crate::tensor::grad_check_params;

fn randv(rng: &mut SplitMix64, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.next_f64() * 2.0 - 1.0).collect()
}

fn zero(p: &Parameter<f64>) {
    p.set_data(vec![0.0; p.numel()]).unwrap();
}

#[test]
fn paper_config_matches_published_hyperparameters() {
    let cfg = ModelConfig::paper();
    assert_eq!(cfg.stages.len(), 5);
    let dims: Vec<usize> = cfg.stages.iter().map(|s| s.embed_dim).collect();
    let kernels: Vec<usize> = cfg.stages.iter().map(|s| s.kernel).collect();
    let heads: Vec<usize> = cfg.stages.iter().map(|s| s.heads).collect();
    assert_eq!(dims, vec![32, 64, 128, 320, 512]);
    assert_eq!(kernels, vec![7, 3, 3, 3, 3]);
    assert_eq!(heads, vec![1, 1, 2, 4, 8]);
    for s in &cfg.stages {
        assert_eq!(s.reduction, 2);
        assert_eq!(s.stride, 2);
        assert_eq!(s.padding, s.kernel / 2);
        assert_eq!(s.mlp_dim, s.embed_dim);
    }
    cfg.validate().unwrap();
}

#[test]
fn ope_halves_resolution_at_paper_dims() {
    let cfg = ModelConfig::paper();
    let mut init = Init::new(SplitMix64::new(1));
    let ope1 = OverlapPatchEmbed::<f32>::new("s1", 1, &cfg.stages[0], &mut init).unwrap();
    let x = Tensor::<f32>::zeros(vec![1, 256, 256]).unwrap();
    let (tokens, hp, wp) = ope1.forward(&x, false).unwrap();
    assert_eq!((hp, wp), (128, 128));
    assert_eq!(tokens.shape(), &[128 * 128, 32]);

    let ope2 = OverlapPatchEmbed::<f32>::new("s2", 32, &cfg.stages[1], &mut init).unwrap();
    let x2 = Tensor::<f32>::zeros(vec![32, 128, 128]).unwrap();
    let (tokens2, hp2, wp2) = ope2.forward(&x2, false).unwrap();
    assert_eq!((hp2, wp2), (64, 64));
    assert_eq!(tokens2.shape(), &[64 * 64, 64]);
}

#[test]
fn degenerate_kernel_ope_is_layer_norm_of_sampled_pixels() {
    // k=1 stride-2 embedding with replicated unit weights: each token is the
    // layer norm of (pixel, pixel), which our hand oracle can produce.
    let cfg = StageConfig::new(1, 2, 1, 1);
    let mut init = Init::new(SplitMix64::new(2));
    let ope = OverlapPatchEmbed::<f64>::new("t", 1, &cfg, &mut init).unwrap();
    let params = ope.parameters();
    params[0].set_data(vec![1.0, 1.0]).unwrap(); // conv weight [2,1,1,1]
    zero(params[1]); // conv bias
    params[2].set_data(vec![1.0, 1.0]).unwrap(); // gain
    zero(params[3]); // offset

    let mut rng = SplitMix64::new(3);
    let x = Tensor::<f64>::from_vec(vec![1, 4, 4], randv(&mut rng, 16)).unwrap();
    let (tokens, hp, wp) = ope.forward(&x, false).unwrap();
    assert_eq!((hp, wp), (2, 2));
    let xd = x.to_vec();
    let sampled = [xd[0], xd[2], xd[8], xd[10]];
    let got = tokens.to_vec();
    for (t, &pix) in got.chunks(2).zip(&sampled) {
        // Hand layer norm of the duplicated pixel: zero mean, eps variance.
        let mean = (pix + pix) / 2.0;
        let want = (pix - mean) / (0.0f64 + LN_EPS).sqrt();
        assert!((t[0] - want).abs() < 1e-12 && (t[1] - want).abs() < 1e-12);
    }
}

/// Dense per-head attention oracle built from the projection weights alone.
fn dense_attention_oracle(
    tokens: &[f64],
    n: usize,
    e: usize,
    heads: usize,
    attn: &EfficientAttention<f64>,
) -> Vec<f64> {
    let matvec = |x: &[f64], w: &[f64], b: &[f64], rows: usize| -> Vec<f64> {
        let mut out = vec![0.0; rows * e];
        for r in 0..rows {
            for c in 0..e {
                let mut acc = b[c];
                for i in 0..e {
                    acc += x[r * e + i] * w[i * e + c];
                }
                out[r * e + c] = acc;
            }
        }
        out
    };
    let q = matvec(tokens, &attn.q_w.data(), &attn.q_b.data(), n);
    let k = matvec(tokens, &attn.k_w.data(), &vec![0.0; e], n);
    let v = matvec(tokens, &attn.v_w.data(), &attn.v_b.data(), n);
    let d = e / heads;
    let scale = 1.0 / (d as f64).sqrt();
    let mut ctx = vec![0.0; n * e];
    for h in 0..heads {
        for i in 0..n {
            let mut scores = vec![0.0; n];
            for j in 0..n {
                let mut dot = 0.0;
                for c in 0..d {
                    dot += q[i * e + h * d + c] * k[j * e + h * d + c];
                }
                scores[j] = dot * scale;
            }
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for s in scores.iter_mut() {
                *s = (*s - max).exp();
                z += *s;
            }
            let mut row_sum = 0.0;
            for s in scores.iter_mut() {
                *s /= z;
                row_sum += *s;
            }
            assert!((row_sum - 1.0).abs() < 1e-6, "attention row must sum to 1");
            for c in 0..d {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += scores[j] * v[j * e + h * d + c];
                }
                ctx[i * e + h * d + c] = acc;
            }
        }
    }
    matvec(&ctx, &attn.out_w.data(), &attn.out_b.data(), n)
}

#[test]
fn r1_attention_matches_dense_oracle() {
    let cfg = StageConfig::new(3, 8, 2, 1);
    let mut rng = SplitMix64::new(40);
    for seed in 0..5u64 {
        let mut init = Init::new(SplitMix64::new(100 + seed));
        let attn = EfficientAttention::<f64>::new("a", &cfg, &mut init).unwrap();
        let tokens_data = randv(&mut rng, 16 * 8);
        let tokens = Tensor::<f64>::from_vec(vec![16, 8], tokens_data.clone()).unwrap();
        let got = attn.forward(&tokens, 4, 4, false).unwrap().to_vec();
        let want = dense_attention_oracle(&tokens_data, 16, 8, 2, &attn);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-6, "seed {seed}");
        }
    }
}

#[test]
fn single_token_attention_is_projected_value() {
    let cfg = StageConfig::new(3, 4, 1, 1);
    let mut init = Init::new(SplitMix64::new(5));
    let attn = EfficientAttention::<f64>::new("a", &cfg, &mut init).unwrap();
    let t = Tensor::<f64>::from_vec(vec![1, 4], vec![0.3, -0.2, 0.9, 0.1]).unwrap();
    let got = attn.forward(&t, 1, 1, false).unwrap();
    // Softmax over one key is weight 1, so out = out_proj(v_proj(t)).
    let want = t
        .linear(attn.v_w.tensor(), Some(attn.v_b.tensor()))
        .unwrap()
        .linear(attn.out_w.tensor(), Some(attn.out_b.tensor()))
        .unwrap();
    for (g, w) in got.to_vec().iter().zip(want.to_vec()) {
        assert!((g - w).abs() < 1e-12);
    }
}

#[test]
fn reduction_shrinks_kv_grid_but_not_output() {
    let cfg = StageConfig::new(3, 8, 2, 2);
    let mut init = Init::new(SplitMix64::new(6));
    let attn = EfficientAttention::<f64>::new("a", &cfg, &mut init).unwrap();
    let mut rng = SplitMix64::new(7);
    let tokens = Tensor::<f64>::from_vec(vec![16, 8], randv(&mut rng, 128)).unwrap();
    let out = attn.forward(&tokens, 4, 4, false).unwrap();
    assert_eq!(out.shape(), &[16, 8]);
    // A 6x6 grid cannot be reduced by 2 into whole tokens... 6 is divisible;
    // use 3x3 to trigger the divisibility error.
    let bad = Tensor::<f64>::from_vec(vec![9, 8], randv(&mut rng, 72)).unwrap();
    assert!(attn.forward(&bad, 3, 3, false).is_err());
}

#[test]
fn block_residual_identities_are_bitwise() {
    let cfg = StageConfig::new(3, 8, 2, 2);
    let mut init = Init::new(SplitMix64::new(8));
    let block = TransformerBlock::<f64>::new("b", &cfg, &mut init).unwrap();
    let mut rng = SplitMix64::new(9);
    let tokens = Tensor::<f64>::from_vec(vec![16, 8], randv(&mut rng, 128)).unwrap();

    // Attention output projection zeroed: X = I exactly.
    zero(&block.attn.out_w);
    zero(&block.attn.out_b);
    let x = block
        .attention_residual(&tokens, 4, 4, false)
        .unwrap()
        .to_vec();
    assert_eq!(x, tokens.to_vec());

    // MLP zeroed as well: T = X exactly.
    zero(&block.mlp_w);
    zero(&block.mlp_b);
    let t = block
        .forward(&tokens, 4, 4, &mut Mode::Eval)
        .unwrap()
        .to_vec();
    assert_eq!(t, x);
}

#[test]
fn block_matches_straight_line_composition() {
    let cfg = StageConfig::new(3, 8, 2, 2);
    let mut init = Init::new(SplitMix64::new(10));
    let block = TransformerBlock::<f64>::new("b", &cfg, &mut init).unwrap();
    let mut rng = SplitMix64::new(11);
    let tokens = Tensor::<f64>::from_vec(vec![16, 8], randv(&mut rng, 128)).unwrap();
    let got = block.forward(&tokens, 4, 4, &mut Mode::Eval).unwrap();

    // The same pipeline spelled out with primitive ops.
    let eps = LN_EPS;
    let ln1 = tokens
        .layer_norm(block.ln1_gain.tensor(), block.ln1_offset.tensor(), eps)
        .unwrap();
    let x = block.attn.forward(&ln1, 4, 4, false).unwrap().add(&tokens).unwrap();
    let want = x
        .layer_norm(block.ln2_gain.tensor(), block.ln2_offset.tensor(), eps)
        .unwrap()
        .permute(&[1, 0])
        .unwrap()
        .reshape(vec![8, 4, 4])
        .unwrap()
        .conv2d(block.dwc_w.tensor(), Some(block.dwc_b.tensor()), 1, 1, 8)
        .unwrap()
        .reshape(vec![8, 16])
        .unwrap()
        .permute(&[1, 0])
        .unwrap()
        .gelu()
        .linear(block.mlp_w.tensor(), Some(block.mlp_b.tensor()))
        .unwrap()
        .add(&x)
        .unwrap();
    for (g, w) in got.to_vec().iter().zip(want.to_vec()) {
        assert!((g - w).abs() < 1e-6);
    }
}

#[test]
fn residual_block_identity_and_oracle() {
    let mut init = Init::new(SplitMix64::new(12));
    let rb = ResidualBlock::<f64>::new("rb", 4, &mut init).unwrap();
    let mut rng = SplitMix64::new(13);
    let x = Tensor::<f64>::from_vec(vec![4, 8, 8], randv(&mut rng, 256)).unwrap();

    // Random weights match the hand composition conv -> relu -> conv + skip.
    let p = rb.parameters();
    let (w1, b1, w2, b2) = (p[0], p[1], p[2], p[3]);
    let want = x
        .conv2d(w1.tensor(), Some(b1.tensor()), 1, 1, 1)
        .unwrap()
        .relu()
        .conv2d(w2.tensor(), Some(b2.tensor()), 1, 1, 1)
        .unwrap()
        .add(&x)
        .unwrap();
    let got = rb.forward(&x, false).unwrap();
    for (g, w) in got.to_vec().iter().zip(want.to_vec()) {
        assert!((g - w).abs() < 1e-6);
    }

    // Zeroed convolutions collapse to the identity, bitwise.
    for param in rb.parameters() {
        zero(param);
    }
    assert_eq!(rb.forward(&x, false).unwrap().to_vec(), x.to_vec());
}

#[test]
fn encoder_halving_chain_on_desk_config() {
    let net = DespeckleNet::<f32>::new(ModelConfig::desk(), 7).unwrap();
    let x = Tensor::<f32>::zeros(vec![1, 64, 64]).unwrap();
    let pyr = net.encoder_forward(&x, &mut Mode::Eval).unwrap();
    let dims: Vec<(usize, usize)> = pyr.maps.iter().map(|m| (m.shape()[0], m.shape()[1])).collect();
    assert_eq!(dims, vec![(16, 32), (32, 16), (64, 8)]);
}

#[test]
fn indivisible_input_is_rejected() {
    let net = DespeckleNet::<f32>::new(ModelConfig::desk(), 7).unwrap();
    let x = Tensor::<f32>::zeros(vec![1, 60, 60]).unwrap();
    let err = net.forward(&x, &mut Mode::Eval).unwrap_err().to_string();
    assert!(err.contains("divisible"), "{err}");
    let paper = DespeckleNet::<f32>::new(ModelConfig::paper(), 7).unwrap();
    let bad = Tensor::<f32>::zeros(vec![1, 250, 250]).unwrap();
    assert!(paper.forward(&bad, &mut Mode::Eval).is_err());
}

#[test]
fn forward_preserves_shape_and_stays_finite() {
    let net = DespeckleNet::<f32>::new(ModelConfig::desk(), 42).unwrap();
    let mut rng = SplitMix64::new(14);
    let x = Tensor::<f32>::from_vec(
        vec![1, 32, 32],
        (0..1024).map(|_| rng.next_f64() as f32).collect(),
    )
    .unwrap();
    let y = net.forward(&x, &mut Mode::Eval).unwrap();
    assert_eq!(y.shape(), &[1, 32, 32]);
    assert!(y.to_vec().iter().all(|v| v.is_finite()));
}

#[test]
fn inference_is_deterministic() {
    let net = DespeckleNet::<f32>::new(ModelConfig::desk(), 42).unwrap();
    let mut rng = SplitMix64::new(15);
    let x = Tensor::<f32>::from_vec(
        vec![1, 32, 32],
        (0..1024).map(|_| rng.next_f64() as f32).collect(),
    )
    .unwrap();
    let a = net.forward(&x, &mut Mode::Eval).unwrap().to_vec();
    let b = net.forward(&x, &mut Mode::Eval).unwrap().to_vec();
    assert_eq!(a, b);
}

#[test]
fn parameter_names_are_unique_and_count_matches_formula() {
    for cfg in [ModelConfig::desk(), ModelConfig::paper()] {
        let expected = cfg.parameter_count();
        let net = DespeckleNet::<f32>::new(cfg, 1).unwrap();
        assert_eq!(net.parameter_count(), expected);
        let names: std::collections::HashSet<_> =
            net.parameters().iter().map(|p| p.name().to_string()).collect();
        assert_eq!(names.len(), net.parameters().len());
    }
}

#[test]
fn tiny_model_passes_gradcheck() {
    // Two stages at minimal width keep the unit test quick; the full desk
    // configuration runs in the acceptance suite. Probing happens at a
    // non-degenerate point: q/k projections are redrawn at sigma 0.5 so the
    // attention softmax is informative, and the probe loss is kept small so
    // central differences stay above the rounding floor.
    let cfg = ModelConfig {
        stages: vec![StageConfig::new(3, 4, 1, 2), StageConfig::new(3, 8, 2, 2)],
        decoder_dim: 4,
        in_channels: 1,
    };
    let net = DespeckleNet::<f64>::new(cfg, 3).unwrap();
    let mut prng = SplitMix64::new(51);
    for p in net.parameters() {
        if p.name().contains("q_proj.weight") || p.name().contains("k_proj.weight") {
            let n = p.numel();
            p.set_data((0..n).map(|_| prng.next_trunc_normal(0.5)).collect())
                .unwrap();
        }
    }
    let mut rng = SplitMix64::new(16);
    let x = Tensor::<f64>::from_vec(
        vec![1, 16, 16],
        (0..256).map(|_| rng.next_f64()).collect(),
    )
    .unwrap();
    let params = net.parameters();
    let report = grad_check_params(
        || {
            // Dropout is 0, so the stream is never drawn from; Train mode is
            // what keeps the parameters attached to the graph.
            let mut unused = SplitMix64::new(0);
            let y = net.forward(&x, &mut Mode::Train { dropout: &mut unused })?;
            Ok(y.mul(&y)?.mean().scale(0.1))
        },
        &params,
        1e-5,
        6,
        99,
    )
    .unwrap();
    assert!(report.max_rel_err < 1e-4, "rel err {}", report.max_rel_err);
}


#[test]
fn dropout_masks_are_stream_deterministic_and_eval_ignores_them() {
    let mut cfg = StageConfig::new(3, 8, 2, 2);
    cfg.dropout = 0.5;
    let mut init = Init::new(SplitMix64::new(30));
    let block = TransformerBlock::<f64>::new("b", &cfg, &mut init).unwrap();
    let mut rng = SplitMix64::new(31);
    let tokens = Tensor::<f64>::from_vec(vec![16, 8], randv(&mut rng, 128)).unwrap();

    let run = |seed: u64| {
        let mut stream = SplitMix64::new(seed);
        block
            .forward(&tokens, 4, 4, &mut Mode::Train { dropout: &mut stream })
            .unwrap()
            .to_vec()
    };
    let a = run(1);
    let b = run(1);
    let c = run(2);
    assert_eq!(a, b, "same stream must give identical masks");
    assert_ne!(a, c, "different streams must give different masks");

    // Eval mode is deterministic and equals the no-dropout train path of a
    // zero-rate block only in expectation, so just check self-consistency.
    let e1 = block.forward(&tokens, 4, 4, &mut Mode::Eval).unwrap().to_vec();
    let e2 = block.forward(&tokens, 4, 4, &mut Mode::Eval).unwrap().to_vec();
    assert_eq!(e1, e2);
}

#[test]
fn grad_check_rejects_nondeterministic_functions() {
    let mut cfg = StageConfig::new(3, 8, 2, 2);
    cfg.dropout = 0.3;
    let mut init = Init::new(SplitMix64::new(32));
    let block = TransformerBlock::<f64>::new("b", &cfg, &mut init).unwrap();
    let mut rng = SplitMix64::new(33);
    let tokens = Tensor::<f64>::from_vec(vec![16, 8], randv(&mut rng, 128)).unwrap();
    let counter = std::cell::Cell::new(0u64);
    let params = block.parameters();
    let err = grad_check_params(
        || {
            // A fresh dropout stream per call: deliberately non-deterministic.
            counter.set(counter.get() + 1);
            let mut stream = SplitMix64::new(counter.get() * 7919);
            let y = block.forward(&tokens, 4, 4, &mut Mode::Train { dropout: &mut stream })?;
            Ok(y.mul(&y)?.sum())
        },
        &params,
        1e-5,
        2,
        1,
    )
    .unwrap_err()
    .to_string();
    assert!(err.contains("deterministic"), "{err}");
}

#[test]
fn frozen_model_supports_concurrent_inference() {
    fn assert_send_sync<T: Send + Sync>() {}
    assert_send_sync::<Tensor<f32>>();
    assert_send_sync::<DespeckleNet<f32>>();

    let net = DespeckleNet::<f32>::new(ModelConfig::desk(), 77).unwrap();
    let mut rng = SplitMix64::new(78);
    let x = Tensor::<f32>::from_vec(
        vec![1, 32, 32],
        (0..1024).map(|_| rng.next_f64() as f32).collect(),
    )
    .unwrap();
    let reference = net.despeckle(&x).unwrap().to_vec();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..2)
            .map(|_| {
                let net = &net;
                let x = &x;
                scope.spawn(move || net.despeckle(x).unwrap().to_vec())
            })
            .collect();
        for h in handles {
            assert_eq!(h.join().unwrap(), reference);
        }
    });
}

