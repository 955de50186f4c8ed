use rand::Rng;

use super::*;
use crate::autograd::grad_check;
use crate::dsp::{SourceTag, Waveform};

fn rand_tensor(shape: &[usize], seed_value: u64) -> Tensor {
    let mut rng = seed::rng(seed_value);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn rand_features(frames: usize, dim: usize, seed_value: u64) -> FeatureSequence {
    let t = rand_tensor(&[frames, dim], seed_value);
    FeatureSequence::new(t.into_data(), frames, dim, 50.0, SourceTag::Embedding).unwrap()
}

fn tiny_config() -> ModelConfig {
    ModelConfig::tiny()
}

fn gal_params<'t>(tape: &'t Tape, d: usize, seed_value: u64) -> HsGalParams<'t> {
    let v = |k: u64, shape: &[usize]| tape.constant(rand_tensor(shape, seed_value * 10 + k));
    HsGalParams {
        att_aa: v(1, &[d]),
        att_bb: v(2, &[d]),
        att_ab: v(3, &[d]),
        att_stack: v(4, &[d]),
        proj: v(5, &[d, d]),
        stack_proj: v(6, &[d, d]),
    }
}

fn pool_params<'t>(tape: &'t Tape, d: usize, seed_value: u64) -> PoolParams<'t> {
    PoolParams {
        w: tape.constant(rand_tensor(&[d, 1], seed_value)),
        b: tape.constant(rand_tensor(&[1], seed_value + 1)),
    }
}

fn branch_params<'t>(tape: &'t Tape, d: usize, seed_value: u64) -> BranchParams<'t> {
    BranchParams {
        gal: [
            gal_params(tape, d, seed_value),
            gal_params(tape, d, seed_value + 1),
        ],
        pool_spectral: [
            pool_params(tape, d, seed_value + 2),
            pool_params(tape, d, seed_value + 3),
        ],
        pool_temporal: [
            pool_params(tape, d, seed_value + 4),
            pool_params(tape, d, seed_value + 5),
        ],
    }
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol, "{x} vs {y}");
    }
}

fn tone_wave(seconds: f64) -> Waveform {
    let n = (seconds * 16_000.0) as usize;
    Waveform::new(
        (0..n)
            .map(|i| 0.3 * (2.0 * std::f64::consts::PI * 220.0 * i as f64 / 16_000.0).sin())
            .collect(),
        16_000,
    )
    .unwrap()
}

#[test]
fn config_validation() {
    ModelConfig::default().validate().unwrap();
    let c = ModelConfig {
        d_node: 3,
        ..Default::default()
    };
    assert!(matches!(c.validate(), Err(Error::Config(_))));
    let c = ModelConfig {
        f_bins: 7,
        ..Default::default()
    };
    assert!(matches!(c.validate(), Err(Error::Config(m)) if m.contains("divisible")));
    let c = ModelConfig {
        pool_keep_ratio: [0.0, 0.5],
        ..Default::default()
    };
    assert!(c.validate().is_err());
}

#[test]
fn config_rejects_unknown_keys() {
    let err = serde_json::from_str::<ModelConfig>(r#"{"d_nodes": 8}"#).unwrap_err();
    assert!(err.to_string().contains("d_nodes"));
}

#[test]
fn desk_config_shape_on_four_seconds() {
    let model = SingGraph::new(ModelConfig::default()).unwrap();
    let stem = Stem::Audio(tone_wave(4.0));
    let inputs = StemInputs {
        instrumental: Some(&stem),
        vocal: Some(&stem),
        mixture: None,
    };
    let x = model_input(model.config(), InputSetup::IV, &inputs).unwrap();
    // 20 ms frames every 10 ms: floor((64000 - 320) / 160) + 1
    assert_eq!(x.frames(), 399);
    let s = model.stages(&x).unwrap();
    // two blocks, each pooling time by 3: 399 → 133 → 44
    assert_eq!(s.encoder_map.shape(), &[16, 8, 44]);
    assert_eq!(model.config().encoded_len(399), 44);

    let stem8 = Stem::Audio(tone_wave(8.0));
    let inputs8 = StemInputs {
        instrumental: Some(&stem8),
        vocal: Some(&stem8),
        mixture: None,
    };
    let x8 = model_input(model.config(), InputSetup::IV, &inputs8).unwrap();
    let t8 = model.stages(&x8).unwrap().encoder_map.shape()[2];
    assert!((t8 as i64 - 88).abs() <= 1, "{t8}");
}

#[test]
fn zero_inputs_give_identical_maps() {
    let model = SingGraph::new(ModelConfig::default()).unwrap();
    let z = FeatureSequence::zeros(90, 120, 100.0, SourceTag::Lfcc).unwrap();
    let a = model.stages(&z).unwrap();
    let b = model.stages(&z.clone()).unwrap();
    assert_eq!(a.encoder_map, b.encoder_map);
    assert!(a.encoder_map.is_finite());
}

#[test]
fn too_short_and_wrong_width_inputs() {
    let model = SingGraph::new(tiny_config()).unwrap();
    assert!(matches!(
        model.predict(&rand_features(6, 6, 1)),
        Err(Error::Input(_))
    ));
    let mut pooled = tiny_config();
    pooled.time_pool = 3;
    let model = SingGraph::new(pooled).unwrap();
    assert_eq!(model.config().min_frames(), 9);
    assert!(matches!(
        model.predict(&rand_features(8, 8, 1)),
        Err(Error::Length(_))
    ));
    assert!(model.predict(&rand_features(9, 8, 1)).is_ok());
}

#[test]
fn missing_stems_are_input_errors() {
    let cfg = ModelConfig::default();
    let stem = Stem::Audio(tone_wave(1.0));
    let only_voc = StemInputs {
        vocal: Some(&stem),
        ..Default::default()
    };
    assert!(model_input(&cfg, InputSetup::V, &only_voc).is_ok());
    assert!(matches!(
        model_input(&cfg, InputSetup::IV, &only_voc),
        Err(Error::Input(_))
    ));
    assert!(matches!(
        model_input(&cfg, InputSetup::M, &only_voc),
        Err(Error::Input(_))
    ));
    let v = model_input(&cfg, InputSetup::V, &only_voc).unwrap();
    assert!(v
        .data()
        .chunks(120)
        .all(|row| row[..60].iter().all(|x| *x == 0.0)));
}

#[test]
fn uniform_attention_is_plain_mean() {
    let tape = Tape::new();
    let (c, f, t) = (3, 4, 5);
    let map = tape.constant(rand_tensor(&[c, f, t], 3));
    let mut eye = vec![0.0; c * c];
    for i in 0..c {
        eye[i * c + i] = 1.0;
    }
    let eye = tape.constant(Tensor::new(&[c, c], eye).unwrap());
    let p = SaParams {
        spectral_att: tape.constant(Tensor::zeros(&[c, 1])),
        temporal_att: tape.constant(Tensor::zeros(&[c, 1])),
        spectral_proj: Linear { w: eye, b: None },
        temporal_proj: Linear { w: eye, b: None },
    };
    let out = sa_aggregate(&p, map).unwrap();
    let m = map.value();
    let s = out.spectral.value();
    for fi in 0..f {
        for ci in 0..c {
            let want: f64 = (0..t).map(|ti| m.at(&[ci, fi, ti])).sum::<f64>() / t as f64;
            assert!((s.at(&[fi, ci]) - want).abs() < 1e-12);
        }
    }
    let tv = out.temporal.value();
    for ti in 0..t {
        for ci in 0..c {
            let want: f64 = (0..f).map(|fi| m.at(&[ci, fi, ti])).sum::<f64>() / f as f64;
            assert!((tv.at(&[ti, ci]) - want).abs() < 1e-12);
        }
    }
}

#[test]
fn aggregation_shapes_and_weight_sums() {
    let tape = Tape::new();
    let (c, f, t, d) = (16, 8, 29, 32);
    let p = SaParams {
        spectral_att: tape.constant(rand_tensor(&[c, 1], 1)),
        temporal_att: tape.constant(rand_tensor(&[c, 1], 2)),
        spectral_proj: Linear {
            w: tape.constant(rand_tensor(&[c, d], 3)),
            b: Some(tape.constant(rand_tensor(&[d], 4))),
        },
        temporal_proj: Linear {
            w: tape.constant(rand_tensor(&[c, d], 5)),
            b: None,
        },
    };
    let out = sa_aggregate(&p, tape.constant(rand_tensor(&[c, f, t], 6))).unwrap();
    assert_eq!(out.spectral.shape(), vec![f, d]);
    assert_eq!(out.temporal.shape(), vec![t, d]);
    for w in [out.spectral_weights.value(), out.temporal_weights.value()] {
        for r in 0..w.shape()[0] {
            assert!((w.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn single_node_graphs_and_stack() {
    let tape = Tape::new();
    let d = 4;
    let p = gal_params(&tape, d, 11);
    let a = tape.constant(rand_tensor(&[1, d], 1));
    let b = tape.constant(rand_tensor(&[1, d], 2));
    let out = hs_gal(&p, a, b, None).unwrap();
    let att = out.attention.value();
    assert_eq!(att.shape(), &[2, 2]);
    for r in 0..2 {
        assert!((att.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    // stack = mean + leaky(softmax(a_s · (mean ⊙ n_j)) @ X @ W_s)
    let (av, bv) = (a.value(), b.value());
    let mean: Vec<f64> = av
        .data()
        .iter()
        .zip(bv.data())
        .map(|(x, y)| 0.5 * (x + y))
        .collect();
    let a_s = p.att_stack.value();
    let score = |n: &[f64]| (0..d).map(|k| a_s.data()[k] * mean[k] * n[k]).sum::<f64>();
    let (sa, sb) = (score(av.data()), score(bv.data()));
    let m = sa.max(sb);
    let (ea, eb) = ((sa - m).exp(), (sb - m).exp());
    let (wa, wb) = (ea / (ea + eb), eb / (ea + eb));
    let agg: Vec<f64> = (0..d)
        .map(|k| wa * av.data()[k] + wb * bv.data()[k])
        .collect();
    let w = p.stack_proj.value();
    let want: Vec<f64> = (0..d)
        .map(|j| {
            let z: f64 = (0..d).map(|k| agg[k] * w.at(&[k, j])).sum();
            mean[j] + if z > 0.0 { z } else { LEAKY_SLOPE * z }
        })
        .collect();
    assert_close(out.stack.value().data(), &want, 1e-12);
}

#[test]
fn same_domain_scores_are_symmetric() {
    let tape = Tape::new();
    let d = 6;
    let p = gal_params(&tape, d, 5);
    let (na, nb) = (4, 3);
    let union = tape.constant(rand_tensor(&[na + nb, d], 9));
    let s = hs_gal_scores(&p, union, na).unwrap().value();
    for i in 0..na + nb {
        for j in 0..na + nb {
            if (i < na) == (j < na) {
                assert!((s.at(&[i, j]) - s.at(&[j, i])).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn permuting_second_graph_is_equivariant() {
    for trial in 0..20u64 {
        let tape = Tape::new();
        let d = 5;
        let p = gal_params(&tape, d, 100 + trial);
        let a = tape.constant(rand_tensor(&[3, d], trial));
        let bt = rand_tensor(&[4, d], 1000 + trial);
        let perm = [2usize, 0, 3, 1];
        let mut rows = vec![];
        for &r in &perm {
            rows.extend_from_slice(bt.row(r));
        }
        let bp = Tensor::new(&[4, d], rows).unwrap();
        let o1 = hs_gal(&p, a, tape.constant(bt), None).unwrap();
        let o2 = hs_gal(&p, a, tape.constant(bp), None).unwrap();
        assert_close(o1.a.value().data(), o2.a.value().data(), 1e-9);
        assert_close(o1.stack.value().data(), o2.stack.value().data(), 1e-9);
        let (b1, b2) = (o1.b.value(), o2.b.value());
        for (i, &r) in perm.iter().enumerate() {
            assert_close(b2.row(i), b1.row(r), 1e-9);
        }
    }
}

#[test]
fn stack_input_never_reaches_ordinary_nodes() {
    let tape = Tape::new();
    let d = 4;
    let p = gal_params(&tape, d, 3);
    let a = tape.constant(rand_tensor(&[2, d], 1));
    let b = tape.constant(rand_tensor(&[3, d], 2));
    let s1 = tape.constant(rand_tensor(&[1, d], 3));
    let s0 = tape.constant(Tensor::zeros(&[1, d]));
    let o1 = hs_gal(&p, a, b, Some(s1)).unwrap();
    let o0 = hs_gal(&p, a, b, Some(s0)).unwrap();
    assert_eq!(o1.a.value(), o0.a.value());
    assert_eq!(o1.b.value(), o0.b.value());
    assert_ne!(o1.stack.value(), o0.stack.value());
}

#[test]
fn mismatched_node_dims_are_shape_errors() {
    let tape = Tape::new();
    let p = gal_params(&tape, 4, 1);
    let a = tape.constant(Tensor::zeros(&[2, 4]));
    let b = tape.constant(Tensor::zeros(&[2, 5]));
    assert!(matches!(
        hs_gal(&p, a, b, None),
        Err(Error::Shape { op: "hs_gal", .. })
    ));
}

#[test]
fn pooling_counts_and_selection() {
    assert_eq!(keep_count(5, 0.5), 3);
    assert_eq!(keep_count(10, 0.7), 7);
    assert_eq!(keep_count(3, 0.01), 1);
    // 0.9 first, then the tie at 0.5 goes to the lower index
    assert_eq!(top_k_indices(&[0.5, 0.9, 0.5, 0.1], 2), vec![0, 1]);

    let tape = Tape::new();
    let d = 3;
    let pp = pool_params(&tape, d, 4);
    let g = tape.constant(rand_tensor(&[5, d], 8));
    let all = graph_pool(&pp, g, 1.0).unwrap();
    assert_eq!(all.kept, vec![0, 1, 2, 3, 4]);
    let gv = g.value();
    let nv = all.nodes.value();
    for i in 0..5 {
        let want: Vec<f64> = gv.row(i).iter().map(|x| x * all.scores[i]).collect();
        assert_close(nv.row(i), &want, 0.0);
    }
    let half = graph_pool(&pp, g, 0.5).unwrap();
    assert_eq!(half.kept.len(), 3);

    for trial in 0..50 {
        let n = 2 + trial % 9;
        let g = tape.constant(rand_tensor(&[n, d], 50 + trial as u64));
        let out = graph_pool(&pp, g, 0.6).unwrap();
        let k = keep_count(n, 0.6);
        let mut brute: Vec<usize> = (0..n).collect();
        brute.sort_by(|&i, &j| out.scores[j].partial_cmp(&out.scores[i]).unwrap());
        let mut brute: Vec<usize> = brute[..k].to_vec();
        brute.sort();
        assert_eq!(out.kept, brute);
    }
}

#[test]
fn tied_branches_are_idempotent_under_max() {
    let tape = Tape::new();
    let d = 6;
    let b0 = branch_params(&tape, d, 1);
    let s = tape.constant(rand_tensor(&[8, d], 2));
    let t = tape.constant(rand_tensor(&[12, d], 3));
    let out = mgo(&[b0, b0], s, t, [0.5, 0.7]).unwrap();
    assert_eq!(
        out.merged.spectral.value(),
        out.branches[0].spectral.value()
    );
    assert_eq!(
        out.merged.temporal.value(),
        out.branches[0].temporal.value()
    );
    assert_eq!(out.merged.stack.value(), out.branches[0].stack.value());
    assert_eq!(out.merged.spectral.shape(), vec![3, d]);
    assert_eq!(out.merged.temporal.shape(), vec![5, d]);

    let b1 = branch_params(&tape, d, 40);
    let out = mgo(&[b0, b1], s, t, [0.5, 0.7]).unwrap();
    let m = out.merged.stack.value();
    for br in &out.branches {
        let v = br.stack.value();
        assert!(m.data().iter().zip(v.data()).all(|(a, b)| a >= b));
    }
}

#[test]
fn mgo_gradients_follow_the_winning_branch() {
    // toy graph: one spectral and one temporal node, two branches
    let d = 4;
    let mut params = vec![rand_tensor(&[1, d], 1), rand_tensor(&[1, d], 2)];
    for b in 0..2u64 {
        for k in 0..(2 * 6 + 4 * 2) as u64 {
            let shape: &[usize] = match k {
                4 | 5 | 10 | 11 => &[d, d],
                12..=19 if k % 2 == 0 => &[d, 1],
                12..=19 => &[1],
                _ => &[d],
            };
            params.push(rand_tensor(shape, 100 * (b + 1) + k));
        }
    }
    let rep = grad_check(
        |_, v| {
            let br = |o: usize| BranchParams {
                gal: [
                    HsGalParams {
                        att_aa: v[o],
                        att_bb: v[o + 1],
                        att_ab: v[o + 2],
                        att_stack: v[o + 3],
                        proj: v[o + 4],
                        stack_proj: v[o + 5],
                    },
                    HsGalParams {
                        att_aa: v[o + 6],
                        att_bb: v[o + 7],
                        att_ab: v[o + 8],
                        att_stack: v[o + 9],
                        proj: v[o + 10],
                        stack_proj: v[o + 11],
                    },
                ],
                pool_spectral: [
                    PoolParams {
                        w: v[o + 12],
                        b: v[o + 13],
                    },
                    PoolParams {
                        w: v[o + 14],
                        b: v[o + 15],
                    },
                ],
                pool_temporal: [
                    PoolParams {
                        w: v[o + 16],
                        b: v[o + 17],
                    },
                    PoolParams {
                        w: v[o + 18],
                        b: v[o + 19],
                    },
                ],
            };
            let out = mgo(&[br(2), br(22)], v[0], v[1], [1.0, 1.0])?;
            readout(out.merged.spectral, out.merged.temporal, out.merged.stack)?
                .mul(v[0].tape().constant(rand_tensor(&[5 * d], 77)))?
                .sum_all()
        },
        &params,
        1e-5,
    )
    .unwrap();
    assert!(rep.max_rel_error < 1e-6, "{rep:?}");

    // with identical branches every tie resolves to the first branch
    let mut tied = params.clone();
    for k in 0..20 {
        tied[22 + k] = tied[2 + k].clone();
    }
    let tape = Tape::new();
    let v: Vec<Var<'_>> = tied.iter().map(|t| tape.param(t.clone())).collect();
    let br = |o: usize| BranchParams {
        gal: [
            HsGalParams {
                att_aa: v[o],
                att_bb: v[o + 1],
                att_ab: v[o + 2],
                att_stack: v[o + 3],
                proj: v[o + 4],
                stack_proj: v[o + 5],
            },
            HsGalParams {
                att_aa: v[o + 6],
                att_bb: v[o + 7],
                att_ab: v[o + 8],
                att_stack: v[o + 9],
                proj: v[o + 10],
                stack_proj: v[o + 11],
            },
        ],
        pool_spectral: [
            PoolParams {
                w: v[o + 12],
                b: v[o + 13],
            },
            PoolParams {
                w: v[o + 14],
                b: v[o + 15],
            },
        ],
        pool_temporal: [
            PoolParams {
                w: v[o + 16],
                b: v[o + 17],
            },
            PoolParams {
                w: v[o + 18],
                b: v[o + 19],
            },
        ],
    };
    let out = mgo(&[br(2), br(22)], v[0], v[1], [1.0, 1.0]).unwrap();
    let loss = readout(out.merged.spectral, out.merged.temporal, out.merged.stack)
        .unwrap()
        .sum_all()
        .unwrap();
    tape.backward(loss).unwrap();
    assert!(tape.saw_ties());
    for k in 0..20 {
        let g = v[22 + k].grad().unwrap();
        assert!(
            g.data().iter().all(|x| *x == 0.0),
            "second branch param {k} got gradient"
        );
    }
    assert!(v[2 + 4].grad().unwrap().data().iter().any(|x| *x != 0.0));
}

#[test]
fn readout_layout_and_invariance() {
    let tape = Tape::new();
    let d = 3;
    let s = tape.constant(rand_tensor(&[1, d], 1));
    let t = tape.constant(rand_tensor(&[1, d], 2));
    let st = tape.constant(rand_tensor(&[1, d], 3));
    let h = readout(s, t, st).unwrap().value();
    let mut want = vec![];
    for part in [s, s, t, t, st] {
        want.extend_from_slice(part.value().data());
    }
    assert_eq!(h.data(), want.as_slice());

    for trial in 0..20u64 {
        let n = 2 + (trial as usize % 6);
        let a = rand_tensor(&[n, d], 10 + trial);
        let rev: Vec<f64> = (0..n).rev().flat_map(|r| a.row(r).to_vec()).collect();
        let ar = Tensor::new(&[n, d], rev).unwrap();
        let h1 = readout(tape.constant(a), t, st).unwrap().value();
        let h2 = readout(tape.constant(ar), t, st).unwrap().value();
        assert_eq!(h1.numel(), 5 * d);
        assert_close(h1.data(), h2.data(), 1e-12);
    }
}

#[test]
fn forward_is_deterministic() {
    let x = rand_features(20, 8, 4);
    let a = SingGraph::new(tiny_config()).unwrap().predict(&x).unwrap();
    let b = SingGraph::new(tiny_config()).unwrap().predict(&x).unwrap();
    assert_eq!(a.logits[0].to_bits(), b.logits[0].to_bits());
    assert_eq!(a.logits[1].to_bits(), b.logits[1].to_bits());
    assert_eq!(a.score, a.logits[0] - a.logits[1]);
}

#[test]
fn tying_branches_copies_parameters() {
    let mut m = SingGraph::new(tiny_config()).unwrap();
    m.tie_mgo_branches();
    for (name, t) in m.params().iter() {
        if let Some(rest) = name.strip_prefix("mgo.0.") {
            assert_eq!(m.params().get(&format!("mgo.1.{rest}")).unwrap(), t);
        }
    }
}

#[test]
fn full_model_gradients_match_finite_differences() {
    let cfg = tiny_config();
    assert_eq!(cfg.encoded_len(GRADCHECK_FRAMES), GRADCHECK_FRAMES);
    let rep = model_grad_check(&cfg, GRADCHECK_SEED, GRADCHECK_EPS).unwrap();
    assert!(rep.train.checked > 1000);
    assert!(
        rep.max_rel_error() < 1e-5,
        "{rep:?} worst {:?}",
        rep.worst()
    );
}

#[test]
fn running_stats_move_toward_batch_stats() {
    let mut m = SingGraph::new(tiny_config()).unwrap();
    let x = rand_features(6, 8, 3);
    let tape = Tape::new();
    let vars = m.bind(&tape, true);
    let pass = m.forward_on(&vars, &x, Mode::Train).unwrap();
    let stats = pass.bn_stats.clone();
    assert_eq!(stats.len(), 4);
    m.update_running_stats(std::slice::from_ref(&stats))
        .unwrap();
    let (name, mean, var) = &stats[0];
    let rm = m.buffers().get(&format!("{name}.running_mean")).unwrap();
    let rv = m.buffers().get(&format!("{name}.running_var")).unwrap();
    for i in 0..mean.len() {
        assert!((rm.data()[i] - BN_MOMENTUM * mean[i]).abs() < 1e-15);
        assert!((rv.data()[i] - (1.0 - BN_MOMENTUM + BN_MOMENTUM * var[i])).abs() < 1e-15);
    }
}

#[test]
fn checkpoint_round_trip_and_mismatch() {
    let mut m = SingGraph::new(tiny_config()).unwrap();
    m.params_mut().tensors_mut()[0].data_mut()[0] = 0.123;
    let bytes = encode_checkpoint(&m).unwrap();
    let back = decode_checkpoint(&bytes, Some(m.config())).unwrap();
    assert_eq!(back, m);
    assert_eq!(encode_checkpoint(&back).unwrap(), bytes);

    let mut other = tiny_config();
    other.d_node = 12;
    assert!(matches!(
        decode_checkpoint(&bytes, Some(&other)),
        Err(Error::Config(_))
    ));
    assert!(matches!(
        decode_checkpoint(&bytes[..bytes.len() - 5], None),
        Err(Error::Length(_))
    ));
    assert!(matches!(
        decode_checkpoint(b"nonsense", None),
        Err(Error::Format(_))
    ));
}

/// Across several seeds, every coordinate agrees with central differences up
/// to the rounding floor of the difference quotient itself: about
/// `ulp(loss) / eps`, which dominates for coordinates whose true gradient is
/// below ~1e-6.
#[test]
fn full_model_gradients_agree_up_to_the_difference_noise_floor() {
    let eps = 1e-5;
    for model_seed in 0..3u64 {
        let mut cfg = tiny_config();
        cfg.seed = model_seed;
        let model = SingGraph::new(cfg).unwrap();
        let x = rand_features(6, 8, 200 + model_seed);
        let loss = |ps: &[Tensor]| {
            let tape = Tape::new();
            let leaves: Vec<_> = ps.iter().map(|p| tape.param(p.clone())).collect();
            model
                .loss_on(&leaves, &x, 0, 1.0, Mode::Train)
                .unwrap()
                .0
                .item()
        };
        let tape = Tape::new();
        let leaves = model.bind(&tape, true);
        let l = model.loss_on(&leaves, &x, 0, 1.0, Mode::Train).unwrap().0;
        let floor = 8.0 * f64::EPSILON * l.item().abs() / eps;
        tape.backward(l).unwrap();
        let params = model.params().tensors().to_vec();
        for (pi, p) in params.iter().enumerate() {
            let analytic = leaves[pi].grad().unwrap();
            for c in 0..p.numel() {
                let mut shifted = params.clone();
                shifted[pi].data_mut()[c] += eps;
                let up = loss(&shifted);
                shifted[pi].data_mut()[c] -= 2.0 * eps;
                let numeric = (up - loss(&shifted)) / (2.0 * eps);
                let a = analytic.data()[c];
                let tol = 1e-5 * a.abs().max(numeric.abs()) + floor;
                assert!(
                    (a - numeric).abs() <= tol,
                    "seed {model_seed} {}[{c}]: analytic {a:e} numeric {numeric:e}",
                    model.params().names()[pi]
                );
            }
        }
    }
}
