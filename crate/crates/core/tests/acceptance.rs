//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Run with `cargo test -p singgraph --test acceptance`.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::StandardNormal;

use singgraph::augment::{augment_segment, rawboost_si, AugmentPlan, RawBoostConfig};
use singgraph::autograd::{grad_check, BatchNormMode, Tape, Tensor, Var};
use singgraph::dsp::{lfcc, measure_snr, stft_power, LfccConfig, Waveform};
use singgraph::manifest::{build_tempo_index, ClipRecord, Label, Manifest, Split};
use singgraph::model::{
    encode_checkpoint, hs_gal, keep_count, mgo, mgo_branch, model_grad_check, readout,
    sa_aggregate, BranchParams, HsGalParams, Linear, ModelConfig, PoolParams, SaParams,
    GRADCHECK_EPS, GRADCHECK_SEED,
};
use singgraph::synth::{formant_vocal, synth_corpus, SynthConfig};
use singgraph::train::{compute_eer, score, train, TrainConfig};
use singgraph::{par, seed};

type Outcome = Result<String, String>;

const TOL: f64 = 1e-9;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rand_tensor(shape: &[usize], seed_value: u64) -> Tensor {
    let mut rng = seed::rng(seed_value);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn permute_rows(t: &Tensor, perm: &[usize]) -> Tensor {
    let rows: Vec<f64> = perm.iter().flat_map(|&r| t.row(r).to_vec()).collect();
    Tensor::new(t.shape(), rows).unwrap()
}

fn shuffled(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        p.swap(i, rng.random_range(0..=i));
    }
    p
}

// ---------------------------------------------------------------- 1

fn c1_documentation() -> Outcome {
    let readme = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../README.md"))
        .map_err(|e| format!("README.md unreadable: {e}"))?;
    for needle in ["0.54", "4.01", "6.23", "6.30"] {
        check(readme.contains(needle), || {
            format!("README lacks reference EER {needle}")
        })?;
    }
    Ok("reference EERs documented; reproduction impossible without the dataset".into())
}

// ---------------------------------------------------------------- 2

fn c2_gradients() -> Outcome {
    let start = Instant::now();
    let report = model_grad_check(&ModelConfig::tiny(), GRADCHECK_SEED, GRADCHECK_EPS)
        .map_err(|e| e.to_string())?;
    let full = report.max_rel_error();
    check(full < 1e-5, || {
        format!("full-model max relative error {full:e}")
    })?;

    type OpFn = for<'t> fn(&'t Tape, &[Var<'t>]) -> singgraph::Result<Var<'t>>;
    let ops: Vec<(&str, Vec<Vec<usize>>, OpFn)> = vec![
        ("matmul+sigmoid", vec![vec![3, 4], vec![4, 5]], |t, v| {
            let y = v[0].matmul(v[1])?.sigmoid()?;
            let n = y.value().numel();
            y.reshape(&[n])?.mul(weights_of(t, n, 1))?.sum_all()
        }),
        ("log_softmax", vec![vec![4, 6]], |t, v| {
            v[0].log_softmax(1)?
                .reshape(&[24])?
                .mul(weights_of(t, 24, 2))?
                .sum_all()
        }),
        ("conv1d", vec![vec![2, 3, 9], vec![4, 3, 3]], |t, v| {
            let y = v[0].conv1d(v[1], 1, 1)?;
            let n = y.value().numel();
            y.reshape(&[n])?.mul(weights_of(t, n, 3))?.sum_all()
        }),
        (
            "batchnorm1d",
            vec![vec![2, 3, 5], vec![3], vec![3]],
            |t, v| {
                let (y, _) = v[0].batchnorm1d(v[1], v[2], BatchNormMode::Train)?;
                y.reshape(&[30])?.mul(weights_of(t, 30, 4))?.sum_all()
            },
        ),
        ("softmax+permute", vec![vec![2, 3, 4]], |t, v| {
            v[0].permute(&[2, 0, 1])?
                .softmax(2)?
                .reshape(&[24])?
                .mul(weights_of(t, 24, 5))?
                .sum_all()
        }),
        ("leaky_relu+mean", vec![vec![5, 3]], |t, v| {
            v[0].scale(1.7)?
                .leaky_relu(0.2)?
                .mean(0)?
                .mul(weights_of(t, 3, 6))?
                .sum_all()
        }),
        ("selu+exp+log", vec![vec![6]], |t, v| {
            v[0].selu()?
                .exp()?
                .add_scalar(1.0)?
                .log()?
                .mul(weights_of(t, 6, 7))?
                .sum_all()
        }),
    ];
    let mut worst_op = 0.0f64;
    for (k, (name, shapes, f)) in ops.iter().enumerate() {
        let params: Vec<Tensor> = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| rand_tensor(s, 1000 + 10 * k as u64 + i as u64))
            .collect();
        let rep = grad_check(f, &params, 1e-5).map_err(|e| format!("{name}: {e}"))?;
        check(rep.max_rel_error < 1e-6, || {
            format!("{name}: max relative error {:e}", rep.max_rel_error)
        })?;
        worst_op = worst_op.max(rep.max_rel_error);
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "full model {full:.2e} over {} coords; {} per-op checks, worst {worst_op:.2e}; {secs:.1}s",
        report.train.checked + report.eval.checked,
        ops.len()
    ))
}

fn weights_of(tape: &Tape, n: usize, s: u64) -> Var<'_> {
    tape.constant(rand_tensor(&[n], 77 + s))
}

// ---------------------------------------------------------------- 3

fn c3_overfit() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let synth = SynthConfig {
        seed: 7,
        splits: vec![(Split::Train, 32)],
        ..Default::default()
    };
    let m = synth_corpus(&synth, dir.path()).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        epochs: 200,
        select_split: Split::Train,
        target_eer: Some(0.0),
        ..Default::default()
    };
    let out = train(
        &cfg,
        &ModelConfig::default(),
        &RawBoostConfig::default(),
        &m,
        &mut |_| Ok(()),
    )
    .map_err(|e| e.to_string())?;
    let last = out.log.last().ok_or("no epoch ran")?;
    let eer = last.val_eer.ok_or("no train EER computed")?;
    check(eer == 0.0, || {
        format!("train EER {eer} after {} epochs", out.log.len())
    })?;

    // independent confirmation: every bona fide score above every spoof score
    let scored = score(
        &out.model,
        &m,
        Split::Train,
        cfg.input_setup,
        cfg.clip_dur_s,
    )
    .map_err(|e| e.to_string())?;
    check(scored.errors.is_empty(), || {
        format!("{} clips failed", scored.errors.len())
    })?;
    let rows = scored.scores.rows();
    let min_bona = rows
        .iter()
        .filter(|r| r.label == Some(Label::Bonafide))
        .map(|r| r.score)
        .fold(f64::INFINITY, f64::min);
    let max_spoof = rows
        .iter()
        .filter(|r| r.label == Some(Label::Spoof))
        .map(|r| r.score)
        .fold(f64::NEG_INFINITY, f64::max);
    check(min_bona > max_spoof, || {
        format!("bona min {min_bona} <= spoof max {max_spoof}")
    })?;
    let secs = start.elapsed().as_secs_f64();
    check(secs < 600.0, || format!("took {secs:.0}s"))?;
    Ok(format!(
        "train EER 0.000 after {} epoch(s), margin {:.3}, {secs:.1}s",
        out.log.len(),
        min_bona - max_spoof
    ))
}

// ---------------------------------------------------------------- 4

fn c4_rawboost_snr() -> Outcome {
    let cfg = RawBoostConfig::default();
    let mut worst = 0.0f64;
    let mut hits = 0;
    for draw in 0..100u64 {
        let mut rng = seed::rng(draw);
        let voc =
            formant_vocal(1.0 + draw as f64 % 3.0, 16_000, &mut rng).map_err(|e| e.to_string())?;
        let b = rawboost_si(&voc, &cfg, &mut rng).map_err(|e| e.to_string())?;
        check((10.0..=40.0).contains(&b.target_snr_db), || {
            format!("target {} outside [10, 40]", b.target_snr_db)
        })?;
        let noise: Vec<f64> = b
            .waveform
            .samples()
            .iter()
            .zip(voc.samples())
            .map(|(o, i)| o - i)
            .collect();
        let noise = Waveform::new(noise, 16_000).map_err(|e| e.to_string())?;
        let realized = measure_snr(&voc, &noise).map_err(|e| e.to_string())?;
        let err = (realized - b.target_snr_db).abs();
        worst = worst.max(err);
        if err <= 0.1 {
            hits += 1;
        }
    }
    check(hits == 100, || {
        format!("{hits}/100 within 0.1 dB, worst {worst:.3} dB")
    })?;
    Ok(format!(
        "100/100 within 0.1 dB, worst deviation {worst:.2e} dB"
    ))
}

// ---------------------------------------------------------------- 5

const TRACK_S: f64 = 20.0;
const SEGMENT_S: f64 = 4.0;

fn beat_corpus() -> Manifest {
    let mut rng = seed::rng(55);
    let records = (0..50)
        .map(|i| {
            // ten tempo centres, five tracks each, all inside one 2-BPM bucket
            let bpm = 90.0 + 6.0 * (i % 10) as f64 + 0.1 + rng.random_range(0.0..1.8);
            let bar = 4.0 * 60.0 / bpm;
            let offset = rng.random_range(0.0..bar);
            let mut downbeats = vec![];
            let mut t = offset;
            while t < TRACK_S {
                let jitter: f64 = rng.random_range(-0.02..0.02);
                let d = (t + jitter).max(0.0);
                if downbeats.last().is_none_or(|&l: &f64| d > l) {
                    downbeats.push(d);
                }
                t += bar;
            }
            ClipRecord {
                clip_id: format!("track{i:02}"),
                label: if i % 2 == 0 {
                    Label::Bonafide
                } else {
                    Label::Spoof
                },
                singer_id: format!("singer{}", i % 7),
                split: Split::Train,
                vocal_path: format!("audio/track{i:02}.voc.wav"),
                instrumental_path: format!("audio/track{i:02}.ins.wav"),
                embedding_voc_path: None,
                embedding_ins_path: None,
                tempo_bpm: Some(bpm),
                downbeats_s: downbeats,
            }
        })
        .collect();
    Manifest::new(records, ".").unwrap()
}

/// Exhaustive search for the phase-optimal downbeat: over every downbeat that
/// leaves room for the segment, minimize the distance between its position
/// within the bar and the segment start's position within the bar. The bar
/// is the median downbeat spacing.
fn phase_optimal_downbeat(downbeats: &[f64], start_s: f64) -> Option<f64> {
    let mut gaps: Vec<f64> = downbeats.windows(2).map(|w| w[1] - w[0]).collect();
    gaps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let bar = match gaps.len() {
        0 => None,
        n if n % 2 == 1 => Some(gaps[n / 2]),
        n => Some((gaps[n / 2 - 1] + gaps[n / 2]) / 2.0),
    };
    let phase = |x: f64, p: f64| x - p * (x / p).floor();
    let mut best: Option<(f64, f64)> = None;
    for &d in downbeats.iter().filter(|&&d| d + SEGMENT_S <= TRACK_S) {
        let cost = bar.map_or(0.0, |p| (phase(d, p) - phase(start_s, p)).abs());
        if best.is_none_or(|(_, c)| cost < c) {
            best = Some((d, cost));
        }
    }
    best.map(|(d, _)| d)
}

fn c5_beat_matching() -> Outcome {
    let m = beat_corpus();
    let idx = build_tempo_index(&m, 2.0).map_err(|e| e.to_string())?;
    let by_id: HashMap<&str, &ClipRecord> =
        m.records.iter().map(|r| (r.clip_id.as_str(), r)).collect();
    let silent = Waveform::zeros((TRACK_S * 16_000.0) as usize, 16_000).unwrap();
    let load = |_: &ClipRecord| Ok(silent.clone());
    let plan = AugmentPlan {
        rawboost: None,
        beat_matching: Some((&idx, &m)),
    };
    let (mut same_bucket, mut aligned) = (0, 0);
    let mut rng = seed::rng(5);
    for n in 0..1000u64 {
        let src = &m.records[rng.random_range(0..m.records.len())];
        let start = rng.random_range(0.0..TRACK_S - SEGMENT_S);
        let pair = augment_segment(src, &silent, &silent, start, SEGMENT_S, &plan, &load, n)
            .map_err(|e| e.to_string())?;
        let Some(rep) = pair.provenance.replacement_clip_id.as_deref() else {
            continue;
        };
        if idx.key_of(rep).is_some()
            && idx.key_of(rep) == idx.key_of(&src.clip_id)
            && rep != src.clip_id
        {
            same_bucket += 1;
        }
        let rep = by_id[rep];
        let offset = pair.provenance.offset_s;
        let member = rep.downbeats_s.contains(&offset);
        let oracle = phase_optimal_downbeat(&rep.downbeats_s, start);
        if member && oracle.is_some_and(|o| (o - offset).abs() <= 0.010) {
            aligned += 1;
        }
    }
    check(same_bucket == 1000, || {
        format!("(a) {same_bucket}/1000 replacements share the bucket")
    })?;
    check(aligned == 1000, || {
        format!("(b) {aligned}/1000 starts on the phase-optimal downbeat")
    })?;
    Ok("(a) 1000/1000 same tempo bucket; (b) 1000/1000 on the phase-optimal downbeat".into())
}

// ---------------------------------------------------------------- 6

/// Exhaustive sweep: every distinct score and `+inf` as the threshold, a
/// clip accepted iff its score is at or above it. Returns the EER and whether
/// it fell exactly on an operating point.
fn brute_force_eer(scores: &[(f64, Label)]) -> (f64, bool) {
    let bona: Vec<f64> = scores
        .iter()
        .filter(|s| s.1 == Label::Bonafide)
        .map(|s| s.0)
        .collect();
    let spoof: Vec<f64> = scores
        .iter()
        .filter(|s| s.1 == Label::Spoof)
        .map(|s| s.0)
        .collect();
    let mut thresholds: Vec<f64> = scores.iter().map(|s| s.0).collect();
    thresholds.push(f64::INFINITY);
    thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    thresholds.dedup();
    let rates = |tau: f64| {
        let far = spoof.iter().filter(|&&s| s >= tau).count() as f64 / spoof.len() as f64;
        let frr = bona.iter().filter(|&&s| s < tau).count() as f64 / bona.len() as f64;
        (far, frr)
    };
    let mut prev: Option<(f64, f64)> = None;
    for &tau in &thresholds {
        let (far, frr) = rates(tau);
        if frr >= far {
            return match prev {
                Some((far0, frr0)) if frr != far => {
                    // where the segment between the two points meets FAR = FRR
                    let eer = (far0 * frr - far * frr0) / ((frr - frr0) - (far - far0));
                    (eer, false)
                }
                _ => (far, true),
            };
        }
        prev = Some((far, frr));
    }
    unreachable!("the +inf threshold rejects everything")
}

fn c6_eer_oracle() -> Outcome {
    let mut rng = seed::rng(6);
    let (mut exact, mut interp) = (0, 0);
    let mut worst = 0.0f64;
    for set in 0..1000 {
        let nb = rng.random_range(2..=500);
        let ns = rng.random_range(2..=500);
        let shift: f64 = rng.random_range(-1.0..3.0);
        // every third set is coarsely quantized to force ties
        let quant = if set % 3 == 0 { 4.0 } else { 1e6 };
        let mut draw =
            |mu: f64| ((mu + rng.sample::<f64, _>(StandardNormal)) * quant).round() / quant;
        let mut scores: Vec<(f64, Label)> =
            (0..nb).map(|_| (draw(shift), Label::Bonafide)).collect();
        scores.extend((0..ns).map(|_| (draw(0.0), Label::Spoof)));
        let got = compute_eer(&scores).map_err(|e| e.to_string())?.eer;
        let (want, on_point) = brute_force_eer(&scores);
        if on_point {
            check(got == want, || {
                format!("set {set}: {got} != {want} at an operating point")
            })?;
            exact += 1;
        } else {
            let d = (got - want).abs();
            check(d <= 1e-12, || {
                format!("set {set}: interpolated {got} vs {want}")
            })?;
            worst = worst.max(d);
            interp += 1;
        }
    }

    let separated: Vec<(f64, Label)> = (0..50)
        .map(|i| (1.0 + i as f64, Label::Bonafide))
        .chain((0..50).map(|i| (-1.0 - i as f64, Label::Spoof)))
        .collect();
    let sep = compute_eer(&separated).map_err(|e| e.to_string())?.eer;
    check(sep == 0.0, || format!("perfect separation gives {sep}"))?;

    let mut same = vec![];
    for _ in 0..500 {
        same.push((rng.sample::<f64, _>(StandardNormal), Label::Bonafide));
        same.push((rng.sample::<f64, _>(StandardNormal), Label::Spoof));
    }
    let mid = compute_eer(&same).map_err(|e| e.to_string())?.eer;
    check((mid - 0.5).abs() <= 0.05, || {
        format!("identical distributions give {mid}")
    })?;
    Ok(format!(
        "1000/1000 sets agree ({exact} exact, {interp} interpolated, worst {worst:.1e}); separated 0.0; identical {mid:.3}"
    ))
}

// ---------------------------------------------------------------- 7

fn gal_params<'t>(tape: &'t Tape, d: usize, s: u64) -> HsGalParams<'t> {
    let v = |k: u64, shape: &[usize]| tape.constant(rand_tensor(shape, s * 10 + k));
    HsGalParams {
        att_aa: v(1, &[d]),
        att_bb: v(2, &[d]),
        att_ab: v(3, &[d]),
        att_stack: v(4, &[d]),
        proj: v(5, &[d, d]),
        stack_proj: v(6, &[d, d]),
    }
}

fn pool_params<'t>(tape: &'t Tape, d: usize, s: u64) -> PoolParams<'t> {
    PoolParams {
        w: tape.constant(rand_tensor(&[d, 1], s)),
        b: tape.constant(rand_tensor(&[1], s + 1)),
    }
}

fn branch_params<'t>(tape: &'t Tape, d: usize, s: u64) -> BranchParams<'t> {
    BranchParams {
        gal: [gal_params(tape, d, s), gal_params(tape, d, s + 1)],
        pool_spectral: [pool_params(tape, d, s + 2), pool_params(tape, d, s + 4)],
        pool_temporal: [pool_params(tape, d, s + 6), pool_params(tape, d, s + 8)],
    }
}

fn c7_invariants() -> Outcome {
    const N: u64 = 25;
    let mut rng = seed::rng(7);
    let mut worst = 0.0f64;

    // HS-GAL: permuting nodes within each graph permutes the outputs alike
    for i in 0..N {
        let tape = Tape::new();
        let d = rng.random_range(4..9);
        let (na, nb) = (rng.random_range(1..7), rng.random_range(1..7));
        let p = gal_params(&tape, d, 100 + i);
        let (a, b) = (
            rand_tensor(&[na, d], 200 + i),
            rand_tensor(&[nb, d], 300 + i),
        );
        let (pa, pb) = (shuffled(na, &mut rng), shuffled(nb, &mut rng));
        let o = hs_gal(&p, tape.constant(a.clone()), tape.constant(b.clone()), None)
            .map_err(|e| e.to_string())?;
        let q = hs_gal(
            &p,
            tape.constant(permute_rows(&a, &pa)),
            tape.constant(permute_rows(&b, &pb)),
            None,
        )
        .map_err(|e| e.to_string())?;
        for (orig, perm, pm) in [(o.a, q.a, &pa), (o.b, q.b, &pb)] {
            let e = max_abs_diff(permute_rows(&orig.value(), pm).data(), perm.value().data());
            worst = worst.max(e);
            check(e <= TOL, || format!("HS-GAL equivariance off by {e:e}"))?;
        }
        let e = max_abs_diff(o.stack.value().data(), q.stack.value().data());
        check(e <= TOL, || format!("HS-GAL stack not invariant: {e:e}"))?;
    }

    // readout: invariant to node order
    for i in 0..N {
        let tape = Tape::new();
        let d = rng.random_range(2..9);
        let (ns, nt) = (rng.random_range(1..10), rng.random_range(1..10));
        let (s, t, st) = (
            rand_tensor(&[ns, d], 400 + i),
            rand_tensor(&[nt, d], 500 + i),
            rand_tensor(&[1, d], 600 + i),
        );
        let h1 = readout(
            tape.constant(s.clone()),
            tape.constant(t.clone()),
            tape.constant(st.clone()),
        )
        .map_err(|e| e.to_string())?;
        let h2 = readout(
            tape.constant(permute_rows(&s, &shuffled(ns, &mut rng))),
            tape.constant(permute_rows(&t, &shuffled(nt, &mut rng))),
            tape.constant(st),
        )
        .map_err(|e| e.to_string())?;
        let e = max_abs_diff(h1.value().data(), h2.value().data());
        worst = worst.max(e);
        check(e <= TOL, || format!("readout invariance off by {e:e}"))?;
    }

    // attention rows are distributions
    for i in 0..N {
        let tape = Tape::new();
        let (c, f, t, d) = (
            rng.random_range(1..6),
            rng.random_range(1..6),
            rng.random_range(1..8),
            rng.random_range(4..8),
        );
        let v = |k: u64, shape: &[usize]| {
            tape.constant(rand_tensor(shape, 700 + 10 * i + k).into_scaled(3.0))
        };
        let sa = SaParams {
            spectral_att: v(0, &[c, 1]),
            temporal_att: v(1, &[c, 1]),
            spectral_proj: Linear {
                w: v(2, &[c, d]),
                b: Some(v(3, &[d])),
            },
            temporal_proj: Linear {
                w: v(4, &[c, d]),
                b: Some(v(5, &[d])),
            },
        };
        let out = sa_aggregate(&sa, v(6, &[c, f, t])).map_err(|e| e.to_string())?;
        let g = hs_gal(
            &gal_params(&tape, d, 800 + i),
            out.spectral,
            out.temporal,
            None,
        )
        .map_err(|e| e.to_string())?;
        for w in [
            out.spectral_weights,
            out.temporal_weights,
            g.attention,
            g.stack_attention,
        ] {
            let w = w.value();
            let cols = w.shape()[1];
            for r in w.data().chunks(cols) {
                let e = (r.iter().sum::<f64>() - 1.0).abs();
                worst = worst.max(e);
                check(e <= TOL && r.iter().all(|x| *x >= 0.0), || {
                    format!("softmax row sums to 1{e:+e}")
                })?;
            }
        }
    }

    // the stack node passes through pooling untouched while ordinary nodes are pruned
    for i in 0..N {
        let tape = Tape::new();
        let d = rng.random_range(4..8);
        let (ns, nt) = (rng.random_range(1..12), rng.random_range(1..12));
        let ratios = [rng.random_range(0.05..1.0), rng.random_range(0.05..1.0)];
        let p = branch_params(&tape, d, 900 + 20 * i);
        let (s, t) = (
            tape.constant(rand_tensor(&[ns, d], 1900 + i)),
            tape.constant(rand_tensor(&[nt, d], 2900 + i)),
        );
        let out = mgo_branch(&p, s, t, ratios).map_err(|e| e.to_string())?;
        check(out.stack.shape() == [1, d], || {
            format!("stack shape {:?}", out.stack.shape())
        })?;
        let want_s = keep_count(keep_count(ns, ratios[0]), ratios[1]);
        let want_t = keep_count(keep_count(nt, ratios[0]), ratios[1]);
        check(
            out.spectral.shape()[0] == want_s && out.temporal.shape()[0] == want_t,
            || {
                format!(
                    "pooled to {:?}/{:?}",
                    out.spectral.shape(),
                    out.temporal.shape()
                )
            },
        )?;
        // replay the second attention layer on the stage-1 pooled graph: its
        // stack output must be exactly the branch's stack
        let g1 = hs_gal(&p.gal[0], s, t, None).map_err(|e| e.to_string())?;
        let ps = singgraph::model::graph_pool(&p.pool_spectral[0], g1.a, ratios[0])
            .map_err(|e| e.to_string())?;
        let pt = singgraph::model::graph_pool(&p.pool_temporal[0], g1.b, ratios[0])
            .map_err(|e| e.to_string())?;
        let g2 =
            hs_gal(&p.gal[1], ps.nodes, pt.nodes, Some(g1.stack)).map_err(|e| e.to_string())?;
        let e = max_abs_diff(g2.stack.value().data(), out.stack.value().data());
        check(e <= TOL, || format!("stack changed by pooling: {e:e}"))?;
    }

    // MGO with identical branches equals a single branch
    for i in 0..N {
        let tape = Tape::new();
        let d = rng.random_range(4..8);
        let p = branch_params(&tape, d, 5000 + 20 * i);
        let (ns, nt) = (rng.random_range(1..10), rng.random_range(1..14));
        let (s, t) = (
            tape.constant(rand_tensor(&[ns, d], 6000 + i)),
            tape.constant(rand_tensor(&[nt, d], 7000 + i)),
        );
        let ratios = [0.5, 0.7];
        let single = mgo_branch(&p, s, t, ratios).map_err(|e| e.to_string())?;
        let both = mgo(&[p, p], s, t, ratios)
            .map_err(|e| e.to_string())?
            .merged;
        for (x, y) in [
            (single.spectral, both.spectral),
            (single.temporal, both.temporal),
            (single.stack, both.stack),
        ] {
            check(x.shape() == y.shape(), || "MGO changed a shape".to_string())?;
            let e = max_abs_diff(x.value().data(), y.value().data());
            worst = worst.max(e);
            check(e <= TOL, || format!("MGO idempotence off by {e:e}"))?;
        }
    }
    Ok(format!(
        "5 invariants x {N} instances, worst deviation {worst:.1e}"
    ))
}

trait Scaled {
    fn into_scaled(self, k: f64) -> Tensor;
}

impl Scaled for Tensor {
    fn into_scaled(self, k: f64) -> Tensor {
        let shape = self.shape().to_vec();
        Tensor::new(
            &shape,
            self.into_data().into_iter().map(|x| x * k).collect(),
        )
        .unwrap()
    }
}

// ---------------------------------------------------------------- 8

fn c8_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let synth = SynthConfig {
        seed: 8,
        duration_s: 3.0,
        splits: vec![(Split::Train, 8), (Split::Val, 4)],
        ..Default::default()
    };
    let m = synth_corpus(&synth, dir.path()).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 4,
        seed: 8,
        use_rawboost: true,
        use_beat_matching: true,
        ..Default::default()
    };
    let run = |jobs: usize| {
        par::with_jobs(jobs, || -> Result<(Vec<u8>, String), String> {
            let out = train(
                &cfg,
                &ModelConfig::default(),
                &RawBoostConfig::default(),
                &m,
                &mut |_| Ok(()),
            )
            .map_err(|e| e.to_string())?;
            let ckpt = encode_checkpoint(&out.model).map_err(|e| e.to_string())?;
            let scored = score(&out.model, &m, Split::Val, cfg.input_setup, cfg.clip_dur_s)
                .map_err(|e| e.to_string())?;
            Ok((ckpt, scored.scores.to_tsv()))
        })
    };
    let first = run(1)?;
    let second = run(1)?;
    let third = run(4)?;
    check(first.0 == second.0, || {
        "checkpoints differ between runs".into()
    })?;
    check(first.1 == second.1, || {
        "score files differ between runs".into()
    })?;
    check(first.0 == third.0 && first.1 == third.1, || {
        "results depend on the worker count".into()
    })?;
    Ok(format!(
        "checkpoint ({} bytes) and scores byte-identical across runs and worker counts",
        first.0.len()
    ))
}

// ---------------------------------------------------------------- 9

fn c9_frame_counts() -> Outcome {
    let mut rng = seed::rng(9);
    let lc = LfccConfig::default();
    for _ in 0..50 {
        let sr = [8_000u32, 16_000, 22_050, 44_100][rng.random_range(0..4)];
        let dur: f64 = rng.random_range(0.04..3.0);
        let len = (dur * sr as f64) as usize;
        let w = Waveform::new((0..len).map(|_| rng.random_range(-1.0..1.0)).collect(), sr).unwrap();
        let hop = (0.010 * sr as f64).round() as usize;

        let n_fft = 512;
        if len >= n_fft {
            let got = stft_power(&w, n_fft, 0.010).map_err(|e| e.to_string())?;
            let want = (len - n_fft) / hop + 1;
            check(got.frames() == want && got.bins() == n_fft / 2 + 1, || {
                format!(
                    "stft: {} samples @ {sr} gave {}x{}, want {want}x{}",
                    len,
                    got.frames(),
                    got.bins(),
                    n_fft / 2 + 1
                )
            })?;
        }
        let frame = (lc.frame_s * sr as f64).round() as usize;
        if len >= frame {
            let got = lfcc(&w, &lc).map_err(|e| e.to_string())?;
            let want = (len - frame) / hop + 1;
            check(got.frames() == want && got.dim() == lc.n_coeff, || {
                format!(
                    "lfcc: {len} samples @ {sr} gave {}x{}, want {want}x{}",
                    got.frames(),
                    got.dim(),
                    lc.n_coeff
                )
            })?;
        }
    }
    Ok("50/50 durations match floor((len - frame) / hop) + 1".into())
}

// ---------------------------------------------------------------- 10

fn c10_runtime(elapsed: Duration) -> Outcome {
    let secs = elapsed.as_secs_f64();
    check(secs < 900.0, || {
        format!("acceptance suite alone took {secs:.0}s")
    })?;
    Ok(format!(
        "acceptance suite {secs:.1}s on {} worker thread(s); full-suite time is recorded with the test log",
        std::thread::available_parallelism().map_or(1, |n| n.get())
    ))
}

fn main() {
    // `cargo test -- --list` and filters are not meaningful for this target
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let start = Instant::now();
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: Vec<Criterion> = vec![
        ("reference numbers are documentation only", c1_documentation),
        ("gradient fidelity", c2_gradients),
        ("overfit oracle", c3_overfit),
        ("RawBoost SNR", c4_rawboost_snr),
        ("beat matching", c5_beat_matching),
        ("EER oracle equivalence", c6_eer_oracle),
        ("structural invariants", c7_invariants),
        ("determinism", c8_determinism),
        ("frame-count formulas", c9_frame_counts),
    ];
    let mut failed = 0;
    let mut report = |n: usize, name: &str, r: Outcome| match &r {
        Ok(detail) => println!("PASS  {n:>2}. {name}: {detail}"),
        Err(why) => {
            failed += 1;
            println!("FAIL  {n:>2}. {name}: {why}");
        }
    };
    for (i, (name, f)) in criteria.into_iter().enumerate() {
        let r = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        report(i + 1, name, r);
    }
    report(10, "suite wall-clock", c10_runtime(start.elapsed()));
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
