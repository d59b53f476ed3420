mod common;

use common::*;
use rand::Rng;

use pcc_core::boe::{BoECenters, DESCRIPTOR_LEN};
use pcc_core::entropy::SYMBOLS;
use pcc_core::hierarchy::BASE_LEVEL;
use pcc_core::model::ops::{self, Neighbors, CENTER, KERNEL};
use pcc_core::model::{
    cloud_loss, head_logits, materialize, prepare_corpus, refine, train, train_pool, BaselineModel, ContextModel,
    Layout, NeuralModel, NeuralSession, TrainConfig, TrainError,
};
use pcc_core::synth::gen_plane;
use pcc_core::{quantize_fit, CodecModel, Coord, Hierarchy, OrderingMode, Stage};

fn rand_vec(r: &mut impl Rng, n: usize, scale: f32) -> Vec<f32> {
    (0..n).map(|_| r.random_range(-scale..scale)).collect()
}

#[test]
fn octant_embedding_rows() {
    let d = 3;
    let table: Vec<f32> = (0..8 * d).map(|i| i as f32).collect();
    let coords: Vec<Coord> = vec![[0, 0, 0], [1, 0, 1]];
    let level = pcc_core::LevelState::from_morton_sorted(3, coords).unwrap();
    let out = ops::embed(&table, &level.parities(), d);
    assert_eq!(&out[..d], &table[..d]);
    assert_eq!(&out[d..], &table[5 * d..6 * d]);

    let block: Vec<Coord> = (0..8u32).map(|u| [2 + (u & 1), 4 + ((u >> 1) & 1), (u >> 2)]).collect();
    let level = pcc_core::LevelState::from_morton_sorted(3, block).unwrap();
    assert_eq!(level.parities(), (0..8u8).collect::<Vec<_>>());
    assert_eq!(ops::embed(&table, &level.parities(), d), table);
}

#[test]
fn gated_fusion_examples() {
    let mut r = rng(1);
    let d = 5;
    let n = 40;
    let oct = rand_vec(&mut r, n * d, 2.0);
    let prop = rand_vec(&mut r, n * d, 2.0);

    let equal = vec![0.7f32; 2 * d];
    let mean = ops::gated_fuse(&oct, &prop, &equal, d);
    for i in 0..n * d {
        assert!((mean[i] - 0.5 * (oct[i] + prop[i])).abs() < 1e-6);
    }

    let mut saturated = vec![0.0f32; 2 * d];
    saturated[..d].fill(20.0);
    saturated[d..].fill(-20.0);
    let out = ops::gated_fuse(&oct, &prop, &saturated, d);
    for i in 0..n * d {
        assert!((out[i] - oct[i]).abs() < 1e-6 * (1.0 + (oct[i] - prop[i]).abs()) * 10.0);
    }

    let gate = rand_vec(&mut r, 2 * d, 3.0);
    let out = ops::gated_fuse(&oct, &prop, &gate, d);
    for i in 0..n * d {
        let (lo, hi) = (oct[i].min(prop[i]), oct[i].max(prop[i]));
        assert!(out[i] >= lo - 1e-6 && out[i] <= hi + 1e-6);
    }
}

/// Submanifold convolution by scanning every pair for offset membership.
fn conv_naive(coords: &[Coord], x: &[f32], w: &[f32], b: &[f32], d: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; coords.len() * d];
    for (n, c) in coords.iter().enumerate() {
        let mut acc: Vec<f64> = b.iter().map(|&v| v as f64).collect();
        for (m, e) in coords.iter().enumerate() {
            let delta: Vec<i64> = (0..3).map(|k| e[k] as i64 - c[k] as i64).collect();
            if delta.iter().any(|v| v.abs() > 1) {
                continue;
            }
            let o = (9 * (delta[0] + 1) + 3 * (delta[1] + 1) + (delta[2] + 1)) as usize;
            for k in 0..d {
                for j in 0..d {
                    acc[j] += w[o * d * d + k * d + j] as f64 * x[m * d + k] as f64;
                }
            }
        }
        for j in 0..d {
            out[n * d + j] = acc[j] as f32;
        }
    }
    out
}

#[test]
fn sparse_conv_examples() {
    let mut r = rng(2);
    let d = 4;
    let w = rand_vec(&mut r, KERNEL * d * d, 0.5);
    let b = rand_vec(&mut r, d, 0.5);

    let lone = [[3u32, 3, 3]];
    let x = rand_vec(&mut r, d, 1.0);
    let out = ops::sparse_conv(&x, &Neighbors::build(&lone, 3), &w, &b, d);
    for j in 0..d {
        let want: f32 = b[j] + (0..d).map(|k| w[CENTER * d * d + k * d + j] * x[k]).sum::<f32>();
        assert!((out[j] - want).abs() < 1e-5);
    }

    let coords = sort_naive(&random_coords(&mut r, 200, 4));
    let nbrs = Neighbors::build(&coords, 4);
    let x = rand_vec(&mut r, coords.len() * d, 1.0);
    let mut ident = vec![0.0f32; KERNEL * d * d];
    for k in 0..d {
        ident[CENTER * d * d + k * d + k] = 1.0;
    }
    assert_eq!(ops::sparse_conv(&x, &nbrs, &ident, &vec![0.0; d], d), x);

    let fast = ops::sparse_conv(&x, &nbrs, &w, &b, d);
    let slow = conv_naive(&coords, &x, &w, &b, d);
    for (a, e) in fast.iter().zip(&slow) {
        assert!((a - e).abs() < 1e-4, "{a} vs {e}");
    }
}

#[test]
fn zero_stack_is_identity_and_zero_head_is_uniform() {
    let mut r = rng(3);
    let layout = Layout::new(6);
    let p = vec![0.0f32; layout.len()];
    let coords = sort_naive(&random_coords(&mut r, 50, 5));
    let nbrs = Neighbors::build(&coords, 5);
    let x = rand_vec(&mut r, coords.len() * 6, 1.0);
    for stack in 0..3 {
        assert_eq!(refine(&p, layout, stack, x.clone(), &nbrs, None), x);
    }
    let (logits, _) = head_logits(&p, layout, 0, &x);
    assert_eq!(logits.len(), coords.len() * SYMBOLS);
    for v in ops::softmax(&logits, SYMBOLS) {
        assert!((v - 1.0 / 16.0).abs() < 1e-7);
    }

    let mut q = p.clone();
    let [_, _, _, b2] = layout.head(1);
    q[b2.start + 7] = 40.0;
    let probs = ops::softmax(&head_logits(&q, layout, 1, &x).0, SYMBOLS);
    for row in probs.chunks(SYMBOLS) {
        assert!(row[7] > 1.0 - 1e-6);
    }

    let noisy = rand_vec(&mut r, layout.len(), 0.5);
    let probs = ops::softmax(&head_logits(&noisy, layout, 0, &x).0, SYMBOLS);
    for row in probs.chunks(SYMBOLS) {
        assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-5);
    }
}

#[test]
fn context_embedding_examples() {
    let mut r = rng(4);
    let d = 3;
    let x = rand_vec(&mut r, 10 * d, 1.0);
    let sym: Vec<u8> = (0..10).map(|_| r.random_range(0..16)).collect();

    let mut y = x.clone();
    ops::add_context(&mut y, &vec![0.0; 16 * d], &sym, d);
    assert_eq!(y, x);

    let table = rand_vec(&mut r, 16 * d, 1.0);
    let mut y = x.clone();
    ops::add_context(&mut y, &table, &[0; 10], d);
    for n in 0..10 {
        for k in 0..d {
            assert_eq!(y[n * d + k], x[n * d + k] + table[k]);
        }
    }

    let mut y = x.clone();
    ops::add_context(&mut y, &table, &sym, d);
    let neg: Vec<f32> = table.iter().map(|v| -v).collect();
    ops::add_context(&mut y, &neg, &sym, d);
    for (a, b) in y.iter().zip(&x) {
        assert!((a - b).abs() <= 2.0 * f32::EPSILON * (1.0 + a.abs().max(b.abs())) * 4.0);
    }
}

type Rows = Vec<[f64; SYMBOLS]>;

/// Drives `m` over a hierarchy the way the encoder does, returning every table.
fn drive_encoder(m: &mut dyn ContextModel, h: &Hierarchy, nets: &[usize]) -> Vec<Rows> {
    let mut out = Vec::new();
    let depth = h.bit_depth();
    for b in BASE_LEVEL..depth {
        let labels = h.labels(b);
        m.begin_level(h.level(b), nets[(b - BASE_LEVEL) as usize]).unwrap();
        for stage in Stage::BOTH {
            let t = {
                let mut pred = m.predict_stage(stage).unwrap();
                materialize(pred.as_mut(), labels.stage(stage)).unwrap()
            };
            out.push(t.rows().to_vec());
            m.absorb_stage(stage, labels.stage(stage)).unwrap();
        }
        m.end_level(labels.octants(), b + 1 < depth).unwrap();
    }
    out
}

/// Same, one row at a time, observing each symbol right after its row.
fn drive_decoder(m: &mut dyn ContextModel, h: &Hierarchy, nets: &[usize]) -> Vec<Rows> {
    let mut out = Vec::new();
    let depth = h.bit_depth();
    for b in BASE_LEVEL..depth {
        let labels = h.labels(b);
        m.begin_level(h.level(b), nets[(b - BASE_LEVEL) as usize]).unwrap();
        for stage in Stage::BOTH {
            let symbols = labels.stage(stage);
            let mut rows = Vec::new();
            {
                let mut pred = m.predict_stage(stage).unwrap();
                assert_eq!(pred.len(), symbols.len());
                for (n, &s) in symbols.iter().enumerate() {
                    rows.push(pred.row(n));
                    pred.observe(n, s);
                }
            }
            out.push(rows);
            m.absorb_stage(stage, symbols).unwrap();
        }
        m.end_level(labels.octants(), b + 1 < depth).unwrap();
    }
    out
}

#[test]
fn encoder_and_decoder_paths_agree() {
    let coords = random_coords(&mut rng(5), 1500, 10);
    let h = Hierarchy::build(&coords, 10, OrderingMode::Morton).unwrap();
    let nets: Vec<usize> = (BASE_LEVEL..10).map(|b| if b <= 6 { 0 } else { (b % 3) as usize }).collect();

    let mut enc = BaselineModel::new();
    let mut dec = BaselineModel::new();
    let a = drive_encoder(&mut enc, &h, &nets);
    let b = drive_decoder(&mut dec, &h, &nets);
    assert_eq!(a, b);
    assert_eq!(enc.snapshot(), dec.snapshot());

    let CodecModel::Neural(m) = tiny_neural(4, 2, 9) else { unreachable!() };
    let a = drive_encoder(&mut NeuralSession::new(&m), &h, &nets);
    let b = drive_decoder(&mut NeuralSession::new(&m), &h, &nets);
    assert_eq!(a, b);
    for rows in &a {
        for row in rows {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-5);
        }
    }
}

#[test]
fn fusion_is_bypassed_at_the_base_level() {
    let coords = random_coords(&mut rng(6), 400, 6);
    let h = Hierarchy::build(&coords, 6, OrderingMode::Morton).unwrap();
    let CodecModel::Neural(m) = tiny_neural(4, 1, 2) else { unreachable!() };
    let layout = m.layout();
    let mut nets = m.networks().to_vec();
    let gate = layout.gate();
    nets[0][gate.start..gate.start + 4].fill(5.0);
    let gated = NeuralModel::new(4, nets, m.centers().clone()).unwrap();
    let plain = [0usize; 4];
    let a = drive_encoder(&mut NeuralSession::new(&m), &h, &plain);
    let b = drive_encoder(&mut NeuralSession::new(&gated), &h, &plain);
    // the gate only matters once features are propagated
    assert!(a[..2] == b[..2]);
    assert!(a[2..] != b[2..]);
}

#[test]
fn session_rejects_bad_call_order() {
    let coords = random_coords(&mut rng(7), 100, 5);
    let h = Hierarchy::build(&coords, 5, OrderingMode::Morton).unwrap();
    let CodecModel::Neural(m) = tiny_neural(4, 1, 2) else { unreachable!() };
    let mut s = NeuralSession::new(&m);
    assert!(s.predict_stage(Stage::First).is_err());
    assert!(s.begin_level(h.level(2), 2).is_err());
    s.begin_level(h.level(2), 0).unwrap();
    assert!(s.predict_stage(Stage::Second).is_err());
    assert!(s.absorb_stage(Stage::Second, h.labels(2).stage(Stage::Second)).is_err());
    let too_many = vec![0u8; h.level(2).len() + 1];
    assert!(s.absorb_stage(Stage::First, &too_many).is_err());
    assert!(s.end_level(h.labels(2).octants(), true).is_err());
}

#[test]
fn training_loss_is_the_session_code_length() {
    let coords = random_coords(&mut rng(8), 900, 9);
    let cloud = quantized(&coords, 9);
    let CodecModel::Neural(m) = tiny_neural(4, 2, 4) else { unreachable!() };
    let corpus = prepare_corpus(std::slice::from_ref(&cloud), m.centers()).unwrap();
    let loss = cloud_loss(m.networks(), m.layout(), &corpus[0], None).unwrap();

    let h = Hierarchy::build(cloud.coords(), 9, OrderingMode::Morton).unwrap();
    let nets: Vec<usize> = corpus[0].levels.iter().map(|l| l.network).collect();
    let tables = drive_encoder(&mut NeuralSession::new(&m), &h, &nets);
    let mut bits = 0.0;
    for (i, rows) in tables.iter().enumerate() {
        let b = BASE_LEVEL + (i / 2) as u32;
        let stage = Stage::BOTH[i % 2];
        for (row, &s) in rows.iter().zip(h.labels(b).stage(stage)) {
            bits -= row[s as usize].log2();
        }
    }
    let session_bpp = bits / cloud.len() as f64;
    assert!((loss - session_bpp).abs() < 1e-3 * session_bpp, "{loss} vs {session_bpp}");
}

#[test]
fn loss_of_uniform_and_confident_predictions() {
    let coords = random_coords(&mut rng(9), 500, 8);
    let cloud = quantized(&coords, 8);
    let layout = Layout::new(4);
    let centers = BoECenters::new(vec![[1.0 / DESCRIPTOR_LEN as f64; DESCRIPTOR_LEN]]);
    let corpus = prepare_corpus(std::slice::from_ref(&cloud), &centers).unwrap();
    let zeros = vec![vec![0.0f32; layout.len()]; 2];
    let loss = cloud_loss(&zeros, layout, &corpus[0], None).unwrap();
    let parents: usize = corpus[0].levels.iter().map(|l| l.len()).sum();
    let uniform = 8.0 * parents as f64 / cloud.len() as f64;
    assert!((loss - uniform).abs() < 1e-4 * uniform);

    let mut logits = vec![0.0f32; 3 * SYMBOLS];
    for (n, t) in [2usize, 9, 15].iter().enumerate() {
        logits[n * SYMBOLS + t] = 60.0;
    }
    let (bits, _) = ops::bits_loss(&logits, &[2, 9, 15], SYMBOLS);
    assert!(bits.abs() < 1e-9);
}

#[test]
fn training_is_seeded() {
    let clouds: Vec<_> = (0..2)
        .map(|s| quantized(&random_coords(&mut rng(10 + s), 300, 8), 8))
        .collect();
    let cfg = TrainConfig {
        steps: 5,
        learning_rate: 1e-3,
        seed: 3,
    };
    let (a, ra) = train_pool(&clouds, 4, 2, &cfg).unwrap();
    let (b, rb) = train_pool(&clouds, 4, 2, &cfg).unwrap();
    assert_eq!(a.to_bytes(), b.to_bytes());
    assert_eq!(ra, rb);
    let (c, _) = train_pool(&clouds, 4, 2, &TrainConfig { seed: 4, ..cfg }).unwrap();
    assert_ne!(a.to_bytes(), c.to_bytes());
}

#[test]
fn divergence_is_reported() {
    let cloud = quantized(&random_coords(&mut rng(11), 300, 8), 8);
    let CodecModel::Neural(m) = tiny_neural(4, 1, 1) else { unreachable!() };
    let corpus = prepare_corpus(std::slice::from_ref(&cloud), m.centers()).unwrap();
    let cfg = TrainConfig {
        steps: 50,
        learning_rate: 1e38,
        seed: 0,
    };
    assert!(matches!(train(&m, &corpus, &cfg), Err(TrainError::NonFinite { .. })));
    assert!(matches!(train(&m, &[], &cfg), Err(TrainError::EmptyCorpus)));
}

#[test]
fn plane_training_beats_uniform() {
    let raw = gen_plane(3000, 8.0, 0.03, 1);
    let cloud = quantize_fit(&raw, 10).unwrap();
    let cfg = TrainConfig {
        steps: 500,
        learning_rate: 5e-4,
        seed: 0,
    };
    let (model, rep) = train_pool(std::slice::from_ref(&cloud), 8, 1, &cfg).unwrap();
    let corpus = prepare_corpus(std::slice::from_ref(&cloud), model.centers()).unwrap();
    let parents: usize = corpus[0].levels.iter().map(|l| l.len()).sum();
    let uniform = 8.0 * parents as f64 / cloud.len() as f64;
    let trained = cloud_loss(model.networks(), model.layout(), &corpus[0], None).unwrap();
    eprintln!(
        "plane: uniform {uniform:.3} bpp, first step {:.3}, trained {trained:.3}",
        rep.loss_bpp[0]
    );
    assert!(trained <= 0.85 * uniform, "{trained} vs uniform {uniform}");
}
