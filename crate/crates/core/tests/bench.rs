use std::collections::HashSet;

use paid_core::adapt::{AdamWParams, OptimizerState};
use paid_core::bench::*;
use paid_core::nnmodel::{softmax_cross_entropy, ModelConfig, Network};
use paid_core::numkit::{Matrix, SeededRng};

fn model_for(data: &DataConfig) -> ModelConfig {
    ModelConfig {
        input_dim: data.input_dim(),
        n_classes: data.n_classes,
        ..ModelConfig::default()
    }
}

/// Ridge regression onto one-hot targets, solved by Gaussian elimination.
fn linear_probe(train: &SyntheticDataset, test: &SyntheticDataset) -> f64 {
    let d = train.samples.cols() + 1;
    let k = train.n_classes;
    let mut a = vec![vec![0.0; d]; d];
    let mut b = vec![vec![0.0; k]; d];
    for (i, &y) in train.labels.iter().enumerate() {
        let mut row = train.samples.row(i).to_vec();
        row.push(1.0);
        for p in 0..d {
            for q in 0..d {
                a[p][q] += row[p] * row[q];
            }
            b[p][y] += row[p];
        }
    }
    for (p, r) in a.iter_mut().enumerate() {
        r[p] += 1e-3;
    }
    for col in 0..d {
        let pivot = (col..d).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for r in 0..d {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in 0..d {
                    a[r][c] -= f * a[col][c];
                }
                for c in 0..k {
                    b[r][c] -= f * b[col][c];
                }
            }
        }
    }
    let w: Vec<Vec<f64>> = (0..d).map(|r| b[r].iter().map(|v| v / a[r][r]).collect()).collect();
    let mut correct = 0;
    for (i, &y) in test.labels.iter().enumerate() {
        let mut row = test.samples.row(i).to_vec();
        row.push(1.0);
        let scores: Vec<f64> = (0..k).map(|c| (0..d).map(|p| row[p] * w[p][c]).sum()).collect();
        let pred = (0..k).max_by(|&x, &z| scores[x].total_cmp(&scores[z])).unwrap();
        correct += usize::from(pred == y);
    }
    correct as f64 / test.len() as f64
}

#[test]
fn linear_probe_separates_the_default_recipe() {
    let (train, test) = generate_source(0, &DataConfig::default()).unwrap();
    let acc = linear_probe(&train, &test);
    assert!(acc >= 0.90, "linear probe accuracy {acc}");
}

#[test]
fn generation_is_deterministic_balanced_and_leak_free() {
    let cfg = DataConfig::default();
    let (a, at) = generate_source(3, &cfg).unwrap();
    let (b, bt) = generate_source(3, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(at, bt);
    assert_ne!(generate_source(4, &cfg).unwrap().0, a);

    for ds in [&a, &at] {
        let mut counts = vec![0usize; cfg.n_classes];
        ds.labels.iter().for_each(|&l| counts[l] += 1);
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(hi - lo <= 1, "{counts:?}");
    }

    let key = |row: &[f64]| row.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let train_rows: HashSet<_> = (0..a.len()).map(|i| key(a.samples.row(i))).collect();
    assert!((0..at.len()).all(|i| !train_rows.contains(&key(at.samples.row(i)))));
}

#[test]
fn relabeling_permutes_consistently() {
    let (train, _) = generate_source(1, &DataConfig::default()).unwrap();
    let perm = [3, 0, 5, 1, 2, 4];
    let r = train.relabel(&perm);
    assert!(r.labels.iter().zip(&train.labels).all(|(n, o)| *n == perm[*o]));
    assert_eq!(r.samples, train.samples);
}

#[test]
fn zero_epochs_leave_the_network_unchanged() {
    let data = DataConfig { n_train: 64, n_test: 32, ..DataConfig::default() };
    let (train, test) = generate_source(2, &data).unwrap();
    let mut net = Network::build(&model_for(&data), &mut SeededRng::new(2)).unwrap();
    let before = net.named_tensors().unwrap();
    let cfg = PretrainConfig { epochs: 0, ..PretrainConfig::default() };
    let report = pretrain_source(&mut net, &train, &test, &cfg, 2).unwrap();
    assert_eq!(net.named_tensors().unwrap(), before);
    assert!(report.step_losses.is_empty());
}

#[test]
fn default_recipe_trains_a_strong_source_model() {
    let data = DataConfig::default();
    let (train, test) = generate_source(0, &data).unwrap();
    let mut net = Network::build(&model_for(&data), &mut SeededRng::new(0).fork(2)).unwrap();
    let report = pretrain_source(&mut net, &train, &test, &PretrainConfig::default(), 0).unwrap();
    assert!(report.clean_accuracy >= 0.95, "clean accuracy {}", report.clean_accuracy);

    // Same seed, same model.
    let short = PretrainConfig { epochs: 1, ..PretrainConfig::default() };
    let mut again = Network::build(&model_for(&data), &mut SeededRng::new(0).fork(2)).unwrap();
    let mut once = Network::build(&model_for(&data), &mut SeededRng::new(0).fork(2)).unwrap();
    pretrain_source(&mut again, &train, &test, &short, 0).unwrap();
    pretrain_source(&mut once, &train, &test, &short, 0).unwrap();
    assert_eq!(again.named_tensors().unwrap(), once.named_tensors().unwrap());
}

/// Replays the first optimizer steps of the default recipe and tracks the
/// loss over the whole training split after each one.
#[test]
fn training_loss_strictly_decreases_over_the_first_ten_steps() {
    let data = DataConfig::default();
    let (train, test) = generate_source(0, &data).unwrap();
    let cfg = PretrainConfig::default();
    let build = || Network::build(&model_for(&data), &mut SeededRng::new(0).fork(2)).unwrap();

    let mut reference = build();
    let report = pretrain_source(&mut reference, &train, &test, &PretrainConfig { epochs: 1, ..cfg.clone() }, 0).unwrap();

    let mut net = build();
    let hp = AdamWParams { learning_rate: cfg.learning_rate, weight_decay: cfg.weight_decay, ..AdamWParams::default() };
    let mut opt = OptimizerState::new();
    let mut idx: Vec<usize> = (0..train.len()).collect();
    SeededRng::new(0).fork(77).shuffle(&mut idx);
    let full_loss = |n: &Network| softmax_cross_entropy(&n.forward_logits(&train.samples).unwrap(), &train.labels).unwrap().0;
    let mut losses = vec![full_loss(&net)];
    for (step, chunk) in idx.chunks(cfg.batch_size).take(10).enumerate() {
        let batch = train.subset(chunk);
        let out = net.forward(&batch.samples).unwrap();
        let (loss, dlogits) = softmax_cross_entropy(&out.logits, &batch.labels).unwrap();
        assert_eq!(loss.to_bits(), report.step_losses[step].to_bits(), "replay diverged at step {step}");
        let grads = net.backward_logits(&dlogits).unwrap();
        opt.step(net.learnable_params_mut(), &grads, &hp, cfg.lr_at(step)).unwrap();
        losses.push(full_loss(&net));
    }
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
}

#[test]
fn streams_follow_the_protocol() {
    let data = DataConfig { n_test: 100, ..DataConfig::default() };
    let (_, test) = generate_source(5, &data).unwrap();
    let suite = Corruption::default_suite();
    let one = make_domain_sequence(&suite, 1, &test, 32, 5).unwrap();
    assert_eq!(one.len(), 6);
    let ten = make_domain_sequence(&suite, 10, &test, 32, 5).unwrap();
    assert_eq!(ten.len(), 60);
    for k in 0..60 {
        let (round, c) = ten.sequence.segment_domain(k);
        assert_eq!((round, c), (k / 6, suite[k % 6]));
    }
    let seg = ten.segment(7).unwrap();
    assert_eq!(seg.corruption, suite[1]);
    assert_eq!(seg.batches.iter().map(|(x, _)| x.rows()).sum::<usize>(), 100);
    assert_eq!(seg.batches.len(), 4);
    // Same position, same batch; rebuilding the stream changes nothing.
    let again = make_domain_sequence(&suite, 10, &test, 32, 5).unwrap().segment(7).unwrap();
    assert_eq!(seg, again);
    assert!(make_domain_sequence(&[], 1, &test, 32, 5).is_err());
    assert!(make_domain_sequence(&suite, 0, &test, 32, 5).is_err());
}

#[test]
fn frozen_error_grows_with_severity() {
    let data = DataConfig::default();
    let mut votes = [[0usize; 5]; 6];
    for seed in 0..5 {
        let (train, test) = generate_source(seed, &data).unwrap();
        let mut net = Network::build(&model_for(&data), &mut SeededRng::new(seed).fork(2)).unwrap();
        pretrain_source(&mut net, &train, &test, &PretrainConfig::default(), seed).unwrap();
        for (k, kind) in CorruptionKind::ALL.into_iter().enumerate() {
            let mut prev = 1.0 - accuracy(&net, &test).unwrap();
            for sev in 1..=5u8 {
                let c = Corruption::new(kind, sev).unwrap();
                let x: Matrix = c.apply(&test.samples, &mut SeededRng::new(seed).fork(50 + sev as u64)).unwrap();
                let err = 1.0 - accuracy(&net, &SyntheticDataset { samples: x, ..test.clone() }).unwrap();
                votes[k][sev as usize - 1] += usize::from(err >= prev);
                prev = err;
            }
        }
    }
    for (k, kind) in CorruptionKind::ALL.into_iter().enumerate() {
        for (s, &v) in votes[k].iter().enumerate() {
            assert!(v >= 3, "{kind}: severity {} -> {} non-decreasing in only {v}/5 seeds", s, s + 1);
        }
    }
}
