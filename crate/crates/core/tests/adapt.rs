use paid_core::adapt::*;
use paid_core::bench::*;
use paid_core::nnmodel::{ModelConfig, Network};
use paid_core::numkit::{Matrix, SeededRng};
use paid_core::paidlayer::UpdateMode;

struct Fixture {
    source: Network,
    stats: SourceStats,
    stream: DomainStream,
}

/// Small network, briefly pretrained, with a two-domain stream.
fn fixture(rounds: usize) -> Fixture {
    let data = DataConfig { n_train: 400, n_test: 96, ..DataConfig::default() };
    let (train, test) = generate_source(11, &data).unwrap();
    let model = ModelConfig {
        dim: 16,
        depth: 1,
        heads: 2,
        input_dim: data.input_dim(),
        n_classes: data.n_classes,
        ..ModelConfig::default()
    };
    let mut source = Network::build(&model, &mut SeededRng::new(11)).unwrap();
    let pre = PretrainConfig { epochs: 2, ..PretrainConfig::default() };
    pretrain_source(&mut source, &train, &test, &pre, 11).unwrap();
    let stats = compute_source_stats(&source, std::slice::from_ref(&train.samples)).unwrap();
    let domains = [
        Corruption::new(CorruptionKind::GaussianNoise, 5).unwrap(),
        Corruption::new(CorruptionKind::Brightness, 5).unwrap(),
    ];
    let stream = make_domain_sequence(&domains, rounds, &test, 32, 11).unwrap();
    Fixture { source, stats, stream }
}

fn cfg(mode: UpdateMode) -> AdaptConfig {
    AdaptConfig { mode, learning_rate: 5e-3, seed: 11, ..AdaptConfig::default() }
}

#[test]
fn labels_never_influence_parameters() {
    let f = fixture(1);
    let c = cfg(UpdateMode::Paid);
    let mut with = c.inject(&f.source).unwrap();
    let mut without = c.inject(&f.source).unwrap();
    let (mut o1, mut o2) = (OptimizerState::new(), OptimizerState::new());
    for seg in f.stream.segments() {
        for (x, y) in seg.unwrap().batches {
            let a = adapt_step(&mut with, &x, Some(&y), &f.stats, &c, &mut o1).unwrap();
            let b = adapt_step(&mut without, &x, None, &f.stats, &c, &mut o2).unwrap();
            assert_eq!(a.predictions, b.predictions);
            assert_eq!(a.loss.to_bits(), b.loss.to_bits());
            assert!(a.errors.is_some() && b.errors.is_none());
        }
    }
    let bits = |n: &Network| -> Vec<u64> {
        n.named_tensors().unwrap().iter().flat_map(|t| t.2.iter().map(|v| v.to_bits())).collect()
    };
    assert_eq!(bits(&with), bits(&without));
}

#[test]
fn no_hidden_reset_between_domains() {
    let f = fixture(1);
    let c = cfg(UpdateMode::Paid);
    // Domain by domain by hand, carrying state across the boundary.
    let mut manual = c.inject(&f.source).unwrap();
    let mut opt = OptimizerState::new();
    let mut end_of_first = None;
    for (k, seg) in f.stream.segments().enumerate() {
        if k == 1 {
            end_of_first = Some(manual.named_tensors().unwrap());
        }
        for (x, y) in seg.unwrap().batches {
            adapt_step(&mut manual, &x, Some(&y), &f.stats, &c, &mut opt).unwrap();
        }
    }
    let mut streamed = c.inject(&f.source).unwrap();
    let report = run_ctta(&mut streamed, &f.stream, &f.stats, &c).unwrap();
    assert_eq!(streamed.named_tensors().unwrap(), manual.named_tensors().unwrap());
    assert_ne!(end_of_first.unwrap(), c.inject(&f.source).unwrap().named_tensors().unwrap());
    assert_eq!(report.segments.len(), 2);
}

#[test]
fn frozen_single_clean_domain_matches_source_error() {
    let f = fixture(1);
    let c = cfg(UpdateMode::Frozen);
    let clean = Corruption::new(CorruptionKind::Blur, 0).unwrap();
    let (_, data_test) = generate_source(11, &DataConfig { n_train: 400, n_test: 96, ..DataConfig::default() }).unwrap();
    let stream = make_domain_sequence(&[clean], 1, &data_test, 32, 11).unwrap();
    let mut net = c.inject(&f.source).unwrap();
    let report = run_ctta(&mut net, &stream, &f.stats, &c).unwrap();
    let source_error = 1.0 - accuracy(&f.source, &data_test).unwrap();
    assert!((report.segments[0].error - source_error).abs() < 1e-12);
}

#[test]
fn structure_audit_over_a_multi_round_run() {
    let f = fixture(3);
    for mode in [UpdateMode::Paid, UpdateMode::DirectionOrthogonal] {
        let c = cfg(mode);
        let mut net = c.inject(&f.source).unwrap();
        let report = run_ctta(&mut net, &f.stream, &f.stats, &c).unwrap();
        for s in &report.segments {
            assert!(s.max_delta_s <= 1e-9, "{mode} round {} ΔS {}", s.round, s.max_delta_s);
            assert!(s.max_gram_deviation <= 1e-9);
        }
        assert!(report.segments.last().unwrap().delta_a > 0.0);
    }
    let c = cfg(UpdateMode::MagDirFree);
    let mut net = c.inject(&f.source).unwrap();
    assert!(run_ctta(&mut net, &f.stream, &f.stats, &c).unwrap().max_delta_s() > 0.0);
}

#[test]
fn stats_are_reproducible_and_degenerate_on_duplicates() {
    let f = fixture(1);
    let (train, _) = generate_source(11, &DataConfig { n_train: 400, n_test: 96, ..DataConfig::default() }).unwrap();
    let a = compute_source_stats(&f.source, std::slice::from_ref(&train.samples)).unwrap();
    assert_eq!(a, f.stats);
    let row = train.samples.row(0).to_vec();
    let dup = Matrix::from_rows(&[&row, &row, &row]);
    let s = compute_source_stats(&f.source, &[dup]).unwrap();
    assert!(s.sigma.iter().all(|v| *v < 1e-5));
    assert!(compute_source_stats(&f.source, &[]).is_err());

    let halves = [train.subset(&(0..150).collect::<Vec<_>>()).samples, train.subset(&(150..400).collect::<Vec<_>>()).samples];
    let split = compute_source_stats(&f.source, &halves).unwrap();
    for (p, q) in split.mu.iter().zip(&a.mu).chain(split.sigma.iter().zip(&a.sigma)) {
        assert!((p - q).abs() <= 1e-10);
    }
}

#[test]
fn loss_hand_examples() {
    let z = Matrix::from_rows(&[&[2.0, 5.0], &[4.0, 5.0]]);
    let (mu, sigma) = paid_core::numkit::batch_mean_std(&z).unwrap();
    let matched = SourceStats { mu: mu.clone(), sigma: sigma.clone(), n_samples: 2 };
    let l = alignment_loss(&matched, &z, 3.0).unwrap();
    assert!(l.loss <= 1e-10 && l.dz.max_abs() <= 1e-10);

    let shifted = SourceStats { mu: vec![0.0, 5.0], sigma: sigma.clone(), n_samples: 2 };
    for lambda in [0.0, 0.1, 7.0] {
        assert!((alignment_loss(&shifted, &z, lambda).unwrap().loss - 3.0).abs() < 1e-12);
    }
}

#[test]
fn loss_on_a_fixed_batch_mostly_decreases() {
    let f = fixture(1);
    let c = AdaptConfig { learning_rate: AdaptConfig::default().learning_rate, ..cfg(UpdateMode::Paid) };
    let (x, _) = f.stream.segment(0).unwrap().batches.remove(0);
    let mut net = c.inject(&f.source).unwrap();
    let mut opt = OptimizerState::new();
    let losses: Vec<f64> = (0..200).map(|_| adapt_step(&mut net, &x, None, &f.stats, &c, &mut opt).unwrap().loss).collect();
    let down = losses.windows(2).filter(|w| w[1] <= w[0]).count();
    assert!(down as f64 >= 0.8 * 199.0, "{down}/199 non-increasing; {:?}", &losses[..10]);
    assert!(losses[199] < losses[0]);
}
