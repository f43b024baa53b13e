use super::*;
use crate::arch::{DualBranchModel, EnsembleModel, InputShape, Model};
use crate::autodiff::Graph;
use crate::data::{generate, GeneratorConfig, Split};
use crate::nn::Parameters;
use crate::tensor::Tensor;

fn s(g: &mut Graph, v: f64) -> crate::autodiff::Var {
    g.variable(Tensor::scalar(v))
}

#[test]
fn combined_loss_examples() {
    let mut g = Graph::new();
    let (l, d_ch, d_sp) = (s(&mut g, 2.0), s(&mut g, 0.5), s(&mut g, 0.3));
    let (t, bd) = combined_loss(&mut g, l, Some(d_ch), Some(d_sp), 1.0).unwrap();
    assert!((g.value(t).item() - 1.2).abs() < 1e-15);
    assert_eq!(bd.recompose(), bd.total);

    let (t, _) = combined_loss(&mut g, l, Some(d_ch), Some(d_sp), 0.0).unwrap();
    assert_eq!(g.value(t).item(), 2.0);

    let (zero, one_a, one_b) = (s(&mut g, 0.0), s(&mut g, 1.0), s(&mut g, 1.0));
    let (t, _) = combined_loss(&mut g, zero, Some(one_a), Some(one_b), 1.0).unwrap();
    assert_eq!(g.value(t).item(), -2.0);
    assert!(combined_loss(&mut g, zero, None, None, -1.0).is_err());
}

#[test]
fn esr_loss_examples() {
    let mut g = Graph::new();
    let parts: Vec<_> = [1.0, 2.0, 3.0].iter().map(|&v| s(&mut g, v)).collect();
    let (d_ch, d_sp) = (s(&mut g, 0.4), s(&mut g, 0.6));
    let (t, bd) = esr_loss(&mut g, &parts, Some(d_ch), Some(d_sp), 1.0).unwrap();
    assert!((g.value(t).item() - 5.0).abs() < 1e-15);
    assert_eq!(bd.classification, 6.0);
    assert_eq!(bd.recompose(), bd.total);

    let one = g.constant(Tensor::scalar(1.0));
    let (t, _) = esr_loss(&mut g, &parts[..1], Some(one), Some(one), 1.0).unwrap();
    assert_eq!(g.value(t).item(), -1.0);
    assert!(esr_loss(&mut g, &[], None, None, 1.0).is_err());
}

#[test]
fn manet_loss_examples() {
    let mut g = Graph::new();
    let (l, gl) = (s(&mut g, 1.0), s(&mut g, 2.0));
    let (db, dsp, dch) = (s(&mut g, 0.5), s(&mut g, 0.2), s(&mut g, 0.3));
    let (t, bd) = manet_loss(&mut g, l, gl, Some(db), Some(dsp), Some(dch), 0.6, 1.0).unwrap();
    assert!((g.value(t).item() - 0.4).abs() < 1e-12);
    assert_eq!(bd.recompose(), bd.total);
    assert!(manet_loss(&mut g, l, gl, None, None, None, 1.2, 1.0).is_err());

    // at λ = 1 the global loss gets no gradient through the classification term
    let (t, _) = manet_loss(&mut g, l, gl, None, None, None, 1.0, 1.0).unwrap();
    g.backward(t).unwrap();
    assert_eq!(g.grad(gl).unwrap(), &[0.0]);
    assert_eq!(g.grad(l).unwrap(), &[1.0]);
}

#[test]
fn sgd_examples() {
    let mut theta = Tensor::scalar(1.0);
    let mut opt = OptimizerState::new(0.1, 0.9).unwrap();
    sgd_step(&mut [&mut theta], &[vec![0.5]], &mut opt).unwrap();
    assert!((theta.item() - 0.95).abs() < 1e-15);
    assert_eq!(opt.velocity(), &[vec![0.5]]);

    let mut still = Tensor::vector(vec![3.0, -1.0]);
    let mut opt = OptimizerState::new(0.1, 0.9).unwrap();
    opt.step(&mut [&mut still], &[vec![0.0, 0.0]]).unwrap();
    assert_eq!(still.data(), &[3.0, -1.0]);

    let mut a = Tensor::scalar(1.0);
    let mut plain = OptimizerState::new(0.5, 0.0).unwrap();
    for _ in 0..3 {
        plain.step(&mut [&mut a], &[vec![1.0]]).unwrap();
    }
    assert_eq!(a.item(), -0.5);

    assert!(opt.step(&mut [&mut still], &[vec![0.0]]).is_err());
    assert!(OptimizerState::new(0.1, 1.0).is_err());
    assert!(OptimizerState::new(0.0, 0.5).is_err());
}

#[test]
fn velocity_extends_for_new_parameters() {
    let (mut a, mut b) = (Tensor::scalar(0.0), Tensor::vector(vec![0.0, 0.0]));
    let mut opt = OptimizerState::new(1.0, 0.5).unwrap();
    opt.step(&mut [&mut a], &[vec![1.0]]).unwrap();
    opt.step(&mut [&mut a, &mut b], &[vec![1.0], vec![2.0, 2.0]]).unwrap();
    assert_eq!(opt.velocity(), &[vec![1.5], vec![2.0, 2.0]]);
    assert_eq!(b.data(), &[-2.0, -2.0]);
}

#[test]
fn growth_schedule() {
    let counts: Vec<usize> = (0..6)
        .scan(1, |b, e| {
            if grows_at(e, 2, *b, 3) {
                *b += 1;
            }
            Some(*b)
        })
        .collect();
    assert_eq!(counts, [1, 1, 2, 2, 3, 3]);
}

fn tiny_split() -> Split {
    generate(&GeneratorConfig { class_count: 4, samples_per_class: 10, ..Default::default() }).unwrap()
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, batch_size: 8, branch_add_epochs: 1, ..Default::default() }
}

fn ensemble(attention: bool, branch_max: usize) -> Model {
    Model::Ensemble(EnsembleModel::new(InputShape::default(), 4, branch_max, attention, 7).unwrap())
}

#[test]
fn trainer_grows_and_records() {
    let split = tiny_split();
    let out = Trainer::new(ensemble(true, 3), &split, quick(3)).unwrap().fit().unwrap();
    let counts: Vec<usize> = out.records.iter().map(|r| r.branch_count).collect();
    assert_eq!(counts, [1, 2, 3]);
    let last = out.records.last().unwrap();
    assert!(last.d_sp.unwrap() > 0.0 && last.d_ch.unwrap() > 0.0);
    assert!(last.d_branch.is_none());
    assert_eq!(out.records[0].d_sp, Some(1.0));
    assert!(out.records.iter().all(|r| (0.0..=1.0).contains(&r.test_acc)));
}

#[test]
fn training_is_deterministic() {
    let split = tiny_split();
    let a = Trainer::new(ensemble(false, 2), &split, quick(2)).unwrap().fit().unwrap();
    let b = Trainer::new(ensemble(false, 2), &split, quick(2)).unwrap().fit().unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.model, b.model);
}

#[test]
fn zero_weight_matches_disabled_diversity() {
    let split = tiny_split();
    let zero = TrainConfig { diversity_weight: 0.0, ..quick(2) };
    let off = TrainConfig { diversity_spatial: false, diversity_channel: false, ..quick(2) };
    let a = Trainer::new(ensemble(true, 2), &split, zero).unwrap().fit().unwrap();
    let b = Trainer::new(ensemble(true, 2), &split, off).unwrap().fit().unwrap();
    assert_eq!(a.model, b.model);
    for (x, y) in a.records.iter().zip(&b.records) {
        assert_eq!((x.train_acc, x.test_acc, x.loss_total, x.loss_cls), (y.train_acc, y.test_acc, y.loss_total, y.loss_cls));
        assert!(x.d_sp.is_some() && y.d_sp.is_none());
    }
}

#[test]
fn dual_branch_trains_with_all_terms() {
    let split = tiny_split();
    let model = Model::Dual(DualBranchModel::new(InputShape::default(), 4, 0.6, true, 1).unwrap());
    let out = Trainer::new(model, &split, quick(1)).unwrap().fit().unwrap();
    let r = &out.records[0];
    assert!(r.d_sp.is_some() && r.d_ch.is_some() && r.d_branch.is_some());

    let mut g = Graph::new();
    let batch = split.train.gather(&[0, 1, 2]);
    let terms = forward_loss(&out.model, &mut g, batch.images, &batch.labels, &quick(1)).unwrap();
    assert!((terms.breakdown.recompose() - terms.breakdown.total).abs() < 1e-12);
    assert_eq!(terms.breakdown.lambda, Some(0.6));
}

#[test]
fn all_layers_averages_taps() {
    let split = tiny_split();
    let mut m = EnsembleModel::new(InputShape::default(), 4, 2, true, 3).unwrap();
    m.add_branch().unwrap();
    let model = Model::Ensemble(m);
    let batch = split.train.gather(&[0, 1, 2, 3]);
    let cfg = TrainConfig { all_layers: true, ..quick(1) };
    let mut g = Graph::new();
    let all = forward_loss(&model, &mut g, batch.images.clone(), &batch.labels, &cfg).unwrap();
    let mut g2 = Graph::new();
    let last = forward_loss(&model, &mut g2, batch.images, &batch.labels, &quick(1)).unwrap();
    assert_ne!(all.breakdown.d_sp, last.breakdown.d_sp);
    assert_eq!(all.breakdown.class_parts, last.breakdown.class_parts);
}

#[test]
fn non_finite_loss_aborts() {
    let split = tiny_split();
    let mut model = ensemble(false, 1);
    model.params_mut().into_iter().last().unwrap().data_mut()[0] = f64::NAN;
    match Trainer::new(model, &split, quick(1)).unwrap().fit() {
        Err(crate::Error::NonFinite { epoch: 0, batch: 0, parts }) => assert!(parts.contains("NaN")),
        other => panic!("expected a non-finite abort, got {other:?}"),
    }
}

#[test]
fn config_validation() {
    let split = tiny_split();
    let bad = [
        TrainConfig { epochs: 0, ..quick(1) },
        TrainConfig { batch_size: 1000, ..quick(1) },
        TrainConfig { momentum: 1.0, ..quick(1) },
        TrainConfig { diversity_weight: -0.5, ..quick(1) },
    ];
    for cfg in bad {
        assert!(matches!(Trainer::new(ensemble(false, 1), &split, cfg), Err(crate::Error::Config { .. })));
    }
}

#[test]
fn single_branch_vote_equals_branch_accuracy() {
    let split = tiny_split();
    let report = evaluate(&ensemble(true, 1), &split.test).unwrap();
    assert_eq!(report.vote_accuracy, Some(report.branch_accuracy.as_ref().unwrap()[0]));
    assert_eq!(report.per_class.len(), 4);
}

#[test]
fn pooled_lengths_follow_the_taps() {
    let e = pooled_lengths(&ensemble(true, 1)).unwrap();
    assert_eq!((e.spatial, e.channel, e.branch), (64, 32, None));
    let d = Model::Dual(DualBranchModel::new(InputShape::default(), 4, 0.6, false, 0).unwrap());
    let d = pooled_lengths(&d).unwrap();
    assert_eq!((d.spatial, d.channel, d.branch), (16, 32, Some(32)));
}
