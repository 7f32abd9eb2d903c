mod common;

use hypergaussians::gradients::{
    check_gradients, loss_and_grad, ConditionObjective, FrameBatch, GradError, GradOp, Model, ParamSet,
    PipelineInstance,
};
use hypergaussians::hypergauss::Partition;
use hypergaussians::rng;
use hypergaussians::splat::{Image, RenderOptions};
use proptest::prelude::*;

#[test]
fn quadratic_is_exact() {
    for seed in 0..5 {
        assert!(GradOp::Quadratic.check(seed, 1e-3).max_rel_error < 1e-10);
    }
}

#[test]
fn mean_jacobian_in_gamma() {
    let mut r = rng::stream(31, "jac");
    let (m, n) = (3, 6);
    let block = common::random_block(&mut r, m, n);
    let gamma = rng::normals(&mut r, n, 1.0);
    let x = ConditionObjective::pack(&block, &gamma);
    for i in 0..m {
        let mut w = vec![0.0; m];
        w[i] = 1.0;
        let f = ConditionObjective { partition: Partition { m, n }, w_mu: w, w_logdet: 0.0 };
        let rep = check_gradients("mean_row", &f, &x, 1e-5);
        assert!(rep.max_rel_error < 1e-6, "{rep:?}");
    }
}

#[test]
fn pipeline_with_two_primitives() {
    for seed in 0..3 {
        let inst = PipelineInstance::random(seed, 2, 8, 2, 1);
        let f = inst.objective();
        let rep = check_gradients("pipeline", &f, &f.template.values.clone(), 1e-5);
        assert!(rep.max_rel_error < 1e-4, "{rep:?}");
        assert_eq!(rep.coords_checked, f.template.values.len());
    }
}

#[test]
fn every_operator_passes() {
    for op in GradOp::ALL {
        let rep = op.check(7, 1e-5);
        assert!(rep.max_rel_error < 1e-4, "{rep:?}");
    }
}

#[test]
fn perfect_reconstruction_has_zero_loss_and_gradient() {
    let inst = PipelineInstance::random(2, 4, 8, 2, 2);
    let targets: Vec<Image> =
        (0..2).map(|f| inst.model.render_frame(f, &inst.cam, &RenderOptions::default()).unwrap()).collect();
    let batch = FrameBatch::all(&inst.cam, RenderOptions::default(), &targets);
    let (l, g) = loss_and_grad(&inst.model, &batch).unwrap();
    assert_eq!(l, 0.0);
    assert!(ParamSet::from_model(&g).values.iter().all(|v| v.abs() <= 1e-12));
}

#[test]
fn gradients_are_bitwise_deterministic() {
    let inst = PipelineInstance::random(5, 4, 8, 3, 2);
    let batch = FrameBatch::all(&inst.cam, RenderOptions::default(), &inst.targets);
    let a = loss_and_grad(&inst.model, &batch).unwrap();
    let b = loss_and_grad(&inst.model, &batch).unwrap();
    assert_eq!(a.0.to_bits(), b.0.to_bits());
    let (ga, gb) = (ParamSet::from_model(&a.1).values, ParamSet::from_model(&b.1).values);
    assert!(ga.iter().zip(&gb).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn divergence_is_reported() {
    let mut inst = PipelineInstance::random(5, 2, 8, 1, 1);
    inst.model.primitives[0].color = [f64::NAN; 3];
    inst.model.primitives[0].base_mu = [0.0; 3];
    let batch = FrameBatch::all(&inst.cam, RenderOptions::exact(), &inst.targets);
    assert!(matches!(loss_and_grad(&inst.model, &batch), Err(GradError::NonFiniteLoss(_))));
}

#[test]
fn out_of_range_frame_is_rejected() {
    let inst = PipelineInstance::random(5, 2, 8, 1, 1);
    let batch = FrameBatch { cam: &inst.cam, opts: RenderOptions::default(), items: vec![(3, &inst.targets[0])] };
    assert!(matches!(loss_and_grad(&inst.model, &batch), Err(GradError::FrameOutOfRange { frame: 3, .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn param_set_round_trips_bit_exactly(seed in any::<u64>(), prims in 0usize..6, n in 0usize..5, frames in 0usize..4) {
        let mut model: Model = PipelineInstance::random(seed, prims.max(1), 4, n, frames).model;
        model.primitives.truncate(prims);
        let p = ParamSet::from_model(&model);
        prop_assert_eq!(p.values.len(), p.layout().len());
        prop_assert_eq!(p.groups().len(), p.values.len());
        let back = p.to_model();
        let again = ParamSet::from_model(&back);
        prop_assert!(p.values.iter().zip(&again.values).all(|(a, b)| a.to_bits() == b.to_bits()));
        prop_assert_eq!(back, model);
    }
}
