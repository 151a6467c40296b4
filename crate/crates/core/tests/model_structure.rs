//! Whole-model structural tests: hand-unrolled interleaving, degenerate
//! branch/depth cases, shape contracts, count monotonicity, fusion-mode
//! switches, and self-ensemble equivariance.

use din_core::model::{self, DinModel, FusionMode, ModelConfig, Task};
use din_core::ops;
use din_core::params::ParamStore;
use din_core::rng::Rng;
use din_core::shape::Shape;
use din_core::tensor::Tensor;

fn rand_tensor(shape: Shape, rng: &mut Rng) -> Tensor<f64> {
    Tensor::from_vec(shape, (0..shape.numel()).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
}

fn rand_image(shape: Shape, rng: &mut Rng) -> Tensor<f64> {
    Tensor::from_vec(shape, (0..shape.numel()).map(|_| rng.uniform(0.0, 1.0)).collect()).unwrap()
}

fn randomize(store: &ParamStore<f64>, rng: &mut Rng) {
    for (_, p) in store.iter() {
        let shape = p.borrow().shape();
        *p.borrow_mut() = rand_tensor(shape, rng).requires_grad();
    }
}

fn cfg(m: usize, d: usize) -> ModelConfig {
    ModelConfig {
        task: Task::Sr,
        scale: 2,
        branches: m,
        blocks_per_branch: d,
        rdbs_per_block: 1,
        layers_per_rdb: 2,
        growth: 4,
        channels: 8,
        reduction: 4,
        gamma: 0.1,
        fusion: FusionMode::AsyCa,
    }
}

fn max_abs_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn imbf_m2_d2_matches_hand_unrolled_graph() {
    let (model, store) = DinModel::<f64>::build(cfg(2, 2), 42).unwrap();
    let mut rng = Rng::seed_from(1);
    randomize(&store, &mut rng);
    let f0 = rand_tensor(Shape::new(1, 8, 6, 6), &mut rng);

    // Node-by-node unroll of the interleaved wiring.
    let b = model.branch_blocks();
    let fuse = model.fusion_nodes();
    let f11 = b[0][0].forward(&f0).unwrap();
    let f12 = b[0][1].forward(&f11).unwrap();
    let f21 = b[1][0]
        .forward(&fuse[0][0].forward(&f12, &f11).unwrap())
        .unwrap();
    let f22 = b[1][1]
        .forward(&fuse[0][1].forward(&f12, &f21).unwrap())
        .unwrap();
    let gf1 = model
        .gff_layers().0
        .forward(&ops::concat_channels(&f12, &f22).unwrap())
        .unwrap();
    let gf2 = model
        .gff_layers().1
        .forward(&ops::concat_channels(&f21, &f0).unwrap())
        .unwrap();
    let want = ops::add(&gf1, &gf2).unwrap();

    let got = model.imbf_forward(&f0).unwrap();
    assert!(max_abs_diff(&got, &want) < 1e-10);
}

#[test]
fn imbf_single_branch_uses_no_fusion() {
    let (model, store) = DinModel::<f64>::build(cfg(1, 3), 43).unwrap();
    let mut rng = Rng::seed_from(2);
    randomize(&store, &mut rng);
    let f0 = rand_tensor(Shape::new(1, 8, 6, 6), &mut rng);
    let got = model.imbf_forward(&f0).unwrap();
    assert_eq!(model.fusion_invocations(), 0);

    let b = model.branch_blocks();
    let f1 = b[0][0].forward(&f0).unwrap();
    let f2 = b[0][1].forward(&f1).unwrap();
    let f3 = b[0][2].forward(&f2).unwrap();
    let gf1 = model.gff_layers().0.forward(&f3).unwrap();
    let gf2 = model
        .gff_layers().1
        .forward(&ops::concat_channels_n(&[&f1, &f2, &f0]).unwrap())
        .unwrap();
    let want = ops::add(&gf1, &gf2).unwrap();
    assert!(max_abs_diff(&got, &want) < 1e-10);
}

#[test]
fn imbf_m2_d1_fuses_first_state_with_itself() {
    let (model, store) = DinModel::<f64>::build(cfg(2, 1), 44).unwrap();
    let mut rng = Rng::seed_from(3);
    randomize(&store, &mut rng);
    let f0 = rand_tensor(Shape::new(1, 8, 5, 5), &mut rng);
    let got = model.imbf_forward(&f0).unwrap();
    assert_eq!(model.fusion_invocations(), 1);

    let b = model.branch_blocks();
    let fuse = model.fusion_nodes();
    let f11 = b[0][0].forward(&f0).unwrap();
    let f21 = b[1][0]
        .forward(&fuse[0][0].forward(&f11, &f11).unwrap())
        .unwrap();
    let gf1 = model
        .gff_layers().0
        .forward(&ops::concat_channels(&f11, &f21).unwrap())
        .unwrap();
    // With depth 1 the shallow aggregation sees only f0.
    let gf2 = model.gff_layers().1.forward(&f0).unwrap();
    let want = ops::add(&gf1, &gf2).unwrap();
    assert!(max_abs_diff(&got, &want) < 1e-10);
}

#[test]
fn count_params_is_monotone_in_depth_and_blocks() {
    let count = |b: usize, d: usize| {
        let mut c = cfg(2, d);
        c.rdbs_per_block = b;
        let (_m, store) = DinModel::<f64>::build(c, 1).unwrap();
        store.count_scalars()
    };
    let base = count(1, 1);
    assert!(count(2, 1) > base);
    assert!(count(1, 2) > base);
    assert!(count(2, 2) > count(2, 1));
    assert!(count(2, 2) > count(1, 2));
    assert!(count(3, 2) > count(2, 2));
    assert!(count(2, 3) > count(2, 2));
}

#[test]
fn forward_shape_contract_all_tasks_and_scales() {
    let mut rng = Rng::seed_from(4);
    // sr at every scale, on inputs from 8x8 up to 64x64.
    for &scale in &[2usize, 3, 4, 8] {
        let mut c = cfg(2, 1);
        c.scale = scale;
        let (model, _store) = DinModel::<f64>::build(c, 7).unwrap();
        for &hw in &[8usize, 24, 64] {
            let lq = rand_image(Shape::new(1, 3, hw, hw), &mut rng);
            let out = model.forward(&lq).unwrap();
            assert_eq!(
                out.shape(),
                Shape::new(1, 3, hw * scale, hw * scale),
                "sr x{scale} on {hw}"
            );
        }
    }
    // Identity-size tasks.
    for task in [Task::Derain, Task::Deblur, Task::Dehaze] {
        let mut c = cfg(2, 1);
        c.task = task;
        c.scale = if task == Task::Derain { 1 } else { 4 };
        let (model, _store) = DinModel::<f64>::build(c, 7).unwrap();
        for &hw in &[8usize, 32, 64] {
            let lq = rand_image(Shape::new(1, 3, hw, hw), &mut rng);
            let out = model.forward(&lq).unwrap();
            assert_eq!(out.shape(), lq.shape(), "{} on {hw}", task.name());
        }
    }
}

#[test]
fn all_fusion_modes_run_the_toy_forward() {
    let mut rng = Rng::seed_from(5);
    let lq = rand_image(Shape::new(1, 3, 8, 8), &mut rng);
    for mode in [
        FusionMode::AsyCa,
        FusionMode::Sum,
        FusionMode::Concat,
        FusionMode::Se,
    ] {
        let mut c = cfg(2, 2);
        c.fusion = mode;
        let (model, _store) = DinModel::<f64>::build(c, 11).unwrap();
        let out = model.forward(&lq).unwrap();
        assert_eq!(out.shape(), Shape::new(1, 3, 16, 16), "{}", mode.name());
        assert_eq!(model.fusion_invocations(), 2, "{}", mode.name());
    }
}

#[test]
fn mult_adds_formula_examples() {
    // One 3x3 conv, 64 -> 64 channels, on a 64x64 map.
    let mut store = ParamStore::<f64>::new(1);
    let conv =
        din_core::blocks::ConvLayer::new(&mut store, "c", 64, 64, 3, 1, 1, false).unwrap();
    assert_eq!(conv.mult_adds(64, 64), 150_994_944);
}

#[test]
fn self_ensemble_commutes_with_symmetric_resampling() {
    // The bicubic x2 forward is dihedral-equivariant, so ensembling it
    // changes nothing beyond rounding.
    let mut rng = Rng::seed_from(6);
    for (h, w) in [(10usize, 10usize), (8, 12)] {
        let lq = rand_image(Shape::new(1, 3, h, w), &mut rng);
        let direct = ops::bicubic_resize(&lq, 2.0).unwrap();
        let ensembled =
            model::self_ensemble(|t| ops::bicubic_resize(t, 2.0), &lq).unwrap();
        assert_eq!(ensembled.shape(), direct.shape());
        assert!(max_abs_diff(&direct, &ensembled) < 1e-6, "{h}x{w}");
    }
}

#[test]
fn deblur_head_downsamples_then_tail_restores() {
    let mut c = cfg(2, 1);
    c.task = Task::Deblur;
    c.scale = 4;
    let (model, _store) = DinModel::<f64>::build(c, 13).unwrap();
    let mut rng = Rng::seed_from(7);
    let lq = rand_image(Shape::new(2, 3, 24, 32), &mut rng);
    let out = model.forward(&lq).unwrap();
    assert_eq!(out.shape(), lq.shape());
}

#[test]
fn wrdb_mult_adds_match_hand_formula() {
    let mut store = ParamStore::<f64>::new(2);
    let wrdb = din_core::blocks::Wrdb::new(&mut store, "w", 8, 4, 3, 2, 0.1).unwrap();
    let (h, w) = (10usize, 12usize);
    let hw = (h * w) as u64;
    let entry = 8 * 8 * 9 * hw;
    let rdb = {
        let dense: u64 = (1..=2u64).map(|k| (8 + (k - 1) * 4) * 4 * 9).sum::<u64>() * hw;
        let fusion = (8 + 2 * 4) * 8 * hw;
        let tail = 8 * 8 * 9 * hw;
        dense + fusion + tail
    };
    // Scaling vectors: block b consumes b of them, each C*H*W.
    let dwc = (1 + 2 + 3) as u64 * 8 * hw;
    assert_eq!(wrdb.mult_adds(h, w), entry + 3 * rdb + dwc);
}
