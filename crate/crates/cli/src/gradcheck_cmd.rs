//! The `gradcheck` subcommand: finite-difference verification of every
//! primitive op and of each composite (RDB, WRDB, AsyCA, IMBF, full toy
//! model), in double precision.

use din_core::blocks::{AsyCa, Rdb, Wrdb};
use din_core::gradcheck::{gradcheck, gradcheck_with_params};
use din_core::model::{DinModel, FusionMode, ModelConfig, Task};
use din_core::ops;
use din_core::params::ParamStore;
use din_core::rng::Rng;
use din_core::shape::Shape;
use din_core::tensor::Tensor;
use din_core::train::l1_loss;
use din_core::Result;

pub struct ReportLine {
    pub name: &'static str,
    pub err: f64,
    pub tol: f64,
}

const PRIMITIVE_TOL: f64 = 1e-6;
const COMPOSITE_TOL: f64 = 1e-5;
const END_TO_END_TOL: f64 = 1e-4;

fn rand_tensor(shape: Shape, rng: &mut Rng) -> Tensor<f64> {
    Tensor::from_vec(shape, (0..shape.numel()).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
}

fn rand_away_from_zero(shape: Shape, rng: &mut Rng) -> Tensor<f64> {
    let data: Vec<f64> = (0..shape.numel())
        .map(|_| {
            let v = rng.uniform(-1.0, 1.0);
            if v.abs() < 0.01 {
                0.05 * v.signum().max(-1.0).min(1.0) + if v == 0.0 { 0.05 } else { 0.0 }
            } else {
                v
            }
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

pub fn run(full: bool) -> Result<Vec<ReportLine>> {
    let seeds = if full { 20 } else { 5 };
    let mut out = Vec::new();

    let check_primitive = |name: &'static str,
                               f: &dyn Fn(&mut Rng) -> Result<f64>|
     -> Result<ReportLine> {
        let mut worst = 0.0f64;
        for seed in 0..seeds {
            let mut rng = Rng::seed_from(4000 + seed);
            worst = worst.max(f(&mut rng)?);
        }
        Ok(ReportLine {
            name,
            err: worst,
            tol: PRIMITIVE_TOL,
        })
    };

    out.push(check_primitive("conv2d (3x3, pad 1)", &|rng| {
        let x = rand_tensor(Shape::new(1, 2, 5, 5), rng);
        let w = rand_tensor(Shape::new(3, 2, 3, 3), rng);
        let b = rand_tensor(Shape::new(1, 3, 1, 1), rng);
        gradcheck(
            &|ts: &[Tensor<f64>]| Ok(ops::mean_all(&ops::conv2d(&ts[0], &ts[1], Some(&ts[2]), 1, 1)?)),
            &[x, w, b],
        )
    })?);
    out.push(check_primitive("conv2d (8x8, stride 4)", &|rng| {
        let x = rand_tensor(Shape::new(1, 2, 8, 8), rng);
        let w = rand_tensor(Shape::new(2, 2, 8, 8), rng);
        gradcheck(
            &|ts: &[Tensor<f64>]| Ok(ops::mean_all(&ops::conv2d(&ts[0], &ts[1], None, 4, 2)?)),
            &[x, w],
        )
    })?);
    out.push(check_primitive("depthwise_conv1x1", &|rng| {
        let x = rand_tensor(Shape::new(2, 3, 4, 4), rng);
        let w = rand_tensor(Shape::new(1, 3, 1, 1), rng);
        gradcheck(
            &|ts: &[Tensor<f64>]| Ok(ops::mean_all(&ops::depthwise_conv1x1(&ts[0], &ts[1])?)),
            &[x, w],
        )
    })?);
    out.push(check_primitive("leaky_relu (0.2)", &|rng| {
        let x = rand_away_from_zero(Shape::new(1, 2, 4, 4), rng);
        gradcheck(
            &|ts: &[Tensor<f64>]| Ok(ops::mean_all(&ops::leaky_relu(&ts[0], 0.2))),
            std::slice::from_ref(&x),
        )
    })?);
    out.push(check_primitive("relu", &|rng| {
        let x = rand_away_from_zero(Shape::new(1, 2, 4, 4), rng);
        gradcheck(
            &|ts: &[Tensor<f64>]| Ok(ops::mean_all(&ops::relu(&ts[0]))),
            std::slice::from_ref(&x),
        )
    })?);
    out.push(check_primitive("sigmoid", &|rng| {
        let x = rand_tensor(Shape::new(1, 2, 4, 4), rng);
        gradcheck(
            &|ts: &[Tensor<f64>]| Ok(ops::mean_all(&ops::sigmoid(&ts[0]))),
            std::slice::from_ref(&x),
        )
    })?);
    out.push(check_primitive("global_avg_pool", &|rng| {
        let x = rand_tensor(Shape::new(2, 3, 5, 4), rng);
        gradcheck(
            &|ts: &[Tensor<f64>]| Ok(ops::mean_all(&ops::global_avg_pool(&ts[0])?)),
            std::slice::from_ref(&x),
        )
    })?);
    out.push(check_primitive("concat + slice", &|rng| {
        let a = rand_tensor(Shape::new(1, 2, 3, 3), rng);
        let b = rand_tensor(Shape::new(1, 3, 3, 3), rng);
        gradcheck(
            &|ts: &[Tensor<f64>]| {
                let c = ops::concat_channels(&ts[0], &ts[1])?;
                Ok(ops::mean_all(&ops::slice_channels(&c, 1, 4)?))
            },
            &[a, b],
        )
    })?);
    out.push(check_primitive("add/sub/mul/scale", &|rng| {
        let a = rand_tensor(Shape::new(1, 2, 3, 3), rng);
        let b = rand_tensor(Shape::new(1, 2, 3, 3), rng);
        gradcheck(
            &|ts: &[Tensor<f64>]| {
                let s = ops::add(&ts[0], &ts[1])?;
                let d = ops::sub(&ts[0], &ts[1])?;
                Ok(ops::mean_all(&ops::scale(&ops::mul(&s, &d)?, 0.7)))
            },
            &[a, b],
        )
    })?);
    out.push(check_primitive("mul_channelwise", &|rng| {
        let x = rand_tensor(Shape::new(2, 3, 4, 4), rng);
        let g = rand_tensor(Shape::new(2, 3, 1, 1), rng);
        gradcheck(
            &|ts: &[Tensor<f64>]| Ok(ops::mean_all(&ops::mul_channelwise(&ts[0], &ts[1])?)),
            &[x, g],
        )
    })?);
    out.push(check_primitive("pixel_shuffle (r=2)", &|rng| {
        let x = rand_tensor(Shape::new(1, 8, 3, 3), rng);
        gradcheck(
            &|ts: &[Tensor<f64>]| {
                let y = ops::pixel_shuffle(&ts[0], 2)?;
                Ok(ops::mean_all(&ops::mul(&y, &y)?))
            },
            std::slice::from_ref(&x),
        )
    })?);
    out.push(check_primitive("bicubic_resize (x2, x1/2)", &|rng| {
        let x = rand_tensor(Shape::new(1, 2, 6, 6), rng);
        let up = gradcheck(
            &|ts: &[Tensor<f64>]| {
                let y = ops::bicubic_resize(&ts[0], 2.0)?;
                Ok(ops::mean_all(&ops::mul(&y, &y)?))
            },
            std::slice::from_ref(&x),
        )?;
        let down = gradcheck(
            &|ts: &[Tensor<f64>]| {
                let y = ops::bicubic_resize(&ts[0], 0.5)?;
                Ok(ops::mean_all(&ops::mul(&y, &y)?))
            },
            std::slice::from_ref(&x),
        )?;
        Ok(up.max(down))
    })?);
    out.push(check_primitive("l1_loss", &|rng| {
        let a = rand_tensor(Shape::new(1, 2, 3, 3), rng);
        let b_data: Vec<f64> = a.data().iter().map(|v| v + rng.uniform(0.05, 0.4)).collect();
        let b = Tensor::from_vec(a.shape(), b_data).unwrap();
        gradcheck(&|ts: &[Tensor<f64>]| l1_loss(&ts[0], &ts[1]), &[a, b])
    })?);

    // ---- composites ----
    let mut rng = Rng::seed_from(4242);

    let mut store = ParamStore::<f64>::new(7);
    let rdb = Rdb::new(&mut store, "rdb", 8, 4, 2, 0.1)?;
    let x = rand_tensor(Shape::new(1, 8, 6, 6), &mut rng);
    out.push(ReportLine {
        name: "RDB (C=8, G=4, K=2)",
        err: gradcheck_with_params(&store, &x, |x| rdb.forward(x))?,
        tol: COMPOSITE_TOL,
    });

    let mut store = ParamStore::<f64>::new(8);
    let wrdb = Wrdb::new(&mut store, "w", 8, 4, 2, 2, 0.1)?;
    let x = rand_tensor(Shape::new(1, 8, 6, 6), &mut rng);
    out.push(ReportLine {
        name: "WRDB (B=2)",
        err: gradcheck_with_params(&store, &x, |x| wrdb.forward(x))?,
        tol: COMPOSITE_TOL,
    });

    let mut store = ParamStore::<f64>::new(9);
    let asyca = AsyCa::new(&mut store, "f", 8, 4)?;
    let x1 = rand_tensor(Shape::new(1, 8, 6, 6), &mut rng);
    let x2 = rand_tensor(Shape::new(1, 8, 6, 6), &mut rng);
    let joint = ops::concat_channels(&x1, &x2)?;
    out.push(ReportLine {
        name: "AsyCA (C=8, r=4)",
        err: gradcheck_with_params(&store, &joint, |j| {
            let a = ops::slice_channels(j, 0, 8)?;
            let b = ops::slice_channels(j, 8, 16)?;
            asyca.forward(&a, &b)
        })?,
        tol: COMPOSITE_TOL,
    });

    let toy = ModelConfig {
        task: Task::Sr,
        scale: 2,
        branches: 2,
        blocks_per_branch: 2,
        rdbs_per_block: 1,
        layers_per_rdb: 2,
        growth: 4,
        channels: 8,
        reduction: 4,
        gamma: 0.1,
        fusion: FusionMode::AsyCa,
    };
    let (model, store) = DinModel::<f64>::build(toy, 10)?;
    let f0 = rand_tensor(Shape::new(1, 8, 8, 8), &mut rng);
    out.push(ReportLine {
        name: "IMBF (M=2, D=2)",
        err: gradcheck_with_params(&store, &f0, |x| model.imbf_forward(x))?,
        tol: END_TO_END_TOL,
    });

    let (model, store) = DinModel::<f64>::build(toy, 11)?;
    let lq_data: Vec<f64> = (0..3 * 64).map(|_| rng.uniform(0.0, 1.0)).collect();
    let lq = Tensor::from_vec((1, 3, 8, 8), lq_data)?;
    out.push(ReportLine {
        name: "full toy model (1x3x8x8)",
        err: gradcheck_with_params(&store, &lq, |x| model.forward(x))?,
        tol: END_TO_END_TOL,
    });

    Ok(out)
}
