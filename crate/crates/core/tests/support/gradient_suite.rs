//! Finite-difference checks of every differentiable op and of the composite
//! blocks, shared by the acceptance and gradient test targets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use steinformer::interactors::{BaseBlock, BlockSettings, CsiStage, CtiBlock, DifferenceMode, MixerKind};
use steinformer::model::{hybrid_loss, dice_loss, focal_loss, LossConfig, ModelConfig, SteinFormer};
use steinformer::nn::{Init, Mode};
use steinformer::spectral::{dct2, idct2, FrequencyStrategy};
use steinformer::tensor::gradcheck::{check_inputs, check_module, GradReport, Tolerance};
use steinformer::tensor::{
    add, batch_norm, bilinear_resize, concat, conv2d, gelu, index_select, mean, mul, mul_channel, plane_mean, relu,
    scale, sigmoid, split, sub, sum, ConvSpec, Tensor,
};
use steinformer::Result;

pub const TRIALS: u64 = 20;

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new((0..n).map(|_| rng.gen_range(lo..hi)).collect(), shape).unwrap()
}

/// Values bounded away from zero, for ops with a kink there.
fn rand_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let v = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.05..2.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(v, shape).unwrap()
}

fn small_shape(rng: &mut ChaCha8Rng) -> Vec<usize> {
    vec![rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..5), rng.gen_range(1..5)]
}

/// Scalar summary `Σ out ⊙ r` with a fixed random `r`, so every output
/// element contributes with its own weight.
fn project(out: &Tensor, seed: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let r = rand_tensor(out.shape(), &mut rng, -1.0, 1.0);
    Ok(sum(&mul(out, &r)?))
}

fn trials(f: impl Fn(u64, &mut ChaCha8Rng) -> Result<GradReport>) -> GradReport {
    let mut total = GradReport::default();
    for t in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + t);
        total.merge(f(t, &mut rng).expect("gradient check ran"));
    }
    total
}

fn tol() -> Tolerance {
    Tolerance::default()
}

fn unary(op: fn(&Tensor) -> Tensor, kinked: bool) -> GradReport {
    trials(|t, rng| {
        let shape = small_shape(rng);
        let x = if kinked { rand_away_from_zero(rng, &shape) } else { rand_tensor(&shape, rng, -3.0, 3.0) };
        check_inputs(&[x], |v| project(&op(&v[0]), t), tol())
    })
}

fn binary(op: fn(&Tensor, &Tensor) -> Result<Tensor>) -> GradReport {
    trials(|t, rng| {
        let shape = small_shape(rng);
        let a = rand_tensor(&shape, rng, -2.0, 2.0);
        let b = rand_tensor(&shape, rng, -2.0, 2.0);
        check_inputs(&[a, b], |v| project(&op(&v[0], &v[1])?, t), tol())
    })
}

fn conv_case(rng: &mut ChaCha8Rng, t: u64) -> Result<GradReport> {
    let k = [1, 3, 5][rng.gen_range(0..3)];
    let stride = rng.gen_range(1..3);
    let padding = rng.gen_range(0..=k / 2);
    let cin = rng.gen_range(1..4);
    let depthwise = rng.gen_bool(0.3);
    let (cout, groups) = if depthwise { (cin, cin) } else { (rng.gen_range(1..4), 1) };
    let bias = rng.gen_bool(0.7);
    let mut spec = ConvSpec::new(k, stride, padding).with_groups(groups);
    if !bias {
        spec = spec.without_bias();
    }
    let hw = k + rng.gen_range(0..4);
    let x = rand_tensor(&[rng.gen_range(1..3), cin, hw, hw], rng, -1.0, 1.0);
    let w = rand_tensor(&[cout, cin / groups, k, k], rng, -1.0, 1.0);
    let mut inputs = vec![x, w];
    if bias {
        inputs.push(rand_tensor(&[cout], rng, -1.0, 1.0));
    }
    check_inputs(
        &inputs,
        |v| {
            let y = conv2d(&v[0], &v[1], v.get(2), spec)?;
            project(&y, t)
        },
        tol(),
    )
}

fn batch_norm_case(rng: &mut ChaCha8Rng, t: u64, train: bool) -> Result<GradReport> {
    let c = rng.gen_range(1..4);
    let shape = [rng.gen_range(2..4), c, rng.gen_range(2..4), rng.gen_range(2..4)];
    let x = rand_tensor(&shape, rng, -2.0, 2.0);
    let g = rand_tensor(&[c], rng, 0.5, 1.5);
    let b = rand_tensor(&[c], rng, -0.5, 0.5);
    let rm: Vec<f64> = (0..c).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let rv: Vec<f64> = (0..c).map(|_| rng.gen_range(0.5..2.0)).collect();
    check_inputs(
        &[x, g, b],
        |v| {
            let running = if train { None } else { Some((&rm[..], &rv[..])) };
            let (y, _) = batch_norm(&v[0], &v[1], &v[2], running, 1e-5)?;
            project(&y, t)
        },
        tol(),
    )
}

fn loss_inputs(rng: &mut ChaCha8Rng) -> (Tensor, Vec<f64>) {
    let (n, h, w) = (rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..4));
    let z = rand_tensor(&[n, 2, h, w], rng, -3.0, 3.0);
    let y = (0..n * h * w).map(|_| rng.gen_range(0..2) as f64).collect();
    (z, y)
}

fn toy_settings(mixer: MixerKind, strategy: FrequencyStrategy) -> BlockSettings {
    BlockSettings { mlp_ratio: 2, mixer, heads: 2, p: 3, expansion: 1, strategy, seed: Some(0) }
}

fn cti_case() -> GradReport {
    trials(|t, rng| {
        let mut init = Init { rng: &mut ChaCha8Rng::seed_from_u64(t), std: 0.3 };
        let diff = if t % 2 == 0 { DifferenceMode::Relative } else { DifferenceMode::Signed };
        let mut cti = CtiBlock::new("cti", 3, diff, &mut init)?;
        let f1 = rand_tensor(&[1, 3, 4, 4], rng, -1.0, 1.0);
        let f2 = rand_tensor(&[1, 3, 4, 4], rng, -1.0, 1.0);
        let loss = |c: &CtiBlock, a: &Tensor, b: &Tensor| -> Result<Tensor> {
            let o = c.forward(a, b)?;
            add(&project(&o.r1, t)?, &project(&o.r2, t + 1)?)
        };
        let mut r = check_inputs(&[f1.clone(), f2.clone()], |v| loss(&cti, &v[0], &v[1]), tol())?;
        r.merge(check_module(&mut cti, |c| loss(c, &f1, &f2), tol(), 1)?);
        Ok(r)
    })
}

fn block_case() -> GradReport {
    let kinds = [
        (MixerKind::Frequency, FrequencyStrategy::PretrainedPriors),
        (MixerKind::Frequency, FrequencyStrategy::RandomSelection),
        (MixerKind::Frequency, FrequencyStrategy::DynamicAssignment),
        (MixerKind::Conv, FrequencyStrategy::PretrainedPriors),
    ];
    trials(|t, rng| {
        let (mixer, strategy) = kinds[t as usize % kinds.len()];
        let mut init = Init { rng: &mut ChaCha8Rng::seed_from_u64(t), std: 0.3 };
        let mut block = BaseBlock::new("block", 4, &toy_settings(mixer, strategy), &mut init)?;
        let x = rand_tensor(&[2, 4, 4, 4], rng, -1.0, 1.0);
        let mut r = check_inputs(&[x.clone()], |v| project(&block.forward(&v[0], Mode::Train)?, t), tol())?;
        r.merge(check_module(&mut block, |b| project(&b.forward(&x, Mode::Train)?, t), tol(), 1)?);
        Ok(r)
    })
}

fn csi_case() -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut init = Init { rng: &mut ChaCha8Rng::seed_from_u64(4), std: 0.3 };
    let settings = toy_settings(MixerKind::Frequency, FrequencyStrategy::PretrainedPriors);
    let mut st = CsiStage::new(4, &[2, 2, 4, 4], 1, &settings, DifferenceMode::Relative, &mut init).unwrap();
    let x1 = rand_tensor(&[2, 4, 4, 4], &mut rng, -1.0, 1.0);
    let x2 = rand_tensor(&[2, 4, 4, 4], &mut rng, -1.0, 1.0);
    let loss = |s: &CsiStage, a: &Tensor, b: &Tensor| -> Result<Tensor> {
        let o = s.forward(a, b, Mode::Train)?;
        add(&project(&o.g1, 1)?, &project(&o.g2, 2)?)
    };
    let mut r = check_module(&mut st, |s| loss(s, &x1, &x2), tol(), 1).unwrap();
    r.merge(check_inputs(&[x1.clone(), x2.clone()], |v| loss(&st, &v[0], &v[1]), tol()).unwrap());
    r
}

pub fn toy_model_config() -> ModelConfig {
    ModelConfig {
        stage_channels: vec![4, 4, 6, 8],
        heads: 2,
        p: 3,
        expansion: 1,
        decoder_channels: 4,
        input_size: [32, 32],
        init_std: 0.2,
        seed: 11,
        ..ModelConfig::default()
    }
}

fn model_case() -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut model = SteinFormer::new(&toy_model_config()).unwrap();
    let t1 = rand_tensor(&[2, 3, 32, 32], &mut rng, 0.0, 1.0);
    let t2 = rand_tensor(&[2, 3, 32, 32], &mut rng, 0.0, 1.0);
    let y: Vec<f64> = (0..2 * 32 * 32).map(|i| ((i / 32) % 32 < 12) as u8 as f64).collect();
    let cfg = LossConfig::default();
    check_module(
        &mut model,
        |m| Ok(hybrid_loss(&m.forward(&t1, &t2, Mode::Train)?.logits, &y, &cfg)?.total),
        tol(),
        1,
    )
    .unwrap()
}

/// Every check by name.
pub fn cases() -> Vec<(&'static str, Box<dyn Fn() -> GradReport>)> {
    vec![
        ("add", Box::new(|| binary(add))),
        ("sub", Box::new(|| binary(sub))),
        ("mul", Box::new(|| binary(mul))),
        ("scale", Box::new(|| unary(|x| scale(x, -1.7), false))),
        ("sigmoid", Box::new(|| unary(sigmoid, false))),
        ("gelu", Box::new(|| unary(gelu, false))),
        ("relu", Box::new(|| unary(relu, true))),
        ("sum", Box::new(|| trials(|_, rng| {
            let x = rand_tensor(&small_shape(rng), rng, -1.0, 1.0);
            check_inputs(&[x], |v| Ok(scale(&sum(&v[0]), 0.7)), tol())
        }))),
        ("mean", Box::new(|| trials(|_, rng| {
            let x = rand_tensor(&small_shape(rng), rng, -1.0, 1.0);
            check_inputs(&[x], |v| Ok(scale(&mean(&v[0]), 1.3)), tol())
        }))),
        ("plane_mean", Box::new(|| trials(|t, rng| {
            let x = rand_tensor(&small_shape(rng), rng, -1.0, 1.0);
            check_inputs(&[x], |v| project(&plane_mean(&v[0])?, t), tol())
        }))),
        ("reshape", Box::new(|| trials(|t, rng| {
            let s = small_shape(rng);
            let x = rand_tensor(&s, rng, -1.0, 1.0);
            let n: usize = s.iter().product();
            check_inputs(&[x], |v| project(&v[0].reshape(&[1, n, 1, 1])?, t), tol())
        }))),
        ("concat", Box::new(|| trials(|t, rng| {
            let mut s = small_shape(rng);
            let a = rand_tensor(&s, rng, -1.0, 1.0);
            s[1] = rng.gen_range(1..4);
            let b = rand_tensor(&s, rng, -1.0, 1.0);
            check_inputs(&[a, b], |v| project(&concat(&[&v[0], &v[1]], 1)?, t), tol())
        }))),
        ("split", Box::new(|| trials(|t, rng| {
            let mut s = small_shape(rng);
            s[1] = rng.gen_range(2..5);
            let first = rng.gen_range(1..s[1]);
            let x = rand_tensor(&s, rng, -1.0, 1.0);
            let sizes = [first, s[1] - first];
            check_inputs(&[x], |v| {
                let parts = split(&v[0], &sizes, 1)?;
                add(&project(&parts[0], t)?, &project(&parts[1], t + 7)?)
            }, tol())
        }))),
        ("mul_channel", Box::new(|| trials(|t, rng| {
            let s = small_shape(rng);
            let x = rand_tensor(&s, rng, -1.0, 1.0);
            let w = rand_tensor(&[s[1]], rng, -1.0, 1.0);
            check_inputs(&[x, w], |v| project(&mul_channel(&v[0], &v[1])?, t), tol())
        }))),
        ("index_select", Box::new(|| trials(|t, rng| {
            let c = rng.gen_range(2..5);
            let x = rand_tensor(&[c, 1, 2, 2], rng, -1.0, 1.0);
            let idx: Vec<usize> = (0..rng.gen_range(1..5)).map(|_| rng.gen_range(0..c)).collect();
            check_inputs(&[x], |v| project(&index_select(&v[0], &idx)?, t), tol())
        }))),
        ("conv2d", Box::new(|| trials(|t, rng| conv_case(rng, t)))),
        ("batch_norm_train", Box::new(|| trials(|t, rng| batch_norm_case(rng, t, true)))),
        ("batch_norm_eval", Box::new(|| trials(|t, rng| batch_norm_case(rng, t, false)))),
        ("bilinear_resize", Box::new(|| trials(|t, rng| {
            let x = rand_tensor(&[1, 2, rng.gen_range(1..6), rng.gen_range(1..6)], rng, -1.0, 1.0);
            let (oh, ow) = (rng.gen_range(1..8), rng.gen_range(1..8));
            check_inputs(&[x], |v| project(&bilinear_resize(&v[0], oh, ow)?, t), tol())
        }))),
        ("dct2", Box::new(|| trials(|t, rng| {
            let x = rand_tensor(&[rng.gen_range(1..8), rng.gen_range(1..8)], rng, -1.0, 1.0);
            check_inputs(&[x], |v| project(&dct2(&v[0])?, t), tol())
        }))),
        ("idct2", Box::new(|| trials(|t, rng| {
            let x = rand_tensor(&[rng.gen_range(1..8), rng.gen_range(1..8)], rng, -1.0, 1.0);
            check_inputs(&[x], |v| project(&idct2(&v[0])?, t), tol())
        }))),
        ("focal_loss", Box::new(|| trials(|t, rng| {
            let (z, y) = loss_inputs(rng);
            let cfg = LossConfig { gamma: [0.0, 0.5, 2.0, 3.0][t as usize % 4], ..LossConfig::default() };
            check_inputs(&[z], |v| focal_loss(&v[0], &y, &cfg), tol())
        }))),
        ("dice_loss", Box::new(|| trials(|_, rng| {
            let (z, y) = loss_inputs(rng);
            check_inputs(&[z], |v| dice_loss(&v[0], &y, &LossConfig::default()), tol())
        }))),
        ("hybrid_loss", Box::new(|| trials(|_, rng| {
            let (z, y) = loss_inputs(rng);
            check_inputs(&[z], |v| Ok(hybrid_loss(&v[0], &y, &LossConfig::default())?.total), tol())
        }))),
        ("cti_block", Box::new(cti_case)),
        ("base_block", Box::new(block_case)),
        ("csi_stage", Box::new(csi_case)),
        ("toy_model_hybrid_loss", Box::new(model_case)),
    ]
}
