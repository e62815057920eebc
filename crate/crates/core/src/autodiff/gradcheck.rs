//! Central finite-difference gradient checking.
//!
//! The scalar objective is `sum(y * r)` for a fixed random `r`, so every output
//! entry contributes. The finite-difference side evaluates that objective in
//! `f64` from forward values only; it never touches [`Graph::backward`].

use rand::Rng;

use super::{Graph, Tensor, Var};
use crate::error::Result;

/// Central-difference step. Forward values are `f32`, so a smaller step lets
/// output rounding dominate the difference quotient.
pub const DEFAULT_STEP: f32 = 1e-2;

/// Norm-wise relative error `|fd - ad| / max(|fd|, |ad|, floor)` for one input.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub input: usize,
    pub relative_error: f64,
    pub fd_norm: f64,
}

/// Checks `build` against central differences with step `h` for every input
/// flagged in `differentiable`.
pub fn check_gradients<R, F>(
    inputs: &[Tensor],
    differentiable: &[bool],
    build: F,
    h: f32,
    rng: &mut R,
) -> Result<Vec<GradCheck>>
where
    R: Rng + ?Sized,
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let forward = |tensors: &[Tensor]| -> Result<Tensor> {
        let mut g = Graph::new();
        let vars: Vec<Var> = tensors.iter().map(|t| g.constant(t.clone())).collect();
        let y = build(&mut g, &vars)?;
        Ok(g.value(y).clone())
    };
    let probe_shape = forward(inputs)?.shape().to_vec();
    let probe = Tensor::from_fn(&probe_shape, |_| rng.gen_range(-1.0f32..1.0));
    let objective = |t: &Tensor| -> f64 {
        t.data()
            .iter()
            .zip(probe.data())
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum()
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .zip(differentiable)
        .map(|(t, &d)| g.leaf(t.clone(), d))
        .collect();
    let y = build(&mut g, &vars)?;
    let r = g.constant(probe.clone());
    let yr = g.mul(y, r)?;
    let loss = g.sum(yr);
    g.backward(loss)?;

    let mut out = Vec::new();
    for (i, input) in inputs.iter().enumerate() {
        if !differentiable[i] {
            continue;
        }
        let analytic = g.grad(vars[i]).map(<[f32]>::to_vec).unwrap_or_else(|| vec![0.0; input.numel()]);
        let mut perturbed: Vec<Tensor> = inputs.to_vec();
        let mut diff_sq = 0.0f64;
        let mut fd_sq = 0.0f64;
        let mut ad_sq = 0.0f64;
        for k in 0..input.numel() {
            let orig = input.data()[k];
            perturbed[i].data_mut()[k] = orig + h;
            let plus = objective(&forward(&perturbed)?);
            perturbed[i].data_mut()[k] = orig - h;
            let minus = objective(&forward(&perturbed)?);
            perturbed[i].data_mut()[k] = orig;
            // the perturbation actually applied, after f32 rounding
            let step = ((orig + h) as f64) - ((orig - h) as f64);
            let fd = (plus - minus) / step;
            let ad = analytic[k] as f64;
            diff_sq += (fd - ad).powi(2);
            fd_sq += fd * fd;
            ad_sq += ad * ad;
        }
        let scale = fd_sq.sqrt().max(ad_sq.sqrt()).max(1e-6);
        out.push(GradCheck {
            input: i,
            relative_error: diff_sq.sqrt() / scale,
            fd_norm: fd_sq.sqrt(),
        });
    }
    Ok(out)
}

/// Differentiable operators covered by [`random_case`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Add,
    Mul,
    Scale,
    LeakyRelu,
    Sigmoid,
    Square,
    Abs,
    Sum,
    Mean,
    Concat,
    Slice,
    Conv2d,
    Conv2dTransposed,
}

impl OpKind {
    pub const ALL: [OpKind; 13] = [
        OpKind::Add,
        OpKind::Mul,
        OpKind::Scale,
        OpKind::LeakyRelu,
        OpKind::Sigmoid,
        OpKind::Square,
        OpKind::Abs,
        OpKind::Sum,
        OpKind::Mean,
        OpKind::Concat,
        OpKind::Slice,
        OpKind::Conv2d,
        OpKind::Conv2dTransposed,
    ];
}

type Builder = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

/// A randomly shaped instance of one operator, ready for [`check_gradients`].
pub struct Case {
    pub op: OpKind,
    pub inputs: Vec<Tensor>,
    pub build: Builder,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(0.0f32..1.0))
}

/// Values bounded away from zero, for ops with a kink there.
fn away_from_zero<R: Rng + ?Sized>(rng: &mut R, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(0.05f32..1.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn shape4<R: Rng + ?Sized>(rng: &mut R) -> Vec<usize> {
    vec![
        rng.gen_range(1..=2),
        rng.gen_range(1..=3),
        rng.gen_range(2..=5),
        rng.gen_range(2..=5),
    ]
}

pub fn random_case<R: Rng + ?Sized>(op: OpKind, rng: &mut R) -> Case {
    let s = shape4(rng);
    let (inputs, build): (Vec<Tensor>, Builder) = match op {
        OpKind::Add => (
            vec![uniform(rng, &s), uniform(rng, &s)],
            Box::new(|g, v| g.add(v[0], v[1])),
        ),
        OpKind::Mul => (
            vec![uniform(rng, &s), uniform(rng, &s)],
            Box::new(|g, v| g.mul(v[0], v[1])),
        ),
        OpKind::Scale => {
            let k = rng.gen_range(-3.0f32..3.0);
            (vec![uniform(rng, &s)], Box::new(move |g, v| Ok(g.scale(v[0], k))))
        }
        OpKind::LeakyRelu => (
            vec![away_from_zero(rng, &s)],
            Box::new(|g, v| Ok(g.leaky_relu(v[0], 0.2))),
        ),
        OpKind::Sigmoid => (
            vec![away_from_zero(rng, &s)],
            Box::new(|g, v| Ok(g.sigmoid(v[0]))),
        ),
        OpKind::Square => (vec![uniform(rng, &s)], Box::new(|g, v| Ok(g.square(v[0])))),
        OpKind::Abs => (vec![away_from_zero(rng, &s)], Box::new(|g, v| Ok(g.abs(v[0])))),
        OpKind::Sum => (vec![uniform(rng, &s)], Box::new(|g, v| Ok(g.sum(v[0])))),
        OpKind::Mean => (vec![uniform(rng, &s)], Box::new(|g, v| Ok(g.mean(v[0])))),
        OpKind::Concat => {
            let mut s2 = s.clone();
            s2[1] = rng.gen_range(1..=3);
            (
                vec![uniform(rng, &s), uniform(rng, &s2)],
                Box::new(|g, v| g.concat(&[v[0], v[1]])),
            )
        }
        OpKind::Slice => {
            let axes: Vec<super::AxisSlice> = s
                .iter()
                .map(|&d| {
                    let start = rng.gen_range(0..d);
                    let step = rng.gen_range(1..=2);
                    super::AxisSlice {
                        start,
                        stop: d,
                        step,
                    }
                })
                .collect();
            (vec![uniform(rng, &s)], Box::new(move |g, v| g.slice(v[0], &axes)))
        }
        OpKind::Conv2d => {
            let (stride, pad) = (rng.gen_range(1..=2), rng.gen_range(0..=1));
            let k = rng.gen_range(1..=4usize);
            let n = rng.gen_range(1..=2);
            let (cin, cout) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
            let h = rng.gen_range(k.max(2)..=6);
            let w = rng.gen_range(k.max(2)..=6);
            (
                vec![
                    uniform(rng, &[n, cin, h, w]),
                    uniform(rng, &[cout, cin, k, k]),
                    uniform(rng, &[cout]),
                ],
                Box::new(move |g, v| g.conv2d(v[0], v[1], Some(v[2]), stride, pad)),
            )
        }
        OpKind::Conv2dTransposed => {
            let stride = rng.gen_range(1..=2);
            let k = rng.gen_range(2..=4usize);
            let pad = rng.gen_range(0..=(k - 1) / 2);
            let n = rng.gen_range(1..=2);
            let (cin, cout) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
            let h = rng.gen_range(1..=4);
            let w = rng.gen_range(1..=4);
            (
                vec![
                    uniform(rng, &[n, cin, h, w]),
                    uniform(rng, &[cin, cout, k, k]),
                    uniform(rng, &[cout]),
                ],
                Box::new(move |g, v| g.conv2d_transposed(v[0], v[1], Some(v[2]), stride, pad)),
            )
        }
    };
    Case { op, inputs, build }
}

/// Result of checking one randomized case.
#[derive(Debug, Clone)]
pub struct CaseReport {
    pub op: OpKind,
    pub shapes: Vec<Vec<usize>>,
    pub max_relative_error: f64,
}

/// Runs `n_cases` randomized checks cycling through [`OpKind::ALL`].
pub fn run_suite<R: Rng + ?Sized>(n_cases: usize, h: f32, rng: &mut R) -> Result<Vec<CaseReport>> {
    let mut reports = Vec::with_capacity(n_cases);
    for i in 0..n_cases {
        let op = OpKind::ALL[i % OpKind::ALL.len()];
        let case = random_case(op, rng);
        let flags = vec![true; case.inputs.len()];
        let checks = check_gradients(&case.inputs, &flags, &case.build, h, rng)?;
        reports.push(CaseReport {
            op,
            shapes: case.inputs.iter().map(|t| t.shape().to_vec()).collect(),
            max_relative_error: checks.iter().map(|c| c.relative_error).fold(0.0, f64::max),
        });
    }
    Ok(reports)
}

/// `<conv(x), y> / <x, conv_transposed(y)>` pair for a random geometry, as
/// `(lhs, rhs)` in `f64`.
pub fn adjoint_pair<R: Rng + ?Sized>(rng: &mut R) -> Result<(f64, f64)> {
    let k = rng.gen_range(1..=4usize);
    let stride = rng.gen_range(1..=2);
    let pad = rng.gen_range(0..=(k - 1) / 2);
    let (n, cin, cout) = (rng.gen_range(1..=2), rng.gen_range(1..=4), rng.gen_range(1..=4));
    // pick an output size, then the input size whose conv maps exactly onto it
    let oh = rng.gen_range(1..=5);
    let ow = rng.gen_range(1..=5);
    let h = (oh - 1) * stride + k - 2 * pad;
    let w = (ow - 1) * stride + k - 2 * pad;
    let x = Tensor::from_fn(&[n, cin, h, w], |_| rng.gen_range(-1.0f32..1.0));
    let wt = Tensor::from_fn(&[cout, cin, k, k], |_| rng.gen_range(-1.0f32..1.0));
    let y = Tensor::from_fn(&[n, cout, oh, ow], |_| rng.gen_range(-1.0f32..1.0));
    let mut g = Graph::new();
    let (xv, wv, yv) = (g.constant(x.clone()), g.constant(wt), g.constant(y.clone()));
    let cx = g.conv2d(xv, wv, None, stride, pad)?;
    let ty = g.conv2d_transposed(yv, wv, None, stride, pad)?;
    let dot = |a: &[f32], b: &[f32]| a.iter().zip(b).map(|(&p, &q)| p as f64 * q as f64).sum::<f64>();
    Ok((dot(g.value(cx).data(), y.data()), dot(x.data(), g.value(ty).data())))
}
