//! Central finite-difference gradient checking in double precision.
//!
//! A case is a set of input tensors plus a closure building an output from
//! them. The output is projected to a scalar with a fixed random weighting,
//! differentiated by [`Graph::backward`], and compared against
//! `(L(x + h) - L(x - h)) / 2h` with `h = 1e-4 * max(1, |x|)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{BatchNormConfig, BatchNormMode, BatchNormStats, Graph, Var};
use crate::tensor::Tensor;

pub type BuildFn = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + Send + Sync>;

pub struct GradCase {
    pub name: String,
    pub inputs: Vec<Tensor<f64>>,
    pub build: BuildFn,
}

#[derive(Clone, Debug)]
pub struct GradReport {
    pub name: String,
    /// Worst norm-wise relative error over all inputs.
    pub rel_error: f64,
}

fn project(g: &mut Graph<f64>, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let shape = g.shape(out).to_vec();
    let numel = shape.iter().product();
    let weights = (0..numel).map(|_| rng.random_range(-1.0..1.0)).collect();
    let w = g.constant(Tensor::from_vec(&shape, weights)?);
    let prod = g.mul(out, w)?;
    g.sum(prod)
}

fn loss_value(case: &GradCase, inputs: &[Tensor<f64>]) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = (case.build)(&mut g, &vars)?;
    let l = project(&mut g, out, 1)?;
    g.value(l).item()
}

/// Runs one case and returns the worst relative error.
pub fn check(case: &GradCase) -> Result<GradReport> {
    let mut g = Graph::new();
    let vars: Vec<Var> = case
        .inputs
        .iter()
        .map(|t| g.leaf(t.clone().with_requires_grad(true)))
        .collect();
    let out = (case.build)(&mut g, &vars)?;
    let l = project(&mut g, out, 1)?;
    g.backward(l)?;

    let mut worst = 0.0f64;
    for (i, &v) in vars.iter().enumerate() {
        let analytic = g
            .grad(v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; case.inputs[i].numel()]);
        let mut numeric = vec![0.0; analytic.len()];
        let mut probe = case.inputs.clone();
        for (j, slot) in numeric.iter_mut().enumerate() {
            let x0 = case.inputs[i].data()[j];
            let h = 1e-4 * x0.abs().max(1.0);
            probe[i].data_mut()[j] = x0 + h;
            let up = loss_value(case, &probe)?;
            probe[i].data_mut()[j] = x0 - h;
            let down = loss_value(case, &probe)?;
            probe[i].data_mut()[j] = x0;
            *slot = (up - down) / (2.0 * h);
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(GradReport {
        name: case.name.clone(),
        rel_error: worst,
    })
}

/// `||a - b|| / max(||a||, ||b||)`, or 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-300 {
        0.0
    } else {
        diff / scale
    }
}

/// Uniform values in `[-1, 1]` kept at least `0.05` away from zero so that
/// piecewise-linear ops are not probed across their kink.
pub fn random_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    let numel = shape.iter().product();
    let data = (0..numel)
        .map(|_| {
            let v: f64 = rng.random_range(-1.0..1.0);
            if v.abs() < 0.05 {
                0.05f64.copysign(v)
            } else {
                v
            }
        })
        .collect();
    Tensor::from_vec(shape, data).expect("shape matches")
}

fn case(name: String, inputs: Vec<Tensor<f64>>, build: BuildFn) -> GradCase {
    GradCase {
        name,
        inputs,
        build,
    }
}

/// Every built-in differentiable op on `shapes_per_op` random shapes.
pub fn op_suite(seed: u64, shapes_per_op: usize) -> Vec<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::new();
    for s in 0..shapes_per_op {
        let n = rng.random_range(1..=2);
        let c = rng.random_range(1..=3);
        let h = rng.random_range(3..=6);
        let w = rng.random_range(3..=6);
        let o = rng.random_range(1..=3);
        let k = [1, 3, 4][s % 3].min(h).min(w);
        let stride = rng.random_range(1..=2);
        let pad = rng.random_range(0..=1).min(k - 1);
        let with_bias = s % 2 == 0;

        let mut inputs = vec![
            random_tensor(&mut rng, &[n, c, h, w]),
            random_tensor(&mut rng, &[o, c, k, k]),
        ];
        if with_bias {
            inputs.push(random_tensor(&mut rng, &[o]));
        }
        cases.push(case(
            format!("conv2d[{n}x{c}x{h}x{w} k{k} s{stride} p{pad}]"),
            inputs,
            Box::new(move |g, v| g.conv2d(v[0], v[1], v.get(2).copied(), stride, pad)),
        ));

        let tk = [4, 3, 2][s % 3];
        let tpad = rng.random_range(0..=1);
        let mut inputs = vec![
            random_tensor(&mut rng, &[n, c, h, w]),
            random_tensor(&mut rng, &[c, o, tk, tk]),
        ];
        if with_bias {
            inputs.push(random_tensor(&mut rng, &[o]));
        }
        cases.push(case(
            format!("conv_transpose2d[{n}x{c}x{h}x{w} k{tk} s2 p{tpad}]"),
            inputs,
            Box::new(move |g, v| g.conv_transpose2d(v[0], v[1], v.get(2).copied(), 2, tpad)),
        ));

        for train in [true, false] {
            let mut stats = BatchNormStats::new(c);
            stats.mean = (0..c).map(|_| rng.random_range(-0.5..0.5)).collect();
            stats.var = (0..c).map(|_| rng.random_range(0.5..2.0)).collect();
            cases.push(case(
                format!(
                    "batch_norm[{}, {n}x{c}x{h}x{w}]",
                    if train { "train" } else { "eval" }
                ),
                vec![
                    random_tensor(&mut rng, &[n, c, h, w]),
                    random_tensor(&mut rng, &[c]),
                    random_tensor(&mut rng, &[c]),
                ],
                Box::new(move |g, v| {
                    let mut local = stats.clone();
                    let mode = if train {
                        BatchNormMode::Train(&mut local)
                    } else {
                        BatchNormMode::Eval(&stats)
                    };
                    g.batch_norm(v[0], v[1], v[2], mode, BatchNormConfig::default())
                }),
            ));
        }

        let shape = [n, c, h, w];
        cases.push(case(
            format!("relu[{shape:?}]"),
            vec![random_tensor(&mut rng, &shape)],
            Box::new(|g, v| g.relu(v[0])),
        ));
        cases.push(case(
            format!("add[{shape:?}]"),
            vec![
                random_tensor(&mut rng, &shape),
                random_tensor(&mut rng, &shape),
            ],
            Box::new(|g, v| g.add(v[0], v[1])),
        ));
        cases.push(case(
            format!("mul[{shape:?}]"),
            vec![
                random_tensor(&mut rng, &shape),
                random_tensor(&mut rng, &shape),
            ],
            Box::new(|g, v| g.mul(v[0], v[1])),
        ));
        let factor = rng.random_range(-2.0..2.0);
        cases.push(case(
            format!("scale[{shape:?}]"),
            vec![random_tensor(&mut rng, &shape)],
            Box::new(move |g, v| g.scale(v[0], factor)),
        ));
        cases.push(case(
            format!("sum[{shape:?}]"),
            vec![random_tensor(&mut rng, &shape)],
            Box::new(|g, v| g.sum(v[0])),
        ));
        let c2 = rng.random_range(1..=3);
        cases.push(case(
            format!("concat_channels[{c}+{c2}]"),
            vec![
                random_tensor(&mut rng, &shape),
                random_tensor(&mut rng, &[n, c2, h, w]),
            ],
            Box::new(|g, v| g.concat_channels(v)),
        ));
        let total = c + c2;
        let start = rng.random_range(0..total);
        let len = rng.random_range(1..=total - start);
        cases.push(case(
            format!("narrow_channels[{total} @{start}+{len}]"),
            vec![random_tensor(&mut rng, &[n, total, h, w])],
            Box::new(move |g, v| g.narrow_channels(v[0], start, len)),
        ));
        let (oh, ow) = (h * rng.random_range(1..=3), w + rng.random_range(0..=5));
        cases.push(case(
            format!("bilinear_upsample[{h}x{w} -> {oh}x{ow}]"),
            vec![random_tensor(&mut rng, &shape)],
            Box::new(move |g, v| g.bilinear_upsample(v[0], oh, ow)),
        ));
        cases.push(case(
            format!("mse[{shape:?}]"),
            vec![
                random_tensor(&mut rng, &shape),
                random_tensor(&mut rng, &shape),
            ],
            Box::new(|g, v| g.mse(v[0], v[1])),
        ));
        let mask: Vec<f64> = (0..shape.iter().product::<usize>())
            .map(|_| if rng.random_bool(0.7) { 1.0 } else { 0.0 })
            .collect();
        cases.push(case(
            format!("masked_mse[{shape:?}]"),
            vec![
                random_tensor(&mut rng, &shape),
                random_tensor(&mut rng, &shape),
            ],
            Box::new(move |g, v| g.masked_mse(v[0], v[1], mask.clone())),
        ));
        // A tensor consumed by two ops must receive the sum of both contributions.
        cases.push(case(
            format!("shared_consumer[{shape:?}]"),
            vec![random_tensor(&mut rng, &shape)],
            Box::new(|g, v| {
                let a = g.relu(v[0])?;
                let b = g.mul(v[0], v[0])?;
                g.add(a, b)
            }),
        ));
    }
    cases
}
