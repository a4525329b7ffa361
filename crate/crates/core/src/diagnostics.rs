//! Finite-difference gradient checks over every tape primitive and the tiny
//! DSSR-Net, runnable outside the test harness.

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rrpsr_autodiff::{
    gradcheck_report, AutodiffError, BatchNormMode, ComplexTensor, ComplexVar, GradcheckReport, Result as AdResult, Tape, Tensor, Var,
};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::{echo_batch, BnMode, DssrArch, DssrNet};
use crate::seed;
use crate::signal::Echo;

pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_TOL: f64 = 1e-4;
const TINY_BATCH: usize = 8;
const KINK_MARGIN: f64 = 1e-4;
const MAX_DRAWS: u64 = 200;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckCase {
    pub name: &'static str,
    pub max_rel_error: f64,
}

impl GradcheckCase {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= GRADCHECK_TOL
    }
}

type Case = fn(&mut ChaCha8Rng) -> AdResult<f64>;

const CASES: &[(&str, Case)] = &[
    ("add_sub_mul", add_sub_mul),
    ("affine_reduce_reshape", affine_reduce_reshape),
    ("matmul_sigmoid", matmul_sigmoid),
    ("relu", relu),
    ("conv1d", conv1d),
    ("conv_transpose1d", conv_transpose1d),
    ("batch_norm_train", batch_norm_train),
    ("batch_norm_eval", batch_norm_eval),
    ("concat_channels", concat_channels),
    ("magnitude_unit_phasor", magnitude_unit_phasor),
    ("complex_mul_matmul_scale", complex_mul_matmul_scale),
    ("complex_conv_transpose", complex_conv_transpose),
    ("complex_conv_real_part_relu", complex_conv_real_part_relu),
];

/// Every primitive case followed by the full tiny network in training mode.
pub fn gradcheck_suite(seed: u64) -> Result<Vec<GradcheckCase>> {
    let mut out = Vec::with_capacity(CASES.len() + 1);
    for (i, (name, case)) in CASES.iter().enumerate() {
        let mut rng = seed::rng(seed, "gradcheck", i as u64);
        out.push(GradcheckCase {
            name,
            max_rel_error: case(&mut rng)?,
        });
    }
    out.push(GradcheckCase {
        name: "dssr_tiny_network",
        max_rel_error: tiny_network(seed::derive(seed, "gradcheck-net", 0))?,
    });
    Ok(out)
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Magnitudes in `[margin, 1]` so kinks are not straddled by the probe.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], margin: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(margin..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn weighted_sum(t: &mut Tape<f64>, y: Var, w: &Tensor<f64>) -> AdResult<Var> {
    let w = t.constant(w.clone());
    let p = t.mul(y, w)?;
    Ok(t.reduce_sum(p))
}

fn cv(v: &[Var], i: usize) -> ComplexVar {
    ComplexVar::new(v[i], v[i + 1])
}

fn run<F>(f: F, inputs: &[Tensor<f64>]) -> AdResult<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> AdResult<Var>,
{
    Ok(gradcheck_report(f, inputs, GRADCHECK_STEP)?.max_rel_error)
}

fn add_sub_mul(rng: &mut ChaCha8Rng) -> AdResult<f64> {
    let (a, b, w) = (rand_tensor(rng, &[3, 4]), rand_tensor(rng, &[3, 4]), rand_tensor(rng, &[3, 4]));
    run(
        |t, v| {
            let s = t.add(v[0], v[1])?;
            let d = t.sub(s, v[1])?;
            let d = t.sub(d, v[1])?;
            let m = t.mul(d, v[0])?;
            weighted_sum(t, m, &w)
        },
        &[a, b],
    )
}

fn affine_reduce_reshape(rng: &mut ChaCha8Rng) -> AdResult<f64> {
    let (x, w) = (rand_tensor(rng, &[2, 5]), rand_tensor(rng, &[2, 5]));
    run(
        |t, v| {
            let a = t.affine(v[0], 1.7, -0.3);
            let a = t.scale(a, 0.8);
            let b = t.one_minus(a);
            let c = t.mul(b, b)?;
            let s = weighted_sum(t, c, &w)?;
            let m = t.reduce_mean(c);
            let r = t.reshape(c, &[10])?;
            let rs = t.reduce_sum(r);
            let sm = t.add(s, m)?;
            let sm = t.add_scalar(sm, 2.0);
            t.add(sm, rs)
        },
        &[x],
    )
}

fn matmul_sigmoid(rng: &mut ChaCha8Rng) -> AdResult<f64> {
    let (a, b) = (rand_tensor(rng, &[4, 6]), rand_tensor(rng, &[6, 3]));
    let (w1, w2) = (rand_tensor(rng, &[4, 3]), rand_tensor(rng, &[4, 3]));
    run(
        |t, v| {
            let y = t.matmul(v[0], v[1])?;
            let s = t.sigmoid(y);
            let p = weighted_sum(t, y, &w1)?;
            let q = weighted_sum(t, s, &w2)?;
            t.add(p, q)
        },
        &[a, b],
    )
}

fn relu(rng: &mut ChaCha8Rng) -> AdResult<f64> {
    let (x, w) = (away_from_zero(rng, &[2, 3, 4], 1e-2), rand_tensor(rng, &[2, 3, 4]));
    run(
        |t, v| {
            let y = t.relu(v[0]);
            weighted_sum(t, y, &w)
        },
        &[x],
    )
}

fn conv1d(rng: &mut ChaCha8Rng) -> AdResult<f64> {
    let x = rand_tensor(rng, &[2, 3, 9]);
    let k = rand_tensor(rng, &[4, 3, 3]);
    let b = rand_tensor(rng, &[4]);
    let w = rand_tensor(rng, &[2, 4, 5]);
    run(
        |t, v| {
            let y = t.conv1d(v[0], v[1], Some(v[2]), 2, 1)?;
            weighted_sum(t, y, &w)
        },
        &[x, k, b],
    )
}

fn conv_transpose1d(rng: &mut ChaCha8Rng) -> AdResult<f64> {
    let x = rand_tensor(rng, &[2, 3, 4]);
    let k = rand_tensor(rng, &[3, 2, 7]);
    let b = rand_tensor(rng, &[2]);
    // full length (4-1)*3+7 = 16, cropped 2 front and 3 back
    let w = rand_tensor(rng, &[2, 2, 11]);
    run(
        |t, v| {
            let y = t.conv_transpose1d(v[0], v[1], Some(v[2]), 3, 2, 3)?;
            weighted_sum(t, y, &w)
        },
        &[x, k, b],
    )
}

fn batch_norm_train(rng: &mut ChaCha8Rng) -> AdResult<f64> {
    let x = rand_tensor(rng, &[8, 3, 4]);
    let g = rand_tensor(rng, &[3]);
    let b = rand_tensor(rng, &[3]);
    let w = rand_tensor(rng, &[8, 3, 4]);
    run(
        |t, v| {
            let mut rm = vec![0.0; 3];
            let mut rv = vec![1.0; 3];
            let mode = BatchNormMode::Train {
                running_mean: &mut rm,
                running_var: &mut rv,
                momentum: 0.1,
            };
            let y = t.batch_norm(v[0], v[1], v[2], mode, 1e-5)?;
            weighted_sum(t, y, &w)
        },
        &[x, g, b],
    )
}

fn batch_norm_eval(rng: &mut ChaCha8Rng) -> AdResult<f64> {
    let x = rand_tensor(rng, &[4, 3, 2]);
    let g = rand_tensor(rng, &[3]);
    let b = rand_tensor(rng, &[3]);
    let w = rand_tensor(rng, &[4, 3, 2]);
    let rm: Vec<f64> = (0..3).map(|_| rng.random_range(-0.5..0.5)).collect();
    let rv: Vec<f64> = (0..3).map(|_| rng.random_range(0.5..2.0)).collect();
    run(
        |t, v| {
            let mode = BatchNormMode::Eval {
                running_mean: &rm,
                running_var: &rv,
            };
            let y = t.batch_norm(v[0], v[1], v[2], mode, 1e-5)?;
            weighted_sum(t, y, &w)
        },
        &[x, g, b],
    )
}

fn concat_channels(rng: &mut ChaCha8Rng) -> AdResult<f64> {
    let (a, b) = (rand_tensor(rng, &[2, 2, 3]), rand_tensor(rng, &[2, 3, 3]));
    let w = rand_tensor(rng, &[2, 5, 3]);
    run(
        |t, v| {
            let y = t.concat_channels(&[v[0], v[1]])?;
            weighted_sum(t, y, &w)
        },
        &[a, b],
    )
}

fn magnitude_unit_phasor(rng: &mut ChaCha8Rng) -> AdResult<f64> {
    let re = away_from_zero(rng, &[3, 4], 0.1);
    let im = away_from_zero(rng, &[3, 4], 0.1);
    let ws: Vec<Tensor<f64>> = (0..3).map(|_| rand_tensor(rng, &[3, 4])).collect();
    run(
        |t, v| {
            let m = t.magnitude(v[0], v[1])?;
            let (pr, pi) = t.unit_phasor(v[0], v[1])?;
            let a = weighted_sum(t, m, &ws[0])?;
            let b = weighted_sum(t, pr, &ws[1])?;
            let c = weighted_sum(t, pi, &ws[2])?;
            let ab = t.add(a, b)?;
            t.add(ab, c)
        },
        &[re, im],
    )
}

fn complex_mul_matmul_scale(rng: &mut ChaCha8Rng) -> AdResult<f64> {
    let ins = vec![
        rand_tensor(rng, &[3, 4]),
        rand_tensor(rng, &[3, 4]),
        rand_tensor(rng, &[4, 2]),
        rand_tensor(rng, &[4, 2]),
        rand_tensor(rng, &[3, 4]),
    ];
    let (w1, w2, w3) = (rand_tensor(rng, &[3, 2]), rand_tensor(rng, &[3, 2]), rand_tensor(rng, &[3, 4]));
    run(
        |t, v| {
            let p = t.complex_matmul(cv(v, 0), cv(v, 2))?;
            let q = t.complex_mul(cv(v, 0), cv(v, 0))?;
            let q = t.complex_scale(q, v[4])?;
            let q = t.complex_add(q, cv(v, 0))?;
            let a = weighted_sum(t, p.re, &w1)?;
            let b = weighted_sum(t, p.im, &w2)?;
            let c = weighted_sum(t, q.im, &w3)?;
            let ab = t.add(a, b)?;
            t.add(ab, c)
        },
        &ins,
    )
}

fn complex_conv_transpose(rng: &mut ChaCha8Rng) -> AdResult<f64> {
    let ins = vec![
        rand_tensor(rng, &[2, 3, 6]),
        rand_tensor(rng, &[2, 3, 6]),
        rand_tensor(rng, &[2, 3, 3]),
        rand_tensor(rng, &[2, 3, 3]),
        rand_tensor(rng, &[2, 1, 5]),
        rand_tensor(rng, &[2, 1, 5]),
        rand_tensor(rng, &[1]),
        rand_tensor(rng, &[1]),
    ];
    // conv keeps length 6; transpose stride 2 gives 15, cropped 1 + 2
    let (w1, w2) = (rand_tensor(rng, &[2, 1, 12]), rand_tensor(rng, &[2, 1, 12]));
    run(
        |t, v| {
            let y = t.complex_conv1d(cv(v, 0), cv(v, 2), None, 1, 1)?;
            let z = t.complex_conv_transpose1d(y, cv(v, 4), Some(cv(v, 6)), 2, 1, 2)?;
            let a = weighted_sum(t, z.re, &w1)?;
            let b = weighted_sum(t, z.im, &w2)?;
            t.add(a, b)
        },
        &ins,
    )
}

fn complex_conv_real_part_relu(rng: &mut ChaCha8Rng) -> AdResult<f64> {
    let ins = vec![
        away_from_zero(rng, &[2, 2, 5], 0.05),
        away_from_zero(rng, &[2, 2, 5], 0.05),
        rand_tensor(rng, &[3, 4, 3]),
        rand_tensor(rng, &[3, 4, 3]),
        rand_tensor(rng, &[3]),
        rand_tensor(rng, &[3]),
    ];
    let w = rand_tensor(rng, &[2, 3, 5]);
    run(
        |t, v| {
            let r = t.complex_relu(cv(v, 0));
            let x = t.complex_concat_channels(&[r, cv(v, 0)])?;
            let y = t.complex_conv1d_real_part(x, cv(v, 2), Some(cv(v, 4)), 1, 1)?;
            weighted_sum(t, y, &w)
        },
        &ins,
    )
}

fn lift(e: Error) -> AutodiffError {
    match e {
        Error::Autodiff(a) => a,
        other => AutodiffError::InvalidArgument {
            op: "dssr",
            reason: other.to_string(),
        },
    }
}

/// A perturbed tiny network with a batch of echoes and readout weights.
struct NetPoint {
    net: DssrNet<f64>,
    input: ComplexTensor<f64>,
    weights: Tensor<f64>,
}

impl NetPoint {
    fn draw(seed: u64) -> Result<Self> {
        let mut rng = seed::rng(seed, "perturb", 0);
        let mut net = DssrNet::<f64>::new(DssrArch::tiny(), seed)?;
        // Zero biases and unit BN affine would leave those branches probed
        // only at a symmetric point.
        let names: Vec<String> = net.params().names().to_vec();
        for name in &names {
            if name.ends_with("gamma") || name.ends_with("beta") || name.contains(".b") {
                if let Some(t) = net.params_mut().get_mut(name) {
                    for v in t.data_mut() {
                        *v += rng.random_range(-0.3..0.3);
                    }
                }
            }
        }
        let n = net.arch().n_samples;
        let echoes: Vec<Echo> = (0..TINY_BATCH)
            .map(|_| {
                Echo::noise_free(
                    (0..n)
                        .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                        .collect(),
                )
            })
            .collect();
        let input = echo_batch::<f64>(&echoes, n)?;
        // Signed weights keep the loss from scaling with the output magnitude,
        // which would swamp small gradients with roundoff.
        let weights = rand_tensor(&mut rng, &[TINY_BATCH, net.arch().grid_size()]);
        Ok(Self { net, input, weights })
    }

    fn loss(&self, tape: &mut Tape<f64>, vars: &[Var]) -> AdResult<Var> {
        let y = tape.complex_constant(self.input.clone());
        let mut buffers = self.net.buffers().clone();
        let out = self
            .net
            .build(tape, vars, y, BnMode::Train(&mut buffers))
            .map_err(lift)?;
        weighted_sum(tape, out.profile, &self.weights)
    }

    fn relu_margin(&self) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = self.net.bind(&mut tape, false);
        self.loss(&mut tape, &vars)?;
        Ok(tape.min_relu_margin().unwrap_or(f64::INFINITY))
    }
}

/// Every parameter of the tiny network at once, BN in training mode.
///
/// Probe points are redrawn until every ReLU input clears `KINK_MARGIN`, so
/// the central difference never straddles a kink. Returns the report, the
/// name of the worst parameter and the number of draws.
pub fn tiny_network_report(seed: u64, step: f64) -> Result<(GradcheckReport, String, u64)> {
    let mut draws = 0;
    let point = loop {
        let p = NetPoint::draw(seed::derive(seed, "draw", draws))?;
        draws += 1;
        if p.relu_margin()? > KINK_MARGIN {
            break p;
        }
        if draws == MAX_DRAWS {
            return Err(Error::invalid(
                "gradcheck",
                format!("no probe point clear of ReLU kinks in {MAX_DRAWS} draws"),
            ));
        }
    };
    let inputs = point.net.params().values().to_vec();
    let report = gradcheck_report(|t, v| point.loss(t, v), &inputs, step)?;
    let name = point.net.params().names()[report.worst.0].clone();
    Ok((report, name, draws))
}

fn tiny_network(seed: u64) -> Result<f64> {
    Ok(tiny_network_report(seed, GRADCHECK_STEP)?.0.max_rel_error)
}
