//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use macam_core::activation::{
    gumbel_softmax_with_noise, mixed_act, sample_gumbel_noise, AnalogActConfig, DigitalActConfig,
    MixWeights,
};
use macam_core::device::{build_codebook, Codebook, MtjLevelTable};
use macam_core::energy::{
    energy_penalty, penalty_node, soft_energy_node, EnergyConstraint, HardwareEnergyConfig,
    LayerGeometry,
};
use macam_core::rng::Rng;
use macam_core::tensor::{Tape, Tensor, Var};
use rand::Rng as _;

// ---------------------------------------------------------------------------
// codebooks

/// Random strictly increasing boundaries starting at 0 (2 to 9 of them).
pub fn random_levels(r: &mut Rng) -> Vec<f64> {
    let k = r.random_range(2..=9);
    let mut v = vec![0.0];
    for _ in 1..k {
        let gap: f64 = r.random_range(0.05..2.0);
        v.push(v[v.len() - 1] + gap);
    }
    v
}

pub fn random_codebook(r: &mut Rng) -> (Vec<f64>, Codebook) {
    let levels = random_levels(r);
    let cb = build_codebook(&MtjLevelTable::new("rand", levels.clone()).unwrap()).unwrap();
    (levels, cb)
}

/// Index of the last boundary not above `x`, by linear scan.
pub fn scan_index(boundaries: &[f32], x: f32) -> usize {
    let mut idx = 0;
    for (j, &b) in boundaries.iter().enumerate() {
        if b <= x {
            idx = j;
        }
    }
    idx
}

/// Midpoints of finite intervals, lower bound of the overflow interval.
pub fn scan_values(levels: &[f64]) -> Vec<f32> {
    let mut out = Vec::new();
    for j in 0..levels.len() {
        if j + 1 < levels.len() {
            out.push(((levels[j] + levels[j + 1]) / 2.0) as f32);
        } else {
            out.push(levels[j] as f32);
        }
    }
    out
}

pub fn scan_project(levels: &[f64], x: f32) -> f32 {
    let bounds: Vec<f32> = levels.iter().map(|&v| v as f32).collect();
    scan_values(levels)[scan_index(&bounds, x)]
}

/// Threshold gradient of the analog activation written out branch by branch.
pub fn alpha_grad_formula(x: f32, alpha: f32, levels: &[f64]) -> f32 {
    let c = levels[levels.len() - 1] as f32;
    if x >= alpha {
        return 1.0;
    }
    if x < 0.0 {
        return 0.0;
    }
    let q = scan_project(levels, (c * x / alpha).min(c));
    q / c - x / alpha
}

// ---------------------------------------------------------------------------
// energy

pub fn random_geometry(r: &mut Rng) -> LayerGeometry {
    LayerGeometry {
        c_out: r.random_range(1..=256),
        c_in: r.random_range(1..=256),
        k: [1, 3, 5][r.random_range(0..3)],
        h_out: r.random_range(1..=16),
        w_out: r.random_range(1..=16),
        vdp_size: [16, 64, 128, 256][r.random_range(0..4)],
    }
}

pub fn random_hardware(r: &mut Rng) -> HardwareEnergyConfig {
    let e_adc = r.random_range(1e-12..3e-11);
    HardwareEnergyConfig {
        e_anlg: r.random_range(1e-15..1e-14),
        e_digi_adc: e_adc,
        e_digi_act: r.random_range(0.0..1e-12),
        e_vcsel: r.random_range(0.0..1e-12),
        e_pd: r.random_range(0.0..1e-12),
        e_adc,
        e_sa: r.random_range(0.0..1e-12),
        adc_name: "rand".into(),
        macam_name: "rand".into(),
    }
}

/// Activation energy summed one output activation at a time.
pub fn brute_act_energy(
    weights: &[Vec<[f64; 2]>],
    geoms: &[LayerGeometry],
    e_anlg: f64,
    e_digi: f64,
) -> f64 {
    let mut total = 0.0;
    for (rows, g) in weights.iter().zip(geoms) {
        for w in rows {
            for _ in 0..g.h_out * g.w_out {
                total += w[0] * e_anlg + w[1] * e_digi;
            }
        }
    }
    total
}

/// Mixed-system energy summed per output activation, counting VDP units by
/// walking the dot product in steps of `N`.
pub fn brute_system_mixed(
    analog: &[Vec<bool>],
    geoms: &[LayerGeometry],
    hw: &HardwareEnergyConfig,
) -> f64 {
    let mut total = 0.0;
    for (mask, g) in analog.iter().zip(geoms) {
        let len = g.c_in * g.k * g.k;
        let mut chunks = 0;
        let mut start = 0;
        while start < len {
            chunks += 1;
            start += g.vdp_size;
        }
        for &is_analog in mask {
            for _ in 0..g.h_out * g.w_out {
                total += if is_analog {
                    hw.e_anlg
                } else {
                    hw.e_digi_adc + hw.e_digi_act
                };
                total += hw.e_pd;
                for _ in 0..chunks {
                    total += hw.e_vcsel;
                }
            }
        }
    }
    total
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

// ---------------------------------------------------------------------------
// finite-difference oracle

/// One differentiable input of a gradient check.
pub struct Input {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Input {
    pub fn random(shape: &[usize], lo: f64, hi: f64, r: &mut Rng) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            // f32-representable so both sides see identical inputs
            data: (0..n).map(|_| r.random_range(lo..hi) as f32 as f64).collect(),
        }
    }

    fn tensor(&self) -> Tensor {
        Tensor::new(self.shape.clone(), self.data.iter().map(|&v| v as f32).collect()).unwrap()
    }
}

pub struct GradCheck {
    pub forward_err: f64,
    pub grad_err: f64,
}

pub const FD_STEP: f64 = 1e-3;

/// Compares tape gradients of `sum(r * op(inputs))` against central
/// differences of an `f64` reference of the same op. Errors are norm-wise
/// relative over all inputs.
pub fn grad_check(
    inputs: &[Input],
    build: &dyn Fn(&mut Tape, &[Var]) -> Var,
    reference: &dyn Fn(&[Vec<f64>]) -> Vec<f64>,
    r: &mut Rng,
) -> GradCheck {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|i| tape.leaf(i.tensor(), true)).collect();
    let y = build(&mut tape, &vars);
    let out_shape = tape.value(y).shape().to_vec();
    let n_out: usize = out_shape.iter().product();
    let proj: Vec<f64> = (0..n_out).map(|_| r.random_range(-1.0..1.0) as f32 as f64).collect();
    let pv = tape.constant(Tensor::new(out_shape, proj.iter().map(|&v| v as f32).collect()).unwrap());
    let prod = tape.mul(y, pv).unwrap();
    let loss = tape.sum(prod);

    let values: Vec<Vec<f64>> = inputs.iter().map(|i| i.data.clone()).collect();
    let y_ref = reference(&values);
    let y_tape: Vec<f64> = tape.value(y).data().iter().map(|&v| v as f64).collect();
    let forward_err = norm_rel(&y_tape, &y_ref);

    tape.backward(loss).unwrap();
    let scalar = |vals: &[Vec<f64>]| -> f64 {
        reference(vals).iter().zip(&proj).map(|(a, b)| a * b).sum()
    };
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for (i, v) in vars.iter().enumerate() {
        let g = tape.grad(*v).expect("every input receives a gradient");
        analytic.extend(g.data().iter().map(|&x| x as f64));
        for j in 0..values[i].len() {
            let mut plus = values.clone();
            plus[i][j] += FD_STEP;
            let mut minus = values.clone();
            minus[i][j] -= FD_STEP;
            numeric.push((scalar(&plus) - scalar(&minus)) / (2.0 * FD_STEP));
        }
    }
    GradCheck {
        forward_err,
        grad_err: norm_rel(&analytic, &numeric),
    }
}

pub fn norm_rel(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let base: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / base.max(1e-30)
}

// ---------------------------------------------------------------------------
// differentiable op catalog

/// Every smooth built-in op. The clipped and quantized activations are
/// piecewise constant and are checked against their rules elsewhere.
pub const SMOOTH_OPS: &[&str] = &[
    "add",
    "mul",
    "scale",
    "sum",
    "reshape",
    "flatten",
    "matmul",
    "bias_add",
    "conv2d",
    "conv2d_pad",
    "avgpool2d",
    "softmax_cross_entropy",
    "gumbel_softmax",
    "mixed_act_weights",
    "soft_energy",
    "energy_penalty",
];

fn conv_ref(x: &[f64], xs: &[usize], w: &[f64], ws: &[usize], pad: usize) -> Vec<f64> {
    let (b, ci, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let (co, k) = (ws[0], ws[2]);
    let (ho, wo) = (h + 2 * pad - k + 1, wd + 2 * pad - k + 1);
    let mut out = vec![0.0; b * co * ho * wo];
    for n in 0..b {
        for o in 0..co {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for c in 0..ci {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = oy as isize + ky as isize - pad as isize;
                                let ix = ox as isize + kx as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xi = ((n * ci + c) * h + iy as usize) * wd + ix as usize;
                                acc += x[xi] * w[((o * ci + c) * k + ky) * k + kx];
                            }
                        }
                    }
                    out[((n * co + o) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    out
}

/// Runs one random instance of the named op through [`grad_check`].
pub fn check_op(name: &str, r: &mut Rng) -> GradCheck {
    match name {
        "add" => {
            let s = [r.random_range(1..5), r.random_range(1..6)];
            let inputs = [Input::random(&s, -2.0, 2.0, r), Input::random(&s, -2.0, 2.0, r)];
            grad_check(
                &inputs,
                &|t, v| t.add(v[0], v[1]).unwrap(),
                &|x| x[0].iter().zip(&x[1]).map(|(a, b)| a + b).collect(),
                r,
            )
        }
        "mul" => {
            let s = [r.random_range(1..5), r.random_range(1..6)];
            let inputs = [Input::random(&s, -2.0, 2.0, r), Input::random(&s, -2.0, 2.0, r)];
            grad_check(
                &inputs,
                &|t, v| t.mul(v[0], v[1]).unwrap(),
                &|x| x[0].iter().zip(&x[1]).map(|(a, b)| a * b).collect(),
                r,
            )
        }
        "scale" => {
            let f = r.random_range(-3.0f32..3.0);
            let inputs = [Input::random(&[r.random_range(1..20)], -2.0, 2.0, r)];
            grad_check(
                &inputs,
                &move |t, v| t.scale(v[0], f),
                &move |x| x[0].iter().map(|a| a * f as f64).collect(),
                r,
            )
        }
        "sum" => {
            let inputs = [Input::random(&[r.random_range(1..4), r.random_range(1..7)], -2.0, 2.0, r)];
            grad_check(&inputs, &|t, v| t.sum(v[0]), &|x| vec![x[0].iter().sum()], r)
        }
        "reshape" => {
            let (a, b) = (r.random_range(1..5), r.random_range(1..5));
            let inputs = [Input::random(&[a, b], -2.0, 2.0, r)];
            grad_check(
                &inputs,
                &move |t, v| t.reshape(v[0], vec![b, a]).unwrap(),
                &|x| x[0].clone(),
                r,
            )
        }
        "flatten" => {
            let inputs = [Input::random(&[2, 3, 2, 2], -2.0, 2.0, r)];
            grad_check(&inputs, &|t, v| t.flatten(v[0]).unwrap(), &|x| x[0].clone(), r)
        }
        "matmul" => {
            let (m, k, n) = (r.random_range(1..6), r.random_range(1..7), r.random_range(1..6));
            let inputs = [Input::random(&[m, k], -1.0, 1.0, r), Input::random(&[k, n], -1.0, 1.0, r)];
            grad_check(
                &inputs,
                &|t, v| t.matmul(v[0], v[1]).unwrap(),
                &move |x| {
                    let mut out = vec![0.0; m * n];
                    for i in 0..m {
                        for j in 0..n {
                            out[i * n + j] = (0..k).map(|p| x[0][i * k + p] * x[1][p * n + j]).sum();
                        }
                    }
                    out
                },
                r,
            )
        }
        "bias_add" => {
            let (b, c, inner) = (r.random_range(1..4), r.random_range(1..5), r.random_range(1..4));
            let inputs = [Input::random(&[b, c, inner, 1], -1.0, 1.0, r), Input::random(&[c], -1.0, 1.0, r)];
            grad_check(
                &inputs,
                &|t, v| t.bias_add(v[0], v[1]).unwrap(),
                &move |x| {
                    x[0].iter()
                        .enumerate()
                        .map(|(i, v)| v + x[1][(i / inner) % c])
                        .collect()
                },
                r,
            )
        }
        "conv2d" | "conv2d_pad" => {
            let pad = usize::from(name == "conv2d_pad");
            let k = if pad == 1 { 3 } else { [1, 2, 3][r.random_range(0..3)] };
            let xs = [r.random_range(1..3), r.random_range(1..4), r.random_range(3..6), r.random_range(3..6)];
            let ws = [r.random_range(1..4), xs[1], k, k];
            let inputs = [Input::random(&xs, -1.0, 1.0, r), Input::random(&ws, -1.0, 1.0, r)];
            grad_check(
                &inputs,
                &move |t, v| t.conv2d(v[0], v[1], pad).unwrap(),
                &move |x| conv_ref(&x[0], &xs, &x[1], &ws, pad),
                r,
            )
        }
        "avgpool2d" => {
            let size = r.random_range(1..4);
            let xs = [r.random_range(1..3), r.random_range(1..3), size * r.random_range(1..3), size * r.random_range(1..3)];
            let inputs = [Input::random(&xs, -1.0, 1.0, r)];
            grad_check(
                &inputs,
                &move |t, v| t.avgpool2d(v[0], size).unwrap(),
                &move |x| {
                    let (planes, h, w) = (xs[0] * xs[1], xs[2], xs[3]);
                    let (ho, wo) = (h / size, w / size);
                    let mut out = vec![0.0; planes * ho * wo];
                    for p in 0..planes {
                        for oy in 0..ho {
                            for ox in 0..wo {
                                let mut acc = 0.0;
                                for dy in 0..size {
                                    for dx in 0..size {
                                        acc += x[0][(p * h + oy * size + dy) * w + ox * size + dx];
                                    }
                                }
                                out[(p * ho + oy) * wo + ox] = acc / (size * size) as f64;
                            }
                        }
                    }
                    out
                },
                r,
            )
        }
        "softmax_cross_entropy" => {
            let (b, c) = (r.random_range(1..6), r.random_range(2..8));
            let labels: Vec<usize> = (0..b).map(|_| r.random_range(0..c)).collect();
            let inputs = [Input::random(&[b, c], -3.0, 3.0, r)];
            let l2 = labels.clone();
            grad_check(
                &inputs,
                &move |t, v| t.softmax_cross_entropy(v[0], &labels).unwrap(),
                &move |x| {
                    let mut loss = 0.0;
                    for (n, row) in x[0].chunks(c).enumerate() {
                        let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
                        loss += lse - row[l2[n]];
                    }
                    vec![loss / b as f64]
                },
                r,
            )
        }
        "gumbel_softmax" => {
            let c = r.random_range(1..6);
            let tau = r.random_range(0.5f32..2.0);
            let noise = sample_gumbel_noise(c, r);
            let inputs = [Input::random(&[c, 2], -2.0, 2.0, r)];
            let n2 = noise.clone();
            grad_check(
                &inputs,
                &move |t, v| gumbel_softmax_with_noise(t, v[0], tau, &noise).unwrap(),
                &move |x| {
                    let mut out = Vec::new();
                    for (row, g) in x[0].chunks(2).zip(&n2) {
                        let z0 = (row[0] + g[0]) / tau as f64;
                        let z1 = (row[1] + g[1]) / tau as f64;
                        let w0 = 1.0 / (1.0 + (z1 - z0).exp());
                        out.push(w0);
                        out.push(1.0 - w0);
                    }
                    out
                },
                r,
            )
        }
        "mixed_act_weights" => {
            let levels = random_levels(r);
            let analog = AnalogActConfig::new(
                build_codebook(&MtjLevelTable::new("rand", levels.clone()).unwrap()).unwrap(),
            );
            let digital = DigitalActConfig::new(r.random_range(1..9)).unwrap();
            let (b, c, inner) = (r.random_range(1..3), r.random_range(1..5), r.random_range(1..5));
            let alpha = r.random_range(0.5f32..4.0);
            let x = Input::random(&[b, c, inner], -1.0, 5.0, r);
            let xt = x.tensor();
            let xd: Vec<f32> = xt.data().to_vec();
            let inputs = [Input::random(&[c, 2], 0.0, 1.0, r)];
            let levels2 = levels.clone();
            grad_check(
                &inputs,
                &move |t, v| {
                    let xv = t.constant(xt.clone());
                    let av = t.constant(Tensor::scalar(alpha));
                    mixed_act(t, xv, av, MixWeights::Soft(v[0]), &analog, digital, None).unwrap()
                },
                &move |w| {
                    let cmax = levels2[levels2.len() - 1] as f32;
                    let l = ((1u32 << digital.bits) - 1) as f32;
                    xd.iter()
                        .enumerate()
                        .map(|(i, &v)| {
                            let ch = (i / inner) % c;
                            let (f1, f2) = if v < 0.0 {
                                (0.0, 0.0)
                            } else {
                                let q = scan_project(&levels2, (cmax * v / alpha).min(cmax));
                                let d = alpha * ((v.min(alpha) * l / alpha).round() / l);
                                (alpha * (q / cmax), d)
                            };
                            w[0][2 * ch] * f1 as f64 + w[0][2 * ch + 1] * f2 as f64
                        })
                        .collect()
                },
                r,
            )
        }
        "soft_energy" => {
            let hw = random_hardware(r);
            let layers = r.random_range(1..4);
            let geoms: Vec<LayerGeometry> = (0..layers)
                .map(|_| {
                    let mut g = random_geometry(r);
                    g.c_out = r.random_range(1..6);
                    g
                })
                .collect();
            let inputs: Vec<Input> = geoms.iter().map(|g| Input::random(&[g.c_out, 2], 0.0, 1.0, r)).collect();
            let (g2, hw2) = (geoms.clone(), hw.clone());
            grad_check(
                &inputs,
                &move |t, v| soft_energy_node(t, v, &geoms, &hw).unwrap(),
                &move |w| {
                    let base: f64 = g2
                        .iter()
                        .map(|g| (g.c_out * g.h_out * g.w_out) as f64 * hw2.e_digi_adc)
                        .sum();
                    let mut e = 0.0;
                    for (rows, g) in w.iter().zip(&g2) {
                        let px = (g.h_out * g.w_out) as f64;
                        for row in rows.chunks(2) {
                            e += (row[0] * hw2.e_anlg + row[1] * hw2.e_digi_adc) * px;
                        }
                    }
                    vec![e / base]
                },
                r,
            )
        }
        "energy_penalty" => {
            let c = EnergyConstraint {
                e_min: r.random_range(0.05..0.3),
                e_max: r.random_range(0.4..0.8),
                beta: r.random_range(0.1..2.0),
                gamma: 0.05,
            };
            let (lo, hi) = c.penalty_free_band();
            // stay clear of the two kinks
            let e = loop {
                let e: f64 = r.random_range(0.0..1.0);
                if (e - lo).abs() > 0.01 && (e - hi).abs() > 0.01 {
                    break e;
                }
            };
            let inputs = [Input { shape: vec![1], data: vec![e as f32 as f64] }];
            grad_check(
                &inputs,
                &move |t, v| penalty_node(t, v[0], &c),
                &move |x| {
                    let e = x[0][0];
                    let v = if e > hi {
                        c.beta * e / hi
                    } else if e < lo {
                        -c.beta * e / lo
                    } else {
                        0.0
                    };
                    assert_eq!(energy_penalty(e, &c).signum(), v.signum());
                    vec![v]
                },
                r,
            )
        }
        other => panic!("unknown op {other}"),
    }
}
