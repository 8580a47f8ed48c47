//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::path::Path;

use derain::autodiff::gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
use derain::dcmf::Offset;
use derain::image::{synthetic::write_toy_dataset, DatasetManifest, RainParams};
use derain::{seed, Graph, Result, Tensor, Var};
use rand::Rng;

pub fn uniform(shape: &[usize], lo: f64, hi: f64, salt: u64) -> Tensor<f64> {
    let mut rng = seed::rng(salt, "test-uniform", 0);
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(lo..hi))
}

/// Median and selected flat index per output element, by sorting each
/// replicate-clamped window.
pub fn median_oracle(x: &Tensor<f64>, offsets: &[Offset]) -> (Vec<f64>, Vec<usize>) {
    let s = x.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let data = x.data();
    let mut values = Vec::with_capacity(data.len());
    let mut selected = Vec::with_capacity(data.len());
    for plane in 0..n * c {
        for y in 0..h {
            for xx in 0..w {
                let idx: Vec<usize> = offsets
                    .iter()
                    .map(|&(dy, dx)| {
                        let sy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                        let sx = (xx as isize + dx).clamp(0, w as isize - 1) as usize;
                        plane * h * w + sy * w + sx
                    })
                    .collect();
                let mut sorted: Vec<f64> = idx.iter().map(|&i| data[i]).collect();
                sorted.sort_by(f64::total_cmp);
                let median = sorted[sorted.len() / 2];
                let sel = idx
                    .iter()
                    .copied()
                    .filter(|&i| data[i] == median)
                    .min()
                    .unwrap();
                values.push(median);
                selected.push(sel);
            }
        }
    }
    (values, selected)
}

/// Stride-1 cross-correlation with zero padding `(ph, pw)`, by direct
/// summation.
pub fn conv_oracle(
    x: &Tensor<f64>,
    kernel: &Tensor<f64>,
    bias: Option<&[f64]>,
    ph: usize,
    pw: usize,
) -> Tensor<f64> {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (o, kh, kw) = (kernel.shape()[0], kernel.shape()[2], kernel.shape()[3]);
    let (oh, ow) = (h + 2 * ph + 1 - kh, w + 2 * pw + 1 - kw);
    let (xd, kd) = (x.data(), kernel.data());
    let mut out = vec![0.0; n * o * oh * ow];
    for b in 0..n {
        for oc in 0..o {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = bias.map_or(0.0, |b| b[oc]);
                    for ic in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = y as isize + ky as isize - ph as isize;
                                let ix = xx as isize + kx as isize - pw as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += xd[((b * c + ic) * h + iy as usize) * w + ix as usize]
                                    * kd[((oc * c + ic) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[((b * o + oc) * oh + y) * ow + xx] = acc;
                }
            }
        }
    }
    Tensor::new([n, o, oh, ow], out).unwrap()
}

/// Result of checking one operation at many random points.
#[derive(Debug)]
pub struct SuiteResult {
    pub clean_points: usize,
    pub attempts: usize,
    pub worst: f64,
    pub failures: Vec<String>,
}

impl SuiteResult {
    pub fn ok(&self, wanted: usize) -> bool {
        self.clean_points >= wanted && self.failures.is_empty()
    }
}

/// Draws points from `point(seed)` until `wanted` of them are free of kinks
/// and ties, checking each with central differences.
pub fn check_points<P, F>(
    wanted: usize,
    max_coords: usize,
    tolerance: f64,
    point: P,
    f: F,
) -> SuiteResult
where
    P: Fn(u64) -> Vec<Tensor<f64>>,
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let cfg = GradCheckConfig {
        max_coords: Some(max_coords),
        tolerance,
        ..Default::default()
    };
    let mut result = SuiteResult {
        clean_points: 0,
        attempts: 0,
        worst: 0.0,
        failures: Vec::new(),
    };
    while result.clean_points < wanted && result.attempts < wanted * 4 {
        let s = result.attempts as u64;
        result.attempts += 1;
        let inputs = point(s);
        let report: GradCheckReport = match grad_check(
            &f,
            &inputs,
            &GradCheckConfig {
                seed: s,
                ..cfg.clone()
            },
        ) {
            Ok(r) => r,
            Err(e) => {
                result.failures.push(format!("point {s}: {e}"));
                continue;
            }
        };
        if !report.point_is_clean() || report.checked.is_empty() {
            continue;
        }
        result.clean_points += 1;
        result.worst = result.worst.max(report.max_rel_error());
        if !report.passed() {
            let w = report.worst().unwrap();
            result.failures.push(format!(
                "point {s}: input {} index {} analytic {} numeric {}",
                w.input, w.index, w.analytic, w.numeric
            ));
        }
    }
    result
}

/// Writes the toy training and validation sets used by end-to-end tests
/// and returns their manifests.
pub fn toy_data(
    dir: &Path,
    train: usize,
    val: usize,
    size: usize,
) -> (DatasetManifest, DatasetManifest) {
    let rain = RainParams::default();
    let t = write_toy_dataset(&dir.join("train"), train, size, 1, &rain).unwrap();
    let v = write_toy_dataset(&dir.join("val"), val, size, 2, &rain).unwrap();
    (t, v)
}

/// One bias-corrected Adam update of a single scalar.
pub fn adam_scalar(p: f64, m: f64, v: f64, g: f64, step: i32, lr: f64) -> (f64, f64, f64) {
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    let m = b1 * m + (1.0 - b1) * g;
    let v = b2 * v + (1.0 - b2) * g * g;
    let mh = m / (1.0 - b1.powi(step));
    let vh = v / (1.0 - b2.powi(step));
    (p - lr * mh / (vh.sqrt() + eps), m, v)
}
