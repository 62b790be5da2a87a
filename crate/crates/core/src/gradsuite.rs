//! Finite-difference checks of every differentiable piece: tape ops, the
//! renderer, each loss, the generator and the discriminator.

use alloc::boxed::Box;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad_check, CustomOp, ParamStore, Tape, Tensor, Var};
use crate::camera::Camera;
use crate::cloud::PointCloud;
use crate::encodings::{EncodingConfig, Orientation};
use crate::losses::{density_loss, disc_loss, gen_adv_loss, partial_matching_loss, rendering_loss, total_gen_loss, ucd, LossWeights};
use crate::man::Discriminator;
use crate::prn::{Prn, PrnConfig, PrnInput};
use crate::render::{render_vars, RadiusMode, SplatConfig};
use crate::Result;

/// Tolerance for tape ops, losses and networks.
pub const OP_TOLERANCE: f64 = 1e-4;
/// Tolerance for the silhouette renderer at interior configurations.
pub const RENDER_TOLERANCE: f64 = 1e-3;

const STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Runs the whole suite. With `inject_fault` the op checks route through a
/// square op whose backward pass is deliberately wrong, so the suite must
/// report a failure.
pub fn run_suite(inject_fault: bool) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let mut push = |name: &str, err: f64, tol: f64| {
        out.push(CheckResult {
            name: name.to_string(),
            max_rel_error: err,
            tolerance: tol,
        })
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2024);

    push("elementwise_broadcast", check_elementwise(&mut rng, inject_fault)?, OP_TOLERANCE);
    push("matmul_tanh_exp", check_matmul(&mut rng)?, OP_TOLERANCE);
    push("softmax", check_softmax(&mut rng)?, OP_TOLERANCE);
    push("activations_sqrt", check_activations(&mut rng)?, OP_TOLERANCE);
    push("shape_ops_gather", check_shape_ops(&mut rng)?, OP_TOLERANCE);
    push("axis_reductions", check_reductions(&mut rng)?, OP_TOLERANCE);
    push("topk_values", check_topk(&mut rng)?, OP_TOLERANCE);
    push("conv2d", check_conv(&mut rng)?, OP_TOLERANCE);
    push("camera_projection", check_projection(&mut rng)?, OP_TOLERANCE);
    push("silhouette_render", check_silhouette(&mut rng)?, RENDER_TOLERANCE);
    push("depth_render", check_depth(&mut rng)?, OP_TOLERANCE);
    push("ucd", check_ucd(&mut rng)?, OP_TOLERANCE);
    push("partial_matching_loss", check_partial(&mut rng)?, OP_TOLERANCE);
    push("rendering_loss", check_rendering_loss(&mut rng)?, OP_TOLERANCE);
    push("density_loss", check_density(&mut rng)?, OP_TOLERANCE);
    push("adversarial_losses", check_adversarial(&mut rng)?, OP_TOLERANCE);
    push("total_generator_loss", check_total(&mut rng)?, OP_TOLERANCE);
    push("prn_decoder", check_decoder(&mut rng)?, OP_TOLERANCE);
    push("prn_full_pipeline", check_pipeline(&mut rng)?, OP_TOLERANCE);
    push("discriminator_input", check_discriminator(&mut rng)?, OP_TOLERANCE);
    Ok(out)
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn point(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Result<Tensor<f64>> {
    let n = shape.iter().product();
    Tensor::from_f64(shape, &uniform(rng, n, lo, hi))
}

/// Scalar `sum(x * w)` with fixed random weights, so every output element
/// contributes with a distinct sensitivity.
fn weighted_sum(tape: &mut Tape<f64>, x: Var, weights: &[f64]) -> Result<Var> {
    let w = tape.constant(Tensor::from_f64(tape.shape(x), weights)?);
    let p = tape.mul(x, w)?;
    Ok(tape.sum_all(p))
}

fn front_camera(size: usize) -> Result<Camera> {
    Camera::look_at_default([0.0, 0.0, 2.0], [0.0; 3], [0.0, 1.0, 0.0], size, size)
}

/// Squares its input but reports a gradient of `3x` instead of `2x`.
struct FaultySquare;

impl CustomOp<f64> for FaultySquare {
    fn name(&self) -> &'static str {
        "faulty_square"
    }

    fn backward(&self, inputs: &[&Tensor<f64>], _output: &Tensor<f64>, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![Some(inputs[0].data().iter().zip(grad).map(|(x, g)| 3.0 * x * g).collect())]
    }
}

fn square(tape: &mut Tape<f64>, x: Var, faulty: bool) -> Result<Var> {
    if !faulty {
        return tape.square(x);
    }
    let v = tape.value(x);
    let value = Tensor::from_vec(v.shape(), v.data().iter().map(|a| a * a).collect())?;
    Ok(tape.custom(Box::new(FaultySquare), &[x], value))
}

fn check_elementwise(rng: &mut ChaCha8Rng, faulty: bool) -> Result<f64> {
    let b = point(rng, &[1, 4], 0.5, 1.5)?;
    let c = point(rng, &[3, 1], 0.5, 1.5)?;
    let w = uniform(rng, 12, -1.0, 1.0);
    grad_check(
        |tape, x| {
            let b = tape.constant(b.clone());
            let c = tape.constant(c.clone());
            let s = tape.add(x, b)?;
            let m = tape.mul(s, c)?;
            let d = tape.div(m, b)?;
            let e = tape.sub(d, c)?;
            let e = square(tape, e, faulty)?;
            let e = tape.add_scalar(e, 0.5);
            let f = tape.sq_diff(e, x)?;
            weighted_sum(tape, f, &w)
        },
        &point(rng, &[3, 4], -1.0, 1.0)?,
        STEP,
    )
}

fn check_matmul(rng: &mut ChaCha8Rng) -> Result<f64> {
    let b = point(rng, &[4, 5], -1.0, 1.0)?;
    let w = uniform(rng, 15, -1.0, 1.0);
    grad_check(
        |tape, x| {
            let b = tape.constant(b.clone());
            let m = tape.matmul(x, b)?;
            let t = tape.tanh(m);
            let t = tape.mul_scalar(t, 0.5);
            let e = tape.exp(t);
            weighted_sum(tape, e, &w)
        },
        &point(rng, &[3, 4], -1.0, 1.0)?,
        STEP,
    )
}

fn check_softmax(rng: &mut ChaCha8Rng) -> Result<f64> {
    let w = uniform(rng, 20, -1.0, 1.0);
    grad_check(
        |tape, x| {
            let a = tape.softmax(x, 1)?;
            let b = tape.softmax(x, 0)?;
            let s = tape.add(a, b)?;
            weighted_sum(tape, s, &w)
        },
        &point(rng, &[4, 5], -2.0, 2.0)?,
        STEP,
    )
}

fn check_activations(rng: &mut ChaCha8Rng) -> Result<f64> {
    let w = uniform(rng, 12, -1.0, 1.0);
    // keep every coordinate away from the kinks at zero
    let mut p = point(rng, &[12], 0.2, 1.5)?;
    for (i, v) in p.data_mut().iter_mut().enumerate() {
        if i % 2 == 1 {
            *v = -*v;
        }
    }
    grad_check(
        |tape, x| {
            let r = tape.relu(x);
            let l = tape.leaky_relu(x, 0.2);
            let n = tape.neg(x);
            let sq = tape.square(x)?;
            let s = tape.sqrt(sq);
            let s = tape.add(s, r)?;
            let s = tape.add(s, l)?;
            let s = tape.add(s, n)?;
            weighted_sum(tape, s, &w)
        },
        &p,
        STEP,
    )
}

fn check_shape_ops(rng: &mut ChaCha8Rng) -> Result<f64> {
    let w = uniform(rng, 8 * 3, -1.0, 1.0);
    let w2 = uniform(rng, 5, -1.0, 1.0);
    grad_check(
        |tape, x| {
            let t = tape.transpose(x)?;
            let r = tape.reshape(t, &[4, 3])?;
            let rows = tape.index_select(r, &[3, 0, 0, 2])?;
            let both = tape.concat(&[r, rows], 0)?;
            let taken = tape.take(x, &[0, 5, 5, 11, 7], &[5])?;
            let a = weighted_sum(tape, both, &w)?;
            let b = weighted_sum(tape, taken, &w2)?;
            tape.add(a, b)
        },
        &point(rng, &[3, 4], -1.0, 1.0)?,
        STEP,
    )
}

fn check_reductions(rng: &mut ChaCha8Rng) -> Result<f64> {
    let w = uniform(rng, 4, -1.0, 1.0);
    let w3 = uniform(rng, 3, -1.0, 1.0);
    grad_check(
        |tape, x| {
            let s = tape.sum(x, 0)?;
            let m = tape.mean(x, 0)?;
            let mx = tape.max(x, 0)?;
            let mn = tape.min(x, 1)?;
            let a = tape.add(s, m)?;
            let a = tape.add(a, mx)?;
            let a = weighted_sum(tape, a, &w)?;
            let b = weighted_sum(tape, mn, &w3)?;
            let c = tape.mean_all(x);
            let ab = tape.add(a, b)?;
            tape.add(ab, c)
        },
        // distinct values keep max and min unambiguous
        &point(rng, &[3, 4], -1.0, 1.0)?,
        STEP,
    )
}

fn check_topk(rng: &mut ChaCha8Rng) -> Result<f64> {
    let w = uniform(rng, 8, -1.0, 1.0);
    grad_check(
        |tape, x| {
            let (v, _) = tape.topk(x, 2)?;
            weighted_sum(tape, v, &w)
        },
        &point(rng, &[4, 6], -1.0, 1.0)?,
        STEP,
    )
}

fn check_conv(rng: &mut ChaCha8Rng) -> Result<f64> {
    let w = point(rng, &[3, 2, 4, 4], -0.5, 0.5)?;
    let bias = point(rng, &[3], -0.5, 0.5)?;
    let out_w = uniform(rng, 3 * 4 * 4, -1.0, 1.0);
    grad_check(
        |tape, x| {
            let k = tape.constant(w.clone());
            let b = tape.constant(bias.clone());
            // the input and a weight-shaped slice of it both drive the conv
            let y = tape.conv2d(x, k, Some(b), 2, 1)?;
            let xr = tape.reshape(x, &[4, 32])?;
            let ks = tape.index_select(xr, &[0, 1, 1])?;
            let ks = tape.reshape(ks, &[3, 2, 4, 4])?;
            let kx = tape.add(ks, k)?;
            let z = tape.conv2d(x, kx, None, 2, 1)?;
            let s = tape.add(y, z)?;
            weighted_sum(tape, s, &out_w)
        },
        &point(rng, &[1, 2, 8, 8], -1.0, 1.0)?,
        STEP,
    )
}

fn check_projection(rng: &mut ChaCha8Rng) -> Result<f64> {
    let cam = Camera::look_at_default([1.2, -1.1, 0.9], [0.0; 3], [0.0, 0.0, 1.0], 32, 24)?;
    let w = uniform(rng, 3 * 5, -1.0, 1.0);
    grad_check(
        |tape, x| {
            let p = cam.project_vars(tape, x)?;
            let all = tape.concat(&[p.x, p.y, p.z], 0)?;
            weighted_sum(tape, all, &w)
        },
        &point(rng, &[5, 3], -0.5, 0.5)?,
        STEP,
    )
}

/// Splat centers placed away from every pixel's coverage boundary.
fn interior_points() -> Result<Tensor<f64>> {
    Tensor::from_f64(&[3, 3], &[0.013, 0.021, 0.05, -0.041, 0.032, -0.02, 0.07, -0.053, 0.1])
}

fn check_silhouette(rng: &mut ChaCha8Rng) -> Result<f64> {
    let cam = front_camera(24)?;
    let w = uniform(rng, 24 * 24, 0.5, 1.5);
    let mut worst: f64 = 0.0;
    for gamma in [1.0, 2.0] {
        let splat = SplatConfig {
            radius: 0.25,
            k_blend: 8,
            gamma,
        };
        worst = worst.max(grad_check(
            |tape, x| {
                let r = render_vars(tape, x, &cam, &splat, RadiusMode::Fixed)?;
                weighted_sum(tape, r.silhouette, &w)
            },
            &interior_points()?,
            STEP,
        )?);
    }
    Ok(worst)
}

fn check_depth(rng: &mut ChaCha8Rng) -> Result<f64> {
    let cam = front_camera(16)?;
    let splat = SplatConfig::default().with_radius(0.3);
    let w = uniform(rng, 16 * 16, 0.5, 1.5);
    grad_check(
        |tape, x| {
            let r = render_vars(tape, x, &cam, &splat, RadiusMode::Fixed)?;
            weighted_sum(tape, r.depth, &w)
        },
        &interior_points()?,
        STEP,
    )
}

fn check_ucd(rng: &mut ChaCha8Rng) -> Result<f64> {
    let other = point(rng, &[12, 3], -1.0, 1.0)?;
    let mut worst: f64 = 0.0;
    for squared in [false, true] {
        worst = worst.max(grad_check(
            |tape, x| {
                let o = tape.constant(other.clone());
                let a = ucd(tape, x, o, squared)?;
                let b = ucd(tape, o, x, squared)?;
                tape.add(a, b)
            },
            &point(rng, &[10, 3], -1.0, 1.0)?,
            STEP,
        )?);
    }
    Ok(worst)
}

fn check_partial(rng: &mut ChaCha8Rng) -> Result<f64> {
    let p_in = point(rng, &[10, 3], -1.0, 1.0)?;
    let p_out = point(rng, &[16, 3], -1.0, 1.0)?;
    grad_check(
        |tape, x| {
            let pin = tape.constant(p_in.clone());
            let out = tape.constant(p_out.clone());
            let shifted = tape.add_scalar(x, 0.05);
            let out = tape.add(out, shifted)?;
            partial_matching_loss(tape, pin, x, out, false)
        },
        &point(rng, &[16, 3], -1.0, 1.0)?,
        STEP,
    )
}

fn check_rendering_loss(rng: &mut ChaCha8Rng) -> Result<f64> {
    let s0: Vec<f64> = uniform(rng, 36, 0.0, 1.0).into_iter().map(|v| if v > 0.4 { 1.0 } else { 0.0 }).collect();
    // coarse values stay clear of the mask threshold
    let mut start = uniform(rng, 72, 0.05, 0.95);
    for v in start[36..].iter_mut() {
        if (*v - 0.5).abs() < 0.05 {
            *v += 0.1;
        }
    }
    grad_check(
        |tape, x| {
            let s0 = tape.constant(Tensor::from_f64(&[6, 6], &s0)?);
            let out = tape.index_select(x, &[0])?;
            let out = tape.reshape(out, &[6, 6])?;
            let c = tape.index_select(x, &[1])?;
            let c = tape.reshape(c, &[6, 6])?;
            rendering_loss(tape, s0, out, c)
        },
        &Tensor::from_f64(&[2, 36], &start)?,
        STEP,
    )
}

fn check_density(rng: &mut ChaCha8Rng) -> Result<f64> {
    grad_check(|tape, x| density_loss(tape, x, 4), &point(rng, &[20, 3], -1.0, 1.0)?, STEP)
}

fn check_adversarial(rng: &mut ChaCha8Rng) -> Result<f64> {
    grad_check(
        |tape, x| {
            let real = tape.index_select(x, &[0])?;
            let fake = tape.index_select(x, &[1])?;
            let d = disc_loss(tape, real, fake)?;
            let g = gen_adv_loss(tape, fake)?;
            let g = tape.mul_scalar(g, 0.7);
            tape.add(d, g)
        },
        &point(rng, &[2, 5], -1.0, 1.5)?,
        STEP,
    )
}

fn check_total(rng: &mut ChaCha8Rng) -> Result<f64> {
    let weights = LossWeights {
        alpha_part: 1.0,
        alpha_rend: 0.5,
        alpha_dens: 2.0,
        alpha_gen: 0.25,
    };
    let p_in = point(rng, &[8, 3], -1.0, 1.0)?;
    let scores = point(rng, &[4], -1.0, 1.0)?;
    let s0 = point(rng, &[4, 4], 0.0, 1.0)?;
    grad_check(
        |tape, x| {
            let pin = tape.constant(p_in.clone());
            let part = partial_matching_loss(tape, pin, x, x, true)?;
            let dens = density_loss(tape, x, 3)?;
            let s = tape.constant(s0.clone());
            let flat = tape.reshape(x, &[36])?;
            let img = tape.take(flat, &(0..16).collect::<Vec<_>>(), &[4, 4])?;
            let img = tape.tanh(img);
            let rend = rendering_loss(tape, s, img, img)?;
            let sc = tape.constant(scores.clone());
            let sc = tape.add(sc, img)?;
            let gen = gen_adv_loss(tape, sc)?;
            total_gen_loss(tape, part, rend, dens, Some(gen), &weights)
        },
        &point(rng, &[12, 3], -1.0, 1.0)?,
        STEP,
    )
}

fn small_prn() -> PrnConfig {
    PrnConfig {
        n_in: 32,
        n_coarse: 16,
        m_out: 64,
        l_retrieve: 4,
        global_dim: 16,
        refine_hidden: 16,
        encodings: EncodingConfig {
            k_pos: 6,
            k_cur: 8,
            eps: 1e-8,
        },
        ..PrnConfig::default()
    }
}

fn check_decoder(rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut store = ParamStore::<f64>::new();
    let prn = Prn::new(small_prn(), &mut store, rng)?;
    let w = uniform(rng, 16 * 3, -1.0, 1.0);
    grad_check(
        |tape, x| {
            let p = store.bind(tape, false);
            let c = prn.decode_coarse(tape, &p, x)?;
            weighted_sum(tape, c, &w)
        },
        &point(rng, &[16], -1.0, 1.0)?,
        STEP,
    )
}

/// Gradient of the partial matching loss through the whole generator with
/// respect to the last refiner layer, on a 32-point instance.
fn check_pipeline(rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut store = ParamStore::<f64>::new();
    let prn = Prn::new(small_prn(), &mut store, rng)?;
    let cloud = PointCloud::new(
        (0..32)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect(),
    )?;
    let input = PrnInput::new(cloud, &prn.config.encodings, Orientation::Centroid)?;
    let target = store.id("prn.refine.2.weight")?;
    let start = point(rng, store.get(target).shape(), -0.3, 0.3)?;
    grad_check(
        |tape, w| {
            let p = store.bind(tape, false).with(target, w);
            let out = prn.forward(tape, &p, &input)?;
            let pin = tape.constant(input.cloud.to_tensor());
            partial_matching_loss(tape, pin, out.p_c, out.p_out, false)
        },
        &start,
        STEP,
    )
}

fn check_discriminator(rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut store = ParamStore::<f64>::new();
    let d = Discriminator::new(&mut store, 32, 32, rng)?;
    let head = store.id("disc.head.weight")?;
    for v in store.get_mut(head).data_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    // the map varies along a few random directions; checking all 2048
    // pixels separately would dominate the suite's runtime
    let base = uniform(rng, 2048, 0.0, 1.0);
    let dirs = uniform(rng, 6 * 2048, -0.1, 0.1);
    grad_check(
        |tape, x| {
            let p = store.bind(tape, false);
            let a = tape.constant(Tensor::from_f64(&[6, 2048], &dirs)?);
            let b = tape.constant(Tensor::from_f64(&[1, 2048], &base)?);
            let m = tape.matmul(x, a)?;
            let m = tape.add(m, b)?;
            let m = tape.reshape(m, &[2, 32, 32])?;
            let s = d.forward(tape, &p, m)?;
            let sq = tape.square(s)?;
            Ok(tape.sum_all(sq))
        },
        &point(rng, &[1, 6], -0.3, 0.3)?,
        STEP,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        let results = run_suite(false).unwrap();
        assert!(results.len() >= 12);
        for r in &results {
            assert!(r.passed(), "{}: {:e}", r.name, r.max_rel_error);
        }
    }

    #[test]
    fn fault_is_caught() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        assert!(check_elementwise(&mut rng, true).unwrap() > OP_TOLERANCE);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        assert!(check_elementwise(&mut rng, false).unwrap() < OP_TOLERANCE);
    }
}
