//! Differentiable training losses over clouds and images held on a tape.

use alloc::vec::Vec;

use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::cloud::Point3;
use crate::knn::KnnIndex;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub alpha_part: f64,
    pub alpha_rend: f64,
    pub alpha_dens: f64,
    pub alpha_gen: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha_part: 1.0,
            alpha_rend: 1.0,
            alpha_dens: 1.0,
            alpha_gen: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha_part, self.alpha_rend, self.alpha_dens, self.alpha_gen];
        if all.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidParameter("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Mask threshold for counting a coarse-silhouette pixel as foreground.
pub const MASK_THRESHOLD: f64 = 0.5;

fn cloud_points<T: Real>(tape: &Tape<T>, v: Var, op: &'static str) -> Result<Vec<Point3>> {
    let shape = tape.shape(v);
    if shape.len() != 2 || shape[1] != 3 {
        return Err(Error::InvalidShape {
            op,
            shape: shape.to_vec(),
            reason: "expected [N, 3]",
        });
    }
    if shape[0] == 0 {
        return Err(Error::EmptyCloud);
    }
    let d = tape.value(v).data();
    Ok(d.chunks_exact(3)
        .map(|c| [c[0].as_f64(), c[1].as_f64(), c[2].as_f64()])
        .collect())
}

/// Mean over `q1` of the distance to the nearest point of `q2`. Neighbor
/// assignment is fixed from the forward values (ties to the smaller index);
/// gradients flow to both clouds through the assigned pairs.
pub fn ucd<T: Real>(tape: &mut Tape<T>, q1: Var, q2: Var, squared: bool) -> Result<Var> {
    let a = cloud_points(tape, q1, "ucd")?;
    let b = cloud_points(tape, q2, "ucd")?;
    let index = KnnIndex::build(&b)?;
    let nearest: Vec<usize> = a.iter().map(|&p| index.nearest(p).index).collect();
    let matched = tape.index_select(q2, &nearest)?;
    let d2 = tape.sq_diff(q1, matched)?;
    let d2 = tape.sum(d2, 1)?;
    let d = if squared { d2 } else { tape.sqrt(d2) };
    Ok(tape.mean_all(d))
}

/// `UCD(P_in, P_c) + UCD(P_in, P_out)`.
pub fn partial_matching_loss<T: Real>(tape: &mut Tape<T>, p_in: Var, p_c: Var, p_out: Var, squared: bool) -> Result<Var> {
    let a = ucd(tape, p_in, p_c, squared)?;
    let b = ucd(tape, p_in, p_out, squared)?;
    tape.add(a, b)
}

/// Full-image MSE between `s0` and `s_out`, plus the error between `s0` and
/// `s_c` counted only where `s_c` is foreground; both averaged over all pixels.
pub fn rendering_loss<T: Real>(tape: &mut Tape<T>, s0: Var, s_out: Var, s_c: Var) -> Result<Var> {
    if tape.shape(s0) != tape.shape(s_out) || tape.shape(s0) != tape.shape(s_c) {
        return Err(Error::ShapeMismatch {
            op: "rendering_loss",
            lhs: tape.shape(s0).to_vec(),
            rhs: if tape.shape(s0) != tape.shape(s_out) {
                tape.shape(s_out).to_vec()
            } else {
                tape.shape(s_c).to_vec()
            },
        });
    }
    let threshold = T::from_f64(MASK_THRESHOLD);
    let mask: Vec<T> = tape
        .value(s_c)
        .data()
        .iter()
        .map(|&v| if v > threshold { T::one() } else { T::zero() })
        .collect();
    let mask = tape.constant(Tensor::from_vec(tape.shape(s_c), mask)?);
    let full = tape.sq_diff(s0, s_out)?;
    let full = tape.mean_all(full);
    let coarse = tape.sq_diff(s0, s_c)?;
    let coarse = tape.mul(coarse, mask)?;
    let coarse = tape.mean_all(coarse);
    tape.add(full, coarse)
}

/// Population variance of the per-point mean distance to the `k` nearest
/// neighbors.
pub fn density_loss<T: Real>(tape: &mut Tape<T>, cloud: Var, k: usize) -> Result<Var> {
    let pts = cloud_points(tape, cloud, "density_loss")?;
    let n = pts.len();
    if k == 0 {
        return Err(Error::InvalidParameter("density neighbors must be at least 1".into()));
    }
    let index = KnnIndex::build(&pts)?;
    let mut centers = Vec::with_capacity(n * k);
    let mut others = Vec::with_capacity(n * k);
    for (i, &p) in pts.iter().enumerate() {
        for nb in index.knn(p, k, Some(i))? {
            centers.push(i);
            others.push(nb.index);
        }
    }
    let a = tape.index_select(cloud, &centers)?;
    let b = tape.index_select(cloud, &others)?;
    let d2 = tape.sq_diff(a, b)?;
    let d2 = tape.sum(d2, 1)?;
    let d = tape.sqrt(d2);
    let d = tape.reshape(d, &[n, k])?;
    let delta = tape.mean(d, 1)?;
    let mean = tape.mean_all(delta);
    let dev = tape.sq_diff(delta, mean)?;
    Ok(tape.mean_all(dev))
}

fn nonempty<T: Real>(tape: &Tape<T>, v: Var) -> Result<()> {
    if tape.value(v).is_empty() {
        return Err(Error::InvalidParameter("empty score batch".into()));
    }
    Ok(())
}

/// Least-squares generator loss: `mean((score - 1)^2)`.
pub fn gen_adv_loss<T: Real>(tape: &mut Tape<T>, scores: Var) -> Result<Var> {
    nonempty(tape, scores)?;
    let shifted = tape.add_scalar(scores, -T::one());
    let sq = tape.square(shifted)?;
    Ok(tape.mean_all(sq))
}

/// Least-squares discriminator loss: `mean((real - 1)^2) + mean(fake^2)`.
pub fn disc_loss<T: Real>(tape: &mut Tape<T>, real: Var, fake: Var) -> Result<Var> {
    nonempty(tape, fake)?;
    let r = gen_adv_loss(tape, real)?;
    let f = tape.square(fake)?;
    let f = tape.mean_all(f);
    tape.add(r, f)
}

/// Weighted sum of the generator loss terms. A zero weight drops its term
/// from the graph entirely.
pub fn total_gen_loss<T: Real>(
    tape: &mut Tape<T>,
    l_part: Var,
    l_rend: Var,
    l_dens: Var,
    l_gen: Option<Var>,
    w: &LossWeights,
) -> Result<Var> {
    w.validate()?;
    let mut terms = Vec::new();
    for (v, a) in [
        (Some(l_part), w.alpha_part),
        (Some(l_rend), w.alpha_rend),
        (Some(l_dens), w.alpha_dens),
        (l_gen, w.alpha_gen),
    ] {
        if let (Some(v), true) = (v, a != 0.0) {
            terms.push(tape.mul_scalar(v, T::from_f64(a)));
        }
    }
    let mut total = tape.constant(Tensor::scalar(T::zero()));
    for t in terms {
        total = tape.add(total, t)?;
    }
    Ok(total)
}
