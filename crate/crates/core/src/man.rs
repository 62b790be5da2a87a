//! Adversarial side of training: per-category banks of real depth maps and
//! the convolutional discriminator that scores depth images.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::autodiff::{Bound, ParamStore, Real, Tape, Tensor, Var};
use crate::image::DepthMap;
use crate::nn::{Conv2d, Linear};
use crate::{Error, Result};

/// Raw single-view depth maps of one category, in sample-id order.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBank {
    pub category: String,
    pub ids: Vec<String>,
    pub maps: Vec<DepthMap>,
    /// Density constant for radius adjustment of rendered maps.
    pub eta: f64,
}

impl ImageBank {
    /// Entries are sorted by id so rebuilding from any listing order gives
    /// the same bank.
    pub fn new(category: &str, entries: Vec<(String, DepthMap)>, eta: f64) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyBank);
        }
        let mut entries = entries;
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        let dims = entries[0].1.dims();
        if let Some((id, m)) = entries.iter().find(|(_, m)| m.dims() != dims) {
            return Err(Error::InvalidParameter(format!(
                "bank map {id} is {}x{}, expected {}x{}",
                m.width, m.height, dims.0, dims.1
            )));
        }
        let (ids, maps) = entries.into_iter().unzip();
        Ok(Self {
            category: category.into(),
            ids,
            maps,
            eta,
        })
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.maps[0].dims()
    }

    /// A random visiting order of the whole bank.
    pub fn epoch_order<R: Rng>(&self, rng: &mut R) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(rng);
        order
    }

    /// `batch` distinct maps chosen uniformly, normalized to `[0, 1]`.
    pub fn sample_real<R: Rng>(&self, rng: &mut R, batch: usize, depth_scale: f64) -> Result<Vec<Vec<f64>>> {
        if self.is_empty() {
            return Err(Error::EmptyBank);
        }
        if batch > self.len() {
            return Err(Error::InvalidParameter(format!(
                "batch {batch} exceeds bank size {}",
                self.len()
            )));
        }
        Ok(rand::seq::index::sample(rng, self.len(), batch)
            .into_iter()
            .map(|i| self.maps[i].normalized(depth_scale))
            .collect())
    }
}

/// Five stride-2 convolutions with leaky ReLU, mean pooling and a linear
/// scoring head.
#[derive(Debug, Clone)]
pub struct Discriminator {
    pub convs: Vec<Conv2d>,
    pub head: Linear,
    pub width: usize,
    pub height: usize,
    pub slope: f64,
}

pub const DISC_CHANNELS: [usize; 5] = [16, 32, 64, 128, 256];

impl Discriminator {
    /// The head starts at zero so every initial score is 0.
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, width: usize, height: usize, rng: &mut R) -> Result<Self> {
        if width < 32 || height < 32 {
            return Err(Error::InvalidParameter(format!(
                "discriminator needs maps of at least 32x32, got {width}x{height}"
            )));
        }
        let mut convs = Vec::new();
        let mut in_ch = 1;
        for (i, &c) in DISC_CHANNELS.iter().enumerate() {
            convs.push(Conv2d::new(store, &format!("disc.conv{i}"), in_ch, c, 4, 2, 1, rng));
            in_ch = c;
        }
        let head = Linear::zeros(store, "disc.head", in_ch, 1);
        Ok(Self {
            convs,
            head,
            width,
            height,
            slope: 0.2,
        })
    }

    /// Scores `[B]` for normalized maps `[B, H, W]`.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, maps: Var) -> Result<Var> {
        let s = tape.shape(maps).to_vec();
        if s.len() != 3 || s[1] != self.height || s[2] != self.width {
            return Err(Error::ImageSize {
                expected: (self.width, self.height),
                got: (s.get(2).copied().unwrap_or(0), s.get(1).copied().unwrap_or(0)),
            });
        }
        let b = s[0];
        let mut x = tape.reshape(maps, &[b, 1, self.height, self.width])?;
        for conv in &self.convs {
            x = conv.forward(tape, p, x)?;
            x = tape.leaky_relu(x, T::from_f64(self.slope));
        }
        let xs = tape.shape(x).to_vec();
        let x = tape.reshape(x, &[b, xs[1], xs[2] * xs[3]])?;
        let pooled = tape.mean(x, 2)?;
        let score = self.head.forward(tape, p, pooled)?;
        tape.reshape(score, &[b])
    }

    /// Convenience for plain value maps.
    pub fn score<T: Real>(&self, store: &ParamStore<T>, maps: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let x = stack_maps(&mut tape, maps, self.width, self.height)?;
        let s = self.forward(&mut tape, &p, x)?;
        Ok(tape.value(s).to_f64_vec())
    }
}

/// Constant `[B, H, W]` tensor from flat maps.
pub fn stack_maps<T: Real>(tape: &mut Tape<T>, maps: &[Vec<f64>], width: usize, height: usize) -> Result<Var> {
    let mut flat = Vec::with_capacity(maps.len() * width * height);
    for m in maps {
        if m.len() != width * height {
            return Err(Error::ImageSize {
                expected: (width, height),
                got: (m.len(), 1),
            });
        }
        flat.extend_from_slice(m);
    }
    Ok(tape.constant(Tensor::from_f64(&[maps.len(), height, width], &flat)?))
}

/// Concatenates per-sample `[H, W]` variables into `[B, H, W]`.
pub fn stack_vars<T: Real>(tape: &mut Tape<T>, maps: &[Var]) -> Result<Var> {
    let s = tape.shape(maps[0]).to_vec();
    let joined = tape.concat(maps, 0)?;
    tape.reshape(joined, &[maps.len(), s[0], s[1]])
}

/// One discriminator update on real and fake maps. Returns the loss value.
pub fn discriminator_step<T: Real>(
    disc: &Discriminator,
    store: &mut ParamStore<T>,
    adam: &mut crate::autodiff::Adam<T>,
    real: &[Vec<f64>],
    fake: &[Vec<f64>],
    lr: f64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let p = store.bind(&mut tape, true);
    let r = stack_maps(&mut tape, real, disc.width, disc.height)?;
    let f = stack_maps(&mut tape, fake, disc.width, disc.height)?;
    let sr = disc.forward(&mut tape, &p, r)?;
    let sf = disc.forward(&mut tape, &p, f)?;
    let loss = crate::losses::disc_loss(&mut tape, sr, sf)?;
    let value = tape.value(loss).item().as_f64();
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss {
            sample: String::from("discriminator batch"),
            detail: format!("disc loss {value}"),
        });
    }
    let grads = tape.backward(loss)?;
    let g = store.collect_grads(&grads, &p);
    adam.update(store, &g, lr);
    Ok(value)
}

/// Fills a map with `value` inside a disc and 0 elsewhere.
pub fn disc_map(width: usize, height: usize, cx: f64, cy: f64, radius: f64, value: f64) -> Vec<f64> {
    let mut m = vec![0.0; width * height];
    for v in 0..height {
        for u in 0..width {
            let (du, dv) = (u as f64 - cx, v as f64 - cy);
            if du * du + dv * dv < radius * radius {
                m[v * width + u] = value;
            }
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, Adam, AdamConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bank(n: usize) -> ImageBank {
        let entries = (0..n)
            .rev()
            .map(|i| {
                let mut m = DepthMap::background(8, 8);
                m.values[i % 64] = 1.0 + i as f64;
                (format!("s{i:03}"), m)
            })
            .collect();
        ImageBank::new("toy", entries, 0.03).unwrap()
    }

    #[test]
    fn bank_ordering() {
        let b = bank(10);
        assert_eq!(b.len(), 10);
        assert_eq!(b.ids[0], "s000");
        assert_eq!(b.maps[3].values[3], 4.0);
        assert_eq!(bank(10), b);
        assert_eq!(ImageBank::new("x", Vec::new(), 0.1).unwrap_err(), Error::EmptyBank);
    }

    #[test]
    fn real_sampling() {
        let b = bank(10);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let all = b.sample_real(&mut rng, 10, 20.0).unwrap();
        let mut seen: Vec<usize> = all.iter().map(|m| m.iter().position(|&v| v > 0.0).unwrap()).collect();
        seen.sort();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        assert!(all.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
        let a = b.sample_real(&mut ChaCha8Rng::seed_from_u64(4), 3, 20.0).unwrap();
        let c = b.sample_real(&mut ChaCha8Rng::seed_from_u64(4), 3, 20.0).unwrap();
        assert_eq!(a, c);
        assert!(b.sample_real(&mut rng, 11, 20.0).is_err());
    }

    #[test]
    fn zero_head_scores_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::<f32>::new();
        let d = Discriminator::new(&mut store, 32, 32, &mut rng).unwrap();
        assert_eq!(d.convs.len(), 5);
        let maps: Vec<Vec<f64>> = (0..3).map(|_| (0..1024).map(|_| rng.random()).collect()).collect();
        assert_eq!(d.score(&store, &maps).unwrap(), [0.0; 3]);
        assert!(d.score(&store, &[vec![0.0; 100]]).is_err());
        assert!(Discriminator::new(&mut store, 16, 16, &mut rng).is_err());
    }

    #[test]
    fn scores_follow_batch_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::<f64>::new();
        let d = Discriminator::new(&mut store, 32, 32, &mut rng).unwrap();
        for v in store.get_mut(d.head.weight).data_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let maps: Vec<Vec<f64>> = (0..4).map(|_| (0..1024).map(|_| rng.random()).collect()).collect();
        let s = d.score(&store, &maps).unwrap();
        let rev: Vec<Vec<f64>> = maps.iter().rev().cloned().collect();
        let sr = d.score(&store, &rev).unwrap();
        for i in 0..4 {
            assert!((s[i] - sr[3 - i]).abs() < 1e-12);
        }
        assert_eq!(s.len(), 4);
    }

    #[test]
    fn input_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::<f64>::new();
        let d = Discriminator::new(&mut store, 32, 32, &mut rng).unwrap();
        for v in store.get_mut(d.head.weight).data_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        // probe the input gradient along a few random directions
        let base: Vec<f64> = (0..2048).map(|_| rng.random()).collect();
        let dirs: Vec<f64> = (0..6 * 2048).map(|_| rng.random_range(-0.1..0.1)).collect();
        let x = Tensor::from_f64(&[1, 6], &[0.1, -0.2, 0.3, 0.05, -0.15, 0.25]).unwrap();
        let err = grad_check(
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
            &x,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    fn family(rng: &mut ChaCha8Rng, round: bool) -> Vec<f64> {
        let cx = rng.random_range(10.0..22.0);
        let cy = rng.random_range(10.0..22.0);
        if round {
            disc_map(32, 32, cx, cy, rng.random_range(5.0..8.0), rng.random_range(0.5..0.7))
        } else {
            // horizontal bars
            let mut m = vec![0.0; 1024];
            for v in 0..32 {
                if (v as f64 - cy).abs() < 3.0 {
                    for u in 0..32 {
                        if (u as f64 - cx).abs() < 10.0 {
                            m[v * 32 + u] = 0.3;
                        }
                    }
                }
            }
            m
        }
    }

    #[test]
    fn separable_families() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::<f32>::new();
        let d = Discriminator::new(&mut store, 32, 32, &mut rng).unwrap();
        let mut adam = Adam::new(AdamConfig::default(), &store);
        let mut last = f64::INFINITY;
        for step in 0..500 {
            let real: Vec<Vec<f64>> = (0..4).map(|_| family(&mut rng, true)).collect();
            let fake: Vec<Vec<f64>> = (0..4).map(|_| family(&mut rng, false)).collect();
            last = discriminator_step(&d, &mut store, &mut adam, &real, &fake, 1e-3).unwrap();
            if step > 50 && last < 0.02 {
                break;
            }
        }
        assert!(last < 0.1, "{last}");
    }
}
