//! Joint training of the completion generator and the depth-map
//! discriminator.
//!
//! Each epoch is a pure function of the current state, the seed and the
//! epoch number, so a run resumed from a checkpoint continues bit-exactly.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Adam, AdamConfig, ParamStore, Tape, Tensor, Var};
use crate::camera::{sample_viewpoint, Camera, ViewSampling};
use crate::cloud::PointCloud;
use crate::encodings::Orientation;
use crate::image::SilhouetteMap;
use crate::losses::{density_loss, gen_adv_loss, partial_matching_loss, rendering_loss, total_gen_loss, LossWeights};
use crate::man::{discriminator_step, stack_vars, Discriminator, ImageBank};
use crate::prn::{Prn, PrnConfig, PrnInput};
use crate::render::{render_vars, RadiusMode, SplatConfig};
use crate::{metrics, Error, Result};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub weights: LossWeights,
    pub density_k: usize,
    pub squared_ucd: bool,
    pub splat: SplatConfig,
    pub dare: bool,
    pub view: ViewSampling,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 600,
            batch_size: 8,
            adam: AdamConfig::default(),
            lr_decay: 0.5,
            lr_decay_every: 200,
            weights: LossWeights::default(),
            density_k: 8,
            squared_ucd: false,
            splat: SplatConfig::default(),
            dare: true,
            view: ViewSampling::default(),
            width: 64,
            height: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.splat.validate()?;
        if self.batch_size == 0 || self.density_k == 0 || self.lr_decay_every == 0 {
            return Err(Error::InvalidParameter("batch size, density neighbors and decay period must be positive".into()));
        }
        if !(self.adam.lr > 0.0) || !(self.lr_decay > 0.0) {
            return Err(Error::InvalidParameter("learning rate and decay must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate used during epoch `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.adam.lr * libm::pow(self.lr_decay, (epoch / self.lr_decay_every) as f64)
    }

    /// Divisor that maps depth values into `[0, 1]`.
    pub fn depth_scale(&self) -> f64 {
        self.view.distance + 1.0
    }

    pub fn adversarial(&self) -> bool {
        self.weights.alpha_gen > 0.0
    }
}

/// A training partial with everything the trainer may see. Ground truth is
/// deliberately absent.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub id: String,
    pub input: PrnInput,
    pub camera: Camera,
    pub mask: SilhouetteMap,
}

impl TrainSample {
    /// Input encodings use normals oriented toward the scanning camera.
    pub fn new(id: &str, partial: PointCloud, camera: Camera, mask: SilhouetteMap, prn: &PrnConfig) -> Result<Self> {
        let input = PrnInput::new(partial, &prn.encodings, Orientation::Toward(camera.eye()))?;
        Ok(Self {
            id: id.to_string(),
            input,
            camera,
            mask,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpochLosses {
    /// 1-based epoch number.
    pub epoch: usize,
    pub l_part: f64,
    pub l_rend: f64,
    pub l_dens: f64,
    pub l_gen: f64,
    pub l_disc: f64,
    /// Mean unsquared UCD from the partial input to the prediction.
    pub ucd_in_out: f64,
}

impl EpochLosses {
    pub fn all_finite(&self) -> bool {
        [self.l_part, self.l_rend, self.l_dens, self.l_gen, self.l_disc, self.ucd_in_out]
            .iter()
            .all(|v| v.is_finite())
    }
}

pub struct Trainer {
    pub prn: Prn,
    pub disc: Discriminator,
    pub gen_params: ParamStore<f32>,
    pub disc_params: ParamStore<f32>,
    pub gen_opt: Adam<f32>,
    pub disc_opt: Adam<f32>,
    /// Completed epochs.
    pub epoch: usize,
    pub config: TrainConfig,
    pub eta: f64,
}

const INIT_STREAM: u64 = u64::MAX;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn non_finite(sample: &str, what: &str, v: f64) -> Error {
    Error::NonFiniteLoss {
        sample: sample.to_string(),
        detail: format!("{what} = {v}"),
    }
}

impl Trainer {
    pub fn new(prn_config: PrnConfig, config: TrainConfig, eta: f64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream_rng(config.seed, INIT_STREAM);
        let mut gen_params = ParamStore::new();
        let prn = Prn::new(prn_config, &mut gen_params, &mut rng)?;
        let mut disc_params = ParamStore::new();
        let disc = Discriminator::new(&mut disc_params, config.width, config.height, &mut rng)?;
        let gen_opt = Adam::new(config.adam, &gen_params);
        let disc_opt = Adam::new(config.adam, &disc_params);
        Ok(Self {
            prn,
            disc,
            gen_params,
            disc_params,
            gen_opt,
            disc_opt,
            epoch: 0,
            config,
            eta,
        })
    }

    fn radius_mode(&self) -> RadiusMode {
        if self.config.dare {
            RadiusMode::Dare { eta: self.eta }
        } else {
            RadiusMode::Fixed
        }
    }

    /// Viewpoints of the adversarial renders for epoch `epoch`, in batch
    /// visiting order, paired with sample indices.
    pub fn epoch_plan(&self, epoch: usize, n_samples: usize) -> Result<Vec<(usize, Camera)>> {
        let base = epoch as u64 * 4;
        let mut order: Vec<usize> = (0..n_samples).collect();
        order.shuffle(&mut stream_rng(self.config.seed, base));
        let mut view_rng = stream_rng(self.config.seed, base + 1);
        order
            .into_iter()
            .map(|i| Ok((i, sample_viewpoint(&mut view_rng, &self.config.view, self.config.width, self.config.height)?)))
            .collect()
    }

    /// Runs one epoch over `samples`; the bank supplies the real maps.
    pub fn run_epoch(&mut self, samples: &[TrainSample], bank: &ImageBank) -> Result<EpochLosses> {
        if samples.is_empty() {
            return Err(Error::InvalidParameter("no training samples".into()));
        }
        let epoch = self.epoch;
        let lr = self.config.lr_at(epoch);
        let plan = self.epoch_plan(epoch, samples.len())?;
        let adversarial = self.config.adversarial();
        let bank_order = if adversarial {
            if bank.dims() != (self.config.width, self.config.height) {
                return Err(Error::ImageSize {
                    expected: (self.config.width, self.config.height),
                    got: bank.dims(),
                });
            }
            bank.epoch_order(&mut stream_rng(self.config.seed, epoch as u64 * 4 + 2))
        } else {
            Vec::new()
        };

        let mut rec = EpochLosses {
            epoch: epoch + 1,
            ..EpochLosses::default()
        };
        let mut batches = 0usize;
        for (b, chunk) in plan.chunks(self.config.batch_size).enumerate() {
            let real: Vec<Vec<f64>> = if adversarial {
                (0..chunk.len())
                    .map(|k| {
                        let i = bank_order[(b * self.config.batch_size + k) % bank_order.len()];
                        bank.maps[i].normalized(self.config.depth_scale())
                    })
                    .collect()
            } else {
                Vec::new()
            };
            let step = self.train_batch(samples, chunk, &real, lr)?;
            rec.l_part += step.l_part;
            rec.l_rend += step.l_rend;
            rec.l_dens += step.l_dens;
            rec.ucd_in_out += step.ucd_in_out;
            rec.l_gen += step.l_gen;
            rec.l_disc += step.l_disc;
            batches += 1;
        }
        let n = samples.len() as f64;
        rec.l_part /= n;
        rec.l_rend /= n;
        rec.l_dens /= n;
        rec.ucd_in_out /= n;
        rec.l_gen /= batches as f64;
        rec.l_disc /= batches as f64;
        self.epoch += 1;
        Ok(rec)
    }

    /// One generator step (and, when adversarial, one discriminator step
    /// before it). Per-sample terms are returned as sums over the batch.
    fn train_batch(&mut self, samples: &[TrainSample], chunk: &[(usize, Camera)], real: &[Vec<f64>], lr: f64) -> Result<EpochLosses> {
        let cfg = self.config.clone();
        let adversarial = cfg.adversarial();
        let mode = self.radius_mode();
        let (w, h) = (cfg.width, cfg.height);
        let mut tape = Tape::<f32>::new();
        let gp = self.gen_params.bind(&mut tape, true);
        let mut sums = EpochLosses::default();
        let mut sample_losses = Vec::with_capacity(chunk.len());
        let mut fakes: Vec<Var> = Vec::new();
        for (i, view) in chunk {
            let s = &samples[*i];
            let out = self.prn.forward(&mut tape, &gp, &s.input).map_err(|e| match e {
                Error::NonFinite(_) => non_finite(&s.id, "prediction", f64::NAN),
                e => e,
            })?;
            let pin = tape.constant(s.input.cloud.to_tensor());
            let l_part = partial_matching_loss(&mut tape, pin, out.p_c, out.p_out, cfg.squared_ucd)?;
            let r_out = render_vars(&mut tape, out.p_out, &s.camera, &cfg.splat, mode)?;
            let r_c = render_vars(&mut tape, out.p_c, &s.camera, &cfg.splat, mode)?;
            if s.mask.dims() != (w, h) {
                return Err(Error::ImageSize {
                    expected: (w, h),
                    got: s.mask.dims(),
                });
            }
            let s0 = tape.constant(Tensor::from_f64(&[h, w], &s.mask.values)?);
            let l_rend = rendering_loss(&mut tape, s0, r_out.silhouette, r_c.silhouette)?;
            let l_dens = density_loss(&mut tape, out.p_out, cfg.density_k)?;
            for (name, v, slot) in [
                ("l_part", l_part, &mut sums.l_part),
                ("l_rend", l_rend, &mut sums.l_rend),
                ("l_dens", l_dens, &mut sums.l_dens),
            ] {
                let x = tape.value(v).item() as f64;
                if !x.is_finite() {
                    return Err(non_finite(&s.id, name, x));
                }
                *slot += x;
            }
            let p_out = PointCloud::from_tensor(tape.value(out.p_out)).map_err(|_| non_finite(&s.id, "prediction", f64::NAN))?;
            sums.ucd_in_out += metrics::ucd(s.input.cloud.positions(), p_out.positions(), false)?;
            sample_losses.push(total_gen_loss(&mut tape, l_part, l_rend, l_dens, None, &LossWeights {
                alpha_gen: 0.0,
                ..cfg.weights
            })?);
            if adversarial {
                let fake = render_vars(&mut tape, out.p_out, view, &cfg.splat, mode)?;
                fakes.push(tape.mul_scalar(fake.depth, (1.0 / cfg.depth_scale()) as f32));
            }
        }
        let mut total = sample_losses[0];
        for &l in &sample_losses[1..] {
            total = tape.add(total, l)?;
        }
        let mut total = tape.mul_scalar(total, 1.0 / chunk.len() as f32);

        if adversarial {
            let fake_values: Vec<Vec<f64>> = fakes.iter().map(|&f| tape.value(f).to_f64_vec()).collect();
            sums.l_disc = discriminator_step(&self.disc, &mut self.disc_params, &mut self.disc_opt, real, &fake_values, lr)?;
            let dp = self.disc_params.bind(&mut tape, false);
            let stacked = stack_vars(&mut tape, &fakes)?;
            let scores = self.disc.forward(&mut tape, &dp, stacked)?;
            let l_gen = gen_adv_loss(&mut tape, scores)?;
            let g = tape.value(l_gen).item() as f64;
            if !g.is_finite() {
                return Err(non_finite(&samples[chunk[0].0].id, "l_gen", g));
            }
            sums.l_gen = g;
            let weighted = tape.mul_scalar(l_gen, cfg.weights.alpha_gen as f32);
            total = tape.add(total, weighted)?;
        }

        let grads = match tape.backward(total) {
            Ok(g) => g,
            // every term weighted to zero: nothing to learn from this batch
            Err(Error::DetachedGraph) => return Ok(sums),
            Err(e) => return Err(e),
        };
        let g = self.gen_params.collect_grads(&grads, &gp);
        self.gen_opt.update(&mut self.gen_params, &g, lr);
        Ok(sums)
    }

    /// Prediction for one input, `(P_c, P_out)`.
    pub fn complete(&self, input: &PrnInput) -> Result<(Vec<crate::cloud::Point3>, Vec<crate::cloud::Point3>)> {
        self.prn.predict(&self.gen_params, input)
    }

    /// Every piece of state needed to resume, as named f32 tensors.
    pub fn state_tensors(&self) -> Vec<(String, Tensor<f32>)> {
        let mut out = Vec::new();
        let mut push_store = |prefix: &str, store: &ParamStore<f32>, opt: &Adam<f32>| {
            for (name, t) in store.iter() {
                out.push((format!("{prefix}/{name}"), t.clone()));
            }
            for ((name, _), m) in store.iter().zip(&opt.m) {
                out.push((format!("{prefix}.adam_m/{name}"), m.clone()));
            }
            for ((name, _), v) in store.iter().zip(&opt.v) {
                out.push((format!("{prefix}.adam_v/{name}"), v.clone()));
            }
        };
        push_store("gen", &self.gen_params, &self.gen_opt);
        push_store("disc", &self.disc_params, &self.disc_opt);
        let counter = |v: u64| Tensor::from_vec(&[2], split_u64(v)).expect("2");
        out.push(("state/epoch".into(), counter(self.epoch as u64)));
        out.push(("state/gen_step".into(), counter(self.gen_opt.step)));
        out.push(("state/disc_step".into(), counter(self.disc_opt.step)));
        out
    }

    /// Restores state written by [`Trainer::state_tensors`].
    pub fn load_state(&mut self, entries: &[(String, Tensor<f32>)]) -> Result<()> {
        let find = |name: &str| -> Result<&Tensor<f32>> {
            entries
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::MissingParameter(name.to_string()))
        };
        let load = |prefix: &str, store: &mut ParamStore<f32>, opt: &mut Adam<f32>| -> Result<()> {
            let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();
            let mut values = Vec::new();
            for n in &names {
                values.push(find(&format!("{prefix}/{n}"))?.clone());
            }
            store.load_named(names.iter().map(String::as_str).zip(values.iter()))?;
            for (k, n) in names.iter().enumerate() {
                let m = find(&format!("{prefix}.adam_m/{n}"))?;
                let v = find(&format!("{prefix}.adam_v/{n}"))?;
                if m.shape() != opt.m[k].shape() || v.shape() != opt.v[k].shape() {
                    return Err(Error::Checkpoint(format!("optimizer state shape mismatch for {n}")));
                }
                opt.m[k] = m.clone();
                opt.v[k] = v.clone();
            }
            Ok(())
        };
        load("gen", &mut self.gen_params, &mut self.gen_opt)?;
        load("disc", &mut self.disc_params, &mut self.disc_opt)?;
        let counter = |name: &str| -> Result<u64> {
            let t = find(name)?;
            if t.len() != 2 {
                return Err(Error::Checkpoint(format!("{name} must hold 2 values")));
            }
            Ok(join_u64(t.data()))
        };
        self.epoch = counter("state/epoch")? as usize;
        self.gen_opt.step = counter("state/gen_step")?;
        self.disc_opt.step = counter("state/disc_step")?;
        Ok(())
    }
}

/// Splits a counter into two 24-bit halves, each exact in an f32. Values
/// below 2^48 round-trip.
fn split_u64(v: u64) -> Vec<f32> {
    alloc::vec![(v >> 24) as f32, (v & 0xff_ffff) as f32]
}

fn join_u64(d: &[f32]) -> u64 {
    ((d[0] as u64) << 24) | d[1] as u64
}
