//! Completion generator: global encoder, coarse decoder, cross-attention
//! retrieval of pattern encodings from the partial input, and offset
//! refinement of an upsampled coarse cloud.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{Bound, ParamStore, Real, Tape, Tensor, Var};
use crate::cloud::{Point3, PointCloud};
use crate::encodings::{encode_patterns, EncodingConfig, Orientation, PatternEncodings};
use crate::nn::{Linear, Mlp};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PrnConfig {
    pub n_in: usize,
    pub n_coarse: usize,
    pub m_out: usize,
    pub l_retrieve: usize,
    pub global_dim: usize,
    pub embed_dim: usize,
    pub offset_scale: f64,
    pub attention_hidden: usize,
    pub refine_hidden: usize,
    pub encodings: EncodingConfig,
    pub retrieve_position: bool,
    pub retrieve_curvature: bool,
    /// When false the generator stops at the coarse decoder and `P_out = P_c`.
    pub refine: bool,
}

impl Default for PrnConfig {
    fn default() -> Self {
        Self {
            n_in: 256,
            n_coarse: 256,
            m_out: 1024,
            l_retrieve: 16,
            global_dim: 128,
            embed_dim: 1,
            offset_scale: 0.2,
            attention_hidden: 16,
            refine_hidden: 128,
            encodings: EncodingConfig::default(),
            retrieve_position: true,
            retrieve_curvature: true,
            refine: true,
        }
    }
}

impl PrnConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidParameter(m.into()));
        if [self.n_in, self.n_coarse, self.m_out, self.l_retrieve, self.global_dim, self.embed_dim]
            .contains(&0)
        {
            return fail("generator sizes must be at least 1");
        }
        if self.m_out % self.n_coarse != 0 {
            return fail("m_out must be a multiple of n_coarse");
        }
        if self.l_retrieve > self.n_in {
            return fail("l_retrieve must not exceed n_in");
        }
        if !(self.offset_scale > 0.0) {
            return fail("offset_scale must be positive");
        }
        Ok(())
    }

    /// Coarse-decoder-only variant: no retrieval, no refiner, and the
    /// decoder emits all `m_out` points itself.
    pub fn coarse_only(&self) -> Self {
        Self {
            n_coarse: self.m_out,
            retrieve_position: false,
            retrieve_curvature: false,
            refine: false,
            ..self.clone()
        }
    }

    pub fn upsample_ratio(&self) -> usize {
        self.m_out / self.n_coarse
    }

    fn refine_input_dim(&self) -> usize {
        3 + 2 * self.l_retrieve + 2 + self.global_dim + 2
    }
}

/// Partial cloud with its encodings, computed once per sample.
#[derive(Debug, Clone)]
pub struct PrnInput {
    pub cloud: PointCloud,
    pub encodings: PatternEncodings,
}

impl PrnInput {
    pub fn new(cloud: PointCloud, cfg: &EncodingConfig, orientation: Orientation) -> Result<Self> {
        let encodings = encode_patterns(&cloud, cfg, orientation)?;
        Ok(Self { cloud, encodings })
    }
}

/// Top-L retrieval result for one encoding kind.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievedEncodings {
    /// Row-major `[n_coarse, L]`, in descending weight order per row.
    pub values: Vec<f64>,
    pub source_indices: Vec<usize>,
    pub rows: usize,
    pub l: usize,
}

/// Scalar-to-embedding projections for one encoding kind.
#[derive(Debug, Clone)]
pub struct AttentionHead {
    pub query: Mlp,
    pub key: Mlp,
    pub embed_dim: usize,
}

impl AttentionHead {
    fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, name: &str, hidden: usize, embed_dim: usize, rng: &mut R) -> Self {
        Self {
            query: Mlp::new(store, &format!("{name}.query"), &[1, hidden, embed_dim], rng),
            key: Mlp::new(store, &format!("{name}.key"), &[1, hidden, embed_dim], rng),
            embed_dim,
        }
    }

    /// `[n_coarse, n_in]` weights, each row a softmax over the partial points.
    pub fn weights<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, f_in: &[f64], f_c: &[f64]) -> Result<Var> {
        let fi = tape.constant(Tensor::from_f64(&[f_in.len(), 1], f_in)?);
        let fc = tape.constant(Tensor::from_f64(&[f_c.len(), 1], f_c)?);
        let g = self.query.forward(tape, p, fc)?;
        let h = self.key.forward(tape, p, fi)?;
        let ht = tape.transpose(h)?;
        let logits = tape.matmul(g, ht)?;
        let logits = if self.embed_dim > 1 {
            tape.mul_scalar(logits, T::from_f64(1.0 / libm::sqrt(self.embed_dim as f64)))
        } else {
            logits
        };
        tape.softmax(logits, 1)
    }
}

/// The `l` largest weights per row (ties to the smaller column) and the
/// matching entries of `f_in`.
pub fn retrieve_top_l<T: Real>(tape: &mut Tape<T>, weights: Var, f_in: &[f64], l: usize) -> Result<RetrievedEncodings> {
    let shape = tape.shape(weights).to_vec();
    if shape.len() != 2 || shape[1] != f_in.len() {
        return Err(Error::InvalidShape {
            op: "retrieve_top_l",
            shape,
            reason: "weights must be [n_coarse, n_in]",
        });
    }
    if l > f_in.len() {
        return Err(Error::TooManyNeighbors {
            k: l,
            available: f_in.len(),
        });
    }
    let (_, source_indices) = tape.topk(weights, l)?;
    let values = source_indices.iter().map(|&j| f_in[j]).collect();
    Ok(RetrievedEncodings {
        values,
        source_indices,
        rows: shape[0],
        l,
    })
}

/// Parameter layout of the generator.
#[derive(Debug, Clone)]
pub struct Prn {
    pub config: PrnConfig,
    encoder_a: Mlp,
    encoder_b: Mlp,
    decoder: Mlp,
    pub position_head: AttentionHead,
    pub curvature_head: AttentionHead,
    refine_first: Linear,
    refine_rest: Mlp,
}

/// Result of one generator forward pass.
#[derive(Debug, Clone)]
pub struct PrnOutput {
    pub global: Var,
    /// `[n_coarse, 3]`
    pub p_c: Var,
    /// `[m_out, 3]`, or `P_c` itself when refinement is off.
    pub p_out: Var,
    pub position: Option<RetrievedEncodings>,
    pub curvature: Option<RetrievedEncodings>,
}

/// Fixed 2-D grid coordinates in `[-1, 1]` telling replicas apart.
pub fn replica_codes(r: usize) -> Vec<[f64; 2]> {
    let side = (1..).find(|s| s * s >= r).unwrap();
    let coord = |i: usize| if side == 1 { 0.0 } else { -1.0 + 2.0 * i as f64 / (side - 1) as f64 };
    (0..r).map(|k| [coord(k % side), coord(k / side)]).collect()
}

impl Prn {
    pub fn new<T: Real, R: Rng>(config: PrnConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let g = config.global_dim;
        let encoder_a = Mlp::new(store, "prn.encoder.a", &[3, 32, 64], rng);
        let encoder_b = Mlp::new(store, "prn.encoder.b", &[128, 128, g], rng);
        let decoder = Mlp::new(store, "prn.decoder", &[g, 256, 512, config.n_coarse * 3], rng);
        let position_head = AttentionHead::new(store, "prn.attn.position", config.attention_hidden, config.embed_dim, rng);
        let curvature_head = AttentionHead::new(store, "prn.attn.curvature", config.attention_hidden, config.embed_dim, rng);
        let h = config.refine_hidden;
        let refine_first = Linear::new(store, "prn.refine.0", config.refine_input_dim(), h, rng);
        // zero offsets at initialization
        let refine_rest = Mlp {
            layers: vec![
                Linear::new(store, "prn.refine.1", h, h / 2, rng),
                Linear::zeros(store, "prn.refine.2", h / 2, 3),
            ],
        };
        Ok(Self {
            config,
            encoder_a,
            encoder_b,
            decoder,
            position_head,
            curvature_head,
            refine_first,
            refine_rest,
        })
    }

    /// Permutation-invariant `[global_dim]` feature of `points: [N, 3]`.
    pub fn encode_global<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, points: Var) -> Result<Var> {
        let n = tape.shape(points)[0];
        let a = self.encoder_a.forward(tape, p, points)?;
        let pooled = tape.max(a, 0)?;
        let w = tape.shape(pooled)[0];
        let pooled = tape.reshape(pooled, &[1, w])?;
        let tiled = tape.index_select(pooled, &vec![0; n])?;
        let joined = tape.concat(&[a, tiled], 1)?;
        let b = self.encoder_b.forward(tape, p, joined)?;
        tape.max(b, 0)
    }

    /// Three fully connected layers from the global feature to `[n_coarse, 3]`.
    pub fn decode_coarse<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, global: Var) -> Result<Var> {
        let g = tape.reshape(global, &[1, self.config.global_dim])?;
        let flat = self.decoder.forward(tape, p, g)?;
        tape.reshape(flat, &[self.config.n_coarse, 3])
    }

    /// Upsamples `p_c` and adds bounded per-replica offsets predicted from the
    /// retrieved encodings, the coarse point's own encodings and the global
    /// feature.
    #[allow(clippy::too_many_arguments)]
    pub fn refine<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        p_c: Var,
        e_pos: &[f64],
        e_cur: &[f64],
        f_pos_c: &[f64],
        f_cur_c: &[f64],
        global: Var,
    ) -> Result<Var> {
        let cfg = &self.config;
        let (nc, l, r, gd) = (cfg.n_coarse, cfg.l_retrieve, cfg.upsample_ratio(), cfg.global_dim);
        let per_coarse_dim = 3 + 2 * l + 2;
        let mut own = Vec::with_capacity(nc * (2 * l + 2));
        for i in 0..nc {
            own.extend_from_slice(&e_pos[i * l..(i + 1) * l]);
            own.extend_from_slice(&e_cur[i * l..(i + 1) * l]);
            own.push(f_pos_c[i]);
            own.push(f_cur_c[i]);
        }
        let own = tape.constant(Tensor::from_f64(&[nc, 2 * l + 2], &own)?);
        let per_coarse = tape.concat(&[p_c, own], 1)?;

        // The first layer acts on [per-coarse | global | replica code]; its
        // weight rows are split so each block is multiplied once.
        let w = p.get(self.refine_first.weight);
        let rows = |a: usize, b: usize| -> Vec<usize> { (a..b).collect() };
        let w_coarse = tape.index_select(w, &rows(0, per_coarse_dim))?;
        let w_global = tape.index_select(w, &rows(per_coarse_dim, per_coarse_dim + gd))?;
        let w_code = tape.index_select(w, &rows(per_coarse_dim + gd, per_coarse_dim + gd + 2))?;
        let h = self.refine_first.out_dim;

        let hc = tape.matmul(per_coarse, w_coarse)?;
        let hc = tape.reshape(hc, &[nc, 1, h])?;
        let g = tape.reshape(global, &[1, gd])?;
        let hg = tape.matmul(g, w_global)?;
        let hg = tape.add(hg, p.get(self.refine_first.bias))?;
        let codes: Vec<f64> = replica_codes(r).iter().flatten().copied().collect();
        let codes = tape.constant(Tensor::from_f64(&[r, 2], &codes)?);
        let hr = tape.matmul(codes, w_code)?;
        let hr = tape.add(hr, hg)?;
        let hidden = tape.add(hc, hr)?;
        let hidden = tape.reshape(hidden, &[nc * r, h])?;
        let hidden = tape.relu(hidden);
        let raw = self.refine_rest.forward(tape, p, hidden)?;
        let bounded = tape.tanh(raw);
        let offsets = tape.mul_scalar(bounded, T::from_f64(cfg.offset_scale));
        let parents: Vec<usize> = (0..nc * r).map(|k| k / r).collect();
        let replicated = tape.index_select(p_c, &parents)?;
        tape.add(replicated, offsets)
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, input: &PrnInput) -> Result<PrnOutput> {
        let cfg = &self.config;
        let n = input.cloud.len();
        if cfg.l_retrieve > n {
            return Err(Error::TooManyNeighbors {
                k: cfg.l_retrieve,
                available: n,
            });
        }
        let points = tape.constant(input.cloud.to_tensor());
        let global = self.encode_global(tape, p, points)?;
        let p_c = self.decode_coarse(tape, p, global)?;
        if !cfg.refine {
            return Ok(PrnOutput {
                global,
                p_c,
                p_out: p_c,
                position: None,
                curvature: None,
            });
        }

        // coarse encodings follow the current prediction and carry no gradient
        let coarse = PointCloud::from_tensor(tape.value(p_c))?;
        let coarse_enc = encode_patterns(&coarse, &cfg.encodings, Orientation::Centroid)?;
        let nc = cfg.n_coarse;
        let l = cfg.l_retrieve;

        let zeros_l = vec![0.0; nc * l];
        let zeros_c = vec![0.0; nc];
        let (position, e_pos, f_pos_c) = if cfg.retrieve_position {
            let f_in = &input.encodings.position.values;
            let w = self.position_head.weights(tape, p, f_in, &coarse_enc.position.values)?;
            let r = retrieve_top_l(tape, w, f_in, l)?;
            let v = r.values.clone();
            (Some(r), v, coarse_enc.position.values.clone())
        } else {
            (None, zeros_l.clone(), zeros_c.clone())
        };
        let (curvature, e_cur, f_cur_c) = if cfg.retrieve_curvature {
            let f_in = &input.encodings.curvature.values;
            let w = self.curvature_head.weights(tape, p, f_in, &coarse_enc.curvature.values)?;
            let r = retrieve_top_l(tape, w, f_in, l)?;
            let v = r.values.clone();
            (Some(r), v, coarse_enc.curvature.values.clone())
        } else {
            (None, zeros_l, zeros_c)
        };
        let p_out = self.refine(tape, p, p_c, &e_pos, &e_cur, &f_pos_c, &f_cur_c, global)?;
        Ok(PrnOutput {
            global,
            p_c,
            p_out,
            position,
            curvature,
        })
    }

    /// Inference without gradients; returns `(P_c, P_out)`.
    pub fn predict<T: Real>(&self, store: &ParamStore<T>, input: &PrnInput) -> Result<(Vec<Point3>, Vec<Point3>)> {
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let out = self.forward(&mut tape, &p, input)?;
        let pc = PointCloud::from_tensor(tape.value(out.p_c))?.into_positions();
        let po = PointCloud::from_tensor(tape.value(out.p_out))?.into_positions();
        Ok((pc, po))
    }
}
