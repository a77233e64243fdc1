//! The full forecasting model: DCT pose coding, pose embedding with
//! positional encodings, an encoder/decoder stack of (MHA + FFN + XQA)
//! blocks, query squeezing, graph-convolutional pose decoding anchored at
//! the last observation, and recursive long-horizon inference.

mod config;
mod gcn;
pub(crate) mod layers;

pub use config::PGformerConfig;
pub use layers::positional_encoding;

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::checkpoint as param_io;
use crate::numerics::{NodeId, ParamId, ParamStore, Tape, Tensor};
use crate::pose::{dct_matrix, dct_time, PoseSequence, Scene};
use crate::xqa::{TemplateIds, XqaParams};
use gcn::GcnIds;
use layers::{FfnIds, LayerNormIds, LinearIds, MhaIds};

struct EncoderLayerIds {
    ln_mha: LayerNormIds,
    mha: MhaIds,
    ln_ffn: LayerNormIds,
    ffn: FfnIds,
    ln_xqa: LayerNormIds,
    xqa: XqaParams,
}

struct DecoderLayerIds {
    ln_self: LayerNormIds,
    self_mha: MhaIds,
    ln_cross: LayerNormIds,
    cross_mha: MhaIds,
    ln_ffn: LayerNormIds,
    ffn: FfnIds,
    ln_xqa: LayerNormIds,
    xqa: XqaParams,
}

struct ModelIds {
    pose_enc: LinearIds,
    enc_layers: Vec<EncoderLayerIds>,
    dec_layers: Vec<DecoderLayerIds>,
    /// Normalizes encoder memory for the decoder's cross-attention.
    memory_ln: LayerNormIds,
    /// Per-frame FC for the decoder query (3J -> D).
    query_fc: LinearIds,
    /// Conv1D over the query window, expressed as one FC on the
    /// concatenated window (kernel length = window length).
    query_squeeze: LinearIds,
    gcn: GcnIds,
    /// Gravity-weight logits per role: leader, follower.
    gravity: [ParamId; 2],
}

/// The trained artifact: configuration plus its parameter store.
pub struct PGformer {
    config: PGformerConfig,
    store: ParamStore,
    ids: ModelIds,
}

impl PGformer {
    /// Deterministically initialize a fresh model: a fixed seed yields
    /// bit-identical parameters.
    pub fn new(config: PGformerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.width;
        let pose_dim = config.pose_dim();
        let proxy_mode = config.effective_proxy_mode();

        let pose_enc = LinearIds::init(&mut store, "pose_enc", pose_dim, d, &mut rng);
        let templates = TemplateIds::init(&mut store, "templates", d, config.templates, &mut rng);

        let mut enc_layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = format!("enc.l{l}");
            enc_layers.push(EncoderLayerIds {
                ln_mha: LayerNormIds::init(&mut store, &format!("{p}.ln_mha"), d),
                mha: MhaIds::init(
                    &mut store,
                    &format!("{p}.mha"),
                    d,
                    config.heads,
                    config.head_width,
                    &mut rng,
                ),
                ln_ffn: LayerNormIds::init(&mut store, &format!("{p}.ln_ffn"), d),
                ffn: FfnIds::init(&mut store, &format!("{p}.ffn"), d, config.ffn_width, &mut rng),
                ln_xqa: LayerNormIds::init(&mut store, &format!("{p}.ln_xqa"), d),
                xqa: XqaParams::with_templates(
                    &mut store,
                    &format!("{p}.xqa"),
                    d,
                    config.templates,
                    proxy_mode,
                    config.xqa_heads,
                    config.shared_query,
                    templates,
                    &mut rng,
                )?,
            });
        }

        let mut dec_layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = format!("dec.l{l}");
            dec_layers.push(DecoderLayerIds {
                ln_self: LayerNormIds::init(&mut store, &format!("{p}.ln_self"), d),
                self_mha: MhaIds::init(
                    &mut store,
                    &format!("{p}.self_mha"),
                    d,
                    config.heads,
                    config.head_width,
                    &mut rng,
                ),
                ln_cross: LayerNormIds::init(&mut store, &format!("{p}.ln_cross"), d),
                cross_mha: MhaIds::init(
                    &mut store,
                    &format!("{p}.cross_mha"),
                    d,
                    config.heads,
                    config.head_width,
                    &mut rng,
                ),
                ln_ffn: LayerNormIds::init(&mut store, &format!("{p}.ln_ffn"), d),
                ffn: FfnIds::init(&mut store, &format!("{p}.ffn"), d, config.ffn_width, &mut rng),
                ln_xqa: LayerNormIds::init(&mut store, &format!("{p}.ln_xqa"), d),
                xqa: XqaParams::with_templates(
                    &mut store,
                    &format!("{p}.xqa"),
                    d,
                    config.templates,
                    proxy_mode,
                    config.xqa_heads,
                    config.shared_query,
                    templates,
                    &mut rng,
                )?,
            });
        }

        let memory_ln = LayerNormIds::init(&mut store, "dec.memory_ln", d);
        let query_fc = LinearIds::init(&mut store, "queries.frame_fc", pose_dim, d, &mut rng);
        let query_squeeze = LinearIds::init(
            &mut store,
            "queries.squeeze",
            config.query_window * d,
            d,
            &mut rng,
        );
        let gcn = GcnIds::init(&mut store, "gcn", d, config.joints, &mut rng);
        let gravity = [
            store.add("gravity.leader", Tensor::zeros(vec![config.joints, 3]), true),
            store.add(
                "gravity.follower",
                Tensor::zeros(vec![config.joints, 3]),
                true,
            ),
        ];

        Ok(Self {
            config,
            store,
            ids: ModelIds {
                pose_enc,
                enc_layers,
                dec_layers,
                memory_ln,
                query_fc,
                query_squeeze,
                gcn,
                gravity,
            },
        })
    }

    pub fn config(&self) -> &PGformerConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Gravity-weight logits for a role (0 = leader, 1+ = follower).
    pub fn gravity_logits(&self, person: usize) -> ParamId {
        self.ids.gravity[person.min(1)]
    }

    /// Pose embedding: per-token FC (3J -> D) plus sinusoidal positions.
    fn pose_encode(&self, tape: &mut Tape, history_rep: NodeId) -> Result<NodeId> {
        let t = tape.value(history_rep).mat_dims().0;
        let emb = self.ids.pose_enc.forward(tape, &self.store, history_rep)?;
        let pe = tape.input(positional_encoding(t, self.config.width));
        tape.add(emb, pe)
    }

    /// L encoder layers over every person's stream; cross-talk only through
    /// the XQA sub-layer.
    fn encoder_forward(&self, tape: &mut Tape, streams: &mut [NodeId]) -> Result<()> {
        for layer in &self.ids.enc_layers {
            for s in streams.iter_mut() {
                let n = layer.ln_mha.forward(tape, &self.store, *s)?;
                let att = layer.mha.forward(tape, &self.store, n, n)?;
                *s = tape.add(*s, att)?;
                let n = layer.ln_ffn.forward(tape, &self.store, *s)?;
                let ff = layer.ffn.forward(tape, &self.store, n)?;
                *s = tape.add(*s, ff)?;
            }
            if self.config.use_xqa {
                self.xqa_sublayer(tape, layer.ln_xqa, &layer.xqa, streams, None)?;
            }
        }
        Ok(())
    }

    /// Shared XQA sub-layer body for encoder and decoder. `templates_node`
    /// is `None` in the encoder (use `T_en`) and the predicted `T_de` in the
    /// decoder.
    fn xqa_sublayer(
        &self,
        tape: &mut Tape,
        ln: LayerNormIds,
        xqa: &XqaParams,
        streams: &mut [NodeId],
        templates_node: Option<NodeId>,
    ) -> Result<()> {
        let templates = match templates_node {
            Some(n) => n,
            None => xqa.template_node(tape, &self.store),
        };
        let normed: Vec<NodeId> = streams
            .iter()
            .map(|&s| ln.forward(tape, &self.store, s))
            .collect::<Result<_>>()?;
        let outs = if streams.len() == 2 {
            let (o_l, o_f) = xqa.forward(tape, &self.store, normed[0], normed[1], templates)?;
            vec![o_l, o_f]
        } else {
            xqa.forward_multi(tape, &self.store, &normed, templates)?
        };
        for (s, o) in streams.iter_mut().zip(outs) {
            *s = if self.config.xqa_residual {
                tape.add(*s, o)?
            } else {
                o
            };
        }
        Ok(())
    }

    /// Build the K-copy query sequence from the raw history.
    ///
    /// Pairs squeeze the last `query_window` frames through a per-frame FC
    /// and a window-wide Conv1D; with more than two persons the last frame
    /// alone becomes the query.
    fn build_queries(&self, tape: &mut Tape, history_raw: NodeId, persons: usize) -> Result<NodeId> {
        let t = tape.value(history_raw).mat_dims().0;
        let k = self.config.horizon;
        let q = if persons == 2 {
            let window = self.config.query_window;
            let last = tape.slice_rows(history_raw, t - window, t)?;
            let frames = self.ids.query_fc.forward(tape, &self.store, last)?;
            let flat = tape.reshape(frames, vec![1, window * self.config.width])?;
            self.ids.query_squeeze.forward(tape, &self.store, flat)?
        } else {
            let last = tape.slice_rows(history_raw, t - 1, t)?;
            self.ids.query_fc.forward(tape, &self.store, last)?
        };
        let copies = vec![q; k];
        let seq = tape.concat_rows(&copies)?;
        let pe = tape.input(positional_encoding(k, self.config.width));
        tape.add(seq, pe)
    }

    /// L decoder layers: self-MHA over the K query tokens, cross-MHA to the
    /// same person's encoder memory, FFN, then XQA with the future proxy.
    fn decoder_forward(
        &self,
        tape: &mut Tape,
        streams: &mut [NodeId],
        memories: &[NodeId],
    ) -> Result<()> {
        let memories = memories
            .iter()
            .map(|&m| self.ids.memory_ln.forward(tape, &self.store, m))
            .collect::<Result<Vec<_>>>()?;
        let t_de = if self.config.use_xqa && !self.ids.dec_layers.is_empty() {
            Some(
                self.ids.dec_layers[0]
                    .xqa
                    .future_templates(tape, &self.store)?,
            )
        } else {
            None
        };
        for layer in &self.ids.dec_layers {
            for (s, &mem) in streams.iter_mut().zip(&memories) {
                let n = layer.ln_self.forward(tape, &self.store, *s)?;
                let att = layer.self_mha.forward(tape, &self.store, n, n)?;
                *s = tape.add(*s, att)?;
                let n = layer.ln_cross.forward(tape, &self.store, *s)?;
                let att = layer.cross_mha.forward(tape, &self.store, n, mem)?;
                *s = tape.add(*s, att)?;
                let n = layer.ln_ffn.forward(tape, &self.store, *s)?;
                let ff = layer.ffn.forward(tape, &self.store, n)?;
                *s = tape.add(*s, ff)?;
            }
            if self.config.use_xqa {
                self.xqa_sublayer(tape, layer.ln_xqa, &layer.xqa, streams, t_de)?;
            }
        }
        Ok(())
    }

    /// Decode K output tokens into K pose frames, anchored at the last
    /// observation.
    ///
    /// The anchor enters as token 0 of the (K+1)-token sequence; with DCT
    /// enabled it is the DC-consistent encoding `√(K+1) · x_T`, so an
    /// all-zero prediction reconstructs a constant hold of the last pose.
    fn pose_decode(&self, tape: &mut Tape, decoded: NodeId, last_frame: &Tensor) -> Result<NodeId> {
        let k = self.config.horizon;
        let tokens = self.ids.gcn.proj.forward(tape, &self.store, decoded)?;
        let flat = last_frame
            .reshape(vec![1, self.config.pose_dim()])?
            .scale(1.0 / self.config.input_scale);
        let anchor_val = if self.config.use_dct {
            flat.scale(((k + 1) as f64).sqrt())
        } else {
            flat
        };
        let anchor = tape.input(anchor_val);
        let seq = tape.concat_rows(&[anchor, tokens])?;
        let refined = self
            .ids
            .gcn
            .forward(tape, &self.store, seq, self.config.joints)?;
        let frames = if self.config.use_dct {
            let idct = tape.input(dct_matrix(k + 1).transpose());
            tape.matmul(idct, refined)?
        } else {
            refined
        };
        let scaled_back = tape.scale(frames, self.config.input_scale);
        tape.slice_rows(scaled_back, 1, k + 1)
    }

    /// One full pass over a T-frame history window. Returns the tape and one
    /// `[K, 3J]` prediction node per person, for loss construction.
    pub fn forward_scene(&self, history: &Scene) -> Result<(Tape, Vec<NodeId>)> {
        let cfg = &self.config;
        if history.joint_count() != cfg.joints {
            return Err(Error::Dim {
                op: "forward_scene",
                lhs: vec![history.joint_count()],
                rhs: vec![cfg.joints],
            });
        }
        if history.len() != cfg.history {
            return Err(Error::Contract(format!(
                "forward_scene expects exactly {} history frames, got {}",
                cfg.history,
                history.len()
            )));
        }
        let n = history.person_count();
        let mut tape = Tape::new();

        let scale = 1.0 / cfg.input_scale;
        let raw_mats: Vec<Tensor> = history
            .persons
            .iter()
            .map(|p| p.as_matrix().scale(scale))
            .collect();
        let mut streams = Vec::with_capacity(n);
        let mut raw_nodes = Vec::with_capacity(n);
        for mat in &raw_mats {
            let rep = if cfg.use_dct { dct_time(mat)? } else { mat.clone() };
            let rep_node = tape.input(rep);
            streams.push(self.pose_encode(&mut tape, rep_node)?);
            raw_nodes.push(tape.input(mat.clone()));
        }

        self.encoder_forward(&mut tape, &mut streams)?;
        let memories = streams;

        let mut dec_streams = Vec::with_capacity(n);
        for &raw in &raw_nodes {
            dec_streams.push(self.build_queries(&mut tape, raw, n)?);
        }
        self.decoder_forward(&mut tape, &mut dec_streams, &memories)?;

        let mut preds = Vec::with_capacity(n);
        for (i, &d) in dec_streams.iter().enumerate() {
            let last = history.persons[i].frame(cfg.history - 1);
            preds.push(self.pose_decode(&mut tape, d, &last)?);
        }
        Ok((tape, preds))
    }

    /// Forecast the next K frames from the most recent T frames of history.
    pub fn predict(&self, history: &Scene) -> Result<Scene> {
        let cfg = &self.config;
        if history.len() < cfg.history {
            return Err(Error::Contract(format!(
                "history has {} frames but the model needs at least {}",
                history.len(),
                cfg.history
            )));
        }
        let window = history.segment(history.len() - cfg.history, history.len());
        let (tape, preds) = self.forward_scene(&window)?;
        let persons = preds
            .iter()
            .map(|&p| {
                PoseSequence::from_matrix(tape.value(p), cfg.joints, history.fps())
            })
            .collect::<Result<Vec<_>>>()?;
        Scene::new(persons)
    }

    /// Forecast an arbitrary horizon by repeatedly predicting K frames and
    /// rolling them into the history window; `⌈horizon/K⌉` passes run and
    /// the result is truncated to `horizon` frames.
    pub fn predict_recursive(&self, history: &Scene, horizon: usize) -> Result<Scene> {
        if horizon == 0 {
            return Err(Error::Contract("horizon must be at least 1".into()));
        }
        let k = self.config.horizon;
        let mut rolling = history.clone();
        let mut predicted: Option<Scene> = None;
        let passes = horizon.div_ceil(k);
        for _ in 0..passes {
            let step = self.predict(&rolling)?;
            rolling = append_scene(&rolling, &step)?;
            predicted = Some(match predicted {
                None => step,
                Some(prev) => append_scene(&prev, &step)?,
            });
        }
        let out = predicted.expect("at least one pass");
        Ok(out.segment(0, horizon))
    }

    /// Serialize config plus parameters.
    pub fn save<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(b"PGCKPT\n")?;
        let cfg = serde_json::to_vec(&self.config)
            .map_err(|e| Error::Parse(format!("config serialization failed: {e}")))?;
        w.write_all(&(cfg.len() as u32).to_le_bytes())?;
        w.write_all(&cfg)?;
        param_io::write_params(&self.store, w)
    }

    pub fn save_to_path(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        self.save(&mut f)
    }

    /// Load a checkpoint, validating config/shape agreement.
    pub fn load<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 7];
        r.read_exact(&mut magic)?;
        if &magic != b"PGCKPT\n" {
            return Err(Error::Parse("bad checkpoint magic".into()));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let mut cfg_buf = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut cfg_buf)?;
        let config: PGformerConfig = serde_json::from_slice(&cfg_buf)
            .map_err(|e| Error::Parse(format!("bad embedded config: {e}")))?;
        let mut model = Self::new(config, 0)?;
        let entries = param_io::read_params(r)?;
        param_io::load_into(&mut model.store, entries)?;
        Ok(model)
    }

    pub fn load_from_path(path: &Path) -> Result<Self> {
        let mut f = std::fs::File::open(path)?;
        Self::load(&mut f)
    }
}

/// Concatenate two scenes along time.
pub fn append_scene(a: &Scene, b: &Scene) -> Result<Scene> {
    if a.person_count() != b.person_count() {
        return Err(Error::Contract("person counts differ".into()));
    }
    let persons = a
        .persons
        .iter()
        .zip(&b.persons)
        .map(|(pa, pb)| {
            let mut data = pa.frames().data().to_vec();
            data.extend_from_slice(pb.frames().data());
            let t = pa.len() + pb.len();
            PoseSequence::new(
                Tensor::new(vec![t, pa.joint_count(), 3], data)?,
                pa.fps(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Scene::new(persons)
}

#[cfg(test)]
mod tests;
