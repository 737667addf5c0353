//! The two-level network: a causal transformer that emits one latent per
//! upcoming note, a two-stage enhancement module that mixes the sequence
//! anchor latent into the next-note latent, and a bidirectional denoiser
//! that maps a partially masked attribute row plus that latent to
//! per-attribute logits.
//!
//! All forwards build nodes into a caller-owned [`Graph`], so the same code
//! path serves training (with backward) and inference (values only).

use cadenza_tensor::graph::{Graph, TensorId};
use cadenza_tensor::init;
use cadenza_tensor::nn::{LayerNorm, Linear, MultiHeadAttention};
use cadenza_tensor::store::{ParamId, ParamStore};
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::config::ModelConfig;
use crate::ModelError;

/// Summed attribute embeddings plus learned absolute position embeddings.
struct NoteEmbedder {
    attr_tables: Vec<ParamId>,
    pos_table: ParamId,
}

/// Pre-norm causal transformer block.
struct GenBlock {
    ln_attn: LayerNorm,
    attn: MultiHeadAttention,
    ln_ff: LayerNorm,
    ff_in: Linear,
    ff_out: Linear,
}

impl GenBlock {
    fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d: usize, heads: usize) -> Self {
        GenBlock {
            ln_attn: LayerNorm::new(store, &format!("{name}.ln_attn"), d),
            attn: MultiHeadAttention::new(store, rng, &format!("{name}.attn"), d, heads),
            ln_ff: LayerNorm::new(store, &format!("{name}.ln_ff"), d),
            ff_in: Linear::new(store, rng, &format!("{name}.ff_in"), d, 4 * d, true),
            ff_out: Linear::new(store, rng, &format!("{name}.ff_out"), 4 * d, d, true),
        }
    }

    fn apply(&self, g: &mut Graph, store: &ParamStore, x: TensorId, causal: bool) -> TensorId {
        let nx = self.ln_attn.apply(g, store, x);
        let a = self.attn.apply(g, store, nx, nx, nx, causal);
        let x = g.add(x, a);
        let nx = self.ln_ff.apply(g, store, x);
        let h = self.ff_in.apply(g, store, nx);
        let h = g.gelu(h);
        let f = self.ff_out.apply(g, store, h);
        g.add(x, f)
    }
}

/// Denoiser block: bidirectional self-attention over the K attribute
/// positions, a conditioning pathway from the note latent, and a
/// feed-forward stage.
///
/// Cross-attention against a single key degenerates: the softmax over one
/// key is identically 1, so query and key projections never influence the
/// output (and would never receive gradient). The pathway is therefore
/// stored in its collapsed form, value projection then output projection of
/// the latent, broadcast-added to every position.
struct DecBlock {
    ln_attn: LayerNorm,
    attn: MultiHeadAttention,
    cond_ln: LayerNorm,
    cond_v: Linear,
    cond_o: Linear,
    ln_ff: LayerNorm,
    ff_in: Linear,
    ff_out: Linear,
}

impl DecBlock {
    fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d: usize, heads: usize) -> Self {
        DecBlock {
            ln_attn: LayerNorm::new(store, &format!("{name}.ln_attn"), d),
            attn: MultiHeadAttention::new(store, rng, &format!("{name}.attn"), d, heads),
            cond_ln: LayerNorm::new(store, &format!("{name}.cond_ln"), d),
            cond_v: Linear::new(store, rng, &format!("{name}.cond_v"), d, d, false),
            cond_o: Linear::new(store, rng, &format!("{name}.cond_o"), d, d, false),
            ln_ff: LayerNorm::new(store, &format!("{name}.ln_ff"), d),
            ff_in: Linear::new(store, rng, &format!("{name}.ff_in"), d, 4 * d, true),
            ff_out: Linear::new(store, rng, &format!("{name}.ff_out"), 4 * d, d, true),
        }
    }

    fn apply(&self, g: &mut Graph, store: &ParamStore, x: TensorId, zhat: TensorId) -> TensorId {
        let nx = self.ln_attn.apply(g, store, x);
        let a = self.attn.apply(g, store, nx, nx, nx, false);
        let x = g.add(x, a);
        let nz = self.cond_ln.apply(g, store, zhat);
        let cv = self.cond_v.apply(g, store, nz);
        let c = self.cond_o.apply(g, store, cv);
        let x = g.add_bias(x, c);
        let nx = self.ln_ff.apply(g, store, x);
        let h = self.ff_in.apply(g, store, nx);
        let h = g.gelu(h);
        let f = self.ff_out.apply(g, store, h);
        g.add(x, f)
    }
}

/// Two-stage latent enhancement: single-position self-attention over the
/// next-note latent, then cross-attention against the anchor latent, each
/// wrapped in a residual and layer norm.
///
/// Both attention stages run over exactly one key, so they are stored
/// collapsed (value projection then output projection); see [`DecBlock`].
struct Ciem {
    sa_v: Linear,
    sa_o: Linear,
    ln_sa: LayerNorm,
    ca_v: Linear,
    ca_o: Linear,
    ln_ca: LayerNorm,
}

/// The full model: parameters plus the wiring to run each component.
pub struct SeqModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    embedder: NoteEmbedder,
    gen_blocks: Vec<GenBlock>,
    gen_ln_f: LayerNorm,
    ciem: Ciem,
    attr_pos: ParamId,
    dec_blocks: Vec<DecBlock>,
    dec_ln_f: LayerNorm,
    out_heads: Vec<Linear>,
    cond_table: Option<ParamId>,
}

/// Generator output: final latents and the mid-stack hidden states pooled
/// by the contrastive loss. Both are (rows, d).
pub struct GeneratorOut {
    pub latents: TensorId,
    pub pooled_source: TensorId,
}

impl SeqModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new(config.precision.as_precision());
        let d = config.d;
        let k = config.k();

        let attr_tables = (0..k)
            .map(|a| {
                let w = config.table_width(a);
                store.add(&format!("embed.attr{a}"), w, d, init::embedding_normal(&mut rng, w, d))
            })
            .collect();
        let pos_table = store.add(
            "embed.pos",
            config.m_max,
            d,
            init::embedding_normal(&mut rng, config.m_max, d),
        );
        let embedder = NoteEmbedder { attr_tables, pos_table };

        let gen_blocks = (0..config.l_gen)
            .map(|i| GenBlock::new(&mut store, &mut rng, &format!("gen.b{i}"), d, config.heads))
            .collect();
        let gen_ln_f = LayerNorm::new(&mut store, "gen.ln_f", d);

        let ciem = Ciem {
            sa_v: Linear::new(&mut store, &mut rng, "ciem.sa_v", d, d, false),
            sa_o: Linear::new(&mut store, &mut rng, "ciem.sa_o", d, d, false),
            ln_sa: LayerNorm::new(&mut store, "ciem.ln_sa", d),
            ca_v: Linear::new(&mut store, &mut rng, "ciem.ca_v", d, d, false),
            ca_o: Linear::new(&mut store, &mut rng, "ciem.ca_o", d, d, false),
            ln_ca: LayerNorm::new(&mut store, "ciem.ln_ca", d),
        };

        let attr_pos = store.add("dec.attr_pos", k, d, init::embedding_normal(&mut rng, k, d));
        let dec_blocks = (0..config.l_dec)
            .map(|i| DecBlock::new(&mut store, &mut rng, &format!("dec.b{i}"), d, config.heads))
            .collect();
        let dec_ln_f = LayerNorm::new(&mut store, "dec.ln_f", d);
        let out_heads = (0..k)
            .map(|a| {
                Linear::new(&mut store, &mut rng, &format!("dec.head{a}"), d, config.table_width(a), true)
            })
            .collect();

        let cond_table = (config.cond_vocab > 0).then(|| {
            store.add(
                "cond.table",
                config.cond_vocab,
                d,
                init::embedding_normal(&mut rng, config.cond_vocab, d),
            )
        });

        Ok(SeqModel {
            config,
            store,
            embedder,
            gen_blocks,
            gen_ln_f,
            ciem,
            attr_pos,
            dec_blocks,
            dec_ln_f,
            out_heads,
            cond_table,
        })
    }

    /// The all-zero note that anchors every sequence at position 0.
    pub fn anchor_note(&self) -> Vec<usize> {
        vec![0; self.config.k()]
    }

    fn check_note(&self, note: &[usize], allow_mask: bool) -> Result<(), ModelError> {
        let k = self.config.k();
        if note.len() != k {
            return Err(ModelError::Vocab(format!(
                "note has {} attributes, expected {k}",
                note.len()
            )));
        }
        for (a, &idx) in note.iter().enumerate() {
            let limit = if allow_mask {
                // The denoiser sees mask tokens but never pad.
                self.config.mask_index(a) + 1
            } else {
                self.config.table_width(a)
            };
            if idx >= limit || (!allow_mask && idx == self.config.mask_index(a)) {
                return Err(ModelError::Vocab(format!(
                    "attribute {a}: index {idx} invalid (content size {}, mask allowed: {allow_mask})",
                    self.config.attr_sizes[a]
                )));
            }
        }
        Ok(())
    }

    /// Embed an optional condition prefix and a run of notes into one
    /// (prefix + notes, d) matrix. Notes may carry pad indices (trailing
    /// padding) but never mask indices.
    pub fn embed_sequence(
        &self,
        g: &mut Graph,
        prefix: &[usize],
        notes: &[Vec<usize>],
    ) -> Result<TensorId, ModelError> {
        let total = prefix.len() + notes.len();
        if total == 0 {
            return Err(ModelError::Vocab("cannot embed an empty sequence".into()));
        }
        if total > self.config.m_max {
            return Err(ModelError::Overlength { len: total, max: self.config.m_max });
        }
        for note in notes {
            self.check_note(note, false)?;
        }
        let p = prefix.len();

        let note_rows = if notes.is_empty() {
            None
        } else {
            let mut acc: Option<TensorId> = None;
            for (a, &table) in self.embedder.attr_tables.iter().enumerate() {
                let tb = g.param(&self.store, table);
                let idx: Vec<usize> = notes.iter().map(|n| n[a]).collect();
                let e = g.embedding(tb, idx);
                acc = Some(match acc {
                    Some(prev) => g.add(prev, e),
                    None => e,
                });
            }
            let pos = g.param(&self.store, self.embedder.pos_table);
            let pe = g.embedding(pos, (p..p + notes.len()).collect());
            Some(g.add(acc.expect("at least one attribute"), pe))
        };

        let prefix_rows = if prefix.is_empty() {
            None
        } else {
            let table = self.cond_table.ok_or_else(|| {
                ModelError::Vocab("condition prefix given but cond_vocab is 0".into())
            })?;
            for &c in prefix {
                if c >= self.config.cond_vocab {
                    return Err(ModelError::Vocab(format!(
                        "condition token {c} out of range {}",
                        self.config.cond_vocab
                    )));
                }
            }
            let tb = g.param(&self.store, table);
            let e = g.embedding(tb, prefix.to_vec());
            let pos = g.param(&self.store, self.embedder.pos_table);
            let pe = g.embedding(pos, (0..p).collect());
            Some(g.add(e, pe))
        };

        Ok(match (prefix_rows, note_rows) {
            (Some(a), Some(b)) => g.concat_rows(&[a, b]),
            (Some(a), None) => a,
            (None, Some(b)) => b,
            (None, None) => unreachable!("total > 0"),
        })
    }

    /// Run the causal stack. Row `j` of `latents` is the latent for the
    /// note after input row `j`; `pooled_source` is the hidden state after
    /// the configured mid-stack layer.
    pub fn generator_forward(&self, g: &mut Graph, x: TensorId) -> GeneratorOut {
        let mut x = x;
        let mut pooled = None;
        for (i, block) in self.gen_blocks.iter().enumerate() {
            x = block.apply(g, &self.store, x, true);
            if i == self.config.mlsdes() {
                pooled = Some(x);
            }
        }
        let latents = self.gen_ln_f.apply(g, &self.store, x);
        GeneratorOut { latents, pooled_source: pooled.expect("mlsdes layer exists") }
    }

    /// Mix the anchor latent into the next-note latent. Both inputs and the
    /// output are single rows.
    pub fn ciem_enhance(&self, g: &mut Graph, z_next: TensorId, z_first: TensorId) -> TensorId {
        let c = &self.ciem;
        let sv = c.sa_v.apply(g, &self.store, z_next);
        let sa = c.sa_o.apply(g, &self.store, sv);
        let u = g.add(z_next, sa);
        let u = c.ln_sa.apply(g, &self.store, u);
        let cv = c.ca_v.apply(g, &self.store, z_first);
        let ca = c.ca_o.apply(g, &self.store, cv);
        let v = g.add(u, ca);
        c.ln_ca.apply(g, &self.store, v)
    }

    /// Denoise one attribute row at diffusion time `t`. `indices` may hold
    /// mask indices; returns one (1, table width) logit row per attribute.
    pub fn denoiser_forward(
        &self,
        g: &mut Graph,
        indices: &[usize],
        zhat: TensorId,
        t: f64,
    ) -> Result<Vec<TensorId>, ModelError> {
        if !(0.0..=1.0).contains(&t) {
            return Err(ModelError::Time(t));
        }
        self.check_note(indices, true)?;
        let k = self.config.k();

        let rows: Vec<TensorId> = indices
            .iter()
            .enumerate()
            .map(|(a, &idx)| {
                let tb = g.param(&self.store, self.embedder.attr_tables[a]);
                g.embedding(tb, vec![idx])
            })
            .collect();
        let mut x = g.concat_rows(&rows);
        let ap = g.param(&self.store, self.attr_pos);
        let ape = g.embedding(ap, (0..k).collect());
        x = g.add(x, ape);
        let trow = g.input_row(sinusoidal_time_row(t, self.config.d));
        x = g.add_bias(x, trow);

        for block in &self.dec_blocks {
            x = block.apply(g, &self.store, x, zhat);
        }
        let xf = self.dec_ln_f.apply(g, &self.store, x);

        Ok(self
            .out_heads
            .iter()
            .enumerate()
            .map(|(a, head)| {
                let row = g.slice_rows(xf, a, 1);
                head.apply(g, &self.store, row)
            })
            .collect())
    }

    /// Value-level inference helper: the enhanced latent conditioning the
    /// next note after `notes` (which must start with the anchor).
    pub fn next_latent(&self, prefix: &[usize], notes: &[Vec<usize>]) -> Result<Vec<f64>, ModelError> {
        let mut g = Graph::new(self.store.precision());
        let x = self.embed_sequence(&mut g, prefix, notes)?;
        let out = self.generator_forward(&mut g, x);
        let p = prefix.len();
        let z_first = g.slice_rows(out.latents, p, 1);
        let last = p + notes.len() - 1;
        let z_next = g.slice_rows(out.latents, last, 1);
        let zhat = self.ciem_enhance(&mut g, z_next, z_first);
        Ok(g.value(zhat).to_vec())
    }

    /// Value-level inference helper: per-attribute logits for one masked
    /// row under a fixed conditioning latent.
    pub fn denoise_logits(
        &self,
        indices: &[usize],
        zhat: &[f64],
        t: f64,
    ) -> Result<Vec<Vec<f64>>, ModelError> {
        if zhat.len() != self.config.d {
            return Err(ModelError::Vocab(format!(
                "latent width {} does not match d {}",
                zhat.len(),
                self.config.d
            )));
        }
        let mut g = Graph::new(self.store.precision());
        let z = g.input_row(zhat.to_vec());
        let logits = self.denoiser_forward(&mut g, indices, z, t)?;
        Ok(logits.into_iter().map(|id| g.value(id).to_vec()).collect())
    }
}

/// Fixed sinusoidal features of the diffusion time, scaled into the range
/// transformers usually see for step embeddings.
pub fn sinusoidal_time_row(t: f64, d: usize) -> Vec<f64> {
    let half = d.div_ceil(2);
    (0..d)
        .map(|i| {
            let (j, is_sin) = if i < half { (i, true) } else { (i - half, false) };
            let w = 10000f64.powf(-(j as f64) / half as f64);
            let x = t * 1000.0 * w;
            if is_sin { x.sin() } else { x.cos() }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use cadenza_tensor::Precision;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            d: 16,
            l_gen: 2,
            l_dec: 1,
            heads: 2,
            m_max: 8,
            mlsdes_layer: Some(0),
            precision: crate::config::PrecisionChoice::F64,
            attr_sizes: vec![3, 5, 4],
            ..ModelConfig::default()
        }
    }

    fn tiny_model() -> SeqModel {
        SeqModel::new(tiny_config(), 11).unwrap()
    }

    #[test]
    fn anchor_embeds_to_one_latent() {
        let m = tiny_model();
        let mut g = Graph::new(Precision::F64);
        let x = m.embed_sequence(&mut g, &[], &[m.anchor_note()]).unwrap();
        assert_eq!(g.shape(x), (1, 16));
        let out = m.generator_forward(&mut g, x);
        assert_eq!(g.shape(out.latents), (1, 16));
        assert!(g.value(out.latents).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn embedding_is_linear_in_single_attribute_change() {
        let m = tiny_model();
        let mut g = Graph::new(Precision::F64);
        let a = m.embed_sequence(&mut g, &[], &[vec![0, 1, 2]]).unwrap();
        let b = m.embed_sequence(&mut g, &[], &[vec![0, 3, 2]]).unwrap();
        let table = m.store.values(m.store.id_of("embed.attr1").unwrap());
        let d = m.config.d;
        for j in 0..d {
            let want = table[d + j] - table[3 * d + j];
            let got = g.value(a)[j] - g.value(b)[j];
            assert!((want - got).abs() < 1e-12, "col {j}: {want} vs {got}");
        }
    }

    #[test]
    fn overlong_and_invalid_sequences_error() {
        let m = tiny_model();
        let mut g = Graph::new(Precision::F64);
        let long: Vec<Vec<usize>> = (0..9).map(|_| m.anchor_note()).collect();
        assert!(matches!(
            m.embed_sequence(&mut g, &[], &long),
            Err(ModelError::Overlength { len: 9, max: 8 })
        ));
        assert!(m.embed_sequence(&mut g, &[], &[]).is_err());
        // Mask index (3 for attribute 0) is rejected outside the denoiser.
        assert!(m.embed_sequence(&mut g, &[], &[vec![3, 0, 0]]).is_err());
        // Pad index (4 for attribute 0) is allowed.
        assert!(m.embed_sequence(&mut g, &[], &[vec![4, 0, 0]]).is_ok());
    }

    #[test]
    fn condition_prefix_extends_rows() {
        let cfg = ModelConfig { cond_vocab: 4, ..tiny_config() };
        let m = SeqModel::new(cfg, 3).unwrap();
        let mut g = Graph::new(Precision::F64);
        let x = m.embed_sequence(&mut g, &[1, 3], &[m.anchor_note()]).unwrap();
        assert_eq!(g.shape(x), (3, 16));
        assert!(m.embed_sequence(&mut g, &[4], &[m.anchor_note()]).is_err());
        // Prefixes require a condition table.
        let bare = tiny_model();
        assert!(bare.embed_sequence(&mut g, &[0], &[bare.anchor_note()]).is_err());
    }

    #[test]
    fn ciem_output_depends_on_both_latents() {
        let m = tiny_model();
        let mut g = Graph::new(Precision::F64);
        let a = g.input_row((0..16).map(|i| (i as f64 * 0.7).sin()).collect());
        let b = g.input_row((0..16).map(|i| (i as f64 * 0.3).cos()).collect());
        let c = g.input_row((0..16).map(|i| (i as f64 * 1.9).sin()).collect());
        let base = m.ciem_enhance(&mut g, a, b);
        assert_eq!(g.shape(base), (1, 16));
        let next_changed = m.ciem_enhance(&mut g, c, b);
        let first_changed = m.ciem_enhance(&mut g, a, c);
        assert_ne!(g.value(base), g.value(next_changed));
        assert_ne!(g.value(base), g.value(first_changed));
    }

    #[test]
    fn collapsed_attention_matches_single_key_multi_head() {
        // The stored value-then-output form must equal full attention with
        // one key, for any query/key projections.
        let m = tiny_model();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new(Precision::F64);
        let mha = MultiHeadAttention::new(&mut store, &mut rng, "probe", 16, 2);
        store.set_values(mha.wv, m.store.values(m.store.id_of("ciem.sa_v.w").unwrap()).to_vec());
        store.set_values(mha.wo, m.store.values(m.store.id_of("ciem.sa_o.w").unwrap()).to_vec());
        let mut g = Graph::new(Precision::F64);
        let x = g.input_row((0..16).map(|i| (i as f64 * 0.11).cos()).collect());
        let full = mha.apply(&mut g, &store, x, x, x, false);
        let sv = g.param(&store, mha.wv);
        let so = g.param(&store, mha.wo);
        let collapsed = {
            let v = g.matmul(x, sv);
            g.matmul(v, so)
        };
        assert_eq!(g.value(full), g.value(collapsed));
    }

    #[test]
    fn denoiser_emits_full_width_finite_logits() {
        let m = tiny_model();
        let mut g = Graph::new(Precision::F64);
        let zhat = g.input_row(vec![0.25; 16]);
        let masked: Vec<usize> = (0..3).map(|a| m.config.mask_index(a)).collect();
        let logits = m.denoiser_forward(&mut g, &masked, zhat, 1.0).unwrap();
        assert_eq!(logits.len(), 3);
        for (a, id) in logits.iter().enumerate() {
            assert_eq!(g.shape(*id), (1, m.config.table_width(a)));
            assert!(g.value(*id).iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn denoiser_rejects_bad_time_and_pad_tokens() {
        let m = tiny_model();
        let mut g = Graph::new(Precision::F64);
        let zhat = g.input_row(vec![0.0; 16]);
        let masked: Vec<usize> = (0..3).map(|a| m.config.mask_index(a)).collect();
        assert!(matches!(
            m.denoiser_forward(&mut g, &masked, zhat, 1.5),
            Err(ModelError::Time(_))
        ));
        assert!(matches!(
            m.denoiser_forward(&mut g, &masked, zhat, -0.1),
            Err(ModelError::Time(_))
        ));
        let with_pad = vec![m.config.pad_index(0), 0, 0];
        assert!(m.denoiser_forward(&mut g, &with_pad, zhat, 0.5).is_err());
    }

    #[test]
    fn time_row_is_bounded_and_time_sensitive() {
        let row = sinusoidal_time_row(0.5, 17);
        assert_eq!(row.len(), 17);
        assert!(row.iter().all(|v| v.abs() <= 1.0));
        assert_ne!(sinusoidal_time_row(0.25, 16), sinusoidal_time_row(0.75, 16));
    }

    #[test]
    fn value_level_helpers_match_contract_shapes() {
        let m = tiny_model();
        let zhat = m.next_latent(&[], &[m.anchor_note()]).unwrap();
        assert_eq!(zhat.len(), 16);
        let masked: Vec<usize> = (0..3).map(|a| m.config.mask_index(a)).collect();
        let logits = m.denoise_logits(&masked, &zhat, 1.0).unwrap();
        assert_eq!(logits.len(), 3);
        assert_eq!(logits[1].len(), m.config.table_width(1));
        assert!(m.denoise_logits(&masked, &zhat[1..], 1.0).is_err());
    }
}
