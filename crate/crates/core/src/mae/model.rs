use crate::channel::{FeatureQuantizer, Transport};
use crate::codebook::{commitment_terms, nearest_indices, straight_through_lookup, Codebook};
use crate::error::{Error, Result};
use crate::mae::config::{HeadKind, ModelConfig};
use crate::mae::mask::{sample_mask, MaskPlan};
use crate::mae::patch::patch_index_map;
use crate::model::{Batch, ForwardOutput, TaskModel};
use crate::numerics::{Graph, ParamSet, RngStream, StreamLabel, Tensor, Var};

const POS_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
struct BlockLayout {
    ln1: (usize, usize),
    qkv: (usize, usize),
    proj: (usize, usize),
    ln2: (usize, usize),
    fc1: (usize, usize),
    fc2: (usize, usize),
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    patch: (usize, usize),
    pos: usize,
    blocks: Vec<BlockLayout>,
    final_ln: (usize, usize),
    mask_token: usize,
    head: [(usize, usize); 3],
}

/// Masked autoencoder: transformer encoder over the visible patches, an
/// optional codebook between encoder and decoder, and a three-layer
/// fully-connected decoder head.
#[derive(Clone, Debug, PartialEq)]
pub struct Mae {
    config: ModelConfig,
    head: HeadKind,
    params: ParamSet,
    codebook: Option<Codebook>,
    layout: Layout,
    /// Flat pixel offsets of every patch element, patch by patch.
    patch_map: Vec<usize>,
}

/// Intermediate nodes of one forward pass.
pub struct Encoded {
    pub z_e: Var,
    pub tokens: usize,
}

fn xavier(rng: &mut RngStream, fan_in: usize, fan_out: usize) -> Tensor {
    let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.normal() * std).collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("positive dimensions")
}

fn push_linear(
    params: &mut ParamSet,
    rng: &mut RngStream,
    name: &str,
    fan_in: usize,
    fan_out: usize,
) -> (usize, usize) {
    let w = params.push(format!("{name}.weight"), xavier(rng, fan_in, fan_out), true);
    let b = params.push(format!("{name}.bias"), Tensor::zeros(vec![fan_out]), true);
    (w, b)
}

fn push_norm(params: &mut ParamSet, name: &str, dim: usize) -> (usize, usize) {
    let g = params.push(format!("{name}.gain"), Tensor::filled(vec![dim], 1.0), true);
    let b = params.push(format!("{name}.bias"), Tensor::zeros(vec![dim]), true);
    (g, b)
}

fn push_head(params: &mut ParamSet, rng: &mut RngStream, cfg: &ModelConfig, head: HeadKind) -> [(usize, usize); 3] {
    let out = match head {
        HeadKind::Reconstruction => cfg.patch_dim(),
        HeadKind::Classification => cfg.num_classes,
    };
    let h = cfg.decoder_hidden;
    [
        push_linear(params, rng, "head.fc1", cfg.embed_dim, h),
        push_linear(params, rng, "head.fc2", h, h),
        push_linear(params, rng, "head.fc3", h, out),
    ]
}

impl Mae {
    pub fn new(config: ModelConfig, head: HeadKind, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = RngStream::new(seed, StreamLabel::Init);
        let d = config.embed_dim;
        let mut params = ParamSet::new();
        let patch = push_linear(&mut params, &mut rng, "patch_embed", config.patch_dim(), d);
        let pos_data = (0..config.total_patches() * d)
            .map(|_| rng.normal() * POS_STD)
            .collect();
        let pos = params.push(
            "pos_embed",
            Tensor::new(vec![config.total_patches(), d], pos_data)?,
            true,
        );
        let hidden = d * config.mlp_ratio;
        let blocks = (0..config.encoder_layers)
            .map(|l| BlockLayout {
                ln1: push_norm(&mut params, &format!("block{l}.ln1"), d),
                qkv: push_linear(&mut params, &mut rng, &format!("block{l}.qkv"), d, 3 * d),
                proj: push_linear(&mut params, &mut rng, &format!("block{l}.proj"), d, d),
                ln2: push_norm(&mut params, &format!("block{l}.ln2"), d),
                fc1: push_linear(&mut params, &mut rng, &format!("block{l}.fc1"), d, hidden),
                fc2: push_linear(&mut params, &mut rng, &format!("block{l}.fc2"), hidden, d),
            })
            .collect();
        let final_ln = push_norm(&mut params, "encoder.norm", d);
        let token_data = (0..d).map(|_| rng.normal() * POS_STD).collect();
        let mask_token = params.push("mask_token", Tensor::new(vec![1, d], token_data)?, true);
        let codebook = if config.uses_codebook() {
            Some(Codebook::init(config.codebook_size, d, config.beta, &mut rng)?)
        } else {
            None
        };
        let head_layout = push_head(&mut params, &mut rng, &config, head);
        let patch_map = patch_index_map(config.image_size, config.image_size, config.channels, config.patch_size)?;
        Ok(Self {
            config,
            head,
            params,
            codebook,
            layout: Layout {
                patch,
                pos,
                blocks,
                final_ln,
                mask_token,
                head: head_layout,
            },
            patch_map,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn head(&self) -> HeadKind {
        self.head
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn codebook(&self) -> Option<&Codebook> {
        self.codebook.as_ref()
    }

    pub fn codebook_mut(&mut self) -> Option<&mut Codebook> {
        self.codebook.as_mut()
    }

    pub(crate) fn set_codebook(&mut self, codebook: Option<Codebook>) {
        self.codebook = codebook;
    }

    /// Replaces the decoder head with a freshly initialized one of `kind`,
    /// keeping encoder, codebook and mask token.
    pub fn swap_head(&mut self, kind: HeadKind, seed: u64) {
        let keep = self.layout.head[0].0;
        self.params.truncate(keep);
        let mut rng = RngStream::substream(seed, StreamLabel::Init, 0x4EAD);
        self.layout.head = push_head(&mut self.params, &mut rng, &self.config, kind);
        self.head = kind;
    }

    pub fn numel(&self) -> usize {
        self.params.numel() + self.codebook.as_ref().map_or(0, |c| c.vectors().numel())
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        let n = self.config.total_patches();
        if batch.plans.len() != batch.len() {
            return Err(Error::contract(format!(
                "{} mask plans for {} samples",
                batch.plans.len(),
                batch.len()
            )));
        }
        let visible = batch.plans.first().map_or(0, |p| p.unmasked.len());
        for plan in batch.plans {
            if plan.total_patches != n || plan.unmasked.len() != visible || visible == 0 {
                return Err(Error::contract(format!(
                    "mask plan over {} patches with {} visible does not fit a {n}-patch batch with {visible} visible",
                    plan.total_patches,
                    plan.unmasked.len()
                )));
            }
        }
        if self.head == HeadKind::Classification {
            if let Some(&bad) = batch.labels.iter().find(|&&l| l >= self.config.num_classes) {
                return Err(Error::contract(format!(
                    "label {bad} out of range for {} classes",
                    self.config.num_classes
                )));
            }
        }
        Ok(())
    }

    fn linear(&self, g: &mut Graph, p: &[Var], x: Var, (w, b): (usize, usize)) -> Result<Var> {
        let y = g.matmul(x, p[w])?;
        g.add_row(y, p[b])
    }

    /// Patch embedding, positional embedding and the encoder blocks applied to
    /// the visible patches of every sample. Returns `z_e`, `[batch * visible, d]`.
    pub fn encode(&self, g: &mut Graph, p: &[Var], input: Var, plans: &[MaskPlan]) -> Result<Encoded> {
        let pix = self.config.pixels();
        let pd = self.config.patch_dim();
        let visible = plans.first().map_or(0, |pl| pl.unmasked.len());
        let mut index = Vec::with_capacity(plans.len() * visible * pd);
        let mut pos_rows = Vec::with_capacity(plans.len() * visible);
        for (b, plan) in plans.iter().enumerate() {
            for &patch in &plan.unmasked {
                index.extend(
                    self.patch_map[patch * pd..(patch + 1) * pd]
                        .iter()
                        .map(|&i| b * pix + i),
                );
                pos_rows.push(patch);
            }
        }
        let rows = pos_rows.len();
        let patches = g.gather(input, index, vec![rows, pd])?;
        let patches = if self.config.input_mean == 0.0 && self.config.input_std == 1.0 {
            patches
        } else {
            let scaled = g.scale(patches, 1.0 / self.config.input_std);
            let shift = g.constant(vec![pd], vec![-self.config.input_mean / self.config.input_std; pd])?;
            g.add_row(scaled, shift)?
        };
        let mut x = self.linear(g, p, patches, self.layout.patch)?;
        let pos = g.gather_rows(p[self.layout.pos], &pos_rows)?;
        x = g.add(x, pos)?;
        for blk in &self.layout.blocks {
            let h = g.layer_norm(x, p[blk.ln1.0], p[blk.ln1.1])?;
            let qkv = self.linear(g, p, h, blk.qkv)?;
            let att = g.attention(qkv, visible, self.config.attention_heads)?;
            let att = self.linear(g, p, att, blk.proj)?;
            x = g.add(x, att)?;
            let h = g.layer_norm(x, p[blk.ln2.0], p[blk.ln2.1])?;
            let h = self.linear(g, p, h, blk.fc1)?;
            let h = g.gelu(h);
            let h = self.linear(g, p, h, blk.fc2)?;
            x = g.add(x, h)?;
        }
        let z_e = g.layer_norm(x, p[self.layout.final_ln.0], p[self.layout.final_ln.1])?;
        Ok(Encoded { z_e, tokens: visible })
    }

    /// Scatters the received visible tokens back to their patch slots, fills
    /// masked slots with the shared mask token and adds positional embedding.
    pub fn assemble_decoder_input(&self, g: &mut Graph, p: &[Var], z_b: Var, plans: &[MaskPlan]) -> Result<Var> {
        let n = self.config.total_patches();
        let visible = plans.first().map_or(0, |pl| pl.unmasked.len());
        let filler = plans.len() * visible;
        let stacked = g.concat(&[z_b, p[self.layout.mask_token]], true)?;
        let mut rows = Vec::with_capacity(plans.len() * n);
        for (b, plan) in plans.iter().enumerate() {
            for patch in 0..n {
                rows.push(match plan.unmasked_rank(patch) {
                    Some(r) => b * visible + r,
                    None => filler,
                });
            }
        }
        let tokens = g.gather_rows(stacked, &rows)?;
        let tile: Vec<usize> = (0..plans.len()).flat_map(|_| 0..n).collect();
        let pos = g.gather_rows(p[self.layout.pos], &tile)?;
        g.add(tokens, pos)
    }

    /// Three fully-connected layers; classification pools over all tokens first.
    pub fn decode(&self, g: &mut Graph, p: &[Var], tokens: Var) -> Result<Var> {
        let mut x = match self.head {
            HeadKind::Classification => g.mean_row_groups(tokens, self.config.total_patches())?,
            HeadKind::Reconstruction => tokens,
        };
        for (i, &layer) in self.layout.head.iter().enumerate() {
            x = self.linear(g, p, x, layer)?;
            if i < 2 {
                x = g.gelu(x);
            }
        }
        Ok(x)
    }

    /// Task loss: cross-entropy for classification, MSE over every patch of
    /// the clean image for reconstruction. Reconstruction targets are in the
    /// standardized pixel space the encoder sees.
    pub fn task_loss(&self, g: &mut Graph, output: Var, batch: &Batch) -> Result<Var> {
        match self.head {
            HeadKind::Classification => g.cross_entropy(output, batch.labels),
            HeadKind::Reconstruction => {
                let pix = self.config.pixels();
                let (mean, std) = (self.config.input_mean, self.config.input_std);
                let target: Vec<f64> = batch
                    .images
                    .chunks(pix)
                    .flat_map(|img| self.patch_map.iter().map(move |&i| (img[i] - mean) / std))
                    .collect();
                let t = g.constant(g.shape(output).to_vec(), target)?;
                g.mse(output, t)
            }
        }
    }

    /// `z_e` for a batch of images, as plain values `[batch * visible, d]`.
    pub fn encode_values(&self, images: &[f64], plans: &[MaskPlan]) -> Result<Vec<f64>> {
        if images.len() != plans.len() * self.config.pixels() {
            return Err(Error::shape(
                "encode",
                format!("{} values for {} images", images.len(), plans.len()),
            ));
        }
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let x = g.constant(vec![plans.len(), self.config.pixels()], images.to_vec())?;
        let enc = self.encode(&mut g, &p, x, plans)?;
        Ok(g.value(enc.z_e).to_vec())
    }
}

impl TaskModel for Mae {
    fn sample_len(&self) -> usize {
        self.config.pixels()
    }

    fn tensors(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = self.params.tensors().collect();
        if let Some(cb) = &self.codebook {
            out.push(cb.vectors());
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self.params.tensors_mut().collect();
        if let Some(cb) = &mut self.codebook {
            out.push(cb.vectors_mut());
        }
        out
    }

    fn perturbable(&self) -> Vec<bool> {
        let mut out: Vec<bool> = self.params.iter().map(|p| p.perturbable).collect();
        if self.codebook.is_some() {
            out.push(false);
        }
        out
    }

    fn sample_plan(&self, rng: &mut RngStream) -> Result<MaskPlan> {
        sample_mask(self.config.total_patches(), self.config.masking_ratio, rng)
    }

    fn is_classifier(&self) -> bool {
        self.head == HeadKind::Classification
    }

    fn forward(
        &self,
        g: &mut Graph,
        params: &[Var],
        input: Var,
        batch: &Batch,
        transport: &mut Transport,
    ) -> Result<ForwardOutput> {
        self.check_batch(batch)?;
        let enc = self.encode(g, params, input, batch.plans)?;
        let (z_b, sent, received, aux) = match &self.codebook {
            Some(cb) => {
                let sent = nearest_indices(g, enc.z_e, cb)?;
                let received = transport.carry_indices(&sent, cb.size())?;
                let z_b = straight_through_lookup(g, enc.z_e, cb, &received)?;
                let cb_var = params[self.params.len()];
                let aux = commitment_terms(g, enc.z_e, cb_var, &sent, cb.beta())?;
                (z_b, sent, received, Some(aux))
            }
            None => {
                let values = g.value(enc.z_e).to_vec();
                let carried = transport.carry_features(&values, FeatureQuantizer::default())?;
                let z_b = g.straight_through(enc.z_e, carried)?;
                (z_b, Vec::new(), Vec::new(), None)
            }
        };
        let tokens = self.assemble_decoder_input(g, params, z_b, batch.plans)?;
        let output = self.decode(g, params, tokens)?;
        let task_loss = self.task_loss(g, output, batch)?;
        let total_loss = match aux {
            Some(aux) => g.add(task_loss, aux)?,
            None => task_loss,
        };
        Ok(ForwardOutput {
            output,
            task_loss,
            total_loss,
            sent,
            received,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{evaluate, input_gradient, param_gradients};
    use crate::numerics::grad_check_many;

    fn tiny() -> ModelConfig {
        ModelConfig {
            image_size: 4,
            channels: 1,
            patch_size: 2,
            embed_dim: 4,
            encoder_layers: 1,
            attention_heads: 2,
            mlp_ratio: 2,
            decoder_hidden: 5,
            num_classes: 3,
            masking_ratio: 0.5,
            codebook_size: 4,
            beta: 0.25,
            input_mean: 0.5,
            input_std: 0.25,
        }
    }

    fn images(n: usize, len: usize) -> Vec<f64> {
        (0..n * len).map(|i| ((i * 7919) % 97) as f64 / 97.0).collect()
    }

    fn plans(n: usize, cfg: &ModelConfig, seed: u64) -> Vec<MaskPlan> {
        let mut rng = RngStream::new(seed, StreamLabel::Mask);
        (0..n)
            .map(|_| sample_mask(cfg.total_patches(), cfg.masking_ratio, &mut rng).unwrap())
            .collect()
    }

    #[test]
    fn output_shapes_follow_the_head() {
        let cfg = ModelConfig::desk();
        let imgs = images(3, cfg.pixels());
        let pl = plans(3, &cfg, 1);
        let labels = [0, 1, 2];
        let batch = Batch {
            images: &imgs,
            labels: &labels,
            plans: &pl,
        };
        let clf = Mae::new(cfg.clone(), HeadKind::Classification, 3).unwrap();
        let ev = evaluate(&clf, &imgs, &batch, &mut Transport::Ideal).unwrap();
        assert_eq!(ev.output.len(), 3 * cfg.num_classes);
        assert_eq!(ev.sent.len(), 3 * cfg.unmasked_count());
        let rec = Mae::new(cfg.clone(), HeadKind::Reconstruction, 3).unwrap();
        let ev = evaluate(&rec, &imgs, &batch, &mut Transport::Ideal).unwrap();
        assert_eq!(ev.output.len(), 3 * cfg.total_patches() * cfg.patch_dim());
    }

    #[test]
    fn same_seed_same_weights() {
        let a = Mae::new(tiny(), HeadKind::Classification, 9).unwrap();
        let b = Mae::new(tiny(), HeadKind::Classification, 9).unwrap();
        let c = Mae::new(tiny(), HeadKind::Classification, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn masked_pixels_get_no_input_gradient() {
        let cfg = tiny();
        let m = Mae::new(cfg.clone(), HeadKind::Classification, 4).unwrap();
        let imgs = images(2, cfg.pixels());
        let pl = plans(2, &cfg, 5);
        let labels = [1, 2];
        let batch = Batch {
            images: &imgs,
            labels: &labels,
            plans: &pl,
        };
        let (_, grad) = input_gradient(&m, &imgs, &batch).unwrap();
        let map = patch_index_map(4, 4, 1, 2).unwrap();
        for (b, plan) in pl.iter().enumerate() {
            for &patch in &plan.masked {
                for &i in &map[patch * 4..patch * 4 + 4] {
                    assert_eq!(grad[b * 16 + i], 0.0);
                }
            }
        }
        assert!(grad.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn bad_labels_and_plans_are_contract_errors() {
        let cfg = tiny();
        let m = Mae::new(cfg.clone(), HeadKind::Classification, 4).unwrap();
        let imgs = images(1, cfg.pixels());
        let pl = plans(1, &cfg, 5);
        let batch = Batch {
            images: &imgs,
            labels: &[7],
            plans: &pl,
        };
        assert!(matches!(
            evaluate(&m, &imgs, &batch, &mut Transport::Ideal),
            Err(Error::Contract(_))
        ));
        let wrong = vec![MaskPlan::none(9)];
        let batch = Batch {
            images: &imgs,
            labels: &[0],
            plans: &wrong,
        };
        assert!(matches!(
            evaluate(&m, &imgs, &batch, &mut Transport::Ideal),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn swap_head_keeps_encoder() {
        let mut m = Mae::new(tiny(), HeadKind::Reconstruction, 4).unwrap();
        let before = m.params().by_name("block0.qkv.weight").unwrap().clone();
        let cb = m.codebook().unwrap().clone();
        m.swap_head(HeadKind::Classification, 8);
        assert_eq!(m.head(), HeadKind::Classification);
        assert_eq!(m.params().by_name("block0.qkv.weight").unwrap(), &before);
        assert_eq!(m.codebook().unwrap(), &cb);
        assert_eq!(m.params().by_name("head.fc3.weight").unwrap().tensor.shape(), &[5, 3]);
    }

    #[test]
    fn codebook_is_not_perturbable() {
        let m = Mae::new(tiny(), HeadKind::Classification, 4).unwrap();
        let flags = m.perturbable();
        assert_eq!(flags.len(), m.tensors().len());
        assert!(!flags[flags.len() - 1]);
        assert!(flags[..flags.len() - 1].iter().all(|&f| f));
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        // Without the codebook the forward map is smooth in every weight.
        let cfg = ModelConfig {
            codebook_size: 0,
            ..tiny()
        };
        let m = Mae::new(cfg.clone(), HeadKind::Classification, 21).unwrap();
        let imgs = images(2, cfg.pixels());
        let pl = plans(2, &cfg, 6);
        let labels = [0usize, 2];
        let points: Vec<Tensor> = m.tensors().into_iter().cloned().collect();
        let report = grad_check_many(
            |g, vars| {
                let batch = Batch {
                    images: &imgs,
                    labels: &labels,
                    plans: &pl,
                };
                let x = g.constant(vec![2, cfg.pixels()], imgs.clone())?;
                Ok(m.forward(g, vars, x, &batch, &mut Transport::Ideal)?.total_loss)
            },
            &points,
            1e-6,
            1e-4,
            Some(6),
        )
        .unwrap();
        assert!(report.passed, "max rel error {}", report.max_rel_error);
    }

    #[test]
    fn codebook_receives_gradient_only_through_its_loss_terms() {
        let cfg = tiny();
        let m = Mae::new(cfg.clone(), HeadKind::Classification, 4).unwrap();
        let imgs = images(2, cfg.pixels());
        let pl = plans(2, &cfg, 5);
        let labels = [0, 1];
        let batch = Batch {
            images: &imgs,
            labels: &labels,
            plans: &pl,
        };
        let out = param_gradients(&m, &imgs, &batch, &mut Transport::Ideal).unwrap();
        let cb_grad = out.grads.last().unwrap();
        let used: std::collections::BTreeSet<usize> = out.evaluation.sent.iter().copied().collect();
        let d = cfg.embed_dim;
        for j in 0..cfg.codebook_size {
            let row = &cb_grad[j * d..(j + 1) * d];
            assert_eq!(row.iter().any(|&v| v != 0.0), used.contains(&j), "vector {j}");
        }
    }
}
