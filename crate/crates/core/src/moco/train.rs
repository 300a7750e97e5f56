use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{
    cosine_lr, ema_update, masked_info_nce_with_grad, queue_info_nce_with_grad, ContrastiveConfig, Embedding,
    EncoderState, LrSchedule, MemoryQueue,
};
use crate::augment::{make_query_key_views, AugmentationConfig};
use crate::dataspec::{sample_temporal_pair_for, GroupId, Manifest};
use crate::image::{Image, ImageSource};
use crate::nn::{Batch, Sgd};
use crate::rng::{derive_indexed, derive_seed, sample_stream, seeded};
use crate::{Error, Result};

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
    pub queue_fill: usize,
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub state: EncoderState,
    pub log: Vec<EpochLog>,
    pub queue: MemoryQueue,
}

/// JSON lines, one object per epoch.
pub fn write_training_log(log: &[EpochLog], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for entry in log {
        serde_json::to_writer(&mut out, entry).expect("plain struct serializes");
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// Stateful pretraining driver. [`pretrain`] runs it to completion; the
/// step-level API is public for diagnostics and tests.
pub struct Pretrainer<'a> {
    manifest: &'a Manifest,
    source: &'a dyn ImageSource,
    cfg: ContrastiveConfig,
    aug: AugmentationConfig,
    seed: u64,
    pub state: EncoderState,
    pub queue: MemoryQueue,
    optimizer: Sgd,
    step: usize,
    total_steps: usize,
    samples: Vec<(GroupId, usize)>,
}

impl<'a> Pretrainer<'a> {
    pub fn new(
        manifest: &'a Manifest,
        source: &'a dyn ImageSource,
        cfg: &ContrastiveConfig,
        aug: &AugmentationConfig,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        aug.validate()?;
        let samples: Vec<(GroupId, usize)> = manifest
            .groups()
            .iter()
            .enumerate()
            .flat_map(|(g, grp)| (0..grp.len()).map(move |i| (GroupId(g as u32), i)))
            .collect();
        if samples.len() < cfg.batch_size {
            return Err(Error::Precondition(format!(
                "manifest holds {} records, fewer than one batch of {}",
                samples.len(),
                cfg.batch_size
            )));
        }
        let arch = cfg.encoder_arch(aug.output_size);
        let state = EncoderState::init(arch, &mut seeded(derive_seed(seed, "init")))?;
        let optimizer = Sgd::new(&state.query, cfg.optimizer_momentum as f32, cfg.weight_decay as f32);
        let queue = MemoryQueue::new(cfg.queue_size, cfg.embedding_dim)?;
        let total_steps = cfg.epochs * (samples.len() / cfg.batch_size);
        Ok(Self {
            manifest,
            source,
            cfg: cfg.clone(),
            aug: aug.clone(),
            seed,
            state,
            queue,
            optimizer,
            step: 0,
            total_steps,
            samples,
        })
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.samples.len() / self.cfg.batch_size
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn current_lr(&self) -> f64 {
        match self.cfg.schedule {
            LrSchedule::Cosine => cosine_lr(self.step, self.total_steps, self.cfg.base_lr),
            LrSchedule::Constant => self.cfg.base_lr,
        }
    }

    /// Builds the augmented query/key views for a batch of `(group, record)`
    /// queries. Sample `i` of the batch at global position `index + i` owns
    /// the rng stream `(seed, epoch, index + i)`.
    pub fn views(&self, queries: &[(GroupId, usize)], epoch: usize, index: usize) -> Result<(Vec<Image>, Vec<Image>)> {
        let seed = derive_seed(self.seed, "views");
        let mut vq = Vec::with_capacity(queries.len());
        let mut vk = Vec::with_capacity(queries.len());
        for (i, &(g, r)) in queries.iter().enumerate() {
            let mut rng = sample_stream(seed, epoch as u64, (index + i) as u64);
            let group = self.manifest.group(g);
            let pair = sample_temporal_pair_for(group, r, &mut rng)?;
            let (q, k) = make_query_key_views(pair, self.source, &self.aug, &mut rng)?;
            vq.push(q);
            vk.push(k);
        }
        Ok((vq, vk))
    }

    /// One optimization step on prepared views. Returns the mean loss.
    pub fn step_on_views(&mut self, views_q: Vec<Image>, views_k: Vec<Image>, groups: &[GroupId]) -> Result<f64> {
        let b = groups.len();
        let (mut all_q, mut all_k, mut all_g) = (views_q, views_k, groups.to_vec());
        if self.cfg.symmetric {
            all_q.extend(all_k[..b].iter().cloned());
            all_k.extend(all_q[..b].iter().cloned());
            all_g.extend_from_slice(groups);
        }
        let arch = self.state.arch.clone();
        let batch_q = Batch::from_images(&all_q)?;
        let batch_k = Batch::from_images(&all_k)?;
        let (q, raw, cache) = arch.embed_train(&self.state.query, &batch_q)?;
        // Key encoder: forward only, no gradient path.
        let k = arch.embed(&self.state.key, &batch_k)?;

        let d = arch.embedding_dim;
        let n = all_g.len();
        let mut d_q = vec![0.0f32; q.len()];
        let mut keys = Vec::with_capacity(n);
        let mut total = 0.0;
        for i in 0..n {
            let qe = Embedding::from_f32(&q[i * d..(i + 1) * d])?;
            let ke = Embedding::from_f32(&k[i * d..(i + 1) * d])?;
            let (loss, grad) = if self.cfg.mask_false_negatives {
                masked_info_nce_with_grad(&qe, all_g[i], &ke, &self.queue, self.cfg.temperature)?
            } else {
                queue_info_nce_with_grad(&qe, &ke, &self.queue, self.cfg.temperature)?
            };
            total += loss;
            for (o, g) in d_q[i * d..(i + 1) * d].iter_mut().zip(&grad) {
                *o = (*g / n as f64) as f32;
            }
            keys.push(ke);
        }
        let mut grads = self.state.query.zeros_like();
        arch.backward_embed(&self.state.query, &cache, &raw, &d_q, &mut grads)?;
        let lr = self.current_lr();
        self.optimizer.step(&mut self.state.query, &grads, lr as f32)?;
        ema_update(&mut self.state, self.cfg.ema_momentum)?;
        keys.truncate(b);
        self.queue.enqueue(&keys, groups)?;
        self.step += 1;
        Ok(total / n as f64)
    }

    /// One pass over every record (as query) in a seed-determined order;
    /// the trailing partial batch is dropped.
    pub fn run_epoch(&mut self, epoch: usize) -> Result<EpochLog> {
        let mut order = self.samples.clone();
        order.shuffle(&mut seeded(derive_indexed(derive_seed(self.seed, "order"), &[epoch as u64])));
        let lr = self.current_lr();
        let bs = self.cfg.batch_size;
        let mut losses = 0.0;
        let steps = self.steps_per_epoch();
        for s in 0..steps {
            let chunk = &order[s * bs..(s + 1) * bs];
            let ctx = |e: Error| e.context(format!("epoch {epoch}, step {s}"));
            let (vq, vk) = self.views(chunk, epoch, s * bs).map_err(ctx)?;
            let groups: Vec<GroupId> = chunk.iter().map(|(g, _)| *g).collect();
            losses += self.step_on_views(vq, vk, &groups).map_err(ctx)?;
        }
        Ok(EpochLog {
            epoch,
            mean_loss: losses / steps as f64,
            lr,
            queue_fill: self.queue.fill_count(),
        })
    }

    pub fn into_state(self) -> (EncoderState, MemoryQueue) {
        (self.state, self.queue)
    }
}

/// Full pretraining run; `on_epoch` sees every log entry as it is produced.
pub fn pretrain(
    manifest: &Manifest,
    source: &dyn ImageSource,
    cfg: &ContrastiveConfig,
    aug: &AugmentationConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<PretrainOutcome> {
    let mut trainer = Pretrainer::new(manifest, source, cfg, aug, seed)?;
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let entry = trainer.run_epoch(epoch)?;
        on_epoch(&entry);
        log.push(entry);
    }
    let (state, queue) = trainer.into_state();
    Ok(PretrainOutcome { state, log, queue })
}
