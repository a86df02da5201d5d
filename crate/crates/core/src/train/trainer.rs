use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::config::{DataSpec, RunConfig, TrainConfig};
use super::optim::{poly_lr, Sgd};
use super::synth::{generate_synthetic, load_dataset, Case, SynthSpec};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::loss::{deep_supervision_loss, LabelVolume};
use crate::model::{ModelConfig, PhTrans};
use crate::params::ParamSet;
use crate::tensor::Tensor;

/// Independent seed for one consumer of the run seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

const DATA_STREAM: u64 = 1;
const SAMPLER_STREAM: u64 = 2;

/// Training dataset described by `spec` for `model`.
pub fn load_data(model: &ModelConfig, spec: &DataSpec, seed: u64) -> Result<Vec<Case>> {
    match spec {
        DataSpec::Synthetic { cases, dims, noise, spacing } => generate_synthetic(
            derive_seed(seed, DATA_STREAM),
            &SynthSpec {
                cases: *cases,
                dims: dims.unwrap_or(model.patch_size),
                num_classes: model.num_classes,
                in_channels: model.in_channels,
                noise: *noise,
                spacing: *spacing,
            },
        ),
        DataSpec::Directory { path } => load_dataset(path),
    }
}

/// Deterministic SGD loop over random patches.
pub struct Trainer {
    model: ModelConfig,
    train: TrainConfig,
    seed: u64,
    net: PhTrans,
    params: ParamSet<f32>,
    opt: Sgd,
    data: Vec<Case>,
    sampler: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    iteration: usize,
    history: Vec<f64>,
}

impl Trainer {
    pub fn new(run: &RunConfig, seed: u64) -> Result<Self> {
        run.check()?;
        let data = load_data(&run.model, &run.train.data, seed)?;
        Self::with_data(&run.model, &run.train, seed, data)
    }

    pub fn with_data(model: &ModelConfig, train: &TrainConfig, seed: u64, data: Vec<Case>) -> Result<Self> {
        let (net, params) = PhTrans::build::<f32>(model, seed)?;
        if data.is_empty() {
            return Err(Error::invalid("trainer", "empty dataset"));
        }
        for c in &data {
            if c.image.dims[0] != model.in_channels {
                return Err(Error::shape("trainer", format!("{}: {} channels, model expects {}", c.id, c.image.dims[0], model.in_channels)));
            }
            if (0..3).any(|a| c.spatial()[a] < model.patch_size[a]) {
                return Err(Error::shape("trainer", format!("{}: volume {:?} smaller than patch {:?}", c.id, c.spatial(), model.patch_size)));
            }
            c.label_volume(model.num_classes)?;
        }
        let order = (0..data.len()).collect();
        Ok(Self {
            model: model.clone(),
            train: train.clone(),
            seed,
            net,
            params,
            opt: Sgd::new(train.momentum, train.nesterov, train.weight_decay),
            sampler: ChaCha8Rng::seed_from_u64(derive_seed(seed, SAMPLER_STREAM)),
            cursor: data.len(),
            data,
            order,
            iteration: 0,
            history: Vec::new(),
        })
    }

    pub fn net(&self) -> &PhTrans {
        &self.net
    }

    pub fn params(&self) -> &ParamSet<f32> {
        &self.params
    }

    pub fn data(&self) -> &[Case] {
        &self.data
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn loss_history(&self) -> &[f64] {
        &self.history
    }

    /// `batch_size` random patches, visiting cases in reshuffled epochs.
    pub fn next_batch(&mut self) -> Result<(Tensor<f32>, LabelVolume)> {
        let b = self.train.batch_size;
        let ch = self.model.in_channels;
        let [pd, ph, pw] = self.model.patch_size;
        let pv = pd * ph * pw;
        let mut image = Vec::with_capacity(b * ch * pv);
        let mut labels = Vec::with_capacity(b * pv);
        for _ in 0..b {
            if self.cursor == self.order.len() {
                self.order.shuffle(&mut self.sampler);
                self.cursor = 0;
            }
            let case = &self.data[self.order[self.cursor]];
            self.cursor += 1;
            let [d, h, w] = case.spatial();
            let off = [
                self.sampler.random_range(0..=d - pd),
                self.sampler.random_range(0..=h - ph),
                self.sampler.random_range(0..=w - pw),
            ];
            for c in 0..=ch {
                for z in 0..pd {
                    for y in 0..ph {
                        let row = ((z + off[0]) * h + y + off[1]) * w + off[2];
                        if c < ch {
                            let base = c * d * h * w + row;
                            image.extend_from_slice(&case.image.data[base..base + pw]);
                        } else {
                            labels.extend_from_slice(&case.labels[row..row + pw]);
                        }
                    }
                }
            }
        }
        Ok((
            Tensor::new(vec![b, ch, pd, ph, pw], image)?,
            LabelVolume::new([b, pd, ph, pw], labels, self.model.num_classes)?,
        ))
    }

    pub fn learning_rate(&self) -> f64 {
        poly_lr(self.train.learning_rate, self.iteration, self.train.iterations, self.train.lr_power)
    }

    /// One optimizer step; returns the loss before the update.
    pub fn step(&mut self) -> Result<f64> {
        let (x, y) = self.next_batch()?;
        let lr = self.learning_rate();
        let tape = Tape::new();
        let bound = self.params.bind(&tape);
        let outs = self.net.forward(&bound, &Var::constant(x))?;
        let loss = deep_supervision_loss(&outs, &y, &self.train.loss)?;
        drop(outs);
        let value = loss.value().item() as f64;
        let mut grads = tape.backward(&loss)?;
        let g: Vec<Option<Tensor<f32>>> = bound.vars().iter().map(|v| grads.take(v)).collect();
        drop(bound);
        for ((name, _), gi) in self.params.iter().zip(&g) {
            if let Some(index) = gi.as_ref().and_then(|t| t.first_non_finite()) {
                return Err(Error::NonFinite { op: format!("gradient of {name}"), index });
            }
        }
        self.opt.step(&mut self.params, &g, lr)?;
        for (name, t) in self.params.iter() {
            if let Some(index) = t.first_non_finite() {
                return Err(Error::NonFinite { op: format!("parameter {name} after step {}", self.iteration + 1), index });
            }
        }
        self.iteration += 1;
        self.history.push(value);
        Ok(value)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            train: Some(self.train.clone()),
            seed: self.seed,
            iteration: self.iteration as u64,
            loss_history: self.history.clone(),
            params: self.params.clone(),
        }
    }

    /// Runs the remaining iterations, writing `loss.csv`, periodic
    /// `checkpoint_<iter>.ckpt` files and `final.ckpt` into `out`.
    pub fn run(&mut self, out: &Path) -> Result<Checkpoint> {
        std::fs::create_dir_all(out)?;
        let mut csv = std::io::BufWriter::new(std::fs::File::create(out.join("loss.csv"))?);
        writeln!(csv, "iteration,loss,lr")?;
        while self.iteration < self.train.iterations {
            let lr = self.learning_rate();
            let loss = match self.step() {
                Ok(l) => l,
                Err(e) => {
                    csv.flush()?;
                    return Err(e);
                }
            };
            writeln!(csv, "{},{loss},{lr}", self.iteration)?;
            log::info!("iter {:>5}  loss {loss:.6}  lr {lr:.3e}", self.iteration);
            let every = self.train.checkpoint_every;
            if every > 0 && self.iteration % every == 0 {
                self.checkpoint().save(&out.join(format!("checkpoint_{}.ckpt", self.iteration)))?;
            }
        }
        csv.flush()?;
        let ck = self.checkpoint();
        ck.save(&out.join("final.ckpt"))?;
        Ok(ck)
    }
}
