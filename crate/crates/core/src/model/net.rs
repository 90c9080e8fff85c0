use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{read_tensors, write_tensors, BatchStats, Mode, Tape, Tensor, Var};

use super::attention::{avam, cbam_spatial, AvamVars, ConvVars, ATTENTION_KERNEL};
use super::config::{AttentionKind, ModelConfig, FUSED_STAGES, NUM_STAGES};
use super::params::{fan_in_uniform, kaiming_uniform, Bound, ParamId, ParamStore};

#[derive(Clone, Debug)]
struct Conv {
    weight: ParamId,
    bias: ParamId,
    stride: usize,
    padding: usize,
}

#[derive(Clone, Debug)]
struct BatchNorm {
    gamma: ParamId,
    beta: ParamId,
    running_mean: ParamId,
    running_var: ParamId,
}

#[derive(Clone, Debug)]
struct Linear {
    weight: ParamId,
    bias: ParamId,
}

/// conv3×3 → BN → ReLU → conv3×3 → BN → ReLU, plus an identity or 1×1
/// projected shortcut. The first convolution carries the stage stride.
#[derive(Clone, Debug)]
struct ResidualStage {
    conv1: Conv,
    bn1: BatchNorm,
    conv2: Conv,
    bn2: BatchNorm,
    shortcut: Option<Conv>,
}

#[derive(Clone, Debug)]
struct Branch {
    stages: Vec<ResidualStage>,
}

#[derive(Clone, Debug)]
enum AttentionModule {
    Avam { avg: Conv, max: Conv, fuse: Conv },
    Spatial { conv: Conv },
}

#[derive(Clone, Debug)]
struct Head {
    fc: [Linear; 3],
}

/// A batch-norm statistics update produced by a train-mode forward pass.
#[derive(Clone, Debug)]
pub struct BnUpdate {
    running_mean: ParamId,
    running_var: ParamId,
    stats: BatchStats,
}

/// Network inputs for one batch.
///
/// * `visual`: `[B, 3T, H, W]`, the T face crops stacked along channels.
/// * `mel`: `[B, 1, n_mels, audio_steps]`, the audio-branch spectrogram.
/// * `mel_resized`: `[B, 1, H, W]`, the spectrogram resized to the crop grid
///   for the Siamese audio branch (attention variant only).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelInput {
    pub visual: Option<Tensor>,
    pub mel: Option<Tensor>,
    pub mel_resized: Option<Tensor>,
}

impl ModelInput {
    pub fn batch_size(&self) -> Option<usize> {
        [&self.visual, &self.mel, &self.mel_resized]
            .into_iter()
            .flatten()
            .map(|t| t.shape()[0])
            .next()
    }
}

pub struct ForwardOutput {
    /// Raw scores, `[B, 1]`.
    pub logits: Var,
    /// One `[B, 1, H_s, W_s]` attention map per visual stage (empty without
    /// attention).
    pub attention_maps: Vec<Var>,
    /// Visual-branch stage outputs after attention.
    pub visual_stages: Vec<Var>,
    pub bn_updates: Vec<BnUpdate>,
}

struct Ctx<'a> {
    tape: &'a mut Tape,
    store: &'a ParamStore,
    bound: &'a Bound,
    mode: Mode,
    rng: &'a mut dyn RngCore,
    bn_updates: Vec<BnUpdate>,
}

impl Conv {
    fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        ctx.tape.conv2d(
            x,
            ctx.bound.var(self.weight),
            ctx.bound.var(self.bias),
            self.stride,
            self.padding,
        )
    }

    fn vars(&self, ctx: &Ctx) -> ConvVars {
        ConvVars {
            weight: ctx.bound.var(self.weight),
            bias: ctx.bound.var(self.bias),
        }
    }
}

impl BatchNorm {
    fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let (y, stats) = ctx.tape.batch_norm(
            x,
            ctx.bound.var(self.gamma),
            ctx.bound.var(self.beta),
            ctx.store.get(self.running_mean).data(),
            ctx.store.get(self.running_var).data(),
            ctx.mode,
        )?;
        if let Some(stats) = stats {
            ctx.bn_updates.push(BnUpdate {
                running_mean: self.running_mean,
                running_var: self.running_var,
                stats,
            });
        }
        Ok(y)
    }
}

impl Linear {
    fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        ctx.tape
            .fully_connected(x, ctx.bound.var(self.weight), ctx.bound.var(self.bias))
    }
}

impl ResidualStage {
    fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let y = self.conv1.forward(ctx, x)?;
        let y = self.bn1.forward(ctx, y)?;
        let y = ctx.tape.relu(y);
        let y = self.conv2.forward(ctx, y)?;
        let y = self.bn2.forward(ctx, y)?;
        let y = ctx.tape.relu(y);
        let skip = match &self.shortcut {
            Some(proj) => proj.forward(ctx, x)?,
            None => x,
        };
        ctx.tape.add(y, skip).map_err(|e| match e {
            Error::Shape(msg) => Error::shape(format!("residual stage: {msg}")),
            other => other,
        })
    }
}

struct Builder<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
}

impl Builder<'_> {
    fn conv(
        &mut self,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        padding: usize,
    ) -> Conv {
        let fan_in = cin * k * k;
        let w = kaiming_uniform(&[cout, cin, k, k], fan_in, self.rng);
        Conv {
            weight: self.store.add(format!("{name}.weight"), w, true),
            bias: self
                .store
                .add(format!("{name}.bias"), Tensor::zeros(vec![cout]), true),
            stride,
            padding,
        }
    }

    fn bn(&mut self, name: &str, c: usize) -> BatchNorm {
        BatchNorm {
            gamma: self
                .store
                .add(format!("{name}.gamma"), Tensor::full(vec![c], 1.0), true),
            beta: self
                .store
                .add(format!("{name}.beta"), Tensor::zeros(vec![c]), true),
            running_mean: self.store.add(
                format!("{name}.running_mean"),
                Tensor::zeros(vec![c]),
                false,
            ),
            running_var: self.store.add(
                format!("{name}.running_var"),
                Tensor::full(vec![c], 1.0),
                false,
            ),
        }
    }

    fn linear(&mut self, name: &str, din: usize, dout: usize) -> Linear {
        let w = fan_in_uniform(&[dout, din], din, self.rng);
        Linear {
            weight: self.store.add(format!("{name}.weight"), w, true),
            bias: self
                .store
                .add(format!("{name}.bias"), Tensor::zeros(vec![dout]), true),
        }
    }

    fn branch(&mut self, name: &str, in_channels: usize, cfg: &ModelConfig) -> Branch {
        let mut cin = in_channels;
        let stages = (0..NUM_STAGES)
            .map(|s| {
                let cout = cfg.stage_channels[s];
                let stride = cfg.stage_strides[s];
                let prefix = format!("{name}.stage{}", s + 1);
                let stage = ResidualStage {
                    conv1: self.conv(&format!("{prefix}.conv1"), cin, cout, 3, stride, 1),
                    bn1: self.bn(&format!("{prefix}.bn1"), cout),
                    conv2: self.conv(&format!("{prefix}.conv2"), cout, cout, 3, 1, 1),
                    bn2: self.bn(&format!("{prefix}.bn2"), cout),
                    shortcut: (cin != cout || stride != 1)
                        .then(|| self.conv(&format!("{prefix}.shortcut"), cin, cout, 1, stride, 0)),
                };
                cin = cout;
                stage
            })
            .collect();
        Branch { stages }
    }

    fn attention_conv(&mut self, name: &str) -> Conv {
        self.conv(
            name,
            2,
            1,
            ATTENTION_KERNEL,
            1,
            super::attention::ATTENTION_PADDING,
        )
    }
}

/// The two-branch detector with its parameters.
#[derive(Clone, Debug)]
pub struct FtfdModel {
    config: ModelConfig,
    store: ParamStore,
    visual: Option<Branch>,
    audio: Option<Branch>,
    siamese: Option<Branch>,
    attention: Vec<AttentionModule>,
    head: Head,
}

impl FtfdModel {
    /// Builds a model with Kaiming-uniform conv/FC weights, zero biases and
    /// unit batch-norm scales. Deterministic in `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder {
            store: &mut store,
            rng: &mut rng,
        };
        let variant = config.variant;
        let visual = variant
            .uses_visual()
            .then(|| b.branch("visual", config.visual_channels(), &config));
        let audio = variant.uses_audio().then(|| b.branch("audio", 1, &config));
        let siamese = variant
            .uses_siamese()
            .then(|| b.branch("siamese", 1, &config));
        let attention = (0..NUM_STAGES)
            .filter_map(|s| {
                let p = format!("attention.stage{}", s + 1);
                match variant.attention() {
                    AttentionKind::None => None,
                    AttentionKind::Avam => Some(AttentionModule::Avam {
                        avg: b.attention_conv(&format!("{p}.conv_avg")),
                        max: b.attention_conv(&format!("{p}.conv_max")),
                        fuse: b.attention_conv(&format!("{p}.conv_fuse")),
                    }),
                    AttentionKind::CbamSpatial => Some(AttentionModule::Spatial {
                        conv: b.attention_conv(&format!("{p}.conv")),
                    }),
                }
            })
            .collect();
        let dims = &config.fc_dims;
        let head = Head {
            fc: [
                b.linear("head.fc1", config.head_input_dim(), dims[0]),
                b.linear("head.fc2", dims[0], dims[1]),
                b.linear("head.fc3", dims[1], dims[2]),
            ],
        };
        Ok(Self {
            config,
            store,
            visual,
            audio,
            siamese,
            attention,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn bind(&self, tape: &mut Tape) -> Bound {
        self.store.bind(tape)
    }

    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate]) {
        for u in updates {
            let mut mean = self.store.get(u.running_mean).clone();
            let mut var = self.store.get(u.running_var).clone();
            u.stats.update_running(mean.data_mut(), var.data_mut());
            *self.store.get_mut(u.running_mean) = mean;
            *self.store.get_mut(u.running_var) = var;
        }
    }

    /// Replaces every running batch-norm statistic with the average of the
    /// batch statistics that `inputs` produce under the current weights.
    pub fn recalibrate_batch_norm(&mut self, inputs: &[ModelInput]) -> Result<()> {
        if inputs.is_empty() {
            return Err(Error::invalid(
                "batch-norm recalibration needs at least one batch",
            ));
        }
        let mut sums: Vec<BnUpdate> = Vec::new();
        for input in inputs {
            let mut tape = Tape::new();
            let bound = self.bind(&mut tape);
            // Dropout only follows the last batch norm, so its mask is irrelevant.
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let out = self.forward(&mut tape, &bound, input, Mode::Train, &mut rng)?;
            if sums.is_empty() {
                sums = out.bn_updates;
                continue;
            }
            for (acc, u) in sums.iter_mut().zip(&out.bn_updates) {
                acc.stats
                    .mean
                    .iter_mut()
                    .zip(&u.stats.mean)
                    .for_each(|(a, b)| *a += b);
                acc.stats
                    .var
                    .iter_mut()
                    .zip(&u.stats.var)
                    .for_each(|(a, b)| *a += b);
            }
        }
        let n = inputs.len() as f64;
        for u in &sums {
            let mean: Vec<f64> = u.stats.mean.iter().map(|v| v / n).collect();
            let var: Vec<f64> = u.stats.var.iter().map(|v| v / n).collect();
            let shape = self.store.get(u.running_mean).shape().to_vec();
            *self.store.get_mut(u.running_mean) = Tensor::new(shape.clone(), mean)?;
            *self.store.get_mut(u.running_var) = Tensor::new(shape, var)?;
        }
        Ok(())
    }

    fn check_input(&self, input: &ModelInput) -> Result<usize> {
        let cfg = &self.config;
        let batch = input
            .batch_size()
            .ok_or_else(|| Error::invalid("model input is empty"))?;
        let [h, w] = cfg.crop;
        let expect = |name: &str, t: &Option<Tensor>, shape: [usize; 4]| -> Result<()> {
            match t {
                None => Err(Error::invalid(format!(
                    "variant {} needs the {name} input",
                    cfg.variant
                ))),
                Some(t) if t.shape() != shape => Err(Error::shape(format!(
                    "{name} input has shape {:?}, expected {shape:?}",
                    t.shape()
                ))),
                Some(_) => Ok(()),
            }
        };
        if cfg.variant.uses_visual() {
            let v = input.visual.as_ref();
            if let Some(v) = v {
                if v.rank() == 4 && v.shape()[1] != cfg.visual_channels() {
                    return Err(Error::shape(format!(
                        "visual input has {} channels; T = {} needs {}",
                        v.shape()[1],
                        cfg.frames,
                        cfg.visual_channels()
                    )));
                }
            }
            expect(
                "visual",
                &input.visual,
                [batch, cfg.visual_channels(), h, w],
            )?;
        }
        if cfg.variant.uses_audio() {
            expect("mel", &input.mel, [batch, 1, cfg.n_mels, cfg.audio_steps])?;
        }
        if cfg.variant.uses_siamese() {
            expect("resized mel", &input.mel_resized, [batch, 1, h, w])?;
        }
        Ok(batch)
    }

    /// Records one forward pass on `tape`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        input: &ModelInput,
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<ForwardOutput> {
        self.check_input(input)?;
        let mut ctx = Ctx {
            tape,
            store: &self.store,
            bound,
            mode,
            rng,
            bn_updates: Vec::new(),
        };

        let siamese_feats = match (&self.siamese, &input.mel_resized) {
            (Some(branch), Some(mel)) => {
                let mut x = ctx.tape.constant(mel.clone());
                let mut feats = Vec::with_capacity(NUM_STAGES);
                for stage in &branch.stages {
                    x = stage.forward(&mut ctx, x)?;
                    feats.push(x);
                }
                feats
            }
            _ => Vec::new(),
        };

        let mut attention_maps = Vec::new();
        let mut visual_stages = Vec::new();
        if let (Some(branch), Some(frames)) = (&self.visual, &input.visual) {
            let mut x = ctx.tape.constant(frames.clone());
            for (s, stage) in branch.stages.iter().enumerate() {
                x = stage.forward(&mut ctx, x)?;
                if let Some(module) = self.attention.get(s) {
                    let (attended, map) = match module {
                        AttentionModule::Avam { avg, max, fuse } => {
                            let w = AvamVars {
                                avg: avg.vars(&ctx),
                                max: max.vars(&ctx),
                                fuse: fuse.vars(&ctx),
                            };
                            avam(ctx.tape, x, siamese_feats[s], &w)?
                        }
                        AttentionModule::Spatial { conv } => {
                            let w = conv.vars(&ctx);
                            cbam_spatial(ctx.tape, x, w)?
                        }
                    };
                    x = attended;
                    attention_maps.push(map);
                }
                visual_stages.push(x);
            }
        }

        let mut audio_stages = Vec::new();
        if let (Some(branch), Some(mel)) = (&self.audio, &input.mel) {
            let mut x = ctx.tape.constant(mel.clone());
            for stage in &branch.stages {
                x = stage.forward(&mut ctx, x)?;
                audio_stages.push(x);
            }
        }

        let mut features: Option<Var> = None;
        for &s in &FUSED_STAGES {
            for stages in [&visual_stages, &audio_stages] {
                if let Some(&map) = stages.get(s) {
                    let pooled = ctx.tape.global_avg_pool(map)?;
                    features = Some(match features {
                        None => pooled,
                        Some(f) => ctx.tape.concat_channels(f, pooled)?,
                    });
                }
            }
        }
        let features = features.expect("at least one branch is active");

        let p = self.config.dropout_p;
        let [fc1, fc2, fc3] = &self.head.fc;
        let h = fc1.forward(&mut ctx, features)?;
        let h = ctx.tape.relu(h);
        let h = ctx.tape.dropout(h, p, mode, &mut *ctx.rng)?;
        let h = fc2.forward(&mut ctx, h)?;
        let h = ctx.tape.relu(h);
        let h = ctx.tape.dropout(h, p, mode, &mut *ctx.rng)?;
        let logits = fc3.forward(&mut ctx, h)?;

        Ok(ForwardOutput {
            logits,
            attention_maps,
            visual_stages,
            bn_updates: ctx.bn_updates,
        })
    }

    /// Eval-mode logits, `[B, 1]`.
    pub fn logits(&self, input: &ModelInput) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(&mut tape, &bound, input, Mode::Eval, &mut rng)?;
        Ok(tape.value(out.logits).clone())
    }

    /// Eval-mode attention maps, one `[B, 1, H_s, W_s]` tensor per stage.
    pub fn attention_maps(&self, input: &ModelInput) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(&mut tape, &bound, input, Mode::Eval, &mut rng)?;
        Ok(out
            .attention_maps
            .iter()
            .map(|&m| tape.value(m).clone())
            .collect())
    }

    /// Probability that each clip is fake.
    pub fn predict(&self, input: &ModelInput) -> Result<Vec<f64>> {
        Ok(self
            .logits(input)?
            .data()
            .iter()
            .map(|&z| probability(z))
            .collect())
    }

    /// Writes the parameter file and a `<path>.json` config sidecar.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        write_tensors(path, &self.store.to_named())?;
        let sidecar = sidecar_path(path);
        std::fs::write(&sidecar, self.config.to_json()).map_err(|e| Error::io(&sidecar, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let sidecar = sidecar_path(path);
        let text = std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        let config =
            ModelConfig::from_json(&text).map_err(|e| Error::file(&sidecar, e.to_string()))?;
        let mut model = Self::new(config, 0)?;
        let named = read_tensors(path)?;
        model
            .store
            .load_named(named)
            .map_err(|e| Error::file(path, e.to_string()))?;
        Ok(model)
    }
}

/// `<checkpoint>.json`, where the model config is stored.
pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

/// Sigmoid of a logit: the probability of the "fake" class.
pub fn probability(logit: f64) -> f64 {
    crate::tensor::sigmoid_scalar(logit)
}

/// Decision rule: probabilities of 0.5 and above are reported as fake.
pub fn is_fake(probability: f64) -> bool {
    probability >= 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn stage(cin: usize, cout: usize, stride: usize, seed: u64) -> (ParamStore, ResidualStage) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder {
            store: &mut store,
            rng: &mut rng,
        };
        let mut cfg = ModelConfig::tiny(super::super::Variant::Visual, 1);
        cfg.stage_channels = vec![cout; NUM_STAGES];
        cfg.stage_strides = vec![stride; NUM_STAGES];
        let mut branch = b.branch("s", cin, &cfg);
        (store, branch.stages.swap_remove(0))
    }

    fn run_stage(
        store: &ParamStore,
        st: &ResidualStage,
        x: &Tensor,
        proj: &Tensor,
    ) -> (Tape, Var, Var, Bound) {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let xv = tape.leaf(x.clone(), true);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ctx = Ctx {
            tape: &mut tape,
            store,
            bound: &bound,
            mode: Mode::Train,
            rng: &mut rng,
            bn_updates: Vec::new(),
        };
        let y = st.forward(&mut ctx, xv).unwrap();
        let n = tape.value(y).numel();
        let flat = tape.reshape(y, vec![1, n]).unwrap();
        let w = tape.constant(proj.reshape(vec![1, n]).unwrap());
        let b = tape.constant(Tensor::zeros(vec![1]));
        let z = tape.fully_connected(flat, w, b).unwrap();
        let loss = tape.sum(z);
        (tape, loss, xv, bound)
    }

    #[test]
    fn residual_stage_gradients() {
        for (cin, cout, stride, seed) in [(3, 4, 2, 1), (4, 4, 1, 2), (2, 3, 1, 3)] {
            let (mut store, st) = stage(cin, cout, stride, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 10);
            let x = Tensor::from_fn(vec![2, cin, 6, 6], |_| rng.gen_range(-1.0..1.0));
            let n_out = 2 * cout * (6 / stride) * (6 / stride);
            let proj = Tensor::from_fn(vec![n_out], |_| rng.gen_range(-1.0..1.0));
            let (mut tape, loss, xv, bound) = run_stage(&store, &st, &x, &proj);
            tape.backward(loss).unwrap();
            let gx = tape.grad(xv).unwrap();
            let gp = bound.grads(&tape);
            let value = |store: &ParamStore, x: &Tensor| {
                let (t, l, _, _) = run_stage(store, &st, x, &proj);
                t.value(l).item().unwrap()
            };
            let h = 1e-5;
            // conv biases feeding batch norm have exactly zero gradient; the
            // floor keeps their difference-quotient noise from dominating
            let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-4);
            for i in 0..x.numel() {
                let (mut up, mut down) = (x.clone(), x.clone());
                up.data_mut()[i] += h;
                down.data_mut()[i] -= h;
                let num = (value(&store, &up) - value(&store, &down)) / (2.0 * h);
                assert!(
                    rel(gx.data()[i], num) < 1e-5,
                    "input {i}: {} vs {num}",
                    gx.data()[i]
                );
            }
            for k in 0..store.len() {
                let Some(g) = &gp[k] else { continue };
                for i in 0..g.numel().min(6) {
                    let orig = store.entries()[k].value.data()[i];
                    store.entries_mut()[k].value.data_mut()[i] = orig + h;
                    let up = value(&store, &x);
                    store.entries_mut()[k].value.data_mut()[i] = orig - h;
                    let down = value(&store, &x);
                    store.entries_mut()[k].value.data_mut()[i] = orig;
                    let num = (up - down) / (2.0 * h);
                    let name = &store.entries()[k].name;
                    assert!(
                        rel(g.data()[i], num) < 1e-5,
                        "{name}[{i}]: {} vs {num}",
                        g.data()[i]
                    );
                }
            }
        }
    }

    #[test]
    fn zero_residual_branch_leaves_the_shortcut() {
        let (mut store, st) = stage(3, 4, 2, 5);
        for e in store.entries_mut() {
            if e.name.contains(".conv") {
                e.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Tensor::from_fn(vec![2, 3, 96, 96], |_| rng.gen_range(-1.0..1.0));
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let mut ctx = Ctx {
            tape: &mut tape,
            store: &store,
            bound: &bound,
            mode: Mode::Train,
            rng: &mut r,
            bn_updates: Vec::new(),
        };
        let y = st.forward(&mut ctx, xv).unwrap();
        let proj = st.shortcut.as_ref().unwrap();
        let s = tape
            .conv2d(xv, bound.var(proj.weight), bound.var(proj.bias), 2, 0)
            .unwrap();
        assert_eq!(tape.shape(y), &[2, 4, 48, 48]);
        assert_eq!(tape.value(y), tape.value(s));
    }

    #[test]
    fn forward_shapes_and_seeding() {
        let cfg = ModelConfig::tiny(super::super::Variant::FtfdnetAvam, 3);
        let a = FtfdModel::new(cfg.clone(), 7).unwrap();
        let b = FtfdModel::new(cfg.clone(), 7).unwrap();
        let c = FtfdModel::new(cfg.clone(), 8).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
        let input = ModelInput {
            visual: Some(Tensor::full(vec![2, 9, 16, 16], 0.5)),
            mel: Some(Tensor::full(vec![2, 1, 80, 8], -3.0)),
            mel_resized: Some(Tensor::full(vec![2, 1, 16, 16], -3.0)),
        };
        assert_eq!(a.logits(&input).unwrap().shape(), &[2, 1]);
        assert_eq!(a.attention_maps(&input).unwrap().len(), NUM_STAGES);
        let short = ModelInput {
            visual: Some(Tensor::full(vec![2, 6, 16, 16], 0.5)),
            ..input
        };
        assert!(a.logits(&short).is_err());
    }

    #[test]
    fn probability_and_decision() {
        assert_eq!(probability(0.0), 0.5);
        assert!(is_fake(0.5));
        assert!((probability(4.0) - 0.982_013_790_037_908_4).abs() < 1e-15);
        let zs = [-5.0, -1.0, 0.0, 0.3, 2.0, 9.0];
        assert!(zs.windows(2).all(|w| probability(w[0]) < probability(w[1])));
    }
}
