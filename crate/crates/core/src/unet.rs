//! Grid-classification U-Net.
//!
//! Encoder level `l` runs two same-padded 3x3 conv+ReLU layers with
//! `encoder_filters[l]` channels and is followed by 2x2 max pooling on every
//! level but the last. Each decoder stage bilinearly upsamples, concatenates
//! the matching encoder output (upsampled channels first) and runs two conv+ReLU
//! layers with that level's filter count. A final 3x3 conv to one channel
//! yields one logit per grid box.
//!
//! Parameters are kept in a canonical order which is also the checkpoint order:
//! `enc{l}.conv{0,1}` for each level from the top, then `dec{l}.conv{0,1}` in
//! execution order (deepest stage first), then `head`; each conv contributes
//! its `[Cout, Cin, 3, 3]` weight followed by its `[Cout]` bias.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::synth::{seeded_rng, WindField};
use crate::tensor::kernels;
use crate::tensor::{softmax, softmax_cross_entropy, Tensor};

pub const PAPER_FILTERS: [usize; 4] = [64, 128, 256, 512];
pub const DESK_FILTERS: [usize; 4] = [8, 16, 32, 64];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub levels: usize,
    pub encoder_filters: Vec<usize>,
    pub grid: GridSpec,
}

impl ModelConfig {
    pub fn desk(grid: GridSpec) -> Self {
        Self { in_channels: 2, levels: 4, encoder_filters: DESK_FILTERS.to_vec(), grid }
    }

    pub fn paper(grid: GridSpec) -> Self {
        Self { in_channels: 2, levels: 4, encoder_filters: PAPER_FILTERS.to_vec(), grid }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels != 2 {
            return Err(Error::InvalidArgument(format!("in_channels must be 2 (u, v), got {}", self.in_channels)));
        }
        if self.levels == 0 || self.levels != self.encoder_filters.len() {
            return Err(Error::InvalidArgument(format!(
                "{} levels but {} filter counts",
                self.levels,
                self.encoder_filters.len()
            )));
        }
        if self.encoder_filters.contains(&0) {
            return Err(Error::InvalidArgument("filter counts must be positive".into()));
        }
        self.grid.validate()?;
        self.grid.check_divisible(self.levels)?;
        // Every pooled level must still fit a 3x3 kernel.
        let deepest = 1 << (self.levels - 1);
        if self.grid.height / deepest < 3 || self.grid.width / deepest < 3 {
            return Err(Error::Dimension(format!(
                "grid {}x{} too small for {} levels",
                self.grid.height, self.grid.width, self.levels
            )));
        }
        Ok(())
    }

    /// Spatial dims at encoder level `l`.
    pub fn level_dims(&self, l: usize) -> (usize, usize) {
        (self.grid.height >> l, self.grid.width >> l)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
}

/// Convolutions in canonical order.
pub fn layer_plan(cfg: &ModelConfig) -> Vec<ConvSpec> {
    let f = &cfg.encoder_filters;
    let levels = cfg.levels;
    let mut plan = Vec::with_capacity(4 * levels - 1);
    for l in 0..levels {
        let cin = if l == 0 { cfg.in_channels } else { f[l - 1] };
        plan.push(ConvSpec { name: format!("enc{l}.conv0"), cin, cout: f[l] });
        plan.push(ConvSpec { name: format!("enc{l}.conv1"), cin: f[l], cout: f[l] });
    }
    for l in (0..levels - 1).rev() {
        plan.push(ConvSpec { name: format!("dec{l}.conv0"), cin: f[l + 1] + f[l], cout: f[l] });
        plan.push(ConvSpec { name: format!("dec{l}.conv1"), cin: f[l], cout: f[l] });
    }
    plan.push(ConvSpec { name: "head".into(), cin: f[0], cout: 1 });
    plan
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    pub temperature: f64,
    /// Weight and bias per convolution, in canonical order.
    pub params: Vec<Tensor>,
    plan: Vec<ConvSpec>,
}

/// Kaiming-uniform weights (bound `sqrt(6 / fan_in)`) and zero biases, drawn
/// from a single seeded stream in canonical order.
pub fn build_unet(cfg: &ModelConfig, seed: u64) -> Result<ModelState> {
    cfg.validate()?;
    let plan = layer_plan(cfg);
    let mut rng = seeded_rng(seed, 0);
    let mut params = Vec::with_capacity(2 * plan.len());
    for conv in &plan {
        let bound = (6.0 / (conv.cin * 9) as f64).sqrt();
        let n = conv.cout * conv.cin * 9;
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        params.push(Tensor::from_vec(&[conv.cout, conv.cin, 3, 3], w)?);
        params.push(Tensor::zeros(&[conv.cout]));
    }
    Ok(ModelState { config: cfg.clone(), temperature: 1.0, params, plan })
}

/// Activations kept from a forward pass for the backward pass.
struct Trace {
    enc_in: Vec<Vec<f64>>,
    enc_a1: Vec<Vec<f64>>,
    enc_a2: Vec<Vec<f64>>,
    pool_arg: Vec<Vec<usize>>,
    /// Decoder stages in execution order.
    dec_cat: Vec<Vec<f64>>,
    dec_a1: Vec<Vec<f64>>,
    dec_a2: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

fn relu_in_place(x: &mut [f64]) {
    for v in x {
        *v = v.max(0.0);
    }
}

/// Zeroes gradient entries whose ReLU output was not positive.
fn relu_mask(grad: &mut [f64], activation: &[f64]) {
    for (g, &a) in grad.iter_mut().zip(activation) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Stacks u and v into the `[2, H, W]` network input.
pub fn field_input(field: &WindField) -> Vec<f64> {
    let mut x = Vec::with_capacity(2 * field.u.len());
    x.extend_from_slice(&field.u);
    x.extend_from_slice(&field.v);
    x
}

/// Index of the first maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl ModelState {
    /// Reassembles a model from parameters in canonical order.
    pub fn from_parts(config: ModelConfig, temperature: f64, params: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::InvalidArgument(format!("temperature {temperature} must be positive")));
        }
        let plan = layer_plan(&config);
        if params.len() != 2 * plan.len() {
            return Err(Error::Shape(format!("{} tensors for {} convolutions", params.len(), plan.len())));
        }
        for (k, conv) in plan.iter().enumerate() {
            if params[2 * k].dims() != [conv.cout, conv.cin, 3, 3] || params[2 * k + 1].dims() != [conv.cout] {
                return Err(Error::Shape(format!("parameter shapes of {} do not match config", conv.name)));
            }
        }
        Ok(Self { config, temperature, params, plan })
    }

    pub fn plan(&self) -> &[ConvSpec] {
        &self.plan
    }

    /// `(name, tensor)` pairs in canonical order.
    pub fn named_params(&self) -> impl Iterator<Item = (String, &Tensor)> {
        self.plan
            .iter()
            .flat_map(|c| [format!("{}.weight", c.name), format!("{}.bias", c.name)])
            .zip(&self.params)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    fn check_field(&self, field: &WindField) -> Result<()> {
        if field.grid != self.config.grid {
            return Err(Error::Shape(format!(
                "field grid {:?} does not match model grid {:?}",
                field.grid, self.config.grid
            )));
        }
        if field.u.iter().chain(&field.v).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("wind field input".into()));
        }
        Ok(())
    }

    fn conv(&self, k: usize, x: &[f64], h: usize, w: usize, relu: bool) -> Vec<f64> {
        let spec = &self.plan[k];
        let mut out = vec![0.0; spec.cout * h * w];
        kernels::conv3x3_forward(x, spec.cin, h, w, self.params[2 * k].data(), self.params[2 * k + 1].data(), spec.cout, &mut out);
        if relu {
            relu_in_place(&mut out);
        }
        out
    }

    fn conv_back(&self, k: usize, x: &[f64], h: usize, w: usize, g_out: &[f64], g_x: Option<&mut [f64]>, grads: &mut [Vec<f64>]) {
        let spec = &self.plan[k];
        let (gw, gb) = grads.split_at_mut(2 * k + 1);
        kernels::conv3x3_backward(x, spec.cin, h, w, self.params[2 * k].data(), spec.cout, g_out, g_x, &mut gw[2 * k], &mut gb[0]);
    }

    fn head_index(&self) -> usize {
        self.plan.len() - 1
    }

    fn dec_index(&self, stage: usize) -> usize {
        2 * self.config.levels + 2 * stage
    }

    fn run(&self, x: &[f64]) -> Trace {
        let levels = self.config.levels;
        let f = &self.config.encoder_filters;
        let mut t = Trace {
            enc_in: Vec::with_capacity(levels),
            enc_a1: Vec::with_capacity(levels),
            enc_a2: Vec::with_capacity(levels),
            pool_arg: Vec::with_capacity(levels),
            dec_cat: Vec::new(),
            dec_a1: Vec::new(),
            dec_a2: Vec::new(),
            logits: Vec::new(),
        };
        let mut input = x.to_vec();
        for l in 0..levels {
            let (h, w) = self.config.level_dims(l);
            let a1 = self.conv(2 * l, &input, h, w, true);
            let a2 = self.conv(2 * l + 1, &a1, h, w, true);
            let next = if l + 1 < levels {
                let mut pooled = vec![0.0; a2.len() / 4];
                let mut arg = vec![0; pooled.len()];
                kernels::maxpool2_forward(&a2, f[l], h, w, &mut pooled, &mut arg);
                t.pool_arg.push(arg);
                pooled
            } else {
                Vec::new()
            };
            t.enc_in.push(std::mem::replace(&mut input, next));
            t.enc_a1.push(a1);
            t.enc_a2.push(a2);
        }
        for stage in 0..levels - 1 {
            let l = levels - 2 - stage;
            let (h, w) = self.config.level_dims(l);
            let below = if stage == 0 { &t.enc_a2[levels - 1] } else { &t.dec_a2[stage - 1] };
            let mut cat = vec![0.0; (f[l + 1] + f[l]) * h * w];
            let (up, skip) = cat.split_at_mut(f[l + 1] * h * w);
            kernels::upsample2_forward(below, f[l + 1], h / 2, w / 2, up);
            skip.copy_from_slice(&t.enc_a2[l]);
            let k = self.dec_index(stage);
            let a1 = self.conv(k, &cat, h, w, true);
            let a2 = self.conv(k + 1, &a1, h, w, true);
            t.dec_cat.push(cat);
            t.dec_a1.push(a1);
            t.dec_a2.push(a2);
        }
        let (h, w) = self.config.level_dims(0);
        let head_in = t.dec_a2.last().unwrap_or(&t.enc_a2[0]);
        t.logits = self.conv(self.head_index(), head_in, h, w, false);
        t
    }

    fn backprop(&self, t: &Trace, d_logits: &[f64]) -> Vec<Vec<f64>> {
        let levels = self.config.levels;
        let f = &self.config.encoder_filters;
        let mut grads: Vec<Vec<f64>> = self.params.iter().map(|p| vec![0.0; p.len()]).collect();
        let (h0, w0) = self.config.level_dims(0);

        let head_in = t.dec_a2.last().unwrap_or(&t.enc_a2[0]);
        let mut g = vec![0.0; head_in.len()];
        self.conv_back(self.head_index(), head_in, h0, w0, d_logits, Some(&mut g), &mut grads);

        let mut skip_grads: Vec<Vec<f64>> = t.enc_a2.iter().map(|a| vec![0.0; a.len()]).collect();
        for stage in (0..levels - 1).rev() {
            let l = levels - 2 - stage;
            let (h, w) = self.config.level_dims(l);
            let k = self.dec_index(stage);
            relu_mask(&mut g, &t.dec_a2[stage]);
            let mut g_a1 = vec![0.0; t.dec_a1[stage].len()];
            self.conv_back(k + 1, &t.dec_a1[stage], h, w, &g, Some(&mut g_a1), &mut grads);
            relu_mask(&mut g_a1, &t.dec_a1[stage]);
            let mut g_cat = vec![0.0; t.dec_cat[stage].len()];
            self.conv_back(k, &t.dec_cat[stage], h, w, &g_a1, Some(&mut g_cat), &mut grads);
            let (g_up, g_skip) = g_cat.split_at(f[l + 1] * h * w);
            for (s, v) in skip_grads[l].iter_mut().zip(g_skip) {
                *s += v;
            }
            g = vec![0.0; f[l + 1] * (h / 2) * (w / 2)];
            kernels::upsample2_backward(g_up, f[l + 1], h / 2, w / 2, &mut g);
        }

        // `g` now holds the gradient of the bottleneck output.
        for l in (0..levels).rev() {
            let (h, w) = self.config.level_dims(l);
            if l + 1 < levels {
                let mut g_a2 = std::mem::take(&mut skip_grads[l]);
                kernels::maxpool2_backward(&t.pool_arg[l], &g, &mut g_a2);
                g = g_a2;
            }
            relu_mask(&mut g, &t.enc_a2[l]);
            let mut g_a1 = vec![0.0; t.enc_a1[l].len()];
            self.conv_back(2 * l + 1, &t.enc_a1[l], h, w, &g, Some(&mut g_a1), &mut grads);
            relu_mask(&mut g_a1, &t.enc_a1[l]);
            if l > 0 {
                let mut g_in = vec![0.0; t.enc_in[l].len()];
                self.conv_back(2 * l, &t.enc_in[l], h, w, &g_a1, Some(&mut g_in), &mut grads);
                g = g_in;
            } else {
                self.conv_back(0, &t.enc_in[0], h, w, &g_a1, None, &mut grads);
            }
        }
        grads
    }

    /// Raw logits, one per grid box in row-major order.
    pub fn forward(&self, field: &WindField) -> Result<Tensor> {
        self.check_field(field)?;
        let logits = self.run(&field_input(field)).logits;
        Tensor::from_vec(&[logits.len()], logits)
    }

    /// Runs each field independently; output `i` depends only on `fields[i]`.
    pub fn forward_batch(&self, fields: &[WindField]) -> Result<Vec<Tensor>> {
        fields.iter().map(|f| self.forward(f)).collect()
    }

    /// Per-box probabilities `softmax(logits / temperature)`, row-major.
    pub fn predict_proba(&self, field: &WindField) -> Result<Vec<f64>> {
        let logits = self.forward(field)?;
        Ok(scaled_softmax(logits.data(), self.temperature))
    }

    /// Most probable grid box (flat index). Independent of temperature.
    pub fn predict_cell(&self, field: &WindField) -> Result<usize> {
        Ok(argmax(self.forward(field)?.data()))
    }

    /// Unscaled cross-entropy against `target` and its gradient for every
    /// parameter tensor, in canonical order.
    pub fn loss_and_grad(&self, field: &WindField, target: usize) -> Result<(f64, Vec<Vec<f64>>)> {
        self.check_field(field)?;
        let trace = self.run(&field_input(field));
        let (loss, d_logits) = softmax_cross_entropy(&trace.logits, target)?;
        Ok((loss, self.backprop(&trace, &d_logits)))
    }
}

pub fn scaled_softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = logits.iter().map(|z| z / temperature).collect();
    softmax(&scaled)
}
