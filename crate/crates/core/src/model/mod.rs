//! U-Net / Attention U-Net assembly.
//!
//! Both variants share the same trunk: four stride-2 down blocks, three
//! up blocks (nearest ×4 upsample folded with a k4/s2/p1 convolution), skip
//! concatenations, and a transposed-convolution head with a sigmoid. The
//! attention variant additionally gates every skip connection with an
//! additive soft-attention coefficient computed from the skip and the
//! previous (coarser) decoder-level feature map.
//!
//! The first decoder stage consumes the 512-channel bottleneck directly: the
//! published layer table lists a 1024-channel tensor feeding the first
//! upsampling block, but no listed layer produces it, so widths stay
//! configurable and the 512-wire is the documented interpretation.

pub mod checkpoint;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, IN_CHANNELS, OUT_CHANNELS};
use crate::nn::ops::{
    batch_norm_eval, batch_norm_eval_backward, batch_norm_train, batch_norm_train_backward,
    concat_channels, concat_channels_backward, conv2d, conv2d_backward, dropout,
    dropout_backward, leaky_relu, leaky_relu_backward, mul_channel_broadcast,
    mul_channel_broadcast_backward, relu, relu_backward, sigmoid, sigmoid_backward,
    transposed_conv2d, transposed_conv2d_backward, upconv4, upconv4_backward,
    upsample_nearest, upsample_nearest_backward, BnCache, BnParams, BN_EPS, BN_MOMENTUM,
};
use crate::nn::{Scalar, Tensor4};

/// Spatial dims must divide by 2⁴ so the four stride-2 stages stay integral.
pub const GRID_DIVISOR: usize = 16;
/// Encoder depth fixed by the architecture table.
pub const N_DOWN: usize = 4;
/// Decoder up-block count (the head is the fourth upsampling stage).
pub const N_UP: usize = 3;

pub const DEFAULT_WIDTHS: [usize; N_DOWN] = [64, 128, 256, 512];
pub const DEFAULT_DROPOUT: f64 = 0.5;
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    UNet,
    AttentionUNet,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::UNet => "unet",
            Variant::AttentionUNet => "attention_unet",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "unet" => Ok(Variant::UNet),
            "attention_unet" | "attention-unet" => Ok(Variant::AttentionUNet),
            other => Err(Error::invalid(
                "variant",
                format!("unknown model variant {other:?} (expected unet | attention-unet)"),
            )),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub in_channels: usize,
    pub out_channels: usize,
    pub encoder_widths: [usize; N_DOWN],
    pub dropout_rate: f64,
    pub leaky_slope: f64,
    /// Attention-gate intermediate widths; `None` = each skip's channel count.
    pub attention_inter_channels: Option<[usize; N_UP]>,
}

impl ModelConfig {
    pub fn new(variant: Variant) -> Self {
        ModelConfig {
            variant,
            in_channels: IN_CHANNELS,
            out_channels: OUT_CHANNELS,
            encoder_widths: DEFAULT_WIDTHS,
            dropout_rate: DEFAULT_DROPOUT,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            attention_inter_channels: None,
        }
    }

    pub fn unet() -> Self {
        Self::new(Variant::UNet)
    }

    pub fn attention_unet() -> Self {
        Self::new(Variant::AttentionUNet)
    }

    /// Same architecture with every channel width divided by `factor`.
    pub fn with_width_divisor(mut self, factor: usize) -> Result<Self> {
        for w in &mut self.encoder_widths {
            if *w % factor != 0 {
                return Err(Error::invalid(
                    "model config",
                    format!("width {w} not divisible by {factor}"),
                ));
            }
            *w /= factor;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::invalid("model config", "channel counts must be >= 1"));
        }
        for (i, &w) in self.encoder_widths.iter().enumerate() {
            if !w.is_power_of_two() {
                return Err(Error::invalid(
                    "model config",
                    format!("encoder width {w} is not a power of two"),
                ));
            }
            if i > 0 && w != 2 * self.encoder_widths[i - 1] {
                return Err(Error::invalid(
                    "model config",
                    format!(
                        "encoder widths must double per stage, got {} after {}",
                        w,
                        self.encoder_widths[i - 1]
                    ),
                ));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid(
                "model config",
                format!("dropout rate {} outside [0, 1)", self.dropout_rate),
            ));
        }
        if self.leaky_slope < 0.0 {
            return Err(Error::invalid("model config", "leaky slope must be >= 0"));
        }
        if let Some(inter) = &self.attention_inter_channels {
            if inter.iter().any(|&f| f == 0) {
                return Err(Error::invalid(
                    "model config",
                    "attention intermediate widths must be >= 1",
                ));
            }
        }
        Ok(())
    }

    /// Channels of the skip taps `[s1, s2, s3]` (finest to coarsest).
    pub fn skip_channels(&self) -> [usize; N_UP] {
        let w = self.encoder_widths;
        [w[0], w[1], w[2]]
    }

    /// Channels entering each decoder stage (bottleneck, then concat maps).
    pub fn up_in_channels(&self) -> [usize; N_UP] {
        let w = self.encoder_widths;
        [w[3], 2 * w[2], 2 * w[1]]
    }

    /// Channels produced by each up block (match the gated skip widths).
    pub fn up_out_channels(&self) -> [usize; N_UP] {
        let w = self.encoder_widths;
        [w[2], w[1], w[0]]
    }

    /// Skip channels gated at each decoder stage (coarsest skip first).
    pub fn gate_x_channels(&self) -> [usize; N_UP] {
        let w = self.encoder_widths;
        [w[2], w[1], w[0]]
    }

    /// Intermediate width per gate (configured or skip-width default).
    pub fn gate_inter_channels(&self) -> [usize; N_UP] {
        self.attention_inter_channels
            .unwrap_or_else(|| self.gate_x_channels())
    }

    pub fn head_in_channels(&self) -> usize {
        2 * self.encoder_widths[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DownBlock<T> {
    /// Conv kernel `(width, in, 4, 4)`; stride-2 convs carry no bias so the
    /// first block's parameter count is exactly `in·width·16`.
    pub weight: Tensor4<T>,
    /// Absent on the first block.
    pub bn: Option<BnParams<T>>,
    pub has_dropout: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpBlock<T> {
    /// Fused upsample-conv kernel `(width, in, 4, 4)`, no bias.
    pub weight: Tensor4<T>,
    pub bn: BnParams<T>,
    pub has_dropout: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGate<T> {
    /// 1×1 stride-2 projection of the skip, no bias.
    pub w_x: Tensor4<T>,
    /// 1×1 projection of the gating signal; carries the shared additive bias.
    pub w_g: Tensor4<T>,
    pub b_g: Vec<T>,
    /// 1×1 reduction to one coefficient channel.
    pub psi: Tensor4<T>,
    pub b_psi: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T = f32> {
    pub config: ModelConfig,
    pub down: Vec<DownBlock<T>>,
    pub up: Vec<UpBlock<T>>,
    /// Empty for the plain variant.
    pub gates: Vec<AttentionGate<T>>,
    /// Transposed-conv kernel `(head_in, out, 4, 4)`; the only biased layer.
    pub head_weight: Tensor4<T>,
    pub head_bias: Vec<T>,
}

/// Per-gate attention coefficients at skip resolution, coarsest gate first.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMaps<T = f32> {
    pub maps: Vec<Tensor4<T>>,
}

/// Result of asking a forward pass for attention coefficients.
#[derive(Debug, Clone, PartialEq)]
pub enum AttentionCapture<T = f32> {
    NotRequested,
    /// The plain variant has no gates; capture request is flagged, not fatal.
    Unsupported,
    Maps(AttentionMaps<T>),
}

enum NormTrace<T> {
    Absent,
    Train(BnCache<T>),
    /// Eval-mode backward needs the normalization input.
    Eval(Tensor4<T>),
}

struct BlockTrace<T> {
    input: Tensor4<T>,
    norm: NormTrace<T>,
    dropout_mask: Option<Vec<T>>,
    pre_act: Tensor4<T>,
}

struct GateTrace<T> {
    t_pre: Tensor4<T>,
    t: Tensor4<T>,
    alpha_small: Tensor4<T>,
    alpha: Tensor4<T>,
}

/// Saved intermediates from a traced forward pass, consumed by [`Model::backward`].
pub struct ForwardTrace<T> {
    down: Vec<BlockTrace<T>>,
    gates: Vec<GateTrace<T>>,
    up: Vec<BlockTrace<T>>,
    head_input: Tensor4<T>,
    output: Tensor4<T>,
}

fn he_uniform<T: Scalar>(rng: &mut ChaCha8Rng, fan_in: usize, len: usize) -> Vec<T> {
    let limit = (6.0 / fan_in as f64).sqrt();
    (0..len)
        .map(|_| T::from_f64(rng.random_range(-limit..limit)))
        .collect()
}

/// Construct a model with the given parameter seed. The grid is validated for
/// four exact halvings; the model itself is fully convolutional and may later
/// run on any compliant size.
pub fn build_model<T: Scalar>(config: &ModelConfig, grid: &GridSpec, seed: u64) -> Result<Model<T>> {
    config.validate()?;
    if grid.height % GRID_DIVISOR != 0 || grid.width % GRID_DIVISOR != 0 {
        return Err(Error::invalid(
            "model config",
            format!(
                "grid {}x{} not divisible by {GRID_DIVISOR}",
                grid.height, grid.width
            ),
        ));
    }
    let mut model = Model::scaffold(config.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for block in &mut model.down {
        let (_, c_in, k, _) = block.weight.dims();
        block.weight.data = he_uniform(&mut rng, c_in * k * k, block.weight.numel());
    }
    for block in &mut model.up {
        let (_, c_in, k, _) = block.weight.dims();
        block.weight.data = he_uniform(&mut rng, c_in * k * k, block.weight.numel());
    }
    for gate in &mut model.gates {
        gate.w_x.data = he_uniform(&mut rng, gate.w_x.c, gate.w_x.numel());
        gate.w_g.data = he_uniform(&mut rng, gate.w_g.c, gate.w_g.numel());
        gate.psi.data = he_uniform(&mut rng, gate.psi.c, gate.psi.numel());
    }
    let fan_in = model.head_weight.n * 16;
    model.head_weight.data = he_uniform(&mut rng, fan_in, model.head_weight.numel());
    Ok(model)
}

impl<T: Scalar> Model<T> {
    /// All parameters zeroed (BN gain 1, running variance 1): the shape
    /// skeleton used by initialization, checkpoint loading, and gradient
    /// accumulators.
    pub fn scaffold(config: ModelConfig) -> Model<T> {
        let w = config.encoder_widths;
        let mut down = Vec::with_capacity(N_DOWN);
        let mut c_prev = config.in_channels;
        for (i, &width) in w.iter().enumerate() {
            down.push(DownBlock {
                weight: Tensor4::zeros(width, c_prev, 4, 4),
                bn: (i > 0).then(|| BnParams::new(width)),
                has_dropout: i > 0,
            });
            c_prev = width;
        }
        let up_in = config.up_in_channels();
        let up_out = config.up_out_channels();
        let up = (0..N_UP)
            .map(|j| UpBlock {
                weight: Tensor4::zeros(up_out[j], up_in[j], 4, 4),
                bn: BnParams::new(up_out[j]),
                has_dropout: j == 0,
            })
            .collect();
        let gates = match config.variant {
            Variant::UNet => Vec::new(),
            Variant::AttentionUNet => {
                let xc = config.gate_x_channels();
                let gc = config.up_in_channels();
                let fc = config.gate_inter_channels();
                (0..N_UP)
                    .map(|j| AttentionGate {
                        w_x: Tensor4::zeros(fc[j], xc[j], 1, 1),
                        w_g: Tensor4::zeros(fc[j], gc[j], 1, 1),
                        b_g: vec![T::zero(); fc[j]],
                        psi: Tensor4::zeros(1, fc[j], 1, 1),
                        b_psi: vec![T::zero(); 1],
                    })
                    .collect()
            }
        };
        Model {
            head_weight: Tensor4::zeros(config.head_in_channels(), config.out_channels, 4, 4),
            head_bias: vec![T::zero(); config.out_channels],
            down,
            up,
            gates,
            config,
        }
    }

    /// Zero-valued gradient accumulator with this model's exact shapes.
    pub fn zeros_like(&self) -> Model<T> {
        let mut g = Model::scaffold(self.config.clone());
        for block in &mut g.down {
            if let Some(bn) = &mut block.bn {
                bn.gamma.fill(T::zero());
                bn.running_var.fill(T::zero());
            }
        }
        for block in &mut g.up {
            block.bn.gamma.fill(T::zero());
            block.bn.running_var.fill(T::zero());
        }
        g
    }

    fn check_input(&self, x: &Tensor4<T>) -> Result<()> {
        if x.c != self.config.in_channels {
            return Err(Error::shape(
                "model input",
                format!("{} channels", self.config.in_channels),
                format!("{} channels", x.c),
            ));
        }
        if x.h % GRID_DIVISOR != 0 || x.w % GRID_DIVISOR != 0 {
            return Err(Error::shape(
                "model input",
                format!("spatial dims divisible by {GRID_DIVISOR}"),
                format!("{}x{}", x.h, x.w),
            ));
        }
        Ok(())
    }

    /// Training forward: batch-norm uses batch statistics (running stats are
    /// updated in place), dropout is active. Returns the trace for
    /// [`Model::backward`].
    pub fn forward_train(
        &mut self,
        x: &Tensor4<T>,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Tensor4<T>, ForwardTrace<T>)> {
        self.check_input(x)?;
        let slope = self.config.leaky_slope;
        let rate = self.config.dropout_rate;
        let mut down_traces = Vec::with_capacity(N_DOWN);
        let mut cur = x.clone();
        for (i, block) in self.down.iter_mut().enumerate() {
            let input = cur;
            let conv_out = conv2d(&input, &block.weight, None, 2, 1)
                .map_err(|e| Error::invalid(format!("down{}", i + 1), e.to_string()))?;
            let (normed, norm) = match &mut block.bn {
                Some(bn) => {
                    let (y, cache) = batch_norm_train(&conv_out, bn, BN_EPS, BN_MOMENTUM)?;
                    (y, NormTrace::Train(cache))
                }
                None => (conv_out, NormTrace::Absent),
            };
            let (dropped, dropout_mask) = if block.has_dropout && rate > 0.0 {
                let (y, mask) = dropout(&normed, rate, rng)?;
                (y, Some(mask))
            } else {
                (normed, None)
            };
            cur = leaky_relu(&dropped, slope);
            down_traces.push(BlockTrace {
                input,
                norm,
                dropout_mask,
                pre_act: dropped,
            });
        }

        let mut gate_traces = Vec::new();
        let mut up_traces = Vec::with_capacity(N_UP);
        for j in 0..N_UP {
            let stage_in = cur;
            // Skip tensors are the inputs of the *next* down block.
            let skip = &down_traces[N_DOWN - 1 - j].input;
            let gated = if self.config.variant == Variant::AttentionUNet {
                let (out, _alpha, trace) = gate_forward(&self.gates[j], &stage_in, skip, true)?;
                gate_traces.push(trace.expect("trace requested"));
                out
            } else {
                skip.clone()
            };
            let block = &mut self.up[j];
            let conv_out = upconv4(&stage_in, &block.weight)
                .map_err(|e| Error::invalid(format!("up{}", j + 1), e.to_string()))?;
            let (normed, cache) = batch_norm_train(&conv_out, &mut block.bn, BN_EPS, BN_MOMENTUM)?;
            let (dropped, dropout_mask) = if block.has_dropout && rate > 0.0 {
                let (y, mask) = dropout(&normed, rate, rng)?;
                (y, Some(mask))
            } else {
                (normed, None)
            };
            let activated = relu(&dropped);
            cur = concat_channels(&activated, &gated)?;
            up_traces.push(BlockTrace {
                input: stage_in,
                norm: NormTrace::Train(cache),
                dropout_mask,
                pre_act: dropped,
            });
        }

        let head_input = cur;
        let pre = transposed_conv2d(&head_input, &self.head_weight, Some(&self.head_bias), 2, 1)
            .map_err(|e| Error::invalid("head", e.to_string()))?;
        let output = sigmoid(&pre);
        let trace = ForwardTrace {
            down: down_traces,
            gates: gate_traces,
            up: up_traces,
            head_input,
            output: output.clone(),
        };
        Ok((output, trace))
    }

    /// Eval-mode forward with a trace (running-stat normalization, dropout
    /// off): the deterministic graph used for end-to-end gradient checks.
    pub fn forward_eval_traced(&self, x: &Tensor4<T>) -> Result<(Tensor4<T>, ForwardTrace<T>)> {
        self.check_input(x)?;
        let slope = self.config.leaky_slope;
        let mut down_traces = Vec::with_capacity(N_DOWN);
        let mut cur = x.clone();
        for (i, block) in self.down.iter().enumerate() {
            let input = cur;
            let conv_out = conv2d(&input, &block.weight, None, 2, 1)
                .map_err(|e| Error::invalid(format!("down{}", i + 1), e.to_string()))?;
            let (pre_act, norm) = match &block.bn {
                Some(bn) => (
                    batch_norm_eval(&conv_out, bn, BN_EPS),
                    NormTrace::Eval(conv_out),
                ),
                None => (conv_out, NormTrace::Absent),
            };
            cur = leaky_relu(&pre_act, slope);
            down_traces.push(BlockTrace {
                input,
                norm,
                dropout_mask: None,
                pre_act,
            });
        }
        let mut gate_traces = Vec::new();
        let mut up_traces = Vec::with_capacity(N_UP);
        for j in 0..N_UP {
            let stage_in = cur;
            let skip = &down_traces[N_DOWN - 1 - j].input;
            let gated = if self.config.variant == Variant::AttentionUNet {
                let (out, _alpha, trace) = gate_forward(&self.gates[j], &stage_in, skip, true)?;
                gate_traces.push(trace.expect("trace requested"));
                out
            } else {
                skip.clone()
            };
            let block = &self.up[j];
            let conv_out = upconv4(&stage_in, &block.weight)
                .map_err(|e| Error::invalid(format!("up{}", j + 1), e.to_string()))?;
            let pre_act = batch_norm_eval(&conv_out, &block.bn, BN_EPS);
            let activated = relu(&pre_act);
            cur = concat_channels(&activated, &gated)?;
            up_traces.push(BlockTrace {
                input: stage_in,
                norm: NormTrace::Eval(conv_out),
                dropout_mask: None,
                pre_act,
            });
        }
        let head_input = cur;
        let pre = transposed_conv2d(&head_input, &self.head_weight, Some(&self.head_bias), 2, 1)
            .map_err(|e| Error::invalid("head", e.to_string()))?;
        let output = sigmoid(&pre);
        let trace = ForwardTrace {
            down: down_traces,
            gates: gate_traces,
            up: up_traces,
            head_input,
            output: output.clone(),
        };
        Ok((output, trace))
    }

    /// Lean inference path: running-stat normalization, dropout off, no
    /// trace allocation. Optionally captures attention maps and per-block
    /// output shapes (named after the architecture-table rows).
    pub fn forward_eval_full(
        &self,
        x: &Tensor4<T>,
        capture_attention: bool,
        capture_shapes: bool,
    ) -> Result<(Tensor4<T>, AttentionCapture<T>, Option<Vec<(String, [usize; 4])>>)> {
        self.check_input(x)?;
        let slope = self.config.leaky_slope;
        let mut shapes = capture_shapes.then(Vec::new);
        let record = |shapes: &mut Option<Vec<(String, [usize; 4])>>,
                      name: String,
                      t: &Tensor4<T>| {
            if let Some(s) = shapes {
                s.push((name, [t.n, t.c, t.h, t.w]));
            }
        };
        let mut maps = Vec::new();
        let mut skips: Vec<Tensor4<T>> = Vec::with_capacity(N_UP);
        let mut cur = x.clone();
        for (i, block) in self.down.iter().enumerate() {
            let conv_out = conv2d(&cur, &block.weight, None, 2, 1)
                .map_err(|e| Error::invalid(format!("down{}", i + 1), e.to_string()))?;
            let pre_act = match &block.bn {
                Some(bn) => batch_norm_eval(&conv_out, bn, BN_EPS),
                None => conv_out,
            };
            let out = leaky_relu(&pre_act, slope);
            record(&mut shapes, format!("down{}", i + 1), &out);
            if i < N_DOWN - 1 {
                skips.push(out.clone());
            }
            cur = out;
        }
        for j in 0..N_UP {
            let skip = &skips[N_UP - 1 - j];
            let gated = if self.config.variant == Variant::AttentionUNet {
                let want_alpha = capture_attention;
                let (out, alpha, _) = gate_forward(&self.gates[j], &cur, skip, false)?;
                record(&mut shapes, format!("gate{}", j + 1), &out);
                if want_alpha {
                    maps.push(alpha);
                }
                out
            } else {
                skip.clone()
            };
            let block = &self.up[j];
            let conv_out = upconv4(&cur, &block.weight)
                .map_err(|e| Error::invalid(format!("up{}", j + 1), e.to_string()))?;
            let activated = relu(&batch_norm_eval(&conv_out, &block.bn, BN_EPS));
            record(&mut shapes, format!("up{}", j + 1), &activated);
            cur = concat_channels(&activated, &gated)?;
            record(&mut shapes, format!("concat{}", j + 1), &cur);
        }
        let pre = transposed_conv2d(&cur, &self.head_weight, Some(&self.head_bias), 2, 1)
            .map_err(|e| Error::invalid("head", e.to_string()))?;
        let output = sigmoid(&pre);
        record(&mut shapes, "head".to_string(), &output);
        let capture = if !capture_attention {
            AttentionCapture::NotRequested
        } else if self.config.variant == Variant::UNet {
            AttentionCapture::Unsupported
        } else {
            AttentionCapture::Maps(AttentionMaps { maps })
        };
        Ok((output, capture, shapes))
    }

    /// Plain eval-mode prediction.
    pub fn forward_eval(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        Ok(self.forward_eval_full(x, false, false)?.0)
    }

    /// Monte-Carlo pass: dropout active, normalization in running-stat mode.
    pub fn forward_mc(&self, x: &Tensor4<T>, rng: &mut ChaCha8Rng) -> Result<Tensor4<T>> {
        self.check_input(x)?;
        let slope = self.config.leaky_slope;
        let rate = self.config.dropout_rate;
        let mut skips: Vec<Tensor4<T>> = Vec::with_capacity(N_UP);
        let mut cur = x.clone();
        for (i, block) in self.down.iter().enumerate() {
            let conv_out = conv2d(&cur, &block.weight, None, 2, 1)
                .map_err(|e| Error::invalid(format!("down{}", i + 1), e.to_string()))?;
            let mut pre_act = match &block.bn {
                Some(bn) => batch_norm_eval(&conv_out, bn, BN_EPS),
                None => conv_out,
            };
            if block.has_dropout && rate > 0.0 {
                pre_act = dropout(&pre_act, rate, rng)?.0;
            }
            let out = leaky_relu(&pre_act, slope);
            if i < N_DOWN - 1 {
                skips.push(out.clone());
            }
            cur = out;
        }
        for j in 0..N_UP {
            let skip = &skips[N_UP - 1 - j];
            let gated = if self.config.variant == Variant::AttentionUNet {
                gate_forward(&self.gates[j], &cur, skip, false)?.0
            } else {
                skip.clone()
            };
            let block = &self.up[j];
            let conv_out = upconv4(&cur, &block.weight)
                .map_err(|e| Error::invalid(format!("up{}", j + 1), e.to_string()))?;
            let mut pre_act = batch_norm_eval(&conv_out, &block.bn, BN_EPS);
            if block.has_dropout && rate > 0.0 {
                pre_act = dropout(&pre_act, rate, rng)?.0;
            }
            cur = concat_channels(&relu(&pre_act), &gated)?;
        }
        let pre = transposed_conv2d(&cur, &self.head_weight, Some(&self.head_bias), 2, 1)
            .map_err(|e| Error::invalid("head", e.to_string()))?;
        Ok(sigmoid(&pre))
    }

    /// Reverse pass over a traced forward; parameter gradients accumulate
    /// into `grads` (a [`Model::zeros_like`] accumulator). Returns the input
    /// gradient.
    pub fn backward(
        &self,
        trace: &ForwardTrace<T>,
        dy: &Tensor4<T>,
        grads: &mut Model<T>,
    ) -> Result<Tensor4<T>> {
        let slope = self.config.leaky_slope;
        let d_pre = sigmoid_backward(&trace.output, dy);
        let (d_head_in, d_head_w, d_head_b) =
            transposed_conv2d_backward(&trace.head_input, &self.head_weight, &d_pre, 2, 1)?;
        grads.head_weight.accumulate(&d_head_w);
        for (g, d) in grads.head_bias.iter_mut().zip(&d_head_b) {
            *g = *g + *d;
        }

        let up_out = self.config.up_out_channels();
        let mut skip_grads: [Option<Tensor4<T>>; N_UP] = [None, None, None];
        let mut d_stage = d_head_in;
        for j in (0..N_UP).rev() {
            let (d_act, d_gated) = concat_channels_backward(&d_stage, up_out[j]);
            let skip = &trace.down[N_DOWN - 1 - j].input;
            let mut d_gate_signal = None;
            let d_skip = if self.config.variant == Variant::AttentionUNet {
                let (d_x, d_g) = gate_backward(
                    &self.gates[j],
                    &trace.gates[j],
                    &trace.up[j].input,
                    skip,
                    &d_gated,
                    &mut grads.gates[j],
                )?;
                d_gate_signal = Some(d_g);
                d_x
            } else {
                d_gated
            };
            // Skip tap j gates s_{N_UP-j}: stage 0 uses the coarsest skip.
            skip_grads[N_UP - 1 - j] = Some(d_skip);

            let bt = &trace.up[j];
            let block = &self.up[j];
            let mut d = relu_backward(&bt.pre_act, &d_act);
            if let Some(mask) = &bt.dropout_mask {
                d = dropout_backward(mask, &d);
            }
            d = backprop_norm(&bt.norm, &block.bn, Some(&mut grads.up[j].bn), &d);
            let (d_in, d_w) = upconv4_backward(&bt.input, &block.weight, &d)?;
            grads.up[j].weight.accumulate(&d_w);
            d_stage = d_in;
            if let Some(dg) = d_gate_signal {
                d_stage.accumulate(&dg);
            }
        }

        let mut d = d_stage;
        for i in (0..N_DOWN).rev() {
            let bt = &trace.down[i];
            let block = &self.down[i];
            let mut dd = leaky_relu_backward(&bt.pre_act, slope, &d);
            if let Some(mask) = &bt.dropout_mask {
                dd = dropout_backward(mask, &dd);
            }
            if let Some(bn) = &block.bn {
                let gbn = grads.down[i].bn.as_mut().expect("grads mirror model");
                dd = backprop_norm(&bt.norm, bn, Some(gbn), &dd);
            }
            let (d_in, d_w, _) = conv2d_backward(&bt.input, &block.weight, &dd, 2, 1)?;
            grads.down[i].weight.accumulate(&d_w);
            d = d_in;
            if i >= 1 {
                if let Some(sg) = skip_grads[i - 1].take() {
                    d.accumulate(&sg);
                }
            }
        }
        Ok(d)
    }

    /// Per-block parameter counts (running statistics included, matching the
    /// published table's totals) plus the grand total.
    pub fn count_parameters(&self) -> (usize, Vec<(String, usize)>) {
        let mut rows = Vec::new();
        for (i, block) in self.down.iter().enumerate() {
            let mut n = block.weight.numel();
            if let Some(bn) = &block.bn {
                n += 4 * bn.gamma.len();
            }
            rows.push((format!("down{}", i + 1), n));
        }
        for (j, gate) in self.gates.iter().enumerate() {
            let n = gate.w_x.numel()
                + gate.w_g.numel()
                + gate.b_g.len()
                + gate.psi.numel()
                + gate.b_psi.len();
            rows.push((format!("gate{}", j + 1), n));
        }
        for (j, block) in self.up.iter().enumerate() {
            let n = block.weight.numel() + 4 * block.bn.gamma.len();
            rows.push((format!("up{}", j + 1), n));
        }
        rows.push((
            "head".to_string(),
            self.head_weight.numel() + self.head_bias.len(),
        ));
        let total = rows.iter().map(|(_, n)| n).sum();
        (total, rows)
    }

    /// The count table as aligned text.
    pub fn parameter_table(&self) -> String {
        let (total, rows) = self.count_parameters();
        let mut out = String::from("block      parameters\n");
        for (name, n) in &rows {
            out.push_str(&format!("{name:<10} {n}\n"));
        }
        out.push_str(&format!("{:<10} {total}\n", "total"));
        out
    }
}

fn backprop_norm<T: Scalar>(
    trace: &NormTrace<T>,
    bn: &BnParams<T>,
    grads: Option<&mut BnParams<T>>,
    dy: &Tensor4<T>,
) -> Tensor4<T> {
    let (dx, dgamma, dbeta) = match trace {
        NormTrace::Absent => return dy.clone(),
        NormTrace::Train(cache) => batch_norm_train_backward(cache, &bn.gamma, dy),
        NormTrace::Eval(x) => batch_norm_eval_backward(x, bn, BN_EPS, dy),
    };
    if let Some(g) = grads {
        for (acc, d) in g.gamma.iter_mut().zip(&dgamma) {
            *acc = *acc + *d;
        }
        for (acc, d) in g.beta.iter_mut().zip(&dbeta) {
            *acc = *acc + *d;
        }
    }
    dx
}

fn gate_forward<T: Scalar>(
    gate: &AttentionGate<T>,
    g: &Tensor4<T>,
    x: &Tensor4<T>,
    want_trace: bool,
) -> Result<(Tensor4<T>, Tensor4<T>, Option<GateTrace<T>>)> {
    if g.h * 2 != x.h || g.w * 2 != x.w || g.n != x.n {
        return Err(Error::shape(
            "attention gate",
            format!("gating dims ({}, {}) = skip dims / 2", x.h / 2, x.w / 2),
            format!("({}, {})", g.h, g.w),
        ));
    }
    let xl = conv2d(x, &gate.w_x, None, 2, 0)?;
    let gl = conv2d(g, &gate.w_g, Some(&gate.b_g), 1, 0)?;
    let mut t_pre = xl;
    t_pre.accumulate(&gl);
    let t = relu(&t_pre);
    let p = conv2d(&t, &gate.psi, Some(&gate.b_psi), 1, 0)?;
    let alpha_small = sigmoid(&p);
    let alpha = upsample_nearest(&alpha_small, 2);
    let out = mul_channel_broadcast(x, &alpha)?;
    let trace = want_trace.then(|| GateTrace {
        t_pre,
        t,
        alpha_small: alpha_small.clone(),
        alpha: alpha.clone(),
    });
    Ok((out, alpha, trace))
}

/// Gate a skip connection: `(α ⊙ x, α)` with `α = σ(ψ ReLU(W_x x↓ + W_g g + b))`
/// upsampled back to the skip's resolution.
pub fn attention_gate<T: Scalar>(
    gate: &AttentionGate<T>,
    g: &Tensor4<T>,
    x: &Tensor4<T>,
) -> Result<(Tensor4<T>, Tensor4<T>)> {
    let (out, alpha, _) = gate_forward(gate, g, x, false)?;
    Ok((out, alpha))
}

/// Returns `(d_skip, d_gating)`; parameter gradients accumulate into `grads`.
fn gate_backward<T: Scalar>(
    gate: &AttentionGate<T>,
    trace: &GateTrace<T>,
    g: &Tensor4<T>,
    x: &Tensor4<T>,
    d_out: &Tensor4<T>,
    grads: &mut AttentionGate<T>,
) -> Result<(Tensor4<T>, Tensor4<T>)> {
    let (mut d_x, d_alpha) = mul_channel_broadcast_backward(x, &trace.alpha, d_out);
    let d_alpha_small = upsample_nearest_backward(&d_alpha, 2);
    let d_p = sigmoid_backward(&trace.alpha_small, &d_alpha_small);
    let (d_t, d_psi, d_bpsi) = conv2d_backward(&trace.t, &gate.psi, &d_p, 1, 0)?;
    grads.psi.accumulate(&d_psi);
    for (acc, d) in grads.b_psi.iter_mut().zip(&d_bpsi) {
        *acc = *acc + *d;
    }
    let d_t_pre = relu_backward(&trace.t_pre, &d_t);
    let (d_g, d_wg, d_bg) = conv2d_backward(g, &gate.w_g, &d_t_pre, 1, 0)?;
    grads.w_g.accumulate(&d_wg);
    for (acc, d) in grads.b_g.iter_mut().zip(&d_bg) {
        *acc = *acc + *d;
    }
    let (d_x_gate, d_wx, _) = conv2d_backward(x, &gate.w_x, &d_t_pre, 2, 0)?;
    grads.w_x.accumulate(&d_wx);
    d_x.accumulate(&d_x_gate);
    Ok((d_x, d_g))
}

/// One named parameter array: `(name, shape, len)` in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

impl<T: Scalar> Model<T> {
    /// Canonical parameter enumeration. `trainable_only` skips running
    /// statistics (optimizer view); otherwise every array is listed
    /// (checkpoint view). The three accessors below share this ordering.
    pub fn param_infos(&self, trainable_only: bool) -> Vec<ParamInfo> {
        let mut infos = Vec::new();
        self.for_each_param(trainable_only, |name, shape, _| {
            infos.push(ParamInfo {
                name: name.to_string(),
                shape,
            });
        });
        infos
    }

    fn for_each_param(
        &self,
        trainable_only: bool,
        mut f: impl FnMut(&str, Vec<usize>, &[T]),
    ) {
        let bn_entries = |prefix: &str,
                          bn: &BnParams<T>,
                          f: &mut dyn FnMut(&str, Vec<usize>, &[T])| {
            let c = bn.gamma.len();
            f(&format!("{prefix}.gamma"), vec![c], &bn.gamma);
            f(&format!("{prefix}.beta"), vec![c], &bn.beta);
            if !trainable_only {
                f(&format!("{prefix}.running_mean"), vec![c], &bn.running_mean);
                f(&format!("{prefix}.running_var"), vec![c], &bn.running_var);
            }
        };
        for (i, block) in self.down.iter().enumerate() {
            let p = format!("down{}", i + 1);
            let (n, c, h, w) = block.weight.dims();
            f(&format!("{p}.weight"), vec![n, c, h, w], &block.weight.data);
            if let Some(bn) = &block.bn {
                bn_entries(&format!("{p}.bn"), bn, &mut f);
            }
        }
        for (j, gate) in self.gates.iter().enumerate() {
            let p = format!("gate{}", j + 1);
            let (n, c, h, w) = gate.w_x.dims();
            f(&format!("{p}.w_x"), vec![n, c, h, w], &gate.w_x.data);
            let (n, c, h, w) = gate.w_g.dims();
            f(&format!("{p}.w_g"), vec![n, c, h, w], &gate.w_g.data);
            f(&format!("{p}.b_g"), vec![gate.b_g.len()], &gate.b_g);
            let (n, c, h, w) = gate.psi.dims();
            f(&format!("{p}.psi"), vec![n, c, h, w], &gate.psi.data);
            f(&format!("{p}.b_psi"), vec![gate.b_psi.len()], &gate.b_psi);
        }
        for (j, block) in self.up.iter().enumerate() {
            let p = format!("up{}", j + 1);
            let (n, c, h, w) = block.weight.dims();
            f(&format!("{p}.weight"), vec![n, c, h, w], &block.weight.data);
            bn_entries(&format!("{p}.bn"), &block.bn, &mut f);
        }
        let (n, c, h, w) = self.head_weight.dims();
        f("head.weight", vec![n, c, h, w], &self.head_weight.data);
        f("head.bias", vec![self.head_bias.len()], &self.head_bias);
    }

    /// Immutable slices in canonical order.
    pub fn param_slices(&self, trainable_only: bool) -> Vec<&[T]> {
        let mut out = Vec::new();
        self.for_each_param(trainable_only, |_, _, slice| {
            // Lifetime of `slice` is tied to `self`, re-borrow through raw
            // parts to decouple from the closure's short borrow.
            out.push((slice.as_ptr(), slice.len()));
        });
        out.into_iter()
            .map(|(ptr, len)| unsafe { std::slice::from_raw_parts(ptr, len) })
            .collect()
    }

    /// Mutable slices in canonical order (disjoint fields, collected
    /// per-block to satisfy the borrow checker).
    pub fn param_slices_mut(&mut self, trainable_only: bool) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for block in &mut self.down {
            out.push(&mut block.weight.data);
            if let Some(bn) = &mut block.bn {
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
                if !trainable_only {
                    out.push(&mut bn.running_mean);
                    out.push(&mut bn.running_var);
                }
            }
        }
        for gate in &mut self.gates {
            out.push(&mut gate.w_x.data);
            out.push(&mut gate.w_g.data);
            out.push(&mut gate.b_g);
            out.push(&mut gate.psi.data);
            out.push(&mut gate.b_psi);
        }
        for block in &mut self.up {
            out.push(&mut block.weight.data);
            out.push(&mut block.bn.gamma);
            out.push(&mut block.bn.beta);
            if !trainable_only {
                out.push(&mut block.bn.running_mean);
                out.push(&mut block.bn.running_var);
            }
        }
        out.push(&mut self.head_weight.data);
        out.push(&mut self.head_bias);
        out
    }
}
