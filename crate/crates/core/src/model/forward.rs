//! Forward passes of the network blocks, recorded on the parameters' tape.
//!
//! Feature maps are `N×C×H×W` (a single `C×H×W` map also works). A batch of
//! `N` sequences of length `S` enters [`model_forward`] as `N·S` frames laid
//! out sequence-major: frame `t` of sequence `n` is row `n·S + t`.

use super::layers::{block_convs, decoder_channels, DECODER_BLOCKS, ENCODER_BLOCKS, HEAD, SCNN_PREFIX};
use super::{Bound, ModelError, ModelSpec, Result, ScnnMixing, ScnnPlacement};
use crate::autograd::Var;
use crate::tensor::{Element, Tensor};

/// SCNN propagation directions, applied in this order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Down,
    Up,
    Right,
    Left,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Down, Direction::Up, Direction::Right, Direction::Left];

    pub fn tag(self) -> &'static str {
        match self {
            Direction::Down => "d",
            Direction::Up => "u",
            Direction::Right => "r",
            Direction::Left => "l",
        }
    }

    /// Down/Up pass messages between rows.
    pub fn is_vertical(self) -> bool {
        matches!(self, Direction::Down | Direction::Up)
    }

    fn forward(self) -> bool {
        matches!(self, Direction::Down | Direction::Right)
    }
}

pub struct EncoderOutput<'t, E: Element> {
    pub bottleneck: Var<'t, E>,
    /// Pre-pool outputs of the first four blocks, finest first.
    pub skips: [Var<'t, E>; 4],
}

fn channel_axis(shape: &[usize]) -> usize {
    shape.len() - 3
}

fn conv_relu<'t, E: Element>(p: &Bound<'t, E>, name: &str, x: Var<'t, E>) -> Result<Var<'t, E>> {
    let y = x.conv2d(p.get(&format!("{name}.weight"))?, Some(p.get(&format!("{name}.bias"))?))?;
    Ok(y.relu()?)
}

fn double_conv<'t, E: Element>(p: &Bound<'t, E>, block: &str, x: Var<'t, E>) -> Result<Var<'t, E>> {
    let [c1, c2] = block_convs(block);
    conv_relu(p, &c2, conv_relu(p, &c1, x)?)
}

fn check_frames(spec: &ModelSpec, shape: &[usize]) -> Result<()> {
    let ok = matches!(shape.len(), 3 | 4)
        && shape[shape.len() - 3] == 3
        && shape[shape.len() - 2] == spec.input_height
        && shape[shape.len() - 1] == spec.input_width;
    if ok {
        Ok(())
    } else {
        Err(ModelError::InputMismatch(format!(
            "frames {shape:?} do not match a 3×{}×{} spec",
            spec.input_height, spec.input_width
        )))
    }
}

/// Per-frame encoder; SCNN variants include their message passing.
pub fn encoder_forward<'t, E: Element>(
    p: &Bound<'t, E>,
    spec: &ModelSpec,
    frames: Var<'t, E>,
) -> Result<EncoderOutput<'t, E>> {
    check_frames(spec, &frames.shape())?;
    let scnn = spec.variant.has_scnn();
    let mut x = frames;
    let mut skips = Vec::with_capacity(4);
    for (i, block) in ENCODER_BLOCKS.iter().enumerate() {
        if i > 0 {
            x = x.maxpool2()?;
        }
        x = double_conv(p, block, x)?;
        if i == 0 && scnn && spec.scnn_placement == ScnnPlacement::FirstBlock {
            x = scnn_message_pass(p, spec, x, &Direction::ALL)?;
        }
        if i < 4 {
            skips.push(x);
        }
    }
    if scnn && spec.scnn_placement == ScnnPlacement::Bottleneck {
        x = scnn_message_pass(p, spec, x, &Direction::ALL)?;
    }
    let skips = skips.try_into().map_err(|_| ModelError::InvalidSpec("encoder depth".into()))?;
    Ok(EncoderOutput { bottleneck: x, skips })
}

/// Sequential slice-by-slice message passing over `directions`, in the given order.
///
/// For each direction, slice `i` becomes `slice_i + relu(conv1d(slice_{i−1}))`
/// where `slice_{i−1}` is already updated, so information crosses the whole map.
pub fn scnn_message_pass<'t, E: Element>(
    p: &Bound<'t, E>,
    spec: &ModelSpec,
    feature: Var<'t, E>,
    directions: &[Direction],
) -> Result<Var<'t, E>> {
    let shape = feature.shape();
    let rank = shape.len();
    if !matches!(rank, 3 | 4) {
        return Err(ModelError::InputMismatch(format!("SCNN expects a C×H×W map, got {shape:?}")));
    }
    let (h, w) = (shape[rank - 2], shape[rank - 1]);
    let mut x = feature;
    for &dir in directions {
        let kernel = p.get(&format!("{SCNN_PREFIX}.{}.weight", dir.tag()))?;
        let k = spec.scnn_kernel_len;
        let (axis, count, extent) = if dir.is_vertical() { (rank - 2, h, w) } else { (rank - 1, w, h) };
        if k > extent {
            return Err(ModelError::InvalidSpec(format!(
                "slice kernel of length {k} is longer than the slice extent {extent}"
            )));
        }
        let mut slices: Vec<Var<'t, E>> = (0..count).map(|i| x.narrow(axis, i, 1)).collect::<Result<_, _>>()?;
        let order: Vec<(usize, usize)> = if dir.forward() {
            (1..count).map(|i| (i - 1, i)).collect()
        } else {
            (0..count.saturating_sub(1)).rev().map(|i| (i + 1, i)).collect()
        };
        for (from, to) in order {
            let msg = match spec.scnn_mixing {
                ScnnMixing::Depthwise => slices[from].depthwise_conv2d(kernel)?,
                ScnnMixing::Full => slices[from].conv2d(kernel, None)?,
            };
            slices[to] = slices[to].add(msg.relu()?)?;
        }
        x = Var::concat(&slices, axis)?;
    }
    Ok(x)
}

fn zeros_like<'t, E: Element>(x: Var<'t, E>) -> Var<'t, E> {
    x.tape().constant(Tensor::zeros(&x.shape()))
}

/// Stacked ConvLSTM over the per-step bottlenecks; returns the top layer's last hidden state.
pub fn convlstm_forward<'t, E: Element>(
    p: &Bound<'t, E>,
    spec: &ModelSpec,
    steps: &[Var<'t, E>],
) -> Result<Var<'t, E>> {
    let first = *steps.first().ok_or_else(|| ModelError::InputMismatch("empty sequence".into()))?;
    let shape = first.shape();
    let ax = channel_axis(&shape);
    let c = shape[ax];
    let mut inputs = steps.to_vec();
    for l in 0..spec.convlstm_layers {
        let w = p.get(&format!("lstm.{l}.weight"))?;
        let b = p.get(&format!("lstm.{l}.bias"))?;
        let ws = w.shape();
        if ws[0] != 4 * c || ws[1] != 2 * c {
            return Err(ModelError::ParamShape {
                name: format!("lstm.{l}.weight"),
                expected: vec![4 * c, 2 * c, ws[2], ws[3]],
                found: ws,
            });
        }
        let mut h = zeros_like(first);
        let mut cell = h;
        let mut outputs = Vec::with_capacity(inputs.len());
        for x in &inputs {
            let gates = Var::concat(&[*x, h], ax)?.conv2d(w, Some(b))?;
            let i = gates.narrow(ax, 0, c)?.sigmoid()?;
            let f = gates.narrow(ax, c, c)?.sigmoid()?;
            let o = gates.narrow(ax, 2 * c, c)?.sigmoid()?;
            let g = gates.narrow(ax, 3 * c, c)?.tanh()?;
            cell = f.mul(cell)?.add(i.mul(g)?)?;
            h = o.mul(cell.tanh()?)?;
            outputs.push(h);
        }
        inputs = outputs;
    }
    Ok(*inputs.last().expect("non-empty"))
}

/// Per-pixel softmax weights across frames, shape `N×S×h×w`.
pub fn attention_weights<'t, E: Element>(p: &Bound<'t, E>, steps: &[Var<'t, E>]) -> Result<Var<'t, E>> {
    let first = *steps.first().ok_or_else(|| ModelError::InputMismatch("empty sequence".into()))?;
    let ax = channel_axis(&first.shape());
    let (w, b) = (p.get("att.score.weight")?, p.get("att.score.bias")?);
    let scores: Vec<_> = steps.iter().map(|x| x.conv2d(w, Some(b))).collect::<Result<_, _>>()?;
    Ok(Var::concat(&scores, ax)?.softmax(ax)?)
}

/// Temporal attention fusion gated per channel by a linear LSTM over pooled frame descriptors.
pub fn attention_fuse<'t, E: Element>(p: &Bound<'t, E>, steps: &[Var<'t, E>]) -> Result<Var<'t, E>> {
    let weights = attention_weights(p, steps)?;
    let shape = steps[0].shape();
    let ax = channel_axis(&shape);
    let (n, c, hw) = (if ax == 1 { shape[0] } else { 1 }, shape[ax], shape[ax + 1] * shape[ax + 2]);

    let mut fused: Option<Var<'t, E>> = None;
    for (s, x) in steps.iter().enumerate() {
        let term = x.mul(weights.narrow(ax, s, 1)?)?;
        fused = Some(match fused {
            None => term,
            Some(acc) => acc.add(term)?,
        });
    }
    let fused = fused.expect("non-empty");

    let (w_ih, w_hh, bias) = (p.get("att.lstm.w_ih")?, p.get("att.lstm.w_hh")?, p.get("att.lstm.bias")?);
    let tape = steps[0].tape();
    let mut h = tape.constant(Tensor::zeros(&[n, c]));
    let mut cell = h;
    for x in steps {
        let d = x.reshape(&[n, c, hw])?.sum_axis(2)?.mul_scalar(1.0 / hw as f64)?;
        let gates = d.linear(w_ih, Some(bias))?.add(h.linear(w_hh, None)?)?;
        let i = gates.narrow(1, 0, c)?.sigmoid()?;
        let f = gates.narrow(1, c, c)?.sigmoid()?;
        let o = gates.narrow(1, 2 * c, c)?.sigmoid()?;
        let g = gates.narrow(1, 3 * c, c)?.tanh()?;
        cell = f.mul(cell)?.add(i.mul(g)?)?;
        h = o.mul(cell.tanh()?)?;
    }
    let mut gate_shape = shape.clone();
    gate_shape[ax + 1] = 1;
    gate_shape[ax + 2] = 1;
    let gate = h.sigmoid()?.reshape(&gate_shape)?;
    Ok(fused.mul(gate)?)
}

/// Four upsampling blocks with skip concatenation, then the 1×1 head.
pub fn decoder_forward<'t, E: Element>(
    p: &Bound<'t, E>,
    spec: &ModelSpec,
    fused: Var<'t, E>,
    skips: &[Var<'t, E>; 4],
) -> Result<Var<'t, E>> {
    let ax = channel_axis(&fused.shape());
    let mut x = fused;
    for (i, (block, _)) in DECODER_BLOCKS.iter().zip(decoder_channels(spec.base_channels)).enumerate() {
        let up = x.conv_transpose2(p.get(&format!("{block}.up.weight"))?, Some(p.get(&format!("{block}.up.bias"))?))?;
        let skip = skips[3 - i];
        let (us, ss) = (up.shape(), skip.shape());
        if us.len() != ss.len() || us[..ax] != ss[..ax] || us[ax + 1..] != ss[ax + 1..] {
            return Err(ModelError::InputMismatch(format!("skip {ss:?} does not match upsampled {us:?}")));
        }
        x = double_conv(p, block, Var::concat(&[skip, up], ax)?)?;
    }
    Ok(x.conv2d(p.get(&format!("{HEAD}.weight"))?, Some(p.get(&format!("{HEAD}.bias"))?))?)
}

/// Full network: `N·S` frames (sequence-major) → `N×head×H×W` outputs for the last frames.
pub fn model_forward<'t, E: Element>(p: &Bound<'t, E>, spec: &ModelSpec, frames: Var<'t, E>) -> Result<Var<'t, E>> {
    let shape = frames.shape();
    check_frames(spec, &shape)?;
    let s = spec.sequence_length;
    if shape.len() != 4 || shape[0] % s != 0 {
        return Err(ModelError::InputMismatch(format!(
            "expected N·S×3×H×W frames with S = {s}, got {shape:?}"
        )));
    }
    let n = shape[0] / s;
    let enc = encoder_forward(p, spec, frames)?;
    let pick = |t: usize| -> Vec<usize> { (0..n).map(|i| i * s + t).collect() };
    let steps: Vec<_> = (0..s).map(|t| enc.bottleneck.index_select(&pick(t))).collect::<Result<_, _>>()?;
    let fused = if spec.variant.uses_attention() {
        attention_fuse(p, &steps)?
    } else {
        convlstm_forward(p, spec, &steps)?
    };
    let last = pick(s - 1);
    let skips = [
        enc.skips[0].index_select(&last)?,
        enc.skips[1].index_select(&last)?,
        enc.skips[2].index_select(&last)?,
        enc.skips[3].index_select(&last)?,
    ];
    decoder_forward(p, spec, fused, &skips)
}
