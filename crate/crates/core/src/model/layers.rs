//! Layer table of a spec: parameter names and shapes plus per-layer MACs.
//!
//! Parameter construction and complexity accounting both read this table,
//! so the two can never disagree.

use super::{ModelSpec, ScnnMixing};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerInfo {
    pub name: String,
    pub kind: &'static str,
    pub params: Vec<(String, Vec<usize>)>,
    /// Multiply-accumulates of one full forward pass over `S` frames.
    pub macs: u64,
    /// Sequential applications of the weights along one pass (slices for SCNN, else 1).
    pub chain: usize,
}

impl LayerInfo {
    pub fn param_count(&self) -> u64 {
        self.params.iter().map(|(_, s)| s.iter().product::<usize>() as u64).sum()
    }
}

struct Table {
    layers: Vec<LayerInfo>,
}

impl Table {
    fn push(&mut self, name: &str, kind: &'static str, params: Vec<(&str, Vec<usize>)>, macs: usize) {
        self.layers.push(LayerInfo {
            name: name.to_string(),
            kind,
            params: params.into_iter().map(|(p, s)| (format!("{name}.{p}"), s)).collect(),
            macs: macs as u64,
            chain: 1,
        });
    }

    #[allow(clippy::too_many_arguments)]
    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, h: usize, w: usize, repeats: usize) {
        let macs = cout * h * w * cin * k * k * repeats;
        self.push(name, "conv", vec![("weight", vec![cout, cin, k, k]), ("bias", vec![cout])], macs);
    }
}

/// Names of the two convolutions in a double-conv block.
pub(super) fn block_convs(block: &str) -> [String; 2] {
    [format!("{block}.conv1"), format!("{block}.conv2")]
}

pub(super) const ENCODER_BLOCKS: [&str; 5] = ["enc.inc", "enc.down1", "enc.down2", "enc.down3", "enc.down4"];
pub(super) const DECODER_BLOCKS: [&str; 4] = ["dec.up1", "dec.up2", "dec.up3", "dec.up4"];
pub(super) const SCNN_PREFIX: &str = "scnn";
pub(super) const HEAD: &str = "head";

/// Encoder channel plan: (input, output) channels of each block.
pub(super) fn encoder_channels(base: usize) -> [(usize, usize); 5] {
    [(3, base), (base, 2 * base), (2 * base, 4 * base), (4 * base, 8 * base), (8 * base, 8 * base)]
}

/// Decoder plan: (upsampled input channels, skip channels, output channels).
pub(super) fn decoder_channels(base: usize) -> [(usize, usize, usize); 4] {
    [
        (8 * base, 8 * base, 4 * base),
        (4 * base, 4 * base, 2 * base),
        (2 * base, 2 * base, base),
        (base, base, base),
    ]
}

/// Every layer of `spec` in forward order.
pub fn layer_table(spec: &ModelSpec) -> Vec<LayerInfo> {
    let mut t = Table { layers: Vec::new() };
    let (hh, ww, s) = (spec.input_height, spec.input_width, spec.sequence_length);
    let scnn_first = spec.variant.has_scnn() && spec.scnn_placement == super::ScnnPlacement::FirstBlock;

    for (i, (block, (cin, cout))) in ENCODER_BLOCKS.iter().zip(encoder_channels(spec.base_channels)).enumerate() {
        let (h, w) = (hh >> i, ww >> i);
        let [c1, c2] = block_convs(block);
        t.conv(&c1, cin, cout, 3, h, w, s);
        t.conv(&c2, cout, cout, 3, h, w, s);
        if i == 0 && scnn_first {
            scnn_layers(&mut t, spec);
        }
    }
    if spec.variant.has_scnn() && !scnn_first {
        scnn_layers(&mut t, spec);
    }

    let c = spec.bottleneck_channels();
    let (bh, bw) = spec.bottleneck_size();
    if spec.variant.uses_attention() {
        t.push("att.score", "conv", vec![("weight", vec![1, c, 1, 1]), ("bias", vec![1])], c * bh * bw * s);
        t.push(
            "att.lstm",
            "linear-lstm",
            vec![("w_ih", vec![4 * c, c]), ("w_hh", vec![4 * c, c]), ("bias", vec![4 * c])],
            8 * c * c * s,
        );
    } else {
        for l in 0..spec.convlstm_layers {
            let name = format!("lstm.{l}");
            let macs = 4 * c * bh * bw * 2 * c * 9 * s;
            t.push(&name, "convlstm", vec![("weight", vec![4 * c, 2 * c, 3, 3]), ("bias", vec![4 * c])], macs);
        }
    }

    for (i, (block, (cup, cskip, cout))) in DECODER_BLOCKS.iter().zip(decoder_channels(spec.base_channels)).enumerate() {
        let (h_in, w_in) = (bh << i, bw << i);
        let (h, w) = (2 * h_in, 2 * w_in);
        t.push(
            &format!("{block}.up"),
            "conv-transpose",
            vec![("weight", vec![cup, cup, 2, 2]), ("bias", vec![cup])],
            cup * cup * 4 * h_in * w_in,
        );
        let [c1, c2] = block_convs(block);
        t.conv(&c1, cup + cskip, cout, 3, h, w, 1);
        t.conv(&c2, cout, cout, 3, h, w, 1);
    }
    t.conv(HEAD, spec.base_channels, spec.head_channels, 1, hh, ww, 1);
    t.layers
}

fn scnn_layers(t: &mut Table, spec: &ModelSpec) {
    let (c, h, w) = spec.scnn_site();
    let k = spec.scnn_kernel_len;
    let s = spec.sequence_length;
    let mix = match spec.scnn_mixing {
        ScnnMixing::Depthwise => 1,
        ScnnMixing::Full => c,
    };
    for dir in super::Direction::ALL {
        let (kh, kw, updates) = if dir.is_vertical() { (1, k, (h - 1) * w) } else { (k, 1, h * (w - 1)) };
        let shape = match spec.scnn_mixing {
            ScnnMixing::Depthwise => vec![c, kh, kw],
            ScnnMixing::Full => vec![c, c, kh, kw],
        };
        t.push(
            &format!("{SCNN_PREFIX}.{}", dir.tag()),
            "scnn",
            vec![("weight", shape)],
            updates * c * mix * k * s,
        );
        t.layers.last_mut().expect("just pushed").chain = if dir.is_vertical() { h } else { w };
    }
}
