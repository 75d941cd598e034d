//! Dilated causal-convolution residual stack with layer-wise parameter sharing.
//!
//! Every layer is `conv(relu(layer_norm(x)))` and every two layers form a
//! residual block `x + layer₂(layer₁(x))`. A sharing scheme only decides
//! which layers point at the same parameter unit; the dataflow is fixed.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::embedding::uniform_tensor;
use crate::numerics::{NumericsError, ParamId, ParamStore, Result, Tape, Tensor, Var};
use crate::partition::distinct_units;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SharingScheme {
    /// Every layer has its own unit.
    None,
    /// A single unit for all layers.
    CrossLayer,
    /// The first block's two units are reused by every block.
    CrossBlock,
    /// Both layers of a block share one unit.
    AdjacentLayer,
    /// Blocks are paired `(1,2), (3,4), …` and each pair shares two units.
    AdjacentBlock,
}

impl SharingScheme {
    pub const ALL: [SharingScheme; 5] = [
        SharingScheme::None,
        SharingScheme::CrossLayer,
        SharingScheme::CrossBlock,
        SharingScheme::AdjacentLayer,
        SharingScheme::AdjacentBlock,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SharingScheme::None => "none",
            SharingScheme::CrossLayer => "cross-layer",
            SharingScheme::CrossBlock => "cross-block",
            SharingScheme::AdjacentLayer => "adjacent-layer",
            SharingScheme::AdjacentBlock => "adjacent-block",
        }
    }

    /// Unit index used by 0-based `layer`.
    pub fn unit_of_layer(self, layer: usize) -> usize {
        let (block, slot) = (layer / 2, layer % 2);
        match self {
            SharingScheme::None => layer,
            SharingScheme::CrossLayer => 0,
            SharingScheme::CrossBlock => slot,
            SharingScheme::AdjacentLayer => block,
            SharingScheme::AdjacentBlock => 2 * (block / 2) + slot,
        }
    }
}

impl fmt::Display for SharingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SharingScheme {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        SharingScheme::ALL
            .into_iter()
            .find(|scheme| scheme.name() == s)
            .ok_or_else(|| {
                format!(
                    "unknown sharing scheme '{s}' (expected one of none, cross-layer, cross-block, adjacent-layer, adjacent-block)"
                )
            })
    }
}

/// Parameters of one layer: conv kernel `w×d×d`, conv bias, norm gain and bias.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerUnit {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub gain: ParamId,
    pub shift: ParamId,
}

impl LayerUnit {
    pub fn param_ids(&self) -> [ParamId; 4] {
        [self.kernel, self.bias, self.gain, self.shift]
    }
}

#[derive(Clone, Debug)]
pub struct Backbone {
    width: usize,
    kernel_width: usize,
    dilations: Vec<usize>,
    scheme: SharingScheme,
    units: Vec<LayerUnit>,
    layer_units: Vec<usize>,
}

impl Backbone {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        width: usize,
        kernel_width: usize,
        dilations: &[usize],
        scheme: SharingScheme,
        rng: &mut R,
    ) -> Result<Self> {
        let layers = dilations.len();
        let num_units =
            distinct_units(layers, scheme).map_err(|e| NumericsError::Contract(e.to_string()))?;
        if width == 0 || kernel_width == 0 {
            return Err(NumericsError::Contract(
                "backbone width and kernel width must be positive".into(),
            ));
        }
        if dilations.contains(&0) {
            return Err(NumericsError::Contract("dilations must be positive".into()));
        }
        let scale = 1.0 / ((kernel_width * width) as f64).sqrt();
        let units = (0..num_units)
            .map(|u| LayerUnit {
                kernel: store.add(
                    format!("backbone.unit{u}.kernel"),
                    uniform_tensor(rng, vec![kernel_width, width, width], scale),
                ),
                bias: store.add(format!("backbone.unit{u}.bias"), Tensor::zeros(vec![width])),
                gain: store.add(
                    format!("backbone.unit{u}.gain"),
                    Tensor::new(vec![width], vec![1.0; width]).expect("gain shape"),
                ),
                shift: store.add(format!("backbone.unit{u}.shift"), Tensor::zeros(vec![width])),
            })
            .collect();
        let layer_units = (0..layers).map(|l| scheme.unit_of_layer(l)).collect();
        Ok(Self {
            width,
            kernel_width,
            dilations: dilations.to_vec(),
            scheme,
            units,
            layer_units,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn kernel_width(&self) -> usize {
        self.kernel_width
    }

    pub fn dilations(&self) -> &[usize] {
        &self.dilations
    }

    pub fn num_layers(&self) -> usize {
        self.dilations.len()
    }

    pub fn num_blocks(&self) -> usize {
        self.dilations.len() / 2
    }

    pub fn scheme(&self) -> SharingScheme {
        self.scheme
    }

    pub fn units(&self) -> &[LayerUnit] {
        &self.units
    }

    /// Parameter unit used by 0-based `layer`.
    pub fn layer_unit(&self, layer: usize) -> &LayerUnit {
        &self.units[self.layer_units[layer]]
    }

    /// Number of distinct parameter units actually referenced by the layers.
    pub fn distinct_parameter_units(&self) -> usize {
        let mut ids: Vec<ParamId> = (0..self.num_layers())
            .map(|l| self.layer_unit(l).kernel)
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.units.iter().flat_map(|u| u.param_ids()).collect()
    }

    /// Span of past positions that can influence one output position.
    pub fn receptive_field(&self) -> usize {
        1 + (self.kernel_width - 1) * self.dilations.iter().sum::<usize>()
    }

    fn layer(&self, tape: &mut Tape<'_>, x: Var, layer: usize) -> Result<Var> {
        let unit = *self.layer_unit(layer);
        let gain = tape.param(unit.gain);
        let shift = tape.param(unit.shift);
        let normed = tape.layer_norm(x, gain, shift)?;
        let act = tape.relu(normed);
        let kernel = tape.param(unit.kernel);
        let bias = tape.param(unit.bias);
        tape.dilated_causal_conv1d(act, kernel, bias, self.dilations[layer])
    }

    /// Maps a `t×d` embedded sequence to `t×d` context vectors; row `τ` only
    /// depends on input rows `≤ τ`.
    pub fn forward(&self, tape: &mut Tape<'_>, embedded: Var) -> Result<Var> {
        let shape = tape.value(embedded).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.width {
            return Err(NumericsError::Shape {
                op: "backbone forward",
                left: vec![0, self.width],
                right: shape,
            });
        }
        let mut x = embedded;
        for block in 0..self.num_blocks() {
            let first = self.layer(tape, x, 2 * block)?;
            let second = self.layer(tape, first, 2 * block + 1)?;
            x = tape.add(x, second)?;
        }
        Ok(x)
    }
}
