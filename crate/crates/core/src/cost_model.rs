//! Weight and multiply-accumulate counting for MLP and CNN topologies.
//!
//! Biases, pooling and activation functions are not costed: a fully
//! connected pair of layers `(a, b)` contributes `a * b` weights and as many
//! MACs; a convolution with `C` input channels, `F` filters and an `N x N`
//! kernel contributes `F * C * N^2` weights and that many MACs per output
//! pixel. Convolutions are valid (no padding) with stride 1, pooling uses
//! non-overlapping `K x K` windows and floors the spatial size.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConvLayer {
    pub filters: usize,
    pub kernel: usize,
    pub pool: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Topology {
    /// `(channels, height, width)`; an MLP on flat input uses `(n, 1, 1)`.
    pub input_shape: [usize; 3],
    pub conv_layers: Vec<ConvLayer>,
    pub fc_layers: Vec<usize>,
    pub output_nodes: usize,
}

/// Spatial bookkeeping of one convolution + pooling stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub pooled_h: usize,
    pub pooled_w: usize,
}

impl Topology {
    pub fn mlp(layer_sizes: &[usize]) -> Result<Topology> {
        if layer_sizes.len() < 2 {
            return Err(Error::validation("an MLP needs at least an input and an output layer"));
        }
        let t = Topology {
            input_shape: [layer_sizes[0], 1, 1],
            conv_layers: vec![],
            fc_layers: layer_sizes[1..layer_sizes.len() - 1].to_vec(),
            output_nodes: layer_sizes[layer_sizes.len() - 1],
        };
        t.conv_shapes()?;
        Ok(t)
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    /// Shapes of every convolutional stage, or the first infeasible layer.
    pub fn conv_shapes(&self) -> Result<Vec<ConvShape>> {
        if self.input_shape.contains(&0) {
            return Err(Error::InfeasibleTopology {
                layer: "input".into(),
                reason: format!("non-positive input shape {:?}", self.input_shape),
            });
        }
        if self.output_nodes == 0 {
            return Err(Error::InfeasibleTopology {
                layer: "output".into(),
                reason: "no output nodes".into(),
            });
        }
        if let Some(i) = self.fc_layers.iter().position(|&n| n == 0) {
            return Err(Error::InfeasibleTopology {
                layer: format!("fc {}", i + 1),
                reason: "zero nodes".into(),
            });
        }
        let [mut c, mut h, mut w] = self.input_shape;
        let mut shapes = Vec::with_capacity(self.conv_layers.len());
        for (i, layer) in self.conv_layers.iter().enumerate() {
            let name = format!("conv {}", i + 1);
            if layer.filters == 0 || layer.kernel == 0 || layer.pool == 0 {
                return Err(Error::InfeasibleTopology {
                    layer: name,
                    reason: format!("non-positive layer parameters {layer:?}"),
                });
            }
            if layer.kernel > h || layer.kernel > w {
                return Err(Error::InfeasibleTopology {
                    layer: name,
                    reason: format!("kernel {0}x{0} larger than {h}x{w} input", layer.kernel),
                });
            }
            let (out_h, out_w) = (h - layer.kernel + 1, w - layer.kernel + 1);
            let (pooled_h, pooled_w) = (out_h / layer.pool, out_w / layer.pool);
            if pooled_h == 0 || pooled_w == 0 {
                return Err(Error::InfeasibleTopology {
                    layer: name,
                    reason: format!(
                        "pool {0}x{0} larger than {out_h}x{out_w} feature map",
                        layer.pool
                    ),
                });
            }
            shapes.push(ConvShape {
                in_channels: c,
                in_h: h,
                in_w: w,
                out_h,
                out_w,
                pooled_h,
                pooled_w,
            });
            c = layer.filters;
            h = pooled_h;
            w = pooled_w;
        }
        Ok(shapes)
    }

    /// Length of the vector entering the fully connected stage.
    pub fn flattened_len(&self) -> Result<usize> {
        let shapes = self.conv_shapes()?;
        Ok(match (shapes.last(), self.conv_layers.last()) {
            (Some(s), Some(l)) => l.filters * s.pooled_h * s.pooled_w,
            _ => self.input_len(),
        })
    }

    /// `[flattened, fc..., output]`
    pub fn fc_sizes(&self) -> Result<Vec<usize>> {
        let mut sizes = Vec::with_capacity(self.fc_layers.len() + 2);
        sizes.push(self.flattened_len()?);
        sizes.extend_from_slice(&self.fc_layers);
        sizes.push(self.output_nodes);
        Ok(sizes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub weights: u64,
    pub macs: u64,
}

/// Normalized unit costs. Defaults: one weight fetch from DRAM costs 139
/// MAC-equivalents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostParams {
    pub weight_unit_cost: f64,
    pub mac_unit_cost: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams {
            weight_unit_cost: 139.0,
            mac_unit_cost: 1.0,
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.weight_unit_cost >= 0.0 && self.mac_unit_cost >= 0.0)
            || !self.weight_unit_cost.is_finite()
            || !self.mac_unit_cost.is_finite()
        {
            return Err(Error::validation("unit costs must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub num_weights: u64,
    pub num_macs: u64,
    pub total: f64,
}

pub fn mlp_counts(layer_sizes: &[usize]) -> Result<Counts> {
    if layer_sizes.len() < 2 {
        return Err(Error::validation(format!(
            "need at least two layers, got {}",
            layer_sizes.len()
        )));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::validation("layer sizes must be >= 1"));
    }
    let weights = layer_sizes
        .windows(2)
        .map(|w| w[0] as u64 * w[1] as u64)
        .sum();
    Ok(Counts {
        weights,
        macs: weights,
    })
}

pub fn cnn_counts(topology: &Topology) -> Result<Counts> {
    let shapes = topology.conv_shapes()?;
    let mut counts = Counts::default();
    for (layer, s) in topology.conv_layers.iter().zip(&shapes) {
        let kernel_weights = (layer.filters * s.in_channels * layer.kernel * layer.kernel) as u64;
        counts.weights += kernel_weights;
        counts.macs += kernel_weights * (s.out_h * s.out_w) as u64;
    }
    let fc = mlp_counts(&topology.fc_sizes()?)?;
    counts.weights += fc.weights;
    counts.macs += fc.macs;
    Ok(counts)
}

pub fn total_cost(counts: Counts, params: &CostParams) -> f64 {
    counts.weights as f64 * params.weight_unit_cost + counts.macs as f64 * params.mac_unit_cost
}

pub fn breakdown(topology: &Topology, params: &CostParams) -> Result<CostBreakdown> {
    let counts = cnn_counts(topology)?;
    Ok(CostBreakdown {
        num_weights: counts.weights,
        num_macs: counts.macs,
        total: total_cost(counts, params),
    })
}
