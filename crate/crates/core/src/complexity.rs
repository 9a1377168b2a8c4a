//! Static parameter / MAC / activation-memory profiler.
//!
//! Counts are per single image. Convolution MACs are
//! `H_out·W_out·C_out·K_h·K_w·C_in`; transposed convolution MACs are
//! `H_in·W_in·C_in·K_h·K_w·C_out`; pooling, relu and concatenation cost
//! nothing. Activation bytes sum every layer output at 4 bytes per scalar
//! (forward activations only).

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::graph::{LayerKind, ModelGraph, Section};
use crate::scalar::Scalar;

pub const BYTES_PER_SCALAR: u64 = 4;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerCost {
    pub index: usize,
    pub name: String,
    pub section: Section,
    pub params: u64,
    pub macs: u64,
    pub activation_bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ComplexityReport {
    pub input_resolution: (usize, usize),
    pub layers: Vec<LayerCost>,
    pub total_params: u64,
    pub total_macs: u64,
    pub total_activation_bytes: u64,
}

impl ComplexityReport {
    pub fn gmacs(&self) -> f64 {
        self.total_macs as f64 / 1e9
    }

    pub fn activation_mb(&self) -> f64 {
        self.total_activation_bytes as f64 / (1024.0 * 1024.0)
    }

    pub fn param_bytes(&self) -> u64 {
        self.total_params * BYTES_PER_SCALAR
    }

    fn section_total(&self, section: Section, f: impl Fn(&LayerCost) -> u64) -> u64 {
        self.layers.iter().filter(|l| l.section == section).map(f).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,name,params,macs,act_bytes\n");
        for l in &self.layers {
            writeln!(s, "{},{},{},{},{}", l.index, l.name, l.params, l.macs, l.activation_bytes).unwrap();
        }
        writeln!(
            s,
            "total,total,{},{},{}",
            self.total_params, self.total_macs, self.total_activation_bytes
        )
        .unwrap();
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let (h, w) = self.input_resolution;
        writeln!(s, "input {h}x{w}, one image").unwrap();
        writeln!(s, "{:<5} {:<24} {:>10} {:>16} {:>14}", "#", "layer", "params", "MACs", "act bytes").unwrap();
        for l in &self.layers {
            writeln!(
                s,
                "{:<5} {:<24} {:>10} {:>16} {:>14}",
                l.index, l.name, l.params, l.macs, l.activation_bytes
            )
            .unwrap();
        }
        writeln!(
            s,
            "total: {} params ({} bytes), {:.4} GMac, {:.2} MB activations",
            self.total_params,
            self.param_bytes(),
            self.gmacs(),
            self.activation_mb()
        )
        .unwrap();
        s
    }
}

/// Profiles `graph` for one `1×C×h×w` input.
pub fn profile<T: Scalar>(graph: &ModelGraph<T>, input_hw: (usize, usize)) -> Result<ComplexityReport> {
    let (h, w) = input_hw;
    let shapes = graph.node_shapes(&[1, graph.in_channels(), h, w])?;
    let mut layers = Vec::with_capacity(graph.layers().len());
    for (i, layer) in graph.layers().iter().enumerate() {
        let out = shapes[i + 1];
        let inp = shapes[layer.inputs[0].0];
        let macs = match layer.kind {
            LayerKind::Conv2d {
                c_in, c_out, kernel, ..
            } => (out[2] * out[3] * c_out * kernel * kernel * c_in) as u64,
            LayerKind::ConvTranspose2d {
                c_in, c_out, kernel, ..
            } => (inp[2] * inp[3] * c_in * kernel * kernel * c_out) as u64,
            _ => 0,
        };
        layers.push(LayerCost {
            index: i,
            name: layer.name.clone(),
            section: layer.section,
            params: layer.kind.param_count() as u64,
            macs,
            activation_bytes: out.iter().product::<usize>() as u64 * BYTES_PER_SCALAR,
        });
    }
    Ok(ComplexityReport {
        input_resolution: input_hw,
        total_params: layers.iter().map(|l| l.params).sum(),
        total_macs: layers.iter().map(|l| l.macs).sum(),
        total_activation_bytes: layers.iter().map(|l| l.activation_bytes).sum(),
        layers,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Overhead {
    pub params: i64,
    pub macs: i64,
    pub activation_bytes: i64,
    pub relative_params: f64,
    pub relative_macs: f64,
    pub relative_activation_bytes: f64,
}

fn relative(delta: i64, base: u64) -> f64 {
    if base == 0 {
        0.0
    } else {
        delta as f64 / base as f64
    }
}

/// Cost added by the up-scaling stack relative to the baseline.
pub fn upscale_overhead(base: &ComplexityReport, extended: &ComplexityReport) -> Result<Overhead> {
    if base.input_resolution != extended.input_resolution {
        return Err(Error::Usage(format!(
            "reports profile different inputs: {:?} vs {:?}",
            base.input_resolution, extended.input_resolution
        )));
    }
    let params = extended.total_params as i64 - base.total_params as i64;
    let macs = extended.total_macs as i64 - base.total_macs as i64;
    let act = extended.total_activation_bytes as i64 - base.total_activation_bytes as i64;
    Ok(Overhead {
        params,
        macs,
        activation_bytes: act,
        relative_params: relative(params, base.total_params),
        relative_macs: relative(macs, base.total_macs),
        relative_activation_bytes: relative(act, base.total_activation_bytes),
    })
}

/// Share of a report's cost attributed to the up-scaling stack.
pub fn upscale_share(report: &ComplexityReport) -> (u64, u64, u64) {
    (
        report.section_total(Section::Upscale, |l| l.params),
        report.section_total(Section::Upscale, |l| l.macs),
        report.section_total(Section::Upscale, |l| l.activation_bytes),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_unet, build_upscale_stack, BackboneConfig, UpscaleStackConfig};

    #[test]
    fn totals_are_sums() {
        let g = build_unet::<f64>(&BackboneConfig { base_channels: 4, depth: 2, ..Default::default() }, 0).unwrap();
        let r = profile(&g, (16, 16)).unwrap();
        assert_eq!(r.total_macs, r.layers.iter().map(|l| l.macs).sum::<u64>());
        assert_eq!(r.total_params as usize, g.analytic_param_count());
        assert_eq!(r.to_csv().lines().count(), r.layers.len() + 2);
    }

    #[test]
    fn zero_stage_overhead_is_zero() {
        let cfg = BackboneConfig { base_channels: 4, depth: 2, ..Default::default() };
        let base = build_unet::<f64>(&cfg, 0).unwrap();
        let ext = build_upscale_stack(&base, &UpscaleStackConfig::new(0, 1), 1).unwrap();
        let o = upscale_overhead(&profile(&base, (16, 16)).unwrap(), &profile(&ext, (16, 16)).unwrap()).unwrap();
        assert_eq!((o.params, o.macs, o.activation_bytes), (0, 0, 0));
    }

    #[test]
    fn resolution_mismatch_is_usage_error() {
        let g = build_unet::<f64>(&BackboneConfig { base_channels: 4, depth: 2, ..Default::default() }, 0).unwrap();
        let a = profile(&g, (16, 16)).unwrap();
        let b = profile(&g, (32, 32)).unwrap();
        assert!(matches!(upscale_overhead(&a, &b), Err(Error::Usage(_))));
    }
}
