//! Closed-form parameter and multiply-accumulate counts for an [`ArchConfig`].
//!
//! Nothing here allocates tensors; the counts are derived from the config
//! alone so they can be checked against a constructed model.
//!
//! Counting convention: a convolution costs `Cout * Cin/groups * kh * kw * H' * W'`
//! MACs and a linear layer `Fin * Fout`. Gate blending, the gated product, the
//! residual blend, the channel mean feeding the spatial gate and identity skips
//! cost one MAC per output element. Batch norm (foldable at inference),
//! activations and pooling cost nothing. FLOPs are `2 * MACs`.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::nn::attention::{SE_MIN_WIDTH, SE_REDUCTION, SPATIAL_KERNEL};
use crate::nn::config::{channel_progression, ArchConfig};
use crate::schedules::LambdaMode;

pub const CONVENTION: &str = "MACs: conv Cout*Cin/groups*kh*kw*H'*W', linear Fin*Fout, \
gate blend/gated product/residual blend/channel mean/identity skip 1 per element; \
BN, activations, pooling 0. FLOPs = 2*MACs.";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Depthwise,
    BatchNorm,
    Linear,
    Elementwise,
    Scalar,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Conv => "conv",
            Self::Depthwise => "depthwise",
            Self::BatchNorm => "batchnorm",
            Self::Linear => "linear",
            Self::Elementwise => "elementwise",
            Self::Scalar => "scalar",
        }
    }

    pub fn is_convolution(self) -> bool {
        matches!(self, Self::Conv | Self::Depthwise)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CostRow {
    pub name: String,
    pub kind: LayerKind,
    pub params: u64,
    pub macs: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CostReport {
    pub rows: Vec<CostRow>,
    pub input_hw: usize,
}

impl CostReport {
    pub fn params(&self) -> u64 {
        self.rows.iter().map(|r| r.params).sum()
    }

    pub fn macs(&self) -> u64 {
        self.rows.iter().map(|r| r.macs).sum()
    }

    pub fn flops(&self) -> u64 {
        2 * self.macs()
    }

    pub fn conv_macs(&self) -> u64 {
        self.rows.iter().filter(|r| r.kind.is_convolution()).map(|r| r.macs).sum()
    }

    /// Human-readable table with totals and the counting convention.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<44} {:<12} {:>10} {:>14}", "layer", "kind", "params", "macs");
        for r in &self.rows {
            let _ = writeln!(out, "{:<44} {:<12} {:>10} {:>14}", r.name, r.kind.as_str(), r.params, r.macs);
        }
        let _ = writeln!(out, "input: {0}x{0}", self.input_hw);
        let _ = writeln!(out, "total params: {}", self.params());
        let _ = writeln!(out, "total MACs: {}", self.macs());
        let _ = writeln!(out, "total FLOPs: {} ({:.4} G)", self.flops(), self.flops() as f64 / 1e9);
        let _ = writeln!(out, "convention: {CONVENTION}");
        out
    }
}

struct Builder {
    rows: Vec<CostRow>,
}

impl Builder {
    fn push(&mut self, name: impl Into<String>, kind: LayerKind, params: usize, macs: usize) {
        self.rows.push(CostRow {
            name: name.into(),
            kind,
            params: params as u64,
            macs: macs as u64,
        });
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, plane: usize) {
        self.push(name, LayerKind::Conv, cout * cin * k * k, cout * cin * k * k * plane);
    }

    fn bn(&mut self, name: &str, channels: usize) {
        self.push(name, LayerKind::BatchNorm, 2 * channels, 0);
    }
}

/// Parameter and MAC rows for `config` at an `input_hw x input_hw` input.
pub fn count_macs(config: &ArchConfig, input_hw: usize) -> Result<CostReport> {
    config.validate()?;
    let pools = 1usize << (config.stage_channels.len() - 1);
    if input_hw < 8 || !input_hw.is_multiple_of(pools) {
        return Err(Error::Geometry {
            op: "count_macs",
            detail: format!("input size {input_hw} must be at least 8 and divisible by {pools}"),
        });
    }
    let mut b = Builder { rows: Vec::new() };
    let mut side = input_hw;
    let mut plane = side * side;
    b.conv("stem.conv", 3, config.stem_out, 3, plane);
    b.bn("stem.bn", config.stem_out);

    let inputs = config.block_inputs();
    for (i, (&c_out, exps)) in config.stage_channels.iter().zip(&config.expansions).enumerate() {
        let widths = channel_progression(c_out, exps.len())?;
        let mut c = inputs[i];
        for (j, (&w, &e)) in widths.iter().zip(exps).enumerate() {
            let name = format!("blocks.{i}.layers.{j}");
            let hidden = c * e;
            if e > 1 {
                b.conv(&format!("{name}.expand"), c, hidden, 1, plane);
                b.bn(&format!("{name}.expand_bn"), hidden);
            }
            b.push(format!("{name}.depthwise"), LayerKind::Depthwise, 9 * hidden, 9 * hidden * plane);
            b.bn(&format!("{name}.depthwise_bn"), hidden);
            b.conv(&format!("{name}.project"), hidden, w, 1, plane);
            b.bn(&format!("{name}.project_bn"), w);
            if c == w {
                b.push(format!("{name}.skip"), LayerKind::Elementwise, 0, w * plane);
            }
            c = w;
        }
        let name = format!("blocks.{i}.attention");
        let r = (c_out / SE_REDUCTION).max(SE_MIN_WIDTH);
        b.push(format!("{name}.se.fc1"), LayerKind::Linear, c_out * r + r, c_out * r);
        b.push(format!("{name}.se.fc2"), LayerKind::Linear, r * c_out + c_out, r * c_out);
        let k2 = SPATIAL_KERNEL * SPATIAL_KERNEL;
        b.push(format!("{name}.channel_mean"), LayerKind::Elementwise, 0, c_out * plane);
        b.push(format!("{name}.spatial"), LayerKind::Conv, 2 * k2 + 1, 2 * k2 * plane);
        b.push(format!("{name}.fusion"), LayerKind::Elementwise, 0, 3 * c_out * plane);
        if config.lambda_mode == LambdaMode::Learnable {
            b.push(format!("blocks.{i}.lambda"), LayerKind::Scalar, 1, 0);
        }
        if i + 1 < config.stage_channels.len() {
            side /= 2;
            plane = side * side;
        }
    }
    let feat = *config.stage_channels.last().expect("validated");
    let h = config.classifier_hidden;
    b.push("classifier.fc1", LayerKind::Linear, feat * h + h, feat * h);
    b.push("classifier.fc2", LayerKind::Linear, h * config.num_classes + config.num_classes, h * config.num_classes);
    Ok(CostReport {
        rows: b.rows,
        input_hw,
    })
}

/// Parameter rows (MACs at the default 32x32 input).
pub fn count_params(config: &ArchConfig) -> Result<CostReport> {
    count_macs(config, 32)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SweepRow {
    pub pattern: String,
    pub layers: usize,
    pub params: u64,
    pub macs: u64,
    pub flops: u64,
}

pub fn sweep(configs: &[ArchConfig], input_hw: usize) -> Result<Vec<SweepRow>> {
    configs
        .iter()
        .map(|cfg| {
            let rep = count_macs(cfg, input_hw)?;
            Ok(SweepRow {
                pattern: cfg.pattern_label(),
                layers: cfg.layers_per_block,
                params: rep.params(),
                macs: rep.macs(),
                flops: rep.flops(),
            })
        })
        .collect()
}

pub const SWEEP_HEADER: &str = "pattern,layers,params,macs,flops";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.pattern, r.layers, r.params, r.macs, r.flops);
    }
    out
}

/// Parses `1-2-4-8,2-2-2-2` into expansion patterns.
pub fn parse_patterns(text: &str) -> Result<Vec<Vec<usize>>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|p| {
            p.split('-')
                .map(|v| v.trim().parse::<usize>().map_err(|_| Error::Config(format!("bad pattern {p:?}"))))
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_mbconv_count() {
        // expand 32*64 + dw 9*64 + project 64*8, plus BN pairs on 64, 64, 8
        let mut cfg = ArchConfig::tiny(10);
        cfg.stage_channels = vec![64];
        cfg.expansions = vec![vec![2, 2, 2, 2]];
        let rep = count_params(&cfg).unwrap();
        let layer0: u64 = rep
            .rows
            .iter()
            .filter(|r| r.name.starts_with("blocks.0.layers.0."))
            .map(|r| r.params)
            .sum();
        assert_eq!(layer0, 3408);
    }

    #[test]
    fn classifier_hidden_layer() {
        let rep = count_params(&ArchConfig::tiny(10)).unwrap();
        let fc1 = rep.rows.iter().find(|r| r.name == "classifier.fc1").unwrap();
        assert_eq!(fc1.params, 32_896);
    }

    #[test]
    fn totals_are_row_sums() {
        let rep = count_macs(&ArchConfig::base(10), 32).unwrap();
        assert_eq!(rep.params(), rep.rows.iter().map(|r| r.params).sum::<u64>());
        assert_eq!(rep.flops(), 2 * rep.macs());
    }

    #[test]
    fn pointwise_mac_formula() {
        let mut b = Builder { rows: Vec::new() };
        b.conv("p", 8, 16, 1, 16);
        assert_eq!(b.rows[0].macs, 2048);
    }

    #[test]
    fn empty_sweep() {
        assert!(sweep(&[], 32).unwrap().is_empty());
        assert_eq!(sweep_csv(&[]), "pattern,layers,params,macs,flops\n");
    }

    #[test]
    fn geometry_errors() {
        assert!(count_macs(&ArchConfig::tiny(10), 4).is_err());
        assert!(count_macs(&ArchConfig::tiny(10), 34).is_err());
    }

    #[test]
    fn patterns_parse() {
        assert_eq!(parse_patterns("1-2-4, 2-2-2").unwrap(), vec![vec![1, 2, 4], vec![2, 2, 2]]);
        assert!(parse_patterns("1-x").is_err());
    }
}
