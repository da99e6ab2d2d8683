//! Static parameter and FLOP accounting for a layer plan.
//!
//! Convolution cost is counted as multiply-accumulates with 1 MAC = 1 FLOP.
//! Pooling, batch norm, activation, residual addition and upsampling are
//! counted at one op per output element and reported in a separate column.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{LayerSpec, ModelSpec, INPUT_CHANNELS};

pub const FLOP_CONVENTION: &str = "1 MAC = 1 FLOP (conv); aux ops = 1 per output element";

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CostRow {
    pub layer: String,
    pub kind: &'static str,
    /// Output (channels, height, width); spatial dims are 0 for parameter-only reports.
    pub out_shape: [usize; 3],
    pub params: u64,
    /// Convolution multiply-accumulates.
    pub flops: u64,
    /// Non-convolution elementwise ops.
    pub aux_ops: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CostReport {
    pub rows: Vec<CostRow>,
    pub input_hw: Option<(usize, usize)>,
    pub convention: &'static str,
}

impl CostReport {
    pub fn total_params(&self) -> u64 {
        self.rows.iter().map(|r| r.params).sum()
    }

    pub fn total_flops(&self) -> u64 {
        self.rows.iter().map(|r| r.flops).sum()
    }

    pub fn total_aux_ops(&self) -> u64 {
        self.rows.iter().map(|r| r.aux_ops).sum()
    }

    pub fn params_millions(&self) -> f64 {
        self.total_params() as f64 / 1e6
    }

    pub fn gflops(&self) -> f64 {
        self.total_flops() as f64 / 1e9
    }
}

struct Walker {
    rows: Vec<CostRow>,
    shape: [usize; 3],
    with_flops: bool,
}

impl Walker {
    fn area(&self) -> u64 {
        (self.shape[1] * self.shape[2]) as u64
    }

    #[allow(clippy::too_many_arguments)]
    fn conv(
        &mut self,
        name: String,
        c_out: usize,
        (kh, kw): (usize, usize),
        stride: usize,
        (ph, pw): (usize, usize),
        dilation: usize,
        bias: bool,
    ) -> Result<()> {
        let c_in = self.shape[0];
        if self.with_flops {
            let out = |size: usize, pad: usize, k: usize| -> Result<usize> {
                let ext = (k - 1) * dilation + 1;
                let padded = size + 2 * pad;
                if padded < ext {
                    return Err(Error::Config(format!("{name}: kernel extent {ext} exceeds padded input {padded}")));
                }
                Ok((padded - ext) / stride + 1)
            };
            self.shape = [c_out, out(self.shape[1], ph, kh)?, out(self.shape[2], pw, kw)?];
        } else {
            self.shape[0] = c_out;
        }
        let macs_per_px = (kh * kw * c_in * c_out) as u64;
        let params = macs_per_px + if bias { c_out as u64 } else { 0 };
        self.rows.push(CostRow {
            layer: name,
            kind: "conv",
            out_shape: self.shape,
            params,
            flops: macs_per_px * self.area(),
            aux_ops: 0,
        });
        Ok(())
    }

    fn elementwise(&mut self, name: String, kind: &'static str, params: u64) {
        self.rows.push(CostRow {
            layer: name,
            kind,
            out_shape: self.shape,
            params,
            flops: 0,
            aux_ops: self.shape[0] as u64 * self.area(),
        });
    }

    fn bn(&mut self, name: String) {
        let c = self.shape[0] as u64;
        self.elementwise(name, "bn", 2 * c);
    }

    fn pair(&mut self, prefix: &str, suffix: &str, dilation: usize, batchnorm: bool) -> Result<()> {
        let c = self.shape[0];
        self.conv(format!("{prefix}.conv1x3_{suffix}"), c, (1, 3), 1, (0, dilation), dilation, true)?;
        self.elementwise(format!("{prefix}.relu1x3_{suffix}"), "relu", 0);
        self.conv(format!("{prefix}.conv3x1_{suffix}"), c, (3, 1), 1, (dilation, 0), dilation, !batchnorm)?;
        if batchnorm {
            self.bn(format!("{prefix}.bn_{suffix}"));
        }
        self.elementwise(format!("{prefix}.relu3x1_{suffix}"), "relu", 0);
        Ok(())
    }
}

/// Walks a forward-ordered layer plan. `input_hw = None` yields parameter rows only.
pub fn analyze_layers(
    layers: &[(String, LayerSpec)],
    input_channels: usize,
    input_hw: Option<(usize, usize)>,
) -> Result<CostReport> {
    let (h, w) = input_hw.unwrap_or((0, 0));
    let mut wk = Walker {
        rows: Vec::new(),
        shape: [input_channels, h, w],
        with_flops: input_hw.is_some(),
    };
    for (name, layer) in layers {
        match *layer {
            LayerSpec::Dsb(d) => {
                if d.in_channels != wk.shape[0] {
                    return Err(Error::Config(format!("{name}: expects {} channels, plan provides {}", d.in_channels, wk.shape[0])));
                }
                let input = wk.shape;
                wk.conv(format!("{name}.conv"), d.conv_channels(), (3, 3), 2, (1, 1), 1, true)?;
                let conv_shape = wk.shape;
                wk.shape = [input[0], input[1] / 2, input[2] / 2];
                wk.elementwise(format!("{name}.pool"), "pool", 0);
                wk.shape = [d.out_channels, conv_shape[1], conv_shape[2]];
                if d.batchnorm {
                    wk.bn(format!("{name}.bn"));
                }
                wk.elementwise(format!("{name}.relu"), "relu", 0);
            }
            LayerSpec::Bfb(b) => {
                if b.channels != wk.shape[0] {
                    return Err(Error::Config(format!("{name}: expects {} channels, plan provides {}", b.channels, wk.shape[0])));
                }
                wk.conv(format!("{name}.conv_in"), b.inner_channels(), (1, 1), 1, (0, 0), 1, true)?;
                wk.elementwise(format!("{name}.relu_in"), "relu", 0);
                wk.pair(name, "a", 1, b.batchnorm)?;
                wk.pair(name, "b", b.dilation, b.batchnorm)?;
                wk.conv(format!("{name}.conv_out"), b.channels, (1, 1), 1, (0, 0), 1, true)?;
                wk.elementwise(format!("{name}.add"), "add", 0);
                wk.elementwise(format!("{name}.relu_out"), "relu", 0);
            }
            LayerSpec::Conv(c) => {
                if c.in_channels != wk.shape[0] {
                    return Err(Error::Config(format!("{name}: expects {} channels, plan provides {}", c.in_channels, wk.shape[0])));
                }
                wk.conv(name.clone(), c.out_channels, c.kernel, c.stride, c.padding, c.dilation, c.bias)?;
            }
            LayerSpec::Upsample { factor } => {
                if wk.with_flops {
                    wk.shape[1] *= factor;
                    wk.shape[2] *= factor;
                }
                wk.elementwise(name.clone(), "upsample", 0);
            }
        }
    }
    Ok(CostReport {
        rows: wk.rows,
        input_hw,
        convention: FLOP_CONVENTION,
    })
}

/// Per-layer parameter counts (no spatial information).
pub fn count_params(spec: &ModelSpec) -> Result<CostReport> {
    spec.validate()?;
    analyze_layers(&spec.blocks(), INPUT_CHANNELS, None)
}

/// Per-layer parameters and FLOPs at the given input size.
pub fn count_flops(spec: &ModelSpec, input_hw: (usize, usize)) -> Result<CostReport> {
    spec.validate()?;
    let step = crate::model::OUTPUT_STRIDE;
    if input_hw.0 % step != 0 || input_hw.1 % step != 0 || input_hw.0 == 0 || input_hw.1 == 0 {
        return Err(Error::dim(
            "height",
            format!("input {}x{} must be a positive multiple of {step}", input_hw.0, input_hw.1),
        ));
    }
    analyze_layers(&spec.blocks(), INPUT_CHANNELS, Some(input_hw))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Csv,
    JsonLines,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table" => Ok(Self::Table),
            "csv" => Ok(Self::Csv),
            "json-lines" | "jsonl" => Ok(Self::JsonLines),
            other => Err(Error::Config(format!(
                "unknown report format `{other}` (expected table, csv or json-lines)"
            ))),
        }
    }
}

#[derive(Serialize)]
struct Totals<'a> {
    total: bool,
    input: Option<String>,
    convention: &'a str,
    params: u64,
    params_m: f64,
    flops: u64,
    gflops: f64,
    aux_ops: u64,
}

fn input_label(report: &CostReport) -> Option<String> {
    report.input_hw.map(|(h, w)| format!("{w}x{h}"))
}

pub fn emit_report(report: &CostReport, format: ReportFormat) -> Result<String> {
    let mut out = String::new();
    match format {
        ReportFormat::Table => {
            let _ = writeln!(
                out,
                "# input: {}  convention: {}",
                input_label(report).unwrap_or_else(|| "n/a".into()),
                report.convention
            );
            let width = report.rows.iter().map(|r| r.layer.len()).max().unwrap_or(5).max(5);
            let _ = writeln!(
                out,
                "{:<width$}  {:<8}  {:>16}  {:>10}  {:>14}  {:>12}",
                "layer", "kind", "output", "params", "flops", "aux_ops"
            );
            for r in &report.rows {
                let shape = format!("{}x{}x{}", r.out_shape[0], r.out_shape[1], r.out_shape[2]);
                let _ = writeln!(
                    out,
                    "{:<width$}  {:<8}  {:>16}  {:>10}  {:>14}  {:>12}",
                    r.layer, r.kind, shape, r.params, r.flops, r.aux_ops
                );
            }
            let _ = writeln!(
                out,
                "total params: {} ({:.2} M)",
                report.total_params(),
                report.params_millions()
            );
            if report.input_hw.is_some() {
                let _ = writeln!(
                    out,
                    "total flops: {} ({:.2} G)  aux ops: {} ({:.3} G, reported separately)",
                    report.total_flops(),
                    report.gflops(),
                    report.total_aux_ops(),
                    report.total_aux_ops() as f64 / 1e9
                );
            }
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let csv_err = |e: csv::Error| Error::Config(format!("csv encoding failed: {e}"));
            w.write_record(["layer", "kind", "out_c", "out_h", "out_w", "params", "flops", "aux_ops"])
                .map_err(csv_err)?;
            for r in &report.rows {
                w.write_record([
                    r.layer.clone(),
                    r.kind.to_string(),
                    r.out_shape[0].to_string(),
                    r.out_shape[1].to_string(),
                    r.out_shape[2].to_string(),
                    r.params.to_string(),
                    r.flops.to_string(),
                    r.aux_ops.to_string(),
                ])
                .map_err(csv_err)?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
            out = String::from_utf8(bytes).expect("csv output is UTF-8");
        }
        ReportFormat::JsonLines => {
            for r in &report.rows {
                out.push_str(&serde_json::to_string(r).expect("serialisable row"));
                out.push('\n');
            }
            let totals = Totals {
                total: true,
                input: input_label(report),
                convention: report.convention,
                params: report.total_params(),
                params_m: report.params_millions(),
                flops: report.total_flops(),
                gflops: report.gflops(),
                aux_ops: report.total_aux_ops(),
            };
            out.push_str(&serde_json::to_string(&totals).expect("serialisable totals"));
            out.push('\n');
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ConvSpec;

    #[test]
    fn single_decoder_conv() {
        let layers = vec![(
            "decoder".to_string(),
            LayerSpec::Conv(ConvSpec {
                in_channels: 128,
                out_channels: 2,
                kernel: (1, 1),
                stride: 1,
                padding: (0, 0),
                dilation: 1,
                bias: true,
            }),
        )];
        let r = analyze_layers(&layers, 128, Some((64, 64))).unwrap();
        assert_eq!(r.total_params(), 258);
        assert_eq!(r.total_flops(), 256 * 64 * 64);
    }

    #[test]
    fn empty_plan_is_header_only() {
        let r = analyze_layers(&[], 3, Some((8, 8))).unwrap();
        assert_eq!(r.total_params(), 0);
        assert_eq!(r.total_flops(), 0);
        let csv = emit_report(&r, ReportFormat::Csv).unwrap();
        assert_eq!(csv.lines().count(), 1);
        let table = emit_report(&r, ReportFormat::Table).unwrap();
        assert!(table.contains("total params: 0"));
    }

    #[test]
    fn unknown_format() {
        assert!(matches!("xml".parse::<ReportFormat>(), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_bad_input_size() {
        assert!(count_flops(&ModelSpec::default(), (100, 100)).is_err());
    }
}
