use std::io::Write;

use anyhow::{Context, Result};
use clap::Args;
use fallwatch_core::model::{
    build_yolov5mu, estimate_flops, infer_shapes, param_count, LayerKind, Source,
};
use serde::Serialize;

use crate::files::{class_map, output};
use crate::{Common, Format, Internal, Outcome};

#[derive(Debug, Args)]
pub struct BuildInfoArgs {
    /// Number of classes; defaults to the size of --classes, else 4.
    #[arg(long)]
    pub num_classes: Option<usize>,
}

#[derive(Debug, Serialize)]
struct Row {
    id: usize,
    name: String,
    kind: &'static str,
    from: Vec<String>,
    in_channels: Vec<usize>,
    out_channels: usize,
    output_shape: Vec<[usize; 3]>,
    params: usize,
    flops: u64,
}

#[derive(Debug, Serialize)]
struct Report {
    img: usize,
    num_classes: usize,
    layers: Vec<Row>,
    total_params: usize,
    total_flops: u64,
    gflops: f64,
    module_count: usize,
}

fn shape_text(shapes: &[[usize; 3]]) -> String {
    shapes
        .iter()
        .map(|[c, h, w]| format!("{c}x{h}x{w}"))
        .collect::<Vec<_>>()
        .join(";")
}

fn list<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(";")
}

fn build(common: &Common, args: &BuildInfoArgs) -> Result<Report> {
    let nc = match args.num_classes {
        Some(n) => n,
        None => class_map(common.classes.as_deref())?.len(),
    };
    let graph = build_yolov5mu(nc)?;
    let hw = (common.img, common.img);
    let shapes = infer_shapes(&graph, hw).context("bad --img")?;
    let flops = estimate_flops(&graph, hw)?;
    let params = param_count(&graph);
    let layers: Vec<Row> = graph
        .layers
        .iter()
        .zip(&shapes)
        .zip(params.rows.iter().zip(&flops.per_layer))
        .map(|((l, s), (p, &f))| Row {
            id: l.id,
            name: l.name.clone(),
            kind: l.kind.type_name(),
            from: l
                .inputs
                .iter()
                .map(|src| match src {
                    Source::Image => "image".to_string(),
                    Source::Layer(j) => j.to_string(),
                })
                .collect(),
            in_channels: l.in_channels.clone(),
            out_channels: match l.kind {
                LayerKind::Detect { .. } => l.out_channels,
                _ => s.outputs[0][0],
            },
            output_shape: s.outputs.clone(),
            params: p.params,
            flops: f,
        })
        .collect();
    if layers.iter().map(|r| r.params).sum::<usize>() != params.total {
        return Err(Internal("per-layer parameters do not add up".into()).into());
    }
    Ok(Report {
        img: common.img,
        num_classes: nc,
        layers,
        total_params: params.total,
        total_flops: flops.total_flops,
        gflops: flops.gflops(),
        module_count: graph.module_count(),
    })
}

pub fn run(common: &Common, args: &BuildInfoArgs) -> Result<Outcome> {
    let report = build(common, args)?;
    let mut out = output(common.out.as_deref())?;
    match common.format {
        Format::Json => {
            serde_json::to_writer_pretty(&mut out, &report)?;
            writeln!(out)?;
        }
        Format::Csv => {
            writeln!(
                out,
                "id,name,type,from,in_channels,out_channels,output_shape,params,flops"
            )?;
            for r in &report.layers {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{}",
                    r.id,
                    r.name,
                    r.kind,
                    list(&r.from),
                    list(&r.in_channels),
                    r.out_channels,
                    shape_text(&r.output_shape),
                    r.params,
                    r.flops
                )?;
            }
            writeln!(
                out,
                "total,,,,,,,{},{}",
                report.total_params, report.total_flops
            )?;
        }
        Format::Table => {
            writeln!(
                out,
                "{:>3}  {:<9} {:<8} {:<8} {:>14} {:>5}  {:<26} {:>12} {:>9}",
                "id", "layer", "type", "from", "in", "out", "output", "params", "GFLOPs"
            )?;
            for r in &report.layers {
                writeln!(
                    out,
                    "{:>3}  {:<9} {:<8} {:<8} {:>14} {:>5}  {:<26} {:>12} {:>9.3}",
                    r.id,
                    r.name,
                    r.kind,
                    list(&r.from),
                    list(&r.in_channels),
                    r.out_channels,
                    shape_text(&r.output_shape),
                    r.params,
                    r.flops as f64 / 1e9
                )?;
            }
            writeln!(out)?;
            writeln!(
                out,
                "input        {0}x{0}, {1} classes",
                report.img, report.num_classes
            )?;
            writeln!(out, "table rows   {}", report.layers.len())?;
            writeln!(out, "modules      {}", report.module_count)?;
            writeln!(out, "parameters   {}", report.total_params)?;
            writeln!(out, "GFLOPs       {:.1}", report.gflops)?;
        }
    }
    out.flush()?;
    Ok(Outcome::Success)
}
