use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use diffeo_core::datasets::{base_blob, make_blob_population, make_toy_squares};
use diffeo_core::experiments::{toy_kernel_sweep, toy_s0_sweep};
use diffeo_core::geodesic::{integrate_flow, shoot, velocity_at, Direction, MomentumField};
use diffeo_core::grid_image::io::{load_image, read_rawf, write_rawf, ImageFormat, RawArray};
use diffeo_core::grid_image::mean_image;
use diffeo_core::haar::{fwt, iwt, save_pyramid, zero_below_scale, HaarPlan, DEFAULT_RHO};
use diffeo_core::metrics::{read_sweep_csv, ssim, write_sweep_csv, MetricReport};
use diffeo_core::objective::{deform, ModelConfig};
use diffeo_core::optimizer::{trace_to_jsonl, Optimizer, RunResult};
use diffeo_core::{RoiBox, ScalarImage, VectorField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::RunConfig;
use crate::output::RunDir;
use crate::{viz, ConfigArgs, DataKind, Scenario};

/// Lattice spacing, in pixels, of the drawn deformation grid.
const GRID_EVERY: usize = 2;

fn load(path: &Path) -> Result<ScalarImage> {
    let format = ImageFormat::from_path(path)?;
    load_image(path, format).with_context(|| format!("loading image {}", path.display()))
}

/// `r0,c0:r1,c1` (any dimension) into a half-open box.
pub fn parse_roi(text: &str) -> Result<RoiBox> {
    let (lo, hi) = text
        .split_once(':')
        .ok_or_else(|| anyhow!("roi {text:?} is not `min:max`"))?;
    let nums = |s: &str| -> Result<Vec<usize>> {
        s.split(',')
            .map(|v| v.trim().parse::<usize>().map_err(|e| anyhow!("bad roi entry {v:?}: {e}")))
            .collect()
    };
    Ok(RoiBox::new(nums(lo)?, nums(hi)?)?)
}

fn parse_shape(text: &str) -> Result<Vec<usize>> {
    text.split('x')
        .map(|v| v.trim().parse::<usize>().map_err(|e| anyhow!("bad shape {text:?}: {e}")))
        .collect()
}

fn config(args: &ConfigArgs) -> Result<RunConfig> {
    RunConfig::load(args.config.as_deref(), &args.overrides)
}

fn output_dir(flag: Option<PathBuf>, cfg: &mut RunConfig) -> Result<PathBuf> {
    if let Some(p) = flag {
        cfg.output_dir = Some(p);
    }
    cfg.output_dir
        .clone()
        .ok_or_else(|| anyhow!("no output directory: pass --out or set output_dir"))
}

fn load_map(path: &Path) -> Result<VectorField> {
    let raw = read_rawf(path)?;
    let mut shape = raw.shape.clone();
    let d = shape.pop().unwrap_or(0);
    Ok(VectorField::new(shape, d, raw.data)?)
}

fn save_map(path: &Path, map: &VectorField) -> Result<()> {
    let mut shape = map.shape().to_vec();
    shape.push(map.dim());
    write_rawf(path, &RawArray::new(shape, map.data().to_vec())?)?;
    Ok(())
}

fn save_momenta(dir: &mut RunDir, stem: &str, m: &MomentumField) -> Result<()> {
    let data = dir.output(&format!("{stem}.rawf"));
    let side = dir.output(&format!("{stem}.txt"));
    m.save(&data, &side)?;
    Ok(())
}

/// Grid overlay, velocity heatmap and quiver plot of one deformation.
fn visualize(
    dir: &mut RunDir,
    cfg: &RunConfig,
    suffix: &str,
    deformed: &ScalarImage,
    momenta: &MomentumField,
    model: &ModelConfig,
) -> Result<()> {
    if deformed.ndim() != 2 {
        return Ok(());
    }
    let c = momenta.grid().points::<2>()?;
    let a = momenta.to_points::<2>()?;
    if cfg.emit_grids {
        let traj = shoot(&c, &a, &model.kernel, model.steps)?;
        let forward = integrate_flow(&traj, deformed.shape(), Direction::Forward)?;
        viz::grid_overlay(&dir.output(&format!("grid{suffix}.ppm")), deformed, &forward, GRID_EVERY)?;
    }
    if cfg.emit_heatmaps {
        let pts = diffeo_core::geodesic::grid_points::<2>(deformed.shape());
        let v = velocity_at(&pts, &c, &a, &model.kernel)?;
        let norms = VectorField::from_points(deformed.shape().to_vec(), &v)?.norms()?;
        viz::heatmap(&dir.output(&format!("velocity{suffix}.ppm")), &norms)?;
    }
    if cfg.emit_quiver {
        let svg = viz::quiver_svg(deformed, momenta)?;
        dir.write_text(&format!("momenta{suffix}.svg"), &svg)?;
    }
    Ok(())
}

fn trace_summary(run: &RunResult) -> serde_json::Value {
    json!({
        "iterations": run.trace.len(),
        "stop": run.stop,
        "initial_scale": run.initial_scale,
        "max_scale": run.max_scale,
        "delta0": run.delta0,
        "delta_final": run.delta_final,
    })
}

pub fn gen_data(
    kind: DataKind,
    out: &Path,
    side: usize,
    n: usize,
    seed: u64,
    shape: &str,
    deform_scale: f64,
) -> Result<()> {
    match kind {
        DataKind::Toy => {
            let pair = make_toy_squares(side)?;
            let mut dir = RunDir::create(out, "gen-data toy")?;
            dir.write_image("source", &pair.source)?;
            dir.write_image("target", &pair.target)?;
            dir.note("side", json!(side));
            dir.note("roi", json!(pair.roi));
            dir.note("seed", json!(seed));
            dir.finish(None)
        }
        DataKind::Blobs => {
            let shape = parse_shape(shape)?;
            let images = make_blob_population(n, seed, &shape, deform_scale)?;
            let mut dir = RunDir::create(out, "gen-data blobs")?;
            dir.write_image("base", &base_blob(&shape)?)?;
            std::fs::create_dir_all(dir.path("images"))?;
            for (i, img) in images.iter().enumerate() {
                dir.write_image(&format!("images/blob_{i:03}"), img)?;
            }
            dir.note("n", json!(n));
            dir.note("seed", json!(seed));
            dir.note("shape", json!(shape));
            dir.note("deform_scale", json!(deform_scale));
            dir.finish(None)
        }
    }
}

pub fn register(
    source: Option<PathBuf>,
    target: Option<PathBuf>,
    out: Option<PathBuf>,
    roi: Option<&str>,
    args: &ConfigArgs,
) -> Result<()> {
    let mut cfg = config(args)?;
    if source.is_some() {
        cfg.source = source;
    }
    if target.is_some() {
        cfg.target = target;
    }
    let out = output_dir(out, &mut cfg)?;
    let src_path = cfg.source.clone().ok_or_else(|| anyhow!("no source image given"))?;
    let tgt_path = cfg.target.clone().ok_or_else(|| anyhow!("no target image given"))?;
    let src = load(&src_path)?;
    let tgt = load(&tgt_path)?;
    let roi = roi.map(parse_roi).transpose()?;
    let model = cfg.optimizer.model()?;

    let started = Instant::now();
    let run = Optimizer::register(&src, &tgt, &cfg.optimizer)?.run()?;
    let runtime_ms = started.elapsed().as_secs_f64() * 1e3;
    let momenta = &run.momenta[0];
    let (deformed, map) = deform(&src, momenta, &model)?;
    let report = MetricReport::evaluate(&deformed, &tgt, run.delta0, roi.as_ref(), Some(&map), runtime_ms)?;

    let mut dir = RunDir::create(&out, "register")?;
    dir.write_image("deformed", &deformed)?;
    save_momenta(&mut dir, "momenta", momenta)?;
    save_map(&dir.output("map.rawf"), &map)?;
    dir.write_json("report.json", &report)?;
    if cfg.emit_trace {
        dir.write_text("trace.jsonl", &trace_to_jsonl(&run.trace))?;
    }
    visualize(&mut dir, &cfg, "", &deformed, momenta, &model)?;
    dir.note("run", trace_summary(&run));
    dir.finish(Some(&cfg))?;
    println!(
        "registered in {} iterations ({:?}): residual {:.6} -> {:.6}, ssim {:.4}",
        run.trace.len(),
        run.stop,
        run.delta0,
        report.total_residual,
        report.ssim
    );
    Ok(())
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading image directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| ImageFormat::from_path(p).is_ok())
        .collect();
    // a directory holding both formats is read through its RAWF files
    if files.iter().any(|p| ImageFormat::from_path(p).ok() == Some(ImageFormat::Rawf)) {
        files.retain(|p| ImageFormat::from_path(p).ok() == Some(ImageFormat::Rawf));
    }
    files.sort();
    Ok(files)
}

pub fn atlas(
    image_dir: Option<PathBuf>,
    out: Option<PathBuf>,
    reference: Option<&Path>,
    args: &ConfigArgs,
) -> Result<()> {
    let mut cfg = config(args)?;
    if image_dir.is_some() {
        cfg.image_dir = image_dir;
    }
    let out = output_dir(out, &mut cfg)?;
    let input = cfg.image_dir.clone().ok_or_else(|| anyhow!("no image directory given"))?;
    let files = list_images(&input)?;
    if files.len() < 2 {
        bail!(
            "atlas estimation needs at least 2 images, found {} in {}",
            files.len(),
            input.display()
        );
    }
    let images = files.iter().map(|p| load(p)).collect::<Result<Vec<_>>>()?;
    let model = cfg.optimizer.model()?;
    let initial = mean_image(&images)?;
    let initial_ssd = images
        .iter()
        .map(|img| initial.ssd(img))
        .collect::<diffeo_core::Result<Vec<_>>>()?;

    let started = Instant::now();
    let run = Optimizer::atlas_from(initial.clone(), &images, &cfg.optimizer)?.run()?;
    let runtime_ms = started.elapsed().as_secs_f64() * 1e3;

    let mut dir = RunDir::create(&out, "atlas")?;
    dir.write_image("template", &run.template)?;
    let mut relative = Vec::new();
    let mut ssims = Vec::new();
    for (i, (m, img)) in run.momenta.iter().zip(&images).enumerate() {
        let (deformed, map) = deform(&run.template, m, &model)?;
        let report = MetricReport::evaluate(&deformed, img, initial_ssd[i], None, Some(&map), runtime_ms)?;
        relative.extend(report.relative_residual);
        ssims.push(report.ssim);
        save_momenta(&mut dir, &format!("momenta_{i:03}"), m)?;
        dir.write_json(&format!("report_{i:03}.json"), &report)?;
        if i == 0 {
            visualize(&mut dir, &cfg, "_000", &deformed, m, &model)?;
        }
    }
    if cfg.emit_trace {
        dir.write_text("trace.jsonl", &trace_to_jsonl(&run.trace))?;
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let mut summary = json!({
        "images": files.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "mean_relative_residual": mean(&relative),
        "mean_ssim": mean(&ssims),
        "runtime_ms": runtime_ms,
    });
    if let Some(r) = reference {
        let truth = load(r)?;
        summary["template_ssim_vs_reference"] = json!(ssim(&run.template, &truth)?);
        summary["mean_image_ssim_vs_reference"] = json!(ssim(&initial, &truth)?);
    }
    dir.write_json("summary.json", &summary)?;
    dir.note("run", trace_summary(&run));
    dir.finish(Some(&cfg))?;
    println!(
        "atlas of {} images in {} iterations ({:?}), mean residual {:.6} -> {:.6}",
        images.len(),
        run.trace.len(),
        run.stop,
        run.delta0,
        run.delta_final
    );
    Ok(())
}

pub fn sweep(scenario: Scenario, out: &Path, side: usize, sigmas: &[f64], args: &ConfigArgs) -> Result<()> {
    let mut cfg = config(args)?;
    cfg.output_dir = Some(out.to_path_buf());
    let pair = make_toy_squares(side)?;
    let (name, rows) = match scenario {
        Scenario::ToyS0Sweep => ("toy-s0-sweep", toy_s0_sweep(&pair, &cfg.optimizer)?),
        Scenario::ToyKernelSweep => ("toy-kernel-sweep", toy_kernel_sweep(&pair, &cfg.optimizer, sigmas)?),
    };
    let mut dir = RunDir::create(out, &format!("sweep {name}"))?;
    let mut buf = Vec::new();
    write_sweep_csv(&rows, &mut buf)?;
    // what was written must read back unchanged
    if read_sweep_csv(buf.as_slice())? != rows {
        bail!("sweep table does not round-trip through CSV");
    }
    dir.write_text("sweep.csv", std::str::from_utf8(&buf)?)?;
    dir.note("side", json!(side));
    dir.finish(Some(&cfg))?;
    println!("sigma_g  k_g  s0  delta_j    roi        sd_j    iters  runtime_ms");
    for r in &rows {
        println!(
            "{:<7}  {:<4} {:<3} {:<10.4} {:<10.4} {:<7.4} {:<6} {:.0}",
            r.sigma_g, r.k_g, r.s0, r.delta_j, r.delta_j_roi, r.sd_j, r.iterations, r.runtime_ms
        );
    }
    Ok(())
}

/// Shapes exercised by the self-test.
const SELF_TEST_SHAPES: [&[usize]; 5] = [&[8, 8], &[7, 5], &[28, 28], &[3, 4, 5], &[13, 12, 15]];

pub fn wavelet_self_test(seed: u64, cases: usize) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_roundtrip: f64 = 0.0;
    let mut worst_energy: f64 = 0.0;
    for case in 0..cases {
        let shape = SELF_TEST_SHAPES[case % SELF_TEST_SHAPES.len()];
        let n: usize = shape.iter().product();
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let pyramid = fwt(&x, shape, DEFAULT_RHO)?;
        let back = iwt(&pyramid)?;
        let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let err = x.iter().zip(&back).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        worst_roundtrip = worst_roundtrip.max(err / scale);
        let e_in: f64 = x.iter().map(|v| v * v).sum();
        let e_out: f64 = pyramid.coeffs.iter().map(|v| v * v).sum();
        worst_energy = worst_energy.max((e_out.sqrt() - e_in.sqrt()).abs() / e_in.sqrt());
    }
    println!("cases {cases}: worst relative round-trip error {worst_roundtrip:.3e}, worst relative norm change {worst_energy:.3e}");
    if worst_roundtrip >= 1e-10 || worst_energy >= 1e-10 {
        bail!("wavelet self-test failed");
    }
    Ok(())
}

pub fn wavelet_transform(input: &Path, out: &Path, keep_from: Option<usize>) -> Result<()> {
    let img = load(input)?;
    let plan = HaarPlan::new(img.shape())?;
    let mut pyramid = plan.forward(img.data(), DEFAULT_RHO)?;
    if let Some(s) = keep_from {
        pyramid = zero_below_scale(&pyramid, s)?;
    }
    let rebuilt = ScalarImage::new(img.shape().to_vec(), iwt(&pyramid)?)?;
    let mut dir = RunDir::create(out, "wavelet transform")?;
    let coeffs = dir.output("coeffs.rawf");
    let side = dir.output("coeffs.txt");
    save_pyramid(&pyramid, &coeffs, &side)?;
    dir.write_image("reconstruction", &rebuilt)?;
    let err = img
        .data()
        .iter()
        .zip(rebuilt.data())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    dir.note("max_scale", json!(plan.max_scale()));
    dir.note("keep_from", json!(keep_from));
    dir.note("max_abs_difference", json!(err));
    dir.finish(None)?;
    println!("max scale {}, max |x - iwt(fwt(x))| = {err:.3e}", plan.max_scale());
    Ok(())
}

pub fn metrics(
    a: &Path,
    b: &Path,
    roi: Option<&str>,
    map: Option<&Path>,
    initial_residual: Option<f64>,
    out: Option<&Path>,
) -> Result<()> {
    let x = load(a)?;
    let y = load(b)?;
    let roi = roi.map(parse_roi).transpose()?;
    let map = map.map(load_map).transpose()?;
    let initial = match initial_residual {
        Some(v) => v,
        None => x.ssd(&y)?,
    };
    let report = MetricReport::evaluate(&x, &y, initial, roi.as_ref(), map.as_ref(), 0.0)?;
    match out {
        Some(p) => std::fs::write(p, report.to_json() + "\n").with_context(|| format!("writing {}", p.display()))?,
        None => println!("{}", report.to_json()),
    }
    Ok(())
}
