//! Command-line front end. Every configuration key is also a
//! `--<dotted.key>` flag; flags override `--config`, which overrides the
//! defaults.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Arg, ArgAction, ArgMatches, Command};
use serde::Serialize;
use serde_json::Value;

use pcc_core::camera::Camera;
use pcc_core::cloud::Point3;
use pcc_core::gradsuite;
use pcc_core::image::{hole_fraction, DepthMap, SilhouetteMap};
use pcc_core::metrics;
use pcc_core::render::{densify, estimate_eta, rasterize, render_depth, render_depth_dare, SplatConfig};
use pcc_core::shapes::Split;
use rand::SeedableRng;

use crate::config::RunConfig;
use crate::dataset::{build_dataset, read_camera, read_gt, read_manifest, write_json};
use crate::error::{PccError, Result};
use crate::ply::{read_ply, write_ply};
use crate::pnm::{write_pfm, write_pgm};
use crate::preview::{write_depth_png, write_silhouette_png};
use crate::run::{self, run_dir, LAST_CHECKPOINT};

fn config_args(cmd: Command) -> Command {
    let mut cmd = cmd.arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .value_parser(clap::value_parser!(PathBuf))
            .help("JSON file with flat dotted keys"),
    );
    for (key, value) in RunConfig::default().flatten() {
        let shown = match &value {
            Value::String(s) => s.clone(),
            Value::Array(items) => items
                .iter()
                .map(|v| v.as_str().map(str::to_string).unwrap_or_else(|| v.to_string()))
                .collect::<Vec<_>>()
                .join(","),
            other => other.to_string(),
        };
        let key: &'static str = Box::leak(key.into_boxed_str());
        cmd = cmd.arg(
            Arg::new(key)
                .long(key)
                .value_name("VALUE")
                .help(format!("[default: {shown}]"))
                .help_heading("Configuration"),
        );
    }
    cmd
}

fn overrides(m: &ArgMatches) -> Vec<(String, String)> {
    RunConfig::default()
        .flatten()
        .into_keys()
        .filter_map(|k| m.get_one::<String>(&k).map(|v| (k, v.clone())))
        .collect()
}

fn resolve(m: &ArgMatches) -> Result<RunConfig> {
    RunConfig::resolve(m.get_one::<PathBuf>("config").map(PathBuf::as_path), &overrides(m))
}

fn path_arg(name: &'static str, help: &'static str) -> Arg {
    Arg::new(name)
        .long(name)
        .value_name("PATH")
        .value_parser(clap::value_parser!(PathBuf))
        .help(help)
}

fn positional(name: &'static str, help: &'static str) -> Arg {
    Arg::new(name)
        .value_parser(clap::value_parser!(PathBuf))
        .required(true)
        .help(help)
}

fn f64_arg(name: &'static str, default: &'static str, help: &'static str) -> Arg {
    Arg::new(name)
        .long(name)
        .value_name("X")
        .value_parser(clap::value_parser!(f64))
        .default_value(default)
        .help(help)
}

pub fn command() -> Command {
    Command::new("pcc")
        .about("Unsupervised point-cloud completion with pattern retrieval and density-aware rendering")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(config_args(Command::new("gen-data").about("Generate the synthetic dataset and per-category image banks")))
        .subcommand(
            config_args(Command::new("train").about("Train one generator per category"))
                .arg(path_arg("resume", "Checkpoint to resume from (needs a single category)"))
                .arg(Arg::new("quiet").long("quiet").action(ArgAction::SetTrue).help("Suppress per-epoch lines")),
        )
        .subcommand(
            config_args(Command::new("complete").about("Complete one partial cloud"))
                .arg(positional("checkpoint", "Generator checkpoint"))
                .arg(positional("input", "Partial cloud (PLY)"))
                .arg(positional("output-ply", "Completed cloud (PLY)").value_name("OUTPUT"))
                .arg(path_arg("camera", "Scanning camera; defaults to camera.json next to the input")),
        )
        .subcommand(
            config_args(Command::new("eval").about("Evaluate a split against ground truth (values x1e4)"))
                .arg(
                    Arg::new("split")
                        .long("split")
                        .value_parser(["train", "val", "test"])
                        .default_value("test")
                        .help("Dataset split"),
                )
                .arg(path_arg("checkpoint", "Checkpoint (single category); defaults to <output>/<category>/last.pccf"))
                .arg(path_arg("predictions", "Directory of <id>.ply completions to score instead of running a model")),
        )
        .subcommand(
            Command::new("render")
                .about("Render depth and silhouette maps of a cloud")
                .arg(path_arg("input", "Cloud to render (PLY)").required(true))
                .arg(path_arg("out-dir", "Directory for depth.pfm and silhouette.pgm").required(true))
                .arg(path_arg("camera", "Camera JSON; otherwise the viewpoint flags are used"))
                .arg(f64_arg("elevation", "30", "Viewpoint elevation in degrees"))
                .arg(f64_arg("azimuth", "0", "Viewpoint azimuth in degrees"))
                .arg(f64_arg("distance", "2", "Camera distance from the origin"))
                .arg(
                    Arg::new("size")
                        .long("size")
                        .value_name("PX")
                        .value_parser(clap::value_parser!(usize))
                        .default_value("64")
                        .help("Image width and height for viewpoint cameras"),
                )
                .arg(f64_arg("fixed-radius", "0.06", "Base splat radius r0").long("fixed-radius"))
                .arg(Arg::new("dare").long("dare").action(ArgAction::SetTrue).help("Scale the radius with projected density"))
                .arg(
                    Arg::new("eta")
                        .long("eta")
                        .value_name("X")
                        .value_parser(clap::value_parser!(f64))
                        .help("DARE constant; estimated from eight reference views when omitted"),
                )
                .arg(
                    Arg::new("compare-dare")
                        .long("compare-dare")
                        .action(ArgAction::SetTrue)
                        .help("Report hole fractions of fixed and DARE radii against a densified reference"),
                )
                .arg(Arg::new("png").long("png").action(ArgAction::SetTrue).help("Also write PNG previews")),
        )
        .subcommand(
            Command::new("gradcheck")
                .about("Finite-difference checks of every op, the renderer and every loss")
                .arg(Arg::new("inject-fault").long("inject-fault").action(ArgAction::SetTrue).hide(true)),
        )
}

/// Parses `args` (including the program name) and runs the command.
/// Output goes to `out`.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let m = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) if !e.use_stderr() => {
            write!(out, "{}", e.render()).map_err(io_out)?;
            return Ok(());
        }
        Err(e) => return Err(PccError::Usage(e.render().to_string())),
    };
    match m.subcommand() {
        Some(("gen-data", m)) => gen_data(m, out),
        Some(("train", m)) => train(m, out),
        Some(("complete", m)) => complete(m, out),
        Some(("eval", m)) => eval(m, out),
        Some(("render", m)) => render(m, out),
        Some(("gradcheck", m)) => gradcheck(m, out),
        _ => unreachable!("subcommand is required"),
    }
}

fn io_out(e: std::io::Error) -> PccError {
    PccError::io(Path::new("<stdout>"), e)
}

fn gen_data(m: &ArgMatches, out: &mut dyn Write) -> Result<()> {
    let cfg = resolve(m)?;
    for s in build_dataset(&cfg)? {
        writeln!(
            out,
            "{}: {} samples, eta {:.4}, {} scans resampled with replacement",
            s.category, s.samples, s.eta, s.with_replacement
        )
        .map_err(io_out)?;
    }
    Ok(())
}

fn train(m: &ArgMatches, out: &mut dyn Write) -> Result<()> {
    let cfg = resolve(m)?;
    let resume = m.get_one::<PathBuf>("resume");
    if resume.is_some() && cfg.data.categories.len() != 1 {
        return Err(PccError::Config("--resume needs exactly one entry in data.categories".into()));
    }
    let quiet = m.get_flag("quiet");
    for category in &cfg.data.categories {
        let outcome = run::train_category(&cfg, category, resume.map(PathBuf::as_path), |l, secs| {
            if !quiet {
                let _ = writeln!(
                    out,
                    "{category} epoch {:>4}  part {:.5}  rend {:.5}  dens {:.3e}  gen {:.4}  disc {:.4}  {:.1}s",
                    l.epoch, l.l_part, l.l_rend, l.l_dens, l.l_gen, l.l_disc, secs
                );
            }
        })?;
        writeln!(
            out,
            "{category}: {} epochs in {:.1}s -> {}",
            outcome.losses.len(),
            outcome.seconds,
            run_dir(&cfg, category).join(LAST_CHECKPOINT).display()
        )
        .map_err(io_out)?;
    }
    Ok(())
}

fn complete(m: &ArgMatches, out: &mut dyn Write) -> Result<()> {
    let cfg = resolve(m)?;
    let input = m.get_one::<PathBuf>("input").expect("required");
    let camera = match m.get_one::<PathBuf>("camera") {
        Some(p) => Some(read_camera(p)?),
        None => {
            let beside = input.with_file_name("camera.json");
            if beside.exists() {
                Some(read_camera(&beside)?)
            } else {
                None
            }
        }
    };
    let (model, store) = run::load_generator(m.get_one::<PathBuf>("checkpoint").expect("required"), &cfg.prn)?;
    let partial = read_ply(input)?;
    if partial.len() != cfg.prn.n_in {
        return Err(PccError::Config(format!(
            "input has {} points but prn.n_in is {}",
            partial.len(),
            cfg.prn.n_in
        )));
    }
    let completed = run::complete_cloud(&model, &store, &partial, camera.map(|c| c.eye()))?;
    write_ply(m.get_one::<PathBuf>("output-ply").expect("required"), &completed)?;
    let ucd = metrics::ucd(partial.positions(), completed.positions(), true)?;
    writeln!(out, "{ucd:e}").map_err(io_out)?;
    Ok(())
}

fn eval(m: &ArgMatches, out: &mut dyn Write) -> Result<()> {
    let cfg = resolve(m)?;
    let split = Split::parse(m.get_one::<String>("split").expect("defaulted"))?;
    let explicit = m.get_one::<PathBuf>("checkpoint");
    if explicit.is_some() && cfg.data.categories.len() != 1 {
        return Err(PccError::Config("--checkpoint needs exactly one entry in data.categories".into()));
    }
    let mut rows = Vec::new();
    for category in &cfg.data.categories {
        if let Some(dir) = m.get_one::<PathBuf>("predictions") {
            for e in read_manifest(&cfg.data.root, category)?.split(split) {
                let gt = read_gt(&cfg.data.root, category, &e.id)?;
                let pred = read_ply(&dir.join(format!("{}.ply", e.id)))?;
                rows.push(run::EvalRow {
                    category: category.clone(),
                    id: e.id.clone(),
                    report: run::scaled(&metrics::evaluate(pred.positions(), gt.positions())?),
                });
            }
        } else {
            let ckpt = explicit
                .cloned()
                .unwrap_or_else(|| run_dir(&cfg, category).join(LAST_CHECKPOINT));
            rows.extend(run::evaluate_category(&cfg, category, split, &ckpt)?);
        }
    }
    let summary = run::write_eval(&cfg, split, &rows)?;
    writeln!(out, "{:<10} {:>10} {:>10} {:>10} {:>10} {:>10}", "category", "cd_l2", "precision", "coverage", "ucd", "uhd").map_err(io_out)?;
    let all = std::iter::once(("overall".to_string(), summary.overall));
    for (name, r) in summary.per_category.iter().cloned().chain(all) {
        writeln!(
            out,
            "{:<10} {:>10.3} {:>10.3} {:>10.3} {:>10.3} {:>10.3}",
            name, r.cd_l2, r.precision, r.coverage, r.ucd, r.uhd
        )
        .map_err(io_out)?;
    }
    Ok(())
}

/// Reference views for estimating η from a single cloud.
fn reference_cameras(size: usize) -> Result<Vec<Camera>> {
    (0..8)
        .map(|i| {
            let az = (i as f64 * 45.0).to_radians();
            let el = 30f64.to_radians();
            let eye = [2.0 * el.cos() * az.cos(), 2.0 * el.cos() * az.sin(), 2.0 * el.sin()];
            Ok(Camera::look_at_default(eye, [0.0; 3], [0.0, 0.0, 1.0], size, size)?)
        })
        .collect()
}

fn viewpoint_camera(m: &ArgMatches) -> Result<Camera> {
    if let Some(p) = m.get_one::<PathBuf>("camera") {
        return read_camera(p);
    }
    let el = m.get_one::<f64>("elevation").expect("defaulted").to_radians();
    let az = m.get_one::<f64>("azimuth").expect("defaulted").to_radians();
    let d = *m.get_one::<f64>("distance").expect("defaulted");
    let size = *m.get_one::<usize>("size").expect("defaulted");
    let eye = [d * el.cos() * az.cos(), d * el.cos() * az.sin(), d * el.sin()];
    Ok(Camera::look_at_default(eye, [0.0; 3], [0.0, 0.0, 1.0], size, size)?)
}

/// η for a lone cloud: the bank rule applied to its own fixed-radius
/// renders from eight reference views.
pub fn single_cloud_eta(points: &[Point3], splat: &SplatConfig, size: usize) -> Result<f64> {
    let mut counts = Vec::new();
    for cam in reference_cameras(size)? {
        counts.push(rasterize(points, &cam, splat)?.foreground_count());
    }
    Ok(estimate_eta(&counts, splat.radius, points.len())?)
}

#[derive(Debug, Clone, Serialize)]
pub struct DareComparison {
    pub points: usize,
    pub eta: f64,
    pub fixed_radius: f64,
    pub dare_radius: f64,
    pub projected_area: usize,
    pub reference_points: usize,
    pub reference_foreground: usize,
    pub fixed_holes: f64,
    pub dare_holes: f64,
}

/// Hole fractions of fixed and DARE radii on one view. The reference is
/// the cloud densified 16x and splatted at `r0`.
pub fn compare_dare(points: &[Point3], camera: &Camera, splat: &SplatConfig, eta: f64, seed: u64) -> Result<DareComparison> {
    let fixed = render_depth(points, camera, splat)?;
    let (dare, r_dare) = render_depth_dare(points, camera, splat, eta)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let dense = densify(points, 16, 8, &mut rng)?;
    let reference = render_depth(&dense, camera, splat)?.binarize();
    Ok(DareComparison {
        points: points.len(),
        eta,
        fixed_radius: splat.radius,
        dare_radius: r_dare,
        projected_area: fixed.foreground_count(),
        reference_points: dense.len(),
        reference_foreground: reference.foreground_count(),
        fixed_holes: hole_fraction(&fixed.binarize(), &reference)?,
        dare_holes: hole_fraction(&dare.binarize(), &reference)?,
    })
}

fn write_maps(dir: &Path, depth: &DepthMap, mask: &SilhouetteMap, png: bool) -> Result<()> {
    write_pfm(&dir.join("depth.pfm"), depth)?;
    write_pgm(&dir.join("silhouette.pgm"), mask)?;
    if png {
        write_depth_png(&dir.join("depth.png"), depth)?;
        write_silhouette_png(&dir.join("silhouette.png"), mask)?;
    }
    Ok(())
}

fn render(m: &ArgMatches, out: &mut dyn Write) -> Result<()> {
    let cloud = read_ply(m.get_one::<PathBuf>("input").expect("required"))?;
    let dir = m.get_one::<PathBuf>("out-dir").expect("required");
    let camera = viewpoint_camera(m)?;
    let r0 = *m.get_one::<f64>("fixed-radius").expect("defaulted");
    let splat = SplatConfig::default().with_radius(r0);
    splat.validate().map_err(|e| PccError::Config(format!("--fixed-radius: {e}")))?;
    let png = m.get_flag("png");
    let points = cloud.positions();
    let use_dare = m.get_flag("dare") || m.get_flag("compare-dare");
    let eta = match (use_dare, m.get_one::<f64>("eta")) {
        (false, _) => None,
        (true, Some(&e)) => Some(e),
        (true, None) => Some(single_cloud_eta(points, &splat, camera.width)?),
    };
    let fixed = rasterize(points, &camera, &splat)?;
    let (depth, mask) = match eta {
        Some(eta) if m.get_flag("dare") => {
            let (d, r) = render_depth_dare(points, &camera, &splat, eta)?;
            writeln!(out, "dare radius {r:.5} (eta {eta:.4})").map_err(io_out)?;
            let mask = rasterize(points, &camera, &splat.with_radius(r))?.silhouette(splat.gamma);
            (d, mask)
        }
        _ => (fixed.depth(), fixed.silhouette(splat.gamma)),
    };
    write_maps(dir, &depth, &mask, png)?;
    writeln!(out, "{} foreground pixels -> {}", depth.foreground_count(), dir.display()).map_err(io_out)?;
    if m.get_flag("compare-dare") {
        let cmp = compare_dare(points, &camera, &splat, eta.expect("set for --compare-dare"), 0)?;
        writeln!(
            out,
            "holes fixed {:.4} (r {:.4})  dare {:.4} (r {:.4})  reference {} px",
            cmp.fixed_holes, cmp.fixed_radius, cmp.dare_holes, cmp.dare_radius, cmp.reference_foreground
        )
        .map_err(io_out)?;
        write_json(&dir.join("compare_dare.json"), &cmp)?;
    }
    Ok(())
}

fn gradcheck(m: &ArgMatches, out: &mut dyn Write) -> Result<()> {
    let results = gradsuite::run_suite(m.get_flag("inject-fault"))?;
    writeln!(out, "{:<28} {:>12} {:>10}  result", "check", "max rel err", "tolerance").map_err(io_out)?;
    let mut failed = 0;
    for r in &results {
        let ok = r.passed();
        failed += usize::from(!ok);
        writeln!(
            out,
            "{:<28} {:>12.3e} {:>10.0e}  {}",
            r.name,
            r.max_rel_error,
            r.tolerance,
            if ok { "pass" } else { "FAIL" }
        )
        .map_err(io_out)?;
    }
    writeln!(out, "{} checks, {} failed", results.len(), failed).map_err(io_out)?;
    if failed > 0 {
        return Err(PccError::Numerical(format!("{failed} gradient checks failed")));
    }
    Ok(())
}
