use crate::config::{self, CheckpointRun, Common, GradcheckRun, Object, SceneChoice, COMMON_KEYS, SCENE_KEYS};
use anyhow::{anyhow, Context};
use hypergaussians::bench::{self, BenchParams};
use hypergaussians::dynafit::{self, Checkpoint, FitConfig, SceneSpec};
use hypergaussians::gradients::GradOp;
use hypergaussians::hypergauss::SCHEMA_VERSION;
use hypergaussians::splat::RenderOptions;
use serde::Serialize;
use serde_json::Value;
use std::path::Path;
use std::time::Instant;

pub enum CliError {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

trait Classify<T> {
    fn config(self) -> Result<T, CliError>;
    fn runtime(self) -> Result<T, CliError>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn config(self) -> Result<T, CliError> {
        self.map_err(|e| CliError::Config(e.into()))
    }
    fn runtime(self) -> Result<T, CliError> {
        self.map_err(|e| CliError::Runtime(e.into()))
    }
}

fn config_error(msg: String) -> CliError {
    CliError::Config(anyhow!(msg))
}

fn common(obj: &mut Object) -> Result<Common, CliError> {
    let c: Common = config::typed(config::take(obj, &COMMON_KEYS), "common").config()?;
    config::check_schema(c.schema_version).config()?;
    Ok(c)
}

#[derive(Serialize)]
struct RunRecord<'a> {
    schema_version: u32,
    command: &'a str,
    config: Value,
}

/// Creates the output directory and records the resolved config in `run.json`.
fn prepare(dir: &Path, command: &str, config: Value) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display())).runtime()?;
    let rec = RunRecord { schema_version: SCHEMA_VERSION, command, config };
    write_json(&dir.join("run.json"), &rec)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).runtime()?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display())).runtime()
}

pub fn bench(mut obj: Object) -> Result<(), CliError> {
    let c = common(&mut obj)?;
    let params: BenchParams = config::typed(obj, "bench").config()?;
    params.validate().config()?;
    prepare(&c.output_dir, "bench", config::merged(&[&params, &c]))?;

    let start = Instant::now();
    let recs = bench::bench_conditioning(&params).runtime()?;
    let path = c.output_dir.join("bench.csv");
    bench::emit_csv(&recs, &path).runtime()?;

    println!("{:<10} {:>5} {:>12} {:>10} {:>12} {:>6}", "method", "n", "time_ms", "std_ms", "mem_MB", "runs");
    for r in &recs {
        println!(
            "{:<10} {:>5} {:>12.3} {:>10.3} {:>12.2} {:>6}",
            r.method,
            r.n,
            r.time_ms,
            r.std_ms,
            r.mem_bytes as f64 / 1e6,
            r.runs
        );
    }
    for &n in &params.n_list {
        if let Some((t, m)) = bench::ratios(&recs, n) {
            println!("n = {n}: naive/fast time x{t:.2}, memory x{m:.2}");
        }
    }
    println!("wrote {} ({} rows) in {:.1}s", path.display(), recs.len(), start.elapsed().as_secs_f64());
    Ok(())
}

#[derive(Serialize)]
struct FitSummary<'a> {
    schema_version: u32,
    iterations: usize,
    latent_dim: usize,
    final_loss: f64,
    mean_psnr: f64,
    psnr: &'a [f64],
    loss_trace: &'a [f64],
}

pub fn fit(mut obj: Object) -> Result<(), CliError> {
    let c = common(&mut obj)?;
    let choice: SceneChoice = config::typed(config::take(&mut obj, &SCENE_KEYS), "scene").config()?;
    let cfg: FitConfig = config::typed(obj, "fit").config()?;
    cfg.validate().config()?;
    let spec = match &choice.scene_file {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("cannot read scene file {}", p.display())).config()?;
            serde_json::from_str::<SceneSpec>(&text)
                .with_context(|| format!("invalid scene file {}", p.display()))
                .config()?
        }
        None => SceneSpec::preset(&choice.preset, cfg.seed),
    };
    spec.validate().config()?;
    prepare(&c.output_dir, "fit", config::merged(&[&cfg, &choice, &c]))?;

    let scene = dynafit::make_scene(&spec).runtime()?;
    let report = dynafit::fit(&scene, &cfg).runtime()?;
    let ck = Checkpoint::new(&spec, &cfg, &report.model);
    let mut text = ck.to_json();
    text.push('\n');
    std::fs::write(c.output_dir.join("checkpoint.json"), text).context("cannot write checkpoint").runtime()?;
    let summary = FitSummary {
        schema_version: SCHEMA_VERSION,
        iterations: cfg.iterations,
        latent_dim: cfg.latent_dim,
        final_loss: report.final_loss(),
        mean_psnr: report.mean_psnr(),
        psnr: &report.psnr,
        loss_trace: &report.loss_trace,
    };
    write_json(&c.output_dir.join("report.json"), &summary)?;
    dynafit::write_trace_csv(&report.loss_trace, c.output_dir.join("trace.csv")).runtime()?;
    println!(
        "fit {} (seed {}), n = {}: {} iterations, final L1 {:.6}, mean PSNR {:.2} dB, {:.1}s",
        spec.preset,
        spec.seed,
        cfg.latent_dim,
        cfg.iterations,
        summary.final_loss,
        summary.mean_psnr,
        report.wall_time_s
    );
    println!("wrote checkpoint.json, report.json, trace.csv to {}", c.output_dir.display());
    Ok(())
}

fn load_checkpoint(run: &CheckpointRun) -> Result<(Checkpoint, Vec<usize>), CliError> {
    config::check_schema(run.schema_version).config()?;
    let text = std::fs::read_to_string(&run.checkpoint)
        .with_context(|| format!("cannot read checkpoint {}", run.checkpoint.display()))
        .config()?;
    let ck = Checkpoint::from_json(&text)
        .with_context(|| format!("invalid checkpoint {}", run.checkpoint.display()))
        .config()?;
    let frames = ck.model.num_frames();
    let list = match run.frame {
        Some(f) if f >= frames => return Err(config_error(format!("frame {f} out of range ({frames} frames)"))),
        Some(f) => vec![f],
        None => (0..frames).collect(),
    };
    Ok((ck, list))
}

fn checkpoint_images(
    obj: Object,
    command: &str,
    prefix: &str,
    draw: impl Fn(&Checkpoint, usize) -> Result<hypergaussians::Image, anyhow::Error>,
) -> Result<(), CliError> {
    let run: CheckpointRun = config::typed(obj, command).config()?;
    let (ck, frames) = load_checkpoint(&run)?;
    prepare(&run.output_dir, command, serde_json::to_value(&run).runtime()?)?;
    for &f in &frames {
        let img = draw(&ck, f).runtime()?;
        img.write_ppm(run.output_dir.join(format!("{prefix}_{f:04}.ppm"))).runtime()?;
    }
    println!("wrote {} {prefix} image(s) to {}", frames.len(), run.output_dir.display());
    Ok(())
}

pub fn render(obj: Object) -> Result<(), CliError> {
    checkpoint_images(obj, "render", "frame", |ck, f| {
        Ok(ck.model.render_frame(f, &ck.scene.camera(), &RenderOptions::default())?)
    })
}

pub fn uncertainty(obj: Object) -> Result<(), CliError> {
    checkpoint_images(obj, "uncertainty", "uncertainty", |ck, f| {
        Ok(dynafit::uncertainty_map(&ck.model, &ck.scene.camera(), f)?)
    })
}

#[derive(Serialize)]
struct GradRow<'a> {
    op: &'a str,
    seed: u64,
    eps: f64,
    max_rel_error: f64,
    argmax: usize,
    coords_checked: usize,
}

pub fn gradcheck(obj: Object) -> Result<(), CliError> {
    let run: GradcheckRun = config::typed(obj, "gradcheck").config()?;
    config::check_schema(run.schema_version).config()?;
    if !(1e-8..=1e-3).contains(&run.eps) {
        return Err(config_error(format!("eps {} outside 1e-8..=1e-3", run.eps)));
    }
    if run.seeds == 0 {
        return Err(config_error("seeds must be at least 1".into()));
    }
    if !(run.tolerance > 0.0) {
        return Err(config_error("tolerance must be positive".into()));
    }
    let ops = run
        .ops
        .iter()
        .map(|name| {
            GradOp::ALL.into_iter().find(|o| o.name() == name).ok_or_else(|| config_error(format!("unknown op `{name}`")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    prepare(&run.output_dir, "gradcheck", serde_json::to_value(&run).runtime()?)?;

    let path = run.output_dir.join("gradcheck.csv");
    let mut w = csv::Writer::from_path(&path).runtime()?;
    let mut worst = 0.0f64;
    for op in ops {
        for seed in run.seed..run.seed + run.seeds {
            let rep = op.check(seed, run.eps);
            println!("{:<16} seed {seed:<4} max rel {:.3e} at {}", rep.op, rep.max_rel_error, rep.argmax);
            worst = if rep.max_rel_error.is_nan() { f64::NAN } else { worst.max(rep.max_rel_error) };
            w.serialize(GradRow {
                op: &rep.op,
                seed,
                eps: run.eps,
                max_rel_error: rep.max_rel_error,
                argmax: rep.argmax,
                coords_checked: rep.coords_checked,
            })
            .runtime()?;
        }
    }
    w.flush().runtime()?;
    println!("wrote {}; max relative error {worst:.3e}", path.display());
    if !(worst <= run.tolerance) {
        return Err(CliError::Runtime(anyhow!("max relative error {worst:.3e} exceeds tolerance {:.1e}", run.tolerance)));
    }
    Ok(())
}
