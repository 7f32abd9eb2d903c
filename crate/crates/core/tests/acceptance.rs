//! Acceptance criteria. Each test prints one `criterion N: PASS|FAIL` line
//! and then asserts. The line goes to the process stdout directly, so it
//! shows up even when the harness captures output.
//!
//! Tests take a shared lock so timings are never taken while a sibling runs.

mod common;

use common::*;
use hypergaussians::bench::{self, BenchParams, Method};
use hypergaussians::conditioning::{condition_fast, condition_naive, DenseJoint};
use hypergaussians::dynafit::{self, FitConfig, FitReport, SceneSequence, SceneSpec};
use hypergaussians::gradients::{check_gradients, PipelineInstance};
use hypergaussians::hypergauss::Gaussian3D;
use hypergaussians::linalg::Mat;
use hypergaussians::rng;
use hypergaussians::splat::{rasterize, render_forward, Camera, RenderOptions};
use std::io::Write;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(id: u32, name: &str, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "criterion {id}: {verdict} {name}: {detail}").unwrap();
    out.flush().unwrap();
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn criterion_1_conditioning_equivalence() {
    let _g = serial();
    let start = Instant::now();
    let (mut worst_mu, mut worst_ld) = (0.0f64, 0.0f64);
    for m in [1, 3, 4] {
        for n in [1, 2, 4, 8, 16] {
            let mut r = rng::stream(1, &format!("c1-{m}-{n}"));
            for _ in 0..200 {
                let block = random_block(&mut r, m, n);
                let l22 = random_lower(&mut r, n);
                let gamma = rng::normals(&mut r, n, 1.0);
                let sigma = inverse(&joint_precision(&block, &l22));
                let mu = block.mu_a.iter().chain(&block.mu_b).copied().collect();
                let joint = DenseJoint::new(mu, Mat::from_rows(&sigma)).unwrap();
                let (mu_naive, cov_naive) = condition_naive(&joint, m, &gamma).unwrap();
                let fast = condition_fast(&block, &gamma).unwrap();
                worst_mu = worst_mu.max(max_rel_diff(&fast.mu_cond, &mu_naive));
                worst_ld = worst_ld.max((fast.logdet_cov_cond - log_abs_det(&dense(&cov_naive)).0).abs());
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst_mu < 1e-8 && worst_ld < 1e-8 && secs < 10.0;
    report(1, "conditioning equivalence", pass, format!("mean rel {worst_mu:.2e}, logdet abs {worst_ld:.2e}, {secs:.2}s"));
    assert!(pass);
}

#[test]
fn criterion_2_uncertainty_identity() {
    let _g = serial();
    let start = Instant::now();
    let mut r = rng::stream(2, "c2");
    let mut worst = 0.0f64;
    for k in 0..100 {
        let (m, n) = (1 + k % 4, 1 + (k * 13) % 32);
        let block = random_block(&mut r, m, n);
        let l22 = random_lower(&mut r, n);
        let sigma = inverse(&joint_precision(&block, &l22));
        let aa: Dense = sigma[..m].iter().map(|row| row[..m].to_vec()).collect();
        let ab: Dense = sigma[..m].iter().map(|row| row[m..].to_vec()).collect();
        let bb: Dense = sigma[m..].iter().map(|row| row[m..].to_vec()).collect();
        let corr = matmul(&matmul(&ab, &inverse(&bb)), &transpose(&ab));
        let cond: Dense = (0..m).map(|i| (0..m).map(|j| aa[i][j] - corr[i][j]).collect()).collect();
        let trace_form = -2.0 * (0..m).map(|i| block.raw_diag(i)).sum::<f64>();
        worst = worst.max((trace_form - log_abs_det(&cond).0).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst < 1e-8 && secs < 5.0;
    report(2, "uncertainty identity", pass, format!("max abs {worst:.2e}, {secs:.2}s"));
    assert!(pass);
}

#[test]
fn criterion_3_gradient_correctness() {
    let _g = serial();
    let start = Instant::now();
    let mut worst = (0.0f64, 0u64);
    for seed in 0..20 {
        let inst = PipelineInstance::random(seed, 4, 8, 2, 2);
        let f = inst.objective();
        let x = f.template.values.clone();
        let rep = check_gradients("pipeline", &f, &x, 1e-5);
        if rep.max_rel_error > worst.0 || rep.max_rel_error.is_nan() {
            worst = (rep.max_rel_error, seed);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst.0 < 1e-4 && secs < 120.0;
    report(3, "gradient correctness", pass, format!("max rel {:.2e} (seed {}), {secs:.1}s", worst.0, worst.1));
    assert!(pass);
}

/// Runs the (n = 8, n = 128) cells with a per-cell time budget; `None` runs
/// the full protocol.
fn efficiency(budget: Option<f64>) -> (bool, String) {
    let start = Instant::now();
    let p = BenchParams { n_list: vec![8, 128], warmup: 10, time_budget_s: budget, ..BenchParams::default() };
    let recs = bench::bench_conditioning(&p).unwrap();
    let (t8, m8) = bench::ratios(&recs, 8).unwrap();
    let (t128, m128) = bench::ratios(&recs, 128).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let runs: Vec<String> = recs.iter().map(|r| format!("{}@{}:{}", r.method, r.n, r.runs)).collect();
    let pass = t8 >= 1.5 && t128 >= 10.0 && m8 >= 1.5 && m128 >= 10.0 && secs < 900.0;
    let detail = format!(
        "time x{t8:.1} (n=8), x{t128:.0} (n=128); memory x{m8:.2}, x{m128:.1}; runs [{}]; {secs:.0}s",
        runs.join(" ")
    );
    let reported = format!(
        "reported only: +{:.0}% speed at n=8, +{:.0}% at n=128, memory {:.0} MB -> {:.0} MB at n=8",
        (t8 - 1.0) * 100.0,
        (t128 - 1.0) * 100.0,
        bench::working_memory(Method::Naive, p.g, 3, 8) as f64 / 1e6,
        bench::working_memory(Method::Fast, p.g, 3, 8) as f64 / 1e6
    );
    (pass, format!("{detail}; {reported}"))
}

#[test]
fn criterion_4_efficiency_ordering() {
    let _g = serial();
    let (pass, detail) = efficiency(Some(60.0));
    report(4, "efficiency ordering", pass, detail);
    assert!(pass);
}

#[test]
#[ignore = "full 1000-run protocol takes hours on one core"]
fn criterion_4_full_protocol() {
    let _g = serial();
    let (pass, detail) = efficiency(None);
    report(4, "efficiency ordering (full protocol)", pass, detail);
    assert!(pass);
}

const FIT_SEEDS: [u64; 3] = [0, 1, 2];
const LATENT_DIMS: [usize; 3] = [0, 1, 8];

struct BlinkRuns {
    scenes: Vec<SceneSequence>,
    /// `fits[seed_index][dim_index]`
    fits: Vec<Vec<FitReport>>,
    elapsed: Duration,
}

fn blink_runs() -> &'static BlinkRuns {
    static RUNS: OnceLock<BlinkRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let start = Instant::now();
        let scenes: Vec<SceneSequence> =
            FIT_SEEDS.iter().map(|&s| dynafit::make_scene(&SceneSpec::preset("blink", s)).unwrap()).collect();
        let fits = FIT_SEEDS
            .iter()
            .zip(&scenes)
            .map(|(&seed, scene)| {
                LATENT_DIMS
                    .iter()
                    .map(|&n| dynafit::fit(scene, &FitConfig { latent_dim: n, seed, ..FitConfig::default() }).unwrap())
                    .collect()
            })
            .collect();
        BlinkRuns { scenes, fits, elapsed: start.elapsed() }
    })
}

#[test]
fn criterion_5_representational_benefit() {
    let _g = serial();
    let runs = blink_runs();
    let iters = FitConfig::default().iterations;
    let final_med = |d: usize| median(runs.fits.iter().map(|f| f[d].final_loss()).collect());
    let early_med = |d: usize| median(runs.fits.iter().map(|f| f[d].loss_trace[iters / 4]).collect());
    let (l0, l1, l8) = (final_med(0), final_med(1), final_med(2));
    let (e0, e8) = (early_med(0), early_med(2));
    let secs = runs.elapsed.as_secs_f64();
    let pass = l1 < l0 && l8 <= l1 && e8 < e0 && secs < 1800.0;
    report(
        5,
        "representational benefit",
        pass,
        format!("final L1 n=0 {l0:.5}, n=1 {l1:.5}, n=8 {l8:.5}; at 25% n=0 {e0:.5}, n=8 {e8:.5}; {secs:.0}s"),
    );
    assert!(pass);
}

#[test]
fn criterion_6_rasterizer_correctness() {
    let _g = serial();
    let mut view = [[0.0; 4]; 4];
    for (i, row) in view.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let cam = Camera { view, fx: 80.0, fy: 80.0, cx: 32.0, cy: 32.0, width: 64, height: 64, near: 0.01 };
    let iso = |z: f64| Gaussian3D {
        mu: [0.0, 0.0, z],
        cov: [[0.01, 0.0, 0.0], [0.0, 0.01, 0.0], [0.0, 0.0, 0.01]],
        opacity: 0.5,
        color: [1.0; 3],
    };
    let center = rasterize(&[iso(3.0), iso(5.0)], &cam).pixel(32, 32);
    let blend_err = center.iter().map(|v| (v - 0.75).abs()).fold(0.0, f64::max);

    let mut worst_t = 0.0f64;
    let mut golden_same = true;
    for seed in 0..10 {
        let mut r = rng::stream(seed, "c6");
        let scene: Vec<Gaussian3D> = (0..80)
            .map(|_| {
                let n = rng::normals(&mut r, 12, 1.0);
                let q = [1.0 + 0.3 * n[3], 0.3 * n[4], 0.3 * n[5], 0.3 * n[6]];
                let s = [-2.0 + 0.4 * n[7], -2.0 + 0.4 * n[8], -2.0 + 0.4 * n[9]];
                Gaussian3D {
                    mu: [0.5 * n[0], 0.5 * n[1], 3.0 + 0.5 * n[2]],
                    cov: hypergaussians::splat_covariance(q, s).unwrap(),
                    opacity: 1.0 / (1.0 + (-n[10]).exp()),
                    color: [n[11].abs().min(1.0); 3],
                }
            })
            .collect();
        let (img, tape) = render_forward(&scene, &cam, &RenderOptions::default());
        for y in 0..64 {
            for x in 0..64 {
                worst_t = worst_t.max((tape.weight_sum(x, y) + tape.final_transmittance(x, y) - 1.0).abs());
            }
        }
        golden_same &= img.to_ppm_bytes() == rasterize(&scene, &cam).to_ppm_bytes();
    }
    let pass = blend_err < 1e-9 && worst_t < 1e-9 && golden_same;
    report(
        6,
        "rasterizer correctness",
        pass,
        format!("blend err {blend_err:.1e}, transmittance err {worst_t:.1e}, golden identical {golden_same}"),
    );
    assert!(pass);
}

#[test]
fn criterion_7_uncertainty_localization() {
    let _g = serial();
    let runs = blink_runs();
    let mut wins = 0;
    let mut parts = Vec::new();
    for (scene, fits) in runs.scenes.iter().zip(&runs.fits) {
        let (d, s) = dynafit::region_sigma_means(&fits[2].model, scene);
        let (d, s) = (d.unwrap(), s.unwrap());
        wins += usize::from(d > s);
        parts.push(format!("{d:.3} vs {s:.3}"));
    }
    let pass = wins == FIT_SEEDS.len();
    report(7, "uncertainty localization", pass, format!("{wins}/3 seeds, deforming vs static mean sigma: {}", parts.join(", ")));
    assert!(pass);
}
