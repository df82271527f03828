//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use mapss_audio::distortions::{apply_distortion, default_bank, generate_bank, spec_rng, Distortion, NoiseColor, Variant};
use mapss_audio::dsp::{power_spectrum, rms};
use mapss_core::aggregate::{aggregate_pesq, logistic, AggregationConfig};
use mapss_core::bounds::{pm_frame_bound, ps_frame_bound, schur_residual, srcc_bound, truncation_energy, BoundConfig};
use mapss_core::correlation::{pcc, srcc};
use mapss_core::manifold::{build_graph, decompose, diffusion_distance_from_power};
use mapss_core::measures::{
    compute_pm, fit_gamma, mahalanobis, ps_from_distances, score_pm_frame, score_ps_frame, sq_mahalanobis, GammaFit,
};
use mapss_core::rng::stream_rng;
use mapss_core::special::gamma_q;
use mapss_core::FrameLayout;
use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

// Tolerances and sizes.
const DIFFUSION_REL_TOL: f64 = 1e-8;
const DIFFUSION_GRAPHS: usize = 100;
const DIFFUSION_MAX_N: usize = 50;
const DIFFUSION_MAX_M: usize = 64;
const DIFFUSION_TIME_LIMIT_S: f64 = 10.0;
const ROW_STOCHASTIC_TOL: f64 = 1e-12;
const STATIONARY_TOL: f64 = 1e-10;
const ORTHONORMAL_TOL: f64 = 1e-8;
const SCHUR_REL_TOL: f64 = 1e-8;
const SCHUR_SPLITS: usize = 100;
const TRUNCATION_DRAWS: usize = 100_000;
const TRUNCATION_SE: f64 = 3.0;
const COVERAGE_TRIALS: usize = 2000;
const COVERAGE_MIN: f64 = 0.93;
const COVERAGE_DELTA: f64 = 0.05;
const COVERAGE_TIME_LIMIT_S: f64 = 300.0;
const Q_TOL: f64 = 1e-12;
const PM_MONOTONE_POINTS: usize = 1000;
const PS_ARITH_TOL: f64 = f64::EPSILON;
const GAMMA_REL_TOL: f64 = 0.10;
const GAMMA_SAMPLES: usize = 1000;
const GAMMA_SEEDS: usize = 200;
const GAMMA_MIN_SHARE: f64 = 0.95;
const POOLING_TOL: f64 = 1e-12;
const CORR_TOL: f64 = 1e-12;
const CORR_VECTORS: usize = 1000;
const SNR_TOL_DB: f64 = 0.5;
const NOTCH_MIN_DB: f64 = 25.0;
const DEMO_TIME_LIMIT_S: f64 = 60.0;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_points(rng: &mut impl Rng, n: usize, m: usize) -> DMatrix<f64> {
    // a few clusters so the spectrum is not flat
    let k = rng.random_range(1..=4);
    let centres: Vec<DVector<f64>> = (0..k).map(|_| DVector::from_fn(m, |_, _| rng.random_range(-3.0..3.0))).collect();
    DMatrix::from_fn(n, m, |i, j| centres[i % k][j] + rng.sample::<f64, _>(StandardNormal))
}

fn diffusion_identity() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for g_idx in 0..DIFFUSION_GRAPHS {
        let mut rng = stream_rng(1, g_idx as u64);
        let n = rng.random_range(3..=DIFFUSION_MAX_N);
        let m = rng.random_range(1..=DIFFUSION_MAX_M);
        let alpha = rng.random_range(0.0..=1.0);
        let t = rng.random_range(1..=4);
        let x = random_points(&mut rng, n, m);
        let g = build_graph(&x, alpha).map_err(|e| e.to_string())?;
        let se = decompose(&g, t, 0.9).map_err(|e| e.to_string())?;
        let pt = g.transition_power(t);
        for i in 0..n {
            for j in i + 1..n {
                let dd = diffusion_distance_from_power(&pt, &g.stationary, i, j).unwrap();
                let de = se.embedded_distance(i, j).unwrap();
                worst = worst.max((dd - de).abs() / dd.max(1e-300));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= DIFFUSION_REL_TOL && secs < DIFFUSION_TIME_LIMIT_S,
        format!("{DIFFUSION_GRAPHS} graphs, worst relative gap {worst:.2e}, {secs:.2} s"),
    )
}

fn operator_laws() -> Outcome {
    let (mut row, mut stat, mut orth) = (0.0f64, 0.0f64, 0.0f64);
    for g_idx in 0..DIFFUSION_GRAPHS {
        let mut rng = stream_rng(1, g_idx as u64);
        let n = rng.random_range(3..=DIFFUSION_MAX_N);
        let m = rng.random_range(1..=DIFFUSION_MAX_M);
        let alpha = rng.random_range(0.0..=1.0);
        let _t: u32 = rng.random_range(1..=4);
        let x = random_points(&mut rng, n, m);
        let g = build_graph(&x, alpha).map_err(|e| e.to_string())?;
        for r in 0..n {
            row = row.max((g.transition.row(r).sum() - 1.0).abs());
        }
        let pi_p = g.stationary.transpose() * &g.transition;
        for c in 0..n {
            stat = stat.max((pi_p[c] - g.stationary[c]).abs());
        }
        let se = decompose(&g, 1, 0.9).map_err(|e| e.to_string())?;
        let u = &se.eigenvectors;
        for a in 0..u.ncols() {
            for b in a..u.ncols() {
                let ip: f64 = (0..n).map(|k| g.stationary[k] * u[(k, a)] * u[(k, b)]).sum();
                orth = orth.max((ip - if a == b { 1.0 } else { 0.0 }).abs());
            }
        }
    }
    check(
        row <= ROW_STOCHASTIC_TOL && stat <= STATIONARY_TOL && orth <= ORTHONORMAL_TOL,
        format!("row sums {row:.1e}, stationarity {stat:.1e}, π-orthonormality {orth:.1e}"),
    )
}

fn schur_identity() -> Outcome {
    let mut worst: f64 = 0.0;
    for s in 0..SCHUR_SPLITS {
        let mut rng = stream_rng(2, s as u64);
        let n = rng.random_range(2..=24);
        let d = rng.random_range(1..n);
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let sigma = &a * a.transpose() + DMatrix::identity(n, n) * rng.random_range(1e-3..1.0);
        let delta = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal) * 2.0);
        let eps = 1e-6;
        let res = schur_residual(&sigma, &delta, d, eps).map_err(|e| e.to_string())?;
        let full = sq_mahalanobis(&delta, &DVector::zeros(n), &sigma, eps).map_err(|e| e.to_string())?;
        worst = worst.max((res.truncated + res.residual_energy - full).abs() / full);
    }
    check(worst <= SCHUR_REL_TOL, format!("{SCHUR_SPLITS} splits, worst relative gap {worst:.2e}"))
}

fn truncation_expectation() -> Outcome {
    let mut rng = stream_rng(3, 0);
    let x = random_points(&mut rng, 40, 6);
    let g = build_graph(&x, 1.0).map_err(|e| e.to_string())?;
    let se = decompose(&g, 1, 0.6).map_err(|e| e.to_string())?;
    let energies: Vec<f64> = (0..g.len()).map(|k| truncation_energy(&se, k)).collect();
    let expected: f64 = se.powered_eigenvalues().iter().skip(se.d).map(|l| l * l).sum();
    let pick = WeightedIndex::new(g.stationary.iter().copied()).map_err(|e| e.to_string())?;
    let draws: Vec<f64> = (0..TRUNCATION_DRAWS).map(|_| energies[pick.sample(&mut rng)]).collect();
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se_mean = (var / n).sqrt();
    let z = (mean - expected).abs() / se_mean;
    check(
        z <= TRUNCATION_SE,
        format!("d = {} of {}, mean {mean:.6e} vs tail {expected:.6e}, {z:.2} standard errors", se.d, se.full_dim()),
    )
}

/// Fraction of trials whose interval `radius + half_width` covers the truth.
fn coverage() -> Outcome {
    let start = Instant::now();
    let cfg = BoundConfig { delta: COVERAGE_DELTA, ..BoundConfig::default() };
    let eps = 1e-6;
    let np = 60;
    let (mut cov_ps, mut cov_pm, mut n_ps, mut n_pm) = (0usize, 0usize, 0usize, 0usize);
    for trial in 0..COVERAGE_TRIALS {
        let mut rng = stream_rng(4, trial as u64);
        let dim = [2, 3, 5, 8][trial % 4];
        let mus: Vec<DVector<f64>> =
            (0..2).map(|s| DVector::from_fn(dim, |k, _| if k == 0 { 3.0 * s as f64 } else { 0.0 })).collect();
        let ls: Vec<DMatrix<f64>> = (0..2)
            .map(|_| DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-0.5..0.5)) + DMatrix::identity(dim, dim))
            .collect();
        let per = np + 2;
        let mut coords = DMatrix::zeros(2 * per, dim);
        for s in 0..2 {
            for r in 0..per {
                let z = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
                let x = &mus[s] + &ls[s] * z;
                coords.set_row(s * per + r, &x.transpose());
            }
        }
        let layout = FrameLayout::canonical(2, np);
        let sig: Vec<DMatrix<f64>> = ls.iter().map(|l| l * l.transpose()).collect();

        let scores = score_ps_frame(&coords, &layout, eps).map_err(|e| e.to_string())?;
        let out = coords.row(layout.sources[0].output).transpose();
        let a = mahalanobis(&out, &mus[0], &sig[0], eps).unwrap();
        let b = mahalanobis(&out, &mus[1], &sig[1], eps).unwrap();
        let truth = 1.0 - a / (a + b);
        if let Ok(fb) = ps_frame_bound(&coords, dim, &layout.sources, 0, &scores[0], &cfg) {
            n_ps += 1;
            if (scores[0].ps - truth).abs() <= fb.radius + fb.half_width {
                cov_ps += 1;
            }
        }

        // PM world: the reference sits at the true centre, so squared
        // distances of the distortions are Gamma(dim/2, 2).
        let rows = &layout.sources[0];
        let mut c2 = coords.clone();
        c2.set_row(rows.reference, &mus[0].transpose());
        let pm = score_pm_frame(&c2, &layout, eps).map_err(|e| e.to_string())?;
        let a_true = sq_mahalanobis(&c2.row(rows.output).transpose(), &mus[0], &sig[0], eps).unwrap();
        let truth = gamma_q(dim as f64 / 2.0, a_true / 2.0);
        if let Ok(fb) = pm_frame_bound(&c2, dim, rows, &pm[0], &cfg) {
            n_pm += 1;
            if (pm[0].pm - truth).abs() <= fb.radius + fb.half_width {
                cov_pm += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let (rp, rm) = (cov_ps as f64 / COVERAGE_TRIALS as f64, cov_pm as f64 / COVERAGE_TRIALS as f64);
    check(
        rp >= COVERAGE_MIN && rm >= COVERAGE_MIN && secs < COVERAGE_TIME_LIMIT_S,
        format!("PS {rp:.4} ({n_ps} bounded), PM {rm:.4} ({n_pm} bounded) over {COVERAGE_TRIALS} trials, {secs:.1} s"),
    )
}

fn closed_form_pm() -> Outcome {
    let half = gamma_q(1.0, std::f64::consts::LN_2);
    let mut zero_ok = true;
    for k in [0.1f64, 0.5, 1.0, 2.5, 10.0, 100.0] {
        zero_ok &= (gamma_q(k, 0.0) - 1.0).abs() <= Q_TOL;
    }
    let mut rng = stream_rng(5, 0);
    let mut violations = 0;
    for _ in 0..PM_MONOTONE_POINTS {
        let k: f64 = rng.random_range(0.2..50.0);
        let theta: f64 = rng.random_range(0.05..10.0);
        let fit = GammaFit::from_moments(k * theta, k * theta * theta, 100).unwrap();
        let a: f64 = rng.random_range(0.0..200.0);
        let da: f64 = rng.random_range(0.0..10.0);
        if compute_pm(&fit, a + da) > compute_pm(&fit, a) {
            violations += 1;
        }
    }
    check(
        (half - 0.5).abs() <= Q_TOL && zero_ok && violations == 0,
        format!("Q(1, ln 2) - 0.5 = {:.1e}, Q(k, 0) = 1: {zero_ok}, {violations} monotonicity violations in {PM_MONOTONE_POINTS}", half - 0.5),
    )
}

fn ps_arithmetic() -> Outcome {
    let grid: Vec<f64> = (1..=40).map(|k| k as f64 * 0.25).collect();
    let mut worst: f64 = 0.0;
    for &a in &grid {
        for &b in &grid {
            let ps = ps_from_distances(a, b).unwrap();
            worst = worst.max((a / (a + b) - (1.0 - ps)).abs());
        }
    }
    let mut contour: f64 = 0.0;
    for level in [0.25, 0.5, 0.75] {
        for &a in &grid {
            let b = a * level / (1.0 - level);
            contour = contour.max((ps_from_distances(a, b).unwrap() - level).abs());
        }
    }
    check(
        worst <= PS_ARITH_TOL && contour <= 4.0 * PS_ARITH_TOL,
        format!("{} grid points, identity gap {worst:.1e}, contour gap {contour:.1e}", grid.len() * grid.len()),
    )
}

fn gamma_recovery() -> Outcome {
    let params = [(1.0, 2.0), (2.5, 1.0), (4.0, 0.5), (8.0, 3.0), (16.0, 0.25)];
    let mut parts = Vec::new();
    let mut ok = true;
    for (pi, &(k, theta)) in params.iter().enumerate() {
        let law = Gamma::new(k, theta).unwrap();
        let mut hits = 0;
        for seed in 0..GAMMA_SEEDS {
            let mut rng = stream_rng(6, (pi * GAMMA_SEEDS + seed) as u64);
            let d: Vec<f64> = (0..GAMMA_SAMPLES).map(|_| law.sample(&mut rng)).collect();
            let fit = fit_gamma(&d).unwrap();
            if (fit.shape / k - 1.0).abs() <= GAMMA_REL_TOL && (fit.scale / theta - 1.0).abs() <= GAMMA_REL_TOL {
                hits += 1;
            }
        }
        let share = hits as f64 / GAMMA_SEEDS as f64;
        ok &= share >= GAMMA_MIN_SHARE;
        parts.push(format!("k={k} θ={theta}: {share:.3}"));
    }
    check(ok, format!("share of seeds within 10%: {}", parts.join(", ")))
}

fn pooling_constants() -> Outcome {
    let cfg = AggregationConfig::default();
    let mut worst: f64 = 0.0;
    for k in 0..=100 {
        let v = k as f64 / 100.0;
        let pooled = aggregate_pesq(&vec![v; 97], &cfg).unwrap();
        let want = 0.999 + 4.0 / (1.0 + (-1.3669 * v + 3.8224).exp());
        worst = worst.max((pooled - want).abs());
    }
    let mid = logistic(3.8224 / 1.3669);
    check(
        worst <= POOLING_TOL && (mid - 2.999).abs() <= POOLING_TOL,
        format!("worst gap {worst:.1e}, midpoint {mid:.15}"),
    )
}

fn brute_pcc(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..x.len() {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx).powi(2);
        syy += (y[i] - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

fn brute_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|v| {
            let below = x.iter().filter(|w| *w < v).count() as f64;
            let equal = x.iter().filter(|w| *w == v).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

fn correlation_metrics() -> Outcome {
    let mut rng = stream_rng(7, 0);
    let (mut wp, mut ws) = (0.0f64, 0.0f64);
    let mut tested = 0;
    for i in 0..CORR_VECTORS {
        let n = rng.random_range(3..60);
        let ties = i % 2 == 0;
        let draw = |rng: &mut rand_chacha::ChaCha8Rng| -> f64 {
            if ties {
                rng.random_range(0..5) as f64
            } else {
                rng.sample(StandardNormal)
            }
        };
        let x: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
        let y: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
        let bp = brute_pcc(&x, &y);
        let bs = brute_pcc(&brute_ranks(&x), &brute_ranks(&y));
        match (pcc(&x, &y), srcc(&x, &y)) {
            (Ok(p), Ok(s)) => {
                wp = wp.max((p - bp).abs());
                ws = ws.max((s - bs).abs());
                tested += 1;
            }
            // constant vectors have no defined coefficient
            _ => {
                if bp.is_finite() {
                    return Err(format!("coefficient refused for non-constant input {x:?} {y:?}"));
                }
            }
        }
    }
    let v: Vec<f64> = (0..12).map(|k| k as f64).collect();
    let mos: Vec<f64> = (0..12).map(|_| rng.random_range(1.0..5.0)).collect();
    let bound = srcc_bound(&v, &mos, &[0.0; 12], &[1e-6; 12], 0.95, 10_000, 0, 0).map_err(|e| e.to_string())?;
    check(
        wp <= CORR_TOL && ws <= CORR_TOL && bound.h == 0.0,
        format!("{tested} vectors, PCC gap {wp:.1e}, SRCC gap {ws:.1e}, SRCC half-width with tiny jitter {}", bound.h),
    )
}

fn band_energy(x: &[f64], sr: u32, freq: f64, half: usize) -> f64 {
    let n = x.len().next_power_of_two();
    let p = power_spectrum(x, n);
    let c = (freq * n as f64 / sr as f64).round() as usize;
    p[c.saturating_sub(half)..=(c + half).min(p.len() - 1)].iter().sum()
}

fn distortion_bank() -> Outcome {
    let sr = 16000;
    let tone: Vec<f64> = (0..2 * sr as usize).map(|k| (2.0 * std::f64::consts::PI * 440.0 * k as f64 / sr as f64).sin()).collect();
    let mut snr_worst: f64 = 0.0;
    for color in [NoiseColor::White, NoiseColor::Pink, NoiseColor::Brown] {
        for snr in [-15.0, -10.0, -5.0, 0.0, 5.0, 10.0, 15.0] {
            let y = apply_distortion(&tone, sr, &Distortion::AdditiveNoise { snr_db: snr, color }, &mut spec_rng(3, 1)).unwrap();
            let noise: Vec<f64> = y.iter().zip(&tone).map(|(a, b)| a - b).collect();
            snr_worst = snr_worst.max((20.0 * (rms(&tone) / rms(&noise)).log10() - snr).abs());
        }
    }
    let mut notch_min = f64::INFINITY;
    for centre in [500.0, 1000.0, 2000.0, 4000.0, 6000.0] {
        let x: Vec<f64> = (0..2 * sr as usize).map(|k| (2.0 * std::f64::consts::PI * centre * k as f64 / sr as f64).sin()).collect();
        let y = apply_distortion(&x, sr, &Distortion::Notch { center_hz: centre, half_width_hz: 60.0 }, &mut spec_rng(0, 0)).unwrap();
        notch_min = notch_min.min(10.0 * (band_energy(&x, sr, centre, 2) / band_energy(&y, sr, centre, 2)).log10());
    }
    let mut lengths_ok = true;
    let mut deterministic = true;
    let mut entries = 0;
    for rate in [16000u32, 44100] {
        let x: Vec<f64> = (0..rate as usize)
            .map(|k| {
                let t = k as f64 / rate as f64;
                (0.5 + 0.5 * (2.0 * std::f64::consts::PI * 3.0 * t).sin()) * (2.0 * std::f64::consts::PI * 200.0 * t).sin() * 0.3
            })
            .collect();
        for variant in [Variant::Ps, Variant::Pm] {
            let specs = default_bank(variant, rate);
            let a = generate_bank(&x, rate, &specs, 11, Some(-23.0)).map_err(|e| e.to_string())?;
            let b = generate_bank(&x, rate, &specs, 11, Some(-23.0)).map_err(|e| e.to_string())?;
            lengths_ok &= a.len() == specs.len() && a.iter().all(|y| y.len() == x.len());
            deterministic &= a == b;
            entries += specs.len();
        }
    }
    check(
        snr_worst <= SNR_TOL_DB && notch_min >= NOTCH_MIN_DB && lengths_ok && deterministic,
        format!(
            "worst SNR error {snr_worst:.3} dB, weakest notch {notch_min:.1} dB, {entries} entries length-preserving: {lengths_ok}, deterministic: {deterministic}"
        ),
    )
}

fn read_frames(dir: &Path) -> Result<Vec<serde_json::Value>, String> {
    let text = std::fs::read_to_string(dir.join("frames.jsonl")).map_err(|e| e.to_string())?;
    text.lines().map(|l| serde_json::from_str(l).map_err(|e| e.to_string())).collect()
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_mapss"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("mapss {args:?} failed: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    let start = Instant::now();
    run_cli(&["demo", "--out", root.to_str().unwrap()])?;
    let cfg = root.join("config.toml");
    run_cli(&["eval", "--config", cfg.to_str().unwrap()])?;
    let secs = start.elapsed().as_secs_f64();
    let results = root.join("results");
    let frames = read_frames(&results)?;
    let mut scores = 0usize;
    let mut in_range = true;
    let mut valid = 0usize;
    for f in &frames {
        for m in ["ps", "pm"] {
            for s in f[m]["scores"].as_array().into_iter().flatten() {
                let v = s["value"].as_f64().unwrap_or(f64::NAN);
                in_range &= (0.0..=1.0).contains(&v);
                scores += 1;
                valid += s["bound"]["valid"].as_bool().unwrap_or(false) as usize;
            }
        }
    }
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(results.join("report.json")).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    let has_report = report["utterances"].as_array().is_some_and(|u| u.len() == 10) && results.join("utterances.csv").exists();

    let sweep_out = root.join("sweep");
    run_cli(&["sweep-delay", "--config", cfg.to_str().unwrap(), "--delays", "20,50,100", "--out", sweep_out.to_str().unwrap()])?;
    let mut means = Vec::new();
    for d in [20, 50, 100] {
        let r: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(sweep_out.join(format!("delay_{d}ms")).join("report.json")).map_err(|e| e.to_string())?,
        )
        .map_err(|e| e.to_string())?;
        means.push(r["ps_mean"].as_f64().unwrap_or(f64::NAN));
    }
    let nonincreasing = means.windows(2).all(|w| w[1] <= w[0]);
    check(
        secs < DEMO_TIME_LIMIT_S && !frames.is_empty() && in_range && valid > 0 && has_report && nonincreasing,
        format!(
            "eval {secs:.1} s, {} frames, {scores} scores in [0,1]: {in_range}, {valid} valid bounds, report: {has_report}, mean PS at 20/50/100 ms: {:.4}/{:.4}/{:.4}",
            frames.len(),
            means[0],
            means[1],
            means[2]
        ),
    )
}

fn main() {
    let checks: [(&str, fn() -> Outcome); 12] = [
        ("diffusion identity", diffusion_identity),
        ("operator laws", operator_laws),
        ("Schur identity", schur_identity),
        ("truncation expectation", truncation_expectation),
        ("bound coverage", coverage),
        ("closed-form PM", closed_form_pm),
        ("PS arithmetic", ps_arithmetic),
        ("Gamma moment recovery", gamma_recovery),
        ("aggregation constants", pooling_constants),
        ("correlation metrics", correlation_metrics),
        ("distortion bank", distortion_bank),
        ("end-to-end demo", end_to_end),
    ];
    let mut failed = 0;
    for (name, f) in checks {
        match f() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} of {} criteria pass", checks.len() - failed, checks.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
