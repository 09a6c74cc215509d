//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line (run with `--nocapture` to see them).
//!
//! The recovery and calibration studies run full MCMC; expect the suite to
//! take tens of minutes on a single core. Criteria 4 and 10 share one set
//! of sampler runs.

use nalgebra::{DMatrix, DVector};
use rdmix_core::balance::{log_sd_ratio, mahalanobis_balance, normalized_difference};
use rdmix_core::data::{IngestOptions, ObservedDataset};
use rdmix_core::estimands::{summarize_membership_counts, summarize_rr, PosteriorSummary, RrSummary};
use rdmix_core::kernels::{residual_variance_params, ConjugateLinearUpdate, RngStream};
use rdmix_core::mixture::{geweke::run_geweke, run_chain, Priors, SamplerConfig};
use rdmix_core::synth::{generate, scenario, write_dataset_csv, GenerateConfig};
use rdmix_core::window::{local_polynomial_rd, rubin_combine, KernelKind, WindowSpec};
use std::sync::OnceLock;
use std::time::Instant;

fn pass(criterion: u32, msg: &str) {
    println!("criterion {criterion}: PASS — {msg}");
}

fn fail(criterion: u32, msg: &str) -> String {
    let line = format!("criterion {criterion}: FAIL — {msg}");
    println!("{line}");
    line
}

/// Criterion 1: published values are output-format fixtures only; the
/// source cohort is restricted data, so acceptance is property- and
/// oracle-based. This test pins the report layouts those values flow
/// through.
#[test]
fn criterion_01_published_values_are_format_fixtures() {
    let rr = RrSummary {
        stats: PosteriorSummary {
            median: 0.722,
            pct_2_5: 0.371,
            pct_97_5: 1.882,
            interval_width: 1.511,
            prob_below_1: 0.785,
        },
        n_draws: 5000,
        degenerate_draws: 0,
    };
    let table = rdmix_core::report::rr_table(&rr);
    for needle in ["0.722", "0.371", "1.882", "0.785"] {
        assert!(table.contains(needle), "relative-risk table must render {needle}");
    }
    let json = serde_json::to_value(&rr).unwrap();
    for field in ["median", "pct_2_5", "pct_97_5", "interval_width", "prob_below_1"] {
        assert!(json["stats"].get(field).is_some(), "summary JSON missing {field}");
    }
    pass(
        1,
        "published-table layouts render as fixtures; substantive acceptance is oracle-based (criteria 2-10)",
    );
}

/// Criterion 2: conjugate updates match closed forms assembled and solved
/// through an independent route, to 1e-8, on 20 random fixtures.
#[test]
fn criterion_02_conjugate_oracle() {
    let t0 = Instant::now();
    let mut rng = RngStream::new(20_260_809, 2);
    for fixture in 0..20 {
        let n = 5 + (rng.uniform_open() * 45.9) as usize; // 5..=50
        let p = 1 + (rng.uniform_open() * 4.99) as usize; // 1..=5
        let design = DMatrix::from_fn(n, p, |_, _| rng.std_normal());
        let response = DVector::from_fn(n, |_, _| rng.std_normal());
        let prior_precision = 0.05 + rng.uniform_open();
        let noise_variance = 0.2 + 2.0 * rng.uniform_open();

        let upd = ConjugateLinearUpdate {
            prior_precision_scale: prior_precision,
            noise_variance,
            design: design.clone(),
            response: response.clone(),
        };
        let post = upd.posterior().unwrap();

        // Independent assembly + LU solve.
        let precision =
            design.tr_mul(&design) / noise_variance + DMatrix::identity(p, p) * prior_precision;
        let rhs = design.tr_mul(&response) / noise_variance;
        let lu = precision.clone().lu();
        let mean = lu.solve(&rhs).unwrap();
        let cov = precision.try_inverse().unwrap();
        for a in 0..p {
            assert!(
                (post.mean()[a] - mean[(a, 0)]).abs() < 1e-8,
                "fixture {fixture}: mean component {a}"
            );
            for b in 0..p {
                assert!(
                    (post.covariance()[(a, b)] - cov[(a, b)]).abs() < 1e-8,
                    "fixture {fixture}: covariance ({a},{b})"
                );
            }
        }

        // Variance-block parameters against the direct formula.
        let ss: f64 = response.iter().map(|v| v * v).sum();
        let (df, scale) = residual_variance_params(3.0, 1.0 / 3.0, ss, n);
        assert!((df - (3.0 + n as f64)).abs() < 1e-12);
        assert!((scale - (ss + 1.0) / (3.0 + n as f64)).abs() < 1e-8);
    }
    let elapsed = t0.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "conjugate oracle took {elapsed:?}");
    pass(2, &format!("20 fixtures matched closed forms to 1e-8 in {elapsed:?}"));
}

/// Criterion 3: joint coherence of the Gibbs machinery (forward simulation
/// vs successive substitution) within 3 Monte-Carlo standard errors.
#[test]
fn criterion_03_joint_coherence() {
    let t0 = Instant::now();
    let report = run_geweke(30, 1, 5000, 20_260_809, &Priors::default()).unwrap();
    let elapsed = t0.elapsed();
    let mut msgs = Vec::new();
    for s in &report.stats {
        msgs.push(format!("{} z={:.2}", s.name, s.z_score()));
        assert!(
            s.z_score() < 3.0,
            "{}: forward {:.4}±{:.4} vs successive {:.4}±{:.4} (z {:.2})",
            s.name,
            s.forward_mean,
            s.forward_se,
            s.successive_mean,
            s.successive_se,
            s.z_score()
        );
    }
    assert!(elapsed.as_secs_f64() < 120.0, "joint check took {elapsed:?}");
    pass(3, &format!("{} over 5000 draws/side in {elapsed:?}", msgs.join(", ")));
}

struct RecoveryOutcome {
    rr_covered: u32,
    pi_ok: u32,
    agreement_ok: u32,
    violations: u64,
    reps: u32,
    elapsed_secs: f64,
    notes: Vec<String>,
}

fn recovery_runs() -> &'static RecoveryOutcome {
    static RUNS: OnceLock<RecoveryOutcome> = OnceLock::new();
    RUNS.get_or_init(|| {
        let sc = scenario("separated").unwrap();
        let reps = 20u32;
        let t0 = Instant::now();
        let mut out = RecoveryOutcome {
            rr_covered: 0,
            pi_ok: 0,
            agreement_ok: 0,
            violations: 0,
            reps,
            elapsed_secs: 0.0,
            notes: Vec::new(),
        };
        for rep in 0..reps {
            let mut rng = RngStream::new(400 + rep as u64, 0);
            let (ds, truth) =
                generate(&sc.params, &sc.covariates, &GenerateConfig::new(20_000), &mut rng)
                    .unwrap();
            let mut cfg = SamplerConfig::new(4000, 1000, 7000 + rep as u64);
            cfg.chains = 2;
            cfg.snapshot_stride = 0;
            cfg.bin_width = None;
            let draws = run_chain(&ds, &Priors::default(), &cfg).unwrap();

            let pi = summarize_membership_counts(&draws).unwrap();
            let d_minus = (pi.pi_minus.median - truth.avg_pi[0]).abs();
            let d_zero = (pi.pi_zero.median - truth.avg_pi[1]).abs();
            let d_plus = (pi.pi_plus.median - truth.avg_pi[2]).abs();
            let pi_ok = d_minus <= 0.05 && d_zero <= 0.05 && d_plus <= 0.05;

            let modes = draws.unit_mode_labels();
            let agree = modes.iter().zip(&truth.labels).filter(|(a, b)| a == b).count() as f64
                / ds.n() as f64;
            let agreement_ok = agree >= 0.85;

            let rr = summarize_rr(&draws).unwrap();
            let true_rr = truth.true_rr.expect("separated preset has control-arm cases");
            let covered = rr.stats.pct_2_5 <= true_rr && true_rr <= rr.stats.pct_97_5;

            out.rr_covered += u32::from(covered);
            out.pi_ok += u32::from(pi_ok);
            out.agreement_ok += u32::from(agreement_ok);
            out.violations += draws.structural_zero_violations;
            out.notes.push(format!(
                "rep {rep}: |dpi|=({d_minus:.3},{d_zero:.3},{d_plus:.3}) agree={agree:.3} rr {true_rr:.3} in [{:.3},{:.3}]={covered}",
                rr.stats.pct_2_5, rr.stats.pct_97_5
            ));
        }
        out.elapsed_secs = t0.elapsed().as_secs_f64();
        out
    })
}

/// Criterion 4: synthetic recovery on the separated preset, 20 seeded
/// replications of 2 chains x 4000 iterations on n = 20,000.
#[test]
fn criterion_04_synthetic_recovery() {
    let runs = recovery_runs();
    for note in &runs.notes {
        println!("  {note}");
    }
    let summary = format!(
        "mixing proportions ok {}/{}, mode agreement ok {}/{}, RR covered {}/{}, {:.0}s total",
        runs.pi_ok, runs.reps, runs.agreement_ok, runs.reps, runs.rr_covered, runs.reps,
        runs.elapsed_secs
    );
    let ok = runs.pi_ok == runs.reps
        && runs.agreement_ok == runs.reps
        && runs.rr_covered >= 18
        && runs.elapsed_secs < 1800.0;
    if ok {
        pass(4, &summary);
    } else {
        panic!("{}", fail(4, &summary));
    }
}

/// Criterion 5: null-effect calibration. Pr(RR<1) in [0.2, 0.8] and the
/// 95% interval covering 1 in at least 9 of 10 seeded replications.
///
/// Note on attainability: for a correctly specified sampler the posterior
/// probability Pr(RR<1) behaves like a calibrated tail quantity under the
/// null, spreading over (0,1) across data realizations rather than
/// concentrating near 0.5. The [0.2, 0.8] band would require the posterior
/// width to exceed the sampling noise of its own center by a factor of
/// about 2.3, while for this partially imputed estimand the ratio is
/// bounded near 1 for any preset. Empirical per-replication pass rates sit
/// near 0.5-0.6, so 9-of-10 is essentially unreachable without artificially
/// widening the posterior; the test states the requirement as written and
/// reports the observed rate.
#[test]
fn criterion_05_null_effect_calibration() {
    let sc = scenario("null-effect").unwrap();
    let reps = 10u64;
    let mut passed = 0u32;
    let t0 = Instant::now();
    let mut notes = Vec::new();
    for rep in 0..reps {
        let mut rng = RngStream::new(500 + rep, 0);
        let (ds, _) =
            generate(&sc.params, &sc.covariates, &GenerateConfig::new(50_000), &mut rng).unwrap();
        let mut cfg = SamplerConfig::new(1500, 400, 9000 + rep);
        cfg.snapshot_stride = 0;
        cfg.bin_width = None;
        let draws = run_chain(&ds, &Priors::default(), &cfg).unwrap();
        let rr = summarize_rr(&draws).unwrap();
        let prob_ok = (0.2..=0.8).contains(&rr.stats.prob_below_1);
        let covers = rr.stats.pct_2_5 <= 1.0 && 1.0 <= rr.stats.pct_97_5;
        passed += u32::from(prob_ok && covers);
        notes.push(format!(
            "rep {rep}: Pr(RR<1)={:.3} PCI=({:.3},{:.3}) band={prob_ok} covers1={covers}",
            rr.stats.prob_below_1, rr.stats.pct_2_5, rr.stats.pct_97_5
        ));
    }
    for note in &notes {
        println!("  {note}");
    }
    let summary =
        format!("{passed}/{reps} replications inside the band, {:.0}s total", t0.elapsed().as_secs_f64());
    if passed >= 9 {
        pass(5, &summary);
    } else {
        panic!(
            "{}",
            fail(
                5,
                &format!(
                    "{summary}; a calibrated posterior cannot concentrate Pr(RR<1) in [0.2, 0.8] across replications (see test doc comment)"
                )
            )
        );
    }
}

/// Criterion 6: balance hand fixtures to 1e-12 and affine invariance of
/// the multivariate measure to 1e-8.
#[test]
fn criterion_06_balance_fixtures() {
    let d = normalized_difference(&[1.0, 3.0], &[2.0, 4.0, 6.0]).unwrap().unwrap();
    assert!((d - 2.0 / 3.0f64.sqrt()).abs() < 1e-12, "normalized difference {d}");

    let x0 = [0.0, 2.0];
    let x1 = [0.0, 2.0 * 2.0f64.sqrt()];
    let g = log_sd_ratio(&x0, &x1).unwrap().unwrap();
    assert!((g - 0.5 * 2.0f64.ln()).abs() < 1e-12, "log sd ratio {g}");

    // One-covariate reduction: multivariate distance equals |Δ| exactly.
    let a = [1.0, 3.0, 5.0, 2.0, 0.5];
    let b = [2.0, 4.0, 6.0, 1.5];
    let m = mahalanobis_balance(
        &DMatrix::from_column_slice(a.len(), 1, &a),
        &DMatrix::from_column_slice(b.len(), 1, &b),
    )
    .unwrap()
    .value;
    let d1 = normalized_difference(&a, &b).unwrap().unwrap();
    assert!((m - d1.abs()).abs() < 1e-12, "1-covariate reduction {m} vs {d1}");

    // Affine invariance on random 6-covariate fixtures.
    let mut rng = RngStream::new(20_260_809, 6);
    for fixture in 0..10 {
        let p = 6;
        let x0 = DMatrix::from_fn(40, p, |_, _| rng.std_normal());
        let x1 = DMatrix::from_fn(35, p, |_, _| 0.4 + rng.std_normal());
        let mut map = DMatrix::from_fn(p, p, |_, _| 0.3 * rng.std_normal());
        for j in 0..p {
            map[(j, j)] += 2.0;
        }
        let shift = DVector::from_fn(p, |_, _| rng.std_normal());
        let apply = |x: &DMatrix<f64>| {
            let mut out = x * &map;
            for i in 0..out.nrows() {
                for j in 0..p {
                    out[(i, j)] += shift[j];
                }
            }
            out
        };
        let base = mahalanobis_balance(&x0, &x1).unwrap().value;
        let mapped = mahalanobis_balance(&apply(&x0), &apply(&x1)).unwrap().value;
        assert!(
            (base - mapped).abs() < 1e-8 * base.max(1.0),
            "fixture {fixture}: {base} vs {mapped}"
        );
    }
    pass(6, "hand fixtures to 1e-12; affine invariance to 1e-8 on 10 random 6-covariate fixtures");
}

/// Criterion 7: combining-rules fixture, exact to 1e-12.
#[test]
fn criterion_07_combining_rules_fixture() {
    let out = rubin_combine(&[1.0, 1.2, 1.4], &[0.04, 0.04, 0.04]).unwrap();
    assert!((out.point - 1.2).abs() < 1e-12);
    assert!((out.within - 0.04).abs() < 1e-12);
    assert!((out.between - 0.04).abs() < 1e-12);
    assert!((out.total_variance - 0.093_333_333_333_333_33).abs() < 1e-12);
    pass(7, "point 1.2, within 0.04, between 0.04, total 0.0933… to 1e-12");
}

/// Criterion 8: uniform-kernel local-linear estimates equal two-sided OLS
/// intercepts to 1e-8 on 10 random fixtures; constant outcomes give a null
/// contrast exactly.
#[test]
fn criterion_08_local_polynomial_oracle() {
    let mut rng = RngStream::new(20_260_809, 8);
    for fixture in 0..10 {
        let n = 80;
        let h = 40.0 + 30.0 * rng.uniform_open();
        let mut s = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let si = 40.0 + 160.0 * (i as f64 + 0.5) / n as f64;
            s.push(si);
            y.push(rng.bernoulli(0.25 + 0.002 * (si - 120.0)));
        }
        let ds = ObservedDataset::from_parts(
            (0..n).map(|i| i.to_string()).collect(),
            s.clone(),
            y.clone(),
            vec![vec![]; n],
            vec![],
            &IngestOptions::new(120.0),
        )
        .unwrap();
        let spec = WindowSpec::from_bandwidths(120.0, KernelKind::Uniform, 1, h, h).unwrap();
        let est = local_polynomial_rd(&ds, &spec).unwrap();

        let ols = |eligible: bool| -> f64 {
            let pts: Vec<(f64, f64)> = s
                .iter()
                .zip(&y)
                .filter(|(si, _)| ((**si <= 120.0) == eligible) && (**si - 120.0).abs() <= h)
                .map(|(si, yi)| (si - 120.0, f64::from(*yi)))
                .collect();
            let n = pts.len() as f64;
            let sx: f64 = pts.iter().map(|p| p.0).sum();
            let sy: f64 = pts.iter().map(|p| p.1).sum();
            let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
            let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
            let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
            (sy - slope * sx) / n
        };
        assert!((est.p1_hat - ols(true)).abs() < 1e-8, "fixture {fixture}: eligible side");
        assert!((est.p0_hat - ols(false)).abs() < 1e-8, "fixture {fixture}: ineligible side");
    }

    let s: Vec<f64> = (0..40).map(|i| 60.0 + 3.0 * i as f64).collect();
    let n = s.len();
    let ds = ObservedDataset::from_parts(
        (0..n).map(|i| i.to_string()).collect(),
        s,
        vec![true; n],
        vec![vec![]; n],
        vec![],
        &IngestOptions::new(120.0),
    )
    .unwrap();
    let spec = WindowSpec::from_bandwidths(120.0, KernelKind::Triangular, 1, 60.0, 60.0).unwrap();
    let est = local_polynomial_rd(&ds, &spec).unwrap();
    assert_eq!(est.ate, 0.0);
    assert_eq!(est.rr, Some(1.0));
    pass(8, "OLS oracle matched to 1e-8 on 10 fixtures; constant outcome gives ATE=0, RR=1 exactly");
}

/// Criterion 9: byte-identical draw files on rerun with the same seed, for
/// any worker-pool size.
#[test]
fn criterion_09_byte_identical_reruns() {
    let sc = scenario("separated").unwrap();
    let dir = tempfile::tempdir().unwrap();

    let run_once = |threads: usize, tag: &str| -> (Vec<u8>, Vec<u8>, Vec<u8>) {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut rng = RngStream::new(77, 0);
            let (ds, _) =
                generate(&sc.params, &sc.covariates, &GenerateConfig::new(1200), &mut rng).unwrap();
            let data_path = dir.path().join(format!("data_{tag}.csv"));
            write_dataset_csv(&ds, &data_path).unwrap();
            let mut cfg = SamplerConfig::new(120, 40, 11);
            cfg.chains = 3;
            cfg.snapshot_stride = 5;
            let draws = run_chain(&ds, &Priors::default(), &cfg).unwrap();
            let draw_path = dir.path().join(format!("draws_{tag}.csv"));
            let memb_path = dir.path().join(format!("memberships_{tag}.csv"));
            draws.write_csv(&draw_path).unwrap();
            draws.write_memberships(&memb_path).unwrap();
            (
                std::fs::read(&data_path).unwrap(),
                std::fs::read(&draw_path).unwrap(),
                std::fs::read(&memb_path).unwrap(),
            )
        })
    };

    let a = run_once(1, "t1");
    let b = run_once(4, "t4");
    let c = run_once(2, "t2");
    assert_eq!(a.0, b.0, "dataset bytes differ across thread counts");
    assert_eq!(a.1, b.1, "draw-file bytes differ across thread counts");
    assert_eq!(a.2, b.2, "membership bytes differ across thread counts");
    assert_eq!(a.1, c.1, "draw-file bytes differ on rerun");
    pass(9, "dataset, draw and membership files byte-identical across reruns at 1, 2 and 4 workers");
}

/// Criterion 10: no structural-zero violation in any retained draw of the
/// recovery runs.
#[test]
fn criterion_10_structural_zero_sweep() {
    let runs = recovery_runs();
    if runs.violations == 0 {
        pass(10, &format!("0 violations across {} replications", runs.reps));
    } else {
        panic!("{}", fail(10, &format!("{} violations", runs.violations)));
    }
}
