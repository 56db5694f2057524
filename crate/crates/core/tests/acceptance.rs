//! Acceptance suite. One PASS/FAIL line per criterion.
//!
//! Exits non-zero on any failure only when `ACCEPTANCE_STRICT` is set, so the
//! regular test run reports failing criteria without aborting the workspace.

use std::time::Instant;

use amem::anderson::gamma_to_alpha;
use amem::monotonicity::score;
use amem::{
    e_step, fit_adaptive_em, gs_kmeans_init, kmeans_init, m_step_standard, run_fit, Algorithm, AndersonState, DampingSchedule,
    FitConfig, FitOutcome, FitTrace, GapStatConfig, GaussianComponent, MixtureModel, ParameterVector, Preset, RestartMode,
    SolutionChoice, SyntheticSpec, WeightedDataset,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const K_INITS: [usize; 3] = [3, 5, 8];
const N: usize = 1000;
const TIMING_REPEATS: usize = 3;

struct Verdict {
    id: usize,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn verdict(id: usize, title: &'static str, pass: bool, detail: String) -> Verdict {
    Verdict { id, title, pass, detail }
}

fn median(v: &[f64]) -> f64 {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Best-of-`TIMING_REPEATS` wall clock; the fits are deterministic so the
/// iterates are identical across repeats.
fn timed(alg: Algorithm, data: &WeightedDataset, init: &MixtureModel, cfg: &FitConfig) -> FitOutcome {
    let mut best: Option<FitOutcome> = None;
    for _ in 0..TIMING_REPEATS {
        let o = run_fit(alg, data, init, cfg).unwrap_or_else(|e| panic!("{alg} failed: {e}"));
        best = Some(match best {
            None => o,
            Some(b) => {
                assert_eq!(b.trace.iterations, o.trace.iterations, "{alg} is not deterministic");
                if o.trace.elapsed_s < b.trace.elapsed_s {
                    o
                } else {
                    b
                }
            }
        });
    }
    best.unwrap()
}

fn irf(base: &FitTrace, acc: &FitTrace) -> f64 {
    base.iterations as f64 / acc.iterations as f64
}

fn trf(base: &FitTrace, acc: &FitTrace) -> f64 {
    base.elapsed_s / acc.elapsed_s
}

struct Cell {
    preset: Preset,
    seed: u64,
    k: usize,
    data: WeightedDataset,
    init: MixtureModel,
    aem: FitOutcome,
    aamem: FitOutcome,
}

fn build_grid(cfg: &FitConfig) -> Vec<Cell> {
    let mut cells = Vec::new();
    for preset in Preset::SYNTHETIC {
        for seed in SEEDS {
            let data = amem::generate_synthetic(&SyntheticSpec::new(preset, N, seed)).unwrap();
            for k in K_INITS {
                let init = kmeans_init(&data, k, 10, 300, seed).unwrap();
                let aem = timed(Algorithm::AdaptiveEm, &data, &init, cfg);
                let aamem = timed(Algorithm::AAmem, &data, &init, cfg);
                cells.push(Cell { preset, seed, k, data: data.clone(), init, aem, aamem });
            }
        }
    }
    cells
}

// ---------------------------------------------------------------------------
// Independent oracles
// ---------------------------------------------------------------------------

/// Gaussian density through an explicit inverse and determinant.
fn density(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let d = x.len() as f64;
    let inv = cov.clone().try_inverse().expect("invertible");
    let dev = x - mean;
    let q = (dev.transpose() * inv * &dev)[(0, 0)];
    (-0.5 * q).exp() / ((2.0 * std::f64::consts::PI).powf(d / 2.0) * cov.determinant().sqrt())
}

/// Penalized log-likelihood with the weight constraint carried by a fixed
/// multiplier, so the weights are free coordinates.
fn lagrangian(points: &[DVector<f64>], zeta: &[f64], w: &[f64], mu: &[DVector<f64>], cov: &[DMatrix<f64>]) -> f64 {
    let dim = mu[0].len() as f64;
    let k = w.len() as f64;
    let t = dim * (dim + 3.0) / 2.0;
    let n: f64 = zeta.iter().sum();
    let d_params = k * (t + 1.0) - 1.0;
    let eta = -n + t * k / 2.0;
    let ll: f64 = points
        .iter()
        .zip(zeta)
        .map(|(x, z)| z * (0..w.len()).map(|i| w[i] * density(x, &mu[i], &cov[i])).sum::<f64>().ln())
        .sum();
    ll + eta * (w.iter().sum::<f64>() - 1.0) - d_params / 2.0 * n.ln() - t / 2.0 * w.iter().map(|v| v.ln()).sum::<f64>()
}

fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(d, d) * 0.5
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n = rng.random_range(10..=50);
        let k = rng.random_range(1..=3);
        let d = rng.random_range(1..=3);
        let points: Vec<DVector<f64>> = (0..n).map(|_| DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0))).collect();
        let raw_zeta: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let w: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let mu: Vec<DVector<f64>> = (0..k).map(|_| DVector::from_fn(d, |_, _| rng.random_range(-1.5..1.5))).collect();
        let cov: Vec<DMatrix<f64>> = (0..k).map(|_| random_spd(&mut rng, d)).collect();

        let comps = (0..k).map(|i| GaussianComponent::new(w[i], mu[i].clone(), cov[i].clone()).unwrap()).collect();
        let model = MixtureModel::new(comps).unwrap();
        let data = WeightedDataset::new(points.iter().map(|p| p.iter().copied().collect()).collect(), Some(raw_zeta)).unwrap();
        // the dataset rescales sample weights to sum to N
        let zeta = data.weights().to_vec();
        let resp = e_step(&data, &model).unwrap();
        let s = score(&data, &resp, &model).unwrap();

        let h = 1e-5;
        let rel = |fd: f64, an: f64| (fd - an).abs() / an.abs().max(1.0);
        for i in 0..k {
            let (mut wp, mut wm) = (w.clone(), w.clone());
            wp[i] += h;
            wm[i] -= h;
            let fd = (lagrangian(&points, &zeta, &wp, &mu, &cov) - lagrangian(&points, &zeta, &wm, &mu, &cov)) / (2.0 * h);
            worst = worst.max(rel(fd, s.d_weights[i]));
            for a in 0..d {
                let (mut mp, mut mm) = (mu.clone(), mu.clone());
                mp[i][a] += h;
                mm[i][a] -= h;
                let fd = (lagrangian(&points, &zeta, &w, &mp, &cov) - lagrangian(&points, &zeta, &w, &mm, &cov)) / (2.0 * h);
                worst = worst.max(rel(fd, s.d_means[i][a]));
                for b in 0..=a {
                    // symmetric perturbation E_ab + E_ba (or E_aa)
                    let mut e = DMatrix::zeros(d, d);
                    e[(a, b)] = 1.0;
                    e[(b, a)] = 1.0;
                    let (mut cp, mut cm) = (cov.clone(), cov.clone());
                    cp[i] += &e * h;
                    cm[i] -= &e * h;
                    let fd = (lagrangian(&points, &zeta, &w, &mu, &cp) - lagrangian(&points, &zeta, &w, &mu, &cm)) / (2.0 * h);
                    worst = worst.max(rel(fd, s.d_covs[i].dot(&e)));
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        1,
        "score blocks match central differences",
        worst <= 1e-5 && secs < 5.0,
        format!("max relative error {worst:.2e} over 20 instances, {secs:.2}s"),
    )
}

/// A history of `m + 1` random entries and their residual matrix.
fn random_state(rng: &mut ChaCha8Rng, m: usize, len: usize, schedule: DampingSchedule) -> (AndersonState, DMatrix<f64>) {
    let mut s = AndersonState::new(m + 1, RestartMode::ResetAll, schedule);
    let mut f = DMatrix::zeros(len, m + 1);
    for i in 0..=m {
        let theta: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let image: Vec<f64> = theta.iter().map(|t| 0.7 * t + rng.random_range(-0.3..0.3)).collect();
        for r in 0..len {
            f[(r, i)] = image[r] - theta[r];
        }
        s.push(&theta, &image).unwrap();
    }
    (s, f)
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / x.abs().max(1.0)).fold(0.0, f64::max)
}

fn criterion_2() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let zero = DampingSchedule { fixed_lambda: Some(0.0), ..DampingSchedule::default() };
    let (mut e_alpha, mut e_kkt) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let m = rng.random_range(1..=5);
        let len = rng.random_range(m + 2..=20);
        let (mut s, f) = random_state(&mut rng, m, len, zero);
        let gamma = s.damped_gamma().unwrap();
        let via_gamma = s.aa_iterate(&gamma).unwrap();
        let via_alpha = s.alpha_combination(&gamma_to_alpha(&gamma)).unwrap();
        e_alpha = e_alpha.max(max_rel(&via_gamma, &via_alpha));

        // constrained form: min ||F a|| s.t. sum a = 1, through its KKT system
        let mut kkt = DMatrix::zeros(m + 2, m + 2);
        kkt.view_mut((0, 0), (m + 1, m + 1)).copy_from(&(f.transpose() * &f * 2.0));
        for i in 0..=m {
            kkt[(i, m + 1)] = 1.0;
            kkt[(m + 1, i)] = 1.0;
        }
        let mut rhs = DVector::zeros(m + 2);
        rhs[m + 1] = 1.0;
        let sol = kkt.lu().solve(&rhs).unwrap();
        let alpha: Vec<f64> = sol.iter().take(m + 1).copied().collect();
        let via_kkt = s.alpha_combination(&alpha).unwrap();
        e_kkt = e_kkt.max(max_rel(&via_gamma, &via_kkt));
    }

    // heavy damping along a real EM path: the iterate is the EM image
    let data = amem::generate_synthetic(&SyntheticSpec::new(Preset::Ps, 300, 11)).unwrap();
    let mut model = kmeans_init(&data, 3, 5, 100, 11).unwrap();
    let heavy = DampingSchedule { fixed_lambda: Some(1e20), ..DampingSchedule::default() };
    let mut s = AndersonState::new(6, RestartMode::ResetAll, heavy);
    let mut e_em = 0.0f64;
    for _ in 0..25 {
        let g = m_step_standard(&data, &e_step(&data, &model).unwrap()).unwrap();
        let image = ParameterVector::flatten(&g);
        s.push(&ParameterVector::flatten(&model).flat, &image.flat).unwrap();
        if s.depth() > 0 {
            let gamma = s.damped_gamma().unwrap();
            e_em = e_em.max(max_rel(&s.aa_iterate(&gamma).unwrap(), &image.flat));
        }
        if s.len() >= 6 {
            s.clear();
        }
        model = g;
    }
    verdict(
        2,
        "Anderson algebra",
        e_alpha <= 1e-12 && e_kkt <= 1e-10 && e_em <= 1e-12,
        format!("gamma vs alpha {e_alpha:.1e}, lambda=0 vs constrained {e_kkt:.1e}, heavy damping vs EM {e_em:.1e}"),
    )
}

fn moments(data: &WeightedDataset) -> (f64, DVector<f64>, DMatrix<f64>) {
    let d = data.dim();
    let (mut z, mut m1, mut m2) = (0.0, DVector::zeros(d), DMatrix::zeros(d, d));
    for (x, w) in data.iter() {
        let x = DVector::from_column_slice(x);
        z += w;
        m2 += &x * x.transpose() * w;
        m1 += x * w;
    }
    (z, m1, m2)
}

fn criterion_3(cells: &[Cell]) -> Verdict {
    let mut worst = 0.0f64;
    let mut runs = 0;
    for c in cells {
        let (z, m1, m2) = moments(&c.data);
        for o in [&c.aem, &c.aamem] {
            if !o.trace.converged {
                continue;
            }
            runs += 1;
            let d = c.data.dim();
            let (mut f1, mut f2) = (DVector::zeros(d), DMatrix::zeros(d, d));
            let mut f0 = 0.0;
            for comp in o.model.components() {
                f0 += comp.weight * z;
                f1 += &comp.mean * (comp.weight * z);
                f2 += (&comp.covariance + &comp.mean * comp.mean.transpose()) * (comp.weight * z);
            }
            worst = worst.max((f0 - z).abs() / z).max((&f1 - &m1).norm() / m1.norm().max(1e-300)).max((&f2 - &m2).norm() / m2.norm());
        }
    }
    verdict(3, "moment conservation after the final step", worst <= 1e-9 && runs > 0, format!("{runs} converged runs, max relative error {worst:.1e}"))
}

/// Drops between consecutive solver iterates (the final conservative step is
/// post-processing), bucketed by how the later iterate was produced.
#[derive(Default)]
struct Drops {
    runs: usize,
    on_kill: usize,
    on_aa: usize,
    other: usize,
    worst: f64,
}

impl Drops {
    fn scan(&mut self, t: &FitTrace, allowance: f64) {
        let rows: Vec<_> = t.records.iter().filter(|r| r.choice != SolutionChoice::FinalConservativeEm).collect();
        let mut hit = false;
        for w in rows.windows(2) {
            let drop = w[1].objective - w[0].objective;
            if drop < -allowance {
                hit = true;
                self.worst = self.worst.min(drop);
                if w[1].kills > 0 {
                    self.on_kill += 1;
                } else if w[1].choice == SolutionChoice::Aa {
                    self.on_aa += 1;
                } else {
                    self.other += 1;
                }
            }
        }
        self.runs += usize::from(hit);
    }

    fn total(&self) -> usize {
        self.on_kill + self.on_aa + self.other
    }

    fn describe(&self) -> String {
        format!(
            "{} drops in {} runs ({} on kill steps, {} on accepted AA steps, {} other; worst {:.3})",
            self.total(),
            self.runs,
            self.on_kill,
            self.on_aa,
            self.other,
            self.worst
        )
    }
}

fn criterion_4(cells: &[Cell], eps: f64) -> Verdict {
    let (mut aem, mut aamem) = (Drops::default(), Drops::default());
    for c in cells {
        aem.scan(&c.aem.trace, 1e-8);
        aamem.scan(&c.aamem.trace, eps);
    }
    verdict(
        4,
        "penalized log-likelihood monotonicity",
        aem.total() == 0 && aamem.total() == 0,
        format!("{} runs each; A-EM: {}; A-AMEM beyond eps: {}", cells.len(), aem.describe(), aamem.describe()),
    )
}

fn criterion_5(cells: &[Cell]) -> Verdict {
    let mut failures = Vec::new();
    for c in cells {
        let (a, b) = (&c.aem.trace, &c.aamem.trace);
        let rel = (a.final_objective() - b.final_objective()).abs() / a.final_objective().abs();
        if a.final_k() != 3 || b.final_k() != 3 || rel.is_nan() || rel > 1e-6 {
            failures.push(format!("{}/K{}/s{}: K {}|{} rel {:.1e}", c.preset, c.k, c.seed, a.final_k(), b.final_k(), rel));
        }
    }
    verdict(
        5,
        "A-EM and A-AMEM recover K = 3 with matching PL",
        failures.is_empty(),
        format!("{}/{} pairs ok{}{}", cells.len() - failures.len(), cells.len(), if failures.is_empty() { "" } else { "; failing: " }, failures.join(", ")),
    )
}

fn speedup_verdict(id: usize, title: &'static str, cells: &[Cell], k: usize, bands: [f64; 3], max_ratio: f64) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for (preset, band) in Preset::SYNTHETIC.into_iter().zip(bands) {
        let group: Vec<&Cell> = cells.iter().filter(|c| c.preset == preset && c.k == k).collect();
        let irfs: Vec<f64> = group.iter().map(|c| irf(&c.aem.trace, &c.aamem.trace)).collect();
        let ratios: Vec<f64> = group.iter().map(|c| irf(&c.aem.trace, &c.aamem.trace) / trf(&c.aem.trace, &c.aamem.trace)).collect();
        let (mi, mr) = (median(&irfs), median(&ratios));
        pass &= mi >= band && mr <= max_ratio;
        parts.push(format!("{preset} IRF {mi:.2} (>= {band}) IRF/TRF {mr:.2}"));
    }
    verdict(id, title, pass, parts.join("; "))
}

fn criterion_8(cells: &[Cell], cfg: &FitConfig) -> Verdict {
    let exact_cfg = FitConfig { use_taylor_test: false, ..cfg.clone() };
    let mut pass = true;
    let mut parts = Vec::new();
    for preset in [Preset::Ps, Preset::Vps] {
        for k in [5, 8] {
            let group: Vec<&Cell> = cells.iter().filter(|c| c.preset == preset && c.k == k).collect();
            let mut exact = Vec::new();
            let mut taylor = Vec::new();
            for c in &group {
                let e = timed(Algorithm::AAmem, &c.data, &c.init, &exact_cfg);
                exact.push(irf(&c.aem.trace, &e.trace) / trf(&c.aem.trace, &e.trace));
                taylor.push(irf(&c.aem.trace, &c.aamem.trace) / trf(&c.aem.trace, &c.aamem.trace));
            }
            let (me, mt) = (median(&exact), median(&taylor));
            pass &= me >= 1.6 && mt <= 1.5;
            parts.push(format!("{preset}/K{k} exact {me:.2} taylor {mt:.2}"));
        }
    }
    verdict(8, "Taylor test halves the per-iteration cost of the exact test", pass, parts.join("; "))
}

fn criterion_9(cells: &[Cell], cfg: &FitConfig) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for preset in Preset::SYNTHETIC {
        let (mut irfs, mut trfs) = (Vec::new(), Vec::new());
        for c in cells.iter().filter(|c| c.preset == preset && c.k == 3) {
            let em = timed(Algorithm::Em, &c.data, &c.init, cfg);
            let els = timed(Algorithm::Els, &c.data, &c.init, cfg);
            irfs.push(irf(&em.trace, &els.trace));
            trfs.push(trf(&em.trace, &els.trace));
        }
        let (mi, mt) = (median(&irfs), median(&trfs));
        pass &= mi <= 2.5 && mt <= 1.2;
        parts.push(format!("{preset} IRF {mi:.2} TRF {mt:.2}"));
    }
    verdict(9, "line-search EM gives no wall-clock gain", pass, parts.join("; "))
}

fn last_finite(t: &FitTrace) -> f64 {
    t.records.iter().rev().map(|r| r.objective).find(|v| v.is_finite()).unwrap_or(f64::NEG_INFINITY)
}

fn criterion_10(cells: &[Cell], cfg: &FitConfig) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for preset in Preset::SYNTHETIC {
        let (mut below, mut wrong_k, mut failed) = (0, 0, 0);
        for c in cells.iter().filter(|c| c.preset == preset && c.k == 5) {
            let naive = run_fit(Algorithm::NaiveAdaptiveAaem, &c.data, &c.init, cfg).unwrap();
            below += usize::from(last_finite(&naive.trace) < c.aem.trace.final_objective());
            wrong_k += usize::from(naive.trace.final_k() != 3 || naive.trace.failure.is_some());
            failed += usize::from(naive.trace.failure.is_some());
        }
        pass &= below >= 4 && wrong_k >= 3;
        parts.push(format!("{preset}: PL below A-EM {below}/5, K_final != 3 {wrong_k}/5, aborted {failed}/5"));
    }
    verdict(10, "naive adaptive AAEM fails without safeguards", pass, parts.join("; "))
}

fn criterion_11(cfg: &FitConfig) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    let (mut cost, mut init_times, mut fit_times) = (Vec::new(), Vec::new(), Vec::new());
    for (preset, want) in [(Preset::Vws, 3), (Preset::Ps, 3), (Preset::Vps, 2)] {
        let mut hits = 0;
        let mut ks = Vec::new();
        for seed in SEEDS {
            let data = amem::generate_synthetic(&SyntheticSpec::new(preset, N, seed)).unwrap();
            let t0 = Instant::now();
            let (init, report) = gs_kmeans_init(&data, &GapStatConfig { seed, ..GapStatConfig::default() }).unwrap();
            let init_s = t0.elapsed().as_secs_f64();
            hits += usize::from(report.k_opt == want);
            ks.push(report.k_opt.to_string());
            if preset == Preset::Vps {
                let (_, t) = fit_adaptive_em(&data, &init, cfg).unwrap();
                cost.push(init_s / t.elapsed_s);
                init_times.push(init_s);
                fit_times.push(t.elapsed_s);
            }
        }
        pass &= hits >= 4;
        parts.push(format!("{preset} K_est [{}] ({hits}/5 = {want})", ks.join(",")));
    }
    let c = median(&cost);
    pass &= c < 0.25;
    parts.push(format!(
        "VPS init/A-EM time {:.0}% (median init {:.3}s, A-EM {:.3}s)",
        100.0 * c,
        median(&init_times),
        median(&fit_times)
    ));
    verdict(11, "gap-statistic K-means initialization", pass, parts.join("; "))
}

fn criterion_12(cells: &[Cell]) -> Verdict {
    let (mut worst, mut pos, mut iters) = (0.0f64, 0usize, 0usize);
    for c in cells {
        let counters = c.aamem.counters.as_ref().unwrap();
        pos += counters.em_fallback_positivity;
        iters += c.aamem.trace.iterations;
        worst = worst.max(counters.em_fallback_positivity as f64 / c.aamem.trace.iterations.max(1) as f64);
    }
    verdict(
        12,
        "positivity fallbacks stay rare",
        worst <= 0.10,
        format!("{pos} of {iters} iterations overall, worst run {:.1}%", 100.0 * worst),
    )
}

fn main() {
    let start = Instant::now();
    let cfg = FitConfig::default();
    let mut verdicts = vec![criterion_1(), criterion_2()];
    let cells = build_grid(&cfg);
    verdicts.push(criterion_3(&cells));
    verdicts.push(criterion_4(&cells, cfg.eps_mono));
    verdicts.push(criterion_5(&cells));
    verdicts.push(speedup_verdict(6, "speed-ups at K_init = 3", &cells, 3, [1.8, 5.0, 20.0], 1.4));
    verdicts.push(speedup_verdict(7, "speed-ups at K_init = 5", &cells, 5, [1.5, 3.0, 6.0], 1.5));
    verdicts.push(criterion_8(&cells, &cfg));
    verdicts.push(criterion_9(&cells, &cfg));
    verdicts.push(criterion_10(&cells, &cfg));
    verdicts.push(criterion_11(&cfg));
    verdicts.push(criterion_12(&cells));

    for v in &verdicts {
        println!("{} criterion {:>2}: {}: {}", if v.pass { "PASS" } else { "FAIL" }, v.id, v.title, v.detail);
    }
    let passed = verdicts.iter().filter(|v| v.pass).count();
    println!("{passed}/{} criteria passed in {:.1}s", verdicts.len(), start.elapsed().as_secs_f64());
    if passed < verdicts.len() && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
