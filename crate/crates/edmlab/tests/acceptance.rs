//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! Reference values come from oracles written here independently of the
//! library: hand-rolled central differences, a from-scratch coupled EDM loss
//! with bisection, and brute-force series for the visitation solvers.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use edmlab::formats::CheckReport;
use edmlab_core::counterexamples::{example1_check, random_policy, IDENTITY_KS};
use edmlab_core::ebm::{
    coupled_log_pseudo_grad, coupled_log_pseudo_grads, grad_log_pseudo, joint_model, pseudo_state_dist,
    pseudo_state_dist_gauged,
};
use edmlab_core::mdp::{visitation, visitation_discounted, visitation_stationary};
use edmlab_core::objectives::{
    bc_population_gradient, bc_tabular_gradient, edm_population_gradient, edm_tabular_gradient, gradient_descent,
    Objective, PopulationSpec,
};
use edmlab_core::policies::coupled_grad_log_prob;
use edmlab_core::sampler::{fixture_energies, langevin_sample, langevin_tv, mean_variance, DEFAULT_BINS, DEFAULT_CHAINS, DEFAULT_STEPS, DEFAULT_STEP_SIZE};
use edmlab_core::{CoupledPolicy, DistKind, JointDist, SoftmaxPolicy, TabularMdp, VisitationMode};

const GOLDEN_EDM_FIXED_POINT: f64 = 0.807_702_099_433_0;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

// ---- independent helpers ----

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn lse(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn central(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    let h = 1e-5;
    (f(x + h) - f(x - h)) / (2.0 * h)
}

fn central_vec(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let h = 1e-5;
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let plus = f(&probe);
            probe[i] = x[i] - h;
            let minus = f(&probe);
            probe[i] = x[i];
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

fn grad_ok(g: f64, reference: f64) -> bool {
    (g - reference).abs() <= (1e-6 * g.abs()).max(1e-8)
}

/// `log p(s)` with `p(s) ∝ exp(-logsumexp_a f[s][a])`, straight from the logits.
fn log_pseudo_from_logits(f: &[Vec<f64>]) -> Vec<f64> {
    let neg_e: Vec<f64> = f.iter().map(|row| -lse(row)).collect();
    let z = lse(&neg_e);
    neg_e.iter().map(|x| x - z).collect()
}

fn coupled_logits(theta: f64, k: f64) -> Vec<Vec<f64>> {
    vec![vec![0.0, theta], vec![0.0, k * theta]]
}

/// Population EDM loss for the coupled family, written out directly.
fn coupled_edm_loss(theta: f64, k: f64, theta_e: f64, w: [f64; 2], with_state_term: bool) -> f64 {
    let f = coupled_logits(theta, k);
    let log_p = log_pseudo_from_logits(&f);
    let mut j = 0.0;
    for s in 0..2 {
        let scale = if s == 0 { 1.0 } else { k };
        let pe = sigmoid(scale * theta_e);
        let z = lse(&f[s]);
        let ce = -(1.0 - pe) * (f[s][0] - z) - pe * (f[s][1] - z);
        j += w[s] * ce;
        if with_state_term {
            j -= w[s] * log_p[s];
        }
    }
    j
}

fn flat(f: &[Vec<f64>]) -> Vec<f64> {
    f.iter().flatten().copied().collect()
}

fn unflat(x: &[f64], n_a: usize) -> Vec<Vec<f64>> {
    x.chunks(n_a).map(<[f64]>::to_vec).collect()
}

fn softmax_row(row: &[f64]) -> Vec<f64> {
    let z = lse(row);
    row.iter().map(|x| (x - z).exp()).collect()
}

fn policy_matrix(m: &TabularMdp, pi: &SoftmaxPolicy) -> Vec<Vec<f64>> {
    (0..m.n_states)
        .map(|s| {
            let probs = softmax_row(&pi.logits[s]);
            (0..m.n_states).map(|t| (0..m.n_actions).map(|a| probs[a] * m.transitions[s][a][t]).sum()).collect()
        })
        .collect()
}

fn step(row: &[f64], p: &[Vec<f64>]) -> Vec<f64> {
    let n = row.len();
    (0..n).map(|t| (0..n).map(|s| row[s] * p[s][t]).sum()).collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn tv(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

// ---- criteria ----

fn headline() -> Outcome {
    let c = CoupledPolicy::new(1.0, 0.5).unwrap();
    let value = coupled_log_pseudo_grad(&c);
    let mut best = Duration::MAX;
    for _ in 0..100 {
        let t = Instant::now();
        std::hint::black_box(coupled_log_pseudo_grad(std::hint::black_box(&c)));
        best = best.min(t.elapsed());
    }
    let oracle = central(|t| log_pseudo_from_logits(&coupled_logits(t, 0.5))[0], 1.0);
    let ok = (value + 0.245).abs() <= 5e-4 && best < Duration::from_millis(1) && grad_ok(value, oracle);
    outcome(ok, format!("value={value:.10} oracle_fd={oracle:.10} target=-0.245±5e-4 runtime={best:?}"))
}

fn identity() -> Outcome {
    let mut worst = 0.0f64;
    for k in IDENTITY_KS {
        let g = coupled_log_pseudo_grad(&CoupledPolicy::new(0.0, k).unwrap());
        worst = worst.max((g - (k - 1.0) / 4.0).abs());
    }
    outcome(worst <= 1e-12, format!("k={IDENTITY_KS:?} max|g-(k-1)/4|={worst:.3e}"))
}

fn gauge_exactness() -> Outcome {
    let (mut worst_uniform, mut worst_action) = (0.0f64, 0.0f64);
    for seed in 0..100u64 {
        let n_s = 1 + (seed % 6) as usize;
        let n_a = 1 + ((seed / 6) % 4) as usize;
        let p = random_policy(n_s, n_a, 500 + seed).unwrap();
        let g: Vec<f64> = p.logits.iter().map(|row| -lse(row)).collect();
        let gauged = p.regauged(g).unwrap();
        let d = pseudo_state_dist_gauged(&gauged);
        worst_uniform = worst_uniform.max(d.probs.iter().map(|x| (x - 1.0 / n_s as f64).abs()).fold(0.0, f64::max));
        for s in 0..n_s {
            worst_action = worst_action.max(max_abs_diff(&gauged.action_probs(s), &softmax_row(&p.logits[s])));
        }
    }
    outcome(
        worst_uniform <= 1e-12 && worst_action <= 1e-12,
        format!("100 policies, max|p-1/n|={worst_uniform:.3e} max|Δπ|={worst_action:.3e}"),
    )
}

fn self_loops() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for n in [2usize, 5, 10] {
        let m = TabularMdp::self_loops(n, 2, 0).unwrap();
        let model = SoftmaxPolicy::uniform(n, 2);
        let marginal = joint_model(&model, &pseudo_state_dist(&model).unwrap()).unwrap().marginal();
        let skewed = random_policy(n, 2, n as u64).unwrap();
        for mode in [VisitationMode::Discounted, VisitationMode::Stationary] {
            for pi in [&model, &skewed] {
                let d = visitation(&m, pi, mode).unwrap();
                let got = tv(&d.probs, &marginal.probs);
                ok &= (got - (1.0 - 1.0 / n as f64)).abs() <= 1e-12;
            }
        }
        let c = example1_check(n, 2).unwrap();
        ok &= c.passed;
        parts.push(format!("|S|={n}: tv={:.12}", c.observed["tv_d_vs_marginal_discounted"]));
    }
    outcome(ok, format!("{} (both modes)", parts.join(", ")))
}

fn gradient_oracles() -> Outcome {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut count = 0usize;
    let mut expect = |label: String, g: f64, reference: f64| {
        count += 1;
        if !grad_ok(g, reference) && failures.len() < 5 {
            failures.push(format!("{label}: {g} vs {reference}"));
        }
    };

    let thetas = [-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0];
    let weights = [[0.5, 0.5], [0.2, 0.8], [0.9, 0.1], [1.0, 0.0]];
    for k in IDENTITY_KS {
        for theta in thetas {
            let c = CoupledPolicy::new(theta, k).unwrap();
            for s in 0..2 {
                for a in 0..2 {
                    let fd = central(|t| softmax_row(&coupled_logits(t, k)[s])[a].ln(), theta);
                    expect(format!("coupled log-prob k={k} θ={theta} s={s} a={a}"), coupled_grad_log_prob(&c, s, a), fd);
                }
            }
            let grads = coupled_log_pseudo_grads(&c);
            for (s, g) in grads.into_iter().enumerate() {
                let fd = central(|t| log_pseudo_from_logits(&coupled_logits(t, k))[s], theta);
                expect(format!("coupled log-pseudo k={k} θ={theta} s={s}"), g, fd);
            }
            for w in weights {
                let spec = PopulationSpec::coupled(1.0, k, w).unwrap();
                let bc = bc_population_gradient(&c, &spec).unwrap();
                expect(format!("BC k={k} θ={theta} w={w:?}"), bc, central(|t| coupled_edm_loss(t, k, 1.0, w, false), theta));
                let edm = edm_population_gradient(&c, &spec).unwrap().total[0];
                expect(format!("EDM k={k} θ={theta} w={w:?}"), edm, central(|t| coupled_edm_loss(t, k, 1.0, w, true), theta));
            }
        }
    }

    for seed in 0..20u64 {
        let n_s = 1 + (seed % 5) as usize;
        let n_a = 1 + (seed % 4) as usize;
        let p = random_policy(n_s, n_a, 900 + seed).unwrap();
        let x = flat(&p.logits);
        for s in 0..n_s {
            for a in 0..n_a {
                let g = p.grad_log_prob(s, a).flat_logits();
                let fd = central_vec(|x| softmax_row(&unflat(x, n_a)[s])[a].ln(), &x);
                for (i, (g, r)) in g.iter().zip(&fd).enumerate() {
                    expect(format!("softmax log-prob seed={seed} s={s} a={a} i={i}"), *g, *r);
                }
            }
        }
        for (s, g) in grad_log_pseudo(&p).unwrap().iter().enumerate() {
            let fd = central_vec(|x| log_pseudo_from_logits(&unflat(x, n_a))[s], &x);
            for (i, (g, r)) in g.flat_logits().iter().zip(&fd).enumerate() {
                expect(format!("log-pseudo seed={seed} s={s} i={i}"), *g, *r);
            }
        }
        let expert = random_policy(n_s, n_a, 1900 + seed).unwrap();
        let w: Vec<f64> = (0..n_s).map(|s| 1.0 + s as f64).collect();
        let total: f64 = w.iter().sum();
        let joint = JointDist::new(
            (0..n_s).map(|s| softmax_row(&expert.logits[s]).into_iter().map(|q| q * w[s] / total).collect()).collect(),
            DistKind::Exact,
        )
        .unwrap();
        #[allow(clippy::needless_range_loop)]
        let loss = |x: &[f64], with_state: bool| {
            let f = unflat(x, n_a);
            let lp = log_pseudo_from_logits(&f);
            let mut j = 0.0;
            for s in 0..n_s {
                let z = lse(&f[s]);
                for a in 0..n_a {
                    j -= joint.probs[s][a] * (f[s][a] - z);
                    if with_state {
                        j -= joint.probs[s][a] * lp[s];
                    }
                }
            }
            j
        };
        let bc = bc_tabular_gradient(&p, &joint).unwrap();
        for (i, (g, r)) in bc.iter().zip(central_vec(|x| loss(x, false), &x)).enumerate() {
            expect(format!("BC tabular seed={seed} i={i}"), *g, r);
        }
        let edm = edm_tabular_gradient(&p, &joint).unwrap().total;
        for (i, (g, r)) in edm.iter().zip(central_vec(|x| loss(x, true), &x)).enumerate() {
            expect(format!("EDM tabular seed={seed} i={i}"), *g, r);
        }
    }
    let elapsed = start.elapsed();
    let ok = failures.is_empty() && elapsed < Duration::from_secs(5);
    let mut detail = format!("{count} gradients, runtime={elapsed:?}");
    if !failures.is_empty() {
        detail.push_str(&format!(", first mismatches: {}", failures.join("; ")));
    }
    outcome(ok, detail)
}

fn consistency() -> Outcome {
    // Bisection on a finite-difference derivative of the hand-written loss.
    let grad = |t: f64| central(|x| coupled_edm_loss(x, 0.5, 1.0, [0.5, 0.5], true), t);
    let (mut lo, mut hi) = (0.0, 1.0);
    assert!(grad(lo) < 0.0 && grad(hi) > 0.0, "bracket");
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if grad(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let root = 0.5 * (lo + hi);

    let spec = PopulationSpec::coupled(1.0, 0.5, [0.5, 0.5]).unwrap();
    let start = CoupledPolicy::new(0.0, 0.5).unwrap();
    let bc = gradient_descent(Objective::Bc, start, 0.5, 5000, &spec).unwrap().final_theta();
    let edm = gradient_descent(Objective::Edm, start, 0.5, 5000, &spec).unwrap().final_theta();
    let ok = (root - GOLDEN_EDM_FIXED_POINT).abs() < 1e-8
        && (bc - 1.0).abs() < 1e-3
        && (edm - 1.0).abs() > 0.05
        && (edm - GOLDEN_EDM_FIXED_POINT).abs() < 1e-6;
    outcome(
        ok,
        format!("bc_final={bc:.9} edm_final={edm:.9} bisection_root={root:.12} golden={GOLDEN_EDM_FIXED_POINT}"),
    )
}

fn visitation_solvers() -> Outcome {
    let gammas = [0.5, 0.8, 0.9, 0.95];
    let (mut worst_disc, mut worst_res) = (0.0f64, 0.0f64);
    for seed in 0..20u64 {
        let n_s = 1 + (seed % 5) as usize;
        let n_a = 1 + (seed % 3) as usize;
        let gamma = gammas[(seed % 4) as usize];
        let m = TabularMdp::random(n_s, n_a, gamma, 3000 + seed).unwrap();
        let pi = random_policy(n_s, n_a, 4000 + seed).unwrap();
        let p = policy_matrix(&m, &pi);

        // Truncate once γ^H is far below the tolerance, then renormalize.
        let horizon = ((1e-14f64).ln() / gamma.ln()).ceil() as usize;
        let mut row = m.initial.clone();
        let mut acc = vec![0.0; n_s];
        let mut weight = 1.0 - gamma;
        for _ in 0..horizon {
            for (a, r) in acc.iter_mut().zip(&row) {
                *a += weight * r;
            }
            row = step(&row, &p);
            weight *= gamma;
        }
        let mass: f64 = acc.iter().sum();
        acc.iter_mut().for_each(|a| *a /= mass);
        let d = visitation_discounted(&m, &pi).unwrap();
        worst_disc = worst_disc.max(max_abs_diff(&d.probs, &acc));

        let st = visitation_stationary(&m, &pi).unwrap();
        let moved = step(&st.probs, &p);
        worst_res = worst_res.max(moved.iter().zip(&st.probs).map(|(a, b)| (a - b).abs()).sum());
    }
    outcome(
        worst_disc <= 1e-8 && worst_res < 1e-10,
        format!("20 MDPs, max|d-series|={worst_disc:.3e} max‖dP-d‖₁={worst_res:.3e}"),
    )
}

fn langevin() -> Outcome {
    let start = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, e) in fixture_energies() {
        let batch = langevin_sample(&e, DEFAULT_CHAINS, DEFAULT_STEPS, DEFAULT_STEP_SIZE, 0).unwrap();
        let tv = langevin_tv(&e, &batch, DEFAULT_BINS).unwrap();
        ok &= tv <= 0.05;
        parts.push(format!("{name} tv={tv:.4}"));
        if name == "single" {
            let (mean, var) = mean_variance(&batch.values);
            ok &= mean.abs() <= 0.02 && (var - 1.0).abs() <= 0.05;
            parts.push(format!("mean={mean:.4} var={var:.4}"));
        }
    }
    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(30);
    outcome(ok, format!("{} runtime={elapsed:?}", parts.join(" ")))
}

fn one_command() -> Outcome {
    let out = Command::new(env!("CARGO_BIN_EXE_edmlab")).arg("check").output().expect("binary runs");
    if out.status.code() != Some(0) {
        return outcome(false, format!("exit={:?} stderr={}", out.status.code(), String::from_utf8_lossy(&out.stderr)));
    }
    let report: CheckReport = match serde_json::from_slice(&out.stdout) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("unparseable report: {e}")),
    };
    let find = |name: &str| report.checks.iter().find(|c| c.name == name);
    let val = |name: &str, key: &str| find(name).and_then(|c| c.observed.get(key).copied());
    let mut missing = Vec::new();
    let mut need = |label: String, v: Option<f64>, pred: &dyn Fn(f64) -> bool| {
        if !v.is_some_and(pred) {
            missing.push(label);
        }
    };
    need("theorem1 -0.245".into(), val("theorem1", "log_pseudo_gradient"), &|v| (v + 0.245).abs() <= 5e-4);
    for k in IDENTITY_KS {
        let key = format!("log_pseudo_gradient_k{k}");
        need(format!("identity k={k}"), val("pseudo_gradient_identity", &key), &|v| (v - (k - 1.0) / 4.0).abs() <= 1e-12);
    }
    need("example3 k=0.5 -0.125".into(), val("example3_k0.5", "log_pseudo_gradient"), &|v| (v + 0.125).abs() <= 1e-12);
    need("example2 uniform".into(), val("example2_sweep", "max_gauged_pseudo_deviation_from_uniform"), &|v| v <= 1e-12);
    need("example2 actions".into(), val("example2_sweep", "max_action_prob_change"), &|v| v <= 1e-12);
    need("example2 instances".into(), val("example2_sweep", "instances"), &|v| v == 100.0);
    for n in [2u32, 5, 10] {
        for mode in ["discounted", "stationary"] {
            let key = format!("tv_d_vs_marginal_{mode}");
            let want = 1.0 - 1.0 / f64::from(n);
            need(format!("example1 n={n} {mode}"), val(&format!("example1_n{n}"), &key), &|v| (v - want).abs() <= 1e-12);
        }
    }
    need("consistency bc".into(), val("consistency", "bc_final_theta"), &|v| (v - 1.0).abs() < 1e-3);
    need("consistency edm gap".into(), val("consistency", "edm_gap"), &|v| v > 0.05);
    let all_passed = report.checks.iter().all(|c| c.passed);
    outcome(
        missing.is_empty() && all_passed,
        if missing.is_empty() {
            format!("exit=0, {} checks, all headline numbers present", report.checks.len())
        } else {
            format!("missing or wrong: {}", missing.join(", "))
        },
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("headline pseudo-state gradient at the expert", headline),
        ("pseudo-state gradient identity at θ = 0", identity),
        ("uniformizing gauge is exact", gauge_exactness),
        ("self-loop visitation gap", self_loops),
        ("gradient oracle suite", gradient_oracles),
        ("BC consistent, EDM not", consistency),
        ("visitation solvers", visitation_solvers),
        ("Langevin sampler", langevin),
        ("one-command reproduction", one_command),
    ];
    let mut all = true;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let o = f();
        all &= o.passed;
        println!("{} [{}] {}: {}", if o.passed { "PASS" } else { "FAIL" }, i + 1, name, o.detail);
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
