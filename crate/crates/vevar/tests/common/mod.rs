//! Toy instance and brute-force references shared by the oracle and
//! acceptance targets.

#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};

use vevar::exec::Execution;
use vevar::model::{build_lagged_design, subject_loglik, ModelConfig, SubjectDataset};
use vevar::vi::{
    cavi_sweep, compute_elbo, init_state, single, update_betas, update_sigma0, update_sigma1, update_xi, InvGamma,
    Problem, UpdateSchedule, VariationalState,
};

/// One subject, one node, lag 1, three time points, two covariates.
pub fn toy() -> (Problem, Vec<SubjectDataset>) {
    let series = DMatrix::from_column_slice(3, 1, &[0.8, -0.3, 0.5]);
    let data = vec![SubjectDataset::new(1, series, vec![0.3, -0.5], 0).unwrap()];
    let config = ModelConfig {
        pi_delta: 0.3,
        pi_phi: 0.4,
        ..ModelConfig::default()
    };
    (Problem::new(config, &data, Execution::Sequential).unwrap(), data)
}

pub fn toy_state(problem: &Problem) -> VariationalState {
    let mut state = init_state(problem).unwrap();
    let schedule = UpdateSchedule::ascending(problem);
    for _ in 0..3 {
        cavi_sweep(problem, &mut state, &schedule, None).unwrap();
    }
    let e = &mut state.groups[0].edges[0];
    e.gamma_delta = 0.6;
    e.u_mu = 0.2;
    e.v_mu = 0.3;
    e.covariates[0].gamma_phi = 0.4;
    e.covariates[0].omega = 0.3;
    e.covariates[0].sigma_tilde = 0.5;
    e.covariates[0].phi_mean[0] = 0.7;
    e.covariates[1].gamma_phi = 0.7;
    e.covariates[1].omega = -0.2;
    e.covariates[1].phi_mean[0] = -0.4;
    state
}

fn ln_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI * var).ln() - 0.5 * (x - mean).powi(2) / var
}

fn ln_bern(x: bool, p: f64) -> f64 {
    if x {
        p.ln()
    } else {
        (1.0 - p).ln()
    }
}

fn draw_inv_gamma(ig: &InvGamma, rng: &mut impl Rng) -> f64 {
    1.0 / Gamma::new(ig.shape, 1.0 / ig.rate).unwrap().sample(rng)
}

fn draw_normal(mean: f64, var: f64, rng: &mut impl Rng) -> f64 {
    Normal::new(mean, var.sqrt()).unwrap().sample(rng)
}

/// One draw of `ln p(X, Z) - ln q(Z)` with `Z ~ q`.
fn log_ratio_draw(problem: &Problem, data: &[SubjectDataset], state: &VariationalState, rng: &mut impl Rng) -> f64 {
    let cfg = &problem.config;
    let group = &state.groups[0];
    let edge = &group.edges[0];
    let sub = &state.subjects[0];
    let design = build_lagged_design(&data[0], 1).unwrap();

    let sigma0 = draw_inv_gamma(&group.sigma0, rng);
    let sigma1 = draw_inv_gamma(&group.sigma1, rng);
    let xi = draw_inv_gamma(&group.xi[0], rng);
    let (bm, bv) = (sub.beta_mean[0], sub.beta_cov[0][(0, 0)]);
    let beta = draw_normal(bm, bv, rng);
    let delta = rng.random::<f64>() < edge.gamma_delta;

    let mut lp = subject_loglik(&design, &[beta], &[xi]).unwrap()
        + ln_bern(delta, cfg.pi_delta)
        + InvGamma::new(cfg.a0, cfg.b0).ln_pdf(sigma0)
        + InvGamma::new(cfg.a1, cfg.b1).ln_pdf(sigma1)
        + InvGamma::new(cfg.a_xi, cfg.b_xi).ln_pdf(xi);
    let mut lq = ln_normal(beta, bm, bv)
        + ln_bern(delta, edge.gamma_delta)
        + group.sigma0.ln_pdf(sigma0)
        + group.sigma1.ln_pdf(sigma1)
        + group.xi[0].ln_pdf(xi);

    let mu = if delta {
        draw_normal(edge.u_mu, edge.v_mu, rng)
    } else {
        draw_normal(0.0, cfg.sigma2_mu, rng)
    };
    lp += ln_normal(mu, 0.0, cfg.sigma2_mu);
    lq += if delta { ln_normal(mu, edge.u_mu, edge.v_mu) } else { ln_normal(mu, 0.0, cfg.sigma2_mu) };

    let mut f = mu;
    for (p, c) in edge.covariates.iter().enumerate() {
        let k = problem.groups[0].spectra[p].eigvals[0];
        let gamma = if delta { c.gamma_phi } else { cfg.pi_phi };
        let s = rng.random::<f64>() < gamma;
        let slab = delta && s;
        let (wm, wv, fm, fv) = if slab {
            (c.omega, c.sigma_tilde, c.phi_mean[0], c.phi_var[0])
        } else {
            (0.0, cfg.sigma2_w, 0.0, k)
        };
        let w = draw_normal(wm, wv, rng);
        let phi = draw_normal(fm, fv, rng);
        lp += ln_bern(s, cfg.pi_phi) + ln_normal(w, 0.0, cfg.sigma2_w) + ln_normal(phi, 0.0, k);
        lq += ln_bern(s, gamma) + ln_normal(w, wm, wv) + ln_normal(phi, fm, fv);
        if s {
            f += w * phi;
        }
    }
    lp += if delta { ln_normal(beta, f, sigma1) } else { ln_normal(beta, 0.0, sigma0) };
    lp - lq
}

/// Exact toy bound with a Monte Carlo estimate of it and its standard error.
pub fn monte_carlo_elbo(draws: usize, seed: u64) -> (f64, f64, f64) {
    let (problem, data) = toy();
    let state = toy_state(&problem);
    let exact = compute_elbo(&problem, &state).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..draws {
        let v = log_ratio_draw(&problem, &data, &state, &mut rng);
        sum += v;
        sum_sq += v * v;
    }
    let n = draws as f64;
    let mean = sum / n;
    let se = ((sum_sq / n - mean * mean) / n).sqrt();
    (exact, mean, se)
}

/// Maximizer of a unimodal `f` on `[lo, hi]`.
pub fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - ratio * (hi - lo);
    let mut b = lo + ratio * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    while hi - lo > 1e-10 {
        if fa < fb {
            lo = a;
            a = b;
            fa = fb;
            b = lo + ratio * (hi - lo);
            fb = f(b);
        } else {
            hi = b;
            b = a;
            fb = fa;
            a = hi - ratio * (hi - lo);
            fa = f(a);
        }
    }
    0.5 * (lo + hi)
}

/// Distance from each block update to the numeric maximum of the bound
/// along that coordinate.
#[derive(Default)]
pub struct Gaps(pub Vec<(String, f64)>);

impl Gaps {
    #[allow(clippy::too_many_arguments)]
    fn check(
        &mut self,
        name: &str,
        problem: &Problem,
        state: &VariationalState,
        get: impl Fn(&VariationalState) -> f64,
        set: impl Fn(&mut VariationalState, f64),
        lo: f64,
        hi: f64,
    ) {
        let at = get(state);
        let best = golden_max(
            |x| {
                let mut s = state.clone();
                set(&mut s, x);
                compute_elbo(problem, &s).unwrap()
            },
            lo,
            hi,
        );
        self.0.push((name.to_string(), (best - at).abs()));
    }

    pub fn worst(&self) -> (String, f64) {
        self.0
            .iter()
            .cloned()
            .fold((String::new(), 0.0), |acc, g| if g.1 > acc.1 { g } else { acc })
    }
}

fn around(v: f64) -> (f64, f64) {
    (v - 2.0, v + 2.0)
}

fn scale_range(v: f64) -> (f64, f64) {
    (v / 20.0, v * 20.0)
}

pub fn edge_block_gaps() -> Gaps {
    let mut gaps = Gaps::default();
    let (problem, _) = toy();
    let base = toy_state(&problem);

    let mut st = base.clone();
    single::mu(&problem, &mut st, 0, 0);
    let (lo, hi) = around(st.groups[0].edges[0].u_mu);
    gaps.check("u_mu", &problem, &st, |s| s.groups[0].edges[0].u_mu, |s, x| s.groups[0].edges[0].u_mu = x, lo, hi);
    let (lo, hi) = scale_range(st.groups[0].edges[0].v_mu);
    gaps.check("v_mu", &problem, &st, |s| s.groups[0].edges[0].v_mu, |s, x| s.groups[0].edges[0].v_mu = x, lo, hi);

    let mut st = base.clone();
    single::delta(&problem, &mut st, 0, 0);
    gaps.check(
        "gamma_delta",
        &problem,
        &st,
        |s| s.groups[0].edges[0].gamma_delta,
        |s, x| s.groups[0].edges[0].gamma_delta = x,
        1e-12,
        1.0 - 1e-12,
    );

    for p in 0..2 {
        let mut st = base.clone();
        single::w(&problem, &mut st, 0, 0, p);
        let c = st.groups[0].edges[0].covariates[p].clone();
        let (lo, hi) = around(c.omega);
        gaps.check(
            "omega",
            &problem,
            &st,
            |s| s.groups[0].edges[0].covariates[p].omega,
            |s, x| s.groups[0].edges[0].covariates[p].omega = x,
            lo,
            hi,
        );
        let (lo, hi) = scale_range(c.sigma_tilde);
        gaps.check(
            "sigma_tilde",
            &problem,
            &st,
            |s| s.groups[0].edges[0].covariates[p].sigma_tilde,
            |s, x| s.groups[0].edges[0].covariates[p].sigma_tilde = x,
            lo,
            hi,
        );
        gaps.check(
            "gamma_phi after w",
            &problem,
            &st,
            |s| s.groups[0].edges[0].covariates[p].gamma_phi,
            |s, x| s.groups[0].edges[0].covariates[p].gamma_phi = x,
            1e-12,
            1.0 - 1e-12,
        );

        let mut st = base.clone();
        single::phi(&problem, &mut st, 0, 0, p);
        let c = st.groups[0].edges[0].covariates[p].clone();
        let (lo, hi) = around(c.phi_mean[0]);
        gaps.check(
            "phi_mean",
            &problem,
            &st,
            |s| s.groups[0].edges[0].covariates[p].phi_mean[0],
            |s, x| s.groups[0].edges[0].covariates[p].phi_mean[0] = x,
            lo,
            hi,
        );
        let (lo, hi) = scale_range(c.phi_spectrum[0]);
        gaps.check(
            "phi_spectrum",
            &problem,
            &st,
            |s| s.groups[0].edges[0].covariates[p].phi_spectrum[0],
            |s, x| {
                let c = &mut s.groups[0].edges[0].covariates[p];
                c.phi_spectrum[0] = x;
                c.phi_var[0] = x;
            },
            lo,
            hi,
        );

        let mut st = base.clone();
        single::s(&problem, &mut st, 0, 0, p);
        gaps.check(
            "gamma_phi",
            &problem,
            &st,
            |s| s.groups[0].edges[0].covariates[p].gamma_phi,
            |s, x| s.groups[0].edges[0].covariates[p].gamma_phi = x,
            1e-12,
            1.0 - 1e-12,
        );
    }
    gaps
}

pub fn subject_block_gaps() -> Gaps {
    let mut gaps = Gaps::default();
    let (problem, _) = toy();
    let base = toy_state(&problem);

    let mut st = base.clone();
    update_betas(&problem, &mut st).unwrap();
    let (lo, hi) = around(st.subjects[0].beta_mean[0]);
    gaps.check("beta mean", &problem, &st, |s| s.subjects[0].beta_mean[0], |s, x| s.subjects[0].beta_mean[0] = x, lo, hi);
    let (lo, hi) = scale_range(st.subjects[0].beta_cov[0][(0, 0)]);
    gaps.check(
        "beta variance",
        &problem,
        &st,
        |s| s.subjects[0].beta_cov[0][(0, 0)],
        |s, x| s.subjects[0].beta_cov[0][(0, 0)] = x,
        lo,
        hi,
    );

    type Pick = fn(&mut VariationalState) -> &mut InvGamma;
    type Update = fn(&Problem, &mut VariationalState);
    let blocks: [(&str, Update, Pick); 3] = [
        ("sigma0", update_sigma0, |s| &mut s.groups[0].sigma0),
        ("sigma1", update_sigma1, |s| &mut s.groups[0].sigma1),
        ("xi", update_xi, |s| &mut s.groups[0].xi[0]),
    ];
    for (name, update, pick) in blocks {
        let mut st = base.clone();
        update(&problem, &mut st);
        let ig = *pick(&mut st.clone());
        let (lo, hi) = scale_range(ig.shape);
        gaps.check(
            &format!("{name} shape"),
            &problem,
            &st,
            |s| pick(&mut s.clone()).shape,
            |s, x| pick(s).shape = x,
            lo,
            hi,
        );
        let (lo, hi) = scale_range(ig.rate);
        gaps.check(
            &format!("{name} rate"),
            &problem,
            &st,
            |s| pick(&mut s.clone()).rate,
            |s, x| pick(s).rate = x,
            lo,
            hi,
        );
    }
    gaps
}
