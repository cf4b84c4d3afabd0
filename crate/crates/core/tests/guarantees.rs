use std::io::Write;

use ct3s::bounds::{
    bound_report, check_hypotheses, pi_bound, res_bound, upsilon_pair, BoundContext, BoundParams,
};
use ct3s::experiment::{bound_curves, certificate_rows, run, RunConfig};
use ct3s::ridge::{SeparationParams, Threshold};
use ct3s::signal::{make_lfm, make_sfm, two_lfm_model, SignalModel};
use ct3s::transform::{p_oracle, ChirpletTransform, CubeGrid, GridSpec, SigmaSpec};
use ct3s::window::{pft_closed, WindowSpec};

fn transform_for<'a>(
    signal: &'a ct3s::signal::SampledSignal,
    sigma: f64,
) -> ChirpletTransform<'a> {
    let spec = GridSpec {
        t_range: None,
        t_hop: 1,
        eta_range: [0.0, 60.0],
        lambda_range: [-10.0, 10.0],
        lambda_step: 1.0,
        sigma: SigmaSpec::Constant(sigma),
    };
    let window = WindowSpec::default();
    let grid = CubeGrid::new(signal, &spec, &window).unwrap();
    ChirpletTransform::new(signal, grid, window).unwrap()
}

fn slow_sfm_model() -> SignalModel {
    SignalModel::new(
        vec![
            make_sfm(1.0, 15.0, 1.0, 0.5, [0.0, 8.0]).unwrap(),
            make_lfm(0.8, 40.0, 0.5, [0.0, 8.0]).unwrap(),
        ],
        [0.0, 8.0],
    )
    .unwrap()
}

fn halton(index: usize, base: usize) -> f64 {
    let (mut f, mut r, mut i) = (1.0, 0.0, index);
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Points of the open box `|η - φ'_ℓ| + ρ|λ - φ''_ℓ| < Δ`.
fn box_points(ctx: &BoundContext, l: usize, count: usize) -> Vec<(f64, f64)> {
    (1..)
        .map(|i| {
            let eta = ctx.if_values[l] + (2.0 * halton(i, 2) - 1.0) * ctx.delta;
            let lambda = ctx.cr_values[l] + (2.0 * halton(i, 3) - 1.0) * ctx.delta / ctx.rho;
            (eta, lambda)
        })
        .filter(|&(eta, lambda)| {
            (eta - ctx.if_values[l]).abs() + ctx.rho * (lambda - ctx.cr_values[l]).abs() < ctx.delta
        })
        .take(count)
        .collect()
}

#[test]
fn model_mismatch_within_pi_bound() {
    let model = slow_sfm_model();
    let rate = 128.0;
    let sigma = 0.15;
    let signal = model.sample(rate).unwrap();
    let tr = transform_for(&signal, sigma);
    for &t in &[2.0, 3.5, 5.0, 6.25] {
        let ti = tr.grid().t_axis().iter().position(|&x| (x - t).abs() < 1e-9).unwrap();
        let ctx = BoundContext::from_model(&model, t, sigma, 2.0, sigma).unwrap();
        let limit = ctx.big_m() * pi_bound(&ctx);
        assert!(limit > 0.0);
        for i in 1..=50 {
            let eta = 60.0 * halton(i, 2);
            let lambda = -10.0 + 20.0 * halton(i, 3);
            let q = tr.point(ti, eta, lambda).unwrap();
            let p = p_oracle(&model, t, eta, lambda, sigma).unwrap();
            assert!((q - p).norm() <= limit + 1e-6, "t {t}: |Q - p| {} > {limit}", (q - p).norm());
        }
    }
}

#[test]
fn box_residual_within_res_bound() {
    for (model, sigma, delta) in [(two_lfm_model(), 0.15, 0.5), (slow_sfm_model(), 0.15, 2.0)] {
        let signal = model.sample(128.0).unwrap();
        let tr = transform_for(&signal, sigma);
        for &t in &[1.5, 2.0, 6.0] {
            let ti = tr.grid().t_axis().iter().position(|&x| (x - t).abs() < 1e-9).unwrap();
            let ctx = BoundContext::from_model(&model, t, sigma, delta, sigma).unwrap();
            let res = res_bound(&ctx);
            for l in 0..ctx.len() {
                let xl = model.component_value(l, t).unwrap();
                for (eta, lambda) in box_points(&ctx, l, 50) {
                    let q = tr.point(ti, eta, lambda).unwrap();
                    let own = xl * pft_closed(sigma * (eta - ctx.if_values[l]), sigma * sigma * (lambda - ctx.cr_values[l]));
                    assert!((q - own).norm() <= res[l] + 1e-6, "t {t} l {l}: {} > {}", (q - own).norm(), res[l]);
                }
            }
        }
    }
}

#[test]
fn leakage_pairs_shrink_with_separation() {
    let ctx = |gap: f64| {
        BoundContext::new(0.0, 0.0, 1.0, 10.0, 1.0, vec![1.0, 1.0], vec![100.0, 100.0 + gap], vec![0.0, 0.0]).unwrap()
    };
    let near = upsilon_pair(&ctx(30.0), 0, 1).unwrap();
    let far = upsilon_pair(&ctx(50.0), 0, 1).unwrap();
    assert!(far < near);
}

fn two_tone_config(dir: &std::path::Path) -> RunConfig {
    let model = SignalModel::new(
        vec![make_lfm(1.0, 100.0, 0.0, [0.0, 16.0]).unwrap(), make_lfm(1.0, 150.0, 0.0, [0.0, 16.0]).unwrap()],
        [0.0, 16.0],
    )
    .unwrap();
    let path = dir.join("two_tone.json");
    let mut f = std::fs::File::create(&path).unwrap();
    f.write_all(model.to_json().unwrap().as_bytes()).unwrap();
    RunConfig {
        preset: None,
        model: Some(path),
        rate: 512.0,
        sigma: SigmaSpec::Constant(1.0),
        t_hop: 128,
        eta_range: [80.0, 170.0],
        lambda_range: [-3.0, 3.0],
        lambda_step: 0.25,
        separation: SeparationParams {
            threshold: Threshold::Absolute(0.5),
            rho: 1.0,
            delta: 10.0,
            expected_components: 2,
            trend: false,
        },
        eval_interval: [6.5, 9.5],
        window: WindowSpec::default(),
        out: None,
    }
}

#[test]
fn certificates_hold_where_hypotheses_pass() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = two_tone_config(dir.path());
    let run = run(&cfg).unwrap();
    let axis = run.separation.ridges.t_axis.clone();
    let reports = bound_curves(&cfg, &run.model, &axis).unwrap();
    assert!(!reports.is_empty());
    assert!(reports.iter().all(|r| r.hypotheses.pass), "hypotheses should hold for two separated tones");
    let rows = certificate_rows(&run, &reports).unwrap();
    assert_eq!(rows.len(), 2 * reports.len());
    for row in &rows {
        assert!(row.hypotheses_pass);
        assert!(row.bd1.is_some() && row.bd2.is_some() && row.bd3.is_some());
        assert!(
            row.consistent(run.grid.eta_step(), run.grid.lambda_step(), 1e-3),
            "certificate violated: {row:?}"
        );
    }
}

#[test]
fn clusters_match_component_count_where_hypotheses_pass() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = two_tone_config(dir.path());
    let run = run(&cfg).unwrap();
    let params = BoundParams { sigma: 1.0, delta: 10.0, rho: 1.0, threshold: Some(0.5) };
    for (ti, slice) in run.separation.slices.iter().enumerate() {
        let t = run.separation.ridges.t_axis[ti];
        if !cfg.in_eval(t) {
            continue;
        }
        assert!(check_hypotheses(&run.model, t, &params).unwrap().pass);
        assert_eq!(slice.cluster_count, 2, "t {t}");
        assert!(slice.min_cluster_distance.unwrap() >= 10.0);
    }
    assert!(!run.summary.soft_failure);
    for c in &run.summary.components {
        assert!(c.relative_l2_error < 1e-3, "{c:?}");
    }
}

#[test]
fn two_lfm_report_fails_cluster_condition() {
    let params = BoundParams { sigma: 0.15, delta: 0.5, rho: 0.15, threshold: None };
    let report = bound_report(&two_lfm_model(), 4.0, &params).unwrap();
    let cluster = report.hypotheses.get(ct3s::bounds::CLUSTER_CONDITION).unwrap();
    assert!(!cluster.pass);
    assert!(report.hypotheses.get(ct3s::bounds::SEPARATION).unwrap().pass);
}
