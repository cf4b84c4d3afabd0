use std::f64::consts::PI;

use ct3s::ridge::{analyze_cube, retrieve, retrieve_from_ridge, separate, track, SeparationParams, Threshold};
use ct3s::signal::{make_lfm, SampledSignal, SignalModel};
use ct3s::transform::{ChirpletTransform, CubeGrid, GridSpec, SigmaSpec, TransformCube};
use ct3s::window::WindowSpec;
use num_complex::Complex64;

fn grid_spec(eta_range: [f64; 2], lambda_range: [f64; 2], lambda_step: f64, sigma: f64, hop: usize) -> GridSpec {
    GridSpec { t_range: None, t_hop: hop, eta_range, lambda_range, lambda_step, sigma: SigmaSpec::Constant(sigma) }
}

fn single(c: f64, r: f64) -> SignalModel {
    SignalModel::new(vec![make_lfm(1.0, c, r, [0.0, 4.0]).unwrap()], [0.0, 4.0]).unwrap()
}

fn params(k: usize) -> SeparationParams {
    SeparationParams { threshold: Threshold::default(), rho: 0.2, delta: 1.0, expected_components: k, trend: false }
}

#[test]
fn pure_tone_recovered_on_interior() {
    let model = single(16.0, 0.0);
    let signal = model.sample(128.0).unwrap();
    let window = WindowSpec::default();
    let grid = CubeGrid::new(&signal, &grid_spec([0.0, 40.0], [-4.0, 4.0], 0.5, 0.2, 8), &window).unwrap();
    let tr = ChirpletTransform::new(&signal, grid, window).unwrap();
    let sep = separate(&tr, &params(1)).unwrap();
    let mut interior = 0;
    for (ti, &t) in sep.ridges.t_axis.iter().enumerate() {
        if sep.ridges.flags[ti].boundary {
            continue;
        }
        interior += 1;
        let z = sep.components[0].samples[ti].unwrap();
        let truth = Complex64::from_polar(1.0, 2.0 * PI * 16.0 * t);
        assert!((z - truth).norm() < 1e-3, "t {t}: {z} vs {truth}");
        assert!((z.norm() - 1.0).abs() < 1e-3);
    }
    assert!(interior > 10);
}

#[test]
fn single_chirp_argmax_within_one_cell() {
    let model = single(10.0, 3.0);
    let signal = model.sample(128.0).unwrap();
    let window = WindowSpec::default();
    let grid = CubeGrid::new(&signal, &grid_spec([0.0, 40.0], [-6.0, 6.0], 0.25, 0.3, 16), &window).unwrap();
    let (de, dl) = (grid.eta_step(), grid.lambda_step());
    let tr = ChirpletTransform::new(&signal, grid, window).unwrap();
    let sep = separate(&tr, &params(1)).unwrap();
    for (ti, &t) in sep.ridges.t_axis.iter().enumerate() {
        if sep.ridges.flags[ti].boundary {
            continue;
        }
        let p = sep.ridges.tracks[0][ti].unwrap();
        assert!((p.eta - (10.0 + 3.0 * t)).abs() <= de, "t {t}: eta {}", p.eta);
        assert!((p.lambda - 3.0).abs() <= dl, "t {t}: lambda {}", p.lambda);
        assert!((p.q.norm() - 1.0).abs() < 1e-3);
    }
}

#[test]
fn cube_and_streaming_recovery_agree() {
    let model = SignalModel::new(
        vec![make_lfm(1.0, 8.0, 2.0, [0.0, 4.0]).unwrap(), make_lfm(0.6, 30.0, -2.0, [0.0, 4.0]).unwrap()],
        [0.0, 4.0],
    )
    .unwrap();
    let signal = model.sample(128.0).unwrap();
    let window = WindowSpec::default();
    let grid = CubeGrid::new(&signal, &grid_spec([0.0, 40.0], [-4.0, 4.0], 0.5, 0.2, 8), &window).unwrap();
    let tr = ChirpletTransform::new(&signal, grid, window).unwrap();
    let sep = separate(&tr, &params(2)).unwrap();
    let cube = tr.cube().unwrap();
    let slices = analyze_cube(&cube, &params(2)).unwrap();
    assert_eq!(slices, sep.slices);
    let ridges = track(&slices, &params(2)).unwrap();
    assert_eq!(retrieve(&cube, &ridges).unwrap(), retrieve_from_ridge(&ridges));
    assert_eq!(retrieve_from_ridge(&ridges), sep.components);
}

#[test]
fn cube_binary_round_trip() {
    let signal = single(12.0, 1.0).sample(64.0).unwrap();
    let window = WindowSpec::default();
    let grid = CubeGrid::new(&signal, &grid_spec([0.0, 30.0], [-2.0, 2.0], 1.0, 0.25, 32), &window).unwrap();
    let cube = ChirpletTransform::new(&signal, grid, window).unwrap().cube().unwrap();
    let mut bytes = Vec::new();
    cube.write_binary(&mut bytes).unwrap();
    let back = TransformCube::read_binary(bytes.as_slice()).unwrap();
    assert_eq!(back.values, cube.values);
    assert_eq!(back.boundary_flags, cube.boundary_flags);
    assert_eq!(back.grid.t_axis(), cube.grid.t_axis());
    assert!(TransformCube::read_binary(&bytes[..bytes.len() - 3]).is_err());
    assert!(TransformCube::read_binary(&b"NOTACUBE........"[..]).is_err());
}

#[test]
fn signal_csv_round_trip() {
    let signal = single(5.0, 0.5).sample(32.0).unwrap();
    let mut bytes = Vec::new();
    signal.write_csv(&mut bytes).unwrap();
    let back = SampledSignal::read_csv(bytes.as_slice()).unwrap();
    assert_eq!(back.len(), signal.len());
    assert_eq!(back.sample_rate(), signal.sample_rate());
    for (a, b) in back.samples().iter().zip(signal.samples()) {
        assert!((a - b).norm() < 1e-15);
    }
}

#[test]
fn zero_signal_gives_empty_slices() {
    let signal = SampledSignal::new(vec![Complex64::new(0.0, 0.0); 257], 64.0, 0.0).unwrap();
    let window = WindowSpec::default();
    let grid = CubeGrid::new(&signal, &grid_spec([0.0, 30.0], [-2.0, 2.0], 1.0, 0.25, 32), &window).unwrap();
    let tr = ChirpletTransform::new(&signal, grid, window).unwrap();
    let sep = separate(&tr, &params(1)).unwrap();
    assert!(sep.slices.iter().all(|s| s.cluster_count == 0));
    assert!(sep.ridges.flags.iter().all(|f| f.empty));
    assert!(sep.components[0].samples.iter().all(Option::is_none));
}
