use std::f64::consts::PI;

use coopemit_core::analysis::{exponential_tail_fit, fit_g2_cw, fit_g2_pulsed_peak, FitInit};
use coopemit_core::correlators::{
    analytic_g2_cw, analytic_g2_pulsed_peak, g1_cw, g2_cw, g2_pulsed, integrate_peak, intensity_from,
    pulsed_correlations, time_resolved_intensity, two_time_g2, uniform_grid, Normalization,
    PulsedHistogram, Trace,
};
use coopemit_core::density::DensityOperator;
use coopemit_core::dynamics::{DriveProtocol, EmissionModel, EmitterParams, Pulse};
use coopemit_core::instrument::{convolve_function, sample_histogram, IrfModel};
use coopemit_core::interference::{
    coherence_time_window, hom_cross_correlation, hom_cw, hom_pulsed, visibility, windowed_visibility,
    HomConfig,
};
use coopemit_core::operators::C64;

const LIFETIME: f64 = 0.643;
const PULSED_DEPHASING_TIME: f64 = 0.280;
const CW_DECAY_TIME: f64 = 0.880;
const CW_DEPHASING_TIME: f64 = 0.199;

fn pulsed_rates(gamma_d: f64) -> EmitterParams {
    EmitterParams::new(1.0 / LIFETIME, 0.0, gamma_d).unwrap()
}

fn cw_rates() -> (f64, f64) {
    (1.0 / (2.0 * CW_DECAY_TIME), 1.0 / CW_DEPHASING_TIME)
}

/// Synthetic IRF-broadened CW histogram with about `total` counts.
fn synthetic_cw(seed: u64, total: u64) -> (Vec<f64>, f64, coopemit_core::instrument::CountHistogram) {
    let (g, gd) = cw_rates();
    let grid = uniform_grid(-5.0, 5.0, 2501);
    let shape = convolve_function(&grid, &IrfModel::default(), |t| analytic_g2_cw(g, gd, t)).unwrap();
    let amplitude = total as f64 / shape.iter().sum::<f64>();
    let trace = Trace::new(grid.clone(), shape, Normalization::Raw).unwrap();
    (grid, amplitude, sample_histogram(&trace, total, seed).unwrap())
}

#[test]
fn cw_fit_recovers_generating_parameters() {
    let (g, gd) = cw_rates();
    let irf = IrfModel::default();
    let (_, amplitude, hist) = synthetic_cw(11, 1_000_000);
    for (sg, sd) in [(3.0, 1.0 / 3.0), (1.0 / 3.0, 3.0), (3.0, 3.0), (1.0 / 3.0, 1.0 / 3.0)] {
        let fit = fit_g2_cw(&hist, Some(&irf), &FitInit::new(g * sg, gd * sd)).unwrap();
        assert!(fit.converged);
        assert!(fit.cost_history.windows(2).all(|w| w[1] < w[0]));
        for (est, truth) in [(fit.gamma, g), (fit.gamma_d, gd), (fit.amplitude, amplitude)] {
            assert!((est.value / truth - 1.0).abs() < 0.05, "{est:?} vs {truth}");
            assert!(est.deviation(truth) < 3.0, "{est:?} vs {truth}");
        }
        assert!((fit.coherence_time.value / 0.162 - 1.0).abs() < 0.05);
    }
}

#[test]
fn cw_fit_uncertainties_are_calibrated() {
    let (g, gd) = cw_rates();
    let irf = IrfModel::default();
    let mut covered = 0;
    let seeds = 100;
    for seed in 0..seeds {
        let (_, amplitude, hist) = synthetic_cw(1000 + seed, 1_000_000);
        let fit = fit_g2_cw(&hist, Some(&irf), &FitInit::new(g, gd)).unwrap();
        let ok = [(fit.gamma, g), (fit.gamma_d, gd), (fit.amplitude, amplitude)]
            .iter()
            .all(|(e, t)| e.deviation(*t) < 3.0);
        covered += ok as u32;
    }
    assert!(covered >= 95, "{covered} of {seeds}");
}

#[test]
fn pulsed_peak_fits() {
    let g = 1.0 / LIFETIME;
    let grid = uniform_grid(-5.0, 5.0, 2001);
    let irf = IrfModel::default();
    let synth = |gd: f64, seed: u64, total: u64| {
        let shape = convolve_function(&grid, &irf, |t| analytic_g2_pulsed_peak(g, gd, t)).unwrap();
        let trace = Trace::new(grid.clone(), shape, Normalization::Raw).unwrap();
        sample_histogram(&trace, total, seed).unwrap()
    };

    let gd = 1.0 / PULSED_DEPHASING_TIME;
    let fit = fit_g2_pulsed_peak(&synth(gd, 3, 1_000_000), Some(&irf), g, &FitInit::new(g, gd / 3.0)).unwrap();
    assert!(fit.converged);
    assert!((fit.gamma_d.value / gd - 1.0).abs() < 0.05, "{:?}", fit.gamma_d);

    // Without dephasing the peak is as wide as a side peak.
    let fit = fit_g2_pulsed_peak(&synth(0.0, 4, 10_000_000), Some(&irf), g, &FitInit::new(g, 1.0)).unwrap();
    assert!((fit.coherence_time.value * g - 1.0).abs() < 0.02, "{:?}", fit.coherence_time);

    // Nonresonant excitation: very short composite coherence time.
    let gd = 1.0 / 0.043 - g;
    let fit = fit_g2_pulsed_peak(&synth(gd, 5, 1_000_000), Some(&irf), g, &FitInit::new(g, gd / 3.0)).unwrap();
    assert!((fit.coherence_time.value / 0.043 - 1.0).abs() < 0.10, "{:?}", fit.coherence_time);
}

#[test]
fn pulsed_cooperative_bunching_windows() {
    let drive = DriveProtocol::pulsed(PI / 2.0);
    let h = g2_pulsed(EmissionModel::Cooperative, &pulsed_rates(1.0 / PULSED_DEPHASING_TIME), &drive, 25.0).unwrap();
    let short = integrate_peak(&h, 0.0, 0.3).unwrap();
    let long = integrate_peak(&h, 0.0, 10.0).unwrap();
    assert!((short - 0.90).abs() < 0.05, "{short}");
    assert!((long - 0.67).abs() < 0.05, "{long}");

    let h = g2_pulsed(EmissionModel::Cooperative, &pulsed_rates(0.0), &drive, 25.0).unwrap();
    for w in [0.3, 1.0, 10.0] {
        assert!((integrate_peak(&h, 0.0, w).unwrap() - 1.0).abs() < 0.01);
    }
}

#[test]
fn pulse_area_sweep_peaks_at_two_pi() {
    let p = pulsed_rates(1.0 / PULSED_DEPHASING_TIME);
    let g: Vec<f64> = [1.0, 2.0, 3.0]
        .iter()
        .map(|n| {
            let h = g2_pulsed(EmissionModel::Cooperative, &p, &DriveProtocol::pulsed(n * PI), 12.44).unwrap();
            integrate_peak(&h, 0.0, 0.3).unwrap()
        })
        .collect();
    assert!(g[1] > g[0] && g[1] > g[2], "{g:?}");
}

#[test]
fn lattice_matches_direct_two_time_integration() {
    let mut pulse = Pulse::with_area(PI / 2.0);
    pulse.phase_averaged = false;
    pulse.relative_phase = 0.7;
    let drive = DriveProtocol::CoherentPulsed(pulse);
    let params = pulsed_rates(2.0);
    let model = EmissionModel::Cooperative;
    let c = pulsed_correlations(model, &params, &drive, false).unwrap();
    let area = c.intensity.iter().sum::<f64>() * c.bin_width;
    let n = c.intensity.len();
    let ground = DensityOperator::ground(4).unwrap();
    let ms = [0usize, 20, 200];
    let taus: Vec<f64> = ms.iter().map(|m| *m as f64 * c.bin_width).collect();
    let mut direct = [0.0; 3];
    // Start one period in, by which time the pulse train has reached its periodic regime.
    for k in 0..n {
        let t1 = pulse.period + k as f64 * c.bin_width;
        let g = two_time_g2(model, &params, &drive, &ground, t1, &taus).unwrap();
        for (d, v) in direct.iter_mut().zip(g.values()) {
            *d += v * c.bin_width;
        }
    }
    for (i, m) in ms.iter().enumerate() {
        let want = direct[i] / (area * area);
        assert!((c.central[*m] / want - 1.0).abs() < 1e-6, "m={m}: {} vs {want}", c.central[*m]);
    }
}

#[test]
fn peak_integration_against_closed_form() {
    let (g, gd) = (1.0 / LIFETIME, 1.0 / PULSED_DEPHASING_TIME);
    let period = 12.44;
    let n = 2488usize;
    let dt = period / n as f64;
    let m: Vec<f64> = (0..=n / 2).map(|i| i as f64 * dt).collect();
    let central: Vec<f64> = m.iter().map(|t| analytic_g2_pulsed_peak(g, gd, *t)).collect();
    let side: Vec<f64> = m.iter().map(|t| (-g * t).exp()).collect();
    let h = PulsedHistogram::from_shapes(&central, &side, dt, period, 2).unwrap();

    // Exact ratio of the window integrals of the two line shapes.
    let w = 10.0;
    let e = |r: f64| (1.0 - (-r * w / 2.0).exp()) / r;
    let oracle = 0.5 * (e(g) + e(g + gd)) / e(g);
    let long = integrate_peak(&h, 0.0, w).unwrap();
    assert!((long - oracle).abs() < 1e-4, "{long} vs {oracle}");
    assert!((long - 0.652).abs() < 0.002);
    assert!(integrate_peak(&h, 0.0, 0.3).unwrap() >= long);
    assert!((integrate_peak(&h, period, w).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn emission_lifetimes() {
    let gamma = 1.0 / LIFETIME;
    let t_grid = uniform_grid(0.0, 8.0, 1601);
    for model in [EmissionModel::Single, EmissionModel::Cooperative] {
        let i = time_resolved_intensity(model, &pulsed_rates(1.0 / PULSED_DEPHASING_TIME), &DriveProtocol::pulsed(PI / 2.0), &t_grid)
            .unwrap();
        let tau = exponential_tail_fit(&i, 2.0).unwrap();
        assert!((tau * gamma - 1.0).abs() < 0.01, "{model:?}: {tau}");
    }
    let sr = EmitterParams::new(gamma, 0.0, 0.0).unwrap().with_collective_rate(2.0 * gamma).unwrap();
    let i = intensity_from(EmissionModel::Superradiant, &sr, &DriveProtocol::IncoherentCw, &DensityOperator::doubly_excited(), &t_grid)
        .unwrap();
    let tau = exponential_tail_fit(&i, 2.0).unwrap();
    assert!((tau * 2.0 * gamma - 1.0).abs() < 0.10, "{tau}");
}

#[test]
fn cw_limits_for_every_model_and_drive() {
    let base = EmitterParams::new(0.9, 0.6, 0.8).unwrap();
    let sr = base.with_collective_rate(1.8).unwrap();
    let far = [0.0, 50.0 / 0.9];
    for model in EmissionModel::ALL {
        let p = if model == EmissionModel::Superradiant { sr } else { base };
        for drive in [DriveProtocol::IncoherentCw, DriveProtocol::coherent_cw(1.3)] {
            let g = g2_cw(model, &p, &drive, &far).unwrap();
            assert!((g.values()[1] - 1.0).abs() < 1e-6, "{model:?} {drive:?}");
            if model == EmissionModel::Single {
                assert!(g.values()[0].abs() < 1e-15);
            }
        }
    }
    let p = EmitterParams::new(1.0, 1.0, 0.5).unwrap();
    let g = g2_cw(EmissionModel::Independent, &p, &DriveProtocol::IncoherentCw, &far).unwrap();
    assert!((g.values()[0] - 0.5).abs() < 1e-8);
}

#[test]
fn coherence_magnitude_never_grows() {
    let grid = uniform_grid(0.0, 10.0, 401);
    for model in EmissionModel::ALL {
        for gd in [0.0, 1.0, 5.0] {
            let mut p = EmitterParams::new(1.0, 0.7, gd).unwrap();
            if model == EmissionModel::Superradiant {
                p = p.with_collective_rate(2.0).unwrap();
            }
            let g1 = g1_cw(model, &p, &DriveProtocol::IncoherentCw, &grid).unwrap();
            assert!((g1.values()[0] - C64::new(1.0, 0.0)).norm() < 1e-12);
            for w in g1.values().windows(2) {
                assert!(w[1].norm() <= w[0].norm() + 1e-12, "{model:?} gd={gd}");
            }
        }
    }
}

#[test]
fn hom_cw_anchors() {
    let grid = uniform_grid(-4.0, 4.0, 801);
    let single = hom_cw(EmissionModel::Single, &EmitterParams::new(1.0, 0.3, 0.5).unwrap(), &DriveProtocol::IncoherentCw, &grid, &HomConfig::default())
        .unwrap();
    assert!((single.visibility.value_at(0.0).unwrap() - 1.0).abs() < 1e-6);
    assert!(single.perpendicular.values().iter().all(|v| *v >= 0.5 - 1e-15));

    let coop = hom_cw(EmissionModel::Cooperative, &EmitterParams::new(1.0, 1.0, 200.0).unwrap(), &DriveProtocol::IncoherentCw, &grid, &HomConfig::default())
        .unwrap();
    assert!((coop.visibility.value_at(0.0).unwrap() - 0.5).abs() < 0.01);

    // Identity V = |g1|^2 / (1 + g2) at unit overlap.
    let p = EmitterParams::new(1.0, 1.0, 2.0).unwrap();
    let g2 = g2_cw(EmissionModel::Cooperative, &p, &DriveProtocol::IncoherentCw, &grid).unwrap();
    let g1 = g1_cw(EmissionModel::Cooperative, &p, &DriveProtocol::IncoherentCw, &grid).unwrap();
    let par = hom_cross_correlation(&g2, &g1, &HomConfig::parallel()).unwrap();
    let perp = hom_cross_correlation(&g2, &g1, &HomConfig::perpendicular()).unwrap();
    let v = visibility(&par, &perp).unwrap();
    for i in 0..grid.len() {
        let want = g1.values()[i].norm_sqr() / (1.0 + g2.values()[i]);
        assert!((v.values()[i] - want).abs() < 1e-12);
    }
}

#[test]
fn coherence_time_windows_from_visibility_widths() {
    let grid = uniform_grid(-15.0, 15.0, 6001);
    let ctw = |width: f64, g2: f64| {
        let g2t = Trace::new(grid.clone(), vec![g2; grid.len()], Normalization::SteadyStateSquared).unwrap();
        let g1t = Trace::new(
            grid.clone(),
            grid.iter().map(|t| C64::new((-t.abs() / width).exp(), 0.0)).collect(),
            Normalization::SteadyStateSquared,
        )
        .unwrap();
        let par = hom_cross_correlation(&g2t, &g1t, &HomConfig::parallel()).unwrap();
        let perp = hom_cross_correlation(&g2t, &g1t, &HomConfig::perpendicular()).unwrap();
        coherence_time_window(&visibility(&par, &perp).unwrap())
    };
    let single = ctw(1.34, 0.0);
    let coop = ctw(1.15, 1.0);
    assert!((single / 1.37 - 1.0).abs() < 0.15, "{single}");
    assert!((coop / 0.53 - 1.0).abs() < 0.20, "{coop}");
    assert!(single >= 2.0 * coop);
}

#[test]
fn pulsed_interference_visibilities() {
    let gamma = 1.0 / LIFETIME;
    let vis = |model, gd: f64, area: f64, window: f64| {
        let p = pulsed_rates(gd);
        let d = DriveProtocol::pulsed(area);
        let par = hom_pulsed(model, &p, &d, &HomConfig::parallel()).unwrap();
        let perp = hom_pulsed(model, &p, &d, &HomConfig::perpendicular()).unwrap();
        windowed_visibility(&par, &perp, window).unwrap()
    };
    assert!(vis(EmissionModel::Single, 0.0, PI, 10.0) > 0.95);

    // V = M / (1 + g2), with the photon overlap M set by gamma / (gamma + gamma_d)
    // up to the small re-excitation correction.
    let gd = 1.0 / PULSED_DEPHASING_TIME;
    let p = pulsed_rates(gd);
    let h = g2_pulsed(EmissionModel::Single, &p, &DriveProtocol::pulsed(PI), 12.44).unwrap();
    let g2 = integrate_peak(&h, 0.0, 10.0).unwrap();
    let oracle = gamma / (gamma + gd) / (1.0 + g2);
    let v = vis(EmissionModel::Single, gd, PI, 10.0);
    assert!((v - oracle).abs() < 0.01, "{v} vs {oracle}");

    let mut last = 1.0;
    for gd in [0.0, 0.5, 2.0, 5.0] {
        let v = vis(EmissionModel::Single, gd, PI, 10.0);
        assert!(v <= last + 1e-12);
        last = v;
    }

    let coop = vis(EmissionModel::Cooperative, gd, PI / 2.0, 10.0);
    assert!((coop - 0.20).abs() < 0.05, "{coop}");
}

#[test]
fn sampled_peak_mean_is_unbiased() {
    let (g, gd) = (1.0 / LIFETIME, 1.0 / PULSED_DEPHASING_TIME);
    let grid = uniform_grid(-2.0, 2.0, 41);
    let trace = Trace::new(grid.clone(), grid.iter().map(|t| analytic_g2_pulsed_peak(g, gd, *t)).collect(), Normalization::Raw)
        .unwrap();
    let total = 100_000u64;
    let sum: f64 = trace.values().iter().sum();
    let seeds = 100;
    let mut mean = vec![0.0; grid.len()];
    for seed in 0..seeds {
        let h = sample_histogram(&trace, total, seed).unwrap();
        for (m, c) in mean.iter_mut().zip(h.counts()) {
            *m += *c as f64 / seeds as f64;
        }
    }
    for (m, v) in mean.iter().zip(trace.values()) {
        let lambda = v * total as f64 / sum;
        let sigma = (lambda / seeds as f64).sqrt();
        assert!((m - lambda).abs() < 3.0 * sigma, "{m} vs {lambda}");
    }
}
