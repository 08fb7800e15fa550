mod support;

use netcal::calib::CalibrationModel;
use netcal::gp::NoiseModel;
use netcal::hmc::{self, effective_sample_size, HmcConfig};
use netcal::kernels::KernelParams;
use support::*;

fn rescaled(inst: &Instance, c: f64) -> CalibrationModel {
    let ls = inst.theta_y.lengthscales().to_vec();
    CalibrationModel::new(
        &inst.data.scaled(c),
        inst.prior.clone(),
        KernelParams::new(inst.theta_y.variance() * c * c, ls).unwrap(),
        NoiseModel::new(inst.noise * c * c).unwrap(),
        inst.field_mean * c,
    )
    .unwrap()
}

#[test]
fn log_joint_shifts_by_a_constant() {
    let mut r = rng(31);
    let inst = random_instance(&mut r, 20, 3, true);
    let base = inst.model();
    let scaled = rescaled(&inst, 7.5);
    let shift = -(inst.data.len() as f64) * 7.5f64.ln();
    for _ in 0..5 {
        let z = random_state(&mut r, &inst);
        let d = scaled.log_joint(&z) - base.log_joint(&z);
        assert!((d - shift).abs() < 1e-8 * shift.abs(), "{d} vs {shift}");
    }
}

#[test]
fn weight_posterior_is_scale_equivariant() {
    let mut r = rng(32);
    let inst = random_instance(&mut r, 24, 3, false);
    let config = HmcConfig {
        step_size: 0.05,
        n_leapfrog: 10,
        n_samples: 1500,
        n_burnin: 500,
        adapt: true,
        ..HmcConfig::default()
    };
    let base = inst.model();
    let scaled = rescaled(&inst, 40.0);
    let init = base.prior_mean_state();
    let a = hmc::sample(&base, &init, &HmcConfig { seed: 1, ..config.clone() }).unwrap();
    let b = hmc::sample(&scaled, &init, &HmcConfig { seed: 2, ..config }).unwrap();
    for d in 0..base.dim() {
        let (xa, xb) = (a.coordinate(d), b.coordinate(d));
        let med = |x: &[f64]| {
            let mut v = x.to_vec();
            v.sort_by(f64::total_cmp);
            v[v.len() / 2]
        };
        let sd = |x: &[f64]| {
            let m = x.iter().sum::<f64>() / x.len() as f64;
            (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
        };
        // Monte-Carlo standard error of each median, combined.
        let se = |x: &[f64]| 1.2533 * sd(x) / effective_sample_size(x).sqrt();
        let mc = (se(&xa).powi(2) + se(&xb).powi(2)).sqrt();
        let shift = (med(&xa) - med(&xb)).abs();
        assert!(shift < 2.0 * mc, "coordinate {d}: median shift {shift} vs 2 MC SE {}", 2.0 * mc);
    }
}
