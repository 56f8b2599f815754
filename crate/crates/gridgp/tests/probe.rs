#[test]
fn probe_lk_calibration() {
    use gridgp::basis::*;
    use gridgp::gpcore::*;
    use gridgp::harness::*;
    use gridgp::scoring;

    let g = GridGeometry::new(60, 100, (-95.91153, -91.28381), (34.29519, 37.06811));
    let spec = CovarianceSpec::new(9.0, 0.5, 0.25);
    let full = simulate_gp(&g, &spec, &TrendSpec::constant_mean(44.0), 20160804, 20_000).unwrap();
    let clouds = CloudConfig { seed: 20160806, disks: 44, radius_cells: (2.0, 7.5), random_fraction: 0.02 };
    let split = split_with_clouds(&full, &clouds).unwrap();
    println!("train {} test {}", split.train.n_observed(), split.test_locations.len());

    for (label, spacing, kappas, max_eval, tol) in [
        ("base",  0.926, vec![0.1, 0.5], 120usize, 1e-3),
        ("fine",  0.772, vec![0.05, 0.15, 0.5], 250, 1e-4),
    ] {
        let t0 = std::time::Instant::now();
        let params = LkParams {
            resolutions: 3, coarsest_spacing: spacing, overlap: 2.5,
            kappa_grid: kappas, fit_opts: FitOptions { tol, max_eval, ..Default::default() },
        };
        let fit = lk_fit(&split.train, &params).unwrap();
        let pred = lk_predict(&fit, &split.train.trend.kind, &split.test_locations).unwrap();
        let rmse = scoring::rmse(&split.truth, &pred.means()).unwrap();
        let cvg = scoring::coverage(&pred.lowers(), &pred.uppers(), &split.truth).unwrap();
        println!("{label}: K={} kappa={} sw2={:.3} nug={:.3} nu={:.3} ll={:.1} rmse={:.3} cvg={:.3} [{:.0}s]",
            fit.model.basis.total, fit.model.kappa, fit.sigma_w2, fit.nugget, fit.nu, fit.loglik,
            rmse, cvg, t0.elapsed().as_secs_f64());
    }
}
