use slmm_core::eval::{
    aggregate, align_to_truth, mean_variance, nmse, run_experiment, run_realization, score_run,
    ExperimentConfig, Method, MethodOutput, Scores, Setup, Variable,
};
use slmm_core::phantom::{generate_phantom, PhantomConfig};
use slmm_core::Mat;

fn small_phantom() -> PhantomConfig {
    PhantomConfig {
        dims: [16, 16, 8],
        database_size: 100,
        ..PhantomConfig::default()
    }
}

fn truth_output(truth: &slmm_core::phantom::PhantomTruth, with_b: bool) -> MethodOutput {
    MethodOutput {
        m: truth.m.clone(),
        a: truth.a.clone(),
        b: with_b.then(|| truth.b.clone()),
        v: with_b.then(|| truth.v.clone()),
    }
}

#[test]
fn ground_truth_scores_zero() {
    let truth = generate_phantom(&small_phantom(), 3).unwrap();
    let s = score_run(&truth, &truth_output(&truth, true)).unwrap();
    for v in Variable::ALL {
        assert_eq!(s.get(v), Some(0.0), "{}", v.name());
    }
    let lmm = score_run(&truth, &truth_output(&truth, false)).unwrap();
    assert_eq!(lmm.get(Variable::B), None);
    assert_eq!(lmm.get(Variable::A1), Some(0.0));
    // without variability the specific curves miss V B
    assert!(lmm.get(Variable::M1).unwrap() > 0.0);
}

#[test]
fn scores_do_not_depend_on_factor_order() {
    let truth = generate_phantom(&small_phantom(), 4).unwrap();
    let base = truth_output(&truth, false);
    let perm = [2, 0, 3, 1];
    let mut a = Mat::zeros(4, truth.a.cols());
    for (i, &p) in perm.iter().enumerate() {
        a.row_mut(i).copy_from_slice(truth.a.row(p));
    }
    let shuffled = MethodOutput {
        m: truth.m.select_cols(&perm),
        a,
        b: None,
        v: None,
    };
    let aligned = align_to_truth(&shuffled, &truth.m, false).unwrap();
    assert_eq!(aligned.m, base.m);
    assert_eq!(aligned.a, base.a);

    // anchored alignment keeps slot 0 and only reorders the rest
    let keep = [0, 3, 1, 2];
    let mut a = Mat::zeros(4, truth.a.cols());
    for (i, &p) in keep.iter().enumerate() {
        a.row_mut(i).copy_from_slice(truth.a.row(p));
    }
    let partly = MethodOutput {
        m: truth.m.select_cols(&keep),
        a,
        b: None,
        v: None,
    };
    let aligned = align_to_truth(&partly, &truth.m, true).unwrap();
    assert_eq!(aligned.m, truth.m);
}

#[test]
fn nmse_and_statistics() {
    let t = Mat::from_rows(&[&[3.0, 4.0]]).unwrap();
    let e = Mat::from_rows(&[&[3.0, 0.0]]).unwrap();
    assert!((nmse(&e, &t).unwrap() - 16.0 / 25.0).abs() < 1e-15);
    assert!(nmse(&e, &Mat::zeros(1, 2)).is_err());
    assert!(nmse(&Mat::zeros(2, 2), &t).is_err());
    assert_eq!(mean_variance(&[0.4]), (0.4, 0.0));
    let (m, v) = mean_variance(&[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(m, 2.5);
    assert_eq!(v, 1.25);
}

#[test]
fn aggregation_single_realization_and_failures() {
    let s = Scores([Some(0.1), Some(0.2), Some(0.3), Some(0.4), None]);
    let report = aggregate(&[Method::Lmm], &[vec![(Method::Lmm, s)]], 9).unwrap();
    assert_eq!(report.rows.len(), 5);
    assert_eq!(report.get(Method::Lmm, Variable::A1), Some((0.1, 0.0)));
    assert_eq!(report.get(Method::Lmm, Variable::B), None);
    assert_eq!(report.realizations, 1);

    let failed = Scores::failed(true);
    let report = aggregate(
        &[Method::Slmm],
        &[vec![(Method::Slmm, s)], vec![(Method::Slmm, failed)]],
        9,
    )
    .unwrap();
    let (mean, _) = report.get(Method::Slmm, Variable::A1).unwrap();
    assert!(mean.is_nan());
    assert!(aggregate(&[Method::Lmm], &[], 9).is_err());
}

#[test]
fn method_names_round_trip() {
    for m in Method::ALL {
        assert_eq!(Method::parse(m.name()), Some(m));
    }
    assert_eq!(Method::parse("vca"), None);
    assert!(Method::Slmm.role_anchored() && Method::Lmm.role_anchored());
    assert!(!Method::Nmf.role_anchored() && !Method::Kmeans.role_anchored());
}

#[test]
fn small_experiment_is_reproducible() {
    let config = ExperimentConfig {
        phantom: small_phantom(),
        realizations: 2,
        ..ExperimentConfig::default()
    };
    let a = run_experiment(&config, 12).unwrap();
    let b = run_experiment(&config, 12).unwrap();
    assert_eq!(format!("{a:?}"), format!("{b:?}"));
    for m in Method::ALL {
        for v in Variable::ALL {
            let stats = a.get(m, v);
            assert_eq!(stats.is_some(), v != Variable::B || m == Method::Slmm);
            if let Some((mean, var)) = stats {
                assert!(mean.is_finite() && mean >= 0.0 && var >= 0.0);
            }
        }
    }
    let setup = Setup::new(&config, 12).unwrap();
    let r = run_realization(&setup, &[Method::Kmeans], 0, |_, _| {});
    assert_eq!(r.len(), 1);
    assert!(r[0].2.is_none());
}
