use daflow::gradcheck::{case_names, run, GradcheckOptions};

#[test]
fn corrupted_gradient_is_caught() {
    for op in ["conv2d", "bilinear_sample", "merge_two_streams", "style_loss"] {
        let rep = run(&GradcheckOptions {
            filter: Some(op.into()),
            corrupt: Some(op.into()),
            ..GradcheckOptions::default()
        })
        .unwrap();
        assert!(!rep.passed(), "{op}");
        assert!(rep.worst() > 1e-3, "{op}: {}", rep.worst());
    }
}

#[test]
fn reports_are_deterministic_per_seed() {
    let opts = GradcheckOptions {
        filter: Some("warp_ops".into()),
        seed: 3,
        ..GradcheckOptions::default()
    };
    let a = run(&opts).unwrap();
    assert_eq!(a, run(&opts).unwrap());
    assert!(a.passed());
    let b = run(&GradcheckOptions { seed: 4, ..opts }).unwrap();
    assert_ne!(a.results[0].max_rel_err, b.results[0].max_rel_err);
}

#[test]
fn every_group_is_covered() {
    let names = case_names();
    for g in ["tensor_core", "warp_ops", "losses", "estimators"] {
        assert!(names.iter().any(|(_, group)| group == g), "{g}");
    }
}
