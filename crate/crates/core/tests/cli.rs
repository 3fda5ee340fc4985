use daflow::cli::{run_from_args, EXIT_OK, EXIT_USAGE, EXIT_VERIFY};

fn run(args: &[&str]) -> i32 {
    run_from_args(std::iter::once("dafnet").chain(args.iter().copied()))
}

#[test]
fn usage_and_config_errors_exit_2() {
    assert_eq!(run(&["frobnicate"]), EXIT_USAGE);
    assert_eq!(run(&["train", "--set", "nonsense=1"]), EXIT_USAGE);
    assert_eq!(run(&["train", "--config", "/definitely/missing.cfg"]), EXIT_USAGE);
    assert_eq!(run(&["infer", "--checkpoint", "/definitely/missing", "--synthetic", "1"]), EXIT_USAGE);
    assert_eq!(run(&["gradcheck", "--module", "no_such_op"]), EXIT_USAGE);
}

#[test]
fn gradcheck_exit_codes() {
    assert_eq!(run(&["-q", "gradcheck", "--module", "sigmoid"]), EXIT_OK);
    assert_eq!(run(&["-q", "gradcheck", "--module", "sigmoid", "--corrupt", "sigmoid"]), EXIT_VERIFY);
}

#[test]
fn generate_train_infer_visualize() {
    let tmp = tempfile::tempdir().unwrap();
    let p = |s: &str| tmp.path().join(s).display().to_string();
    assert_eq!(run(&["-q", "gen-data", "--out", &p("data"), "--count", "3", "--texture", "stripes"]), EXIT_OK);
    assert!(tmp.path().join("data/pose/00002.json").is_file());
    let sets = [
        "epochs=1", "train_pairs=2", "eval_pairs=2", "batch_size=2", "samples=2", "fpn_channels=4,4,4,4",
        "mfe_hidden=4,4,4,4", "mfe_kernels=3,3,3,3", "shallow_channels=4,4",
    ];
    let mut args = vec!["-q".to_string(), "train".into(), "--toy".into()];
    for s in sets {
        args.extend(["--set".into(), s.into()]);
    }
    args.extend(["--set".into(), format!("checkpoint_dir={}", p("ck"))]);
    args.extend(["--set".into(), format!("output_dir={}", p("out"))]);
    assert_eq!(run_from_args(std::iter::once("dafnet".to_string()).chain(args)), EXIT_OK);

    let ck = p("ck/final");
    assert_eq!(run(&["-q", "infer", "--checkpoint", &ck, "--data", &p("data"), "--out", &p("inf"), "--flows"]), EXIT_OK);
    assert!(tmp.path().join("inf/00001.png").is_file());
    assert!(tmp.path().join("inf/metrics.json").is_file());
    assert_eq!(
        run(&["-q", "infer", "--checkpoint", &ck, "--synthetic", "1", "--resolution", "128x96", "--out", &p("hi")]),
        EXIT_OK
    );
    let hi = image::open(tmp.path().join("hi/synth_0000.png")).unwrap();
    assert_eq!((hi.width(), hi.height()), (96, 128));
    assert_eq!(
        run(&["-q", "visualize-flow", "--flow", &p("inf/00000_flow.daft"), "--attention", &p("inf/00000_attn.daft"), "--out", &p("flow.png")]),
        EXIT_OK
    );
    assert!(tmp.path().join("flow.png").is_file());
    // A broken entry is reported and skipped, not fatal.
    std::fs::write(tmp.path().join("data/image/00001.png"), b"not a png").unwrap();
    assert_eq!(run(&["-q", "infer", "--checkpoint", &ck, "--data", &p("data"), "--out", &p("inf2")]), EXIT_OK);
    assert!(!tmp.path().join("inf2/00001.png").exists());
    assert!(tmp.path().join("inf2/00002.png").is_file());
}

#[test]
fn bench_reports_every_k() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("bench");
    let code = run(&[
        "-q", "bench", "--toy", "--set", "eval_pairs=2", "--set", "fpn_channels=4,4,4,4", "--set", "mfe_hidden=4,4,4,4",
        "--set", "shallow_channels=4,4", "--k", "1,2", "--reps", "1", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK);
    let rows: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("bench.json")).unwrap()).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 2);
    assert!(rows[1]["graph_bytes"].as_u64() > rows[0]["graph_bytes"].as_u64());
}
