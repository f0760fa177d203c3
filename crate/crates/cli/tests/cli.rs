use probunet_cli::{run, EXIT_OK, EXIT_USAGE};
use probunet_core::data::read_manifest;

#[test]
fn flags_override_the_config_file_which_overrides_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.json");
    std::fs::write(&cfg, r#"{"data": {"size": 16, "seed": 4, "split": {"train_years": 2, "val_years": 1, "test_years": 1}}}"#)
        .unwrap();
    let out = tmp.path().join("data");
    let code = run([
        "probunet",
        "--config",
        cfg.to_str().unwrap(),
        "generate-data",
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "9",
        "--test-years",
        "2",
    ]);
    assert_eq!(code, EXIT_OK);
    let m = read_manifest(&out).unwrap();
    assert_eq!(m.seed, 9);
    assert_eq!(m.hr_size, (16, 16));
    assert_eq!((m.split.train_years, m.split.val_years, m.split.test_years), (2, 1, 2));
    assert_eq!(m.factor, 8);
}

#[test]
fn malformed_config_files_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.json");
    std::fs::write(&cfg, "{ not json").unwrap();
    let out = tmp.path().join("data");
    let args = ["probunet", "--config", cfg.to_str().unwrap(), "generate-data", "--out", out.to_str().unwrap()];
    assert_eq!(run(args), EXIT_USAGE);
    assert_eq!(run(["probunet", "--config", "/nonexistent/run.json", "generate-data", "--out", "x"]), EXIT_USAGE);
    assert!(!out.exists());
}
