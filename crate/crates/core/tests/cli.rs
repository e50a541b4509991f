use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use maxdropout::synth::textured_image;
use maxdropout::{ppm, Tensor};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_maxdropout"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_texture(dir: &Path) -> String {
    let p = dir.join("in.ppm");
    ppm::write(&p, &textured_image(24, 20, 3).unwrap()).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn help_lists_subcommands() {
    let out = run(&["--help"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    for sub in ["visualize", "train", "bench", "sweep"] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
    let out = run(&["bench", "--help"]);
    assert!(String::from_utf8(out.stdout).unwrap().contains("--csv"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&run(&["frobnicate"])), 2);
    assert_eq!(code(&run(&["visualize", "--input", "x.ppm"])), 2);
    let dir = tempfile::tempdir().unwrap();
    let input = write_texture(dir.path());
    let out_path = dir.path().join("o.ppm");
    let out = out_path.to_str().unwrap();
    let bad_rate = run(&["visualize", "-i", &input, "-o", out, "--rate", "1.0"]);
    assert_eq!(code(&bad_rate), 2, "{}", stderr(&bad_rate));
    assert!(!out_path.exists(), "invalid config must be rejected before any work");
    assert_eq!(code(&run(&["visualize", "-i", &input, "-o", out, "--variant", "bogus"])), 2);
    assert_eq!(code(&run(&["bench", "--iters", "10"])), 2);
    assert_eq!(code(&run(&["sweep", "--rates", "0.5:0.1:0.1"])), 2);
    assert_eq!(code(&run(&["train", "--rate", "0.3"])), 2, "rate without a variant");
}

#[test]
fn malformed_ppm_exits_3_with_offset() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bad.ppm");
    fs::write(&input, b"P6\n4 4\n255\n\x01\x02").unwrap();
    let out = run(&["visualize", "-i", input.to_str().unwrap(), "-o", "/dev/null"]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("byte 13"), "{}", stderr(&out));

    let missing = run(&["visualize", "-i", "/nonexistent/in.ppm", "-o", "/dev/null"]);
    assert_eq!(code(&missing), 3);
}

#[test]
fn visualize_rate_zero_is_a_pass_through_reencode() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_texture(dir.path());
    let reencoded = ppm::encode(&ppm::read(&input).unwrap());
    for variant in ["dropout", "v1", "v2"] {
        let out = dir.path().join(format!("{variant}.ppm"));
        let res = run(&["visualize", "-i", &input, "-o", out.to_str().unwrap(), "--variant", variant, "--rate", "0"]);
        assert_eq!(code(&res), 0, "{}", stderr(&res));
        assert_eq!(fs::read(&out).unwrap(), reencoded, "{variant}");
    }
}

#[test]
fn visualize_dumps_mask_and_tensor() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_texture(dir.path());
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let res = run(&[
        "visualize", "-i", &input, "-o", &p("o.ppm"), "--variant", "v2", "--rate", "0.5",
        "--dump-mask", &p("mask.bin"), "--dump-tensor", &p("out.bin"),
    ]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let mask = Tensor::read_dump(fs::File::open(p("mask.bin")).unwrap()).unwrap();
    assert_eq!(mask.shape().dims(), [1, 1, 24, 20]);
    assert!(mask.data().iter().all(|&m| m == 0.0 || m == 1.0));
    let out = Tensor::read_dump(fs::File::open(p("out.bin")).unwrap()).unwrap();
    assert_eq!(out.shape().dims(), [1, 3, 24, 20]);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_texture(dir.path());
    let cfg = dir.path().join("vis.cfg");
    fs::write(&cfg, "# drop a lot\nvariant = v2\nrate = 0.9\n").unwrap();
    let out = dir.path().join("o.ppm");
    let res = run(&[
        "visualize", "--config", cfg.to_str().unwrap(), "-i", &input, "-o", out.to_str().unwrap(), "--rate", "0",
    ]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    assert_eq!(fs::read(&out).unwrap(), ppm::encode(&ppm::read(&input).unwrap()));

    fs::write(&cfg, "rate = 0.2\nwhat = 1\n").unwrap();
    let res = run(&["visualize", "--config", cfg.to_str().unwrap(), "-i", &input, "-o", out.to_str().unwrap()]);
    assert_eq!(code(&res), 2);
    assert!(stderr(&res).contains("line 2"), "{}", stderr(&res));
}

#[test]
fn train_is_deterministic() {
    let args = [
        "train", "--variant", "max-dropout-v2", "--rate", "0.3", "--epochs", "2", "--train-size", "16",
        "--val-size", "8", "--batch-size", "8", "--seed", "5",
    ];
    let a = run(&args);
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    let text = String::from_utf8(a.stdout).unwrap();
    assert!(text.starts_with("epoch,lr,train_loss,train_acc,val_loss,val_acc\n"), "{text}");
    assert_eq!(text.lines().count(), 3);
    assert_eq!(String::from_utf8(run(&args).stdout).unwrap(), text);
}

#[test]
fn sweep_writes_sorted_deterministic_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep.csv");
    let args = [
        "sweep", "--rates", "0.1,0.4", "--variants", "v2,v1", "--reps", "2", "--epochs", "1", "--train-size", "16",
        "--val-size", "8", "--out", out.to_str().unwrap(),
    ];
    let res = run(&args);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let first = fs::read_to_string(&out).unwrap();
    let rows: Vec<&str> = first.lines().collect();
    assert_eq!(rows[0], "variant,rate,reps,mean_val_acc,std_val_acc");
    assert_eq!(rows.len(), 5);
    assert!(rows[1].starts_with("max-dropout-v2,0.1,2,"));
    assert!(rows[4].starts_with("max-dropout,0.4,2,"));
    run(&args);
    assert_eq!(fs::read_to_string(&out).unwrap(), first);
}

#[test]
fn bench_reports_and_lock() {
    let dir = tempfile::tempdir().unwrap();
    let lock = dir.path().join("bench.lock");
    let jsonl = dir.path().join("r.jsonl");
    let csv = dir.path().join("r.csv");
    let res = run(&[
        "bench", "--shape", "1,64,32,32", "--lock", lock.to_str().unwrap(), "--out", jsonl.to_str().unwrap(),
        "--csv", csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let table = String::from_utf8(res.stdout).unwrap();
    assert!(table.contains("65536") && table.contains("1024"), "{table}");
    assert!(table.contains("comparison ratio = 0.015625"), "{table}");
    assert!(!lock.exists(), "lock released");

    let lines: Vec<serde_json::Value> = fs::read_to_string(&jsonl)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["comparison_count"], 65536);
    assert_eq!(lines[1]["comparison_count"], 1024);
    assert_eq!(lines[0]["times_ns"].as_array().unwrap().len(), 30);
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 3);

    // a live holder (this test process) blocks a second run
    fs::write(&lock, format!("{}\n", std::process::id())).unwrap();
    let busy = run(&["bench", "--shape", "1,1,1,1", "--lock", lock.to_str().unwrap()]);
    assert_eq!(code(&busy), 2);
    assert!(stderr(&busy).contains("lock"), "{}", stderr(&busy));
}
