mod common;

use std::fs;
use std::process::{Command, Output};

use common::{metadata_path, Workspace};

fn corrnet(args: &[&str], cwd: &std::path::Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_corrnet"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn code(output: &Output) -> i32 {
    output.status.code().unwrap()
}

#[test]
fn synth_then_run_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("data")).unwrap();
    fs::copy(metadata_path(), dir.path().join("data/metadata.csv")).unwrap();
    let out = corrnet(&["synth", "--seed", "4"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("data/prices.csv").exists());

    let args = ["run", "--iterations", "60", "--sizes", "2,4", "--out"];
    let first = corrnet(&[&args[..], &["first"]].concat(), dir.path());
    assert_eq!(code(&first), 0, "{}", String::from_utf8_lossy(&first.stderr));
    let second = corrnet(&[&args[..], &["second"]].concat(), dir.path());
    assert_eq!(code(&second), 0);
    for p in 1..=3 {
        for ext in ["csv", "json"] {
            let name = format!("report_period{p}_to_{}.{ext}", p + 1);
            let a = fs::read(dir.path().join("first").join(&name)).unwrap();
            let b = fs::read(dir.path().join("second").join(&name)).unwrap();
            assert_eq!(a, b, "{name}");
        }
    }
    let csv = fs::read_to_string(dir.path().join("first/report_period1_to_2.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(!dir.path().join("first/report_period4_to_5.csv").exists());
}

#[test]
fn subcommands_respect_the_period_flag() {
    let ws = Workspace::new(40);
    let config = ws.config_path.to_str().unwrap();
    let cwd = ws.dir.path();
    let out = corrnet(&["ingest", "--config", config, "--period", "2"], cwd);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(ws.path("out/returns_period2.csv").exists());
    assert!(!ws.path("out/returns_period1.csv").exists());

    let out = corrnet(&["clusters", "--config", config, "--period", "3", "--k", "6"], cwd);
    assert_eq!(code(&out), 0);
    let text = fs::read_to_string(ws.path("out/period3_clusters.csv")).unwrap();
    let mut labels: Vec<&str> = text.lines().skip(1).map(|l| l.rsplit(',').next().unwrap()).collect();
    labels.sort_unstable();
    labels.dedup();
    assert_eq!(labels.len(), 6);

    let out = corrnet(&["simulate", "--config", config, "--period", "3", "--sizes", "2"], cwd);
    assert_eq!(code(&out), 0);
    assert!(ws.path("out/report_period3_to_4.csv").exists());
    assert!(!ws.path("out/report_period1_to_2.csv").exists());

    let out = corrnet(&["net", "--config", config, "--period", "1"], cwd);
    assert_eq!(code(&out), 0);
    assert!(ws.path("out/period1.nex").exists());
    assert_eq!(fs::read_to_string(ws.path("out/correlation_summary.csv")).unwrap().lines().count(), 2);
}

#[test]
fn exit_codes_follow_error_kind() {
    let ws = Workspace::new(40);
    let config = ws.config_path.to_str().unwrap();
    let cwd = ws.dir.path();

    assert_eq!(code(&corrnet(&["--help"], cwd)), 0);
    assert_eq!(code(&corrnet(&["frobnicate"], cwd)), 1);
    assert_eq!(code(&corrnet(&["run", "--sizes", "2,x"], cwd)), 1);

    let out = corrnet(&["simulate", "--config", config, "--period", "4"], cwd);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("period"));
    assert_eq!(code(&corrnet(&["run", "--config", config, "--iterations", "1"], cwd)), 1);
    assert_eq!(code(&corrnet(&["run", "--config", config, "--sizes", "500"], cwd)), 1);

    let bad = ws.path("bad.toml");
    fs::write(&bad, "[simulation]\nseeds = 3\n").unwrap();
    assert_eq!(code(&corrnet(&["run", "--config", bad.to_str().unwrap()], cwd)), 1);

    assert_eq!(code(&corrnet(&["run", "--config", "missing.toml"], cwd)), 2);
    let no_prices = ws.path("no_prices.toml");
    fs::write(&no_prices, "[data]\nprices = \"absent.csv\"\nmetadata = \"metadata.csv\"\n").unwrap();
    let out = corrnet(&["net", "--config", no_prices.to_str().unwrap()], cwd);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("prices"));

    let flat = ws.path("flat.csv");
    let prices = fs::read_to_string(ws.path("prices.csv")).unwrap();
    let mut lines = prices.lines();
    let header = lines.next().unwrap();
    let first_ticker = lines.clone().next().unwrap().split(',').nth(1).unwrap().to_string();
    let mut rewritten = vec![header.to_string()];
    for line in lines {
        let mut fields: Vec<String> = line.split(',').map(String::from).collect();
        if fields[1] == first_ticker {
            fields[2] = "10".into();
            fields[3] = "0".into();
        }
        rewritten.push(fields.join(","));
    }
    fs::write(&flat, rewritten.join("\n") + "\n").unwrap();
    let flat_config = ws.path("flat.toml");
    fs::write(&flat_config, "[data]\nprices = \"flat.csv\"\nmetadata = \"metadata.csv\"\n").unwrap();
    let out = corrnet(&["net", "--config", flat_config.to_str().unwrap(), "--period", "1"], cwd);
    assert_ne!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stderr).contains("variance"), "{}", String::from_utf8_lossy(&out.stderr));
}
