use std::path::PathBuf;
use std::process::{Command, Output};

const OPEN_SKY: &str = r#"
name = "open_sky"
duration = 4.0
v_max = 1.5

[start]
position = [0.0, 0.0, 5.0]

[command]
type = "waypoints"
points = [[40.0, 0.0, 5.0]]

[scene]
bounds = { min = [-5.0, -5.0, -5.0], max = [50.0, 5.0, 10.0] }
"#;

const BOXED_IN: &str = r#"
[[scene.primitives]]
type = "box"
min = [-1.0, -1.0, 4.0]
max = [1.0, 1.0, 6.0]
"#;

fn rangeavoid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rangeavoid")).args(args).output().unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("rangeavoid-cli-{name}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn run_prints_metrics_and_writes_outputs() {
    let dir = scratch("run");
    let config = dir.join("open_sky.toml");
    std::fs::write(&config, OPEN_SKY).unwrap();
    let out = dir.join("out");
    let o = rangeavoid(&["run", config.to_str().unwrap(), "--headless", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("open_sky"), "{stdout}");
    // headless runs print no progress
    assert!(o.stderr.is_empty(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["metrics.txt", "ticks.tsv", "timing.txt"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn exit_codes() {
    let dir = scratch("codes");
    let crash = dir.join("boxed_in.toml");
    std::fs::write(&crash, OPEN_SKY.to_string() + BOXED_IN).unwrap();
    assert_eq!(rangeavoid(&["run", crash.to_str().unwrap(), "--headless"]).status.code(), Some(2));
    assert_eq!(rangeavoid(&["suite", dir.to_str().unwrap()]).status.code(), Some(2));

    let o = rangeavoid(&["run", "/nonexistent/scenario.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn serve_fails_on_a_busy_port() {
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = taken.local_addr().unwrap().to_string();
    let o = rangeavoid(&["serve", "gap", "--bind", &addr]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cannot bind"));
}

#[test]
fn serve_rejects_an_unknown_scenario() {
    let o = rangeavoid(&["serve", "no_such_scenario", "--bind", "127.0.0.1:0"]);
    assert_eq!(o.status.code(), Some(1));
}
