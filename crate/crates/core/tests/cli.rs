use std::fs;
use std::process::Command;

fn gda_stream() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gda-stream"))
}

#[test]
fn simulate_run_and_verify() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.txt");
    fs::write(&spec, "classes = 4\ndim = 8\ndomains = 3\nbatches_per_domain = 2\nbatch_size = 32\nangle_deg = 20\n").unwrap();
    let stream = dir.path().join("stream");

    let sim = gda_stream().args(["simulate", "--spec"]).arg(&spec).arg("--out").arg(&stream).output().unwrap();
    assert!(sim.status.success(), "{}", String::from_utf8_lossy(&sim.stderr));

    let out = dir.path().join("run");
    let run = gda_stream().arg("run").arg("--stream").arg(&stream).arg("--out").arg(&out).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let csv = fs::read_to_string(out.join("predictions.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("round,step,domain,prediction,label"));
    assert_eq!(csv.lines().count(), 1 + 3 * 2 * 32);

    let ok = gda_stream().arg("verify-drift").arg("--stream").arg(&stream).args(["--delta", "0.5"]).status().unwrap();
    assert_eq!(ok.code(), Some(0));
    let tight = gda_stream().arg("verify-drift").arg("--stream").arg(&stream).args(["--delta", "1e-6"]).status().unwrap();
    assert_eq!(tight.code(), Some(3));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere");
    let bad_alpha = gda_stream().arg("run").arg("--stream").arg(&missing).args(["--alpha", "-1"]).status().unwrap();
    assert_eq!(bad_alpha.code(), Some(2));
    let bad_toggle = gda_stream().arg("run").arg("--stream").arg(&missing).args(["--disable", "magic"]).status().unwrap();
    assert_eq!(bad_toggle.code(), Some(2));
    let no_stream = gda_stream().arg("run").arg("--stream").arg(&missing).status().unwrap();
    assert_eq!(no_stream.code(), Some(3));
}
