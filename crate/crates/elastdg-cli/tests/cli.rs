use std::fs;
use std::process::Command;

const HEADER: &str = "level,h,ndof_sigma,ndof_sigmacheck,ndof_u,ndof_ucheck,e_sigma_L2,e_divsigma_L2,e_u_L2,e_strain_L2,rate_sigma,rate_divsigma,rate_u,rate_strain,status";

fn elastdg(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_elastdg")).args(args).output().unwrap()
}

#[test]
fn study_writes_csv_and_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.csv");
    let mesh = dir.path().join("mesh.txt");
    let mat = dir.path().join("m.txt");
    let o = elastdg(&[
        "study",
        "--formulation", "four_field_hdiv",
        "--alpha", "1,0,0,1",
        "--eta", "1,-1",
        "--tau", "1,1",
        "--gamma", "1",
        "--nu", "0.4",
        "--E", "1",
        "--levels", "1..3",
        "--out", out.to_str().unwrap(),
        "--mesh-dump", mesh.to_str().unwrap(),
        "--matrix-dump", mat.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], HEADER);
    assert_eq!(lines.len(), 4);
    assert!(lines[1..].iter().all(|l| l.ends_with(",ok")));
    assert!(!fs::read_to_string(&mesh).unwrap().is_empty());
    for line in fs::read_to_string(&mat).unwrap().lines().take(20) {
        let parts: Vec<&str> = line.split(' ').collect();
        assert_eq!(parts.len(), 3);
        parts[0].parse::<usize>().unwrap();
        parts[1].parse::<usize>().unwrap();
        parts[2].parse::<f64>().unwrap();
    }
}

#[test]
fn study_to_stdout_is_deterministic() {
    let args = ["study", "--formulation", "four_field_h1", "--alpha", "0,1,1,0", "--levels", "1..3"];
    let (a, b) = (elastdg(&args), elastdg(&args));
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert!(String::from_utf8(a.stdout).unwrap().starts_with(HEADER));
}

#[test]
fn presets_limit_and_locking_run() {
    let list = elastdg(&["preset", "list"]);
    assert!(list.status.success());
    let names = String::from_utf8(list.stdout).unwrap();
    assert!(names.lines().any(|l| l == "new-hdiv-k<k>"));
    let o = elastdg(&["preset", "new-hdiv-k0", "--levels", "1..2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = elastdg(&["limit", "--kind", "mixed", "--level", "2"]);
    assert!(o.status.success());
    assert!(String::from_utf8(o.stdout).unwrap().starts_with("rho,"));
    let o = elastdg(&["locking", "--levels", "1..2", "--nus", "0.4,0.49"]);
    assert!(o.status.success());
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 5);
}

#[test]
fn bad_input_fails_cleanly() {
    for args in [
        vec!["study", "--nu", "0.5"],
        vec!["study", "--levels", "3..2"],
        vec!["study", "--alpha", "1,2"],
        vec!["preset", "no-such-method"],
    ] {
        let o = elastdg(&args);
        assert!(!o.status.success(), "{args:?}");
        assert!(!o.stderr.is_empty());
    }
}
