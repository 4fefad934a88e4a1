use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use depthnormal::fixtures::sphere_cap;
use depthnormal::geometry::DepthKind;
use depthnormal::io;
use serde_json::Value;

fn dnorm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dnorm")).args(args).output().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new(size: usize) -> Fixture {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let s = sphere_cap::<f64>(size).unwrap();
        io::write_depth_pfm(&root.join("depth.pfm"), &s.depth).unwrap();
        let rel = s.depth.map_valid(DepthKind::AffineInvariant, |d| Some(0.5 * d - 1.0)).unwrap();
        io::write_depth_pfm(&root.join("rel.pfm"), &rel).unwrap();
        io::write_normal_pfm(&root.join("normal.pfm"), &s.normals).unwrap();
        io::write_intrinsics(&root.join("k.txt"), &s.intrinsics).unwrap();
        Fixture { _dir: dir, root }
    }

    fn p(&self, name: &str) -> String {
        self.root.join(name).display().to_string()
    }
}

#[test]
fn usage_errors_exit_two() {
    let o = dnorm(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(dnorm(&["noise", "--out", "x.pfm"]).status.code(), Some(2));
    assert_eq!(dnorm(&["toy-check"]).status.code(), Some(2));
}

#[test]
fn computation_errors_exit_one() {
    let f = Fixture::new(16);
    let o = dnorm(&["eval-normal", "--pred", &f.p("missing.pfm"), "--gt", &f.p("normal.pfm")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
    let o = dnorm(&["eval-depth", "--pred", &f.p("normal.pfm"), "--gt", &f.p("depth.pfm")]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn metric_commands_write_reports_and_logs() {
    let f = Fixture::new(48);
    let o = dnorm(&["eval-depth", "--pred", &f.p("rel.pfm"), "--gt", &f.p("depth.pfm"), "--out", &f.p("d.json")]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&f.root.join("d.json"));
    assert!(r["absrel"].as_f64().unwrap() < 1e-6);
    assert_eq!(r["delta1"], 1.0);
    let log = json(&f.root.join("d.json.run.json"));
    assert_eq!(log["command"], "eval-depth");
    assert_eq!(log["args"]["alignment"], "depth_least_squares");

    let o = dnorm(&["eval-normal", "--pred", &f.p("normal.pfm"), "--gt", &f.p("normal.pfm"), "--out", &f.p("n.json")]);
    assert!(o.status.success());
    assert_eq!(json(&f.root.join("n.json"))["mean_angular"], 0.0);

    let o = dnorm(&[
        "gc", "--pred-depth", &f.p("rel.pfm"), "--pred-normal", &f.p("normal.pfm"), "--gt-depth", &f.p("depth.pfm"),
        "--intrinsics", &f.p("k.txt"), "--out", &f.p("gc.json"),
    ]);
    assert!(o.status.success());
    assert!(json(&f.root.join("gc.json"))["gc"].as_f64().unwrap() < 1.0);
}

#[test]
fn geometry_commands() {
    let f = Fixture::new(48);
    let o = dnorm(&["normals-from-depth", "--depth", &f.p("depth.pfm"), "--intrinsics", &f.p("k.txt"), "--out", &f.p("n.png")]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(f.root.join("n.png.run.json").exists());

    let o = dnorm(&["align", "--depth", &f.p("rel.pfm"), "--method", "ls", "--gt", &f.p("depth.pfm"), "--out", &f.p("a.pfm")]);
    assert!(o.status.success());
    let log = json(&f.root.join("a.pfm.run.json"));
    assert!((log["result"]["scale"].as_f64().unwrap() - 2.0).abs() < 1e-6);
    let o = dnorm(&["align", "--depth", &f.p("rel.pfm"), "--out", &f.p("b.pfm")]);
    assert_eq!(o.status.code(), Some(1));

    let o = dnorm(&[
        "integrate", "--normal", &f.p("normal.pfm"), "--intrinsics", &f.p("k.txt"), "--prior", &f.p("depth.pfm"),
        "--out", &f.p("z.pfm"), "--mesh", &f.p("z.obj"),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let z = io::read_depth_pfm::<f64>(&f.root.join("z.pfm"), DepthKind::Metric).unwrap();
    let gt = io::read_depth_pfm::<f64>(&f.root.join("depth.pfm"), DepthKind::Metric).unwrap();
    let worst = z
        .values()
        .iter()
        .zip(gt.values())
        .zip(z.mask().as_slice())
        .filter(|(_, ok)| **ok)
        .map(|((a, b), _)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(worst < 0.01, "{worst}");
    let obj = std::fs::read_to_string(f.root.join("z.obj")).unwrap();
    assert!(obj.lines().any(|l| l.starts_with("f ")));
}

#[test]
fn recon_writes_a_mesh() {
    let f = Fixture::new(64);
    let o = dnorm(&["recon", "--depth", &f.p("rel.pfm"), "--normal", &f.p("normal.pfm"), "--intrinsics", &f.p("k.txt"), "--out", &f.p("m.ply")]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = io::read_ply::<f64>(&f.root.join("m.ply")).unwrap();
    assert!(m.faces.len() > 1000);
    assert_eq!(json(&f.root.join("m.ply.run.json"))["result"]["faces"], m.faces.len());
}

#[test]
fn noise_is_deterministic() {
    let f = Fixture::new(8);
    for name in ["a.pfm", "b.pfm"] {
        let o = dnorm(&["noise", "--seed", "7", "--height", "32", "--width", "32", "--out", &f.p(name)]);
        assert!(o.status.success());
    }
    assert_eq!(std::fs::read(f.root.join("a.pfm")).unwrap(), std::fs::read(f.root.join("b.pfm")).unwrap());
    let p = io::decode_pfm(&std::fs::read(f.root.join("a.pfm")).unwrap()).unwrap();
    assert_eq!((p.width, p.height, p.channels), (32, 128, 1));
    dnorm(&["noise", "--seed", "8", "--height", "32", "--width", "32", "--out", &f.p("c.pfm")]);
    assert_ne!(std::fs::read(f.root.join("a.pfm")).unwrap(), std::fs::read(f.root.join("c.pfm")).unwrap());
}

#[test]
fn hist_of_a_ramp() {
    let f = Fixture::new(8);
    let ramp = depthnormal::fixtures::linear_ramp::<f64>(100, 4).unwrap();
    io::write_depth_pfm(&f.root.join("ramp.pfm"), &ramp).unwrap();
    let o = dnorm(&["hist", &f.p("ramp.pfm"), "--out", &f.p("h.json")]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let h = json(&f.root.join("h.json"));
    assert!((h["proportion"].as_f64().unwrap() - 0.01).abs() < 1e-12);
    assert_eq!(h["percent"], "1%");
}

#[test]
fn toy_commands() {
    let f = Fixture::new(8);
    let o = dnorm(&["toy-check", "--seed", "0", "--log", &f.p("check.json")]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&f.root.join("check.json"))["result"]["passed"], true);

    let o = dnorm(&["toy-train", "--seed", "1", "--steps", "50", "--out", &f.p("p.bin")]);
    assert!(o.status.success());
    let p = io::read_toy_params::<f32>(&f.root.join("p.bin")).unwrap();
    assert!(p.len() > 5000);
    dnorm(&["toy-train", "--seed", "1", "--steps", "50", "--out", &f.p("q.bin")]);
    assert_eq!(std::fs::read(f.root.join("p.bin")).unwrap(), std::fs::read(f.root.join("q.bin")).unwrap());
}
