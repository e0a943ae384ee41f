use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kinemb::koopman::{estimate_covariances, half_weighted, linear_vamp, vamp2_score, LagSpec};
use kinemb::rigid::{transform, Rotation};
use kinemb::rng::rng_from_seed;
use kinemb::scalelab::fit_power_law;
use kinemb::trajio::{parse_xyz, read_fmb, split_series, write_xyz, FeatureSeries, SplitMode, SplitSpec, Trajectory};

struct Ws {
    _tmp: tempfile::TempDir,
    dir: PathBuf,
}

impl Ws {
    fn new() -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().to_path_buf();
        Self { _tmp: tmp, dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn config(&self, name: &str, text: &str) -> PathBuf {
        let p = self.path(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    fn run(&self, args: &[&str], config: &Path) -> Output {
        Command::new(env!("CARGO_BIN_EXE_kinemb"))
            .args(args)
            .arg("--config")
            .arg(config)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str], config: &Path) {
        let out = self.run(args, config);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const MARKOV: &str = "output_dir = \"sim\"\nseed = 3\n[generator]\nkind = \"markov\"\ntransition = [[0.9, 0.1], [0.1, 0.9]]\nlength = 4000\n";

const PRETRAIN: &str = "output_dir = \"pre\"\nseed = 2\n[model]\nwidth = 8\ndepth = 2\ncutoff = 3.0\nn_rbf = 8\n[train]\nlearning_rate = LR\nbatch_size = 4\nepochs = 10\nnoise_level = 0.1\n[data]\nn_structures = 12\n";

#[test]
fn simulate_markov_is_one_hot_and_reproducible() {
    let ws = Ws::new();
    let cfg = ws.config("m.toml", MARKOV);
    ws.ok(&["simulate"], &cfg);
    let s = read_fmb(ws.path("sim/series.fmb")).unwrap();
    assert_eq!((s.len(), s.dim()), (4000, 2));
    assert!(s.values().row_iter().all(|r| r.sum() == 1.0 && r.iter().all(|v| *v == 0.0 || *v == 1.0)));
    let first = std::fs::read(ws.path("sim/series.fmb")).unwrap();
    let manifest = std::fs::read(ws.path("sim/manifest.json")).unwrap();
    ws.ok(&["simulate", "--force"], &cfg);
    assert_eq!(std::fs::read(ws.path("sim/series.fmb")).unwrap(), first);
    assert_eq!(std::fs::read(ws.path("sim/manifest.json")).unwrap(), manifest);
}

#[test]
fn config_errors_exit_with_two() {
    let ws = Ws::new();
    let cfg = ws.config("m.toml", &MARKOV.replace("seed = 3\n", ""));
    let out = ws.run(&["simulate"], &cfg);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("seed"), "{}", stderr(&out));
    let cfg = ws.config("u.toml", &format!("{MARKOV}shade = 1\n"));
    assert_eq!(ws.run(&["simulate"], &cfg).status.code(), Some(2));
    let out = ws.run(&["simulate"], &ws.path("missing.toml"));
    assert_eq!(out.status.code(), Some(2));
    let out = Command::new(env!("CARGO_BIN_EXE_kinemb")).arg("bogus").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn pretrain_writes_ten_epochs_and_guards_outputs() {
    let ws = Ws::new();
    let cfg = ws.config("p.toml", &PRETRAIN.replace("LR", "0.003"));
    ws.ok(&["pretrain"], &cfg);
    let csv = std::fs::read_to_string(ws.path("pre/train_record.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);
    assert!(ws.path("pre/model.gdm").exists() && ws.path("pre/loss.svg").exists());

    let again = ws.run(&["pretrain", "--resume"], &cfg);
    assert_eq!(again.status.code(), Some(2));
    assert!(stderr(&again).contains("refusing to overwrite"));
    ws.ok(&["pretrain", "--resume", "--force"], &cfg);
}

#[test]
fn zero_learning_rate_gives_a_flat_curve() {
    let ws = Ws::new();
    let cfg = ws.config("p.toml", &PRETRAIN.replace("LR", "0.0"));
    ws.ok(&["pretrain"], &cfg);
    let csv = std::fs::read_to_string(ws.path("pre/train_record.csv")).unwrap();
    let vals: Vec<&str> = csv.lines().skip(1).map(|l| l.rsplit(',').next().unwrap()).collect();
    assert_eq!(vals.len(), 10);
    assert!(vals.iter().all(|v| *v == vals[0]), "{vals:?}");
}

fn cluster_and_model(ws: &Ws) {
    let sim = ws.config(
        "c.toml",
        "output_dir = \"cl\"\nseed = 4\n[generator]\nkind = \"cluster\"\nn_atoms = 6\ntemperature = 0.05\nn_frames = 8\nstride = 3\n",
    );
    ws.ok(&["simulate"], &sim);
    let pre = ws.config("p.toml", &PRETRAIN.replace("LR", "0.003").replace("epochs = 10", "epochs = 1"));
    ws.ok(&["pretrain"], &pre);
}

fn embed(ws: &Ws, name: &str, trajectory: &str, pooling: &str) -> FeatureSeries {
    let cfg = ws.config(
        &format!("{name}.toml"),
        &format!("output_dir = \"{name}\"\ncheckpoint = \"pre/model.gdm\"\ntrajectory = \"{trajectory}\"\n{pooling}"),
    );
    ws.ok(&["embed"], &cfg);
    read_fmb(ws.path(&format!("{name}/embeddings.fmb"))).unwrap()
}

#[test]
fn embed_shapes_and_rotation_invariance() {
    let ws = Ws::new();
    cluster_and_model(&ws);
    let whole = embed(&ws, "e1", "cl/trajectory.xyz", "");
    assert_eq!((whole.len(), whole.dim()), (8, 8));
    let windows = embed(
        &ws,
        "e2",
        "cl/trajectory.xyz",
        "[pooling]\nmode = \"residue_windows\"\nresidues = [0, 0, 1, 1, 2, 2]\nhalf_width = 0\n",
    );
    assert_eq!((windows.len(), windows.dim()), (8, 3 * 8));
    // three disjoint windows sum back to the whole-graph pooling
    for t in 0..8 {
        for c in 0..8 {
            let s: f64 = (0..3).map(|w| windows.values()[(t, w * 8 + c)]).sum();
            assert!((s - whole.values()[(t, c)]).abs() < 1e-9);
        }
    }

    let traj = parse_xyz(&std::fs::read_to_string(ws.path("cl/trajectory.xyz")).unwrap()).unwrap();
    let r = Rotation::random(&mut rng_from_seed(5));
    let frames = traj.frames().iter().map(|f| transform(f, &r, [1.0, -2.0, 0.5])).collect();
    let rotated = Trajectory::new(frames, traj.atomic_numbers().to_vec(), traj.dt(), traj.id()).unwrap();
    std::fs::write(ws.path("rot.xyz"), write_xyz(&rotated).unwrap()).unwrap();
    let moved = embed(&ws, "e3", "rot.xyz", "");
    let diff = (moved.values() - whole.values()).abs().max();
    let scale = whole.values().abs().max();
    assert!(diff <= 1e-10 * scale.max(1.0), "{diff}");
}

#[test]
fn linear_vamp_matches_the_library() {
    let ws = Ws::new();
    ws.ok(&["simulate"], &ws.config("m.toml", MARKOV));
    let cfg = ws.config(
        "v.toml",
        "output_dir = \"v\"\nseed = 1\nfeatures = [\"sim/series.fmb\"]\nlag = 1\n[model]\nkind = \"linear\"\nout_dim = 1\n",
    );
    ws.ok(&["vamp"], &cfg);
    let scores: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(ws.path("v/scores.json")).unwrap()).unwrap();

    let s = read_fmb(ws.path("sim/series.fmb")).unwrap();
    let (train, val) = split_series(&[s], &SplitSpec::new(SplitMode::Temporal, 0.5, 1)).unwrap();
    let lv = linear_vamp(&train, LagSpec::new(1), 1, 1e-6).unwrap();
    let proj = FeatureSeries::new(lv.transform(val[0].values()).unwrap(), "p", 1.0).unwrap();
    let val_score = vamp2_score(&half_weighted(&estimate_covariances(&[proj], LagSpec::new(1)).unwrap(), 1e-6).unwrap());
    assert_eq!(scores["train_score"].as_f64().unwrap(), lv.score);
    assert!((scores["validation_score"].as_f64().unwrap() - val_score).abs() < 1e-12);
    let svg = std::fs::read_to_string(ws.path("v/psi.svg")).unwrap();
    assert!(svg.contains("<circle"));
}

#[test]
fn trained_head_reports_validation_score() {
    let ws = Ws::new();
    ws.ok(
        &["simulate"],
        &ws.config(
            "d.toml",
            "output_dir = \"dw\"\nseed = 6\n[generator]\nkind = \"langevin\"\npotential = \"double_well\"\nstep_size = 0.005\ntemperature = 0.4\nlength = 20000\n",
        ),
    );
    let cfg = ws.config(
        "v.toml",
        "output_dir = \"v\"\nseed = 2\nfeatures = [\"dw/series.fmb\"]\nlag = 20\n[model]\nkind = \"head\"\nout_dim = 2\nhidden = [8]\n[model.train]\nepochs = 2\nbatch_size = 1000\nlearning_rate = 0.005\n",
    );
    ws.ok(&["vamp"], &cfg);
    let scores: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(ws.path("v/scores.json")).unwrap()).unwrap();
    let v = scores["validation_score"].as_f64().unwrap();
    assert!((1.0..=3.0).contains(&v));
    assert!(v >= scores["initial_validation_score"].as_f64().unwrap());
    assert!(ws.path("v/head.vhm").exists() && ws.path("v/history.csv").exists());
}

#[test]
fn lag_beyond_the_trajectory_exits_with_one() {
    let ws = Ws::new();
    ws.ok(&["simulate"], &ws.config("m.toml", MARKOV));
    let cfg = ws.config(
        "v.toml",
        "output_dir = \"v\"\nseed = 1\nfeatures = [\"sim/series.fmb\"]\nlag = 4000\n[model]\nkind = \"linear\"\nout_dim = 1\n",
    );
    let out = ws.run(&["vamp"], &cfg);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("LagTooLarge"), "{}", stderr(&out));
}

#[test]
fn sweep_then_fit() {
    let ws = Ws::new();
    let cfg = ws.config(
        "s.toml",
        "output_dir = \"sw\"\nseed = 3\naxis = \"width\"\nvalues = [4, 8, 12]\n[base]\nwidth = 8\ndepth = 1\ncutoff = 3.0\nn_rbf = 8\n[train]\nlearning_rate = 0.003\nbatch_size = 4\nepochs = 1\nnoise_level = 0.1\n[data]\nn_structures = 12\n",
    );
    ws.ok(&["sweep", "--jobs", "3"], &cfg);
    let csv = std::fs::read_to_string(ws.path("sw/records.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("axis_value,width,depth,cutoff,N,first_epoch_loss,converged_loss"));
    let svg = std::fs::read_to_string(ws.path("sw/loss.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2);

    // serial run gives the same records
    let out = ws.path("sw1");
    let o = Command::new(env!("CARGO_BIN_EXE_kinemb"))
        .args(["sweep", "--jobs", "1", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(std::fs::read_to_string(out.join("records.csv")).unwrap(), csv);

    let fit = ws.config("f.toml", "output_dir = \"fit\"\nrecords = \"sw/records.csv\"\n");
    ws.ok(&["fit"], &fit);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(ws.path("fit/fit.json")).unwrap()).unwrap();
    let pure = &report["converged_loss"]["pure"];
    for key in ["a", "alpha", "c", "residual"] {
        assert!(pure[key].is_number(), "{key}");
    }
    let pts: Vec<(f64, f64)> = csv
        .lines()
        .skip(1)
        .map(|l| {
            let c: Vec<f64> = l.split(',').map(|v| v.parse().unwrap()).collect();
            (c[4], c[6])
        })
        .collect();
    let oracle = fit_power_law(&pts, None, false).unwrap();
    for (key, want) in [("alpha", oracle.alpha), ("a", oracle.a), ("c", oracle.c)] {
        let got = pure[key].as_f64().unwrap();
        assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "{key}: {got} vs {want}");
    }
    assert!(std::fs::read_to_string(ws.path("fit/fit.svg")).unwrap().contains("stroke-dasharray"));
}

#[test]
fn malformed_records_exit_with_two() {
    let ws = Ws::new();
    std::fs::write(ws.path("bad.csv"), "N,first_epoch_loss,converged_loss\n100,abc,0.5\n").unwrap();
    let cfg = ws.config("f.toml", "output_dir = \"fit\"\nrecords = \"bad.csv\"\n");
    let out = ws.run(&["fit"], &cfg);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(!ws.path("fit/manifest.json").exists());
}
