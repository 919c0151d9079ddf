use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command as Process;

use straightlab::cli::{run, sha256_hex, Command, Manifest, RunConfig};
use straightlab::Error;

fn small(dir: &Path, extra: &str) -> RunConfig {
    let text = format!(
        "out_dir={}\nname=t\nenv=wall\nseeds=0,1\nn_traj=30\ntraj_len=25\nepochs=1\nn_tasks=3\ngd_steps=10\nsweep_draws=12\nheatmap_resolution=1\ndiag_trajectories=2\nheldout_fraction=0.1\n{extra}",
        dir.display()
    );
    RunConfig::parse(&text, &[]).unwrap()
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn every_command_reruns_byte_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small(tmp.path(), "");
    for cmd in Command::ALL {
        run(cmd, &cfg).unwrap();
    }
    let first = snapshot(tmp.path());
    for cmd in Command::ALL {
        run(cmd, &cfg).unwrap();
    }
    assert_eq!(first, snapshot(tmp.path()));
    for key in ["t/0/eval_open.csv", "t/1/eval_mpc.csv", "t/summary_open.csv", "t/summary_mpc.csv", "t/0/sweep_summary.csv", "t/1/heatmap_geodesic.pgm"] {
        assert!(first.contains_key(key), "{key}");
    }
}

#[test]
fn manifest_checksums_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small(tmp.path(), "seeds=3");
    run(Command::SweepTheorem, &cfg).unwrap();
    run(Command::AnalyzeLinear, &cfg).unwrap();
    let dir = cfg.run_dir(3);
    let m = Manifest::read(&dir.join("manifest.txt")).unwrap();
    assert_eq!(m.config_hash, cfg.hash());
    assert_eq!(m.seed, "3");
    assert_eq!(m.artifacts.len(), 4);
    for (file, (_, sha)) in &m.artifacts {
        assert_eq!(&sha256_hex(&fs::read(dir.join(file)).unwrap()), sha);
    }
    // a different configuration in the same directory starts a fresh manifest
    let other = small(tmp.path(), "seeds=3\nlin_eps=0.2");
    run(Command::AnalyzeLinear, &other).unwrap();
    let m = Manifest::read(&dir.join("manifest.txt")).unwrap();
    assert_eq!(m.config_hash, other.hash());
    assert_eq!(m.artifacts.len(), 2);
}

#[test]
fn every_bad_key_is_reported() {
    let err = RunConfig::parse("env=mars\nbudget=30\nfoo=1\nlambda=x\n", &[("planner".into(), "newton".into())]).unwrap_err();
    let Error::Config(items) = &err else { panic!("{err:?}") };
    let text = items.join("\n");
    for needle in ["env", "foo", "lambda", "planner"] {
        assert!(text.contains(needle), "{text}");
    }
    let err = RunConfig::parse("budget=30\nframeskip=4\n", &[]).unwrap_err().to_string();
    assert!(err.contains("budget"), "{err}");
}

#[test]
fn missing_inputs_name_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small(tmp.path(), "");
    let err = run(Command::Train, &cfg).unwrap_err();
    let Error::MissingInput(path) = &err else { panic!("{err:?}") };
    assert!(path.ends_with("t/0/dataset.stpl"));
    run(Command::GenData, &cfg).unwrap();
    let err = run(Command::EvalPlan, &cfg).unwrap_err();
    assert!(matches!(&err, Error::MissingInput(p) if p.ends_with("t/0/checkpoint.stck")), "{err:?}");
}

#[test]
fn binary_reports_one_line_error_classes() {
    let exe = env!("CARGO_BIN_EXE_straightlab");
    let tmp = tempfile::tempdir().unwrap();
    let out = Process::new(exe).current_dir(tmp.path()).args(["train", "nonsense=1", "epochs=x"]).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("ConfigError:"), "{err}");

    let out = Process::new(exe).current_dir(tmp.path()).args(["mpc", "name=x"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("MissingInput:"));

    let out = Process::new(exe).current_dir(tmp.path()).args(["sweep-theorem", "name=ok", "sweep_draws=6"]).output().unwrap();
    assert!(out.status.success());
    assert!(tmp.path().join("runs/ok/0/sweep.csv").exists());
}

#[test]
fn config_text_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small(tmp.path(), "heatmap_goal=2,3\nteleport_aware=false\nwindows_per_traj=all");
    let back = RunConfig::parse(&cfg.to_text(), &[]).unwrap();
    assert_eq!(back.to_text(), cfg.to_text());
    assert_eq!(back.hash(), cfg.hash());
    assert_eq!(back.train.windows_per_traj, None);
}
