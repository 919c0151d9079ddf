//! Drives the command pipeline from code: a small configuration is parsed,
//! every stage is run, and the per-run manifest is printed.

use straightlab::cli::{run, Command, Manifest, RunConfig};

fn main() -> straightlab::Result<()> {
    let out = std::env::temp_dir().join("straightlab-pipeline");
    let text = format!(
        "out_dir={}\nname=demo\nenv=umaze\nseeds=0\nn_traj=40\ntraj_len=30\nepochs=2\nn_tasks=4\nsweep_draws=20\n",
        out.display()
    );
    let cfg = RunConfig::parse(&text, &[("lambda".into(), "0.1".into())])?;
    println!("config hash {}", cfg.hash());
    for cmd in Command::ALL {
        let written = run(cmd, &cfg)?;
        println!("{:<15} {} file(s)", cmd.name(), written.len());
    }
    let manifest = Manifest::read(&cfg.run_dir(0).join("manifest.txt"))?;
    for (file, (cmd, sha)) in &manifest.artifacts {
        println!("  {} {file} ({cmd})", &sha[..12]);
    }
    Ok(())
}
