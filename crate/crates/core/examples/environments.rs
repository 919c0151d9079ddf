//! Steps the navigation environments, shows the teleport rule, and round-trips
//! a small offline dataset through its binary format.

use straightlab::env::{generate_dataset, Dataset, EnvState, Environment, NavEnv, Observation};

fn ascii_image(obs: &Observation) {
    let img = obs.as_slice();
    let side = 32;
    for r in (0..side).step_by(2) {
        let line: String = (0..side)
            .map(|c| {
                // channel 0 holds the walls, channel 1 the agent blob
                let (wall, agent) = (img[r * side + c], img[side * side + r * side + c]);
                if agent > 0.5 { '@' } else if wall > 0.5 { '#' } else { '.' }
            })
            .collect();
        println!("  {line}");
    }
}

fn main() -> straightlab::Result<()> {
    for name in ["wall", "umaze", "medium", "teleport"] {
        let env = NavEnv::named(name)?;
        println!("{name}: {}x{} cells, action limit {}", env.layout.height(), env.layout.width(), env.action_limit());
    }

    let env = NavEnv::umaze();
    let start = EnvState::at(1.5, 1.5);
    let mut s = start;
    for _ in 0..8 {
        s = env.step(&s, &[1.0, 0.0]);
    }
    println!("\numaze after pushing right for 8 steps: {s:?}");
    ascii_image(&env.observe(&s));

    let tele = NavEnv::teleport();
    let near = EnvState { position: [tele.layout.right_interior_x() - 0.02, 1.4], velocity: [0.8, 0.1] };
    let after = tele.step(&near, &[1.0, 0.0]);
    println!("\nteleport: x {:.3} -> {:.3}, vx {:.3} -> {:.3}", near.position[0], after.position[0], near.velocity[0], after.velocity[0]);

    let data = generate_dataset(&NavEnv::wall(), 8, 20, 3)?;
    let path = std::env::temp_dir().join("straightlab-example.stpl");
    data.save(&path, false)?;
    let back = Dataset::load(&path)?;
    println!("\nwall dataset: {} trajectories of {} steps, replay ok {}", back.len(), back.traj_len(), back.trajectories.iter().all(|t| t.replays(&back.env)));
    std::fs::remove_file(path).ok();
    Ok(())
}
