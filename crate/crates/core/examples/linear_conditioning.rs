//! Conditioning of the planning problem for nearly-identity linear dynamics:
//! one analyzed system, the cosine proxy, and a random sweep.

use straightlab::linalg::Matrix;
use straightlab::linear::{analyze, constant_speed_actions, cosine_proxy_check, rotation, sweep_theorem, LinearSystem, SweepConfig};

fn main() -> straightlab::Result<()> {
    for theta in [0.05, 0.2, 0.6] {
        let sys = LinearSystem::new(rotation(theta), Matrix::identity(2), 10, vec![1.0, 0.0])?;
        let r = analyze(&sys)?;
        println!(
            "rotation {theta:<4}: eps {:.4}  kappa_eff {:.3}  eps bound {:.3}  exp bound {:?}",
            r.eps,
            r.kappa_eff,
            r.bound_eps.unwrap_or(f64::NAN),
            r.bound_exp
        );
        let actions = constant_speed_actions(&sys, 10)?;
        let p = cosine_proxy_check(&sys, &actions)?;
        println!("  proxy: mean cosine {:.5}, violations {}, constant speed {}", p.mean_cosine, p.violations(), p.constant_speed);
    }

    let cfg = SweepConfig { draws: 300, ..SweepConfig::default() };
    let draws = sweep_theorem(&cfg)?;
    let held = draws.iter().filter(|d| d.report.all_hold()).count();
    let worst = draws.iter().map(|d| d.report.kappa_eff / d.report.bound_eps.unwrap_or(f64::INFINITY)).fold(0.0, f64::max);
    println!("\nsweep: {held}/{} draws satisfy every bound; tightest kappa_eff / eps bound = {worst:.3}", draws.len());
    Ok(())
}
