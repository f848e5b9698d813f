// Temporary debugging probe; not part of the shipped surface.
use mvr_lab::config::RunConfig;
use mvr_lab::env::{cycler_stats, Env};
use mvr_lab::orchestrator::load_checkpoint;
use mvr_lab::types::{StateSequence, StateVec};
use std::path::Path;

fn main() {
    let dir = std::env::args().nth(1).expect("usage: scratch RUN_DIR [--quiet]");
    let quiet = std::env::args().nth(2).as_deref() == Some("--quiet");
    let cfg = RunConfig::from_file(Path::new(&format!("{dir}/config.resolved"))).unwrap();
    let ck = load_checkpoint(Path::new(&format!("{dir}/checkpoint.txt")), &cfg).unwrap();
    let mut env = Env::new(cfg.env.clone());
    let mut s = env.reset();
    let mut states: Vec<StateVec> = vec![s.clone()];
    for step in 0..cfg.env.horizon {
        let a = ck.agent.act(s.as_slice(), false, &mut rand::thread_rng());
        let tr = env.step(&a).unwrap();
        if !quiet && (step % 10 == 0 || step == cfg.env.horizon - 1) {
            println!(
                "step {step:3}  s {:?}  a [{:+.3}, {:+.3}]  r {:.3}",
                s.0.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
                a[0],
                a[1],
                tr.task_reward
            );
        }
        s = tr.next_state;
        states.push(s.clone());
    }
    if cfg.env.state_dim() == 2 {
        let seq = StateSequence::new(states, 0, (0, cfg.env.horizon)).unwrap();
        let (err, inc) = cycler_stats(&cfg.env, &seq, cfg.env.cycler_eval_window).unwrap();
        println!("speed_err {err:.4}  phase_inc {:.4}", inc.abs());
    }
}
