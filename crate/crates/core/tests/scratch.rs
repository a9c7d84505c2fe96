use nfil_core::env::*;
use nfil_core::feedback::*;
use nfil_core::policy::GridSpec;

fn task_c() -> TaskSpec {
    TaskSpec::from_toml(&std::fs::read_to_string("/tmp/nfil_sweep/v5/C_s7/task.toml").unwrap()).unwrap()
}

#[test]
fn probe_ceiling() {
    let task = task_c();
    let mut cfg = FeedbackConfig::new(&task);
    cfg.grid = GridSpec::with_phase(40, task.bounds().to_vec(), vec![20, 20]).unwrap();
    cfg.demo_noise = 0.08;
    cfg.max_cycles = 5;
    for seed in [7u64, 101, 500] {
        for trial in 0..30u64 {
            let c = cfg.clone().with_seed(seed + trial);
            let hist = run_feedback(&c, &task).unwrap();
            let last = hist.last().unwrap();
            if hist.len() == 6 && !last.outcome.is_success() {
                let kinds: Vec<_> = hist.iter().map(|r| format!("{:?}", r.outcome.kind())).collect();
                let t = &last.trajectory;
                let ys: Vec<f64> = t.points().iter().step_by(5).map(|(_, p)| (p[1]*100.0).round()/100.0).collect();
                let xs: Vec<f64> = t.points().iter().step_by(5).map(|(_, p)| (p[0]*100.0).round()/100.0).collect();
                eprintln!("s{seed} t{trial}: {kinds:?} len {} x {xs:?} y {ys:?}", t.len());
            }
        }
    }
}
