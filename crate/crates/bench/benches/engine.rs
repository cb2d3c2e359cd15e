use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use mirrorvp::dynamics::hkb_step;
use mirrorvp::metrics::relative_phase;
use mirrorvp::optimal::{opc_step, IntervalProblem, OptimalWeights};
use mirrorvp::session::{run_session, Engine, Mode, PartnerSource, SessionConfig, SyntheticSpec};
use mirrorvp::signature::{default_velocity_pdf, emd};
use mirrorvp::{HkbParams, HkbState};

fn plant(c: &mut Criterion) {
    let p = HkbParams::adaptive_default();
    c.bench_function("hkb_step", |b| b.iter(|| hkb_step(black_box(HkbState::new(0.1, 0.2)), 0.3, &p, 0.1)));
}

fn controllers(c: &mut Criterion) {
    let prob = IntervalProblem {
        state: HkbState::new(0.1, -0.2),
        r_p_hat: 0.15,
        r_sigma_k: 0.3,
        r_sigma_k1: 0.25,
        weights: OptimalWeights::new(0.9, 0.1, 1e-4).unwrap(),
        period: 0.03,
    };
    let p = HkbParams::optimal_default();
    c.bench_function("opc_step", |b| b.iter(|| opc_step(black_box(&prob), &p)));
    for mode in [Mode::Afc, Mode::OpcFollower, Mode::Rpc] {
        let cfg = SessionConfig::new(mode, 1.0, PartnerSource::Live);
        let mut engine = Engine::new(&cfg).unwrap();
        let mut x = 0.0;
        c.bench_function(&format!("tick {mode}"), |b| {
            b.iter(|| {
                x = (x + 0.001) % 0.4;
                engine.tick(Some(x)).unwrap()
            })
        });
    }
    let session = SessionConfig::new(Mode::OpcFollower, 60.0, PartnerSource::Synthetic(SyntheticSpec::default()));
    c.bench_function("60 s opc-follower session", |b| b.iter(|| run_session(&session).unwrap()));
}

fn analysis(c: &mut Criterion) {
    let n = 2000;
    let x1: Vec<f64> = (0..n).map(|k| (k as f64 * 0.047).sin()).collect();
    let x2: Vec<f64> = (0..n).map(|k| (k as f64 * 0.047 - 0.6).sin()).collect();
    let t1 = mirrorvp::Trace::from_positions(0.03, x1.clone(), None).unwrap();
    let t2 = mirrorvp::Trace::from_positions(0.03, x2.clone(), None).unwrap();
    c.bench_function("relative_phase 2000", |b| b.iter(|| relative_phase(&t1, &t2).unwrap()));
    let (s1, s2) = (default_velocity_pdf(&x1).unwrap(), default_velocity_pdf(&x2).unwrap());
    c.bench_function("emd", |b| b.iter(|| emd(black_box(&s1), &s2).unwrap()));
}

criterion_group!(benches, plant, controllers, analysis);
criterion_main!(benches);
