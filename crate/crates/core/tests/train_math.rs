use plm_core::tensor::Rng;
use plm_core::train::{
    aries_loss, cosine_lr, dpo_loss, grad_check, implicit_reward_accuracy, refine_loss, wsdc_lr, FinalCosine,
    LossParams, PreferenceBatch, PreferenceExample, RefineContext, WsdcSchedule,
};

fn logp(rng: &mut Rng) -> f64 {
    -0.1 - 4.0 * rng.uniform()
}

fn context(rng: &mut Rng) -> RefineContext {
    RefineContext {
        policy_chosen: logp(rng),
        policy_rejected: logp(rng),
        ref_chosen: logp(rng),
        ref_rejected: logp(rng),
    }
}

fn random_batch(rng: &mut Rng, n: usize) -> PreferenceBatch {
    PreferenceBatch::new(
        (0..n)
            .map(|_| PreferenceExample {
                policy_chosen: logp(rng),
                policy_rejected: logp(rng),
                ref_chosen: logp(rng),
                ref_rejected: logp(rng),
                refine_after_rejected: Some(context(rng)),
                refine_after_chosen: Some(context(rng)),
            })
            .collect(),
    )
}

#[test]
fn schedule_boundaries() {
    let s = WsdcSchedule::with_total(20_000);
    let w = s.warmup_steps();
    assert_eq!(wsdc_lr(w, &s).unwrap(), 3e-4);
    assert_eq!(wsdc_lr(s.decay_end_step, &s).unwrap(), 3e-5);
    assert_eq!(wsdc_lr(0, &s).unwrap(), 0.0);
    for step in [w, w + 1, s.stable_end_step / 2, s.stable_end_step] {
        assert_eq!(wsdc_lr(step, &s).unwrap(), 3e-4);
    }
    // continuity at warmup/stable and stable/decay
    let eps = 3e-4 / w as f64 + 1e-15;
    assert!((wsdc_lr(w - 1, &s).unwrap() - 3e-4).abs() <= eps);
    let slope = (3e-4 - 3e-5) / (s.decay_end_step - s.stable_end_step) as f64;
    assert!((wsdc_lr(s.stable_end_step + 1, &s).unwrap() - 3e-4).abs() <= slope + 1e-15);
    // decay/constant is continuous with the defaults
    assert_eq!(wsdc_lr(s.decay_end_step + 1, &s).unwrap(), 3e-5);
    // monotone non-increasing after warmup
    let mut last = f64::INFINITY;
    for step in (w..=s.total_steps).step_by(97) {
        let lr = wsdc_lr(step, &s).unwrap();
        assert!(lr <= last);
        last = lr;
    }
}

#[test]
fn schedule_validation() {
    let mut s = WsdcSchedule::with_total(1000);
    s.warmup_fraction = 0.0;
    assert!(wsdc_lr(0, &s).is_err());
    let mut s = WsdcSchedule::with_total(1000);
    s.decay_end_step = s.stable_end_step;
    assert!(wsdc_lr(0, &s).is_err());
    let mut s = WsdcSchedule::with_total(1000);
    s.final_cosine = Some(FinalCosine {
        start_step: 10,
        end_lr: 0.0,
    });
    assert!(wsdc_lr(0, &s).is_err());
    assert!(cosine_lr(11, 1.0, 0.0, 10).is_err());
}

#[test]
fn cosine_values() {
    assert_eq!(cosine_lr(0, 2e-5, 0.0, 1000).unwrap(), 2e-5);
    assert_eq!(cosine_lr(1000, 2e-5, 1e-6, 1000).unwrap(), 1e-6);
    assert!((cosine_lr(500, 2e-5, 1e-6, 1000).unwrap() - (2e-5 + 1e-6) / 2.0).abs() < 1e-12);
}

#[test]
fn reference_policy_losses() {
    let batch = PreferenceBatch::new(vec![PreferenceExample::neutral(-2.0, -3.0); 4]);
    assert!((dpo_loss(&batch, 0.1).unwrap().loss - std::f64::consts::LN_2).abs() < 1e-12);
    assert_eq!(refine_loss(&batch, 0.01).unwrap().loss, 0.5);
    let aries = aries_loss(&batch, &LossParams::default()).unwrap().loss;
    assert!((aries - 0.538_629).abs() < 1e-6);
    assert!((aries - (0.2 * std::f64::consts::LN_2 + 0.4)).abs() < 1e-15);
}

#[test]
fn aries_endpoints_and_affinity() {
    let batch = random_batch(&mut Rng::new(1), 6);
    let at = |alpha| {
        aries_loss(
            &batch,
            &LossParams {
                alpha,
                ..LossParams::default()
            },
        )
        .unwrap()
    };
    assert_eq!(at(0.0), dpo_loss(&batch, 0.1).unwrap());
    assert_eq!(at(1.0), refine_loss(&batch, 0.01).unwrap());
    let (a, b, c) = (at(0.2).loss, at(0.5).loss, at(0.8).loss);
    assert!(((b - a) - (c - b)).abs() < 1e-12);
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = Rng::new(2);
    for _ in 0..20 {
        let n = 1 + rng.below(6) as usize;
        let batch = random_batch(&mut rng, n);
        let x = batch.policy_vector();
        let check = |f: &dyn Fn(&PreferenceBatch) -> f64, grad: Vec<f64>| {
            let err = grad_check(&|v: &[f64]| f(&batch.with_policy(v)), &grad, &x, 1e-5);
            assert!(err < 1e-4, "relative error {err}");
        };
        check(
            &|b| dpo_loss(b, 0.1).unwrap().loss,
            dpo_loss(&batch, 0.1).unwrap().flat_grad(),
        );
        check(
            &|b| refine_loss(b, 0.01).unwrap().loss,
            refine_loss(&batch, 0.01).unwrap().flat_grad(),
        );
        for alpha in [0.0, 0.5, 0.8, 1.0] {
            let p = LossParams {
                alpha,
                ..LossParams::default()
            };
            check(
                &|b| aries_loss(b, &p).unwrap().loss,
                aries_loss(&batch, &p).unwrap().flat_grad(),
            );
        }
    }
}

#[test]
fn dpo_is_invariant_to_shared_offsets() {
    let mut rng = Rng::new(3);
    let batch = random_batch(&mut rng, 5);
    let mut shifted = batch.clone();
    for e in &mut shifted.examples {
        let (a, b) = (rng.uniform(), rng.uniform());
        e.policy_chosen -= a;
        e.ref_chosen -= a;
        e.policy_rejected -= b;
        e.ref_rejected -= b;
    }
    let l0 = dpo_loss(&batch, 0.1).unwrap().loss;
    let l1 = dpo_loss(&shifted, 0.1).unwrap().loss;
    assert!((l0 - l1).abs() < 1e-12);
}

#[test]
fn accuracy_counts() {
    let mk = |w: f64, l: f64| PreferenceExample {
        policy_chosen: w,
        policy_rejected: l,
        ref_chosen: -1.0,
        ref_rejected: -1.0,
        refine_after_rejected: None,
        refine_after_chosen: None,
    };
    let mixed = PreferenceBatch::new(vec![mk(-0.5, -2.0), mk(-0.4, -1.0), mk(-0.9, -3.0), mk(-2.0, -0.5)]);
    assert_eq!(implicit_reward_accuracy(&mixed, 0.1).unwrap(), 0.75);
    let all = PreferenceBatch::new(vec![mk(-0.5, -2.0); 3]);
    assert_eq!(implicit_reward_accuracy(&all, 0.1).unwrap(), 1.0);

    let mut rng = Rng::new(4);
    for _ in 0..10 {
        let b = random_batch(&mut rng, 9);
        let a = implicit_reward_accuracy(&b, 0.01).unwrap();
        for beta in [0.1, 1.0] {
            assert_eq!(implicit_reward_accuracy(&b, beta).unwrap(), a);
        }
    }
    assert!(implicit_reward_accuracy(&mixed, 0.0).is_err());
}
