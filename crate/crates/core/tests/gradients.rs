mod common;

use common::grad::{actor_case, critic_case, dense_case, lstm_case};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const REPS: u64 = 20;
const TOL: f64 = 1e-4;

fn check(name: &str, case: impl Fn(&mut ChaCha8Rng) -> f64) {
    for rep in 0..REPS {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + rep);
        let err = case(&mut rng);
        assert!(err < TOL, "{name} repetition {rep}: relative error {err:e}");
    }
}

#[test]
fn dense_gradients() {
    check("dense", dense_case);
}

#[test]
fn lstm_gradients() {
    check("lstm", lstm_case);
}

#[test]
fn actor_gradients() {
    check("actor", actor_case);
}

#[test]
fn critic_gradients() {
    check("critic", critic_case);
}
