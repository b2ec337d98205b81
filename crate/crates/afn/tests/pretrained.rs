//! Checks against the pretrained checkpoint; run with
//! `AFN_MODEL=... AFN_VOCAB=... AFN_FIXTURES=... cargo test -p afn --test pretrained -- --ignored`.

mod support;

use support::real::{self, RealEnv};

fn env() -> RealEnv {
    RealEnv::from_env().unwrap_or_else(|missing| panic!("{missing}"))
}

#[test]
#[ignore = "needs the pretrained checkpoint"]
fn golden_fixtures() {
    println!("{}", real::golden(&env()).unwrap());
}

#[test]
#[ignore = "needs the pretrained checkpoint"]
fn rank_order() {
    println!("{}", real::rank_order(&env()).unwrap());
}

#[test]
#[ignore = "needs the pretrained checkpoint"]
fn prompt_drift() {
    println!("{}", real::prompt_drift(&env()).unwrap());
}
