//! Pinned generator output. The streams come from ChaCha8 and must not move
//! across platforms or releases; regenerate with `UPDATE_GOLDEN=1` only when
//! a change to the generator is intended.

use std::path::Path;

use cptsketch::generator::{generate_batch, GenParams};
use cptsketch::sketch::{generate_bpts, RuleRenderer};

fn check(name: &str, actual: String) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, &actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path).unwrap();
    assert_eq!(actual, expected, "{} drifted", path.display());
}

#[test]
fn default_batch_seed_42() {
    let params = GenParams {
        seed: 42,
        ..GenParams::default()
    };
    let out: String = generate_batch(&params, 12)
        .unwrap()
        .map(|item| format!("{:016x} {}\n", item.seed, item.tree))
        .collect();
    check("batch_seed42.txt", out);
}

#[test]
fn rule_sketches_seed_42() {
    let params = GenParams {
        seed: 42,
        ..GenParams::default()
    };
    let out: String = generate_batch(&params, 4)
        .unwrap()
        .map(|item| generate_bpts(&item.tree, &RuleRenderer).unwrap().text + "\n")
        .collect();
    check("rule_seed42.txt", out);
}
