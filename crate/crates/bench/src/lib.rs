//! Criterion benchmarks live in `benches/`.

/// Default generator params at `seed`.
pub fn params(seed: u64) -> cptsketch::GenParams {
    cptsketch::GenParams {
        seed,
        ..cptsketch::GenParams::default()
    }
}
