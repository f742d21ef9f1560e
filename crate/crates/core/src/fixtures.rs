//! Small reference systems and seeded random generators for tests and demos.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::websystem::{CentralBlock, ChannelSpec, WebSystem};

/// One channel `(a, b)` with `𝔟(0) = b0`, attached to a 1×1 center `[c]`.
pub fn single_channel(c: f64, a: f64, b: f64, b0: f64) -> WebSystem {
    WebSystem::new(
        CentralBlock {
            matrix: DMatrix::from_element(1, 1, c),
            attachments: vec![0],
        },
        vec![ChannelSpec::free("s", a, b, b0)],
    )
    .expect("valid fixture")
}

/// Two-vertex center `[[2.5, -1], [-1, 2.5]]`, channels `(2, 1)` and `(3, 1)`.
pub fn f1() -> WebSystem {
    two_vertex(2.5, -1.0, 2.5)
}

/// Same channels as [`f1`] with an arbitrary symmetric 2×2 center.
pub fn two_vertex(d0: f64, off: f64, d1: f64) -> WebSystem {
    WebSystem::new(
        CentralBlock {
            matrix: DMatrix::from_row_slice(2, 2, &[d0, off, off, d1]),
            attachments: vec![0, 1],
        },
        vec![
            ChannelSpec::free("c1", 2.0, 1.0, 1.0),
            ChannelSpec::free("c2", 3.0, 1.0, 1.0),
        ],
    )
    .expect("valid fixture")
}

/// Decoupled center `diag(4, 4)` with channels `(2, 1)`, `(3, 1)`: the first
/// channel carries a level at `λ = 4.5` embedded in the second band.
pub fn embedded() -> WebSystem {
    two_vertex(4.0, 0.0, 4.0)
}

/// Random compactly supported channel with `K₀ ≤ k0_max` and perturbations
/// bounded by `b/2`.
pub fn random_channel(seed: u64, k0_max: usize) -> ChannelSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_channel_with(&mut rng, "r", k0_max, (1.5, 3.0))
}

fn random_channel_with(rng: &mut ChaCha8Rng, id: &str, k0_max: usize, a_range: (f64, f64)) -> ChannelSpec {
    let a = rng.gen_range(a_range.0..a_range.1);
    let b = rng.gen_range(0.7..1.3);
    let b0 = rng.gen_range(0.6..1.4);
    let k0 = rng.gen_range(0..=k0_max);
    let diag = (0..k0).map(|_| a + rng.gen_range(-0.5..0.5) * b).collect();
    let hop = (0..k0).map(|_| b + rng.gen_range(-0.5..0.5) * b).collect();
    ChannelSpec::new(id, a, b, b0, diag, hop).expect("random channel is valid")
}

/// Random web with `channels` channels, `K₀ ≤ k0_max` each, and a center of
/// `channels + 1` vertices. Bands always overlap.
pub fn random_system(seed: u64, channels: usize, k0_max: usize) -> WebSystem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0000);
    let m = channels + 1;
    let mut matrix = DMatrix::zeros(m, m);
    for i in 0..m {
        matrix[(i, i)] = rng.gen_range(1.5..4.0);
        for j in (i + 1)..m {
            let v = rng.gen_range(-1.0..1.0);
            matrix[(i, j)] = v;
            matrix[(j, i)] = v;
        }
    }
    let chans = (0..channels)
        .map(|c| random_channel_with(&mut rng, &format!("ch{c}"), k0_max, (1.5, 3.0)))
        .collect();
    WebSystem::new(
        CentralBlock {
            matrix,
            attachments: (0..channels).collect(),
        },
        chans,
    )
    .expect("random system is valid")
}

/// [`f1`] channels with center `[[4, -1], [-1, 4]]`: exactly one level, at
/// `λ ≈ 5.43` above the band union.
pub fn f2() -> WebSystem {
    two_vertex(4.0, -1.0, 4.0)
}
