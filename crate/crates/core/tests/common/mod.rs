//! Seeded random balanced urns for property and acceptance tests.

use nalgebra::DVector;
use polya::spectral::{dominant_eigendata, spectral_decomposition, SpectralOptions};
use polya::urn_model::{intensity_matrix, Atom, ReplacementDistribution, UrnSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// A nonnegative integer vector with entries summing to `b`: with unit
/// activities, such replacement rows keep the urn balanced and tenable.
fn composition(rng: &mut ChaCha12Rng, q: usize, b: usize) -> DVector<f64> {
    let mut v = DVector::zeros(q);
    for _ in 0..b {
        v[rng.gen_range(0..q)] += 1.0;
    }
    v
}

/// Deterministic random balanced urn with unit activities, q in 2..6 and a
/// simple dominant eigenvalue (re-rolled until classification applies).
pub fn random_balanced_urn(seed: u64) -> UrnSpec {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    for _ in 0..200 {
        let q = rng.gen_range(2..6usize);
        let b = rng.gen_range(1..=3usize);
        let mut replacements = Vec::with_capacity(q);
        for _ in 0..q {
            let atoms = if rng.gen_bool(0.5) {
                vec![Atom {
                    p: 1.0,
                    v: composition(&mut rng, q, b),
                }]
            } else {
                let p = rng.gen_range(1..8) as f64 / 8.0;
                vec![
                    Atom {
                        p,
                        v: composition(&mut rng, q, b),
                    },
                    Atom {
                        p: 1.0 - p,
                        v: composition(&mut rng, q, b),
                    },
                ]
            };
            replacements.push(Some(ReplacementDistribution { atoms }));
        }
        let initial = DVector::from_fn(q, |_, _| rng.gen_range(1..=3) as f64);
        let spec = UrnSpec {
            name: format!("random-{seed}"),
            q,
            activities: DVector::from_element(q, 1.0),
            replacements,
            initial,
            incomplete: false,
        };
        let Ok(a) = intensity_matrix(&spec) else {
            continue;
        };
        let Ok(decomp) = spectral_decomposition(&a, &SpectralOptions::default()) else {
            continue;
        };
        if dominant_eigendata(&spec, &decomp).is_ok() {
            return spec;
        }
    }
    panic!("no admissible urn for seed {seed} after 200 attempts");
}
