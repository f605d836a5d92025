// One-off robustness sweep (not part of the test suite): checks that the
// support iteration freezes bitwise for full-support instances across a
// wide random family.
use drsplit::conic::{SubspaceBasis, SupportIteration};
use drsplit::diagnostics::support_partition_oracle;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() {
    let mut tested = 0usize;
    let mut max_freeze_iter = 0usize;
    for n in 2..=12usize {
        for seed in 0..400u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(777_000 + n as u64 * 10_000 + seed);
            let r = rng.random_range(1..=n);
            let basis = SubspaceBasis::new(&DMatrix::from_fn(n, r, |_, _| {
                rng.sample::<f64, _>(StandardNormal)
            }));
            let part = support_partition_oracle(&basis).expect("oracle");
            if part.supp_l.len() != n && part.supp_lperp.len() != n {
                continue;
            }
            tested += 1;
            let it = SupportIteration::new(&basis);
            let mut w = DVector::from_element(n, 1.0);
            let mut frozen_at = None;
            for k in 1..=200_000usize {
                let (_, _, next) = it.step(&w);
                let eq = next
                    .iter()
                    .zip(w.iter())
                    .all(|(a, b)| a.to_bits() == b.to_bits());
                w = next;
                if eq {
                    frozen_at = Some(k);
                    break;
                }
            }
            match frozen_at {
                Some(k) => {
                    max_freeze_iter = max_freeze_iter.max(k);
                    for _ in 0..20 {
                        let (_, _, next) = it.step(&w);
                        assert!(
                            next.iter()
                                .zip(w.iter())
                                .all(|(a, b)| a.to_bits() == b.to_bits()),
                            "unfroze: n={n} seed={seed}"
                        );
                        w = next;
                    }
                }
                None => panic!("never froze: n={n} seed={seed}"),
            }
        }
    }
    println!("full-support instances tested: {tested}, worst freeze iteration: {max_freeze_iter}");
}
