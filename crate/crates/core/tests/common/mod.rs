use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use spectral_flow::linalg::{eigh, CMatrix, SelfAdjointOp};

pub fn random_hermitian(n: usize, rng: &mut ChaCha8Rng, scale: f64) -> CMatrix {
    let z = DMatrix::from_fn(n, n, |_, _| {
        Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
    });
    (&z + z.adjoint()) * Complex64::from(scale)
}

/// Follows eigenvectors across a fine grid by maximal overlap and counts
/// each branch's sign changes.
pub fn tracked_crossings(a: &CMatrix, b: &CMatrix, steps: usize) -> (i64, usize) {
    let n = a.nrows();
    let at = |t: f64| eigh(&SelfAdjointOp::new(a + b * Complex64::from(t)).unwrap()).unwrap();
    let mut prev = at(0.0);
    let mut value = 0i64;
    let mut count = 0usize;
    for s in 1..=steps {
        let cur = at(s as f64 / steps as f64);
        let overlap = prev.eigenvectors.adjoint() * &cur.eigenvectors;
        let mut taken = vec![false; n];
        for i in 0..n {
            let j = (0..n)
                .filter(|&j| !taken[j])
                .max_by(|&x, &y| overlap[(i, x)].norm().total_cmp(&overlap[(i, y)].norm()))
                .unwrap();
            taken[j] = true;
            let (l0, l1) = (prev.eigenvalues[i], cur.eigenvalues[j]);
            if (l0 >= 0.0) != (l1 >= 0.0) {
                value += if l1 >= 0.0 { 1 } else { -1 };
                count += 1;
            }
        }
        prev = cur;
    }
    (value, count)
}
