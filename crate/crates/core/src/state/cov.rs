use nalgebra::DMatrix;

/// `(P + Pᵀ) / 2`.
pub fn symmetrize(mut p: DMatrix<f64>) -> DMatrix<f64> {
    let n = p.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (p[(i, j)] + p[(j, i)]);
            p[(i, j)] = m;
            p[(j, i)] = m;
        }
    }
    p
}

/// Inserts `k` new variables at index `at`. `cross` is `k×n` (covariance of
/// the new variables with the existing ones), `corner` is `k×k`.
pub fn insert_block(p: &DMatrix<f64>, at: usize, cross: &DMatrix<f64>, corner: &DMatrix<f64>) -> DMatrix<f64> {
    let n = p.nrows();
    let k = corner.nrows();
    assert!(at <= n);
    assert_eq!(cross.shape(), (k, n));
    let map = |i: usize| if i < at { i } else { i + k };
    let mut out = DMatrix::zeros(n + k, n + k);
    for j in 0..n {
        let mj = map(j);
        for i in 0..n {
            out[(map(i), mj)] = p[(i, j)];
        }
        for r in 0..k {
            out[(at + r, mj)] = cross[(r, j)];
            out[(mj, at + r)] = cross[(r, j)];
        }
    }
    out.view_mut((at, at), (k, k)).copy_from(corner);
    out
}

/// Deletes rows and columns `at..at+k`.
pub fn remove_block(p: &DMatrix<f64>, at: usize, k: usize) -> DMatrix<f64> {
    p.clone().remove_rows(at, k).remove_columns(at, k)
}
