use nalgebra::{DMatrix, DVector};

/// Householder triangularization of the first `k` columns of `a`, applied
/// to every column. Afterwards rows `k..` of those columns are zero and the
/// remaining columns hold `Qᵀ` times their original content.
pub fn householder_reduce(a: &mut DMatrix<f64>, k: usize) {
    let m = a.nrows();
    let n = a.ncols();
    for j in 0..k.min(m) {
        let x = a.view((j, j), (m - j, 1));
        let norm = x.norm();
        if norm == 0.0 {
            continue;
        }
        let alpha = if x[0] > 0.0 { -norm } else { norm };
        let mut v: DVector<f64> = x.column(0).into_owned();
        v[0] -= alpha;
        let vnorm2 = v.norm_squared();
        if vnorm2 == 0.0 {
            continue;
        }
        for c in j..n {
            let mut col = a.column_mut(c);
            let mut col = col.rows_mut(j, m - j);
            let s = 2.0 * v.dot(&col) / vnorm2;
            col.axpy(-s, &v, 1.0);
        }
        for i in j + 1..m {
            a[(i, j)] = 0.0;
        }
    }
}

/// Orthonormal basis of the column space of `a` (left singular vectors above
/// a relative tolerance).
pub fn column_basis(a: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let svd = a.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let smax = svd.singular_values.max();
    let cols: Vec<usize> = (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] > rel_tol * smax && smax > 0.0).collect();
    DMatrix::from_fn(a.nrows(), cols.len(), |i, j| u[(i, cols[j])])
}

/// Projects `rhs` onto the left nullspace of `a`: returns `Nᵀ rhs` where the
/// columns of `N` are an orthonormal basis of the complement of `range(a)`.
pub fn left_nullspace_project(a: &DMatrix<f64>, rhs: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    assert_eq!(a.nrows(), rhs.nrows());
    let basis = column_basis(a, rel_tol);
    let r = basis.ncols();
    let mut work = DMatrix::zeros(a.nrows(), r + rhs.ncols());
    work.columns_mut(0, r).copy_from(&basis);
    work.columns_mut(r, rhs.ncols()).copy_from(rhs);
    householder_reduce(&mut work, r);
    work.view((r, r), (a.nrows() - r, rhs.ncols())).into_owned()
}
