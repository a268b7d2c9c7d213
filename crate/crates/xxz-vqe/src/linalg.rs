//! Small shared numeric kernels: closed-form two-site gates, truncated SVD
//! and thin QR wrappers used by the MPS backend.

use crate::C64;
use faer::Mat;
use nalgebra::Matrix4;

pub(crate) type M4 = Matrix4<C64>;

const ZERO: C64 = C64::new(0.0, 0.0);

/// Bond Hamiltonian `jx XX + jy YY + jz ZZ` as a dense 4x4 in the
/// computational basis |00>,|01>,|10>,|11>.
pub(crate) fn xxz_bond_matrix(jx: f64, jy: f64, jz: f64) -> M4 {
    let re = |x: f64| C64::new(x, 0.0);
    M4::from_row_slice(&[
        re(jz),
        ZERO,
        ZERO,
        re(jx - jy),
        ZERO,
        re(-jz),
        re(jx + jy),
        ZERO,
        ZERO,
        re(jx + jy),
        re(-jz),
        ZERO,
        re(jx - jy),
        ZERO,
        ZERO,
        re(jz),
    ])
}

/// `exp(-i (tx/2) XX - i (ty/2) YY - i (tz/2) ZZ)`.
///
/// XX, YY and ZZ commute, so the exponential splits into two 2x2 blocks:
/// the {|00>,|11>} block sees `(tx-ty)/2` off-diagonal and `tz/2` diagonal,
/// the {|01>,|10>} block sees `(tx+ty)/2` and `-tz/2`.
pub(crate) fn rxyz_unitary(tx: f64, ty: f64, tz: f64) -> M4 {
    let a_out = (tx - ty) / 2.0;
    let a_in = (tx + ty) / 2.0;
    let pz = C64::from_polar(1.0, -tz / 2.0);
    let mz = C64::from_polar(1.0, tz / 2.0);
    let d_out = pz * C64::new(a_out.cos(), 0.0);
    let o_out = pz * C64::new(0.0, -a_out.sin());
    let d_in = mz * C64::new(a_in.cos(), 0.0);
    let o_in = mz * C64::new(0.0, -a_in.sin());
    M4::from_row_slice(&[
        d_out, ZERO, ZERO, o_out, //
        ZERO, d_in, o_in, ZERO, //
        ZERO, o_in, d_in, ZERO, //
        o_out, ZERO, ZERO, d_out,
    ])
}

/// `exp(-dtau (jx XX + jy YY + jz ZZ))`, the imaginary-time bond gate.
/// Real symmetric; same block structure as [`rxyz_unitary`].
pub(crate) fn xxz_imaginary_gate(jx: f64, jy: f64, jz: f64, dtau: f64) -> M4 {
    let am = dtau * (jx - jy);
    let ap = dtau * (jx + jy);
    let ez_out = (-dtau * jz).exp();
    let ez_in = (dtau * jz).exp();
    let d_out = C64::new(ez_out * am.cosh(), 0.0);
    let o_out = C64::new(-ez_out * am.sinh(), 0.0);
    let d_in = C64::new(ez_in * ap.cosh(), 0.0);
    let o_in = C64::new(-ez_in * ap.sinh(), 0.0);
    M4::from_row_slice(&[
        d_out, ZERO, ZERO, o_out, //
        ZERO, d_in, o_in, ZERO, //
        ZERO, o_in, d_in, ZERO, //
        o_out, ZERO, ZERO, d_out,
    ])
}

/// SWAP on two qubits.
pub(crate) fn swap_gate() -> M4 {
    let one = C64::new(1.0, 0.0);
    let mut m = M4::zeros();
    m[(0, 0)] = one;
    m[(1, 2)] = one;
    m[(2, 1)] = one;
    m[(3, 3)] = one;
    m
}

pub(crate) struct TruncatedSvd {
    pub u: Mat<C64>,
    pub singular: Vec<f64>,
    /// `V^H`, already adjointed so that `a ~= u * diag(singular) * vh`.
    pub vh: Mat<C64>,
    /// Discarded weight: sum of dropped squared singular values divided by
    /// the total sum.
    pub discarded: f64,
}

/// Thin SVD followed by truncation to at most `chi_max` values and relative
/// squared-weight cutoff `cutoff`.
pub(crate) fn svd_truncate(a: &Mat<C64>, chi_max: usize, cutoff: f64) -> TruncatedSvd {
    let svd = a.thin_svd().expect("svd f64 cannot fail to converge here");
    let s = svd.S();
    let full = s.dim();
    let total: f64 = (0..full).map(|i| s[i].re * s[i].re).sum();
    let mut keep = full.min(chi_max.max(1));
    if total > 0.0 {
        // Drop trailing values whose cumulative squared weight is below cutoff.
        let mut tail = 0.0;
        let mut k = keep;
        while k > 1 {
            let w = s[k - 1].re * s[k - 1].re;
            if (tail + w) / total > cutoff {
                break;
            }
            tail += w;
            k -= 1;
        }
        keep = k;
    }
    let kept: f64 = (0..keep).map(|i| s[i].re * s[i].re).sum();
    let discarded = if total > 0.0 {
        ((total - kept) / total).max(0.0)
    } else {
        0.0
    };
    let u = svd.U().subcols(0, keep).to_owned();
    let v = svd.V().subcols(0, keep);
    let vh = v.adjoint().to_owned();
    let singular = (0..keep).map(|i| s[i].re).collect();
    TruncatedSvd {
        u,
        singular,
        vh,
        discarded,
    }
}

/// Thin QR: `a = q * r` with `q` having orthonormal columns.
pub(crate) fn qr_thin(a: &Mat<C64>) -> (Mat<C64>, Mat<C64>) {
    let qr = a.qr();
    (qr.compute_thin_Q(), qr.thin_R().to_owned())
}

/// Thin LQ: `a = l * q` with `q` having orthonormal rows.
pub(crate) fn lq_thin(a: &Mat<C64>) -> (Mat<C64>, Mat<C64>) {
    let (qt, rt) = qr_thin(&a.adjoint().to_owned());
    (rt.adjoint().to_owned(), qt.adjoint().to_owned())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat_approx_eq(a: &M4, b: &M4, tol: f64) -> bool {
        (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max) < tol
    }

    /// Independent oracle: scaling-and-squaring Taylor exponential of a 4x4.
    fn expm(h: &M4, scale: C64) -> M4 {
        let mut a = h * scale;
        let norm: f64 = a.iter().map(|z| z.norm()).sum();
        let squarings = norm.log2().ceil().max(0.0) as u32 + 4;
        a /= C64::new(2f64.powi(squarings as i32), 0.0);
        let mut result = M4::identity();
        let mut term = M4::identity();
        for k in 1..24 {
            term = term * a / C64::new(k as f64, 0.0);
            result += term;
        }
        for _ in 0..squarings {
            result = result * result;
        }
        result
    }

    #[test]
    fn rxyz_matches_matrix_exponential() {
        let cases = [
            (0.0, 0.0, 0.0),
            (0.43, 0.43, 0.43),
            (0.3, -0.7, 1.1),
            (2.0, 0.25, -0.4),
        ];
        for (tx, ty, tz) in cases {
            let h = xxz_bond_matrix(tx / 2.0, ty / 2.0, tz / 2.0);
            let expected = expm(&h, C64::new(0.0, -1.0));
            let got = rxyz_unitary(tx, ty, tz);
            assert!(
                mat_approx_eq(&got, &expected, 1e-12),
                "mismatch at ({tx},{ty},{tz})"
            );
        }
    }

    #[test]
    fn imaginary_gate_matches_matrix_exponential() {
        for (jx, jy, jz, dtau) in [(1.0, 1.0, 1.0, 0.1), (1.0, 1.0, -0.8, 0.05)] {
            let h = xxz_bond_matrix(jx, jy, jz);
            let expected = expm(&h, C64::new(-dtau, 0.0));
            let got = xxz_imaginary_gate(jx, jy, jz, dtau);
            assert!(mat_approx_eq(&got, &expected, 1e-12));
        }
    }

    #[test]
    fn svd_truncate_reconstructs_and_logs_weight() {
        let a = Mat::<C64>::from_fn(6, 5, |i, j| {
            C64::new((i as f64 * 0.3).sin(), (j as f64 + 1.0).recip())
        });
        let t = svd_truncate(&a, 16, 0.0);
        assert!(t.discarded.abs() < 1e-14);
        let mut recon = Mat::<C64>::zeros(6, 5);
        for i in 0..6 {
            for j in 0..5 {
                let mut acc = C64::new(0.0, 0.0);
                for k in 0..t.singular.len() {
                    acc += t.u[(i, k)] * C64::new(t.singular[k], 0.0) * t.vh[(k, j)];
                }
                recon[(i, j)] = acc;
            }
        }
        for i in 0..6 {
            for j in 0..5 {
                assert!((recon[(i, j)] - a[(i, j)]).norm() < 1e-12);
            }
        }
        // Hard cap to rank 1 discards weight on a generic matrix.
        let t1 = svd_truncate(&a, 1, 0.0);
        assert!(t1.discarded > 0.0);
        assert_eq!(t1.singular.len(), 1);
    }
}
