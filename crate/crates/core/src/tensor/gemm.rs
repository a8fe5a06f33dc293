//! Safe wrappers over the `matrixmultiply` kernels for row-major operands.

macro_rules! gemm_impl {
    ($name:ident, $t:ty, $kernel:path) => {
        #[allow(clippy::too_many_arguments)]
        pub(crate) fn $name(
            m: usize,
            k: usize,
            n: usize,
            a: &[$t],
            a_trans: bool,
            b: &[$t],
            b_trans: bool,
            beta: $t,
            c: &mut [$t],
        ) {
            assert_eq!(a.len(), m * k, "lhs size");
            assert_eq!(b.len(), k * n, "rhs size");
            assert_eq!(c.len(), m * n, "output size");
            if m == 0 || n == 0 {
                return;
            }
            // Row/column strides for the logical (untransposed) view.
            let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
            let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
            // SAFETY: the asserts above guarantee every strided access stays
            // inside the three slices.
            unsafe {
                $kernel(
                    m,
                    k,
                    n,
                    1.0,
                    a.as_ptr(),
                    rsa,
                    csa,
                    b.as_ptr(),
                    rsb,
                    csb,
                    beta,
                    c.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
        }
    };
}

gemm_impl!(sgemm, f32, matrixmultiply::sgemm);
gemm_impl!(dgemm, f64, matrixmultiply::dgemm);
