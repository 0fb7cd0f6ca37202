//! Fourier machinery: dense DFT/IDFT on time axes, a radix-2 FFT fast path,
//! the normalized graph Laplacian, a cyclic Jacobi eigensolver, the
//! eigendecomposition adjoint, and the graph Fourier transform pair.
//!
//! The DFT uses the unnormalized forward / `1/L` inverse convention and is
//! realized as two dense matrix products against fixed cosine/sine matrices,
//! so the autodiff tape covers it natively. Windows are short at the scales
//! this crate targets, which makes the O(L^2) cost irrelevant; the FFT stays
//! an untaped utility.

use std::f64::consts::TAU;

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::tensor::{matmul_raw, Tensor};

/// Real/imaginary pair with matching shapes.
#[derive(Clone, Debug)]
pub struct ComplexMatrix {
    pub re: Tensor,
    pub im: Tensor,
}

impl ComplexMatrix {
    pub fn new(re: Tensor, im: Tensor) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(Error::dim(format!(
                "complex parts must share a shape, got {:?} and {:?}",
                re.shape(),
                im.shape()
            )));
        }
        Ok(ComplexMatrix { re, im })
    }
}

/// Eigenvector matrix, ascending eigenvalues and the Laplacian they came from.
#[derive(Clone, Debug)]
pub struct SpectralBasis {
    /// Columns are eigenvectors.
    pub vectors: Tensor,
    /// Ascending.
    pub values: Tensor,
    pub source_laplacian: Tensor,
}

impl SpectralBasis {
    /// Identity basis with a zero spectrum; the graph transform becomes a no-op.
    pub fn identity(n: usize) -> Self {
        SpectralBasis {
            vectors: Tensor::identity(n),
            values: Tensor::zeros(&[n]),
            source_laplacian: Tensor::zeros(&[n, n]),
        }
    }

    /// Max deviation of `U^T U` from the identity.
    pub fn orthonormality_residual(&self) -> f64 {
        let n = self.values.numel();
        let gram = matmul_raw(&self.vectors.transposed().unwrap(), &self.vectors).unwrap();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((gram.at2(i, j) - want).abs());
            }
        }
        worst
    }

    /// Max-entry reconstruction error of `L - U diag(lambda) U^T`.
    pub fn reconstruction_residual(&self) -> f64 {
        let n = self.values.numel();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..n {
                    acc += self.vectors.at2(i, p) * self.values.data()[p] * self.vectors.at2(j, p);
                }
                worst = worst.max((self.source_laplacian.at2(i, j) - acc).abs());
            }
        }
        worst
    }
}

/// `C[t,k] = cos(2 pi k t / len)`, so `x * C` gives the real DFT part.
pub fn dft_cos_matrix(len: usize) -> Tensor {
    let mut m = Tensor::zeros(&[len, len]);
    for t in 0..len {
        for k in 0..len {
            m.set2(t, k, (TAU * (k * t) as f64 / len as f64).cos());
        }
    }
    m
}

/// `S[t,k] = -sin(2 pi k t / len)`, so `x * S` gives the imaginary DFT part.
pub fn dft_sin_matrix(len: usize) -> Tensor {
    let mut m = Tensor::zeros(&[len, len]);
    for t in 0..len {
        for k in 0..len {
            m.set2(t, k, -(TAU * (k * t) as f64 / len as f64).sin());
        }
    }
    m
}

/// Inverse transform matrices: `re * A + im * B` recovers the real signal.
pub fn idft_cos_matrix(len: usize) -> Tensor {
    let mut m = Tensor::zeros(&[len, len]);
    for k in 0..len {
        for t in 0..len {
            m.set2(k, t, (TAU * (k * t) as f64 / len as f64).cos() / len as f64);
        }
    }
    m
}

pub fn idft_sin_matrix(len: usize) -> Tensor {
    let mut m = Tensor::zeros(&[len, len]);
    for k in 0..len {
        for t in 0..len {
            m.set2(k, t, -(TAU * (k * t) as f64 / len as f64).sin() / len as f64);
        }
    }
    m
}

fn as_matrix_rows(x: &Tensor) -> (usize, usize) {
    let shape = x.shape();
    let len = *shape.last().expect("dft input needs at least one axis");
    let rows = x.numel() / len.max(1);
    (rows, len)
}

/// Unnormalized DFT along the last axis, recorded on the tape. The transform
/// is linear, so two dense products give exact gradients for free.
pub fn dft_dense(tape: &mut Tape, x: &Tensor) -> Result<ComplexMatrix> {
    let (rows, len) = as_matrix_rows(x);
    let flat = tape.reshape(x, &[rows, len])?;
    let cos = tape.leaf(dft_cos_matrix(len));
    let sin = tape.leaf(dft_sin_matrix(len));
    let re = tape.matmul(&flat, &cos)?;
    let im = tape.matmul(&flat, &sin)?;
    ComplexMatrix::new(tape.reshape(&re, x.shape())?, tape.reshape(&im, x.shape())?)
}

/// Inverse DFT along the last axis; returns the real part only. After the
/// real and imaginary halves are filtered independently the spectrum is no
/// longer Hermitian, and the real part is the canonical projection back.
pub fn idft_dense(tape: &mut Tape, x: &ComplexMatrix) -> Result<Tensor> {
    if x.re.shape() != x.im.shape() {
        return Err(Error::dim(format!(
            "idft parts disagree: {:?} vs {:?}",
            x.re.shape(),
            x.im.shape()
        )));
    }
    let (rows, len) = as_matrix_rows(&x.re);
    let re = tape.reshape(&x.re, &[rows, len])?;
    let im = tape.reshape(&x.im, &[rows, len])?;
    let a = tape.leaf(idft_cos_matrix(len));
    let b = tape.leaf(idft_sin_matrix(len));
    let pa = tape.matmul(&re, &a)?;
    let pb = tape.matmul(&im, &b)?;
    let sum = tape.add(&pa, &pb)?;
    tape.reshape(&sum, x.re.shape())
}

/// Iterative radix-2 FFT along the last axis. Forward-only fast path for
/// inference-style work; never recorded on a tape.
pub fn fft_radix2(x: &Tensor) -> Result<ComplexMatrix> {
    let (rows, len) = as_matrix_rows(x);
    if len == 0 || !len.is_power_of_two() {
        return Err(Error::dim(format!(
            "radix-2 fft needs a power-of-two length, got {}",
            len
        )));
    }
    let mut re_out = vec![0.0; rows * len];
    let mut im_out = vec![0.0; rows * len];
    for r in 0..rows {
        let src = &x.data()[r * len..(r + 1) * len];
        let (re, im) = fft_row(src);
        re_out[r * len..(r + 1) * len].copy_from_slice(&re);
        im_out[r * len..(r + 1) * len].copy_from_slice(&im);
    }
    ComplexMatrix::new(
        Tensor::new(x.shape().to_vec(), re_out)?,
        Tensor::new(x.shape().to_vec(), im_out)?,
    )
}

fn fft_row(src: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = src.len();
    if n == 1 {
        return (vec![src[0]], vec![0.0]);
    }
    let mut re = vec![0.0; n];
    let mut im = vec![0.0; n];
    // bit-reversal permutation
    let bits = n.trailing_zeros();
    for (i, &v) in src.iter().enumerate() {
        let j = (i.reverse_bits() >> (usize::BITS - bits)) & (n - 1);
        re[j] = v;
    }
    let mut width = 2;
    while width <= n {
        let half = width / 2;
        let step = -TAU / width as f64;
        for start in (0..n).step_by(width) {
            for k in 0..half {
                let angle = step * k as f64;
                let (wr, wi) = (angle.cos(), angle.sin());
                let (er, ei) = (re[start + k], im[start + k]);
                let (or, oi) = (re[start + k + half], im[start + k + half]);
                let tr = wr * or - wi * oi;
                let ti = wr * oi + wi * or;
                re[start + k] = er + tr;
                im[start + k] = ei + ti;
                re[start + k + half] = er - tr;
                im[start + k + half] = ei - ti;
            }
        }
        width *= 2;
    }
    (re, im)
}

/// `(W + W^T) / 2`, recorded on the tape.
pub fn symmetrize(tape: &mut Tape, w: &Tensor) -> Result<Tensor> {
    let (r, c) = w.dims2()?;
    if r != c {
        return Err(Error::dim(format!("symmetrize needs a square matrix, got {:?}", w.shape())));
    }
    let wt = tape.transpose(w)?;
    let sum = tape.add(w, &wt)?;
    tape.scale(&sum, 0.5)
}

fn check_nonnegative_square(w: &Tensor) -> Result<usize> {
    let (r, c) = w.dims2()?;
    if r != c {
        return Err(Error::dim(format!("adjacency must be square, got {:?}", w.shape())));
    }
    if let Some(v) = w.data().iter().find(|v| **v < 0.0) {
        return Err(Error::Domain(format!(
            "adjacency weights must be non-negative, found {}",
            v
        )));
    }
    Ok(r)
}

/// `L = I - D^{-1/2} W D^{-1/2}` with `D_ii = sum_j W_ij`, taped so gradients
/// flow back into the learned adjacency. Zero-degree rows use
/// `D^{-1/2}_ii = 0` instead of failing; softmax adjacencies never hit that
/// branch, but ablation graphs with isolated nodes may.
pub fn normalized_laplacian(tape: &mut Tape, w: &Tensor) -> Result<Tensor> {
    let n = check_nonnegative_square(w)?;
    let degrees = tape.row_sums(w)?;
    let inv_sqrt = tape.deg_inv_sqrt(&degrees)?;
    let inv_sqrt_t = tape.transpose(&inv_sqrt)?;
    let outer = tape.matmul(&inv_sqrt, &inv_sqrt_t)?;
    let scaled = tape.hadamard(w, &outer)?;
    let eye = tape.leaf(Tensor::identity(n));
    tape.sub(&eye, &scaled)
}

/// Untaped convenience wrapper around [`normalized_laplacian`].
pub fn normalized_laplacian_value(w: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let wl = tape.leaf(w.detached());
    Ok(normalized_laplacian(&mut tape, &wl)?.detached())
}

const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;
const SYMMETRY_TOL: f64 = 1e-10;

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Rotations run
/// until every off-diagonal entry is below 1e-12 or 100 sweeps pass.
/// Eigenvalues come back ascending with eigenvectors column-permuted to
/// match, and each eigenvector's largest-magnitude entry is made
/// non-negative so the basis is deterministic.
pub fn jacobi_eigh(l: &Tensor) -> Result<SpectralBasis> {
    let (r, c) = l.dims2()?;
    if r != c {
        return Err(Error::dim(format!("eigendecomposition needs a square matrix, got {:?}", l.shape())));
    }
    let n = r;
    for i in 0..n {
        for j in (i + 1)..n {
            if (l.at2(i, j) - l.at2(j, i)).abs() > SYMMETRY_TOL {
                return Err(Error::Domain(format!(
                    "matrix is asymmetric at ({}, {}): {} vs {}",
                    i,
                    j,
                    l.at2(i, j),
                    l.at2(j, i)
                )));
            }
        }
    }

    let mut a = l.detached();
    let mut u = Tensor::identity(n);
    let mut converged = n < 2;
    for _ in 0..JACOBI_MAX_SWEEPS {
        if off_diag_max(&a) < JACOBI_TOL {
            converged = true;
            break;
        }
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let apq = a.at2(p, q);
                // rotate every nonzero entry: skipping at the convergence
                // threshold parks the terminal residual right on it
                if apq == 0.0 {
                    continue;
                }
                // classic two-sided rotation annihilating a[p,q]
                let theta = 0.5 * (a.at2(q, q) - a.at2(p, p)) / apq;
                let t = {
                    let t = 1.0 / (theta.abs() + (1.0 + theta * theta).sqrt());
                    if theta < 0.0 {
                        -t
                    } else {
                        t
                    }
                };
                let cos = 1.0 / (1.0 + t * t).sqrt();
                let sin = t * cos;
                for k in 0..n {
                    let akp = a.at2(k, p);
                    let akq = a.at2(k, q);
                    a.set2(k, p, cos * akp - sin * akq);
                    a.set2(k, q, sin * akp + cos * akq);
                }
                for k in 0..n {
                    let apk = a.at2(p, k);
                    let aqk = a.at2(q, k);
                    a.set2(p, k, cos * apk - sin * aqk);
                    a.set2(q, k, sin * apk + cos * aqk);
                }
                for k in 0..n {
                    let ukp = u.at2(k, p);
                    let ukq = u.at2(k, q);
                    u.set2(k, p, cos * ukp - sin * ukq);
                    u.set2(k, q, sin * ukp + cos * ukq);
                }
            }
        }
    }
    if !converged && off_diag_max(&a) >= JACOBI_TOL {
        return Err(Error::Numeric(format!(
            "jacobi sweep limit hit with off-diagonal residual {:e}",
            off_diag_max(&a)
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|i| a.at2(i, i)).collect();
    order.sort_by(|&i, &j| diag[i].partial_cmp(&diag[j]).expect("finite eigenvalues"));

    let mut values = Tensor::zeros(&[n]);
    let mut vectors = Tensor::zeros(&[n, n]);
    for (dst, &src) in order.iter().enumerate() {
        values.data_mut()[dst] = diag[src];
        // sign convention: largest-magnitude entry non-negative
        let mut pivot = 0;
        let mut best = -1.0;
        for k in 0..n {
            let mag = u.at2(k, src).abs();
            if mag > best {
                best = mag;
                pivot = k;
            }
        }
        let flip = if u.at2(pivot, src) < 0.0 { -1.0 } else { 1.0 };
        for k in 0..n {
            vectors.set2(k, dst, flip * u.at2(k, src));
        }
    }

    Ok(SpectralBasis { vectors, values, source_laplacian: l.detached() })
}

fn off_diag_max(a: &Tensor) -> f64 {
    let n = a.shape()[0];
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                worst = worst.max(a.at2(i, j).abs());
            }
        }
    }
    worst
}

/// Minimum gap between adjacent (ascending) eigenvalues.
pub fn min_eigenvalue_gap(values: &Tensor) -> f64 {
    let v = values.data();
    if v.len() < 2 {
        return f64::INFINITY;
    }
    v.windows(2).map(|w| (w[1] - w[0]).abs()).fold(f64::INFINITY, f64::min)
}

const GAP_CLAMP: f64 = 1e-6;

/// Adjoint of the symmetric eigendecomposition:
/// `dL = sym(U (diag(d_lambda) + F .* (U^T dU)) U^T)` with
/// `F_ij = 1 / (lambda_j - lambda_i)` off the diagonal. Gaps below 1e-6 are
/// clamped to a sign-preserving 1e-6, which biases gradients near degenerate
/// spectra instead of blowing them up.
pub fn eigh_backward(u: &Tensor, values: &Tensor, du: &Tensor, dvalues: &Tensor) -> Result<Tensor> {
    let (n, n2) = u.dims2()?;
    if n != n2 || values.numel() != n || du.shape() != u.shape() || dvalues.numel() != n {
        return Err(Error::dim(format!(
            "eigh adjoint shapes disagree: U {:?}, lambda {:?}, dU {:?}, dlambda {:?}",
            u.shape(),
            values.shape(),
            du.shape(),
            dvalues.shape()
        )));
    }
    let inner = matmul_raw(&u.transposed()?, du)?;
    let mut core = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                core.set2(i, j, dvalues.data()[i]);
            } else {
                let gap = values.data()[j] - values.data()[i];
                let clamped = if gap.abs() < GAP_CLAMP {
                    if gap < 0.0 {
                        -GAP_CLAMP
                    } else {
                        GAP_CLAMP
                    }
                } else {
                    gap
                };
                core.set2(i, j, inner.at2(i, j) / clamped);
            }
        }
    }
    let pre = matmul_raw(&matmul_raw(u, &core)?, &u.transposed()?)?;
    let pre_t = pre.transposed()?;
    pre.zip_map(&pre_t, |a, b| 0.5 * (a + b))
}

/// Graph Fourier transform `U^T X` on the tape. The basis enters as a
/// constant here; inside the network the taped eigenvector node is used
/// directly so gradients reach the learned graph.
pub fn gft(tape: &mut Tape, basis: &SpectralBasis, x: &Tensor) -> Result<Tensor> {
    let n = basis.values.numel();
    let (rows, _) = x.dims2()?;
    if rows != n {
        return Err(Error::dim(format!(
            "gft expects {} rows, got {:?}",
            n,
            x.shape()
        )));
    }
    let ut = tape.leaf(basis.vectors.transposed()?);
    let xl = if x.node_id().is_some() { x.clone() } else { tape.leaf(x.clone()) };
    tape.matmul(&ut, &xl)
}

/// Inverse graph Fourier transform `U X_hat`.
pub fn igft(tape: &mut Tape, basis: &SpectralBasis, xhat: &Tensor) -> Result<Tensor> {
    let n = basis.values.numel();
    let (rows, _) = xhat.dims2()?;
    if rows != n {
        return Err(Error::dim(format!(
            "igft expects {} rows, got {:?}",
            n,
            xhat.shape()
        )));
    }
    let u = tape.leaf(basis.vectors.clone());
    let xl = if xhat.node_id().is_some() { xhat.clone() } else { tape.leaf(xhat.clone()) };
    tape.matmul(&u, &xl)
}
