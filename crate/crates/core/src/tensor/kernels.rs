//! Numeric kernels: matrix products, valid-padding convolution, capsule
//! votes and the fused per-pair contractions used by routing.
//!
//! All layouts are row-major; images are `batch x height x width x channels`.

use super::{Real, Result, Tensor, TensorError};

/// `a (m x k) * b (k x n)`, optionally reading either operand transposed.
pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>, trans_a: bool, trans_b: bool) -> Result<Tensor<T>> {
    let mismatch = || TensorError::ShapeMismatch {
        op: "matmul",
        lhs: a.dims().to_vec(),
        rhs: b.dims().to_vec(),
    };
    if a.rank() != 2 || b.rank() != 2 {
        return Err(mismatch());
    }
    let (ar, ac) = (a.dims()[0], a.dims()[1]);
    let (br, bc) = (b.dims()[0], b.dims()[1]);
    let (m, k, rsa, csa) = if trans_a { (ac, ar, 1, ac) } else { (ar, ac, ac, 1) };
    let (k2, n, rsb, csb) = if trans_b { (bc, br, 1, bc) } else { (br, bc, bc, 1) };
    if k != k2 {
        return Err(mismatch());
    }
    let mut out = vec![T::zero(); m * n];
    if m > 0 && n > 0 {
        // SAFETY: extents and strides describe the row-major buffers above.
        unsafe {
            T::gemm(
                m,
                k,
                n,
                T::one(),
                a.data().as_ptr(),
                rsa as isize,
                csa as isize,
                b.data().as_ptr(),
                rsb as isize,
                csb as isize,
                T::zero(),
                out.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
    Tensor::new(vec![m, n], out)
}

/// Geometry of a valid-padding square-kernel convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub in_channels: usize,
    pub kernel: usize,
    pub out_channels: usize,
    pub stride: usize,
}

impl ConvGeometry {
    pub fn new(input: &[usize], kernels: &[usize], stride: usize) -> Result<Self> {
        let mismatch = || TensorError::ShapeMismatch {
            op: "conv2d",
            lhs: input.to_vec(),
            rhs: kernels.to_vec(),
        };
        if input.len() != 4 || kernels.len() != 4 || kernels[0] != kernels[1] {
            return Err(mismatch());
        }
        if input[3] != kernels[2] {
            return Err(mismatch());
        }
        if stride == 0 {
            return Err(TensorError::Invalid("conv2d stride must be positive".into()));
        }
        let kernel = kernels[0];
        if kernel > input[1] || kernel > input[2] || kernel == 0 {
            return Err(TensorError::KernelTooLarge {
                kernel,
                height: input[1],
                width: input[2],
            });
        }
        Ok(Self {
            batch: input[0],
            height: input[1],
            width: input[2],
            in_channels: input[3],
            kernel,
            out_channels: kernels[3],
            stride,
        })
    }

    pub fn out_height(&self) -> usize {
        (self.height - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width - self.kernel) / self.stride + 1
    }

    fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.in_channels
    }

    fn rows(&self) -> usize {
        self.batch * self.out_height() * self.out_width()
    }
}

fn im2col<T: Real>(x: &[T], g: &ConvGeometry) -> Vec<T> {
    let (oh, ow, k, c) = (g.out_height(), g.out_width(), g.kernel, g.in_channels);
    let plen = g.patch_len();
    let mut cols = vec![T::zero(); g.rows() * plen];
    let mut row = 0;
    for b in 0..g.batch {
        for oy in 0..oh {
            for ox in 0..ow {
                let dst = &mut cols[row * plen..(row + 1) * plen];
                for ky in 0..k {
                    let y = oy * g.stride + ky;
                    let src = ((b * g.height + y) * g.width + ox * g.stride) * c;
                    dst[ky * k * c..(ky + 1) * k * c].copy_from_slice(&x[src..src + k * c]);
                }
                row += 1;
            }
        }
    }
    cols
}

fn col2im<T: Real>(cols: &[T], g: &ConvGeometry) -> Vec<T> {
    let (oh, ow, k, c) = (g.out_height(), g.out_width(), g.kernel, g.in_channels);
    let plen = g.patch_len();
    let mut x = vec![T::zero(); g.batch * g.height * g.width * c];
    let mut row = 0;
    for b in 0..g.batch {
        for oy in 0..oh {
            for ox in 0..ow {
                let src = &cols[row * plen..(row + 1) * plen];
                for ky in 0..k {
                    let y = oy * g.stride + ky;
                    let dst = ((b * g.height + y) * g.width + ox * g.stride) * c;
                    for (d, &s) in x[dst..dst + k * c].iter_mut().zip(&src[ky * k * c..(ky + 1) * k * c]) {
                        *d += s;
                    }
                }
                row += 1;
            }
        }
    }
    x
}

/// Forward convolution; also returns the unfolded patches for the backward pass.
pub fn conv2d_forward<T: Real>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
) -> Result<(Tensor<T>, Vec<T>)> {
    let g = ConvGeometry::new(input.dims(), kernels.dims(), stride)?;
    if bias.dims() != [g.out_channels] {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d bias",
            lhs: bias.dims().to_vec(),
            rhs: vec![g.out_channels],
        });
    }
    let cols = im2col(input.data(), &g);
    let (rows, plen, o) = (g.rows(), g.patch_len(), g.out_channels);
    let mut out = Vec::with_capacity(rows * o);
    for _ in 0..rows {
        out.extend_from_slice(bias.data());
    }
    if rows > 0 {
        // SAFETY: cols is rows x plen, kernels is plen x o, out is rows x o.
        unsafe {
            T::gemm(
                rows,
                plen,
                o,
                T::one(),
                cols.as_ptr(),
                plen as isize,
                1,
                kernels.data().as_ptr(),
                o as isize,
                1,
                T::one(),
                out.as_mut_ptr(),
                o as isize,
                1,
            );
        }
    }
    let out = Tensor::new(vec![g.batch, g.out_height(), g.out_width(), o], out)?;
    Ok((out, cols))
}

/// Gradients of a convolution: (input, kernels, bias). The input gradient is
/// only formed when requested.
pub fn conv2d_backward<T: Real>(
    g: &ConvGeometry,
    cols: &[T],
    kernels: &Tensor<T>,
    grad_out: &Tensor<T>,
    want_input: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let (rows, plen, o) = (g.rows(), g.patch_len(), g.out_channels);
    let dy = grad_out.data();
    let mut dw = vec![T::zero(); plen * o];
    let mut db = vec![T::zero(); o];
    for r in 0..rows {
        for (acc, &v) in db.iter_mut().zip(&dy[r * o..(r + 1) * o]) {
            *acc += v;
        }
    }
    if rows > 0 {
        // SAFETY: colsᵀ is plen x rows, dy is rows x o, dw is plen x o.
        unsafe {
            T::gemm(
                plen,
                rows,
                o,
                T::one(),
                cols.as_ptr(),
                1,
                plen as isize,
                dy.as_ptr(),
                o as isize,
                1,
                T::zero(),
                dw.as_mut_ptr(),
                o as isize,
                1,
            );
        }
    }
    let dx = want_input.then(|| {
        let mut dcols = vec![T::zero(); rows * plen];
        if rows > 0 {
            // SAFETY: dy is rows x o, kernelsᵀ is o x plen, dcols is rows x plen.
            unsafe {
                T::gemm(
                    rows,
                    o,
                    plen,
                    T::one(),
                    dy.as_ptr(),
                    o as isize,
                    1,
                    kernels.data().as_ptr(),
                    1,
                    o as isize,
                    T::zero(),
                    dcols.as_mut_ptr(),
                    plen as isize,
                    1,
                );
            }
        }
        Tensor {
            dims: vec![g.batch, g.height, g.width, g.in_channels],
            data: col2im(&dcols, g),
        }
    });
    let dw = Tensor {
        dims: kernels.dims().to_vec(),
        data: dw,
    };
    let db = Tensor { dims: vec![o], data: db };
    (dx, dw, db)
}

/// Shape of a batched vote computation: poses `B x N x d_in` against
/// transformation matrices `N x M x d_out x d_in`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VoteGeometry {
    pub batch: usize,
    pub children: usize,
    pub parents: usize,
    pub dim_in: usize,
    pub dim_out: usize,
}

impl VoteGeometry {
    pub fn new(poses: &[usize], weights: &[usize]) -> Result<Self> {
        if poses.len() != 3 || weights.len() != 4 || poses[1] != weights[0] || poses[2] != weights[3] {
            return Err(TensorError::ShapeMismatch {
                op: "capsule_votes",
                lhs: poses.to_vec(),
                rhs: weights.to_vec(),
            });
        }
        Ok(Self {
            batch: poses[0],
            children: poses[1],
            parents: weights[1],
            dim_in: poses[2],
            dim_out: weights[2],
        })
    }

    fn fan_out(&self) -> usize {
        self.parents * self.dim_out
    }
}

/// `votes[b, i, j, :] = W[i, j] · u[b, i, :]`, shape `B x N x M x d_out`.
pub fn capsule_votes<T: Real>(poses: &Tensor<T>, weights: &Tensor<T>) -> Result<Tensor<T>> {
    let g = VoteGeometry::new(poses.dims(), weights.dims())?;
    let (b, n, di, fo) = (g.batch, g.children, g.dim_in, g.fan_out());
    let mut out = vec![T::zero(); b * n * fo];
    if b > 0 {
        for i in 0..n {
            // SAFETY: per child, (B x d_in) rows of stride N*d_in times
            // W_iᵀ (d_in x M*d_out), written to rows of stride N*M*d_out.
            unsafe {
                T::gemm(
                    b,
                    di,
                    fo,
                    T::one(),
                    poses.data().as_ptr().add(i * di),
                    (n * di) as isize,
                    1,
                    weights.data().as_ptr().add(i * fo * di),
                    1,
                    di as isize,
                    T::zero(),
                    out.as_mut_ptr().add(i * fo),
                    (n * fo) as isize,
                    1,
                );
            }
        }
    }
    Tensor::new(vec![b, n, g.parents, g.dim_out], out)
}

/// Gradients of [`capsule_votes`] with respect to poses and weights.
pub fn capsule_votes_backward<T: Real>(
    poses: &Tensor<T>,
    weights: &Tensor<T>,
    grad_votes: &Tensor<T>,
    want_poses: bool,
    want_weights: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let g = VoteGeometry::new(poses.dims(), weights.dims()).expect("validated in forward");
    let (b, n, di, fo) = (g.batch, g.children, g.dim_in, g.fan_out());
    let dv = grad_votes.data();
    let du = want_poses.then(|| {
        let mut du = vec![T::zero(); b * n * di];
        if b > 0 {
            for i in 0..n {
                // SAFETY: dV_i (B x M*d_out) times W_i (M*d_out x d_in).
                unsafe {
                    T::gemm(
                        b,
                        fo,
                        di,
                        T::one(),
                        dv.as_ptr().add(i * fo),
                        (n * fo) as isize,
                        1,
                        weights.data().as_ptr().add(i * fo * di),
                        di as isize,
                        1,
                        T::zero(),
                        du.as_mut_ptr().add(i * di),
                        (n * di) as isize,
                        1,
                    );
                }
            }
        }
        Tensor {
            dims: poses.dims().to_vec(),
            data: du,
        }
    });
    let dw = want_weights.then(|| {
        let mut dw = vec![T::zero(); n * fo * di];
        if b > 0 {
            for i in 0..n {
                // SAFETY: dV_iᵀ (M*d_out x B) times U_i (B x d_in).
                unsafe {
                    T::gemm(
                        fo,
                        b,
                        di,
                        T::one(),
                        dv.as_ptr().add(i * fo),
                        1,
                        (n * fo) as isize,
                        poses.data().as_ptr().add(i * di),
                        (n * di) as isize,
                        1,
                        T::zero(),
                        dw.as_mut_ptr().add(i * fo * di),
                        di as isize,
                        1,
                    );
                }
            }
        }
        Tensor {
            dims: weights.dims().to_vec(),
            data: dw,
        }
    });
    (du, dw)
}

/// Extents of a per-pair routing tensor `B x N x M x d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairGeometry {
    pub batch: usize,
    pub children: usize,
    pub parents: usize,
    pub dim: usize,
}

impl PairGeometry {
    /// Validates `B x N x M x d` votes against a `scalar` tensor that is
    /// `B x N x M x 1` (per pair) or `B x 1 x M x d` (per parent).
    pub fn new(op: &'static str, votes: &[usize], other: &[usize], per_parent: bool) -> Result<Self> {
        let ok = votes.len() == 4
            && other.len() == 4
            && other[0] == votes[0]
            && other[2] == votes[2]
            && if per_parent {
                other[1] == 1 && other[3] == votes[3]
            } else {
                other[1] == votes[1] && other[3] == 1
            };
        if !ok {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: votes.to_vec(),
                rhs: other.to_vec(),
            });
        }
        Ok(Self {
            batch: votes[0],
            children: votes[1],
            parents: votes[2],
            dim: votes[3],
        })
    }

    fn pair(&self, b: usize, i: usize, j: usize) -> usize {
        (b * self.children + i) * self.parents + j
    }

    fn parent(&self, b: usize, j: usize) -> usize {
        (b * self.parents + j) * self.dim
    }
}

/// `s[b, 0, j, :] = sum_i c[b, i, j] * u[b, i, j, :]`.
pub fn weighted_sum<T: Real>(c: &Tensor<T>, u: &Tensor<T>) -> Result<Tensor<T>> {
    let g = PairGeometry::new("weighted_sum", u.dims(), c.dims(), false)?;
    let d = g.dim;
    let (cd, ud) = (c.data(), u.data());
    let mut s = vec![T::zero(); g.batch * g.parents * d];
    for b in 0..g.batch {
        for i in 0..g.children {
            for j in 0..g.parents {
                let p = g.pair(b, i, j);
                let w = cd[p];
                let out = &mut s[g.parent(b, j)..g.parent(b, j) + d];
                for (o, &v) in out.iter_mut().zip(&ud[p * d..(p + 1) * d]) {
                    *o += w * v;
                }
            }
        }
    }
    Tensor::new(vec![g.batch, 1, g.parents, d], s)
}

/// Gradients of [`weighted_sum`] for `c` and `u`.
pub fn weighted_sum_backward<T: Real>(c: &Tensor<T>, u: &Tensor<T>, grad: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let g = PairGeometry::new("weighted_sum", u.dims(), c.dims(), false).expect("validated in forward");
    let d = g.dim;
    let (cd, ud, gd) = (c.data(), u.data(), grad.data());
    let mut dc = vec![T::zero(); cd.len()];
    let mut du = vec![T::zero(); ud.len()];
    for b in 0..g.batch {
        for i in 0..g.children {
            for j in 0..g.parents {
                let p = g.pair(b, i, j);
                let gs = &gd[g.parent(b, j)..g.parent(b, j) + d];
                let uv = &ud[p * d..(p + 1) * d];
                dc[p] = gs.iter().zip(uv).fold(T::zero(), |acc, (&x, &y)| acc + x * y);
                for (o, &x) in du[p * d..(p + 1) * d].iter_mut().zip(gs) {
                    *o = cd[p] * x;
                }
            }
        }
    }
    (
        Tensor::new(c.dims().to_vec(), dc).expect("same extents"),
        Tensor::new(u.dims().to_vec(), du).expect("same extents"),
    )
}

/// `a[b, i, j, 0] = u[b, i, j, :] · v[b, 0, j, :]`.
pub fn agreement<T: Real>(u: &Tensor<T>, v: &Tensor<T>) -> Result<Tensor<T>> {
    let g = PairGeometry::new("agreement", u.dims(), v.dims(), true)?;
    let d = g.dim;
    let (ud, vd) = (u.data(), v.data());
    let mut a = vec![T::zero(); g.batch * g.children * g.parents];
    for b in 0..g.batch {
        for i in 0..g.children {
            for j in 0..g.parents {
                let p = g.pair(b, i, j);
                let vv = &vd[g.parent(b, j)..g.parent(b, j) + d];
                a[p] = ud[p * d..(p + 1) * d].iter().zip(vv).fold(T::zero(), |acc, (&x, &y)| acc + x * y);
            }
        }
    }
    Tensor::new(vec![g.batch, g.children, g.parents, 1], a)
}

/// Gradients of [`agreement`] for `u` and `v`.
pub fn agreement_backward<T: Real>(u: &Tensor<T>, v: &Tensor<T>, grad: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let g = PairGeometry::new("agreement", u.dims(), v.dims(), true).expect("validated in forward");
    let d = g.dim;
    let (ud, vd, gd) = (u.data(), v.data(), grad.data());
    let mut du = vec![T::zero(); ud.len()];
    let mut dv = vec![T::zero(); vd.len()];
    for b in 0..g.batch {
        for i in 0..g.children {
            for j in 0..g.parents {
                let p = g.pair(b, i, j);
                let q = g.parent(b, j);
                let w = gd[p];
                for k in 0..d {
                    du[p * d + k] = w * vd[q + k];
                    dv[q + k] += w * ud[p * d + k];
                }
            }
        }
    }
    (
        Tensor::new(u.dims().to_vec(), du).expect("same extents"),
        Tensor::new(v.dims().to_vec(), dv).expect("same extents"),
    )
}

/// `dist[b, i, j, 0] = sqrt(|u[b, i, j, :] - v[b, 0, j, :]|^2 + eps)`.
pub fn pair_distance<T: Real>(u: &Tensor<T>, v: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
    let g = PairGeometry::new("pair_distance", u.dims(), v.dims(), true)?;
    let d = g.dim;
    let (ud, vd) = (u.data(), v.data());
    let mut out = vec![T::zero(); g.batch * g.children * g.parents];
    for b in 0..g.batch {
        for i in 0..g.children {
            for j in 0..g.parents {
                let p = g.pair(b, i, j);
                let vv = &vd[g.parent(b, j)..g.parent(b, j) + d];
                let sq = ud[p * d..(p + 1) * d]
                    .iter()
                    .zip(vv)
                    .fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y));
                out[p] = (sq + eps).sqrt();
            }
        }
    }
    Tensor::new(vec![g.batch, g.children, g.parents, 1], out)
}

/// Gradients of [`pair_distance`] given its output `dist`.
pub fn pair_distance_backward<T: Real>(
    u: &Tensor<T>,
    v: &Tensor<T>,
    dist: &Tensor<T>,
    grad: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let g = PairGeometry::new("pair_distance", u.dims(), v.dims(), true).expect("validated in forward");
    let d = g.dim;
    let (ud, vd, gd, dd) = (u.data(), v.data(), grad.data(), dist.data());
    let mut du = vec![T::zero(); ud.len()];
    let mut dv = vec![T::zero(); vd.len()];
    for b in 0..g.batch {
        for i in 0..g.children {
            for j in 0..g.parents {
                let p = g.pair(b, i, j);
                let q = g.parent(b, j);
                let w = gd[p] / dd[p];
                for k in 0..d {
                    let diff = w * (ud[p * d + k] - vd[q + k]);
                    du[p * d + k] = diff;
                    dv[q + k] = dv[q + k] - diff;
                }
            }
        }
    }
    (
        Tensor::new(u.dims().to_vec(), du).expect("same extents"),
        Tensor::new(v.dims().to_vec(), dv).expect("same extents"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = Tensor::<f64>::from_f64(vec![2, 3], &[1., 2., 3., 4., 5., 6.]).unwrap();
        let b = Tensor::<f64>::from_f64(vec![3, 2], &[7., 8., 9., 10., 11., 12.]).unwrap();
        assert_eq!(matmul(&a, &b, false, false).unwrap().data(), &[58., 64., 139., 154.]);
        let at = Tensor::<f64>::from_f64(vec![3, 2], &[1., 4., 2., 5., 3., 6.]).unwrap();
        assert_eq!(matmul(&at, &b, true, false).unwrap().data(), &[58., 64., 139., 154.]);
        assert!(matmul(&a, &a, false, false).is_err());
    }

    #[test]
    fn conv_output_extents() {
        let g = ConvGeometry::new(&[1, 24, 24, 1], &[9, 9, 1, 256], 1).unwrap();
        assert_eq!((g.out_height(), g.out_width()), (16, 16));
        let g = ConvGeometry::new(&[1, 16, 16, 256], &[9, 9, 256, 256], 2).unwrap();
        assert_eq!((g.out_height(), g.out_width()), (4, 4));
        assert_eq!(
            ConvGeometry::new(&[1, 8, 8, 1], &[9, 9, 1, 1], 1).unwrap_err(),
            TensorError::KernelTooLarge {
                kernel: 9,
                height: 8,
                width: 8
            }
        );
    }

    #[test]
    fn identity_kernel_copies_input() {
        let x = Tensor::<f32>::from_f64(vec![1, 3, 2, 1], &[1., -2., 3., 4., 0.5, 6.]).unwrap();
        let k = Tensor::<f32>::full(vec![1, 1, 1, 1], 1.0);
        let b = Tensor::<f32>::zeros(vec![1]);
        let (y, _) = conv2d_forward(&x, &k, &b, 1).unwrap();
        assert_eq!(y, x);
    }
}
