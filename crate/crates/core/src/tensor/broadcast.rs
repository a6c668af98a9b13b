//! Same-rank broadcasting: an operand axis of extent 1 stretches to match.

use super::{Real, Result, Tensor, TensorError};

pub(crate) fn contiguous_strides(dims: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; dims.len()];
    let mut acc = 1;
    for (s, &d) in strides.iter_mut().zip(dims).rev() {
        *s = acc;
        acc *= d;
    }
    strides
}

pub(crate) fn broadcast_dims(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let mismatch = || TensorError::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    };
    if a.len() != b.len() {
        return Err(mismatch());
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => Err(mismatch()),
        })
        .collect()
}

/// Strides of `src` when read against `out`; zero along stretched axes.
pub(crate) fn strides_against(src: &[usize], out: &[usize]) -> Vec<usize> {
    let base = contiguous_strides(src);
    src.iter()
        .zip(out)
        .zip(base)
        .map(|((&s, &o), st)| if s == 1 && o != 1 { 0 } else { st })
        .collect()
}

/// Merges adjacent axes that are contiguous for both operands.
fn collapse(dims: &[usize], sa: &[usize], sb: &[usize]) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut d: Vec<usize> = Vec::with_capacity(dims.len());
    let mut a: Vec<usize> = Vec::with_capacity(dims.len());
    let mut b: Vec<usize> = Vec::with_capacity(dims.len());
    for k in 0..dims.len() {
        if dims[k] == 1 {
            continue;
        }
        if let Some(last) = d.len().checked_sub(1) {
            if a[last] == sa[k] * dims[k] && b[last] == sb[k] * dims[k] {
                d[last] *= dims[k];
                a[last] = sa[k];
                b[last] = sb[k];
                continue;
            }
        }
        d.push(dims[k]);
        a.push(sa[k]);
        b.push(sb[k]);
    }
    (d, a, b)
}

/// Calls `f(out_offset, a_offset, b_offset)` for every element of `out_dims`
/// in row-major order.
pub(crate) fn for_each2(
    out_dims: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let total: usize = out_dims.iter().product();
    if total == 0 {
        return;
    }
    let (dims, sa, sb) = collapse(out_dims, sa, sb);
    if dims.is_empty() {
        f(0, 0, 0);
        return;
    }
    let last = dims.len() - 1;
    let inner = dims[last];
    let (step_a, step_b) = (sa[last], sb[last]);
    let mut idx = vec![0usize; last];
    let (mut base_a, mut base_b) = (0usize, 0usize);
    let mut o = 0;
    for _ in 0..total / inner {
        let (mut ia, mut ib) = (base_a, base_b);
        for _ in 0..inner {
            f(o, ia, ib);
            o += 1;
            ia += step_a;
            ib += step_b;
        }
        for k in (0..last).rev() {
            idx[k] += 1;
            base_a += sa[k];
            base_b += sb[k];
            if idx[k] < dims[k] {
                break;
            }
            base_a -= sa[k] * dims[k];
            base_b -= sb[k] * dims[k];
            idx[k] = 0;
        }
    }
}

pub(crate) fn zip_broadcast<T: Real>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.dims() == b.dims() {
        return a.zip_map(b, f);
    }
    let out_dims = broadcast_dims(op, a.dims(), b.dims())?;
    let sa = strides_against(a.dims(), &out_dims);
    let sb = strides_against(b.dims(), &out_dims);
    let n = out_dims.iter().product();
    let mut out = vec![T::zero(); n];
    let (ad, bd) = (a.data(), b.data());
    for_each2(&out_dims, &sa, &sb, |o, ia, ib| out[o] = f(ad[ia], bd[ib]));
    Tensor::new(out_dims, out)
}

/// Sums `grad` down to `target` dims (the adjoint of broadcasting).
pub(crate) fn reduce_to<T: Real>(grad: &Tensor<T>, target: &[usize]) -> Tensor<T> {
    if grad.dims() == target {
        return grad.clone();
    }
    let n = target.iter().product();
    let mut out = vec![T::zero(); n];
    let sg = contiguous_strides(grad.dims());
    let st = strides_against(target, grad.dims());
    let g = grad.data();
    for_each2(grad.dims(), &sg, &st, |_, ig, it| out[it] += g[ig]);
    Tensor {
        dims: target.to_vec(),
        data: out,
    }
}

/// Stretches `src` to `out_dims`.
pub(crate) fn expand<T: Real>(src: &Tensor<T>, out_dims: &[usize]) -> Tensor<T> {
    if src.dims() == out_dims {
        return src.clone();
    }
    let n = out_dims.iter().product();
    let mut out = vec![T::zero(); n];
    let ss = strides_against(src.dims(), out_dims);
    let so = contiguous_strides(out_dims);
    let s = src.data();
    for_each2(out_dims, &so, &ss, |o, _, is| out[o] = s[is]);
    Tensor {
        dims: out_dims.to_vec(),
        data: out,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_dims_rules() {
        assert_eq!(broadcast_dims("t", &[2, 1, 3], &[1, 4, 3]).unwrap(), vec![2, 4, 3]);
        assert!(broadcast_dims("t", &[2, 3], &[3, 2]).is_err());
        assert!(broadcast_dims("t", &[2, 3], &[2, 3, 1]).is_err());
    }

    #[test]
    fn zip_broadcast_matches_manual_loop() {
        let a = Tensor::<f64>::from_f64(vec![2, 1, 3], &[1., 2., 3., 4., 5., 6.]).unwrap();
        let b = Tensor::<f64>::from_f64(vec![1, 2, 1], &[10., 20.]).unwrap();
        let c = zip_broadcast("add", &a, &b, |x, y| x + y).unwrap();
        assert_eq!(c.dims(), &[2, 2, 3]);
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..3 {
                    assert_eq!(c.at(&[i, j, k]), a.at(&[i, 0, k]) + b.at(&[0, j, 0]));
                }
            }
        }
    }

    #[test]
    fn reduce_is_adjoint_of_expand() {
        let g = Tensor::<f64>::from_f64(vec![2, 3], &[1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(reduce_to(&g, &[1, 3]).data(), &[5., 7., 9.]);
        assert_eq!(reduce_to(&g, &[2, 1]).data(), &[6., 15.]);
        assert_eq!(reduce_to(&g, &[1, 1]).data(), &[21.]);
        let s = Tensor::<f64>::from_f64(vec![2, 1], &[1., 2.]).unwrap();
        assert_eq!(expand(&s, &[2, 3]).data(), &[1., 1., 1., 2., 2., 2.]);
    }
}
