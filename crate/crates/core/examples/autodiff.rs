//! Builds a small graph, runs the reverse pass and compares each gradient
//! with a central finite difference.
//!
//!     cargo run --release --example autodiff

use rescaps::tensor::{Graph, Tensor};

/// loss = sum(squash(x W)) over rows, with x fixed and W learned.
fn loss(w: &Tensor<f64>, grad: bool) -> rescaps::Result<(f64, Option<Tensor<f64>>)> {
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_f64(vec![2, 3], &[0.5, -1.0, 2.0, 1.5, 0.25, -0.75])?)?;
    let wv = g.leaf(w.clone(), grad)?;
    let h = g.matmul(x, wv)?;
    let s = g.squash(h, 1)?;
    let l = g.sum(s)?;
    let value = g.value(l).item();
    if !grad {
        return Ok((value, None));
    }
    let mut grads = g.backward(l)?;
    Ok((value, grads.take(wv)))
}

fn main() -> rescaps::Result<()> {
    let w = Tensor::from_f64(vec![3, 2], &[0.1, -0.2, 0.3, 0.4, -0.5, 0.6])?;
    let (value, grad) = loss(&w, true)?;
    let grad = grad.expect("w requires a gradient");
    println!("loss {value:.6}");
    let h = 1e-6;
    for k in 0..w.len() {
        let mut up = w.clone();
        up.data_mut()[k] += h;
        let mut down = w.clone();
        down.data_mut()[k] -= h;
        let numeric = (loss(&up, false)?.0 - loss(&down, false)?.0) / (2.0 * h);
        println!("dL/dw[{k}] analytic {:+.8} numeric {:+.8}", grad.data()[k], numeric);
    }
    Ok(())
}
