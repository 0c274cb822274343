//! Reverse-mode gradients on a small conv graph, checked against a central
//! difference on one weight.

use scoped_dnas::ops::Activation;
use scoped_dnas::{Graph, Tensor};

fn loss(w: &Tensor<f64>, x: &Tensor<f64>) -> scoped_dnas::Result<(f64, Vec<f64>)> {
    let mut g = Graph::<f64>::new();
    let xv = g.constant(x.clone());
    let wv = g.leaf(w.clone().with_requires_grad(true));
    let y = g.conv2d(xv, wv, None, 1, 1)?;
    let y = g.activation(y, Activation::Mish);
    let l = g.sum(y);
    g.backward(l)?;
    Ok((g.value(l).item().unwrap(), g.grad(wv).unwrap().to_vec()))
}

fn main() -> scoped_dnas::Result<()> {
    let x = Tensor::from_fn([1, 2, 5, 5], |i| ((i * 7) % 11) as f64 / 11.0 - 0.5);
    let w = Tensor::from_fn([3, 2, 3, 3], |i| ((i * 5) % 13) as f64 / 13.0 - 0.5);
    let (value, grad) = loss(&w, &x)?;
    let h = 1e-6;
    let shifted = |d: f64| {
        let mut w = w.clone();
        w.data_mut()[4] += d;
        loss(&w, &x).map(|(v, _)| v)
    };
    let numeric = (shifted(h)? - shifted(-h)?) / (2.0 * h);
    println!("loss {value:.6}");
    println!("dL/dw[4]: analytic {:.8}, central difference {numeric:.8}", grad[4]);
    Ok(())
}
