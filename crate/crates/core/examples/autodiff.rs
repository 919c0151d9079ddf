//! Builds a small graph on the tape, checks its gradient against a central
//! difference, then fits a linear map with Adam.

use straightlab::grad::{AdamState, Graph, Tensor};

fn loss(w: &Tensor, x: &Tensor, y: &Tensor) -> f64 {
    let mut g = Graph::new();
    let (w, x, y) = (g.constant(w.clone()), g.constant(x.clone()), g.constant(y.clone()));
    let h = g.matmul(x, w).unwrap();
    let h = g.tanh(h).unwrap();
    let l = g.mse(h, y).unwrap();
    g.value(l).item().unwrap()
}

fn main() -> straightlab::Result<()> {
    let x = Tensor::from_rows(&[vec![0.5, -1.0], vec![1.5, 0.2], vec![-0.3, 0.8]])?;
    let y = Tensor::from_rows(&[vec![0.1], vec![0.7], vec![-0.4]])?;
    let mut w = Tensor::from_rows(&[vec![0.3], vec![-0.2]])?;

    let mut g = Graph::new();
    let wv = g.param(w.clone());
    let xv = g.constant(x.clone());
    let yv = g.constant(y.clone());
    let h = g.matmul(xv, wv)?;
    let h = g.tanh(h)?;
    let l = g.mse(h, yv)?;
    let grads = g.backward(l)?;
    let analytic = grads.get(wv).unwrap().data().to_vec();

    let eps = 1e-6;
    for (i, a) in analytic.iter().enumerate() {
        let (mut plus, mut minus) = (w.clone(), w.clone());
        plus.data_mut()[i] += eps;
        minus.data_mut()[i] -= eps;
        let fd = (loss(&plus, &x, &y) - loss(&minus, &x, &y)) / (2.0 * eps);
        println!("dL/dw[{i}]: tape {a:+.9}  finite difference {fd:+.9}");
    }

    let mut params = vec![w.clone()];
    let mut adam = AdamState::new(&params, 0.05);
    for step in 0..=200 {
        let mut g = Graph::new();
        let wv = g.param(params[0].clone());
        let (xv, yv) = (g.constant(x.clone()), g.constant(y.clone()));
        let h = g.matmul(xv, wv)?;
        let h = g.tanh(h)?;
        let l = g.mse(h, yv)?;
        if step % 50 == 0 {
            println!("step {step:>3}: loss {:.6}", g.value(l).item()?);
        }
        let grads = g.backward(l)?;
        let dw = grads.get_or_zeros(wv, &params[0]);
        adam.step(&mut params, &[dw])?;
    }
    w = params.remove(0);
    println!("fitted w = {:?}", w.data());
    Ok(())
}
