//! Build a small computation graph, run reverse-mode backward, and compare
//! one gradient against a central finite difference.

use prefcvae::{Graph, Tensor, TensorError};

// f(x, w) = mean((tanh(x W) - y)^2), a one-layer regression loss.
fn loss(g: &mut Graph, x_data: &[f64], w_data: &[f64]) -> Result<prefcvae::NodeId, TensorError> {
    let x = g.constant(Tensor::new(vec![2, 3], x_data.to_vec())?)?;
    let w = g.insert(Tensor::new(vec![3, 2], w_data.to_vec())?.with_grad())?;
    let y = g.constant(Tensor::new(vec![2, 2], vec![0.5, -0.25, 0.0, 1.0])?)?;
    let h = g.matmul(x, w)?;
    let t = g.tanh(h)?;
    let d = g.sub(t, y)?;
    let sq = g.square(d)?;
    g.mean_all(sq)
}

fn main() -> Result<(), TensorError> {
    let x = [0.3, -1.2, 0.8, 1.5, 0.2, -0.7];
    let mut w = vec![0.11, -0.42, 0.35, 0.08, -0.19, 0.27];

    let mut g = Graph::new();
    let out = loss(&mut g, &x, &w)?;
    g.backward(out)?;
    println!("loss = {:.10}", g.scalar_value(out));

    // The weight node is the second insertion (index 1).
    let w_id = prefcvae::NodeId(1);
    let analytic = g.grad(w_id).expect("weights carry a gradient").data.clone();

    let h = 1e-6;
    for (i, &a) in analytic.iter().enumerate() {
        let orig = w[i];
        w[i] = orig + h;
        let up = {
            let mut g = Graph::new();
            let out = loss(&mut g, &x, &w)?;
            g.scalar_value(out)
        };
        w[i] = orig - h;
        let dn = {
            let mut g = Graph::new();
            let out = loss(&mut g, &x, &w)?;
            g.scalar_value(out)
        };
        w[i] = orig;
        let fd = (up - dn) / (2.0 * h);
        println!("dL/dw[{i}]  analytic {a:+.8}  finite-diff {fd:+.8}");
        assert!((a - fd).abs() < 1e-6, "gradient mismatch at {i}");
    }
    println!("all {} gradients agree with finite differences", analytic.len());
    Ok(())
}
