use mstf_numkernel::{softmax, Tensor};

/// Sinusoidal positions `[len × d]`: `sin(t / 10000^(2c/d))` on even
/// columns, `cos` of the same angle on the odd column after it.
pub fn positional_encoding(len: usize, d: usize) -> Tensor {
    Tensor::from_fn(len, d, |t, col| {
        let t = t as f64;
        let c = (col / 2) as f64;
        let angle = t / 10000f64.powf(2.0 * c / d as f64);
        if col % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Pooling weights over steps for one head: softmax of the information increment.
pub fn iipa_weights(sigma: &[u32]) -> Vec<f64> {
    let s: Vec<f64> = sigma.iter().map(|&v| v as f64).collect();
    softmax(&s)
}

/// Weighted sum of the rows of a `[len × d_k]` head output.
pub fn iipa_forward(head_output: &Tensor, sigma: &[u32]) -> Tensor {
    let w = iipa_weights(sigma);
    let d = head_output.cols();
    let mut out = vec![0.0; d];
    for (j, wj) in w.iter().enumerate() {
        for (o, v) in out.iter_mut().zip(head_output.row(j)) {
            *o += wj * v;
        }
    }
    Tensor::matrix(1, d, out).expect("non-empty row")
}
