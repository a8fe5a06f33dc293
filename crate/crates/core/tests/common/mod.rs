#![allow(dead_code)]

pub mod gradsuite;
pub mod oracles;

use caanet::tensor::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_tensor(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-scale..scale))
}

#[derive(Debug, Default, Clone, Copy)]
pub struct GradCheck {
    pub checked: usize,
    pub skipped: usize,
    pub max_rel: f64,
}

/// Finite-difference check of the gradient of a scalar function of the
/// `values`. `build` receives a tape with one leaf per value and returns the
/// loss. Entries whose ±h evaluations take a different non-smooth branch
/// than the base point (per the tape's kink fingerprint) are skipped and
/// another entry is drawn. `per_tensor` entries are checked per value
/// (all entries when the tensor is smaller).
pub fn gradcheck<F>(values: &[Tensor<f64>], build: F, per_tensor: usize, seed: u64) -> GradCheck
where
    F: Fn(&mut Tape<f64>, &[Var]) -> caanet::Result<Var>,
{
    let eval = |vals: &[Tensor<f64>], grad: bool| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|v| tape.leaf(v.clone(), grad)).collect();
        let loss = build(&mut tape, &vars).expect("forward pass");
        let value = tape.value(loss).item();
        let sig = tape.kink_signature();
        let grads = grad.then(|| {
            let mut g = tape.backward(loss).expect("backward pass");
            vars.iter()
                .zip(vals)
                .map(|(&v, t)| g.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
                .collect::<Vec<_>>()
        });
        (value, sig, grads)
    };
    let (_, base_sig, grads) = eval(values, true);
    let grads = grads.unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheck::default();
    let mut vals = values.to_vec();
    for (ti, t) in values.iter().enumerate() {
        let n = t.len();
        let mut entries: Vec<usize> = if n <= per_tensor { (0..n).collect() } else { Vec::new() };
        let want = per_tensor.min(n);
        let mut attempts = 0;
        let mut done = 0;
        loop {
            let idx = if n <= per_tensor {
                match entries.pop() {
                    Some(i) => i,
                    None => break,
                }
            } else {
                if done == want || attempts > 20 * want {
                    break;
                }
                attempts += 1;
                rng.random_range(0..n)
            };
            let x0 = t.data()[idx];
            // Richardson-extrapolated central difference: O(h^4) truncation
            // error, which allows a step large enough to keep rounding small.
            let h = 1e-4 * x0.abs().max(1.0);
            let mut diff = |step: f64| {
                vals[ti].data_mut()[idx] = x0 + step;
                let (fp, sp, _) = eval(&vals, false);
                vals[ti].data_mut()[idx] = x0 - step;
                let (fm, sm, _) = eval(&vals, false);
                vals[ti].data_mut()[idx] = x0;
                (sp == base_sig && sm == base_sig).then(|| (fp - fm) / (2.0 * step))
            };
            let (Some(wide), Some(narrow)) = (diff(h), diff(h / 2.0)) else {
                report.skipped += 1;
                continue;
            };
            let numeric = (4.0 * narrow - wide) / 3.0;
            let analytic = grads[ti].data()[idx];
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
            report.max_rel = report.max_rel.max(rel);
            report.checked += 1;
            done += 1;
        }
    }
    report
}
