#![allow(dead_code)]

use wavae::numerics::{Graph, Rng, Tensor, Var};

pub const RTOL: f64 = 1e-4;
pub const ATOL: f64 = 1e-7;
pub const STEP: f64 = 1e-5;

pub fn randn(rng: &mut Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| scale * rng.normal()).collect()).unwrap()
}

pub fn rand_unit(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform()).collect()).unwrap()
}

fn eval<F>(leaves: &[Tensor<f64>], f: &F) -> f64
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = leaves.iter().map(|t| g.constant(t.clone())).collect();
    let root = f(&mut g, &vars);
    g.value(root).item()
}

/// Compares reverse-mode gradients of `f` against central differences for
/// every element of every leaf. Returns the worst offending element.
pub fn grad_check<F>(leaves: &[Tensor<f64>], f: F) -> Result<(), String>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = leaves.iter().map(|t| g.param(t.clone())).collect();
    let root = f(&mut g, &vars);
    let grads = g.backward(root).map_err(|e| e.to_string())?;
    for (i, leaf) in leaves.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[i], leaf);
        for j in 0..leaf.len() {
            let mut plus = leaves.to_vec();
            plus[i].data_mut()[j] += STEP;
            let mut minus = leaves.to_vec();
            minus[i].data_mut()[j] -= STEP;
            let numeric = (eval(&plus, &f) - eval(&minus, &f)) / (2.0 * STEP);
            let a = analytic.data()[j];
            if (a - numeric).abs() > ATOL + RTOL * a.abs().max(numeric.abs()) {
                return Err(format!("leaf {i} element {j}: analytic {a:e} vs numeric {numeric:e}"));
            }
        }
    }
    Ok(())
}

/// One `[PASS]`/`[FAIL]` line per acceptance criterion, then the verdict.
/// Writes one verdict line. Goes to the stdout handle directly so the line
/// survives libtest's output capture.
fn emit(line: String) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

pub fn verdict(name: &str, ok: bool, detail: impl AsRef<str>) {
    emit(format!("[{}] {name}: {}", if ok { "PASS" } else { "FAIL" }, detail.as_ref()));
    assert!(ok, "{name}: {}", detail.as_ref());
}

/// Like [`verdict`] but never panics. Reserved for criteria the default
/// benchmark is known not to meet, listed under README "Known limitations".
pub fn report(name: &str, ok: bool, detail: impl AsRef<str>) {
    let tag = if ok { "PASS" } else { "FAIL" };
    let note = if ok { "" } else { " (known limitation)" };
    emit(format!("[{tag}] {name}: {}{note}", detail.as_ref()));
}
