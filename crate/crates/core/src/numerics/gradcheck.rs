use super::{AttentionSpec, Graph, Tensor, Var};
use crate::rng::Rng;
use crate::error::{Result, XlmError};

/// Outcome of a central-difference comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Input tensor and flat coordinate of the worst disagreement.
    pub worst_input: usize,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

fn eval<F>(f: &F, inputs: &[Tensor<f64>], track: bool) -> Result<(Graph<f64>, Vec<Var>, Var)>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| {
            if track {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            }
        })
        .collect();
    let out = f(&mut g, &vars)?;
    if g.value(out).len() != 1 {
        return Err(XlmError::Shape(format!(
            "grad_check needs a scalar function, got shape {:?}",
            g.value(out).shape()
        )));
    }
    Ok((g, vars, out))
}

/// Compare tape gradients of `f` at `point` against
/// `(f(x + eps e) - f(x - eps e)) / 2 eps` for every coordinate. Relative
/// error uses the denominator `max(|a|, |n|, 1e-8)`.
pub fn grad_check<F>(f: F, point: &[Tensor<f64>], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let (mut g, vars, out) = eval(&f, point, true)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(point)
        .map(|(&v, t)| g.grad(v).map(<[f64]>::to_vec).unwrap_or(vec![0.0; t.len()]))
        .collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_input: 0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut inputs = point.to_vec();
    for i in 0..inputs.len() {
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            inputs[i].data_mut()[j] = orig + eps;
            let (gp, _, op) = eval(&f, &inputs, false)?;
            inputs[i].data_mut()[j] = orig - eps;
            let (gm, _, om) = eval(&f, &inputs, false)?;
            inputs[i].data_mut()[j] = orig;
            let numeric = (gp.value(op).item() - gm.value(om).item()) / (2.0 * eps);
            let a = analytic[i][j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.checked += 1;
            if rel > report.max_rel_error || report.checked == 1 {
                report.max_rel_error = rel;
                report.worst_input = i;
                report.worst_index = j;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

fn random_tensor(shape: Vec<usize>, scale: f64, rng: &mut Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.normal() * scale).collect();
    Tensor::new(shape, data).unwrap()
}

/// Reduce to a scalar through fixed random weights so every output cell
/// carries a distinct upstream gradient.
fn project(g: &mut Graph<f64>, x: Var, seed: u64) -> Result<Var> {
    let shape = g.value(x).shape().to_vec();
    let mut rng = Rng::seed_from_u64(seed ^ 0x5eed);
    let w = g.constant(random_tensor(shape, 1.0, &mut rng));
    let y = g.mul(x, w)?;
    Ok(g.sum(y))
}

/// Names of the operations covered by [`op_grad_check`].
pub const CHECKED_OPS: [&str; 14] = [
    "add",
    "add_row",
    "mul",
    "scale",
    "sum",
    "matmul",
    "matmul_bt",
    "gelu",
    "layer_norm",
    "embedding",
    "attention_causal",
    "attention_bidirectional",
    "cross_entropy",
    "dropout",
];

/// Central-difference check of one named operation at a random point
/// drawn from `seed`.
pub fn op_grad_check(op: &str, seed: u64) -> Result<GradCheckReport> {
    let mut rng = Rng::seed_from_u64(seed);
    let r = &mut rng;
    let eps = 1e-5;
    match op {
        "add" => {
            let p = [random_tensor(vec![3, 4], 1.0, r), random_tensor(vec![3, 4], 1.0, r)];
            grad_check(|g, v| { let y = g.add(v[0], v[1])?; project(g, y, seed) }, &p, eps)
        }
        "add_row" => {
            let p = [random_tensor(vec![3, 4], 1.0, r), random_tensor(vec![4], 1.0, r)];
            grad_check(|g, v| { let y = g.add_row(v[0], v[1])?; project(g, y, seed) }, &p, eps)
        }
        "mul" => {
            let p = [random_tensor(vec![3, 4], 1.0, r), random_tensor(vec![3, 4], 1.0, r)];
            grad_check(|g, v| { let y = g.mul(v[0], v[1])?; project(g, y, seed) }, &p, eps)
        }
        "scale" => {
            let p = [random_tensor(vec![5], 1.0, r)];
            grad_check(|g, v| { let y = g.scale(v[0], -1.7); project(g, y, seed) }, &p, eps)
        }
        "sum" => {
            let p = [random_tensor(vec![2, 3], 1.0, r)];
            grad_check(|g, v| { let y = g.mul(v[0], v[0])?; Ok(g.sum(y)) }, &p, eps)
        }
        "matmul" => {
            let p = [random_tensor(vec![3, 4], 1.0, r), random_tensor(vec![4, 5], 1.0, r)];
            grad_check(|g, v| { let y = g.matmul(v[0], v[1])?; project(g, y, seed) }, &p, eps)
        }
        "matmul_bt" => {
            let p = [random_tensor(vec![3, 4], 1.0, r), random_tensor(vec![5, 4], 1.0, r)];
            grad_check(|g, v| { let y = g.matmul_bt(v[0], v[1])?; project(g, y, seed) }, &p, eps)
        }
        "gelu" => {
            let p = [random_tensor(vec![4, 3], 2.0, r)];
            grad_check(|g, v| { let y = g.gelu(v[0]); project(g, y, seed) }, &p, eps)
        }
        "layer_norm" => {
            let p = [
                random_tensor(vec![3, 6], 1.0, r),
                random_tensor(vec![6], 1.0, r),
                random_tensor(vec![6], 1.0, r),
            ];
            grad_check(
                |g, v| { let y = g.layer_norm(v[0], v[1], v[2], 1e-5)?; project(g, y, seed) },
                &p,
                eps,
            )
        }
        "embedding" => {
            let p = [random_tensor(vec![3, 2], 1.0, r)];
            let ids = [2, 0, 2, 1, 2];
            grad_check(|g, v| { let y = g.embedding(v[0], &ids)?; project(g, y, seed) }, &p, eps)
        }
        "attention_causal" | "attention_bidirectional" => {
            let (batch, seq, dim) = (2, 4, 6);
            let p = [
                random_tensor(vec![batch * seq, dim], 1.0, r),
                random_tensor(vec![batch * seq, dim], 1.0, r),
                random_tensor(vec![batch * seq, dim], 1.0, r),
            ];
            let spec = AttentionSpec {
                batch,
                seq,
                heads: 2,
                causal: op == "attention_causal",
                key_mask: vec![true, true, true, true, true, true, false, false],
            };
            grad_check(
                |g, v| { let y = g.attention(v[0], v[1], v[2], spec.clone())?; project(g, y, seed) },
                &p,
                eps,
            )
        }
        "cross_entropy" => {
            let p = [random_tensor(vec![4, 5], 2.0, r)];
            let targets = [3, -1, 0, 4];
            grad_check(|g, v| g.cross_entropy(v[0], &targets), &p, eps)
        }
        "dropout" => {
            let p = [random_tensor(vec![4, 5], 1.0, r)];
            grad_check(
                |g, v| {
                    let mut mask_rng = Rng::seed_from_u64(seed);
                    let y = g.dropout(v[0], 0.3, &mut mask_rng);
                    project(g, y, seed)
                },
                &p,
                eps,
            )
        }
        _ => Err(XlmError::InvalidArgument(format!("no gradient check for {op:?}"))),
    }
}
