//! Central finite differences against the tape's reverse pass.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Tape, TapeError, Tensor, Var};

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Gradients of `f` with respect to each input, from one reverse pass.
pub fn analytic<F>(inputs: &[Tensor], f: F) -> Result<Vec<Tensor>, TapeError>
where
    F: Fn(&Tape, &[Var]) -> Result<Var, TapeError>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&tape, &vars)?;
    let g = tape.backward(loss)?;
    Ok(vars.iter().zip(inputs).map(|(&v, t)| g.get_or_zero(v, t.shape())).collect())
}

/// `f` evaluated on constants only.
pub fn evaluate<F>(inputs: &[Tensor], f: &F) -> Result<f64, TapeError>
where
    F: Fn(&Tape, &[Var]) -> Result<Var, TapeError>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let loss = f(&tape, &vars)?;
    if tape.shape(loss) != [1, 1] {
        return Err(TapeError::NotScalar(tape.shape(loss)));
    }
    Ok(tape.item(loss))
}

/// Central differences with step `h` for every input entry.
pub fn numeric<F>(inputs: &[Tensor], h: f64, f: F) -> Result<Vec<Tensor>, TapeError>
where
    F: Fn(&Tape, &[Var]) -> Result<Var, TapeError>,
{
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for k in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[k].rows(), inputs[k].cols());
        for e in 0..inputs[k].len() {
            let x0 = inputs[k].data()[e];
            work[k].data_mut()[e] = x0 + h;
            let up = evaluate(&work, &f)?;
            work[k].data_mut()[e] = x0 - h;
            let down = evaluate(&work, &f)?;
            work[k].data_mut()[e] = x0;
            g.data_mut()[e] = (up - down) / (2.0 * h);
        }
        out.push(g);
    }
    Ok(out)
}

/// Largest entrywise relative error between two gradient sets.
pub fn max_rel_error(a: &[Tensor], b: &[Tensor], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.data().iter().zip(y.data()).map(move |(&p, &q)| rel_error(p, q, floor)))
        .fold(0.0, f64::max)
}

/// Primitives covered by [`check_primitives`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Primitive {
    MatMul,
    Transpose,
    Add,
    Sub,
    Mul,
    Scale,
    AddRow,
    ConcatCols,
    ConcatRows,
    SliceCols,
    GatherRows,
    Reshape,
    MeanRows,
    Sum,
    Relu,
    Tanh,
    Exp,
    Log,
    SoftmaxMasked,
    LogSoftmaxMasked,
    BatchNorm,
    BatchNormEval,
    Pick,
}

impl Primitive {
    pub const ALL: [Primitive; 23] = [
        Primitive::MatMul,
        Primitive::Transpose,
        Primitive::Add,
        Primitive::Sub,
        Primitive::Mul,
        Primitive::Scale,
        Primitive::AddRow,
        Primitive::ConcatCols,
        Primitive::ConcatRows,
        Primitive::SliceCols,
        Primitive::GatherRows,
        Primitive::Reshape,
        Primitive::MeanRows,
        Primitive::Sum,
        Primitive::Relu,
        Primitive::Tanh,
        Primitive::Exp,
        Primitive::Log,
        Primitive::SoftmaxMasked,
        Primitive::LogSoftmaxMasked,
        Primitive::BatchNorm,
        Primitive::BatchNormEval,
        Primitive::Pick,
    ];
}

/// Step and floor used by the primitive checks.
pub const PRIMITIVE_H: f64 = 1e-5;
pub const PRIMITIVE_FLOOR: f64 = 1e-3;

fn uniform<R: Rng>(rng: &mut R, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect())
}

/// Entries bounded away from zero, for ReLU's kink.
fn away_from_zero<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    Tensor::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| {
                let m = rng.gen_range(0.1..2.0);
                if rng.gen::<bool>() {
                    m
                } else {
                    -m
                }
            })
            .collect(),
    )
}

/// Weighted sum `sum(w * y)` with fixed random weights, so every output entry matters.
fn weighted(t: &Tape, y: Var, w: &Tensor) -> Result<Var, TapeError> {
    let wv = t.constant(w.clone());
    Ok(t.sum(t.mul(y, wv)?))
}

/// One random case; returns the largest relative error.
pub fn check_primitive<R: Rng>(p: Primitive, rng: &mut R) -> Result<f64, TapeError> {
    let r = rng.gen_range(2..5);
    let c = rng.gen_range(2..5);
    let k = rng.gen_range(2..5);
    let w_rc = uniform(rng, r, c, -1.0, 1.0);
    let (inputs, err) = match p {
        Primitive::MatMul => {
            let inputs = [uniform(rng, r, k, -1.0, 1.0), uniform(rng, k, c, -1.0, 1.0)];
            let w = w_rc.clone();
            let f = move |t: &Tape, v: &[Var]| weighted(t, t.matmul(v[0], v[1])?, &w);
            (inputs.to_vec(), grad_err(&inputs, f)?)
        }
        Primitive::Transpose => {
            let inputs = [uniform(rng, c, r, -1.0, 1.0)];
            let w = w_rc.clone();
            let f = move |t: &Tape, v: &[Var]| weighted(t, t.transpose(v[0]), &w);
            (inputs.to_vec(), grad_err(&inputs, f)?)
        }
        Primitive::Add | Primitive::Sub | Primitive::Mul => {
            let inputs = [uniform(rng, r, c, -2.0, 2.0), uniform(rng, r, c, -2.0, 2.0)];
            let w = w_rc.clone();
            let f = move |t: &Tape, v: &[Var]| {
                let y = match p {
                    Primitive::Add => t.add(v[0], v[1])?,
                    Primitive::Sub => t.sub(v[0], v[1])?,
                    _ => t.mul(v[0], v[1])?,
                };
                weighted(t, y, &w)
            };
            (inputs.to_vec(), grad_err(&inputs, f)?)
        }
        Primitive::Scale => {
            let s = rng.gen_range(-3.0..3.0);
            let inputs = [uniform(rng, r, c, -2.0, 2.0)];
            let w = w_rc.clone();
            let f = move |t: &Tape, v: &[Var]| weighted(t, t.scale(v[0], s), &w);
            (inputs.to_vec(), grad_err(&inputs, f)?)
        }
        Primitive::AddRow => {
            let inputs = [uniform(rng, r, c, -2.0, 2.0), uniform(rng, 1, c, -2.0, 2.0)];
            let w = w_rc.clone();
            let f = move |t: &Tape, v: &[Var]| weighted(t, t.add_row(v[0], v[1])?, &w);
            (inputs.to_vec(), grad_err(&inputs, f)?)
        }
        Primitive::ConcatCols => {
            let inputs = [uniform(rng, r, c, -1.0, 1.0), uniform(rng, r, k, -1.0, 1.0)];
            let w = uniform(rng, r, c + k, -1.0, 1.0);
            let f = move |t: &Tape, v: &[Var]| weighted(t, t.concat_cols(&[v[0], v[1]])?, &w);
            (inputs.to_vec(), grad_err(&inputs, f)?)
        }
        Primitive::ConcatRows => {
            let inputs = [uniform(rng, r, c, -1.0, 1.0), uniform(rng, k, c, -1.0, 1.0)];
            let w = uniform(rng, r + k, c, -1.0, 1.0);
            let f = move |t: &Tape, v: &[Var]| weighted(t, t.concat_rows(&[v[0], v[1]])?, &w);
            (inputs.to_vec(), grad_err(&inputs, f)?)
        }
        Primitive::SliceCols => {
            let lo = rng.gen_range(0..c);
            let hi = rng.gen_range(lo + 1..=c);
            let inputs = [uniform(rng, r, c, -1.0, 1.0)];
            let w = uniform(rng, r, hi - lo, -1.0, 1.0);
            let f = move |t: &Tape, v: &[Var]| weighted(t, t.slice_cols(v[0], lo, hi)?, &w);
            (inputs.to_vec(), grad_err(&inputs, f)?)
        }
        Primitive::GatherRows => {
            let idx: Vec<usize> = (0..k + 1).map(|_| rng.gen_range(0..r)).collect();
            let inputs = [uniform(rng, r, c, -1.0, 1.0)];
            let w = uniform(rng, idx.len(), c, -1.0, 1.0);
            let f = move |t: &Tape, v: &[Var]| weighted(t, t.gather_rows(v[0], &idx)?, &w);
            (inputs.to_vec(), grad_err(&inputs, f)?)
        }
        Primitive::Reshape => {
            let inputs = [uniform(rng, r, c, -1.0, 1.0)];
            let w = uniform(rng, c, r, -1.0, 1.0);
            let f = move |t: &Tape, v: &[Var]| weighted(t, t.reshape(v[0], c, r)?, &w);
            (inputs.to_vec(), grad_err(&inputs, f)?)
        }
        Primitive::MeanRows => {
            let inputs = [uniform(rng, r, c, -1.0, 1.0)];
            let w = uniform(rng, 1, c, -1.0, 1.0);
            let f = move |t: &Tape, v: &[Var]| weighted(t, t.mean_rows(v[0])?, &w);
            (inputs.to_vec(), grad_err(&inputs, f)?)
        }
        Primitive::Sum => {
            let inputs = [uniform(rng, r, c, -1.0, 1.0)];
            let f = |t: &Tape, v: &[Var]| Ok(t.scale(t.sum(v[0]), 0.7));
            (inputs.to_vec(), grad_err(&inputs, f)?)
        }
        Primitive::Relu | Primitive::Tanh | Primitive::Exp | Primitive::Log => {
            let x = match p {
                Primitive::Relu => away_from_zero(rng, r, c),
                Primitive::Log => uniform(rng, r, c, 0.2, 3.0),
                _ => uniform(rng, r, c, -2.0, 2.0),
            };
            let inputs = [x];
            let w = w_rc.clone();
            let f = move |t: &Tape, v: &[Var]| {
                let y = match p {
                    Primitive::Relu => t.relu(v[0]),
                    Primitive::Tanh => t.tanh(v[0]),
                    Primitive::Exp => t.exp(v[0]),
                    _ => t.log(v[0]),
                };
                weighted(t, y, &w)
            };
            (inputs.to_vec(), grad_err(&inputs, f)?)
        }
        Primitive::SoftmaxMasked | Primitive::LogSoftmaxMasked => {
            let mut keep: Vec<bool> = (0..r * c).map(|_| rng.gen_bool(0.7)).collect();
            for row in 0..r {
                keep[row * c + rng.gen_range(0..c)] = true;
            }
            let inputs = [uniform(rng, r, c, -3.0, 3.0)];
            let w = w_rc.clone();
            let log = p == Primitive::LogSoftmaxMasked;
            let f = move |t: &Tape, v: &[Var]| {
                let y = if log {
                    t.log_softmax_masked(v[0], &keep)?
                } else {
                    t.softmax_masked(v[0], &keep)?
                };
                // masked log-probabilities are -inf; read kept entries only
                let mut picks = Vec::new();
                for e in 0..keep.len() {
                    if keep[e] {
                        let (i, j) = (e / c, e % c);
                        picks.push(t.scale(t.pick(y, i, j)?, w.get(i, j)));
                    }
                }
                Ok(t.sum(t.concat_cols(&picks)?))
            };
            (inputs.to_vec(), grad_err(&inputs, f)?)
        }
        Primitive::BatchNorm | Primitive::BatchNormEval => {
            let rows = r + 1;
            let mut x = Tensor::zeros(rows, c);
            for col in 0..c {
                let sd = rng.gen_range(1.0..10.0);
                let mu = rng.gen_range(-5.0..5.0);
                for row in 0..rows {
                    x.set(row, col, mu + sd * rng.gen_range(-1.7..1.7));
                }
            }
            let inputs = [x, uniform(rng, 1, c, 0.5, 1.5), uniform(rng, 1, c, -1.0, 1.0)];
            let w = uniform(rng, rows, c, -1.0, 1.0);
            let rm: Vec<f64> = (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let rv: Vec<f64> = (0..c).map(|_| rng.gen_range(0.5..4.0)).collect();
            let eval = p == Primitive::BatchNormEval;
            let f = move |t: &Tape, v: &[Var]| {
                let y = if eval {
                    t.batch_norm_eval(v[0], v[1], v[2], &rm, &rv, 1e-6)?
                } else {
                    t.batch_norm(v[0], v[1], v[2], 1e-6)?
                };
                weighted(t, y, &w)
            };
            (inputs.to_vec(), grad_err(&inputs, f)?)
        }
        Primitive::Pick => {
            let (i, j) = (rng.gen_range(0..r), rng.gen_range(0..c));
            let inputs = [uniform(rng, r, c, -1.0, 1.0)];
            let f = move |t: &Tape, v: &[Var]| Ok(t.scale(t.pick(v[0], i, j)?, 1.3));
            (inputs.to_vec(), grad_err(&inputs, f)?)
        }
    };
    debug_assert!(!inputs.is_empty());
    Ok(err)
}

fn grad_err<F>(inputs: &[Tensor], f: F) -> Result<f64, TapeError>
where
    F: Fn(&Tape, &[Var]) -> Result<Var, TapeError>,
{
    let a = analytic(inputs, &f)?;
    let n = numeric(inputs, PRIMITIVE_H, &f)?;
    Ok(max_rel_error(&a, &n, PRIMITIVE_FLOOR))
}

/// Outcome of a randomized sweep over all primitives.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveReport {
    pub cases: usize,
    /// Worst relative error per primitive, in [`Primitive::ALL`] order.
    pub worst: Vec<(Primitive, f64)>,
}

impl PrimitiveReport {
    pub fn max_error(&self) -> f64 {
        self.worst.iter().map(|w| w.1).fold(0.0, f64::max)
    }
}

/// `cases` random checks cycling through every primitive.
pub fn check_primitives(cases: usize, seed: u64) -> Result<PrimitiveReport, TapeError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: Vec<(Primitive, f64)> = Primitive::ALL.iter().map(|&p| (p, 0.0)).collect();
    for k in 0..cases {
        let idx = k % Primitive::ALL.len();
        let e = check_primitive(Primitive::ALL[idx], &mut rng)?;
        worst[idx].1 = worst[idx].1.max(e);
    }
    Ok(PrimitiveReport { cases, worst })
}
