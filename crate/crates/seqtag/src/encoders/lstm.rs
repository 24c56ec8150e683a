//! Bidirectional LSTM with hand-written backpropagation through time.
//!
//! Gate weights are fused: `w_input` is input_dim x 4h, `w_hidden` is
//! h x 4h, `bias` is 1 x 4h, with gate columns ordered
//! [input, forget, candidate, output]. Initial hidden and cell states
//! are zero. The backward direction is the same recurrence run on the
//! reversed sequence; output row t is [forward h_t ; backward h_t].

use crate::error::{Error, Result};
use crate::numeric::{outer_add, row_times_matrix_add, row_times_matrix_t_add, Matrix};
use rand::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub w_input: Matrix,
    pub w_hidden: Matrix,
    pub bias: Matrix,
}

impl LstmParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        LstmParams {
            w_input: Matrix::zeros(input_dim, 4 * hidden_dim),
            w_hidden: Matrix::zeros(hidden_dim, 4 * hidden_dim),
            bias: Matrix::zeros(1, 4 * hidden_dim),
        }
    }

    /// Weights uniform in [-scale, scale], biases zero.
    pub fn init(input_dim: usize, hidden_dim: usize, rng: &mut impl Rng, scale: f64) -> Self {
        let mut p = LstmParams::zeros(input_dim, hidden_dim);
        for v in p.w_input.data_mut() {
            *v = rng.random_range(-scale..=scale);
        }
        for v in p.w_hidden.data_mut() {
            *v = rng.random_range(-scale..=scale);
        }
        p
    }

    fn hidden_dim(&self) -> usize {
        self.w_hidden.rows()
    }

    fn input_dim(&self) -> usize {
        self.w_input.rows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiLstmParams {
    pub forward: LstmParams,
    pub backward: LstmParams,
}

impl BiLstmParams {
    pub fn init(input_dim: usize, hidden_dim: usize, rng: &mut impl Rng, scale: f64) -> Self {
        BiLstmParams {
            forward: LstmParams::init(input_dim, hidden_dim, rng, scale),
            backward: LstmParams::init(input_dim, hidden_dim, rng, scale),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.forward.hidden_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.forward.w_input.rows()
    }

    /// Combined output width: both directions concatenated.
    pub fn output_dim(&self) -> usize {
        2 * self.hidden_dim()
    }
}

/// Same shapes as [`LstmParams`], used as a gradient accumulator.
#[derive(Clone, Debug)]
pub struct LstmGrads {
    pub w_input: Matrix,
    pub w_hidden: Matrix,
    pub bias: Matrix,
}

impl LstmGrads {
    pub fn zeros_like(p: &LstmParams) -> Self {
        LstmGrads {
            w_input: Matrix::zeros(p.w_input.rows(), p.w_input.cols()),
            w_hidden: Matrix::zeros(p.w_hidden.rows(), p.w_hidden.cols()),
            bias: Matrix::zeros(1, p.bias.cols()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BiLstmGrads {
    pub forward: LstmGrads,
    pub backward: LstmGrads,
}

/// Everything the backward pass needs from one directional run, in the
/// time order the direction was executed.
#[derive(Clone, Debug)]
pub(crate) struct LstmTrace {
    gates: Matrix,  // m x 4h, post-activation [i f g o]
    cell: Matrix,   // m x h
    tanh_c: Matrix, // m x h
    hidden: Matrix, // m x h
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One direction over `x` in row order. Returns hidden states and trace.
fn lstm_run(x: &Matrix, p: &LstmParams) -> (Matrix, LstmTrace) {
    let m = x.rows();
    let h = p.hidden_dim();
    let mut gates = Matrix::zeros(m, 4 * h);
    let mut cell = Matrix::zeros(m, h);
    let mut tanh_c = Matrix::zeros(m, h);
    let mut hidden = Matrix::zeros(m, h);

    let mut h_prev = vec![0.0; h];
    let mut c_prev = vec![0.0; h];
    for t in 0..m {
        let mut pre = p.bias.row(0).to_vec();
        row_times_matrix_add(x.row(t), &p.w_input, &mut pre);
        row_times_matrix_add(&h_prev, &p.w_hidden, &mut pre);

        let g_row = gates.row_mut(t);
        for j in 0..h {
            g_row[j] = sigmoid(pre[j]); // input
            g_row[h + j] = sigmoid(pre[h + j]); // forget
            g_row[2 * h + j] = pre[2 * h + j].tanh(); // candidate
            g_row[3 * h + j] = sigmoid(pre[3 * h + j]); // output
        }
        for j in 0..h {
            let c = g_row[h + j] * c_prev[j] + g_row[j] * g_row[2 * h + j];
            cell.set(t, j, c);
            let tc = c.tanh();
            tanh_c.set(t, j, tc);
            hidden.set(t, j, g_row[3 * h + j] * tc);
        }
        h_prev.copy_from_slice(hidden.row(t));
        c_prev.copy_from_slice(cell.row(t));
    }
    let trace = LstmTrace {
        gates,
        cell,
        tanh_c,
        hidden: hidden.clone(),
    };
    (hidden, trace)
}

/// Backpropagation through one directional run. `d_hidden` holds the
/// loss gradient at each hidden-state row; returns parameter gradients
/// and the gradient at the inputs.
fn lstm_backprop(
    x: &Matrix,
    p: &LstmParams,
    trace: &LstmTrace,
    d_hidden: &Matrix,
) -> (LstmGrads, Matrix) {
    let m = x.rows();
    let h = p.hidden_dim();
    let mut grads = LstmGrads::zeros_like(p);
    let mut d_x = Matrix::zeros(m, p.input_dim());

    let mut dh_carry = vec![0.0; h];
    let mut dc_carry = vec![0.0; h];
    let mut d_pre = vec![0.0; 4 * h];
    for t in (0..m).rev() {
        let g = trace.gates.row(t);
        for j in 0..h {
            let dh = d_hidden.get(t, j) + dh_carry[j];
            let (i, f, cand, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
            let tc = trace.tanh_c.get(t, j);
            let dc = dc_carry[j] + dh * o * (1.0 - tc * tc);
            let d_o = dh * tc;
            let d_i = dc * cand;
            let d_cand = dc * i;
            let c_prev = if t > 0 { trace.cell.get(t - 1, j) } else { 0.0 };
            let d_f = dc * c_prev;

            d_pre[j] = d_i * i * (1.0 - i);
            d_pre[h + j] = d_f * f * (1.0 - f);
            d_pre[2 * h + j] = d_cand * (1.0 - cand * cand);
            d_pre[3 * h + j] = d_o * o * (1.0 - o);
            dc_carry[j] = dc * f;
        }

        outer_add(x.row(t), &d_pre, &mut grads.w_input);
        if t > 0 {
            outer_add(trace.hidden.row(t - 1), &d_pre, &mut grads.w_hidden);
        }
        for (b, &dp) in grads.bias.row_mut(0).iter_mut().zip(d_pre.iter()) {
            *b += dp;
        }
        row_times_matrix_t_add(&d_pre, &p.w_input, d_x.row_mut(t));
        dh_carry.fill(0.0);
        row_times_matrix_t_add(&d_pre, &p.w_hidden, &mut dh_carry);
    }
    (grads, d_x)
}

fn check_input(x: &Matrix, p: &BiLstmParams) -> Result<()> {
    if x.rows() == 0 {
        return Err(Error::Shape("BiLSTM input must have at least one row".into()));
    }
    if x.cols() != p.input_dim() {
        return Err(Error::Shape(format!(
            "BiLSTM expects input width {} but got {}",
            p.input_dim(),
            x.cols()
        )));
    }
    Ok(())
}

fn reversed_rows(x: &Matrix) -> Matrix {
    Matrix::from_fn(x.rows(), x.cols(), |i, j| x.get(x.rows() - 1 - i, j))
}

#[derive(Clone, Debug)]
pub(crate) struct BiLstmTrace {
    fwd: LstmTrace,
    bwd: LstmTrace, // in reversed time order
}

pub(crate) fn bilstm_forward_cached(
    x: &Matrix,
    p: &BiLstmParams,
) -> Result<(Matrix, BiLstmTrace)> {
    check_input(x, p)?;
    let m = x.rows();
    let h = p.hidden_dim();
    let (h_fwd, fwd) = lstm_run(x, &p.forward);
    let (h_bwd_rev, bwd) = lstm_run(&reversed_rows(x), &p.backward);
    let mut out = Matrix::zeros(m, 2 * h);
    for t in 0..m {
        out.row_mut(t)[..h].copy_from_slice(h_fwd.row(t));
        out.row_mut(t)[h..].copy_from_slice(h_bwd_rev.row(m - 1 - t));
    }
    Ok((out, BiLstmTrace { fwd, bwd }))
}

/// Contextual encoding: row t is the forward hidden state at t followed
/// by the backward hidden state at t.
pub fn bilstm_forward(x: &Matrix, p: &BiLstmParams) -> Result<Matrix> {
    Ok(bilstm_forward_cached(x, p)?.0)
}

/// Gradients of a scalar loss with respect to both directions' weights
/// and the inputs, given the loss gradient at the concatenated output.
pub(crate) fn bilstm_backward(
    x: &Matrix,
    p: &BiLstmParams,
    trace: &BiLstmTrace,
    d_out: &Matrix,
) -> Result<(BiLstmGrads, Matrix)> {
    check_input(x, p)?;
    let m = x.rows();
    let h = p.hidden_dim();
    if d_out.shape() != (m, 2 * h) {
        return Err(Error::Shape(format!(
            "output gradient shape {:?} does not match ({m}, {})",
            d_out.shape(),
            2 * h
        )));
    }
    let d_fwd = Matrix::from_fn(m, h, |t, j| d_out.get(t, j));
    // Reversed rows so the gradient lines up with the reversed-time trace.
    let d_bwd_rev = Matrix::from_fn(m, h, |t, j| d_out.get(m - 1 - t, h + j));

    let (g_fwd, dx_fwd) = lstm_backprop(x, &p.forward, &trace.fwd, &d_fwd);
    let x_rev = reversed_rows(x);
    let (g_bwd, dx_bwd_rev) = lstm_backprop(&x_rev, &p.backward, &trace.bwd, &d_bwd_rev);

    let mut d_x = dx_fwd;
    for t in 0..m {
        for j in 0..x.cols() {
            let v = d_x.get(t, j) + dx_bwd_rev.get(m - 1 - t, j);
            d_x.set(t, j, v);
        }
    }
    Ok((
        BiLstmGrads {
            forward: g_fwd,
            backward: g_bwd,
        },
        d_x,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::finite_diff_grad;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mat(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    /// Small fixed parameters: every block filled by a distinct affine
    /// ramp so no two weights coincide.
    fn fixed_params() -> BiLstmParams {
        let ramp = |base: f64, step: f64| {
            move |i: usize, j: usize| base + step * (i as f64) - 0.013 * (j as f64)
        };
        BiLstmParams {
            forward: LstmParams {
                w_input: Matrix::from_fn(2, 8, ramp(0.05, 0.021)),
                w_hidden: Matrix::from_fn(2, 8, ramp(-0.04, 0.017)),
                bias: Matrix::from_fn(1, 8, ramp(0.01, 0.0)),
            },
            backward: LstmParams {
                w_input: Matrix::from_fn(2, 8, ramp(-0.06, 0.019)),
                w_hidden: Matrix::from_fn(2, 8, ramp(0.03, -0.023)),
                bias: Matrix::from_fn(1, 8, ramp(-0.02, 0.0)),
            },
        }
    }

    fn fixed_input() -> Matrix {
        mat(&[&[0.5, -0.3], &[0.1, 0.2], &[-0.4, 0.6]])
    }

    #[test]
    fn zero_params_give_zero_output() {
        let p = BiLstmParams {
            forward: LstmParams::zeros(3, 2),
            backward: LstmParams::zeros(3, 2),
        };
        let x = Matrix::from_fn(4, 3, |i, j| (i + j) as f64);
        let out = bilstm_forward(&x, &p).unwrap();
        assert_eq!(out.shape(), (4, 4));
        for &v in out.data() {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn single_token_output_has_combined_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = BiLstmParams::init(3, 5, &mut rng, 0.1);
        let x = Matrix::from_fn(1, 3, |_, j| j as f64 * 0.1);
        let out = bilstm_forward(&x, &p).unwrap();
        assert_eq!(out.shape(), (1, 10));
        // Both directions see the same single input, but with different
        // weights; both halves must be populated.
        assert!(out.row(0)[..5].iter().any(|&v| v != 0.0));
        assert!(out.row(0)[5..].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn shape_mismatch_is_error() {
        let p = BiLstmParams {
            forward: LstmParams::zeros(3, 2),
            backward: LstmParams::zeros(3, 2),
        };
        assert!(matches!(
            bilstm_forward(&Matrix::zeros(2, 4), &p),
            Err(Error::Shape(_))
        ));
    }

    // Frozen against a straight-line unrolled implementation of the
    // same recurrence (scalar arithmetic, no loops), computed once.
    #[test]
    fn fixed_case_matches_unrolled_oracle() {
        let out = bilstm_forward(&fixed_input(), &fixed_params()).unwrap();
        let expected = [
            [
                -0.011757287714263737,
                -0.015267181531804144,
                -0.03787216566074333,
                -0.042940184027169336,
            ],
            [
                -0.014756034818367778,
                -0.02027598553886046,
                -0.03212688118881538,
                -0.03680861558198629,
            ],
            [
                -0.01408129437388251,
                -0.020367081435546462,
                -0.019309780063707576,
                -0.022544691009341335,
            ],
        ];
        assert_eq!(out.shape(), (3, 4));
        for (t, row) in expected.iter().enumerate() {
            for (j, &e) in row.iter().enumerate() {
                assert_abs_diff_eq!(out.get(t, j), e, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn reversal_with_direction_swap_reverses_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let p = BiLstmParams::init(3, 4, &mut rng, 0.2);
        let x = Matrix::from_fn(5, 3, |_, _| rng.random_range(-1.0..1.0));

        let swapped = BiLstmParams {
            forward: p.backward.clone(),
            backward: p.forward.clone(),
        };
        let x_rev = reversed_rows(&x);
        let out = bilstm_forward(&x, &p).unwrap();
        let out_swapped = bilstm_forward(&x_rev, &swapped).unwrap();

        let (m, h) = (5, 4);
        for t in 0..m {
            for j in 0..h {
                assert_abs_diff_eq!(
                    out_swapped.get(t, j),
                    out.get(m - 1 - t, h + j),
                    epsilon = 1e-12
                );
                assert_abs_diff_eq!(
                    out_swapped.get(t, h + j),
                    out.get(m - 1 - t, j),
                    epsilon = 1e-12
                );
            }
        }
    }

    /// Weighted sum of all outputs as a scalar loss; weights break the
    /// symmetry so every gradient entry is exercised.
    fn weighted_loss(out: &Matrix) -> f64 {
        out.data()
            .iter()
            .enumerate()
            .map(|(idx, &v)| (0.3 + 0.1 * idx as f64) * v)
            .sum()
    }

    fn weighted_loss_grad(rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |i, j| 0.3 + 0.1 * (i * cols + j) as f64)
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let p = BiLstmParams::init(2, 3, &mut rng, 0.3);
        let x = Matrix::from_fn(4, 2, |_, _| rng.random_range(-1.0..1.0));

        let (out, trace) = bilstm_forward_cached(&x, &p).unwrap();
        let d_out = weighted_loss_grad(out.rows(), out.cols());
        let (grads, d_x) = bilstm_backward(&x, &p, &trace, &d_out).unwrap();

        let eps = 1e-5;
        let fd_x = finite_diff_grad(
            |q| weighted_loss(&bilstm_forward(q, &p).unwrap()),
            &x,
            eps,
        );
        for (a, f) in d_x.data().iter().zip(fd_x.data()) {
            assert_abs_diff_eq!(a, f, epsilon = 1e-7);
        }

        // Each parameter block, both directions.
        type WithBlock = Box<dyn Fn(Matrix) -> BiLstmParams>;
        let blocks: [(&Matrix, WithBlock); 6] = [
            (&p.forward.w_input, {
                let p = p.clone();
                Box::new(move |m| {
                    let mut q = p.clone();
                    q.forward.w_input = m;
                    q
                })
            }),
            (&p.forward.w_hidden, {
                let p = p.clone();
                Box::new(move |m| {
                    let mut q = p.clone();
                    q.forward.w_hidden = m;
                    q
                })
            }),
            (&p.forward.bias, {
                let p = p.clone();
                Box::new(move |m| {
                    let mut q = p.clone();
                    q.forward.bias = m;
                    q
                })
            }),
            (&p.backward.w_input, {
                let p = p.clone();
                Box::new(move |m| {
                    let mut q = p.clone();
                    q.backward.w_input = m;
                    q
                })
            }),
            (&p.backward.w_hidden, {
                let p = p.clone();
                Box::new(move |m| {
                    let mut q = p.clone();
                    q.backward.w_hidden = m;
                    q
                })
            }),
            (&p.backward.bias, {
                let p = p.clone();
                Box::new(move |m| {
                    let mut q = p.clone();
                    q.backward.bias = m;
                    q
                })
            }),
        ];
        let analytic = [
            &grads.forward.w_input,
            &grads.forward.w_hidden,
            &grads.forward.bias,
            &grads.backward.w_input,
            &grads.backward.w_hidden,
            &grads.backward.bias,
        ];
        for ((param, rebuild), grad) in blocks.iter().zip(analytic) {
            let fd = finite_diff_grad(
                |q| weighted_loss(&bilstm_forward(&x, &rebuild(q.clone())).unwrap()),
                param,
                eps,
            );
            for (a, f) in grad.data().iter().zip(fd.data()) {
                assert_abs_diff_eq!(a, f, epsilon = 1e-7);
            }
        }
    }
}
