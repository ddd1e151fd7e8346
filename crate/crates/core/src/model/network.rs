//! Forward pass, cross-entropy loss and backpropagation.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2, Axis, Zip};

use super::{Activation, Layer, NetworkSpec, ParamVector, Shape};
use crate::error::{Error, Result};

/// Lower clamp for predicted probabilities inside the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub gradient: ParamVector,
}

struct Trace {
    outputs: Vec<Array2<f64>>,
    // Flat input index of the winning element for each pooled output, per
    // MaxPool layer (empty for other layers).
    argmax: Vec<Vec<u32>>,
}

fn image_dims(s: Shape) -> (usize, usize, usize) {
    match s {
        Shape::Image {
            channels,
            height,
            width,
        } => (channels, height, width),
        Shape::Flat(_) => unreachable!("validated at construction"),
    }
}

struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }

    /// `cols[(c, ki, kj), (oh, ow)] = x[c, oh + ki - pad, ow + kj - pad]`.
    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let np = self.positions();
        for c in 0..self.cin {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = ((c * self.kh + ki) * self.kw + kj) * np;
                    for oh in 0..self.ho {
                        let ih = (oh + ki) as isize - self.pad as isize;
                        for ow in 0..self.wo {
                            let iw = (ow + kj) as isize - self.pad as isize;
                            cols[row + oh * self.wo + ow] = if ih >= 0
                                && iw >= 0
                                && (ih as usize) < self.h
                                && (iw as usize) < self.w
                            {
                                x[(c * self.h + ih as usize) * self.w + iw as usize]
                            } else {
                                0.0
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Self::im2col`], accumulating into `dx`.
    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let np = self.positions();
        for c in 0..self.cin {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = ((c * self.kh + ki) * self.kw + kj) * np;
                    for oh in 0..self.ho {
                        let ih = (oh + ki) as isize - self.pad as isize;
                        if ih < 0 || ih as usize >= self.h {
                            continue;
                        }
                        for ow in 0..self.wo {
                            let iw = (ow + kj) as isize - self.pad as isize;
                            if iw < 0 || iw as usize >= self.w {
                                continue;
                            }
                            dx[(c * self.h + ih as usize) * self.w + iw as usize] +=
                                cols[row + oh * self.wo + ow];
                        }
                    }
                }
            }
        }
    }
}

fn activate(a: &mut Array2<f64>, act: Activation) {
    if act != Activation::Identity {
        a.mapv_inplace(|v| act.apply(v));
    }
}

fn apply_derivative(d: &mut Array2<f64>, out: &Array2<f64>, act: Activation) {
    if act != Activation::Identity {
        Zip::from(d)
            .and(out)
            .for_each(|g, &a| *g *= act.derivative_from_output(a));
    }
}

/// Row-wise softmax with max subtraction.
pub(crate) fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    p
}

impl NetworkSpec {
    fn check_inputs(&self, params: &ParamVector, x: ArrayView2<f64>) -> Result<()> {
        self.check_params(params)?;
        if x.ncols() != self.input_len() {
            return Err(Error::Dimension(format!(
                "input has {} features, network expects {}",
                x.ncols(),
                self.input_len()
            )));
        }
        Ok(())
    }

    fn check_labels(&self, x: ArrayView2<f64>, labels: &[usize]) -> Result<()> {
        if labels.len() != x.nrows() {
            return Err(Error::Dimension(format!(
                "{} samples but {} labels",
                x.nrows(),
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::InvalidArgument("empty sample set".into()));
        }
        let k = self.n_classes();
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {k} classes"
            )));
        }
        Ok(())
    }

    fn run(&self, params: &ParamVector, x: ArrayView2<f64>) -> Trace {
        let p = params.as_slice();
        let n = x.nrows();
        let mut outputs: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        let mut argmax = Vec::with_capacity(self.layers.len());

        for (l, layer) in self.layers.iter().enumerate() {
            let input = if l == 0 { x } else { outputs[l - 1].view() };
            let in_shape = if l == 0 { self.input } else { self.shapes[l - 1] };
            let slot = &self.slots[l];
            let mut winners = Vec::new();
            let out = match *layer {
                Layer::Dense {
                    inputs,
                    outputs: nout,
                    activation,
                } => {
                    let w = ArrayView2::from_shape((inputs, nout), &p[slot.weights.clone()])
                        .expect("slot size");
                    let b = ndarray::ArrayView1::from(&p[slot.biases.clone()]);
                    let mut z = input.dot(&w);
                    z += &b;
                    activate(&mut z, activation);
                    z
                }
                Layer::Conv {
                    out_channels,
                    kernel_h,
                    kernel_w,
                    padding,
                    activation,
                    ..
                } => {
                    let (cin, h, w) = image_dims(in_shape);
                    let (_, ho, wo) = image_dims(self.shapes[l]);
                    let g = ConvGeom {
                        cin,
                        h,
                        w,
                        kh: kernel_h,
                        kw: kernel_w,
                        pad: padding,
                        ho,
                        wo,
                    };
                    let wmat = ArrayView2::from_shape(
                        (out_channels, g.patch()),
                        &p[slot.weights.clone()],
                    )
                    .expect("slot size");
                    let bias = &p[slot.biases.clone()];
                    let mut out = Array2::zeros((n, out_channels * g.positions()));
                    let mut cols = Array2::zeros((g.patch(), g.positions()));
                    for (s, mut row) in out.rows_mut().into_iter().enumerate() {
                        let xs = input.row(s);
                        g.im2col(
                            xs.as_slice().expect("contiguous rows"),
                            cols.as_slice_mut().expect("owned"),
                        );
                        let mut os = ArrayViewMut2::from_shape(
                            (out_channels, g.positions()),
                            row.as_slice_mut().expect("contiguous rows"),
                        )
                        .expect("row size");
                        for (c, mut r) in os.rows_mut().into_iter().enumerate() {
                            r.fill(bias[c]);
                        }
                        general_mat_mul(1.0, &wmat, &cols, 1.0, &mut os);
                    }
                    activate(&mut out, activation);
                    out
                }
                Layer::MaxPool { pool_h, pool_w } => {
                    let (c, h, w) = image_dims(in_shape);
                    let (_, ho, wo) = image_dims(self.shapes[l]);
                    let per = c * ho * wo;
                    let mut out = Array2::zeros((n, per));
                    winners = vec![0u32; n * per];
                    for s in 0..n {
                        let xs = input.row(s);
                        let xs = xs.as_slice().expect("contiguous rows");
                        let mut os = out.row_mut(s);
                        for ch in 0..c {
                            for oh in 0..ho {
                                for ow in 0..wo {
                                    let mut best = f64::NEG_INFINITY;
                                    let mut best_at = (ch * h + oh * pool_h) * w + ow * pool_w;
                                    for i in 0..pool_h {
                                        for j in 0..pool_w {
                                            let at =
                                                (ch * h + oh * pool_h + i) * w + ow * pool_w + j;
                                            if xs[at] > best {
                                                best = xs[at];
                                                best_at = at;
                                            }
                                        }
                                    }
                                    let o = (ch * ho + oh) * wo + ow;
                                    os[o] = xs[best_at];
                                    winners[s * per + o] = best_at as u32;
                                }
                            }
                        }
                    }
                    out
                }
                Layer::Flatten => input.to_owned(),
            };
            outputs.push(out);
            argmax.push(winners);
        }
        Trace { outputs, argmax }
    }

    fn weight_sq_norm(&self, params: &ParamVector) -> f64 {
        self.weight_ranges()
            .map(|r| params.as_slice()[r].iter().map(|w| w * w).sum::<f64>())
            .sum()
    }

    /// Pre-softmax outputs of the final layer.
    pub fn logits(&self, params: &ParamVector, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_inputs(params, x)?;
        let x = x.as_standard_layout();
        let mut trace = self.run(params, x.view());
        Ok(trace.outputs.pop().expect("at least one layer"))
    }

    /// Class probabilities, one row per sample.
    pub fn forward(&self, params: &ParamVector, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let logits = self.logits(params, x)?;
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network output".into()));
        }
        Ok(softmax_rows(&logits))
    }

    fn cross_entropy(probs: &Array2<f64>, labels: &[usize]) -> f64 {
        let total: f64 = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| -probs[[i, y]].max(PROB_FLOOR).ln())
            .sum();
        total / labels.len() as f64
    }

    /// Mean cross-entropy plus `reg_lambda / 2 * ||weights||^2` (biases
    /// excluded). Probabilities are clamped to `[PROB_FLOOR, 1]` inside the
    /// log.
    pub fn loss(
        &self,
        params: &ParamVector,
        x: ArrayView2<f64>,
        labels: &[usize],
        reg_lambda: f64,
    ) -> Result<f64> {
        self.check_labels(x, labels)?;
        let probs = self.forward(params, x)?;
        let mut loss = Self::cross_entropy(&probs, labels);
        if reg_lambda != 0.0 {
            loss += 0.5 * reg_lambda * self.weight_sq_norm(params);
        }
        Ok(loss)
    }

    pub fn gradient(
        &self,
        params: &ParamVector,
        x: ArrayView2<f64>,
        labels: &[usize],
        reg_lambda: f64,
    ) -> Result<ParamVector> {
        Ok(self.loss_and_gradient(params, x, labels, reg_lambda)?.gradient)
    }

    /// Loss and its backpropagated gradient from a single forward pass.
    ///
    /// The gradient is that of the unclamped cross-entropy, `(P - Y) / N` at
    /// the logits. Non-finite outputs or gradients are reported as
    /// [`Error::NonFinite`].
    pub fn loss_and_gradient(
        &self,
        params: &ParamVector,
        x: ArrayView2<f64>,
        labels: &[usize],
        reg_lambda: f64,
    ) -> Result<Evaluation> {
        self.check_inputs(params, x)?;
        self.check_labels(x, labels)?;
        let x = x.as_standard_layout();
        let x = x.view();
        let p = params.as_slice();
        let n = x.nrows();
        let trace = self.run(params, x);
        let logits = trace.outputs.last().expect("at least one layer");
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network output".into()));
        }
        let probs = softmax_rows(logits);
        let mut loss = Self::cross_entropy(&probs, labels);

        let mut grad = vec![0.0; self.param_count];
        let mut d_out = probs;
        for (i, &y) in labels.iter().enumerate() {
            d_out[[i, y]] -= 1.0;
        }
        d_out /= n as f64;

        for l in (0..self.layers.len()).rev() {
            let input = if l == 0 {
                x
            } else {
                trace.outputs[l - 1].view()
            };
            let in_shape = if l == 0 { self.input } else { self.shapes[l - 1] };
            let slot = &self.slots[l];
            let need_input_grad = l > 0;
            d_out = match self.layers[l] {
                Layer::Dense {
                    inputs,
                    outputs: nout,
                    activation,
                } => {
                    let mut dz = d_out;
                    apply_derivative(&mut dz, &trace.outputs[l], activation);
                    {
                        let mut dw = ArrayViewMut2::from_shape(
                            (inputs, nout),
                            &mut grad[slot.weights.clone()],
                        )
                        .expect("slot size");
                        general_mat_mul(1.0, &input.t(), &dz, 0.0, &mut dw);
                    }
                    for (g, s) in grad[slot.biases.clone()]
                        .iter_mut()
                        .zip(dz.sum_axis(Axis(0)))
                    {
                        *g = s;
                    }
                    if need_input_grad {
                        let w = ArrayView2::from_shape((inputs, nout), &p[slot.weights.clone()])
                            .expect("slot size");
                        dz.dot(&w.t())
                    } else {
                        Array2::zeros((0, 0))
                    }
                }
                Layer::Conv {
                    out_channels,
                    kernel_h,
                    kernel_w,
                    padding,
                    activation,
                    ..
                } => {
                    let mut dz = d_out;
                    apply_derivative(&mut dz, &trace.outputs[l], activation);
                    let (cin, h, w) = image_dims(in_shape);
                    let (_, ho, wo) = image_dims(self.shapes[l]);
                    let g = ConvGeom {
                        cin,
                        h,
                        w,
                        kh: kernel_h,
                        kw: kernel_w,
                        pad: padding,
                        ho,
                        wo,
                    };
                    let wmat = ArrayView2::from_shape(
                        (out_channels, g.patch()),
                        &p[slot.weights.clone()],
                    )
                    .expect("slot size");
                    let mut dw = Array2::<f64>::zeros((out_channels, g.patch()));
                    let mut db = vec![0.0; out_channels];
                    let mut cols = Array2::zeros((g.patch(), g.positions()));
                    let mut dcols = Array2::zeros((g.patch(), g.positions()));
                    let mut d_in = if need_input_grad {
                        Array2::zeros((n, cin * h * w))
                    } else {
                        Array2::zeros((0, 0))
                    };
                    for s in 0..n {
                        let dzs = dz.row(s);
                        let dzs = ArrayView2::from_shape(
                            (out_channels, g.positions()),
                            dzs.as_slice().expect("contiguous rows"),
                        )
                        .expect("row size");
                        let xs = input.row(s);
                        g.im2col(
                            xs.as_slice().expect("contiguous rows"),
                            cols.as_slice_mut().expect("owned"),
                        );
                        general_mat_mul(1.0, &dzs, &cols.t(), 1.0, &mut dw);
                        for (c, r) in dzs.rows().into_iter().enumerate() {
                            db[c] += r.sum();
                        }
                        if need_input_grad {
                            general_mat_mul(1.0, &wmat.t(), &dzs, 0.0, &mut dcols);
                            let mut dx = d_in.row_mut(s);
                            g.col2im(
                                dcols.as_slice().expect("owned"),
                                dx.as_slice_mut().expect("contiguous rows"),
                            );
                        }
                    }
                    grad[slot.weights.clone()]
                        .copy_from_slice(dw.as_slice().expect("owned"));
                    grad[slot.biases.clone()].copy_from_slice(&db);
                    d_in
                }
                Layer::MaxPool { .. } => {
                    let per = self.shapes[l].len();
                    let mut d_in = Array2::zeros((n, in_shape.len()));
                    let winners = &trace.argmax[l];
                    for s in 0..n {
                        let ds = d_out.row(s);
                        let mut di = d_in.row_mut(s);
                        for (o, &g) in ds.iter().enumerate() {
                            di[winners[s * per + o] as usize] += g;
                        }
                    }
                    d_in
                }
                Layer::Flatten => d_out,
            };
        }

        if reg_lambda != 0.0 {
            loss += 0.5 * reg_lambda * self.weight_sq_norm(params);
            for r in self.weight_ranges() {
                for (g, w) in grad[r.clone()].iter_mut().zip(&p[r]) {
                    *g += reg_lambda * w;
                }
            }
        }

        let gradient = ParamVector::from(grad);
        if !loss.is_finite() || !gradient.is_finite() {
            return Err(Error::NonFinite("loss gradient".into()));
        }
        Ok(Evaluation { loss, gradient })
    }

    /// Fraction of samples whose most probable class equals the label; ties
    /// go to the lowest class index.
    pub fn accuracy(&self, params: &ParamVector, x: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
        self.check_labels(x, labels)?;
        let probs = self.forward(params, x)?;
        let correct = probs
            .rows()
            .into_iter()
            .zip(labels)
            .filter(|(row, &y)| argmax(row.iter().copied()) == y)
            .count();
        Ok(correct as f64 / labels.len() as f64)
    }
}

/// Index of the first maximal element.
pub(crate) fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = f64::NEG_INFINITY;
    let mut at = 0;
    for (i, v) in values.enumerate() {
        if v > best {
            best = v;
            at = i;
        }
    }
    at
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::InitScheme;
    use ndarray::array;

    fn tiny() -> NetworkSpec {
        NetworkSpec::mlp(&[4, 5, 3], Activation::Tanh).unwrap()
    }

    #[test]
    fn zero_params_give_uniform_output() {
        let spec = NetworkSpec::mlp(&[6, 4, 10], Activation::Tanh).unwrap();
        let p = ParamVector::zeros(spec.param_count());
        let x = Array2::from_shape_fn((3, 6), |(i, j)| (i * 7 + j) as f64 * 0.3 - 1.0);
        let probs = spec.forward(&p, x.view()).unwrap();
        assert!(probs.iter().all(|&v| (v - 0.1).abs() < 1e-15));
        let loss = spec.loss(&p, x.view(), &[0, 1, 2], 0.0).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn identity_dense_layer_softmax() {
        let spec = NetworkSpec::mlp(&[3, 3], Activation::Tanh).unwrap();
        let mut p = ParamVector::zeros(spec.param_count());
        for i in 0..3 {
            p[i * 3 + i] = 1.0;
        }
        let x = array![[0.0, 1.0, 0.0]];
        let probs = spec.forward(&p, x.view()).unwrap();
        let e = std::f64::consts::E;
        let expect = [1.0 / (2.0 + e), e / (2.0 + e), 1.0 / (2.0 + e)];
        for (a, b) in probs.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn rows_sum_to_one_for_extreme_logits() {
        let spec = tiny();
        let mut p = spec.init_params(InitScheme::Standard, 1);
        for v in p.as_mut_slice() {
            *v *= 1e6;
        }
        let x = Array2::from_shape_fn((5, 4), |(i, j)| (i as f64 - j as f64) * 3.0);
        let probs = spec.forward(&p, x.view()).unwrap();
        for row in probs.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        let loss = spec.loss(&p, x.view(), &[0, 1, 2, 0, 1], 0.0).unwrap();
        assert!(loss.is_finite());
        assert!(loss <= -PROB_FLOOR.ln() + 1e-9);
    }

    #[test]
    fn perfect_prediction_loss_near_zero() {
        let spec = NetworkSpec::mlp(&[2, 2], Activation::Tanh).unwrap();
        // logits = 1000 * x
        let p = ParamVector::from(vec![1000.0, 0.0, 0.0, 1000.0, 0.0, 0.0]);
        let x = array![[1.0, 0.0], [0.0, 1.0]];
        let loss = spec.loss(&p, x.view(), &[0, 1], 0.0).unwrap();
        assert!(loss < 1e-6);
        assert_eq!(spec.accuracy(&p, x.view(), &[0, 1]).unwrap(), 1.0);
    }

    #[test]
    fn dimension_errors() {
        let spec = tiny();
        let p = ParamVector::zeros(spec.param_count());
        let x = Array2::zeros((2, 5));
        assert!(matches!(spec.forward(&p, x.view()), Err(Error::Dimension(_))));
        let x = Array2::zeros((2, 4));
        assert!(matches!(
            spec.loss(&p, x.view(), &[0], 0.0),
            Err(Error::Dimension(_))
        ));
        let short = ParamVector::zeros(3);
        assert!(matches!(spec.forward(&short, x.view()), Err(Error::Dimension(_))));
    }

    #[test]
    fn nan_params_are_surfaced() {
        let spec = tiny();
        let mut p = spec.init_params(InitScheme::Standard, 2);
        p[0] = f64::NAN;
        let x = Array2::from_elem((2, 4), 1.0);
        assert!(matches!(
            spec.gradient(&p, x.view(), &[0, 1], 0.0),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(
            spec.loss(&p, x.view(), &[0, 1], 0.0),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn regularizer_gradient_on_zero_inputs() {
        // Zero inputs with zero output biases: the data term only touches
        // biases, so every weight gradient equals lambda * w.
        let spec = tiny();
        let p = spec.init_params(InitScheme::Standard, 9);
        let x = Array2::zeros((4, 4));
        let labels = [0, 1, 2, 0];
        let g0 = spec.gradient(&p, x.view(), &labels, 0.0).unwrap();
        let g1 = spec.gradient(&p, x.view(), &labels, 0.1).unwrap();
        for r in spec.weight_ranges() {
            for i in r {
                assert_eq!(g1[i] - g0[i], 0.1 * p[i]);
            }
        }
        for r in spec.bias_ranges() {
            for i in r {
                assert_eq!(g1[i], g0[i]);
            }
        }
    }

    #[test]
    fn maxpool_ties_route_to_first() {
        let spec = NetworkSpec::new(
            Shape::Image {
                channels: 1,
                height: 2,
                width: 2,
            },
            vec![
                Layer::MaxPool {
                    pool_h: 2,
                    pool_w: 2,
                },
                Layer::Flatten,
                Layer::Dense {
                    inputs: 1,
                    outputs: 2,
                    activation: Activation::Identity,
                },
            ],
        )
        .unwrap();
        let p = ParamVector::from(vec![1.0, -1.0, 0.0, 0.0]);
        let x = array![[0.5, 0.5, 0.5, 0.5]];
        let trace = spec.run(&p, x.view());
        assert_eq!(trace.argmax[0], vec![0]);
    }

    #[test]
    fn argmax_first_wins() {
        assert_eq!(argmax([0.1, 0.1, 0.1].into_iter()), 0);
        assert_eq!(argmax([0.1, 0.3, 0.3].into_iter()), 1);
    }
}
