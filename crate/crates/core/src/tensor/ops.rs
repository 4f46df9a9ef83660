use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::conv::{conv3d_forward, ConvGeometry};
use super::tape::Op;
use super::{dim_err, lane_sq_dev, lane_sum, Conv3dParams, Real, Tape, Tensor, TensorError, Var};

impl<T: Real> Tape<T> {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(dim_err(op, format!("shapes {sa:?} and {sb:?} differ")));
        }
        Ok(())
    }

    fn unary(&mut self, op_name: &'static str, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var, TensorError> {
        let value = self.value(x).map(f);
        self.push(op_name, value, op, &[x])
    }

    fn binary(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var, TensorError> {
        self.same_shape(op_name, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(op_name, value, op, &[a, b])
    }

    /// 3-D convolution over `[N, Cin, T, H, W]` with weight `[Cout, Cin/g, kt, kh, kw]`.
    /// Output channel `o` only reads input group `o / (Cout / g)`.
    pub fn conv3d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        params: Conv3dParams,
    ) -> Result<Var, TensorError> {
        let geo = ConvGeometry::new(
            self.value(input).shape(),
            self.value(weight).shape(),
            bias.map(|b| self.value(b).shape()),
            params,
        )?;
        let keep_cols = self.requires_grad(weight);
        let (data, cols) = conv3d_forward(
            &geo,
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
            keep_cols,
        );
        let value = Tensor::new(geo.output_shape(), data)?;
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        self.push(
            "conv3d",
            value,
            Op::Conv3d {
                input,
                weight,
                bias,
                geo,
                cols,
            },
            &inputs,
        )
    }

    /// Subgradient at exactly zero is taken as zero.
    pub fn relu(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary("relu", x, |v| if v > T::zero() { v } else { T::zero() }, Op::Relu(x))
    }

    /// Mean over every axis after the channel axis: `[N, C, ...] -> [N, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var, TensorError> {
        let t = self.value(x);
        if t.rank() < 3 {
            return Err(dim_err(
                "global_avg_pool",
                format!("need [N,C,...], got {:?}", t.shape()),
            ));
        }
        let (n, c) = (t.shape()[0], t.shape()[1]);
        let cells: usize = t.shape()[2..].iter().product();
        let inv = T::one() / T::of(cells as f64);
        let data = t
            .data()
            .chunks(cells)
            .map(|ch| ch.iter().fold(T::zero(), |a, &v| a + v) * inv)
            .collect();
        let value = Tensor::new(vec![n, c], data)?;
        self.push("global_avg_pool", value, Op::GlobalAvgPool(x), &[x])
    }

    /// `x · Wᵀ + b` for `x: [N, Din]`, `W: [Dout, Din]`, `b: [Dout]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var, TensorError> {
        let (xs, ws, bs) = (
            self.value(x).shape(),
            self.value(weight).shape(),
            self.value(bias).shape(),
        );
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || bs != [ws[0]] {
            return Err(dim_err("linear", format!("x {xs:?}, weight {ws:?}, bias {bs:?}")));
        }
        let (n, din, dout) = (xs[0], xs[1], ws[0]);
        let mut out = Vec::with_capacity(n * dout);
        for _ in 0..n {
            out.extend_from_slice(self.value(bias).data());
        }
        // SAFETY: x is n×din, W read transposed is din×dout, out is n×dout.
        unsafe {
            T::gemm(
                n,
                din,
                dout,
                T::one(),
                self.value(x).data().as_ptr(),
                din as isize,
                1,
                self.value(weight).data().as_ptr(),
                1,
                din as isize,
                T::one(),
                out.as_mut_ptr(),
                dout as isize,
                1,
            );
        }
        let value = Tensor::new(vec![n, dout], out)?;
        self.push("linear", value, Op::Linear { x, weight, bias }, &[x, weight, bias])
    }

    /// Max-subtracted log-softmax over the last axis of a `[N, D]` tensor.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var, TensorError> {
        let t = self.value(x);
        if t.rank() != 2 {
            return Err(dim_err("log_softmax", format!("need [N,D], got {:?}", t.shape())));
        }
        let value = log_softmax_rows(t);
        self.push("log_softmax", value, Op::LogSoftmax(x), &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var, TensorError> {
        self.unary("scale", x, |v| v * c, Op::Scale(x, c))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary("exp", x, |v| v.exp(), Op::Exp(x))
    }

    pub fn square(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary("square", x, |v| v * v, Op::Square(x))
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var, TensorError> {
        let s = self.value(x).data().iter().fold(T::zero(), |a, &v| a + v);
        self.push("sum_all", Tensor::scalar(s), Op::SumAll(x), &[x])
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var, TensorError> {
        let t = self.value(x);
        let s = t.data().iter().fold(T::zero(), |a, &v| a + v) / T::of(t.len() as f64);
        self.push("mean_all", Tensor::scalar(s), Op::MeanAll(x), &[x])
    }

    /// Negative mean log-likelihood of `labels` under row log-probabilities `[N, D]`.
    pub fn nll(&mut self, logp: Var, labels: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(logp);
        if t.rank() != 2 || t.shape()[0] != labels.len() {
            return Err(dim_err(
                "nll",
                format!("log-probs {:?} vs {} labels", t.shape(), labels.len()),
            ));
        }
        let d = t.shape()[1];
        let mut s = T::zero();
        for (n, &l) in labels.iter().enumerate() {
            if l >= d {
                return Err(TensorError::LabelOutOfRange { label: l, classes: d });
            }
            s = s + t.data()[n * d + l];
        }
        let value = Tensor::scalar(-s / T::of(labels.len() as f64));
        self.push(
            "nll",
            value,
            Op::Nll {
                logp,
                labels: labels.to_vec(),
            },
            &[logp],
        )
    }

    /// Per-channel `x * scale[c] + shift[c]` over `[N, C, ...]`.
    pub fn channel_affine(&mut self, x: Var, scale: Var, shift: Var) -> Result<Var, TensorError> {
        let (n, c, inner) = self.channel_layout("channel_affine", x, &[scale, shift])?;
        let (xv, sv, bv) = (self.value(x).data(), self.value(scale).data(), self.value(shift).data());
        let mut out = Vec::with_capacity(xv.len());
        for s in 0..n {
            for ch in 0..c {
                let off = (s * c + ch) * inner;
                out.extend(xv[off..off + inner].iter().map(|&v| v * sv[ch] + bv[ch]));
            }
        }
        let value = Tensor::new(self.value(x).shape().to_vec(), out)?;
        self.push(
            "channel_affine",
            value,
            Op::ChannelAffine { x, scale, shift },
            &[x, scale, shift],
        )
    }

    /// Batch-statistics normalization per channel followed by `gamma`/`beta`.
    /// Returns the output together with the biased batch mean and variance.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<(Var, Vec<T>, Vec<T>), TensorError> {
        let (n, c, inner) = self.channel_layout("batch_norm", x, &[gamma, beta])?;
        let xv = self.value(x).data();
        let m = T::of((n * inner) as f64);
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for s in 0..n {
            for ch in 0..c {
                let off = (s * c + ch) * inner;
                mean[ch] = mean[ch] + lane_sum(&xv[off..off + inner]);
            }
        }
        mean.iter_mut().for_each(|v| *v = *v / m);
        for s in 0..n {
            for ch in 0..c {
                let off = (s * c + ch) * inner;
                var[ch] = var[ch] + lane_sq_dev(&xv[off..off + inner], mean[ch]);
            }
        }
        var.iter_mut().for_each(|v| *v = *v / m);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = vec![T::zero(); xv.len()];
        for s in 0..n {
            for ch in 0..c {
                let off = (s * c + ch) * inner;
                let (mu, is, ga, be) = (mean[ch], inv_std[ch], gv[ch], bv[ch]);
                let rows = xhat[off..off + inner].iter_mut().zip(&mut out[off..off + inner]);
                for ((h, o), &v) in rows.zip(&xv[off..off + inner]) {
                    *h = (v - mu) * is;
                    *o = *h * ga + be;
                }
            }
        }
        let value = Tensor::new(self.value(x).shape().to_vec(), out)?;
        let y = self.push(
            "batch_norm",
            value,
            Op::BatchNorm {
                x,
                gamma,
                xhat,
                inv_std,
                beta,
            },
            &[x, gamma, beta],
        )?;
        Ok((y, mean, var))
    }

    /// `Σ wᵢ · termᵢ` over scalar terms.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Result<Var, TensorError> {
        let mut s = T::zero();
        for &(v, w) in terms {
            let item = self.value(v).item().ok_or_else(|| {
                dim_err(
                    "weighted_sum",
                    format!("term {:?} is not scalar", self.value(v).shape()),
                )
            })?;
            s = s + w * item;
        }
        let inputs: Vec<Var> = terms.iter().map(|t| t.0).collect();
        self.push(
            "weighted_sum",
            Tensor::scalar(s),
            Op::WeightedSum(terms.to_vec()),
            &inputs,
        )
    }

    fn channel_layout(
        &self,
        op: &'static str,
        x: Var,
        per_channel: &[Var],
    ) -> Result<(usize, usize, usize), TensorError> {
        let s = self.value(x).shape();
        if s.len() < 2 {
            return Err(dim_err(op, format!("need [N,C,...], got {s:?}")));
        }
        for &p in per_channel {
            if self.value(p).shape() != [s[1]] {
                return Err(dim_err(
                    op,
                    format!("per-channel {:?} vs {} channels", self.value(p).shape(), s[1]),
                ));
            }
        }
        Ok((s[0], s[1], s[2..].iter().product()))
    }
}

/// Row-wise stable log-softmax of a `[N, D]` tensor.
pub fn log_softmax_rows<T: Real>(t: &Tensor<T>) -> Tensor<T> {
    let d = *t.shape().last().unwrap();
    let mut out = Vec::with_capacity(t.len());
    for row in t.data().chunks(d) {
        let m = row.iter().fold(T::neg_infinity(), |a, &v| a.max(v));
        let lse = m + row.iter().fold(T::zero(), |a, &v| a + (v - m).exp()).ln();
        out.extend(row.iter().map(|&v| v - lse));
    }
    Tensor::new(t.shape().to_vec(), out).expect("same shape")
}
