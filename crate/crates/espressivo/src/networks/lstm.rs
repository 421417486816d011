//! Batched LSTM machinery with hand-written backpropagation.
//!
//! Tensors are `[batch, time, features]`. The input-to-hidden product for
//! all frames is one large matrix multiply; only the hidden-to-hidden
//! recurrence runs frame by frame. Gate order inside the fused `4H` axis is
//! `[input, forget, cell, output]`.

use ndarray::{s, Array1, Array2, Array3, Axis};
use rand::RngExt;
use rand_chacha::ChaCha8Rng;

use crate::gmvae::Real;
use crate::networks::params::{ParamId, ParamLayout};

fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

/// One direction of one LSTM layer.
#[derive(Debug, Clone)]
pub struct LstmDirection {
    w_ih: ParamId,
    w_hh: ParamId,
    bias: ParamId,
    input_dim: usize,
    hidden: usize,
    reverse: bool,
}

/// Activations cached by a direction's forward pass, `[T, B, H]` each,
/// plus the hidden states `[B, T, H]`.
pub struct DirectionCache<F> {
    i: Array3<F>,
    f: Array3<F>,
    g: Array3<F>,
    o: Array3<F>,
    c: Array3<F>,
    tanh_c: Array3<F>,
    pub h: Array3<F>,
}

impl LstmDirection {
    pub fn build(
        layout: &mut ParamLayout,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        reverse: bool,
    ) -> Self {
        LstmDirection {
            w_ih: layout.matrix(format!("{prefix}.w_ih"), 4 * hidden, input_dim),
            w_hh: layout.matrix(format!("{prefix}.w_hh"), 4 * hidden, hidden),
            bias: layout.vector(format!("{prefix}.bias"), 4 * hidden),
            input_dim,
            hidden,
            reverse,
        }
    }

    pub fn init<F: Real>(&self, layout: &ParamLayout, params: &mut [F], rng: &mut ChaCha8Rng) {
        let kx = 1.0 / (self.input_dim as f64).sqrt();
        for v in layout.slice_mut(params, self.w_ih) {
            *v = F::from_f64(rng.random_range(-kx..kx)).unwrap();
        }
        let kh = 1.0 / (self.hidden as f64).sqrt();
        for v in layout.slice_mut(params, self.w_hh) {
            *v = F::from_f64(rng.random_range(-kh..kh)).unwrap();
        }
        let bias = layout.slice_mut(params, self.bias);
        for v in bias.iter_mut() {
            *v = F::zero();
        }
        // forget-gate bias of 1 keeps early cell states alive
        for v in bias[self.hidden..2 * self.hidden].iter_mut() {
            *v = F::one();
        }
    }

    /// Time indices in processing order.
    fn order(&self, t_frames: usize) -> Vec<usize> {
        if self.reverse {
            (0..t_frames).rev().collect()
        } else {
            (0..t_frames).collect()
        }
    }

    pub fn forward<F: Real>(
        &self,
        layout: &ParamLayout,
        params: &[F],
        input: &Array3<F>,
    ) -> DirectionCache<F> {
        let (b, t_frames, in_dim) = input.dim();
        assert_eq!(in_dim, self.input_dim, "lstm input width");
        let h = self.hidden;

        let w_ih = layout.m(params, self.w_ih);
        let w_hh = layout.m(params, self.w_hh);
        let bias = layout.v(params, self.bias);

        // input-to-hidden for every frame at once: (B*T, In) x (In, 4H)
        let flat = input
            .view()
            .into_shape_with_order((b * t_frames, in_dim))
            .expect("standard layout");
        let xw = flat
            .dot(&w_ih.t())
            .into_shape_with_order((b, t_frames, 4 * h))
            .unwrap();

        let mut cache = DirectionCache {
            i: Array3::zeros((t_frames, b, h)),
            f: Array3::zeros((t_frames, b, h)),
            g: Array3::zeros((t_frames, b, h)),
            o: Array3::zeros((t_frames, b, h)),
            c: Array3::zeros((t_frames, b, h)),
            tanh_c: Array3::zeros((t_frames, b, h)),
            h: Array3::zeros((b, t_frames, h)),
        };

        let mut h_prev = Array2::<F>::zeros((b, h));
        let mut c_prev = Array2::<F>::zeros((b, h));

        for &t in &self.order(t_frames) {
            let mut pre = h_prev.dot(&w_hh.t());
            pre += &xw.index_axis(Axis(1), t);
            pre += &bias;

            let mut i_t = cache.i.index_axis_mut(Axis(0), t);
            let mut f_t = cache.f.index_axis_mut(Axis(0), t);
            let mut g_t = cache.g.index_axis_mut(Axis(0), t);
            let mut o_t = cache.o.index_axis_mut(Axis(0), t);
            i_t.assign(&pre.slice(s![.., 0..h]).mapv(sigmoid));
            f_t.assign(&pre.slice(s![.., h..2 * h]).mapv(sigmoid));
            g_t.assign(&pre.slice(s![.., 2 * h..3 * h]).mapv(|x| x.tanh()));
            o_t.assign(&pre.slice(s![.., 3 * h..4 * h]).mapv(sigmoid));

            let c_t = &f_t.view() * &c_prev + &i_t.view() * &g_t.view();
            let tanh_c_t = c_t.mapv(|x| x.tanh());
            let h_t = &o_t.view() * &tanh_c_t;

            cache.c.index_axis_mut(Axis(0), t).assign(&c_t);
            cache.tanh_c.index_axis_mut(Axis(0), t).assign(&tanh_c_t);
            cache.h.index_axis_mut(Axis(1), t).assign(&h_t);

            h_prev = h_t;
            c_prev = c_t;
        }
        cache
    }

    /// Backprop through this direction. `d_h` is the loss gradient with
    /// respect to the direction's hidden states, `[B, T, H]`. Parameter
    /// gradients are accumulated into `grads`; returns the input gradient.
    pub fn backward<F: Real>(
        &self,
        layout: &ParamLayout,
        params: &[F],
        grads: &mut [F],
        input: &Array3<F>,
        cache: &DirectionCache<F>,
        d_h: &Array3<F>,
    ) -> Array3<F> {
        let (b, t_frames, _) = input.dim();
        let h = self.hidden;
        let w_ih = layout.m(params, self.w_ih);
        let w_hh = layout.m(params, self.w_hh);

        let mut g_w_ih = Array2::<F>::zeros((4 * h, self.input_dim));
        let mut g_w_hh = Array2::<F>::zeros((4 * h, h));
        let mut g_bias = Array1::<F>::zeros(4 * h);
        let mut d_input = Array3::<F>::zeros(input.dim());

        let order = self.order(t_frames);
        let mut dh_carry = Array2::<F>::zeros((b, h));
        let mut dc_carry = Array2::<F>::zeros((b, h));
        let zeros = Array2::<F>::zeros((b, h));

        for step in (0..t_frames).rev() {
            let t = order[step];
            let i_t = cache.i.index_axis(Axis(0), t);
            let f_t = cache.f.index_axis(Axis(0), t);
            let g_t = cache.g.index_axis(Axis(0), t);
            let o_t = cache.o.index_axis(Axis(0), t);
            let tanh_c_t = cache.tanh_c.index_axis(Axis(0), t);
            let (h_prev, c_prev) = if step == 0 {
                (zeros.view(), zeros.view())
            } else {
                (
                    cache.h.index_axis(Axis(1), order[step - 1]),
                    cache.c.index_axis(Axis(0), order[step - 1]),
                )
            };

            let dh = &dh_carry + &d_h.index_axis(Axis(1), t);
            let d_o = &dh * &tanh_c_t;
            let dc = &dc_carry + &(&dh * &o_t) * &tanh_c_t.mapv(|v| F::one() - v * v);

            let d_i = &dc * &g_t;
            let d_g = &dc * &i_t;
            let d_f = &dc * &c_prev;
            dc_carry = &dc * &f_t;

            // pre-activation gradients, fused [B, 4H]
            let mut dpre = Array2::<F>::zeros((b, 4 * h));
            dpre.slice_mut(s![.., 0..h])
                .assign(&(&d_i * &i_t.mapv(|v| v * (F::one() - v))));
            dpre.slice_mut(s![.., h..2 * h])
                .assign(&(&d_f * &f_t.mapv(|v| v * (F::one() - v))));
            dpre.slice_mut(s![.., 2 * h..3 * h])
                .assign(&(&d_g * &g_t.mapv(|v| F::one() - v * v)));
            dpre.slice_mut(s![.., 3 * h..4 * h])
                .assign(&(&d_o * &o_t.mapv(|v| v * (F::one() - v))));

            let x_t = input.index_axis(Axis(1), t);
            g_w_ih = g_w_ih + dpre.t().dot(&x_t);
            g_w_hh = g_w_hh + dpre.t().dot(&h_prev);
            g_bias = g_bias + dpre.sum_axis(Axis(0));

            d_input.index_axis_mut(Axis(1), t).assign(&dpre.dot(&w_ih));
            dh_carry = dpre.dot(&w_hh);
        }

        {
            let mut gw = layout.m_mut(grads, self.w_ih);
            gw += &g_w_ih;
        }
        {
            let mut gw = layout.m_mut(grads, self.w_hh);
            gw += &g_w_hh;
        }
        {
            let mut gb = layout.v_mut(grads, self.bias);
            gb += &g_bias;
        }
        d_input
    }
}

/// One bidirectional layer: forward + reverse directions, outputs
/// concatenated to `2H` features.
#[derive(Debug, Clone)]
pub struct BiLstmLayer {
    pub fwd: LstmDirection,
    pub bwd: LstmDirection,
    hidden: usize,
}

pub struct BiLayerCache<F> {
    fwd: DirectionCache<F>,
    bwd: DirectionCache<F>,
}

impl BiLstmLayer {
    pub fn build(layout: &mut ParamLayout, prefix: &str, input_dim: usize, hidden: usize) -> Self {
        BiLstmLayer {
            fwd: LstmDirection::build(layout, &format!("{prefix}.fwd"), input_dim, hidden, false),
            bwd: LstmDirection::build(layout, &format!("{prefix}.bwd"), input_dim, hidden, true),
            hidden,
        }
    }

    pub fn init<F: Real>(&self, layout: &ParamLayout, params: &mut [F], rng: &mut ChaCha8Rng) {
        self.fwd.init(layout, params, rng);
        self.bwd.init(layout, params, rng);
    }

    pub fn forward<F: Real>(
        &self,
        layout: &ParamLayout,
        params: &[F],
        input: &Array3<F>,
    ) -> (Array3<F>, BiLayerCache<F>) {
        let (b, t_frames, _) = input.dim();
        let h = self.hidden;
        let fwd = self.fwd.forward(layout, params, input);
        let bwd = self.bwd.forward(layout, params, input);
        let mut out = Array3::<F>::zeros((b, t_frames, 2 * h));
        out.slice_mut(s![.., .., 0..h]).assign(&fwd.h);
        out.slice_mut(s![.., .., h..2 * h]).assign(&bwd.h);
        (out, BiLayerCache { fwd, bwd })
    }

    pub fn backward<F: Real>(
        &self,
        layout: &ParamLayout,
        params: &[F],
        grads: &mut [F],
        input: &Array3<F>,
        cache: &BiLayerCache<F>,
        d_out: &Array3<F>,
    ) -> Array3<F> {
        let h = self.hidden;
        let d_fwd = d_out.slice(s![.., .., 0..h]).to_owned();
        let d_bwd = d_out.slice(s![.., .., h..2 * h]).to_owned();
        let di_f = self
            .fwd
            .backward(layout, params, grads, input, &cache.fwd, &d_fwd);
        let di_b = self
            .bwd
            .backward(layout, params, grads, input, &cache.bwd, &d_bwd);
        di_f + di_b
    }
}

/// Two stacked bidirectional layers.
#[derive(Debug, Clone)]
pub struct BiLstmStack {
    pub l0: BiLstmLayer,
    pub l1: BiLstmLayer,
}

pub struct StackCache<F> {
    c0: BiLayerCache<F>,
    c1: BiLayerCache<F>,
    /// Output of layer 0 == input of layer 1.
    mid: Array3<F>,
}

impl BiLstmStack {
    pub fn build(layout: &mut ParamLayout, prefix: &str, input_dim: usize, hidden: usize) -> Self {
        BiLstmStack {
            l0: BiLstmLayer::build(layout, &format!("{prefix}.l0"), input_dim, hidden),
            l1: BiLstmLayer::build(layout, &format!("{prefix}.l1"), 2 * hidden, hidden),
        }
    }

    pub fn init<F: Real>(&self, layout: &ParamLayout, params: &mut [F], rng: &mut ChaCha8Rng) {
        self.l0.init(layout, params, rng);
        self.l1.init(layout, params, rng);
    }

    /// Output feature width (`2H`).
    pub fn output_dim(&self) -> usize {
        2 * self.l1.hidden
    }

    pub fn forward<F: Real>(
        &self,
        layout: &ParamLayout,
        params: &[F],
        input: &Array3<F>,
    ) -> (Array3<F>, StackCache<F>) {
        let (mid, c0) = self.l0.forward(layout, params, input);
        let (out, c1) = self.l1.forward(layout, params, &mid);
        (out, StackCache { c0, c1, mid })
    }

    pub fn backward<F: Real>(
        &self,
        layout: &ParamLayout,
        params: &[F],
        grads: &mut [F],
        input: &Array3<F>,
        cache: &StackCache<F>,
        d_out: &Array3<F>,
    ) -> Array3<F> {
        let d_mid = self
            .l1
            .backward(layout, params, grads, &cache.mid, &cache.c1, d_out);
        self.l0
            .backward(layout, params, grads, input, &cache.c0, &d_mid)
    }
}

/// Dense `y = x W^T + b` applied frame-wise.
#[derive(Debug, Clone)]
pub struct Linear {
    w: ParamId,
    b: ParamId,
    input_dim: usize,
    output_dim: usize,
}

impl Linear {
    pub fn build(layout: &mut ParamLayout, prefix: &str, input_dim: usize, output_dim: usize) -> Self {
        Linear {
            w: layout.matrix(format!("{prefix}.w"), output_dim, input_dim),
            b: layout.vector(format!("{prefix}.b"), output_dim),
            input_dim,
            output_dim,
        }
    }

    pub fn init<F: Real>(&self, layout: &ParamLayout, params: &mut [F], rng: &mut ChaCha8Rng) {
        let k = 1.0 / (self.input_dim as f64).sqrt();
        for v in layout.slice_mut(params, self.w) {
            *v = F::from_f64(rng.random_range(-k..k)).unwrap();
        }
        for v in layout.slice_mut(params, self.b) {
            *v = F::zero();
        }
    }

    pub fn forward<F: Real>(
        &self,
        layout: &ParamLayout,
        params: &[F],
        input: &Array3<F>,
    ) -> Array3<F> {
        let (b, t_frames, in_dim) = input.dim();
        assert_eq!(in_dim, self.input_dim, "linear input width");
        let w = layout.m(params, self.w);
        let bias = layout.v(params, self.b);
        let flat = input
            .view()
            .into_shape_with_order((b * t_frames, in_dim))
            .expect("standard layout");
        let mut out = flat.dot(&w.t());
        out += &bias;
        out.into_shape_with_order((b, t_frames, self.output_dim))
            .unwrap()
    }

    pub fn backward<F: Real>(
        &self,
        layout: &ParamLayout,
        params: &[F],
        grads: &mut [F],
        input: &Array3<F>,
        d_out: &Array3<F>,
    ) -> Array3<F> {
        let (b, t_frames, in_dim) = input.dim();
        let flat_x = input
            .view()
            .into_shape_with_order((b * t_frames, in_dim))
            .expect("standard layout");
        let flat_dy = d_out
            .view()
            .into_shape_with_order((b * t_frames, self.output_dim))
            .expect("standard layout");

        {
            let mut gw = layout.m_mut(grads, self.w);
            gw += &flat_dy.t().dot(&flat_x);
        }
        {
            let mut gb = layout.v_mut(grads, self.b);
            gb += &flat_dy.sum_axis(Axis(0));
        }
        let w = layout.m(params, self.w);
        flat_dy
            .dot(&w)
            .into_shape_with_order((b, t_frames, in_dim))
            .unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;
    use ndarray::Array3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_input(rng: &mut ChaCha8Rng, b: usize, t: usize, d: usize) -> Array3<f64> {
        Array3::from_shape_fn((b, t, d), |_| StandardNormal.sample(rng))
    }

    #[test]
    fn stack_preserves_batch_and_time_shape() {
        let mut layout = ParamLayout::new();
        let stack = BiLstmStack::build(&mut layout, "rnn", 5, 4);
        let mut params = vec![0.0f64; layout.num_params()];
        stack.init(&layout, &mut params, &mut derive_rng(0, &[]));
        let x = random_input(&mut ChaCha8Rng::seed_from_u64(1), 3, 7, 5);
        let (y, _) = stack.forward(&layout, &params, &x);
        assert_eq!(y.dim(), (3, 7, 8));
    }

    #[test]
    fn bidirectional_receptive_field_reaches_frame_zero() {
        let mut layout = ParamLayout::new();
        let stack = BiLstmStack::build(&mut layout, "rnn", 4, 6);
        let mut params = vec![0.0f64; layout.num_params()];
        stack.init(&layout, &mut params, &mut derive_rng(3, &[]));
        let x = random_input(&mut ChaCha8Rng::seed_from_u64(2), 1, 9, 4);
        let (y, _) = stack.forward(&layout, &params, &x);
        let mut x2 = x.clone();
        x2[(0, 8, 0)] += 1.0; // touch only the last frame
        let (y2, _) = stack.forward(&layout, &params, &x2);
        let delta = (&y2.index_axis(Axis(1), 0) - &y.index_axis(Axis(1), 0))
            .iter()
            .map(|v| v.abs())
            .fold(0.0f64, f64::max);
        assert!(delta > 0.0, "frame 0 output must depend on frame T-1 input");
    }

    #[test]
    fn forward_is_deterministic() {
        let mut layout = ParamLayout::new();
        let stack = BiLstmStack::build(&mut layout, "rnn", 4, 3);
        let mut params = vec![0.0f64; layout.num_params()];
        stack.init(&layout, &mut params, &mut derive_rng(5, &[]));
        let x = random_input(&mut ChaCha8Rng::seed_from_u64(9), 2, 6, 4);
        let (a, _) = stack.forward(&layout, &params, &x);
        let (b, _) = stack.forward(&layout, &params, &x);
        assert_eq!(a, b);
    }

    /// Scalar loss for the finite-difference probe: weighted sum of the
    /// linear head applied to the stack output.
    fn probe_loss(
        layout: &ParamLayout,
        stack: &BiLstmStack,
        head: &Linear,
        params: &[f64],
        x: &Array3<f64>,
        weights: &Array3<f64>,
    ) -> f64 {
        let (mid, _) = stack.forward(layout, params, x);
        let y = head.forward(layout, params, &mid);
        (&y * weights).sum()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut layout = ParamLayout::new();
        let stack = BiLstmStack::build(&mut layout, "rnn", 3, 4);
        let head = Linear::build(&mut layout, "head", 8, 2);
        let mut params = vec![0.0f64; layout.num_params()];
        let mut rng = derive_rng(7, &[]);
        stack.init(&layout, &mut params, &mut rng);
        head.init(&layout, &mut params, &mut rng);

        let mut drng = ChaCha8Rng::seed_from_u64(4);
        let x = random_input(&mut drng, 2, 5, 3);
        let weights = random_input(&mut drng, 2, 5, 2);

        // analytic gradients
        let mut grads = vec![0.0f64; layout.num_params()];
        let (mid, cache) = stack.forward(&layout, &params, &x);
        let d_y = weights.clone();
        let d_mid = head.backward(&layout, &params, &mut grads, &mid, &d_y);
        let d_x = stack.backward(&layout, &params, &mut grads, &x, &cache, &d_mid);

        // parameter gradients
        let h = 1e-6;
        for idx in (0..layout.num_params()).step_by(7) {
            let mut pp = params.clone();
            pp[idx] += h;
            let mut pm = params.clone();
            pm[idx] -= h;
            let fd = (probe_loss(&layout, &stack, &head, &pp, &x, &weights)
                - probe_loss(&layout, &stack, &head, &pm, &x, &weights))
                / (2.0 * h);
            let rel = (fd - grads[idx]).abs() / fd.abs().max(grads[idx].abs()).max(1e-8);
            assert!(
                rel < 3e-5,
                "param {idx}: analytic {} vs fd {fd}",
                grads[idx]
            );
        }

        // input gradients
        for (bi, ti, di) in [(0, 0, 0), (1, 2, 1), (0, 4, 2), (1, 0, 2)] {
            let mut xp = x.clone();
            xp[(bi, ti, di)] += h;
            let mut xm = x.clone();
            xm[(bi, ti, di)] -= h;
            let fd = (probe_loss(&layout, &stack, &head, &params, &xp, &weights)
                - probe_loss(&layout, &stack, &head, &params, &xm, &weights))
                / (2.0 * h);
            let a = d_x[(bi, ti, di)];
            let rel = (fd - a).abs() / fd.abs().max(a.abs()).max(1e-8);
            assert!(rel < 3e-5, "input ({bi},{ti},{di}): analytic {a} vs fd {fd}");
        }
    }

    #[test]
    fn linear_bias_and_weight_grads() {
        let mut layout = ParamLayout::new();
        let lin = Linear::build(&mut layout, "lin", 3, 2);
        let mut params = vec![0.0f64; layout.num_params()];
        lin.init(&layout, &mut params, &mut derive_rng(11, &[]));
        let x = random_input(&mut ChaCha8Rng::seed_from_u64(3), 2, 4, 3);
        let w = random_input(&mut ChaCha8Rng::seed_from_u64(5), 2, 4, 2);

        let mut grads = vec![0.0f64; layout.num_params()];
        let _ = lin.backward(&layout, &params, &mut grads, &x, &w);

        let h = 1e-6;
        for idx in 0..layout.num_params() {
            let mut pp = params.clone();
            pp[idx] += h;
            let mut pm = params.clone();
            pm[idx] -= h;
            let f = |p: &[f64]| (&lin.forward(&layout, p, &x) * &w).sum();
            let fd = (f(&pp) - f(&pm)) / (2.0 * h);
            assert!((fd - grads[idx]).abs() < 1e-7, "param {idx}");
        }
    }
}
