//! Gradient-matching attack with a learned dummy mask.
//!
//! The victim computes one gradient on a single hidden example: a continuous
//! input vector goes through a projection + tanh, gets mixed with `k - 1`
//! partner representations, is sign-masked, and feeds an MLP; the observed
//! gradient covers every weight. The attacker knows the weights and the
//! gradient and fits dummy `(input, mask, label)` by descending the squared
//! gradient distance `D_g = |g(sigma, x, y) - g_hat|^2`. The mask is relaxed
//! to a real vector during optimization and scored against the true signs by
//! MSE; success means the recovered input is within the configured MSE of the
//! true one.
//!
//! Differentiating `D_g` w.r.t. the dummies means backpropagating through the
//! gradient computation itself; the adjoint pass below is hand-derived for
//! this architecture (tanh projection, ReLU MLP, exact softmax CE) and is
//! checked against finite differences in the tests.

use crate::model::{softmax, ClassifierParams, EncoderParams, Layer, SoftLabel};
use crate::numerics::{adam_step, AdamConfig, DenseMat, DenseVec, OptState, RngStream};
use crate::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Dimensions of the attacked pipeline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VictimDims {
    /// Dimension of the vector the attacker tries to recover.
    pub input_dim: usize,
    /// Representation (= mask) dimension.
    pub rep_dim: usize,
    /// MLP hidden widths.
    pub hidden: Vec<usize>,
    pub num_classes: usize,
}

/// The public model the gradients were computed on.
#[derive(Debug, Clone)]
pub struct VictimModel {
    pub proj_w: DenseMat,
    pub proj_b: DenseVec,
    pub mlp: Vec<Layer>,
}

impl VictimModel {
    pub fn init(dims: &VictimDims, stream: &mut RngStream) -> VictimModel {
        let a = (6.0 / (dims.input_dim + dims.rep_dim) as f64).sqrt();
        let mut proj_w = DenseMat::zeros(dims.rep_dim, dims.input_dim);
        for x in proj_w.data_mut() {
            *x = a * (2.0 * stream.uniform() - 1.0);
        }
        let mut widths = vec![dims.rep_dim];
        widths.extend(&dims.hidden);
        widths.push(dims.num_classes);
        let mlp = widths
            .windows(2)
            .map(|w| {
                let scale = (2.0 / w[0] as f64).sqrt();
                let mut wm = DenseMat::zeros(w[1], w[0]);
                for x in wm.data_mut() {
                    *x = scale * stream.normal();
                }
                Layer {
                    w: wm,
                    b: DenseVec::zeros(w[1]),
                }
            })
            .collect();
        VictimModel {
            proj_w,
            proj_b: DenseVec::zeros(dims.rep_dim),
            mlp,
        }
    }

    /// Attack the trained pipeline itself: the encoder's projection layer is
    /// the sub-mask layer and the classifier sits on top.
    pub fn from_model(enc: &EncoderParams, clf: &ClassifierParams) -> VictimModel {
        VictimModel {
            proj_w: enc.proj_w.clone(),
            proj_b: enc.proj_b.clone(),
            mlp: clf.layers.clone(),
        }
    }

    pub fn dims(&self) -> VictimDims {
        VictimDims {
            input_dim: self.proj_w.cols(),
            rep_dim: self.proj_w.rows(),
            hidden: self.mlp[..self.mlp.len() - 1]
                .iter()
                .map(|l| l.w.rows())
                .collect(),
            num_classes: self.mlp.last().unwrap().w.rows(),
        }
    }

    fn n_grad_params(&self) -> usize {
        let mut n = self.proj_w.rows() * self.proj_w.cols() + self.proj_b.len();
        for l in &self.mlp {
            n += l.w.rows() * l.w.cols() + l.b.len();
        }
        n
    }
}

/// Flattened gradient of the victim model, in block order
/// (proj_w, proj_b, then each MLP layer's w and b).
type FlatGrads = Vec<f64>;

/// Exact-CE gradient of the victim pipeline for one (possibly mixed, possibly
/// masked) hidden input. Inputs are the raw slot vectors and coefficients;
/// every slot contributes to the projection gradient, as in the real
/// pipeline.
fn victim_gradient(
    model: &VictimModel,
    slot_inputs: &[Vec<f64>],
    lambda: &[f64],
    mask: Option<&[f64]>,
    label: &[f64],
) -> FlatGrads {
    let d = model.proj_w.rows();
    // Forward per slot, then mix.
    let mut slot_reps: Vec<Vec<f64>> = Vec::with_capacity(slot_inputs.len());
    let mut mix = vec![0.0; d];
    for (v, lam) in slot_inputs.iter().zip(lambda) {
        let mut z = model.proj_w.matvec(v);
        for (zi, bi) in z.iter_mut().zip(&model.proj_b.0) {
            *zi += bi;
        }
        let e: Vec<f64> = z.iter().map(|x| x.tanh()).collect();
        for (m, ei) in mix.iter_mut().zip(&e) {
            *m += lam * ei;
        }
        slot_reps.push(e);
    }
    let h: Vec<f64> = match mask {
        Some(s) => mix.iter().zip(s).map(|(m, si)| m * si).collect(),
        None => mix.clone(),
    };
    // MLP forward.
    let m_layers = model.mlp.len();
    let mut acts = Vec::with_capacity(m_layers);
    let mut pre = Vec::with_capacity(m_layers);
    let mut a = h;
    for (l, layer) in model.mlp.iter().enumerate() {
        let mut z = layer.w.matvec(&a);
        for (zi, bi) in z.iter_mut().zip(&layer.b.0) {
            *zi += bi;
        }
        acts.push(a);
        a = if l == m_layers - 1 {
            z.clone()
        } else {
            z.iter().map(|x| x.max(0.0)).collect()
        };
        pre.push(z);
    }
    let p = softmax(pre.last().unwrap());
    // Backward.
    let s_mass: f64 = label.iter().sum();
    let mut delta: Vec<f64> = p
        .iter()
        .zip(label)
        .map(|(pi, yi)| s_mass * pi - yi)
        .collect();
    let mut mlp_grads: Vec<(DenseMat, Vec<f64>)> = model
        .mlp
        .iter()
        .map(|l| (DenseMat::zeros(l.w.rows(), l.w.cols()), vec![0.0; l.b.len()]))
        .collect();
    for l in (0..m_layers).rev() {
        mlp_grads[l].0.add_outer(1.0, &delta, &acts[l]);
        for (b, dd) in mlp_grads[l].1.iter_mut().zip(&delta) {
            *b += dd;
        }
        let upstream = model.mlp[l].w.matvec_t(&delta);
        if l > 0 {
            delta = upstream
                .iter()
                .zip(&pre[l - 1])
                .map(|(u, z)| if *z > 0.0 { *u } else { 0.0 })
                .collect();
        } else {
            delta = upstream;
        }
    }
    let d_h = delta;
    let d_mix: Vec<f64> = match mask {
        Some(s) => d_h.iter().zip(s).map(|(d, si)| d * si).collect(),
        None => d_h,
    };
    let mut g_proj_w = DenseMat::zeros(model.proj_w.rows(), model.proj_w.cols());
    let mut g_proj_b = vec![0.0; d];
    for ((v, e), lam) in slot_inputs.iter().zip(&slot_reps).zip(lambda) {
        let dz: Vec<f64> = d_mix
            .iter()
            .zip(e)
            .map(|(dm, ei)| lam * dm * (1.0 - ei * ei))
            .collect();
        g_proj_w.add_outer(1.0, &dz, v);
        for (b, dzi) in g_proj_b.iter_mut().zip(&dz) {
            *b += dzi;
        }
    }
    let mut flat = Vec::with_capacity(model.n_grad_params());
    flat.extend_from_slice(g_proj_w.data());
    flat.extend_from_slice(&g_proj_b);
    for (w, b) in &mlp_grads {
        flat.extend_from_slice(w.data());
        flat.extend_from_slice(b);
    }
    flat
}

/// `D_g` and its gradient w.r.t. the dummy input, mask, and label.
///
/// The dummy pipeline is always the single-input form (the attacker cannot
/// model unknown mixing partners): `h = sigma o tanh(W x + b)`, then the MLP.
/// Returns `(D_g, d/dx, d/dsigma, d/dy)`.
fn attack_objective(
    model: &VictimModel,
    target: &[f64],
    x: &[f64],
    sigma: Option<&[f64]>,
    y: &[f64],
) -> (f64, Vec<f64>, Option<Vec<f64>>, Vec<f64>) {
    let d = model.proj_w.rows();
    let m_layers = model.mlp.len();

    // Forward.
    let mut z_p = model.proj_w.matvec(x);
    for (zi, bi) in z_p.iter_mut().zip(&model.proj_b.0) {
        *zi += bi;
    }
    let e: Vec<f64> = z_p.iter().map(|v| v.tanh()).collect();
    let h: Vec<f64> = match sigma {
        Some(s) => e.iter().zip(s).map(|(ei, si)| ei * si).collect(),
        None => e.clone(),
    };
    let mut acts = Vec::with_capacity(m_layers);
    let mut pre = Vec::with_capacity(m_layers);
    let mut a = h;
    for (l, layer) in model.mlp.iter().enumerate() {
        let mut z = layer.w.matvec(&a);
        for (zi, bi) in z.iter_mut().zip(&layer.b.0) {
            *zi += bi;
        }
        acts.push(a);
        a = if l == m_layers - 1 {
            z.clone()
        } else {
            z.iter().map(|v| v.max(0.0)).collect()
        };
        pre.push(z);
    }
    let p = softmax(pre.last().unwrap());

    // Gradient pass (the quantities being matched).
    let s_mass: f64 = y.iter().sum();
    let mut deltas: Vec<Vec<f64>> = vec![Vec::new(); m_layers];
    deltas[m_layers - 1] = p
        .iter()
        .zip(y)
        .map(|(pi, yi)| s_mass * pi - yi)
        .collect();
    for l in (0..m_layers - 1).rev() {
        let upstream = model.mlp[l + 1].w.matvec_t(&deltas[l + 1]);
        deltas[l] = upstream
            .iter()
            .zip(&pre[l])
            .map(|(u, z)| if *z > 0.0 { *u } else { 0.0 })
            .collect();
    }
    let d_h = model.mlp[0].w.matvec_t(&deltas[0]);
    let d_e: Vec<f64> = match sigma {
        Some(s) => d_h.iter().zip(s).map(|(dh, si)| dh * si).collect(),
        None => d_h.clone(),
    };
    let delta_p: Vec<f64> = d_e
        .iter()
        .zip(&e)
        .map(|(de, ei)| de * (1.0 - ei * ei))
        .collect();

    // Objective and residuals (residual = 2 * (g - target), consumed by the
    // adjoint pass). Blocks follow victim_gradient's flattening order.
    let mut objective = 0.0;
    let mut offset = 0usize;
    let mut residual_block = |g: &[f64], offset: &mut usize| -> Vec<f64> {
        let t = &target[*offset..*offset + g.len()];
        *offset += g.len();
        g.iter()
            .zip(t)
            .map(|(gi, ti)| {
                let r = gi - ti;
                objective += r * r;
                2.0 * r
            })
            .collect()
    };
    // proj_w gradient is delta_p x^T, proj_b gradient is delta_p.
    let g_proj_w: Vec<f64> = delta_p
        .iter()
        .flat_map(|dp| x.iter().map(move |xi| dp * xi))
        .collect();
    let res_proj_w = residual_block(&g_proj_w, &mut offset);
    let res_proj_b = residual_block(&delta_p, &mut offset);
    let mut res_mlp: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(m_layers);
    for l in 0..m_layers {
        let g_w: Vec<f64> = deltas[l]
            .iter()
            .flat_map(|dl| acts[l].iter().map(move |ai| dl * ai))
            .collect();
        let rw = residual_block(&g_w, &mut offset);
        let rb = residual_block(&deltas[l], &mut offset);
        res_mlp.push((rw, rb));
    }
    debug_assert_eq!(offset, target.len());

    // Adjoint pass, in reverse order of the two-pass computation above.
    // delta_p adjoint: from G_proj_w = delta_p x^T and G_proj_b = delta_p.
    let in_dim = x.len();
    let mut delta_p_bar = vec![0.0; d];
    for i in 0..d {
        let row = &res_proj_w[i * in_dim..(i + 1) * in_dim];
        delta_p_bar[i] = row.iter().zip(x).map(|(r, xi)| r * xi).sum::<f64>() + res_proj_b[i];
    }
    let mut x_bar = vec![0.0; in_dim];
    for i in 0..d {
        let row = &res_proj_w[i * in_dim..(i + 1) * in_dim];
        for (xb, r) in x_bar.iter_mut().zip(row) {
            *xb += r * delta_p[i];
        }
    }

    // delta_p = d_e * (1 - e^2).
    let d_e_bar: Vec<f64> = delta_p_bar
        .iter()
        .zip(&e)
        .map(|(dpb, ei)| dpb * (1.0 - ei * ei))
        .collect();
    let mut e_bar: Vec<f64> = delta_p_bar
        .iter()
        .zip(&d_e)
        .zip(&e)
        .map(|((dpb, de), ei)| dpb * de * (-2.0 * ei))
        .collect();

    // d_e = sigma o d_h.
    let mut sigma_bar = sigma.map(|_| vec![0.0; d]);
    let d_h_bar: Vec<f64> = match sigma {
        Some(s) => {
            let sb = sigma_bar.as_mut().unwrap();
            for ((sb_i, dh), deb) in sb.iter_mut().zip(&d_h).zip(&d_e_bar) {
                *sb_i += dh * deb;
            }
            d_e_bar.iter().zip(s).map(|(deb, si)| deb * si).collect()
        }
        None => d_e_bar,
    };

    // d_h = W_0^T deltas[0], then the delta recursion upward.
    let mut delta_bars: Vec<Vec<f64>> = vec![Vec::new(); m_layers];
    for l in 0..m_layers {
        let mut bar: Vec<f64> = res_mlp[l]
            .0
            .chunks_exact(acts[l].len())
            .zip(&res_mlp[l].1)
            .map(|(row, rb)| row.iter().zip(&acts[l]).map(|(r, ai)| r * ai).sum::<f64>() + rb)
            .collect();
        if l == 0 {
            let extra = model.mlp[0].w.matvec(&d_h_bar);
            for (b, ex) in bar.iter_mut().zip(extra) {
                *b += ex;
            }
        } else {
            // delta[l-1] = (W_l^T delta[l]) o relu'(z[l-1]).
            let gated: Vec<f64> = delta_bars[l - 1]
                .iter()
                .zip(&pre[l - 1])
                .map(|(db, z)| if *z > 0.0 { *db } else { 0.0 })
                .collect();
            let extra = model.mlp[l].w.matvec(&gated);
            for (b, ex) in bar.iter_mut().zip(extra) {
                *b += ex;
            }
        }
        delta_bars[l] = bar;
    }
    // Top of the gradient pass: delta[M-1] = (sum y) p - y.
    let top_bar = &delta_bars[m_layers - 1];
    let mut p_bar: Vec<f64> = top_bar.iter().map(|tb| s_mass * tb).collect();
    let top_dot_p: f64 = top_bar.iter().zip(&p).map(|(tb, pi)| tb * pi).sum();
    let y_bar_from_delta: Vec<f64> = top_bar.iter().map(|tb| top_dot_p - tb).collect();

    // Forward-graph adjoints. p = softmax(z[M-1]).
    let p_dot: f64 = p_bar.iter().zip(&p).map(|(pb, pi)| pb * pi).sum();
    let mut z_bar: Vec<f64> = p
        .iter()
        .zip(&p_bar)
        .map(|(pi, pb)| pi * (pb - p_dot))
        .collect();
    let mut a_bar: Vec<f64> = Vec::new();
    for l in (0..m_layers).rev() {
        if l < m_layers - 1 {
            z_bar = a_bar
                .iter()
                .zip(&pre[l])
                .map(|(ab, z)| if *z > 0.0 { *ab } else { 0.0 })
                .collect();
        }
        a_bar = model.mlp[l].w.matvec_t(&z_bar);
        // Direct term from G_Wl = delta[l] a[l]^T.
        let in_dim_l = acts[l].len();
        for i in 0..deltas[l].len() {
            let row = &res_mlp[l].0[i * in_dim_l..(i + 1) * in_dim_l];
            for (ab, r) in a_bar.iter_mut().zip(row) {
                *ab += r * deltas[l][i];
            }
        }
        p_bar.clear(); // consumed
    }
    let h_bar = a_bar;

    // h = sigma o e.
    match sigma {
        Some(s) => {
            let sb = sigma_bar.as_mut().unwrap();
            for ((sb_i, ei), hb) in sb.iter_mut().zip(&e).zip(&h_bar) {
                *sb_i += ei * hb;
            }
            for ((eb, si), hb) in e_bar.iter_mut().zip(s).zip(&h_bar) {
                *eb += si * hb;
            }
        }
        None => {
            for (eb, hb) in e_bar.iter_mut().zip(&h_bar) {
                *eb += hb;
            }
        }
    }

    // e = tanh(z_p); z_p = W_p x + b_p.
    let z_p_bar: Vec<f64> = e_bar
        .iter()
        .zip(&e)
        .map(|(eb, ei)| eb * (1.0 - ei * ei))
        .collect();
    let x_from_proj = model.proj_w.matvec_t(&z_p_bar);
    for (xb, xp) in x_bar.iter_mut().zip(x_from_proj) {
        *xb += xp;
    }

    (objective, x_bar, sigma_bar, y_bar_from_delta)
}

/// Attack hyperparameters and experiment knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub reveal_true_label: bool,
    /// The single-mask (`m = 1`) leakage-upper-bound regime.
    pub fixed_single_mask: bool,
    /// Input-MSE success threshold.
    pub success_threshold: f64,
    pub trials: usize,
    /// Log curves every this many iterations.
    pub log_every: usize,
    /// MLP hidden widths of synthetic victims.
    pub hidden: Vec<usize>,
    pub num_classes: usize,
    /// Start the dummies at the true values (fixed-point check only).
    #[serde(default)]
    pub init_at_truth: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            iterations: 1200,
            learning_rate: 0.1,
            reveal_true_label: true,
            fixed_single_mask: true,
            success_threshold: 1e-3,
            trials: 20,
            log_every: 10,
            hidden: vec![24],
            num_classes: 2,
            init_at_truth: false,
        }
    }
}

/// One grid cell: mixing degree, masking, and representation width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub k: usize,
    pub masked: bool,
    pub d: usize,
}

impl Scenario {
    pub fn label(&self) -> String {
        if self.masked {
            format!("k{}_d{}_masked", self.k, self.d)
        } else {
            format!("k{}_d{}_nomask", self.k, self.d)
        }
    }
}

/// A generated victim: public model, observed gradient, and the ground truth
/// retained for scoring only.
#[derive(Debug, Clone)]
pub struct GradMatchInstance {
    pub model: VictimModel,
    pub target_grads: FlatGrads,
    pub true_input: Vec<f64>,
    pub true_mask: Option<Vec<f64>>,
    pub true_label: SoftLabel,
}

/// Generate a victim for one trial of a scenario: fresh model, fresh input,
/// fresh one-time mask, `k - 1` fresh partners.
pub fn make_instance(scenario: &Scenario, cfg: &AttackConfig, stream: &mut RngStream) -> GradMatchInstance {
    let dims = VictimDims {
        input_dim: scenario.d,
        rep_dim: scenario.d,
        hidden: cfg.hidden.clone(),
        num_classes: cfg.num_classes,
    };
    let model = VictimModel::init(&dims, &mut stream.child("model"));
    let mut data_stream = stream.child("data");
    let slot_inputs: Vec<Vec<f64>> = (0..scenario.k)
        .map(|_| data_stream.normal_vec(dims.input_dim))
        .collect();
    let slot_labels: Vec<usize> = (0..scenario.k)
        .map(|_| data_stream.below(dims.num_classes as u64) as usize)
        .collect();
    let lambda = crate::texthide::sample_lambda(1, scenario.k, &mut data_stream.child("lambda"))
        .pop()
        .unwrap();
    let mask: Option<Vec<f64>> = scenario
        .masked
        .then(|| (0..dims.rep_dim).map(|_| data_stream.rademacher()).collect());
    // Mixed victim label, exactly as the hiding step would produce it.
    let mut label = vec![0.0; dims.num_classes];
    for (lam, cls) in lambda.iter().zip(&slot_labels) {
        label[*cls] += lam;
    }
    let target_grads = victim_gradient(&model, &slot_inputs, &lambda, mask.as_deref(), &label);
    GradMatchInstance {
        model,
        target_grads,
        true_input: slot_inputs[0].clone(),
        true_mask: mask,
        true_label: SoftLabel::one_hot(slot_labels[0], dims.num_classes),
    }
}

/// One logged point of the attack trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub grad_distance: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask_mse: Option<f64>,
    pub input_mse: f64,
}

/// Result of one attack trial.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub success: bool,
    pub final_input_mse: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_mask_mse: Option<f64>,
    pub final_grad_distance: f64,
    pub curves: Vec<CurvePoint>,
    pub recovered_input: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recovered_mask: Option<Vec<f64>>,
    pub recovered_label: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

fn mse_slice(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64
}

/// Run the attack on one instance.
pub fn grad_match_attack(
    instance: &GradMatchInstance,
    cfg: &AttackConfig,
    stream: &mut RngStream,
) -> AttackOutcome {
    let dims = instance.model.dims();
    let masked = instance.true_mask.is_some();
    let mut x: Vec<f64>;
    let mut sigma: Option<Vec<f64>>;
    let mut y_logits: Vec<f64>;
    if cfg.init_at_truth {
        x = instance.true_input.clone();
        sigma = instance.true_mask.clone();
        // Logits reproducing the true label closely enough for a one-hot.
        y_logits = instance
            .true_label
            .0
            .iter()
            .map(|p| if *p > 0.5 { 30.0 } else { 0.0 })
            .collect();
    } else {
        x = stream.normal_vec(dims.input_dim);
        sigma = masked.then(|| stream.normal_vec(dims.rep_dim));
        y_logits = stream.normal_vec(dims.num_classes);
    }

    let n_free = dims.input_dim
        + if masked { dims.rep_dim } else { 0 }
        + if cfg.reveal_true_label {
            0
        } else {
            dims.num_classes
        };
    let mut opt = OptState::new(n_free, AdamConfig::with_lr(cfg.learning_rate));

    let mut curves = Vec::new();
    let mut diagnostic = None;
    let mut last_dg = f64::INFINITY;
    for iter in 0..cfg.iterations {
        let y: Vec<f64> = if cfg.reveal_true_label {
            instance.true_label.0.clone()
        } else {
            softmax(&y_logits)
        };
        let (dg, x_bar, sigma_bar, y_bar) = attack_objective(
            &instance.model,
            &instance.target_grads,
            &x,
            sigma.as_deref(),
            &y,
        );
        last_dg = dg;
        if !dg.is_finite() {
            diagnostic = Some(format!("non-finite attack loss at iteration {iter}"));
            break;
        }
        if iter % cfg.log_every == 0 {
            curves.push(CurvePoint {
                iteration: iter,
                grad_distance: dg,
                mask_mse: sigma
                    .as_deref()
                    .map(|s| mse_slice(s, instance.true_mask.as_ref().unwrap())),
                input_mse: mse_slice(&x, &instance.true_input),
            });
        }
        // Assemble the free-parameter vector and its gradient.
        let mut free = x.clone();
        let mut grad = x_bar;
        if let Some(s) = &sigma {
            free.extend_from_slice(s);
            grad.extend_from_slice(sigma_bar.as_ref().unwrap());
        }
        if !cfg.reveal_true_label {
            // Chain through the softmax parameterization of the dummy label.
            let y_dot: f64 = y_bar.iter().zip(&y).map(|(g, yi)| g * yi).sum();
            let u_bar: Vec<f64> = y
                .iter()
                .zip(&y_bar)
                .map(|(yi, g)| yi * (g - y_dot))
                .collect();
            free.extend_from_slice(&y_logits);
            grad.extend_from_slice(&u_bar);
        }
        if adam_step(&mut free, &grad, &mut opt).is_err() {
            diagnostic = Some("optimizer shape mismatch".into());
            break;
        }
        // Unpack.
        let mut cursor = dims.input_dim;
        x.copy_from_slice(&free[..cursor]);
        if let Some(s) = &mut sigma {
            s.copy_from_slice(&free[cursor..cursor + dims.rep_dim]);
            cursor += dims.rep_dim;
        }
        if !cfg.reveal_true_label {
            y_logits.copy_from_slice(&free[cursor..]);
        }
    }
    let final_input_mse = mse_slice(&x, &instance.true_input);
    let final_mask_mse = sigma
        .as_deref()
        .map(|s| mse_slice(s, instance.true_mask.as_ref().unwrap()));
    let final_label = if cfg.reveal_true_label {
        instance.true_label.0.clone()
    } else {
        softmax(&y_logits)
    };
    curves.push(CurvePoint {
        iteration: cfg.iterations,
        grad_distance: last_dg,
        mask_mse: final_mask_mse,
        input_mse: final_input_mse,
    });
    AttackOutcome {
        success: diagnostic.is_none() && final_input_mse <= cfg.success_threshold,
        final_input_mse,
        final_mask_mse,
        final_grad_distance: last_dg,
        curves,
        recovered_input: x,
        recovered_mask: sigma,
        recovered_label: final_label,
        diagnostic,
    }
}

/// Aggregated result of one grid cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellResult {
    pub scenario: Scenario,
    pub trials: usize,
    pub successes: usize,
    pub rate: f64,
    pub mean_final_input_mse: f64,
    #[serde(skip)]
    pub outcomes: Vec<AttackOutcome>,
}

/// Run `cfg.trials` independent victims/attacks per scenario; trials run in
/// parallel on keyed streams.
pub fn attack_success_rate(
    grid: &[Scenario],
    cfg: &AttackConfig,
    root: &RngStream,
) -> Result<Vec<CellResult>> {
    if cfg.iterations == 0 || cfg.success_threshold <= 0.0 {
        return Err(Error::Config(
            "attack config: iterations >= 1 and threshold > 0 required".into(),
        ));
    }
    grid.iter()
        .map(|scenario| {
            let outcomes: Vec<AttackOutcome> = (0..cfg.trials)
                .into_par_iter()
                .map(|trial| {
                    let mut inst_stream = root
                        .descend(&["gradmatch", &scenario.label()])
                        .descend(&["trial", &trial.to_string()]);
                    let instance = make_instance(scenario, cfg, &mut inst_stream.child("victim"));
                    grad_match_attack(&instance, cfg, &mut inst_stream.child("dummy"))
                })
                .collect();
            let successes = outcomes.iter().filter(|o| o.success).count();
            let mean_final_input_mse = outcomes
                .iter()
                .map(|o| o.final_input_mse)
                .sum::<f64>()
                / outcomes.len().max(1) as f64;
            Ok(CellResult {
                scenario: scenario.clone(),
                trials: cfg.trials,
                successes,
                rate: successes as f64 / cfg.trials.max(1) as f64,
                mean_final_input_mse,
                outcomes,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::seeded_stream;

    fn small_cfg() -> AttackConfig {
        AttackConfig {
            iterations: 300,
            hidden: vec![10],
            ..Default::default()
        }
    }

    #[test]
    fn attack_objective_matches_finite_differences() {
        let cfg = small_cfg();
        let scenario = Scenario {
            k: 2,
            masked: true,
            d: 5,
        };
        let mut s = seeded_stream(51, &["fd"]);
        let inst = make_instance(&scenario, &cfg, &mut s.child("victim"));
        let x: Vec<f64> = s.normal_vec(5);
        let sigma: Vec<f64> = s.normal_vec(5);
        let y: Vec<f64> = softmax(&s.normal_vec(2));

        let (_, x_bar, sigma_bar, y_bar) =
            attack_objective(&inst.model, &inst.target_grads, &x, Some(&sigma), &y);

        let eps = 1e-6;
        let f = |x: &[f64], sigma: &[f64], y: &[f64]| {
            attack_objective(&inst.model, &inst.target_grads, x, Some(sigma), y).0
        };
        let check = |analytic: &[f64], base: &[f64], which: usize| {
            for i in 0..base.len() {
                let mut plus = base.to_vec();
                plus[i] += eps;
                let mut minus = base.to_vec();
                minus[i] -= eps;
                let (fp, fm) = match which {
                    0 => (f(&plus, &sigma, &y), f(&minus, &sigma, &y)),
                    1 => (f(&x, &plus, &y), f(&x, &minus, &y)),
                    _ => (f(&x, &sigma, &plus), f(&x, &sigma, &minus)),
                };
                let numeric = (fp - fm) / (2.0 * eps);
                let rel = (analytic[i] - numeric).abs()
                    / (analytic[i].abs() + numeric.abs()).max(1e-8);
                assert!(
                    rel <= 1e-3,
                    "block {which} coord {i}: analytic {} vs numeric {numeric}",
                    analytic[i]
                );
            }
        };
        check(&x_bar, &x, 0);
        check(sigma_bar.as_ref().unwrap(), &sigma, 1);
        check(&y_bar, &y, 2);
    }

    #[test]
    fn objective_without_mask_also_checks_out() {
        let cfg = small_cfg();
        let scenario = Scenario {
            k: 1,
            masked: false,
            d: 4,
        };
        let mut s = seeded_stream(52, &["fd2"]);
        let inst = make_instance(&scenario, &cfg, &mut s.child("victim"));
        let x: Vec<f64> = s.normal_vec(4);
        let y: Vec<f64> = softmax(&s.normal_vec(2));
        let (_, x_bar, _, _) = attack_objective(&inst.model, &inst.target_grads, &x, None, &y);
        let eps = 1e-6;
        for i in 0..4 {
            let mut plus = x.clone();
            plus[i] += eps;
            let mut minus = x.clone();
            minus[i] -= eps;
            let fp = attack_objective(&inst.model, &inst.target_grads, &plus, None, &y).0;
            let fm = attack_objective(&inst.model, &inst.target_grads, &minus, None, &y).0;
            let numeric = (fp - fm) / (2.0 * eps);
            let rel =
                (x_bar[i] - numeric).abs() / (x_bar[i].abs() + numeric.abs()).max(1e-8);
            assert!(rel <= 1e-3, "coord {i}");
        }
    }

    #[test]
    fn true_triple_is_a_fixed_point() {
        let mut cfg = small_cfg();
        cfg.init_at_truth = true;
        cfg.iterations = 5;
        let scenario = Scenario {
            k: 1,
            masked: true,
            d: 4,
        };
        let mut s = seeded_stream(53, &["fp"]);
        let inst = make_instance(&scenario, &cfg, &mut s.child("victim"));
        let out = grad_match_attack(&inst, &cfg, &mut s.child("dummy"));
        assert!(out.success);
        assert!(out.curves[0].grad_distance < 1e-20, "{:?}", out.curves[0]);
        assert!(out.final_input_mse < 1e-20);
        // Zero gradient means Adam never moves the dummies.
        assert_eq!(out.recovered_input, inst.true_input);
    }

    #[test]
    fn undefended_tiny_instance_is_recoverable() {
        let mut cfg = small_cfg();
        cfg.iterations = 1200;
        let scenario = Scenario {
            k: 1,
            masked: false,
            d: 4,
        };
        let grid = [scenario];
        let root = seeded_stream(54, &["rate"]);
        let mut cfg5 = cfg.clone();
        cfg5.trials = 5;
        let cells = attack_success_rate(&grid, &cfg5, &root).unwrap();
        assert!(
            cells[0].successes >= 3,
            "rate {} mean mse {}",
            cells[0].rate,
            cells[0].mean_final_input_mse
        );
        // Gradient distance decreases over the run for successful trials.
        let ok = cells[0].outcomes.iter().find(|o| o.success).unwrap();
        let first = ok.curves.first().unwrap().grad_distance;
        let last = ok.curves.last().unwrap().grad_distance;
        assert!(last < first * 1e-3, "Dg {first} -> {last}");
    }

    #[test]
    fn mixing_with_mask_defeats_the_attack() {
        let mut cfg = small_cfg();
        cfg.iterations = 400;
        cfg.trials = 6;
        let grid = [Scenario {
            k: 2,
            masked: true,
            d: 4,
        }];
        let root = seeded_stream(55, &["rate2"]);
        let cells = attack_success_rate(&grid, &cfg, &root).unwrap();
        assert_eq!(cells[0].successes, 0, "mean mse {}", cells[0].mean_final_input_mse);
    }

    #[test]
    fn curves_have_one_entry_per_logged_iteration() {
        let mut cfg = small_cfg();
        cfg.iterations = 100;
        cfg.log_every = 10;
        let scenario = Scenario {
            k: 1,
            masked: true,
            d: 4,
        };
        let mut s = seeded_stream(56, &["curves"]);
        let inst = make_instance(&scenario, &cfg, &mut s.child("victim"));
        let out = grad_match_attack(&inst, &cfg, &mut s.child("dummy"));
        // 0, 10, ..., 90 plus the final point.
        assert_eq!(out.curves.len(), 11);
        assert!(out.curves.iter().all(|c| c.mask_mse.is_some()));
    }
}
