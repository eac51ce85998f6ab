//! Dense MLP with manual reverse-mode differentiation.
//!
//! The layer stack per hidden layer is: linear, dropout, layer norm, ReLU.
//! Two extras sit at fixed positions: spectral normalization wraps the
//! penultimate linear's weight, and feature normalization rescales the last
//! hidden activation to unit L2 norm right before the final linear map.
//!
//! Forward passes in `Train` mode sample dropout masks from the caller's rng
//! (one mask per hidden layer with a positive rate, in layer order) and
//! persist the refined spectral-norm power-iteration vector; `Eval` mode and
//! the tape-free `mlp_forward_infer` mutate nothing and skip dropout, so
//! repeated evaluation is a pure function of the parameters.

pub mod adamw;
pub mod funcs;
pub mod init;
pub mod spectral;

use crate::error::{Error, Result};
pub use adamw::{AdamHyper, AdamState, ScalarAdam};
use funcs::{
    feature_normalize, feature_normalize_backward, layer_norm_backward, layer_norm_forward,
    relu_inplace, sample_dropout_mask,
};
use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use spectral::{spectral_backward, spectral_normalize};

/// Architecture description. `layer_widths` lists input, hidden..., output;
/// the per-hidden vectors run parallel to the hidden entries.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    pub layer_norm: Vec<bool>,
    pub dropout_rate: Vec<f64>,
    pub feature_norm: bool,
    pub spectral_norm_penultimate: bool,
    pub init_gain: f64,
}

impl MlpSpec {
    /// Unregularized net with the default √2 orthogonal gain.
    pub fn plain(layer_widths: &[usize]) -> MlpSpec {
        let hidden = layer_widths.len().saturating_sub(2);
        MlpSpec {
            layer_widths: layer_widths.to_vec(),
            layer_norm: vec![false; hidden],
            dropout_rate: vec![0.0; hidden],
            feature_norm: false,
            spectral_norm_penultimate: false,
            init_gain: std::f64::consts::SQRT_2,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    pub fn hidden_count(&self) -> usize {
        self.layer_widths.len() - 2
    }

    pub fn linear_count(&self) -> usize {
        self.layer_widths.len() - 1
    }

    /// Index of the linear layer spectral normalization applies to.
    pub fn penultimate_index(&self) -> usize {
        self.linear_count() - 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 3 {
            return Err(Error::InvalidConfig(format!(
                "mlp needs at least one hidden layer, got widths {:?}",
                self.layer_widths
            )));
        }
        if self.layer_widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidConfig(format!(
                "mlp widths must be positive, got {:?}",
                self.layer_widths
            )));
        }
        let h = self.hidden_count();
        if self.layer_norm.len() != h || self.dropout_rate.len() != h {
            return Err(Error::InvalidConfig(format!(
                "per-hidden option lengths ({}, {}) do not match hidden count {h}",
                self.layer_norm.len(),
                self.dropout_rate.len()
            )));
        }
        if self.dropout_rate.iter().any(|&p| !(0.0..1.0).contains(&p)) {
            return Err(Error::InvalidConfig(format!(
                "dropout rates must lie in [0, 1), got {:?}",
                self.dropout_rate
            )));
        }
        if !(self.init_gain > 0.0 && self.init_gain.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "init gain must be positive and finite, got {}",
                self.init_gain
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub gw: Array2<f64>,
    pub gb: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct LnParams {
    pub scale: Array1<f64>,
    pub bias: Array1<f64>,
    pub gscale: Array1<f64>,
    pub gbias: Array1<f64>,
}

/// Parameters plus gradient slots. Backward passes overwrite the slots.
#[derive(Debug, Clone)]
pub struct ParamSet {
    pub linears: Vec<Linear>,
    pub lns: Vec<Option<LnParams>>,
    /// Persistent power-iteration vector, present iff spectral norm is on.
    pub sn_u: Option<Array1<f64>>,
}

/// Identifies one parameter tensor within the fixed traversal order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight { layer: usize, last: bool },
    Bias { layer: usize },
    LnScale { layer: usize },
    LnBias { layer: usize },
}

impl ParamKind {
    /// Weight matrices of every linear but the last: the set decoupled
    /// weight decay applies to. Biases, the final-layer weight, and the
    /// layer-norm affines are excluded.
    pub fn decayable(&self) -> bool {
        matches!(self, ParamKind::Weight { last: false, .. })
    }
}

impl ParamSet {
    pub fn init(spec: &MlpSpec, rng: &mut ChaCha8Rng) -> Result<ParamSet> {
        spec.validate()?;
        let l = spec.linear_count();
        let mut linears = Vec::with_capacity(l);
        for i in 0..l {
            let (fan_in, fan_out) = (spec.layer_widths[i], spec.layer_widths[i + 1]);
            linears.push(Linear {
                w: init::orthogonal_init(fan_in, fan_out, spec.init_gain, rng),
                b: Array1::zeros(fan_out),
                gw: Array2::zeros((fan_in, fan_out)),
                gb: Array1::zeros(fan_out),
            });
        }
        let lns = (0..spec.hidden_count())
            .map(|k| {
                spec.layer_norm[k].then(|| {
                    let d = spec.layer_widths[k + 1];
                    LnParams {
                        scale: Array1::ones(d),
                        bias: Array1::zeros(d),
                        gscale: Array1::zeros(d),
                        gbias: Array1::zeros(d),
                    }
                })
            })
            .collect();
        let sn_u = spec.spectral_norm_penultimate.then(|| {
            let d = spec.layer_widths[spec.penultimate_index()];
            let mut u = Array1::from_shape_fn(d, |_| rng.sample::<f64, _>(StandardNormal));
            let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            u.mapv_inplace(|v| v / norm);
            u
        });
        Ok(ParamSet {
            linears,
            lns,
            sn_u,
        })
    }

    /// Visits every parameter tensor as (kind, params, grads) in the fixed
    /// order: per linear layer, weight then bias, then that hidden layer's
    /// LN scale and bias when present.
    pub fn for_each_param_mut<F>(&mut self, mut f: F) -> Result<()>
    where
        F: FnMut(ParamKind, &mut [f64], &mut [f64]) -> Result<()>,
    {
        let last = self.linears.len() - 1;
        for (i, lin) in self.linears.iter_mut().enumerate() {
            let Linear { w, b, gw, gb } = lin;
            f(
                ParamKind::Weight { layer: i, last: i == last },
                w.as_slice_mut().expect("weights are standard layout"),
                gw.as_slice_mut().expect("grads are standard layout"),
            )?;
            f(
                ParamKind::Bias { layer: i },
                b.as_slice_mut().expect("bias is contiguous"),
                gb.as_slice_mut().expect("bias grad is contiguous"),
            )?;
            if let Some(Some(ln)) = self.lns.get_mut(i) {
                let LnParams {
                    scale,
                    bias,
                    gscale,
                    gbias,
                } = ln;
                f(
                    ParamKind::LnScale { layer: i },
                    scale.as_slice_mut().expect("ln scale is contiguous"),
                    gscale.as_slice_mut().expect("ln scale grad is contiguous"),
                )?;
                f(
                    ParamKind::LnBias { layer: i },
                    bias.as_slice_mut().expect("ln bias is contiguous"),
                    gbias.as_slice_mut().expect("ln bias grad is contiguous"),
                )?;
            }
        }
        Ok(())
    }

    /// (kind, scalar count) per tensor in traversal order.
    pub fn param_layout(&self) -> Vec<(ParamKind, usize)> {
        let mut layout = Vec::new();
        let last = self.linears.len() - 1;
        for (i, lin) in self.linears.iter().enumerate() {
            layout.push((ParamKind::Weight { layer: i, last: i == last }, lin.w.len()));
            layout.push((ParamKind::Bias { layer: i }, lin.b.len()));
            if let Some(Some(ln)) = self.lns.get(i) {
                layout.push((ParamKind::LnScale { layer: i }, ln.scale.len()));
                layout.push((ParamKind::LnBias { layer: i }, ln.bias.len()));
            }
        }
        layout
    }

    pub fn param_count(&self) -> usize {
        self.param_layout().iter().map(|(_, n)| n).sum()
    }

    pub fn zero_grads(&mut self) {
        for lin in &mut self.linears {
            lin.gw.fill(0.0);
            lin.gb.fill(0.0);
        }
        for ln in self.lns.iter_mut().flatten() {
            ln.gscale.fill(0.0);
            ln.gbias.fill(0.0);
        }
    }

    /// Target update: every parameter moves to (1−τ)·self + τ·online; the
    /// spectral-norm vector is copied verbatim rather than blended (it is an
    /// estimator state, not a trainable parameter).
    pub fn polyak_from(&mut self, online: &ParamSet, tau: f64) -> Result<()> {
        if self.linears.len() != online.linears.len() || self.lns.len() != online.lns.len() {
            return Err(Error::ShapeMismatch {
                context: "polyak update",
                expected: format!("{} linears", online.linears.len()),
                actual: format!("{} linears", self.linears.len()),
            });
        }
        fn blend(t: &mut [f64], o: &[f64], tau: f64) {
            for (tv, &ov) in t.iter_mut().zip(o) {
                *tv = (1.0 - tau) * *tv + tau * ov;
            }
        }
        for (t, o) in self.linears.iter_mut().zip(&online.linears) {
            if t.w.dim() != o.w.dim() {
                return Err(Error::ShapeMismatch {
                    context: "polyak update",
                    expected: format!("{:?}", o.w.dim()),
                    actual: format!("{:?}", t.w.dim()),
                });
            }
            blend(t.w.as_slice_mut().unwrap(), o.w.as_slice().unwrap(), tau);
            blend(t.b.as_slice_mut().unwrap(), o.b.as_slice().unwrap(), tau);
        }
        for (t, o) in self.lns.iter_mut().zip(&online.lns) {
            match (t, o) {
                (Some(t), Some(o)) => {
                    blend(t.scale.as_slice_mut().unwrap(), o.scale.as_slice().unwrap(), tau);
                    blend(t.bias.as_slice_mut().unwrap(), o.bias.as_slice().unwrap(), tau);
                }
                (None, None) => {}
                _ => {
                    return Err(Error::ShapeMismatch {
                        context: "polyak update",
                        expected: "matching layer-norm structure".into(),
                        actual: "one side missing ln params".into(),
                    })
                }
            }
        }
        self.sn_u = online.sn_u.clone();
        Ok(())
    }
}

/// Builds optimizer state aligned to the parameter traversal, with the decay
/// mask set per [`ParamKind::decayable`].
pub fn adam_for_params(params: &ParamSet, hyper: AdamHyper) -> AdamState {
    AdamState::new(
        hyper,
        params
            .param_layout()
            .into_iter()
            .map(|(kind, n)| (n, kind.decayable())),
    )
}

/// One optimizer step over every tensor in the set, consuming the gradient
/// slots written by the last backward pass.
pub fn adam_step(params: &mut ParamSet, opt: &mut AdamState) -> Result<()> {
    opt.begin_step();
    params.for_each_param_mut(|_, p, g| opt.update_tensor(p, g))?;
    opt.end_step()
}

pub enum Mode<'r> {
    Eval,
    Train(&'r mut ChaCha8Rng),
}

#[derive(Debug, Clone)]
pub struct LnTape {
    pub xhat: Array2<f64>,
    pub inv_std: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct HiddenTape {
    pub dropout_mask: Option<Array2<f64>>,
    pub ln: Option<LnTape>,
    /// Post-ReLU output, which is also the next linear layer's input.
    pub activation: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct FnTape {
    pub fhat: Array2<f64>,
    pub raw_norms: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct SnTape {
    pub sigma: f64,
    pub u: Array1<f64>,
    pub v: Array1<f64>,
    pub w_eff: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct Tape {
    pub input: Array2<f64>,
    pub hidden: Vec<HiddenTape>,
    pub fnorm: Option<FnTape>,
    pub snorm: Option<SnTape>,
}

enum DropoutSource<'a> {
    Inactive,
    Sample(&'a mut ChaCha8Rng),
    Replay(&'a Tape),
}

/// Forward pass recording a tape for backward. `Train` mode samples dropout
/// and persists the refined spectral-norm vector; `Eval` mutates nothing.
pub fn mlp_forward(
    spec: &MlpSpec,
    params: &mut ParamSet,
    x: &Array2<f64>,
    mode: Mode,
) -> Result<(Array2<f64>, Tape)> {
    match mode {
        Mode::Eval => {
            let (out, tape, _) = forward_impl(spec, params, x, DropoutSource::Inactive, true)?;
            Ok((out, tape.unwrap()))
        }
        Mode::Train(rng) => {
            let (out, tape, new_u) =
                forward_impl(spec, params, x, DropoutSource::Sample(rng), true)?;
            if new_u.is_some() {
                params.sn_u = new_u;
            }
            Ok((out, tape.unwrap()))
        }
    }
}

/// Tape-free deterministic evaluation; never mutates parameters or rng.
pub fn mlp_forward_infer(
    spec: &MlpSpec,
    params: &ParamSet,
    x: &Array2<f64>,
) -> Result<Array2<f64>> {
    let (out, _, _) = forward_impl(spec, params, x, DropoutSource::Inactive, false)?;
    Ok(out)
}

/// Re-runs a forward pass reusing the dropout masks recorded on `prev`,
/// without persisting spectral-norm state. This makes the train-time map a
/// pure function of the parameters, which finite-difference checks need.
pub fn mlp_forward_replay(
    spec: &MlpSpec,
    params: &ParamSet,
    x: &Array2<f64>,
    prev: &Tape,
) -> Result<Array2<f64>> {
    let (out, _, _) = forward_impl(spec, params, x, DropoutSource::Replay(prev), false)?;
    Ok(out)
}

fn check_params(spec: &MlpSpec, params: &ParamSet) -> Result<()> {
    let l = spec.linear_count();
    if params.linears.len() != l || params.lns.len() != spec.hidden_count() {
        return Err(Error::ShapeMismatch {
            context: "mlp params",
            expected: format!("{l} linears, {} ln slots", spec.hidden_count()),
            actual: format!("{} linears, {} ln slots", params.linears.len(), params.lns.len()),
        });
    }
    for i in 0..l {
        let want = (spec.layer_widths[i], spec.layer_widths[i + 1]);
        if params.linears[i].w.dim() != want || params.linears[i].b.len() != want.1 {
            return Err(Error::ShapeMismatch {
                context: "mlp params",
                expected: format!("layer {i} weight {want:?}"),
                actual: format!("{:?}", params.linears[i].w.dim()),
            });
        }
    }
    for k in 0..spec.hidden_count() {
        if params.lns[k].is_some() != spec.layer_norm[k] {
            return Err(Error::ShapeMismatch {
                context: "mlp params",
                expected: format!("ln presence {} at hidden {k}", spec.layer_norm[k]),
                actual: format!("{}", params.lns[k].is_some()),
            });
        }
    }
    if spec.spectral_norm_penultimate {
        let want = spec.layer_widths[spec.penultimate_index()];
        match &params.sn_u {
            Some(u) if u.len() == want => {}
            other => {
                return Err(Error::ShapeMismatch {
                    context: "mlp params",
                    expected: format!("sn vector of length {want}"),
                    actual: format!("{:?}", other.as_ref().map(|u| u.len())),
                })
            }
        }
    }
    Ok(())
}

fn forward_impl(
    spec: &MlpSpec,
    params: &ParamSet,
    x: &Array2<f64>,
    mut dropout: DropoutSource,
    want_tape: bool,
) -> Result<(Array2<f64>, Option<Tape>, Option<Array1<f64>>)> {
    spec.validate()?;
    check_params(spec, params)?;
    if x.ncols() != spec.input_dim() {
        return Err(Error::ShapeMismatch {
            context: "mlp input",
            expected: format!("width {}", spec.input_dim()),
            actual: format!("width {}", x.ncols()),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("mlp input"));
    }

    let h_count = spec.hidden_count();
    let pen = spec.penultimate_index();
    let mut hidden_tapes: Vec<HiddenTape> = Vec::with_capacity(if want_tape { h_count } else { 0 });
    let mut sn_tape = None;
    let mut new_u = None;
    let mut cur = x.clone();

    for k in 0..h_count {
        let lin = &params.linears[k];
        let mut z = if spec.spectral_norm_penultimate && k == pen {
            let u = params.sn_u.as_ref().expect("checked by check_params");
            let step = spectral_normalize(&lin.w, u)?;
            let z = cur.dot(&step.w_eff);
            if want_tape {
                sn_tape = Some(SnTape {
                    sigma: step.sigma,
                    u: step.u_next.clone(),
                    v: step.v,
                    w_eff: step.w_eff,
                });
            }
            new_u = Some(step.u_next);
            z
        } else {
            cur.dot(&lin.w)
        };
        for mut row in z.rows_mut() {
            row += &lin.b;
        }

        let rate = spec.dropout_rate[k];
        let mask = if rate > 0.0 {
            match &mut dropout {
                DropoutSource::Inactive => None,
                DropoutSource::Sample(rng) => Some(sample_dropout_mask(z.dim(), rate, *rng)),
                DropoutSource::Replay(prev) => {
                    let m = prev
                        .hidden
                        .get(k)
                        .and_then(|h| h.dropout_mask.as_ref())
                        .ok_or(Error::ShapeMismatch {
                            context: "mlp tape replay",
                            expected: format!("dropout mask at hidden layer {k}"),
                            actual: "no mask recorded".into(),
                        })?;
                    Some(m.clone())
                }
            }
        } else {
            None
        };
        if let Some(m) = &mask {
            z.zip_mut_with(m, |a, &b| *a *= b);
        }

        let ln_tape = if spec.layer_norm[k] {
            let lnp = params.lns[k].as_ref().expect("checked by check_params");
            let (out, xhat, inv_std) = layer_norm_forward(&z, &lnp.scale, &lnp.bias);
            z = out;
            Some(LnTape { xhat, inv_std })
        } else {
            None
        };

        relu_inplace(&mut z);
        if want_tape {
            hidden_tapes.push(HiddenTape {
                dropout_mask: mask,
                ln: ln_tape,
                activation: z.clone(),
            });
        }
        cur = z;
    }

    let fn_tape = if spec.feature_norm {
        let (fhat, raw_norms) = feature_normalize(&cur);
        cur = fhat.clone();
        Some(FnTape { fhat, raw_norms })
    } else {
        None
    };

    let last = &params.linears[spec.linear_count() - 1];
    let mut out = cur.dot(&last.w);
    for mut row in out.rows_mut() {
        row += &last.b;
    }

    let tape = want_tape.then(|| Tape {
        input: x.clone(),
        hidden: hidden_tapes,
        fnorm: fn_tape,
        snorm: sn_tape,
    });
    Ok((out, tape, new_u))
}

fn check_tape(spec: &MlpSpec, tape: &Tape, gout: &Array2<f64>) -> Result<()> {
    let batch = gout.nrows();
    let mismatch = |expected: String, actual: String| Error::ShapeMismatch {
        context: "mlp tape",
        expected,
        actual,
    };
    if gout.ncols() != spec.output_dim() {
        return Err(mismatch(
            format!("grad width {}", spec.output_dim()),
            format!("{}", gout.ncols()),
        ));
    }
    if tape.input.dim() != (batch, spec.input_dim()) {
        return Err(mismatch(
            format!("input {:?}", (batch, spec.input_dim())),
            format!("{:?}", tape.input.dim()),
        ));
    }
    if tape.hidden.len() != spec.hidden_count() {
        return Err(mismatch(
            format!("{} hidden records", spec.hidden_count()),
            format!("{}", tape.hidden.len()),
        ));
    }
    for (k, h) in tape.hidden.iter().enumerate() {
        let want = (batch, spec.layer_widths[k + 1]);
        if h.activation.dim() != want {
            return Err(mismatch(
                format!("activation {want:?} at hidden {k}"),
                format!("{:?}", h.activation.dim()),
            ));
        }
        if let Some(m) = &h.dropout_mask {
            if m.dim() != want || spec.dropout_rate[k] == 0.0 {
                return Err(mismatch(
                    format!("mask {want:?} only where rate > 0 at hidden {k}"),
                    format!("{:?} (rate {})", m.dim(), spec.dropout_rate[k]),
                ));
            }
        }
        if h.ln.is_some() != spec.layer_norm[k] {
            return Err(mismatch(
                format!("ln record {} at hidden {k}", spec.layer_norm[k]),
                format!("{}", h.ln.is_some()),
            ));
        }
    }
    if tape.fnorm.is_some() != spec.feature_norm {
        return Err(mismatch(
            format!("feature-norm record {}", spec.feature_norm),
            format!("{}", tape.fnorm.is_some()),
        ));
    }
    if tape.snorm.is_some() != spec.spectral_norm_penultimate {
        return Err(mismatch(
            format!("spectral-norm record {}", spec.spectral_norm_penultimate),
            format!("{}", tape.snorm.is_some()),
        ));
    }
    Ok(())
}

/// Reverse pass. Writes parameter gradients into the grad slots
/// (overwriting whatever a previous backward left there) and returns the
/// gradient w.r.t. the input batch.
pub fn mlp_backward(
    spec: &MlpSpec,
    params: &mut ParamSet,
    tape: &Tape,
    gout: &Array2<f64>,
) -> Result<Array2<f64>> {
    backward_impl(spec, params, tape, gout, true)
}

/// Reverse pass that only computes the input gradient, leaving every
/// parameter gradient slot untouched.
pub fn mlp_backward_input(
    spec: &MlpSpec,
    params: &mut ParamSet,
    tape: &Tape,
    gout: &Array2<f64>,
) -> Result<Array2<f64>> {
    backward_impl(spec, params, tape, gout, false)
}

/// Matrix products inherit their operands' memory order (a single-column
/// product comes back F-order); gradient slots must stay C-order so the
/// optimizer can view them as flat slices.
fn to_standard(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().to_owned()
    }
}

fn backward_impl(
    spec: &MlpSpec,
    params: &mut ParamSet,
    tape: &Tape,
    gout: &Array2<f64>,
    write_grads: bool,
) -> Result<Array2<f64>> {
    spec.validate()?;
    check_params(spec, params)?;
    check_tape(spec, tape, gout)?;

    let l = spec.linear_count();
    let h_count = spec.hidden_count();
    let pen = spec.penultimate_index();
    let mut g = gout.clone();

    // Final linear. Its input is the feature-normalized vector when FN is
    // on, else the last hidden activation.
    let fin_input: &Array2<f64> = match &tape.fnorm {
        Some(f) => &f.fhat,
        None => &tape.hidden[h_count - 1].activation,
    };
    if write_grads {
        params.linears[l - 1].gw = to_standard(fin_input.t().dot(&g));
        params.linears[l - 1].gb = g.sum_axis(Axis(0));
    }
    g = g.dot(&params.linears[l - 1].w.t());

    if let Some(f) = &tape.fnorm {
        g = feature_normalize_backward(&g, &f.fhat, &f.raw_norms);
    }

    for k in (0..h_count).rev() {
        let h = &tape.hidden[k];
        // ReLU: zero where the recorded activation was clamped.
        g.zip_mut_with(&h.activation, |gv, &av| {
            if av <= 0.0 {
                *gv = 0.0;
            }
        });

        if let Some(lnt) = &h.ln {
            let lnp = params.lns[k].as_mut().expect("checked by check_params");
            let (mut gscale, mut gbias) = if write_grads {
                lnp.gscale.fill(0.0);
                lnp.gbias.fill(0.0);
                (lnp.gscale.clone(), lnp.gbias.clone())
            } else {
                (Array1::zeros(lnp.scale.len()), Array1::zeros(lnp.scale.len()))
            };
            g = layer_norm_backward(&g, &lnt.xhat, &lnt.inv_std, &lnp.scale, &mut gscale, &mut gbias);
            if write_grads {
                lnp.gscale = gscale;
                lnp.gbias = gbias;
            }
        }

        if let Some(m) = &h.dropout_mask {
            g.zip_mut_with(m, |gv, &mv| *gv *= mv);
        }

        let lin_input: &Array2<f64> = if k == 0 {
            &tape.input
        } else {
            &tape.hidden[k - 1].activation
        };
        let sn_here = spec.spectral_norm_penultimate && k == pen;
        if write_grads {
            let gw_applied = lin_input.t().dot(&g);
            params.linears[k].gw = to_standard(if sn_here {
                let snt = tape.snorm.as_ref().expect("checked by check_tape");
                spectral_backward(&gw_applied, &snt.w_eff, snt.sigma, &snt.u, &snt.v)
            } else {
                gw_applied
            });
            params.linears[k].gb = g.sum_axis(Axis(0));
        }
        g = if sn_here {
            let snt = tape.snorm.as_ref().expect("checked by check_tape");
            g.dot(&snt.w_eff.t())
        } else {
            g.dot(&params.linears[k].w.t())
        };
    }
    Ok(g)
}
