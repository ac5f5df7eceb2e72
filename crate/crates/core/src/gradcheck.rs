//! Gradient verification: analytic gradients from the tape against f64
//! central differences, plus the standard fragment battery the CLI and the
//! acceptance suite run.

use alloc::vec;
use alloc::vec::Vec;

use crate::encoder::{encode, EncoderParams};
use crate::error::{CoreError, Result};
use crate::generator::{
    build_targets, object_self_attention, query_guided_attention, word_object_affinity,
    GeneratorParams, QueryAttentionParams, SelfAttentionParams, TargetBundle,
};
use crate::inputs::{EpisodeTensors, GroundTruth};
use crate::localizer::{
    enumerate_proposals, localization_loss, score_proposals, LocalizerParams,
};
use crate::model::{forward_loss, ModelConfig, ModelParams};
use crate::nn::{BoundParams, GruCellParams, ParamId, ParamSet};
use crate::rng::SplitMix64;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::tracker::{track_episode, track_stream, UpdaterParams};

/// Result of checking one model fragment.
#[derive(Debug, Clone)]
pub struct FragmentReport {
    pub name: &'static str,
    pub max_rel_err: f64,
    /// Spec bound for this fragment (1e-6 for smooth affine chains, 1e-4
    /// for everything with pooling/recurrence).
    pub tolerance: f64,
    pub checked_scalars: usize,
}

impl FragmentReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

/// Relative error with an absolute floor, so that near-zero gradient pairs
/// compare absolutely instead of amplifying rounding noise.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

fn eval_loss<F>(inputs: &[Tensor<f64>], build: &F) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    let t = tape.value(loss);
    if t.numel() != 1 {
        return Err(CoreError::InvalidArgument {
            op: "gradcheck",
            detail: alloc::format!("loss must be scalar, got {:?}", t.shape()),
        });
    }
    t.check_finite("gradcheck")?;
    Ok(t.data()[0])
}

/// Compare tape gradients of a scalar loss against central differences for
/// the first `n_checked` inputs. Returns the worst relative error.
///
/// `build` must be a pure function of the leaf values: it is re-invoked for
/// every perturbed evaluation.
pub fn check_gradients<F>(
    inputs: &[Tensor<f64>],
    n_checked: usize,
    eps: f64,
    build: &F,
) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let mut worst = 0.0f64;
    let mut work = inputs.to_vec();
    for i in 0..n_checked {
        let n = inputs[i].numel();
        let analytic: Vec<f64> = match grads.get(vars[i]) {
            Some(g) => g.to_vec(),
            None => vec![0.0; n],
        };
        for j in 0..n {
            let x0 = work[i].data()[j];
            let h = eps * x0.abs().max(1.0);
            work[i].data_mut()[j] = x0 + h;
            let f_plus = eval_loss(&work, build)?;
            work[i].data_mut()[j] = x0 - h;
            let f_minus = eval_loss(&work, build)?;
            work[i].data_mut()[j] = x0;
            let numeric = (f_plus - f_minus) / (2.0 * h);
            worst = worst.max(rel_err(analytic[j], numeric));
        }
    }
    Ok(worst)
}

pub const DEFAULT_EPS: f64 = 1e-5;

/// Small dimensions used by the fragment battery.
#[derive(Debug, Clone, Copy)]
pub struct CheckDims {
    pub d: usize,
    pub k_objects: usize,
    pub k_filters: usize,
    pub n_words: usize,
    pub m: usize,
    pub budget: usize,
}

impl Default for CheckDims {
    fn default() -> Self {
        Self { d: 8, k_objects: 4, k_filters: 2, n_words: 5, m: 6, budget: 16 }
    }
}

impl CheckDims {
    pub fn to_config(self) -> ModelConfig {
        ModelConfig {
            d: self.d,
            k_objects: self.k_objects,
            k_filters: self.k_filters,
            d_o: 6,
            d_in: 7,
            d_w: 5,
            d_g: 5,
            m: self.m,
            n_max: 25,
            proposal_budget: self.budget,
            ..ModelConfig::default()
        }
    }
}

fn randn(shape: &[usize], scale: f64, rng: &mut SplitMix64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.normal() * scale).collect();
    Tensor::from_vec(shape.to_vec(), data).expect("randn shape")
}

/// Random episode inputs consistent with `cfg`, with a raw activity length
/// different from M so the pipeline exercises resampling.
pub fn random_episode(cfg: &ModelConfig, n_words: usize, rng: &mut SplitMix64) -> EpisodeTensors<f64> {
    let (m, k) = (cfg.m, cfg.k_objects);
    let mut boxes = Vec::with_capacity(m * k * 4);
    for _ in 0..m * k {
        let x1 = rng.uniform(0.0, 0.5);
        let y1 = rng.uniform(0.0, 0.5);
        boxes.extend_from_slice(&[x1, y1, x1 + rng.uniform(0.1, 0.5), y1 + rng.uniform(0.1, 0.5)]);
    }
    EpisodeTensors {
        objects: randn(&[m, k, cfg.d_o], 0.5, rng),
        boxes: Tensor::from_vec(vec![m, k, 4], boxes).expect("boxes"),
        activity: randn(&[m + 3, cfg.d_in], 0.5, rng),
        words: randn(&[n_words, cfg.d_w], 0.7, rng),
        global: randn(&[cfg.d_g], 0.7, rng),
    }
}

/// Weighted sum with fixed random coefficients, to give a scalar loss that
/// is sensitive to every output element.
fn weighted_sum(tape: &mut Tape<f64>, out: Var, coeffs: &Tensor<f64>) -> Result<Var> {
    let c = tape.leaf(coeffs.clone());
    let prod = tape.mul(out, c)?;
    tape.sum_all(prod)
}

fn coeffs_for(shape: &[usize], rng: &mut SplitMix64) -> Tensor<f64> {
    randn(shape, 1.0, rng)
}

type Check = (&'static str, Vec<Tensor<f64>>, usize);

/// Run the full fragment battery at the standard small dimensions.
///
/// Every fragment compares the tape gradients of a scalar loss against f64
/// central differences over all of its parameters (and, where meaningful,
/// its inputs).
pub fn standard_fragments(seed: u64) -> Result<Vec<FragmentReport>> {
    let dims = CheckDims::default();
    let cfg = dims.to_config();
    let d = dims.d;
    let mut reports = Vec::new();
    let mut run = |check: Check, build: &dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
                   tolerance: f64|
     -> Result<()> {
        let (name, inputs, n_checked) = check;
        let err = check_gradients(&inputs, n_checked, DEFAULT_EPS, &build)?;
        let checked_scalars = inputs[..n_checked].iter().map(|t| t.numel()).sum();
        reports.push(FragmentReport { name, max_rel_err: err, tolerance, checked_scalars });
        Ok(())
    };

    // affine + sigmoid chain
    {
        let mut rng = SplitMix64::new(seed ^ 0x01);
        let x = randn(&[3, 4], 1.0, &mut rng);
        let w = randn(&[4, d], 0.5, &mut rng);
        let b = randn(&[d], 0.2, &mut rng);
        let c = coeffs_for(&[3, d], &mut rng);
        run(
            ("affine_sigmoid", vec![x, w, b], 3),
            &move |tape, vars| {
                let y = tape.matmul(vars[0], vars[1])?;
                let y = tape.add_row_vec(y, vars[2])?;
                let y = tape.sigmoid(y)?;
                weighted_sum(tape, y, &c)
            },
            1e-6,
        )?;
    }

    // activation chain: leaky_relu -> tanh -> sigmoid
    {
        let mut rng = SplitMix64::new(seed ^ 0x02);
        let x = randn(&[4, 5], 1.0, &mut rng);
        let c = coeffs_for(&[4, 5], &mut rng);
        run(
            ("activations", vec![x], 1),
            &move |tape, vars| {
                let y = tape.leaky_relu(vars[0], 0.01)?;
                let y = tape.tanh(y)?;
                let y = tape.sigmoid(y)?;
                weighted_sum(tape, y, &c)
            },
            1e-6,
        )?;
    }

    // single GRU step, checked w.r.t. x, h_prev and all cell parameters
    {
        let mut rng = SplitMix64::new(seed ^ 0x03);
        let mut set: ParamSet<f64> = ParamSet::new();
        let gru = GruCellParams::init(&mut set, "gru", d, &mut rng);
        let mut inputs = vec![randn(&[1, d], 0.8, &mut rng), randn(&[1, d], 0.8, &mut rng)];
        inputs.extend(set.iter().map(|p| p.value.clone()));
        let n = inputs.len();
        let c = coeffs_for(&[1, d], &mut rng);
        run(
            ("gru_step", inputs, n),
            &move |tape, vars| {
                let bp = BoundParams::from_vars(vars[2..].to_vec());
                let h = gru.step(tape, &bp, vars[0], vars[1])?;
                weighted_sum(tape, h, &c)
            },
            1e-4,
        )?;
    }

    // max-pool over both axes of a matrix
    {
        let mut rng = SplitMix64::new(seed ^ 0x04);
        let x = randn(&[5, 4], 1.0, &mut rng);
        let c0 = coeffs_for(&[4], &mut rng);
        let c1 = coeffs_for(&[5], &mut rng);
        run(
            ("maxpool_axis", vec![x], 1),
            &move |tape, vars| {
                let rows = tape.max_axis(vars[0], 0)?;
                let cols = tape.max_axis(vars[0], 1)?;
                let a = weighted_sum(tape, rows, &c0)?;
                let b = weighted_sum(tape, cols, &c1)?;
                tape.add(a, b)
            },
            1e-4,
        )?;
    }

    // per-frame object self-attention
    {
        let mut rng = SplitMix64::new(seed ^ 0x05);
        let w1 = randn(&[d, d], 0.4, &mut rng);
        let w2 = randn(&[d, d], 0.4, &mut rng);
        let v = randn(&[dims.k_objects, d], 0.8, &mut rng);
        let c = coeffs_for(&[dims.k_objects, d], &mut rng);
        run(
            ("self_attention", vec![w1, w2, v], 3),
            &move |tape, vars| {
                let bp = BoundParams::from_vars(vars[..2].to_vec());
                let p = SelfAttentionParams { w1: ParamId(0), w2: ParamId(1) };
                let out = object_self_attention(tape, &bp, &p, vars[2], d)?;
                weighted_sum(tape, out, &c)
            },
            1e-4,
        )?;
    }

    // query-guided attention
    {
        let mut rng = SplitMix64::new(seed ^ 0x06);
        let w3 = randn(&[d, d], 0.4, &mut rng);
        let w4 = randn(&[d, d], 0.4, &mut rng);
        let w5 = randn(&[d, d], 0.4, &mut rng);
        let x = randn(&[dims.k_objects, d], 0.8, &mut rng);
        let y = randn(&[dims.n_words, d], 0.8, &mut rng);
        let c = coeffs_for(&[dims.k_objects, d], &mut rng);
        run(
            ("query_attention", vec![w3, w4, w5, x, y], 5),
            &move |tape, vars| {
                let bp = BoundParams::from_vars(vars[..3].to_vec());
                let p = QueryAttentionParams { w3: ParamId(0), w4: ParamId(1), w5: ParamId(2) };
                let (_, out) = query_guided_attention(tape, &bp, &p, vars[3], vars[4], d)?;
                weighted_sum(tape, out, &c)
            },
            1e-4,
        )?;
    }

    // cosine affinity + weighted aggregation
    {
        let mut rng = SplitMix64::new(seed ^ 0x07);
        let q = randn(&[dims.n_words, d], 0.8, &mut rng);
        let v = randn(&[dims.k_objects, d], 0.8, &mut rng);
        let cw = coeffs_for(&[dims.n_words, dims.k_objects], &mut rng);
        let co = coeffs_for(&[dims.n_words, d], &mut rng);
        run(
            ("affinity", vec![q, v], 2),
            &move |tape, vars| {
                let (w, out) = word_object_affinity(tape, vars[0], vars[1])?;
                let a = weighted_sum(tape, w, &cw)?;
                let b = weighted_sum(tape, out, &co)?;
                tape.add(a, b)
            },
            1e-4,
        )?;
    }

    // encoder + full generator
    {
        let mut rng = SplitMix64::new(seed ^ 0x08);
        let mut set: ParamSet<f64> = ParamSet::new();
        let mut init_rng = SplitMix64::new(seed ^ 0x80);
        let enc = EncoderParams::init(&mut set, &cfg, &mut init_rng);
        let gen = GeneratorParams::init(&mut set, &cfg, &mut init_rng);
        let ep = random_episode(&cfg, dims.n_words, &mut rng);
        let inputs: Vec<Tensor<f64>> = set.iter().map(|p| p.value.clone()).collect();
        let n = inputs.len();
        let cfg2 = cfg.clone();
        let c_search = coeffs_for(&[cfg.m, d], &mut rng);
        let c_tmpl = coeffs_for(&[d], &mut rng);
        run(
            ("generator_full", inputs, n),
            &move |tape, vars| {
                let bp = BoundParams::from_vars(vars.to_vec());
                let encoded = encode(tape, &bp, &enc, &cfg2, &ep)?;
                let bundle = build_targets(tape, &bp, &gen, &cfg2, &encoded)?;
                let mut loss = weighted_sum(tape, bundle.activity_search, &c_search)?;
                for &s in &bundle.object_search {
                    let w = weighted_sum(tape, s, &c_search)?;
                    loss = tape.add(loss, w)?;
                }
                let w = weighted_sum(tape, bundle.semantic_search, &c_search)?;
                loss = tape.add(loss, w)?;
                for &t in &bundle.object_templates {
                    let w = weighted_sum(tape, t, &c_tmpl)?;
                    loss = tape.add(loss, w)?;
                }
                let w = weighted_sum(tape, bundle.activity_template, &c_tmpl)?;
                loss = tape.add(loss, w)?;
                let w = weighted_sum(tape, bundle.semantic_template, &c_tmpl)?;
                tape.add(loss, w)
            },
            1e-4,
        )?;
    }

    // single tracked stream; the loss reads only the last frame so the
    // gradient flows through all M recurrence steps
    {
        let mut rng = SplitMix64::new(seed ^ 0x09);
        let mut set: ParamSet<f64> = ParamSet::new();
        let mut init_rng = SplitMix64::new(seed ^ 0x90);
        let up = UpdaterParams::init(&mut set, "up", d, &mut init_rng);
        let mut inputs: Vec<Tensor<f64>> = set.iter().map(|p| p.value.clone()).collect();
        let n_params = inputs.len();
        inputs.push(randn(&[1, d], 0.8, &mut rng)); // template
        inputs.push(randn(&[dims.m, d], 0.8, &mut rng)); // search space
        let n = inputs.len();
        let flags = cfg.flags;
        let c = coeffs_for(&[1, d], &mut rng);
        let m = dims.m;
        run(
            ("track_stream", inputs, n),
            &move |tape, vars| {
                let bp = BoundParams::from_vars(vars[..n_params].to_vec());
                let out =
                    track_stream(tape, &bp, &up, vars[n_params], vars[n_params + 1], &flags, 0.01)?;
                let last = tape.row_slice(out, m - 1, 1)?;
                weighted_sum(tape, last, &c)
            },
            1e-4,
        )?;
    }

    // full tracker (both directions + fusion), checked w.r.t. params,
    // templates and search spaces
    {
        let mut rng = SplitMix64::new(seed ^ 0x0a);
        let mut set: ParamSet<f64> = ParamSet::new();
        let mut init_rng = SplitMix64::new(seed ^ 0xa0);
        let tp = crate::tracker::TrackerParams::init(&mut set, &cfg, &mut init_rng);
        let mut inputs: Vec<Tensor<f64>> = set.iter().map(|p| p.value.clone()).collect();
        let n_params = inputs.len();
        for _ in 0..dims.k_filters {
            inputs.push(randn(&[d], 0.8, &mut rng)); // object template
        }
        for _ in 0..dims.k_filters {
            inputs.push(randn(&[dims.m, d], 0.8, &mut rng)); // object search
        }
        inputs.push(randn(&[d], 0.8, &mut rng)); // activity template
        inputs.push(randn(&[dims.m, d], 0.8, &mut rng)); // activity search
        inputs.push(randn(&[d], 0.8, &mut rng)); // semantic template
        inputs.push(randn(&[dims.m, d], 0.8, &mut rng)); // semantic search
        let n = inputs.len();
        let cfg2 = cfg.clone();
        let k = dims.k_filters;
        let c = coeffs_for(&[dims.m, 2 * d], &mut rng);
        run(
            ("tracker_full", inputs, n),
            &move |tape, vars| {
                let bp = BoundParams::from_vars(vars[..n_params].to_vec());
                let rest = &vars[n_params..];
                let bundle = TargetBundle {
                    object_templates: rest[..k].to_vec(),
                    object_search: rest[k..2 * k].to_vec(),
                    activity_template: rest[2 * k],
                    activity_search: rest[2 * k + 1],
                    semantic_template: rest[2 * k + 2],
                    semantic_search: rest[2 * k + 3],
                };
                let tracks = track_episode(tape, &bp, &tp, &bundle, &cfg2)?;
                weighted_sum(tape, tracks.combined, &c)
            },
            1e-4,
        )?;
    }

    // localizer heads + localization loss
    {
        let mut rng = SplitMix64::new(seed ^ 0x0b);
        let mut set: ParamSet<f64> = ParamSet::new();
        let mut init_rng = SplitMix64::new(seed ^ 0xb0);
        let lp = LocalizerParams::init(&mut set, &cfg, &mut init_rng);
        let mut inputs: Vec<Tensor<f64>> = set.iter().map(|p| p.value.clone()).collect();
        let n_params = inputs.len();
        inputs.push(randn(&[dims.m, 2 * d], 0.8, &mut rng)); // track features
        let n = inputs.len();
        let cfg2 = cfg.clone();
        let proposals = enumerate_proposals(dims.m, dims.budget)?;
        run(
            ("localizer_loss", inputs, n),
            &move |tape, vars| {
                let bp = BoundParams::from_vars(vars[..n_params].to_vec());
                let scored =
                    score_proposals(tape, &bp, &lp, vars[n_params], &proposals, &cfg2)?;
                localization_loss(tape, &scored, &proposals, (1.6, 4.2), &cfg2.loss)
            },
            1e-4,
        )?;
    }

    // end-to-end pipeline loss over every model parameter
    {
        let mut rng = SplitMix64::new(seed ^ 0x0c);
        let (mp, set32) = ModelParams::init(&cfg, seed ^ 0xc0);
        let set = set32.cast::<f64>();
        let ep = random_episode(&cfg, dims.n_words, &mut rng);
        let gt = GroundTruth { t_start: 1.0, t_end: 4.0 };
        let duration = cfg.m as f64;
        let inputs: Vec<Tensor<f64>> = set.iter().map(|p| p.value.clone()).collect();
        let n = inputs.len();
        let cfg2 = cfg.clone();
        run(
            ("pipeline_full", inputs, n),
            &move |tape, vars| {
                let bp = BoundParams::from_vars(vars.to_vec());
                let (loss, _) = forward_loss(tape, &bp, &mp, &cfg2, &ep, gt, duration)?;
                Ok(loss)
            },
            1e-4,
        )?;
    }

    Ok(reports)
}
