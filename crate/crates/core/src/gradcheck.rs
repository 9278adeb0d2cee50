//! Central finite-difference verification of every differentiable component.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constraints::{self, BatchSets, ConstraintConfig};
use crate::corpus::{AnnKind, Annotation, FeatureRecord, LabelDistribution, TimeSpan};
use crate::detector::{self, MaskShape};
use crate::encoder::{self, EncoderConfig};
use crate::error::Result;
use crate::fullbranch;
use crate::nn::{Init, ParamStore};
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Component {
    Encoder,
    Detector,
    MaskPlateau,
    MaskGaussian,
    LossRaml,
    LossRaun,
    LossErml,
    LossErun,
    LossGrnd,
    LossCombined,
    FullBranch,
}

pub const ALL_COMPONENTS: [Component; 11] = [
    Component::Encoder,
    Component::Detector,
    Component::MaskPlateau,
    Component::MaskGaussian,
    Component::LossRaml,
    Component::LossRaun,
    Component::LossErml,
    Component::LossErun,
    Component::LossGrnd,
    Component::LossCombined,
    Component::FullBranch,
];

impl Component {
    pub fn parse(s: &str) -> Option<Component> {
        Some(match s {
            "encoder" => Component::Encoder,
            "detector" => Component::Detector,
            "mask-plateau" => Component::MaskPlateau,
            "mask-gaussian" => Component::MaskGaussian,
            "loss-raml" => Component::LossRaml,
            "loss-raun" => Component::LossRaun,
            "loss-erml" => Component::LossErml,
            "loss-erun" => Component::LossErun,
            "loss-grnd" => Component::LossGrnd,
            "loss-combined" => Component::LossCombined,
            "fullbranch" => Component::FullBranch,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Component::Encoder => "encoder",
            Component::Detector => "detector",
            Component::MaskPlateau => "mask-plateau",
            Component::MaskGaussian => "mask-gaussian",
            Component::LossRaml => "loss-raml",
            Component::LossRaun => "loss-raun",
            Component::LossErml => "loss-erml",
            Component::LossErun => "loss-erun",
            Component::LossGrnd => "loss-grnd",
            Component::LossCombined => "loss-combined",
            Component::FullBranch => "fullbranch",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradFailure {
    pub case: usize,
    pub param: String,
    pub entry: usize,
    pub analytic: f64,
    pub fd: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradReport {
    pub component: Component,
    pub cases: usize,
    pub passed: usize,
    pub checked_entries: usize,
    pub failures: Vec<GradFailure>,
}

impl GradReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty() && self.passed == self.cases
    }
}

/// One randomized check instance: a store of probed leaves and a scalar loss
/// evaluated from it. Components embed their fixed inputs in the closure.
struct Case {
    store: ParamStore,
    eval: Box<dyn Fn(&ParamStore) -> f64>,
    grads: Vec<Tensor>,
}

/// Entries checked per case for large components; small components check all.
const SUBSET: usize = 48;

pub fn gradient_check(
    component: Component,
    n_cases: usize,
    tolerance: f64,
    seed: u64,
) -> Result<GradReport> {
    gradient_check_impl(component, n_cases, tolerance, seed, 0.0)
}

/// `corruption` is added to every analytic gradient entry before comparison;
/// nonzero values exist to prove the checker reports faults.
pub fn gradient_check_impl(
    component: Component,
    n_cases: usize,
    tolerance: f64,
    seed: u64,
    corruption: f64,
) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ component as u64);
    let mut report = GradReport {
        component,
        cases: n_cases,
        passed: 0,
        checked_entries: 0,
        failures: Vec::new(),
    };
    for case_idx in 0..n_cases {
        let case = build_case(component, &mut rng);
        let mut case_ok = true;
        let names: Vec<String> = case.store.names().map(|s| s.to_string()).collect();
        for (k, name) in names.iter().enumerate() {
            let n_entries = case.store.get(name).data.len();
            let entries: Vec<usize> = if n_entries <= SUBSET {
                (0..n_entries).collect()
            } else {
                (0..SUBSET).map(|_| rng.gen_range(0..n_entries)).collect()
            };
            for &j in &entries {
                let x0 = case.store.get(name).data[j];
                let h = 1e-6 * x0.abs().max(1.0);
                let mut p = case.store.clone();
                p.get_mut(name).data[j] = x0 + h;
                let fp = (case.eval)(&p);
                p.get_mut(name).data[j] = x0 - h;
                let fm = (case.eval)(&p);
                let fd = (fp - fm) / (2.0 * h);
                let analytic = case.grads[k].data[j] + corruption;
                let denom = analytic.abs().max(fd.abs());
                let rel = if denom < 1e-7 {
                    0.0
                } else {
                    (analytic - fd).abs() / denom.max(1.0)
                };
                report.checked_entries += 1;
                if rel >= tolerance {
                    case_ok = false;
                    report.failures.push(GradFailure {
                        case: case_idx,
                        param: name.clone(),
                        entry: j,
                        analytic,
                        fd,
                        rel_err: rel,
                    });
                }
            }
        }
        if case_ok {
            report.passed += 1;
        }
    }
    Ok(report)
}

fn rand_row(rng: &mut impl Rng, n: usize) -> Tensor {
    Tensor::row((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

fn rand_mat(rng: &mut impl Rng, r: usize, c: usize) -> Tensor {
    Tensor::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

/// Random projection of a matrix-valued output onto a scalar, so FD probes
/// see a nontrivial function of every entry.
fn probe_weights(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    rand_mat(rng, rows, cols)
}

fn build_case(component: Component, rng: &mut ChaCha8Rng) -> Case {
    // resample until the instance is away from every hinge/clamp kink
    for _ in 0..200 {
        if let Some(case) = try_build_case(component, rng) {
            return case;
        }
    }
    panic!("could not build a kink-free case for {component:?}");
}

const KINK_MARGIN: f64 = 1e-3;

fn away_from(v: f64, points: &[f64]) -> bool {
    points.iter().all(|p| (v - p).abs() > KINK_MARGIN)
}

fn try_build_case(component: Component, rng: &mut ChaCha8Rng) -> Option<Case> {
    match component {
        Component::Encoder => Some(encoder_case(rng)),
        Component::Detector => detector_case(rng),
        Component::MaskPlateau => mask_case(rng, MaskShape::Plateau { steepness: 40.0 }),
        Component::MaskGaussian => mask_case(rng, MaskShape::Gaussian),
        Component::LossRaml => raml_case(rng),
        Component::LossRaun => raun_case(rng),
        Component::LossErml => erml_case(rng, false),
        Component::LossErun => erml_case(rng, true),
        Component::LossGrnd => grnd_case(rng),
        Component::LossCombined => combined_case(rng),
        Component::FullBranch => fullbranch_case(rng),
    }
}

// Each component builds the tape twice: once for analytic gradients and once
// per FD probe via the value closure. The two paths share the same forward
// function, differing only in leaf vs const binding.

fn tape_case<F>(store: ParamStore, forward: F) -> Case
where
    F: Fn(&mut Tape, &crate::nn::BoundParams) -> crate::tape::Var + 'static,
{
    let grads = {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let loss = forward(&mut tape, &bound);
        let all = tape.backward(loss);
        bound
            .vars()
            .iter()
            .map(|&v| all.wrt(&tape, v))
            .collect::<Vec<_>>()
    };
    let eval = Box::new(move |s: &ParamStore| {
        let mut tape = Tape::new();
        let bound = s.bind_frozen(&mut tape);
        let loss = forward(&mut tape, &bound);
        tape.value(loss).item()
    });
    Case { store, eval, grads }
}

fn encoder_case(rng: &mut ChaCha8Rng) -> Case {
    let cfg = EncoderConfig {
        d_model: 8,
        layers: 3,
        heads: 4,
        t_max: 5,
        m_max: 3,
        d_v: 3,
        d_q: 2,
    };
    let mut init = Init::new(rng.gen());
    let store = encoder::init_params(&cfg, &mut init);
    let record = FeatureRecord {
        id: "gc".into(),
        video_feat: {
            let mut t = rand_mat(rng, cfg.t_max, cfg.d_v);
            for c in 0..cfg.d_v {
                t.set(4, c, 0.0); // padded frame
            }
            t
        },
        query_feat: rand_mat(rng, cfg.m_max, cfg.d_q),
        sent_feat: None,
        valid_frames: 4,
        valid_tokens: 3,
        duration_s: 10.0,
    };
    let wv = probe_weights(rng, cfg.t_max, cfg.d_model);
    let wq = probe_weights(rng, cfg.m_max, cfg.d_model);
    let wp = probe_weights(rng, 1, cfg.d_model);
    let wvd = probe_weights(rng, 1, cfg.d_model);
    tape_case(store, move |tape, bound| {
        let (v0, q0) = encoder::project(tape, &record, bound, &cfg).unwrap();
        let fused = encoder::fuse(
            tape,
            v0,
            q0,
            record.valid_frames,
            record.valid_tokens,
            bound,
            &cfg,
        )
        .unwrap();
        let wv = tape.constant(wv.clone());
        let wq = tape.constant(wq.clone());
        let wp = tape.constant(wp.clone());
        let wvd = tape.constant(wvd.clone());
        let a = tape.mul(fused.v, wv);
        let b = tape.mul(fused.q_mat, wq);
        let c = tape.mul(fused.q, wp);
        let d = tape.mul(fused.v_vd, wvd);
        let sa = tape.sum_all(a);
        let sb = tape.sum_all(b);
        let sc = tape.sum_all(c);
        let sd = tape.sum_all(d);
        let ab = tape.add(sa, sb);
        let cd = tape.add(sc, sd);
        tape.add(ab, cd)
    })
}

fn detector_case(rng: &mut ChaCha8Rng) -> Option<Case> {
    let d = 6;
    let t = 5;
    let valid = 4;
    let mut init = Init::new(rng.gen());
    let mut store = detector::init_params(d, &mut init);
    // the offset/width head is zero-initialized, which would block gradient
    // flow through the trunk; jitter it so every parameter is exercised
    for name in ["det.mlp2.w", "det.mlp2.b"] {
        for x in &mut store.get_mut(name).data {
            *x += rng.gen_range(-0.2..0.2);
        }
    }
    let v = rand_mat(rng, t, d);
    let q = rand_mat(rng, 1, d);
    let t_c: f64 = rng.gen_range(0.2..0.8);
    // reject cases where p or the span endpoints sit at a clamp boundary
    {
        let mut tape = Tape::new();
        let bound = store.bind_frozen(&mut tape);
        let vv = tape.constant(v.clone());
        let qv = tape.constant(q.clone());
        let ev = detector::predict_event(&mut tape, vv, qv, valid, t_c, &bound);
        let est = ev.estimate(&tape);
        if !away_from(est.p, &[0.0, 1.0])
            || !away_from(est.span.s, &[0.0, 1.0])
            || !away_from(est.span.e, &[0.0, 1.0])
        {
            return None;
        }
    }
    let w = probe_weights(rng, 1, 4);
    Some(tape_case(store, move |tape, bound| {
        let vv = tape.constant(v.clone());
        let qv = tape.constant(q.clone());
        let ev = detector::predict_event(tape, vv, qv, valid, t_c, bound);
        let outs = tape.concat_cols(&[ev.delta, ev.ell, ev.s, ev.e]);
        let wc = tape.constant(w.clone());
        let p = tape.mul(outs, wc);
        tape.sum_all(p)
    }))
}

fn mask_case(rng: &mut ChaCha8Rng, shape: MaskShape) -> Option<Case> {
    let t_max = 12;
    let valid = 10;
    let s: f64 = rng.gen_range(0.05..0.6);
    let e: f64 = rng.gen_range(s + 0.1..1.0_f64.min(s + 0.5));
    let mut store = ParamStore::new();
    store.insert("s", Tensor::scalar(s));
    store.insert("e", Tensor::scalar(e));
    let w = probe_weights(rng, 1, t_max);
    Some(tape_case(store, move |tape, bound| {
        let m = detector::build_mask_vars(tape, bound.var("s"), bound.var("e"), t_max, valid, shape);
        let wc = tape.constant(w.clone());
        let p = tape.mul(m, wc);
        tape.sum_all(p)
    }))
}

fn nonzero_rows(rng: &mut ChaCha8Rng, names: &[&str], d: usize) -> ParamStore {
    let mut store = ParamStore::new();
    for name in names {
        loop {
            let t = rand_row(rng, d);
            if t.norm() > 0.3 {
                store.insert(name, t);
                break;
            }
        }
    }
    store
}

fn raml_case(rng: &mut ChaCha8Rng) -> Option<Case> {
    let store = nonzero_rows(rng, &["v_fg", "v_vd", "q"], 5);
    let alpha = 0.25;
    let hinge = constraints::loss_raml_value(
        &store.get("v_fg").data,
        &store.get("v_vd").data,
        &store.get("q").data,
        alpha,
    );
    if hinge.abs() < KINK_MARGIN {
        return None;
    }
    Some(tape_case(store, move |tape, bound| {
        constraints::loss_raml(
            tape,
            bound.var("v_fg"),
            bound.var("v_vd"),
            bound.var("q"),
            alpha,
        )
    }))
}

fn raun_case(rng: &mut ChaCha8Rng) -> Option<Case> {
    let store = nonzero_rows(rng, &["v_fg", "v_bg", "v_vd"], 5);
    let beta = 0.32;
    // probe the hinge argument directly
    let mut tape = Tape::new();
    let bound = store.bind_frozen(&mut tape);
    let l = constraints::loss_raun(
        &mut tape,
        bound.var("v_fg"),
        bound.var("v_bg"),
        bound.var("v_vd"),
        beta,
    );
    if tape.value(l).item().abs() < KINK_MARGIN {
        return None;
    }
    Some(tape_case(store, move |tape, bound| {
        constraints::loss_raun(
            tape,
            bound.var("v_fg"),
            bound.var("v_bg"),
            bound.var("v_vd"),
            beta,
        )
    }))
}

fn erml_case(rng: &mut ChaCha8Rng, unimodal: bool) -> Option<Case> {
    let n = 6;
    let d = 4;
    let tau = 0.13;
    let clusters: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
    let sets = BatchSets::from_clusters(&clusters);
    let mut store = ParamStore::new();
    for i in 0..n {
        loop {
            let t = rand_row(rng, d);
            if t.norm() > 0.3 {
                store.insert(&format!("v{i}"), t);
                break;
            }
        }
        if !unimodal {
            loop {
                let t = rand_row(rng, d);
                if t.norm() > 0.3 {
                    store.insert(&format!("q{i}"), t);
                    break;
                }
            }
        }
    }
    Some(tape_case(store, move |tape, bound| {
        let vs: Vec<_> = (0..n).map(|i| bound.var(&format!("v{i}"))).collect();
        if unimodal {
            constraints::loss_erun(tape, &vs, &sets, tau, false)
        } else {
            let qs: Vec<_> = (0..n).map(|i| bound.var(&format!("q{i}"))).collect();
            constraints::loss_erml(tape, &vs, &qs, &sets, tau, false)
        }
    }))
}

fn grnd_case(rng: &mut ChaCha8Rng) -> Option<Case> {
    let t_s: f64 = rng.gen_range(0.2..0.5);
    let t_e: f64 = rng.gen_range(t_s..t_s + 0.2);
    let s_hat: f64 = rng.gen_range(0.0..0.9);
    let e_hat: f64 = rng.gen_range(s_hat..1.0);
    let a = t_e - e_hat;
    let b = s_hat - t_s;
    // away from the pairwise max switch and the outer hinge
    if (a - b).abs() < KINK_MARGIN || a.max(b).abs() < KINK_MARGIN {
        return None;
    }
    let ann = Annotation {
        kind: AnnKind::Clip,
        span: TimeSpan { s: t_s, e: t_e },
        source: LabelDistribution::Manual,
    };
    let mut store = ParamStore::new();
    store.insert("s_hat", Tensor::scalar(s_hat));
    store.insert("e_hat", Tensor::scalar(e_hat));
    Some(tape_case(store, move |tape, bound| {
        detector::grounding_loss(tape, &ann, bound.var("s_hat"), bound.var("e_hat")).unwrap()
    }))
}

fn combined_case(rng: &mut ChaCha8Rng) -> Option<Case> {
    // compose the four constraint losses plus grounding on shared leaves
    let n = 4;
    let d = 4;
    let cfg = ConstraintConfig::default();
    let clusters: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
    let sets = BatchSets::from_clusters(&clusters);
    let mut store = ParamStore::new();
    for i in 0..n {
        store.insert(&format!("v_fg{i}"), rand_row(rng, d));
        store.insert(&format!("q{i}"), rand_row(rng, d));
    }
    store.insert("v_vd", rand_row(rng, d));
    store.insert("v_bg", rand_row(rng, d));
    store.insert("s_hat", Tensor::scalar(rng.gen_range(0.1..0.4)));
    store.insert("e_hat", Tensor::scalar(rng.gen_range(0.5..0.9)));
    for name in ["v_vd", "v_bg", "v_fg0", "q0"] {
        if store.get(name).norm() < 0.3 {
            return None;
        }
    }
    let ann = Annotation {
        kind: AnnKind::Clip,
        span: TimeSpan { s: 0.45, e: 0.48 },
        source: LabelDistribution::Manual,
    };
    // kink probes
    {
        let mut tape = Tape::new();
        let bound = store.bind_frozen(&mut tape);
        let r1 = constraints::loss_raml(
            &mut tape,
            bound.var("v_fg0"),
            bound.var("v_vd"),
            bound.var("q0"),
            cfg.alpha,
        );
        let r2 = constraints::loss_raun(
            &mut tape,
            bound.var("v_fg0"),
            bound.var("v_bg"),
            bound.var("v_vd"),
            cfg.beta,
        );
        let a = ann.span.e - store.get("e_hat").item();
        let b = store.get("s_hat").item() - ann.span.s;
        if tape.value(r1).item().abs() < KINK_MARGIN
            || tape.value(r2).item().abs() < KINK_MARGIN
            || (a - b).abs() < KINK_MARGIN
            || a.max(b).abs() < KINK_MARGIN
        {
            return None;
        }
    }
    let cfg2 = cfg.clone();
    Some(tape_case(store, move |tape, bound| {
        let vs: Vec<_> = (0..n).map(|i| bound.var(&format!("v_fg{i}"))).collect();
        let qs: Vec<_> = (0..n).map(|i| bound.var(&format!("q{i}"))).collect();
        let raml = constraints::loss_raml(tape, vs[0], bound.var("v_vd"), qs[0], cfg2.alpha);
        let raun = constraints::loss_raun(
            tape,
            vs[0],
            bound.var("v_bg"),
            bound.var("v_vd"),
            cfg2.beta,
        );
        let erml = constraints::loss_erml(tape, &vs, &qs, &sets, cfg2.tau, false);
        let erun = constraints::loss_erun(tape, &vs, &sets, cfg2.tau, false);
        let grnd =
            detector::grounding_loss(tape, &ann, bound.var("s_hat"), bound.var("e_hat")).unwrap();
        let (total, _) =
            constraints::loss_combined(tape, raml, raun, erml, erun, grnd, &cfg2).unwrap();
        total
    }))
}

fn fullbranch_case(rng: &mut ChaCha8Rng) -> Option<Case> {
    let d = 6;
    let t = 6;
    let valid = 5;
    let mut init = Init::new(rng.gen());
    let store = fullbranch::init_params(d, &mut init);
    let v = rand_mat(rng, t, d);
    let span = {
        let s: f64 = rng.gen_range(0.1..0.5);
        TimeSpan { s, e: s + 0.3 }
    };
    Some(tape_case(store, move |tape, bound| {
        let vv = tape.constant(v.clone());
        let spans = fullbranch::predict_spans(tape, vv, valid, bound).unwrap();
        let (loss, _) = fullbranch::full_loss(tape, &spans, &span);
        loss
    }))
}
