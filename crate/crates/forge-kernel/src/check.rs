//! Self-contained invariant suite over the kernel ops.
//!
//! The suite certifies, on randomized small instances, that the fused block
//! cuts backward flow to the frozen pathway without cutting forward flow,
//! that trainable gradients agree with central finite differences, that the
//! two branch layouts route attention as claimed, and that the flow
//! interpolation and loss identities hold. `forge kernel-check` prints the
//! report; the acceptance tests consume the same numbers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{attention, attention_weights};
use crate::flow::{flow_interpolate, fm_loss};
use crate::fusion::{fuse_layer, general_block, FusionParams};
use crate::graph::Graph;
use crate::layout::{build_sequence, Branch, TokenKind};
use crate::tensor::Tensor2;
use crate::KernelError;

#[derive(Debug, Clone)]
pub struct CheckConfig {
    /// Number of random fused-layer instances for the gradient certificate.
    pub instances: usize,
    pub seed: u64,
    /// Central finite-difference step.
    pub fd_step: f64,
    /// Relative tolerance for trainable gradient agreement.
    pub rel_tol: f64,
    /// Absolute error floor below which relative error is not enforced.
    pub abs_floor: f64,
    /// Finite-difference magnitude above which a frozen parameter counts as
    /// forward-live.
    pub live_threshold: f64,
    /// Required fraction of forward-live frozen parameters.
    pub min_live_fraction: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            instances: 100,
            seed: 7,
            fd_step: 1e-5,
            rel_tol: 1e-4,
            abs_floor: 1e-7,
            live_threshold: 1e-6,
            min_live_fraction: 0.95,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub instances: usize,
    pub frozen_checked: usize,
    pub max_frozen_grad: f64,
    pub frozen_live_fraction: f64,
    pub trainable_checked: usize,
    pub max_trainable_rel_err: f64,
    pub forward_agreement_max_err: f64,
    pub mask_layouts: usize,
    pub prior_mask_violations: usize,
    pub posterior_mask_violations: usize,
    pub hull_violations: usize,
    pub frozen_forward_mismatches: usize,
    pub flow_cases: usize,
    pub flow_violations: usize,
    pub alignment_cut_ok: bool,
    pub failures: Vec<String>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    /// One line per certified property plus an overall verdict.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let line = |ok: bool, text: String| {
            format!("[{}] {}\n", if ok { "PASS" } else { "FAIL" }, text)
        };
        out.push_str(&line(
            self.max_frozen_grad == 0.0,
            format!(
                "frozen-pathway gradients exactly zero ({} params over {} instances, max |grad| = {:e})",
                self.frozen_checked, self.instances, self.max_frozen_grad
            ),
        ));
        out.push_str(&line(
            self.frozen_live_fraction >= 0.95,
            format!(
                "frozen parameters forward-live (fraction {:.4} with |fd| > 1e-6, need >= 0.95)",
                self.frozen_live_fraction
            ),
        ));
        out.push_str(&line(
            self.max_trainable_rel_err <= 1e-4,
            format!(
                "trainable gradients match finite differences ({} params, max rel err {:.3e} <= 1e-4)",
                self.trainable_checked, self.max_trainable_rel_err
            ),
        ));
        out.push_str(&line(
            self.forward_agreement_max_err <= 1e-11,
            format!(
                "tape forward agrees with tensor forward (max rel err {:.3e})",
                self.forward_agreement_max_err
            ),
        ));
        out.push_str(&line(
            self.prior_mask_violations == 0,
            format!(
                "prior layouts give action queries zero language weight ({} layouts, {} violations)",
                self.mask_layouts, self.prior_mask_violations
            ),
        ));
        out.push_str(&line(
            self.posterior_mask_violations == 0,
            format!(
                "posterior layouts give action queries positive language weight ({} layouts, {} violations)",
                self.mask_layouts, self.posterior_mask_violations
            ),
        ));
        out.push_str(&line(
            self.hull_violations == 0,
            format!(
                "attention rows stay in the convex hull of visible value rows ({} violations)",
                self.hull_violations
            ),
        ));
        out.push_str(&line(
            self.frozen_forward_mismatches == 0,
            format!(
                "general output bit-identical with or without the embodied pathway ({} mismatches)",
                self.frozen_forward_mismatches
            ),
        ));
        out.push_str(&line(
            self.flow_violations == 0,
            format!(
                "flow interpolation and loss identities hold ({} cases, {} violations)",
                self.flow_cases, self.flow_violations
            ),
        ));
        out.push_str(&line(
            self.alignment_cut_ok,
            "prior-likelihood stop-gradient carries zero adjoint".to_string(),
        ));
        let max_err = self.max_trainable_rel_err.max(self.max_frozen_grad);
        out.push_str(&format!(
            "overall: {} (max observed gradient error {:.3e})\n",
            if self.passed() { "PASS" } else { "FAIL" },
            max_err
        ));
        out
    }
}

/// One randomized end-to-end instance: two tied fused layers feeding a
/// linear velocity head, scored with the flow-matching loss.
#[derive(Debug, Clone)]
struct Instance {
    p: FusionParams<f64>,
    decoder: Tensor2<f64>,
    time_proj: Tensor2<f64>,
    h_g: Tensor2<f64>,
    h_e: Tensor2<f64>,
    a0: Tensor2<f64>,
    a1: Tensor2<f64>,
    t: f64,
}

impl Instance {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let d = rng.gen_range(2..=6);
        let hidden = rng.gen_range(2..=6);
        // At least two general rows: with a single key the general
        // self-attention weight is 1 regardless of the query projection,
        // which would make W_Q forward-dead for structural reasons rather
        // than anything to do with gradient routing.
        let rows_g = rng.gen_range(2..=4);
        let n_a = rng.gen_range(1..=3);
        let m = rng.gen_range(2..=4);
        let mut draw = |rows: usize, cols: usize| {
            Tensor2::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0)).unwrap()
        };
        let h_g = draw(rows_g, d);
        let h_e = draw(n_a, d);
        let a0 = draw(n_a, m);
        let a1 = draw(n_a, m);
        let decoder = draw(d, m);
        let time_proj = draw(m, m);
        let p = FusionParams::random(d, hidden, rng);
        let t = rng.gen_range(0.0..1.0);
        Self {
            p,
            decoder,
            time_proj,
            h_g,
            h_e,
            a0,
            a1,
            t,
        }
    }

    fn forward_loss(&self) -> Result<f64, KernelError> {
        let (g1, e1) = fuse_layer(&self.h_g, &self.h_e, &self.p)?;
        let (_g2, e2) = fuse_layer(&g1, &e1, &self.p)?;
        let a_t = flow_interpolate(&self.a0, &self.a1, self.t)?;
        let pred = e2.matmul(&self.decoder)?.add(&a_t.matmul(&self.time_proj)?)?;
        fm_loss(&pred, &self.a0, &self.a1)
    }
}

/// Where one scalar parameter lives inside an [`Instance`].
#[derive(Debug, Clone, Copy)]
enum ParamRef {
    General(usize, usize, usize),
    Embodied(usize, usize, usize),
    Decoder(usize, usize),
    TimeProj(usize, usize),
}

fn bump(p: &mut crate::fusion::PathwayParams<f64>, ti: usize, r: usize, c: usize, delta: f64) {
    let t = match ti {
        0 => &mut p.w_q,
        1 => &mut p.w_k,
        2 => &mut p.w_v,
        3 => &mut p.ffn_w1,
        _ => &mut p.ffn_w2,
    };
    let v = t.get(r, c);
    t.set(r, c, v + delta);
}

fn perturbed_loss(base: &Instance, which: ParamRef, delta: f64) -> f64 {
    let mut inst = base.clone();
    match which {
        ParamRef::General(ti, r, c) => bump(&mut inst.p.general, ti, r, c, delta),
        ParamRef::Embodied(ti, r, c) => bump(&mut inst.p.embodied, ti, r, c, delta),
        ParamRef::Decoder(r, c) => {
            let v = inst.decoder.get(r, c);
            inst.decoder.set(r, c, v + delta);
        }
        ParamRef::TimeProj(r, c) => {
            let v = inst.time_proj.get(r, c);
            inst.time_proj.set(r, c, v + delta);
        }
    }
    inst.forward_loss().expect("perturbed instance stays valid")
}

fn central_fd(inst: &Instance, which: ParamRef, h: f64) -> f64 {
    (perturbed_loss(inst, which, h) - perturbed_loss(inst, which, -h)) / (2.0 * h)
}

pub fn run_invariant_suite(cfg: &CheckConfig) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = CheckReport {
        instances: cfg.instances,
        frozen_checked: 0,
        max_frozen_grad: 0.0,
        frozen_live_fraction: 0.0,
        trainable_checked: 0,
        max_trainable_rel_err: 0.0,
        forward_agreement_max_err: 0.0,
        mask_layouts: 0,
        prior_mask_violations: 0,
        posterior_mask_violations: 0,
        hull_violations: 0,
        frozen_forward_mismatches: 0,
        flow_cases: 0,
        flow_violations: 0,
        alignment_cut_ok: false,
        failures: Vec::new(),
    };

    let mut frozen_live = 0usize;
    for i in 0..cfg.instances {
        let inst = Instance::random(&mut rng);
        if let Err(e) = certify_instance(&inst, cfg, &mut report, &mut frozen_live) {
            report.failures.push(format!("instance {i}: {e}"));
        }
    }
    report.frozen_live_fraction = if report.frozen_checked == 0 {
        0.0
    } else {
        frozen_live as f64 / report.frozen_checked as f64
    };
    if report.max_frozen_grad != 0.0 {
        report
            .failures
            .push(format!("frozen gradient nonzero: {:e}", report.max_frozen_grad));
    }
    if report.frozen_live_fraction < cfg.min_live_fraction {
        report.failures.push(format!(
            "frozen live fraction {:.4} below {:.2}",
            report.frozen_live_fraction, cfg.min_live_fraction
        ));
    }
    if report.max_trainable_rel_err > cfg.rel_tol {
        report.failures.push(format!(
            "trainable gradient mismatch: rel err {:.3e}",
            report.max_trainable_rel_err
        ));
    }
    if report.forward_agreement_max_err > 1e-11 {
        report.failures.push(format!(
            "tape/tensor forward disagreement: {:.3e}",
            report.forward_agreement_max_err
        ));
    }

    check_masks(&mut report, &mut rng);
    if report.prior_mask_violations + report.posterior_mask_violations > 0 {
        report.failures.push(format!(
            "mask violations: prior {}, posterior {}",
            report.prior_mask_violations, report.posterior_mask_violations
        ));
    }
    if report.hull_violations > 0 {
        report
            .failures
            .push(format!("convex hull violations: {}", report.hull_violations));
    }

    check_flow(&mut report, &mut rng);
    if report.flow_violations > 0 {
        report
            .failures
            .push(format!("flow identity violations: {}", report.flow_violations));
    }

    report.alignment_cut_ok = alignment_cut_holds();
    if !report.alignment_cut_ok {
        report.failures.push("alignment stop-gradient leak".to_string());
    }

    report
}

fn certify_instance(
    inst: &Instance,
    cfg: &CheckConfig,
    report: &mut CheckReport,
    frozen_live: &mut usize,
) -> Result<(), KernelError> {
    // Frozen forward immutability: the general output must not depend on
    // the embodied input in any way, bit for bit.
    let standalone = general_block(&inst.h_g, &inst.p.general)?;
    let (g1, e1) = fuse_layer(&inst.h_g, &inst.h_e, &inst.p)?;
    let mut other_e = inst.h_e.clone();
    other_e.set(0, 0, other_e.get(0, 0) + 0.5);
    let (g1_alt, _) = fuse_layer(&inst.h_g, &other_e, &inst.p)?;
    if standalone != g1 || g1 != g1_alt {
        report.frozen_forward_mismatches += 1;
    }
    let _ = e1;

    // Tape forward and gradients.
    let mut g = Graph::<f64>::new();
    let np = g.lift_fusion(&inst.p);
    let nh_g = g.mat_input(&inst.h_g);
    let nh_e = g.mat_input(&inst.h_e);
    let ndec = g.mat_input(&inst.decoder);
    let ntp = g.mat_input(&inst.time_proj);
    let (ng1, ne1) = g.fuse_layer_graph(&nh_g, &nh_e, &np)?;
    let (_ng2, ne2) = g.fuse_layer_graph(&ng1, &ne1, &np)?;
    let a_t = flow_interpolate(&inst.a0, &inst.a1, inst.t)?;
    let na_t = g.mat_input(&a_t);
    let lhs = g.mat_matmul(&ne2, &ndec)?;
    let rhs = g.mat_matmul(&na_t, &ntp)?;
    let pred = g.mat_add(&lhs, &rhs)?;
    let loss = g.mat_fm_loss(&pred, &inst.a0, &inst.a1)?;

    let tensor_loss = inst.forward_loss()?;
    let agreement = (g.value(loss) - tensor_loss).abs() / tensor_loss.abs().max(1.0);
    report.forward_agreement_max_err = report.forward_agreement_max_err.max(agreement);

    let grads = g.backward(loss);

    // Frozen side: reverse-mode exactly zero, finite differences alive.
    for (ti, (_, tensor)) in inst.p.general.tensors().iter().enumerate() {
        let mats = [
            &np.general.w_q,
            &np.general.w_k,
            &np.general.w_v,
            &np.general.ffn_w1,
            &np.general.ffn_w2,
        ];
        for r in 0..tensor.rows() {
            for c in 0..tensor.cols() {
                let ad = grads.wrt(mats[ti].id(r, c));
                report.max_frozen_grad = report.max_frozen_grad.max(ad.abs());
                let fd = central_fd(inst, ParamRef::General(ti, r, c), cfg.fd_step);
                if fd.abs() > cfg.live_threshold {
                    *frozen_live += 1;
                }
                report.frozen_checked += 1;
            }
        }
    }

    // Trainable side: reverse mode against central differences.
    let check_trainable = |ad: f64, which: ParamRef, report: &mut CheckReport| {
        let fd = central_fd(inst, which, cfg.fd_step);
        let denom = ad.abs().max(fd.abs()).max(cfg.abs_floor / cfg.rel_tol);
        let rel = (ad - fd).abs() / denom;
        report.max_trainable_rel_err = report.max_trainable_rel_err.max(rel);
        report.trainable_checked += 1;
    };
    for (ti, (_, tensor)) in inst.p.embodied.tensors().iter().enumerate() {
        let mats = [
            &np.embodied.w_q,
            &np.embodied.w_k,
            &np.embodied.w_v,
            &np.embodied.ffn_w1,
            &np.embodied.ffn_w2,
        ];
        for r in 0..tensor.rows() {
            for c in 0..tensor.cols() {
                let ad = grads.wrt(mats[ti].id(r, c));
                check_trainable(ad, ParamRef::Embodied(ti, r, c), report);
            }
        }
    }
    for r in 0..inst.decoder.rows() {
        for c in 0..inst.decoder.cols() {
            let ad = grads.wrt(ndec.id(r, c));
            check_trainable(ad, ParamRef::Decoder(r, c), report);
        }
    }
    for r in 0..inst.time_proj.rows() {
        for c in 0..inst.time_proj.cols() {
            let ad = grads.wrt(ntp.id(r, c));
            check_trainable(ad, ParamRef::TimeProj(r, c), report);
        }
    }
    Ok(())
}

fn check_masks(report: &mut CheckReport, rng: &mut ChaCha8Rng) {
    let d = 4;
    for n_v in 1..=4 {
        for n_l in 1..=4 {
            for n_a in 1..=4 {
                for branch in [Branch::Prior, Branch::Posterior] {
                    report.mask_layouts += 1;
                    let layout = build_sequence(branch, n_v, n_l, n_a);
                    let n = layout.len();
                    let draw = |rng: &mut ChaCha8Rng| {
                        Tensor2::from_fn(n, d, |_, _| rng.gen_range(-1.0..1.0)).unwrap()
                    };
                    let q = draw(rng);
                    let k = draw(rng);
                    let v = draw(rng);
                    let w = attention_weights(&q, &k, &v, layout.mask()).unwrap();
                    let out = attention(&q, &k, &v, layout.mask()).unwrap();

                    for a_row in layout.positions(TokenKind::ActionQuery) {
                        let lang: Vec<usize> = layout.positions(TokenKind::Language).collect();
                        match branch {
                            Branch::Prior => {
                                if lang.iter().any(|&c| w.get(a_row, c) != 0.0) {
                                    report.prior_mask_violations += 1;
                                }
                            }
                            Branch::Posterior => {
                                if !lang.iter().any(|&c| w.get(a_row, c) > 0.0) {
                                    report.posterior_mask_violations += 1;
                                }
                            }
                        }
                    }

                    // Convex hull: every output row within the coordinate
                    // bounds of the value rows it was allowed to see.
                    for r in 0..n {
                        for col in 0..d {
                            let mut lo = f64::INFINITY;
                            let mut hi = f64::NEG_INFINITY;
                            for key in 0..n {
                                if layout.mask().allowed(r, key) {
                                    lo = lo.min(v.get(key, col));
                                    hi = hi.max(v.get(key, col));
                                }
                            }
                            let x = out.get(r, col);
                            if x < lo - 1e-12 || x > hi + 1e-12 {
                                report.hull_violations += 1;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn check_flow(report: &mut CheckReport, rng: &mut ChaCha8Rng) {
    for _ in 0..50 {
        let rows = rng.gen_range(1..=3);
        let cols = rng.gen_range(1..=4);
        let a0: Tensor2<f64> =
            Tensor2::from_fn(rows, cols, |_, _| rng.gen_range(-2.0..2.0)).unwrap();
        let a1: Tensor2<f64> =
            Tensor2::from_fn(rows, cols, |_, _| rng.gen_range(-2.0..2.0)).unwrap();
        report.flow_cases += 1;
        let mut bad = false;

        bad |= flow_interpolate(&a0, &a1, 0.0).unwrap() != a0;
        bad |= flow_interpolate(&a0, &a1, 1.0).unwrap() != a1;

        let t = rng.gen_range(0.0..1.0);
        let a_t = flow_interpolate(&a0, &a1, t).unwrap();
        for i in 0..rows {
            for j in 0..cols {
                let lhs = a_t.get(i, j) - a0.get(i, j);
                let rhs = t * (a1.get(i, j) - a0.get(i, j));
                bad |= (lhs - rhs).abs() > 1e-12;
            }
        }

        let target = a1.sub(&a0).unwrap();
        bad |= fm_loss(&target, &a0, &a1).unwrap() != 0.0;

        let resid = Tensor2::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0)).unwrap();
        let base = fm_loss(&target.add(&resid).unwrap(), &a0, &a1).unwrap();
        let scaled = fm_loss(&target.add(&resid.scale(3.0).unwrap()).unwrap(), &a0, &a1).unwrap();
        bad |= (scaled - 9.0 * base).abs() > 1e-12 * scaled.abs().max(1.0);

        if bad {
            report.flow_violations += 1;
        }
    }
}

fn alignment_cut_holds() -> bool {
    let mut g = Graph::<f64>::new();
    let x = g.input(0.9);
    let y = g.input(-1.3);
    let ll_prior = g.tanh(x);
    let ll_post = g.tanh(y);
    let loss = g.alignment_loss_node(ll_post, ll_prior);
    let grads = g.backward(loss);
    grads.wrt(x) == 0.0 && grads.wrt(y) != 0.0
}
