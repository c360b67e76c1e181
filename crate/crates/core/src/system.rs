//! The student-teacher system: two global-focal networks joined by
//! inter-network TWL+SEMA connections, classification and detection heads,
//! gaze-supervised teacher pre-training, and distillation-style student
//! training with the visual attention loss.

use crate::augment::{augment, AugmentProfile};
use crate::losses::{
    cross_entropy, giou_loss_graph, keypoint_mse_graph, val_loss_graph, AttentionRegion,
};
use crate::network::{twl_combine, GlobalFocalConfig, GlobalFocalNet, SemaState};
use crate::optim::{Adam, OptimError};
use crate::param::{Fwd, Param, Parameterized};
use crate::rng::Rng;
use crate::tensor::{el, Element, Result, Tensor, TensorError};
use crate::window::{PatchEmbed, TokenGrid};

/// Classification and detection heads reading a pooled token feature.
#[derive(Clone, Debug)]
pub struct Heads<T: Element> {
    pub dim: usize,
    pub n_classes: usize,
    pub cls_w: Param<T>,
    pub cls_b: Param<T>,
    pub det_w: Param<T>,
    pub det_b: Param<T>,
}

impl<T: Element> Heads<T> {
    pub fn new(dim: usize, n_classes: usize, rng: &mut Rng) -> Self {
        Heads {
            dim,
            n_classes,
            cls_w: Param::trunc_normal(&[dim, n_classes], rng),
            cls_b: Param::zeros(&[n_classes]),
            det_w: Param::trunc_normal(&[dim, 4], rng),
            det_b: Param::zeros(&[4]),
        }
    }

    /// Global-average-pool over the token grid: `[b,h,w,d] -> [b,d]`.
    pub fn gap(z: &TokenGrid<T>) -> Result<Tensor<T>> {
        z.tensor
            .reshape(&[z.batch, z.h * z.w, z.dim])?
            .mean_axis(1)
    }

    /// Returns class logits `[b, n]` and sigmoid region keypoints `[b, 4]`
    /// in `[cx, cy, h, w]` layout.
    pub fn forward(
        &self,
        fwd: &Fwd<T>,
        prefix: &str,
        z: &TokenGrid<T>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        if z.dim != self.dim {
            return Err(TensorError::ShapeMismatch {
                op: "heads",
                lhs: vec![self.dim],
                rhs: vec![z.dim],
            });
        }
        let feat = Self::gap(z)?;
        let cw = fwd.leaf(&format!("{prefix}.cls_w"), &self.cls_w);
        let cb = fwd.leaf(&format!("{prefix}.cls_b"), &self.cls_b);
        let dw = fwd.leaf(&format!("{prefix}.det_w"), &self.det_w);
        let db = fwd.leaf(&format!("{prefix}.det_b"), &self.det_b);
        let logits = feat.matmul(&cw)?.add(&cb)?;
        let region = feat.matmul(&dw)?.add(&db)?.sigmoid();
        Ok((logits, region))
    }
}

impl<T: Element> Parameterized<T> for Heads<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        f(format!("{prefix}.cls_w"), &mut self.cls_w);
        f(format!("{prefix}.cls_b"), &mut self.cls_b);
        f(format!("{prefix}.det_w"), &mut self.det_w);
        f(format!("{prefix}.det_b"), &mut self.det_b);
    }
}

/// One complete network: patch embedding, global-focal trunk, heads.
#[derive(Clone, Debug)]
pub struct SubNet<T: Element> {
    pub patch: PatchEmbed<T>,
    pub net: GlobalFocalNet<T>,
    pub heads: Heads<T>,
}

impl<T: Element> Parameterized<T> for SubNet<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        self.patch.visit_params(&format!("{prefix}.patch"), f);
        self.net.visit_params(prefix, f);
        self.heads.visit_params(&format!("{prefix}.heads"), f);
    }
}

/// Hyperparameters of the whole two-network system.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StudentTeacherConfig {
    pub student: GlobalFocalConfig,
    pub teacher: GlobalFocalConfig,
    /// Inter-network TWL weights (student, teacher) at the intermediate
    /// fusion point.
    pub inter_lambda_in: (f64, f64),
    /// Inter-network TWL weights (student, teacher) at the final fusion.
    pub inter_lambda_out: (f64, f64),
    /// Visual attention loss weights (GIoU, keypoint MSE).
    pub val_weights: (f64, f64),
    /// Teacher pre-training detection loss weights (GIoU, keypoint MSE).
    pub hvat_weights: (f64, f64),
    /// Keep teacher parameters fixed during student training.
    pub teacher_frozen: bool,
    pub patch: usize,
    pub in_channels: usize,
    pub n_classes: usize,
    pub teacher_classes: usize,
}

impl StudentTeacherConfig {
    /// Standard system at a given channel width / window / patch size.
    pub fn standard(
        dim: usize,
        window: usize,
        patch: usize,
        in_channels: usize,
        n_classes: usize,
        teacher_classes: usize,
    ) -> Self {
        StudentTeacherConfig {
            student: GlobalFocalConfig::standard(dim, window),
            teacher: GlobalFocalConfig::standard(dim, window),
            inter_lambda_in: (0.5, 0.5),
            inter_lambda_out: (0.5, 0.5),
            val_weights: (1.0, 1.0),
            hvat_weights: (1.0, 1.0),
            teacher_frozen: true,
            patch,
            in_channels,
            n_classes,
            teacher_classes,
        }
    }

    /// Named ablation presets. Pathway ablations zero the unused TWL arm;
    /// presets without distillation zero the teacher's inter-network weight;
    /// presets without the attention loss zero its weights.
    pub fn preset(
        name: &str,
        dim: usize,
        window: usize,
        patch: usize,
        in_channels: usize,
        n_classes: usize,
        teacher_classes: usize,
    ) -> Option<Self> {
        let mut cfg = Self::standard(dim, window, patch, in_channels, n_classes, teacher_classes);
        let focal_only = |c: &mut GlobalFocalConfig| {
            c.lambda_in = (0.0, 1.0);
            c.lambda_out = (0.0, 1.0);
        };
        let global_only = |c: &mut GlobalFocalConfig| {
            c.lambda_in = (1.0, 0.0);
            c.lambda_out = (1.0, 0.0);
        };
        let no_teacher = |c: &mut StudentTeacherConfig| {
            c.inter_lambda_in = (1.0, 0.0);
            c.inter_lambda_out = (1.0, 0.0);
            c.val_weights = (0.0, 0.0);
        };
        match name {
            "focal" => {
                focal_only(&mut cfg.student);
                no_teacher(&mut cfg);
            }
            "global" => {
                global_only(&mut cfg.student);
                no_teacher(&mut cfg);
            }
            "focal-hvat" => {
                focal_only(&mut cfg.student);
                focal_only(&mut cfg.teacher);
                cfg.val_weights = (0.0, 0.0);
            }
            "global-hvat" => {
                global_only(&mut cfg.student);
                global_only(&mut cfg.teacher);
                cfg.val_weights = (0.0, 0.0);
            }
            "focal-hvat-val" => {
                focal_only(&mut cfg.student);
                focal_only(&mut cfg.teacher);
            }
            "global-hvat-val" => {
                global_only(&mut cfg.student);
                global_only(&mut cfg.teacher);
            }
            "gf-hvat-val" => {}
            _ => return None,
        }
        Some(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.student.validate()?;
        self.teacher.validate()?;
        if self.student.dim() != self.teacher.dim() {
            return Err(TensorError::Invalid(
                "student and teacher must share a channel width for TWL fusion".into(),
            ));
        }
        for v in [
            self.inter_lambda_in.0,
            self.inter_lambda_in.1,
            self.inter_lambda_out.0,
            self.inter_lambda_out.1,
            self.val_weights.0,
            self.val_weights.1,
            self.hvat_weights.0,
            self.hvat_weights.1,
        ] {
            if !v.is_finite() {
                return Err(TensorError::Invalid("non-finite system weight".into()));
            }
        }
        if self.val_weights.0 < 0.0 || self.val_weights.1 < 0.0 {
            return Err(TensorError::Invalid("attention loss weights must be >= 0".into()));
        }
        if self.patch == 0 || self.in_channels == 0 || self.n_classes == 0 || self.teacher_classes == 0
        {
            return Err(TensorError::Invalid("patch/channels/class counts must be positive".into()));
        }
        Ok(())
    }
}

/// Inter-network fusion: `z = λ_s·z_s + λ_t·z_t`, SEMA-smoothed during
/// training.
pub fn inter_twl<T: Element>(
    z_s: &TokenGrid<T>,
    z_t: &TokenGrid<T>,
    lambda_s: f64,
    lambda_t: f64,
    sema: &mut SemaState<T>,
    n: usize,
    train: bool,
) -> Result<TokenGrid<T>> {
    let fused = twl_combine(z_s, z_t, lambda_s, lambda_t)?;
    if train {
        TokenGrid::new(sema.update(&fused.tensor, n)?)
    } else {
        Ok(fused)
    }
}

/// Everything the teacher produces in one pass.
pub struct TeacherOut<T: Element> {
    pub z_in: TokenGrid<T>,
    pub z_out: TokenGrid<T>,
    pub logits: Tensor<T>,
    pub region: Tensor<T>,
}

/// Per-term teacher pre-training losses.
#[derive(Clone, Copy, Debug)]
pub struct TeacherLosses {
    pub total: f64,
    pub ce: f64,
    pub giou: f64,
    pub mse: f64,
}

/// Per-term student training losses.
#[derive(Clone, Copy, Debug)]
pub struct StudentLosses {
    pub total: f64,
    pub ce: f64,
    pub val: f64,
}

/// One training batch: channel-last images plus integer labels and, for
/// teacher pre-training, gaze-derived target regions.
#[derive(Clone, Debug)]
pub struct Batch<T: Element> {
    pub images: Vec<T>,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub labels: Vec<usize>,
    pub regions: Option<Vec<AttentionRegion>>,
}

impl<T: Element> Batch<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn check(&self) -> Result<()> {
        let b = self.labels.len();
        if b == 0 || self.images.len() != b * self.h * self.w * self.c {
            return Err(TensorError::Invalid(format!(
                "batch of {b} labels with {} pixels for {}x{}x{} images",
                self.images.len(),
                self.h,
                self.w,
                self.c
            )));
        }
        if let Some(r) = &self.regions {
            if r.len() != b {
                return Err(TensorError::Invalid(format!(
                    "batch has {b} labels but {} regions",
                    r.len()
                )));
            }
        }
        Ok(())
    }

    /// Per-sample augmented copy of the whole batch as a `[b,h,w,c]` tensor.
    fn augmented(&self, profile: &AugmentProfile, seeds: &[u64]) -> Result<Tensor<T>> {
        let px = self.h * self.w * self.c;
        let mut out = Vec::with_capacity(self.images.len());
        for (i, chunk) in self.images.chunks_exact(px).enumerate() {
            out.extend(augment(chunk, self.h, self.w, self.c, profile, seeds[i])?);
        }
        Ok(Tensor::from_vec(out, &[self.labels.len(), self.h, self.w, self.c]))
    }

    pub fn raw_tensor(&self) -> Tensor<T> {
        Tensor::from_vec(
            self.images.clone(),
            &[self.labels.len(), self.h, self.w, self.c],
        )
    }

    pub fn region_tensor(&self) -> Option<Tensor<T>> {
        self.regions.as_ref().map(|rs| {
            let data: Vec<T> = rs.iter().flat_map(|r| r.to_row().map(el)).collect();
            Tensor::from_vec(data, &[rs.len(), 4])
        })
    }
}

/// The assembled system with its two inter-network SEMA buffers.
#[derive(Clone, Debug)]
pub struct StudentTeacher<T: Element> {
    pub cfg: StudentTeacherConfig,
    pub teacher: SubNet<T>,
    pub student: SubNet<T>,
    pub sema_inter_in: SemaState<T>,
    pub sema_inter_out: SemaState<T>,
}

impl<T: Element> StudentTeacher<T> {
    pub fn new(cfg: StudentTeacherConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let dim = cfg.teacher.dim();
        let teacher = SubNet {
            patch: PatchEmbed::new(cfg.patch, cfg.in_channels, dim, rng),
            net: GlobalFocalNet::new(cfg.teacher.clone(), rng)?,
            heads: Heads::new(dim, cfg.teacher_classes, rng),
        };
        let student = SubNet {
            patch: PatchEmbed::new(cfg.patch, cfg.in_channels, cfg.student.dim(), rng),
            net: GlobalFocalNet::new(cfg.student.clone(), rng)?,
            heads: Heads::new(cfg.student.dim(), cfg.n_classes, rng),
        };
        Ok(StudentTeacher {
            cfg,
            teacher,
            student,
            sema_inter_in: SemaState::new(),
            sema_inter_out: SemaState::new(),
        })
    }

    /// Teacher pass on (possibly differently augmented) global/focal views.
    pub fn teacher_pass(
        &mut self,
        fwd: &Fwd<T>,
        x_global: &Tensor<T>,
        x_focal: &Tensor<T>,
    ) -> Result<TeacherOut<T>> {
        let tg = self.teacher.patch.forward(fwd, "teacher.patch", x_global)?;
        let tf = self.teacher.patch.forward(fwd, "teacher.patch", x_focal)?;
        let (z_in, z_out) = self.teacher.net.forward(fwd, "teacher", &tg, &tf)?;
        let (logits, region) = self.teacher.heads.forward(fwd, "teacher.heads", &z_out)?;
        Ok(TeacherOut { z_in, z_out, logits, region })
    }

    /// Student pass fusing its features with the teacher's taps.
    pub fn student_pass(
        &mut self,
        fwd: &Fwd<T>,
        x_global: &Tensor<T>,
        x_focal: &Tensor<T>,
        teacher_z_in: &TokenGrid<T>,
        teacher_z_out: &TokenGrid<T>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let sg = self.student.patch.forward(fwd, "student.patch", x_global)?;
        let sf = self.student.patch.forward(fwd, "student.patch", x_focal)?;
        let z_s_in = self.student.net.stage_in(fwd, "student", &sg, &sf)?;
        let n = z_s_in.batch;
        let (ls_in, lt_in) = self.cfg.inter_lambda_in;
        let z_st_in = inter_twl(
            &z_s_in,
            teacher_z_in,
            ls_in,
            lt_in,
            &mut self.sema_inter_in,
            n,
            fwd.is_train(),
        )?;
        let z_s_out = self.student.net.stage_out(fwd, "student", &z_st_in)?;
        let (ls_out, lt_out) = self.cfg.inter_lambda_out;
        let z_st_out = inter_twl(
            &z_s_out,
            teacher_z_out,
            ls_out,
            lt_out,
            &mut self.sema_inter_out,
            n,
            fwd.is_train(),
        )?;
        self.student.heads.forward(fwd, "student.heads", &z_st_out)
    }

    /// Teacher-only inference on a raw image batch: class probabilities and
    /// one attention region per sample.
    pub fn teacher_forward(
        &mut self,
        images: &Tensor<T>,
    ) -> Result<(Tensor<T>, Vec<AttentionRegion>)> {
        let fwd = Fwd::eval();
        let out = self.teacher_pass(&fwd, images, images)?;
        let probs = out.logits.softmax(1)?;
        Ok((probs, regions_from_tensor(&out.region)))
    }

    /// Full-system inference: eval mode, no augmentation, no state updates.
    /// The same raw image feeds every pathway.
    pub fn predict(&mut self, images: &Tensor<T>) -> Result<(Tensor<T>, Vec<AttentionRegion>)> {
        let fwd = Fwd::eval();
        let t_out = self.teacher_pass(&fwd, images, images)?;
        let (logits, region) =
            self.student_pass(&fwd, images, images, &t_out.z_in, &t_out.z_out)?;
        Ok((logits.softmax(1)?, regions_from_tensor(&region)))
    }

    /// One gaze-supervised pre-training step on the teacher: classification
    /// cross-entropy plus weighted GIoU and keypoint losses against the
    /// human-visual-attention region, then one Adam step on teacher
    /// parameters.
    pub fn hvat_train_step(
        &mut self,
        batch: &Batch<T>,
        opt: &mut Adam<T>,
        lr: f64,
        aug_seed: u64,
    ) -> Result<TeacherLosses> {
        batch.check()?;
        let target = batch
            .region_tensor()
            .ok_or_else(|| TensorError::Invalid("teacher pre-training batch is missing gaze attention regions".into()))?;
        let b = batch.len();
        let mut seed_rng = Rng::new(aug_seed);
        let seeds_g: Vec<u64> = (0..b).map(|_| seed_rng.next_u64()).collect();
        let seeds_f: Vec<u64> = (0..b).map(|_| seed_rng.next_u64()).collect();
        let xg = batch.augmented(&AugmentProfile::TEACHER_GLOBAL, &seeds_g)?;
        let xf = batch.augmented(&AugmentProfile::TEACHER_FOCAL, &seeds_f)?;

        let fwd = Fwd::train();
        let out = self.teacher_pass(&fwd, &xg, &xf)?;
        let ce = cross_entropy(&out.logits, &batch.labels)?;
        let giou = giou_loss_graph(&out.region, &target)?;
        let mse = keypoint_mse_graph(&out.region, &target)?;
        let (w1, w2) = self.cfg.hvat_weights;
        let total = ce.add(&giou.scale(w1))?.add(&mse.scale(w2))?;

        let grads = fwd.grads(&total)?;
        opt.begin_step();
        let mut opt_err: std::result::Result<(), OptimError> = Ok(());
        self.teacher.visit_params("teacher", &mut |name, p| {
            if opt_err.is_err() {
                return;
            }
            if let Some(g) = grads.get(&name) {
                opt_err = opt.update(&name, p, g, lr);
            }
        });
        opt_err.map_err(|e| TensorError::Invalid(e.to_string()))?;
        Ok(TeacherLosses {
            total: total.item().to_f64().unwrap(),
            ce: ce.item().to_f64().unwrap(),
            giou: giou.item().to_f64().unwrap(),
            mse: mse.item().to_f64().unwrap(),
        })
    }

    /// One student training step: soft-augmented student inputs, hard-
    /// augmented teacher inputs from the same images; loss is classification
    /// cross-entropy plus the visual attention loss against the teacher's
    /// (gradient-detached) region. Updates student parameters, and teacher
    /// parameters too only when the teacher is not frozen.
    pub fn student_train_step(
        &mut self,
        batch: &Batch<T>,
        opt: &mut Adam<T>,
        lr: f64,
        aug_seed: u64,
    ) -> Result<StudentLosses> {
        batch.check()?;
        let b = batch.len();
        let mut seed_rng = Rng::new(aug_seed);
        let mut draw = |n: usize| -> Vec<u64> { (0..n).map(|_| seed_rng.next_u64()).collect() };
        let (tg_seeds, tf_seeds, sg_seeds, sf_seeds) = (draw(b), draw(b), draw(b), draw(b));
        let xtg = batch.augmented(&AugmentProfile::TEACHER_GLOBAL, &tg_seeds)?;
        let xtf = batch.augmented(&AugmentProfile::TEACHER_FOCAL, &tf_seeds)?;
        let xsg = batch.augmented(&AugmentProfile::STUDENT_GLOBAL, &sg_seeds)?;
        let xsf = batch.augmented(&AugmentProfile::STUDENT_FOCAL, &sf_seeds)?;

        let fwd = Fwd::train();
        let frozen = self.cfg.teacher_frozen;
        // A frozen teacher runs in eval mode: constants on the student's
        // tape, intra-teacher SEMA buffers untouched.
        let t_out = if frozen {
            let t_fwd = Fwd::eval();
            self.teacher_pass(&t_fwd, &xtg, &xtf)?
        } else {
            self.teacher_pass(&fwd, &xtg, &xtf)?
        };
        let (logits, region) =
            self.student_pass(&fwd, &xsg, &xsf, &t_out.z_in, &t_out.z_out)?;
        let ce = cross_entropy(&logits, &batch.labels)?;
        let (l1, l2) = self.cfg.val_weights;
        let val = val_loss_graph(&region, &t_out.region.detach(), l1, l2)?;
        let total = ce.add(&val)?;

        let grads = fwd.grads(&total)?;
        opt.begin_step();
        let mut opt_err: std::result::Result<(), OptimError> = Ok(());
        {
            let mut apply = |name: String, p: &mut Param<T>| {
                if opt_err.is_err() {
                    return;
                }
                if let Some(g) = grads.get(&name) {
                    opt_err = opt.update(&name, p, g, lr);
                }
            };
            self.student.visit_params("student", &mut apply);
            if !frozen {
                self.teacher.visit_params("teacher", &mut apply);
            }
        }
        opt_err.map_err(|e| TensorError::Invalid(e.to_string()))?;
        Ok(StudentLosses {
            total: total.item().to_f64().unwrap(),
            ce: ce.item().to_f64().unwrap(),
            val: val.item().to_f64().unwrap(),
        })
    }
}

impl<T: Element> Parameterized<T> for StudentTeacher<T> {
    fn visit_params(&mut self, _prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        self.teacher.visit_params("teacher", f);
        self.student.visit_params("student", f);
    }
}

/// Decode a `[b, 4]` region tensor into per-sample regions.
pub fn regions_from_tensor<T: Element>(t: &Tensor<T>) -> Vec<AttentionRegion> {
    t.data()
        .chunks_exact(4)
        .map(|r| {
            AttentionRegion::new(
                r[0].to_f64().unwrap(),
                r[1].to_f64().unwrap(),
                r[2].to_f64().unwrap(),
                r[3].to_f64().unwrap(),
            )
        })
        .collect()
}
