//! Exact checks of the ELBO and FIAE identities on finite spaces.
//!
//! Every quantity is an exhaustive sum over `x ∈ 0..nx`, `z ∈ 0..nz`, with
//! `0 · log 0 = 0`. Matrices are [`Tensor`]s indexed `[x][z]` for joints
//! and `(condition, outcome)` for conditionals.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::tensor::Tensor;

pub const MAX_SUPPORT: usize = 64;
const SUM_TOL: f64 = 1e-12;
/// Entries of random instances are floored here before renormalizing.
pub const RANDOM_FLOOR: f64 = 1e-6;

/// `p_data(x)`, `q(z|x)` (nx×nz), `p(z)` and `p(x|z)` (nz×nx).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularInstance {
    pub p_data: Vec<f64>,
    pub q_z_given_x: Tensor,
    pub p_z: Vec<f64>,
    pub p_x_given_z: Tensor,
}

fn check_simplex(v: &[f64], what: &str) -> Result<()> {
    if v.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(Error::InvalidArgument(format!("{what} has a negative or non-finite entry")));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > SUM_TOL {
        return Err(Error::InvalidArgument(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

fn normalized(mut v: Vec<f64>, floor: f64) -> Vec<f64> {
    for p in &mut v {
        *p = p.max(floor);
    }
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|p| *p /= s);
    v
}

impl TabularInstance {
    pub fn new(p_data: Vec<f64>, q_z_given_x: Tensor, p_z: Vec<f64>, p_x_given_z: Tensor) -> Result<Self> {
        let inst = Self { p_data, q_z_given_x, p_z, p_x_given_z };
        inst.validate()?;
        Ok(inst)
    }

    pub fn nx(&self) -> usize {
        self.p_data.len()
    }

    pub fn nz(&self) -> usize {
        self.p_z.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (nx, nz) = (self.nx(), self.nz());
        if nx == 0 || nz == 0 || nx > MAX_SUPPORT || nz > MAX_SUPPORT {
            return Err(Error::InvalidArgument(format!("support sizes must lie in 1..={MAX_SUPPORT}, got {nx}, {nz}")));
        }
        if self.q_z_given_x.shape() != (nx, nz) {
            return Err(Error::SupportMismatch(self.q_z_given_x.rows(), nx));
        }
        if self.p_x_given_z.shape() != (nz, nx) {
            return Err(Error::SupportMismatch(self.p_x_given_z.rows(), nz));
        }
        check_simplex(&self.p_data, "p_data")?;
        check_simplex(&self.p_z, "p_z")?;
        for x in 0..nx {
            check_simplex(self.q_z_given_x.row_slice(x), "a row of q(z|x)")?;
        }
        for z in 0..nz {
            check_simplex(self.p_x_given_z.row_slice(z), "a row of p(x|z)")?;
        }
        Ok(())
    }

    /// Every vector and row drawn from a symmetric Dirichlet(1), floored at
    /// [`RANDOM_FLOOR`] and renormalized.
    pub fn random(seed: u64, nx: usize, nz: usize) -> Result<Self> {
        let mut rng = Stream::new(seed);
        let mut draw = |k: usize| normalized(rng.dirichlet_ones(k), RANDOM_FLOOR);
        let p_data = draw(nx);
        let q_rows: Vec<Vec<f64>> = (0..nx).map(|_| draw(nz)).collect();
        let p_z = draw(nz);
        let p_rows: Vec<Vec<f64>> = (0..nz).map(|_| draw(nx)).collect();
        Self::new(p_data, Tensor::from_rows(&q_rows)?, p_z, Tensor::from_rows(&p_rows)?)
    }

    /// A random instance whose support sizes (2..=12 each) are drawn from
    /// the same seed.
    pub fn random_sized(seed: u64) -> Result<Self> {
        let mut rng = Stream::new(seed ^ 0x5eed_512e);
        let nx = 2 + rng.below(11);
        let nz = 2 + rng.below(11);
        Self::random(seed, nx, nz)
    }

    /// The instance whose encoder is the exact model posterior `p(z|x)` and
    /// whose data distribution is the model marginal `p(x)`.
    pub fn model_consistent(p_z: Vec<f64>, p_x_given_z: Tensor) -> Result<Self> {
        let nz = p_z.len();
        let nx = p_x_given_z.cols();
        let p_x: Vec<f64> = (0..nx).map(|x| (0..nz).map(|z| p_z[z] * p_x_given_z.get(z, x)).sum()).collect();
        let q = Tensor::from_fn(nx, nz, |x, z| if p_x[x] > 0.0 { p_z[z] * p_x_given_z.get(z, x) / p_x[x] } else { 1.0 / nz as f64 });
        Self::new(p_x, q, p_z, p_x_given_z)
    }
}

/// Joints and marginals induced by an instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionSet {
    /// `q(x,z) = p_data(x) q(z|x)`.
    pub q_xz: Tensor,
    pub q_z: Vec<f64>,
    /// `q(x|z)` as nz×nx; rows listed in `undefined_z` are zero.
    pub q_x_given_z: Tensor,
    pub undefined_z: Vec<usize>,
    /// `p(x,z) = p(z) p(x|z)`, indexed `[x][z]`.
    pub p_xz: Tensor,
    pub p_x: Vec<f64>,
    /// `r(x,z) = q(z) p(x|z)`.
    pub r_xz: Tensor,
    pub r_x: Vec<f64>,
    /// `s(x,z) = p(x) q(z|x)`.
    pub s_xz: Tensor,
    pub s_z: Vec<f64>,
}

impl DistributionSet {
    /// Row `z` of `q(x|z)`, or [`Error::UndefinedConditional`] when
    /// `q(z) = 0`.
    pub fn q_x_given(&self, z: usize) -> Result<&[f64]> {
        if self.undefined_z.contains(&z) {
            return Err(Error::UndefinedConditional(z));
        }
        Ok(self.q_x_given_z.row_slice(z))
    }
}

fn col_sums(t: &Tensor) -> Vec<f64> {
    (0..t.cols()).map(|c| (0..t.rows()).map(|r| t.get(r, c)).sum()).collect()
}

fn row_sums(t: &Tensor) -> Vec<f64> {
    (0..t.rows()).map(|r| t.row_slice(r).iter().sum()).collect()
}

pub fn induce(inst: &TabularInstance) -> Result<DistributionSet> {
    inst.validate()?;
    let (nx, nz) = (inst.nx(), inst.nz());
    let q_xz = Tensor::from_fn(nx, nz, |x, z| inst.p_data[x] * inst.q_z_given_x.get(x, z));
    let q_z = col_sums(&q_xz);
    let undefined_z: Vec<usize> = (0..nz).filter(|&z| q_z[z] == 0.0).collect();
    let q_x_given_z = Tensor::from_fn(nz, nx, |z, x| if q_z[z] > 0.0 { q_xz.get(x, z) / q_z[z] } else { 0.0 });
    let p_xz = Tensor::from_fn(nx, nz, |x, z| inst.p_z[z] * inst.p_x_given_z.get(z, x));
    let p_x = row_sums(&p_xz);
    let r_xz = Tensor::from_fn(nx, nz, |x, z| q_z[z] * inst.p_x_given_z.get(z, x));
    let r_x = row_sums(&r_xz);
    let s_xz = Tensor::from_fn(nx, nz, |x, z| p_x[x] * inst.q_z_given_x.get(x, z));
    let s_z = col_sums(&s_xz);
    Ok(DistributionSet { q_xz, q_z, q_x_given_z, undefined_z, p_xz, p_x, r_xz, r_x, s_xz, s_z })
}

/// `Σ p log(p/q)` in nats. Returns `+∞` when `q = 0` somewhere `p > 0`.
pub fn kl(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::SupportMismatch(p.len(), q.len()));
    }
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a > 0.0 {
            if b <= 0.0 {
                return Ok(f64::INFINITY);
            }
            if a != b {
                total += a * (a / b).ln();
            }
        }
    }
    Ok(total)
}

/// [`kl`] that reports an infinite divergence as an error naming `what`.
fn kl_finite(p: &[f64], q: &[f64], what: &'static str) -> Result<f64> {
    let v = kl(p, q)?;
    if v.is_infinite() {
        Err(Error::InfiniteDivergence(what))
    } else {
        Ok(v)
    }
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

/// `-log b` weighted by `a`, with `0 · log 0 = 0`; `+∞` contributions are
/// reported as errors.
fn cross(a: f64, b: f64, what: &'static str) -> Result<f64> {
    if a == 0.0 {
        Ok(0.0)
    } else if b <= 0.0 {
        Err(Error::InfiniteDivergence(what))
    } else {
        Ok(-a * b.ln())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfoMeasures {
    pub h_x: f64,
    pub h_z: f64,
    pub h_x_given_z: f64,
    pub h_z_given_x: f64,
    /// `H(x) − H(x|z)`.
    pub mi: f64,
    /// `H(z) − H(z|x)`, an independent evaluation of the same quantity.
    pub mi_alt: f64,
}

/// Entropies and mutual information of an nx×nz joint.
pub fn info_measures(joint: &Tensor) -> Result<InfoMeasures> {
    check_simplex(joint.data(), "joint")?;
    let px = row_sums(joint);
    let pz = col_sums(joint);
    let (h_x, h_z) = (entropy(&px), entropy(&pz));
    let mut h_x_given_z = 0.0;
    let mut h_z_given_x = 0.0;
    for x in 0..joint.rows() {
        for z in 0..joint.cols() {
            let j = joint.get(x, z);
            if j > 0.0 {
                h_x_given_z -= j * (j / pz[z]).ln();
                h_z_given_x -= j * (j / px[x]).ln();
            }
        }
    }
    Ok(InfoMeasures { h_x, h_z, h_x_given_z, h_z_given_x, mi: h_x - h_x_given_z, mi_alt: h_z - h_z_given_x })
}

/// The aggregated ELBO written four ways; all are equal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElboForms {
    /// `−E[−log p(x|z)] − E_x KL(q(z|x) ‖ p(z))`.
    pub form_vae: f64,
    /// `−E[−log p(x|z)] − KL(q(z) ‖ p(z)) − I(z;x)`.
    pub form_aae: f64,
    /// `−KL(q(x,z) ‖ r(x,z)) − KL(q(z) ‖ p(z)) − H_data(x)`.
    pub form_iae: f64,
    /// `form_iae` with the reconstruction term written as
    /// `E_{q(z)} KL(q(x|z) ‖ p(x|z))`.
    pub form_iae_conditional: f64,
    /// `E_{p_data}[log p(x)]`, which every form lower-bounds.
    pub log_likelihood: f64,
}

impl ElboForms {
    pub fn values(&self) -> [f64; 4] {
        [self.form_vae, self.form_aae, self.form_iae, self.form_iae_conditional]
    }

    pub fn max_pairwise_diff(&self) -> f64 {
        max_pairwise(&self.values())
    }
}

fn max_pairwise(v: &[f64]) -> f64 {
    let mut m: f64 = 0.0;
    for (i, a) in v.iter().enumerate() {
        for b in &v[i + 1..] {
            m = m.max((a - b).abs());
        }
    }
    m
}

/// `E_{p_data} E_{q(z|x)}[−log p(x|z)]`.
fn ae_recon(inst: &TabularInstance, d: &DistributionSet) -> Result<f64> {
    let mut total = 0.0;
    for x in 0..inst.nx() {
        for z in 0..inst.nz() {
            total += cross(d.q_xz.get(x, z), inst.p_x_given_z.get(z, x), "ae_recon")?;
        }
    }
    Ok(total)
}

/// `E_{q(z)} KL(q(x|z) ‖ p(x|z))`.
fn iae_recon(inst: &TabularInstance, d: &DistributionSet) -> Result<f64> {
    let mut total = 0.0;
    for z in 0..inst.nz() {
        if d.q_z[z] > 0.0 {
            total += d.q_z[z] * kl_finite(d.q_x_given(z)?, inst.p_x_given_z.row_slice(z), "iae_recon")?;
        }
    }
    Ok(total)
}

fn data_log_likelihood(inst: &TabularInstance, d: &DistributionSet) -> Result<f64> {
    let mut total = 0.0;
    for x in 0..inst.nx() {
        total -= cross(inst.p_data[x], d.p_x[x], "log_likelihood")?;
    }
    Ok(total)
}

pub fn elbo_forms(inst: &TabularInstance) -> Result<ElboForms> {
    let d = induce(inst)?;
    let recon = ae_recon(inst, &d)?;
    let mut vae_reg = 0.0;
    for x in 0..inst.nx() {
        vae_reg += inst.p_data[x] * kl_finite(inst.q_z_given_x.row_slice(x), &inst.p_z, "vae_regularization")?;
    }
    let reg = kl_finite(&d.q_z, &inst.p_z, "regularization")?;
    let info = info_measures(&d.q_xz)?;
    let joint_recon = kl_finite(d.q_xz.data(), d.r_xz.data(), "iae_reconstruction")?;
    let h_data = entropy(&inst.p_data);
    Ok(ElboForms {
        form_vae: -recon - vae_reg,
        form_aae: -recon - reg - info.mi,
        form_iae: -joint_recon - reg - h_data,
        form_iae_conditional: -iae_recon(inst, &d)? - reg - h_data,
        log_likelihood: data_log_likelihood(inst, &d)?,
    })
}

/// `|AE_recon − (IAE_recon + H(x|z))|`.
pub fn recon_identity_residual(inst: &TabularInstance) -> Result<f64> {
    Ok(recon_identity_terms(inst)?.residual())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconIdentity {
    pub ae_recon: f64,
    pub iae_recon: f64,
    pub h_x_given_z: f64,
}

impl ReconIdentity {
    pub fn residual(&self) -> f64 {
        (self.ae_recon - (self.iae_recon + self.h_x_given_z)).abs()
    }
}

pub fn recon_identity_terms(inst: &TabularInstance) -> Result<ReconIdentity> {
    let d = induce(inst)?;
    Ok(ReconIdentity {
        ae_recon: ae_recon(inst, &d)?,
        iae_recon: iae_recon(inst, &d)?,
        h_x_given_z: info_measures(&d.q_xz)?.h_x_given_z,
    })
}

/// The FIAE variational bound and its decompositions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiaeForms {
    /// `KL(p(x,z) ‖ q(x,z))`.
    pub bound: f64,
    /// `KL(p(x) ‖ p_data) + E_{p(z)} E_{p(x|z)}[−log q(z|x)] − H_p(z|x)`.
    pub infogan_form: f64,
    /// `KL(p(x) ‖ p_data) + E_{p(x)} KL(p(z|x) ‖ q(z|x))`.
    pub fiae_form1: f64,
    /// `KL(p(x) ‖ p_data) + KL(p(x,z) ‖ s(x,z))`.
    pub fiae_form2: f64,
    /// `KL(p(x) ‖ p_data)`.
    pub target: f64,
    /// `KL(p(z) ‖ q(z))`.
    pub prior_kl: f64,
    /// `E_{p(x)} KL(p(z|x) ‖ q(z|x))`.
    pub posterior_kl: f64,
}

impl FiaeForms {
    pub fn values(&self) -> [f64; 4] {
        [self.bound, self.infogan_form, self.fiae_form1, self.fiae_form2]
    }

    pub fn max_pairwise_diff(&self) -> f64 {
        max_pairwise(&self.values())
    }

    /// Largest violation of `target, prior_kl, posterior_kl ≤ bound`
    /// (0 when all three hold).
    pub fn bound_violation(&self) -> f64 {
        [self.target, self.prior_kl, self.posterior_kl].iter().map(|v| (v - self.bound).max(0.0)).fold(0.0, f64::max)
    }
}

pub fn fiae_forms(inst: &TabularInstance) -> Result<FiaeForms> {
    let d = induce(inst)?;
    let (nx, nz) = (inst.nx(), inst.nz());
    let bound = kl_finite(d.p_xz.data(), d.q_xz.data(), "fiae_bound")?;
    let target = kl_finite(&d.p_x, &inst.p_data, "fiae_regularization")?;

    let mut infogan_recon = 0.0;
    let mut h_z_given_x = 0.0;
    let mut posterior_kl = 0.0;
    for x in 0..nx {
        if d.p_x[x] == 0.0 {
            continue;
        }
        let post: Vec<f64> = (0..nz).map(|z| d.p_xz.get(x, z) / d.p_x[x]).collect();
        for z in 0..nz {
            infogan_recon += cross(d.p_xz.get(x, z), inst.q_z_given_x.get(x, z), "infogan_reconstruction")?;
            if post[z] > 0.0 {
                h_z_given_x -= d.p_xz.get(x, z) * post[z].ln();
            }
        }
        posterior_kl += d.p_x[x] * kl_finite(&post, inst.q_z_given_x.row_slice(x), "fiae_reconstruction")?;
    }
    let joint_recon = kl_finite(d.p_xz.data(), d.s_xz.data(), "fiae_reconstruction")?;
    Ok(FiaeForms {
        bound,
        infogan_form: target + infogan_recon - h_z_given_x,
        fiae_form1: target + posterior_kl,
        fiae_form2: target + joint_recon,
        target,
        prior_kl: kl_finite(&inst.p_z, &d.q_z, "prior_kl")?,
        posterior_kl,
    })
}

/// The ELBO derivation evaluated line by line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivationTrace {
    /// `E_{p_data}[log p(x)]`.
    pub lhs: f64,
    /// Right-hand sides in order; consecutive lines are equal.
    pub lines: [f64; 8],
    /// `lhs − lines[0]`, the gap of the opening inequality.
    pub slack: f64,
    /// `E_{p_data} KL(q(z|x) ‖ p(z|x))`, computed separately.
    pub posterior_kl: f64,
}

impl DerivationTrace {
    pub fn max_consecutive_diff(&self) -> f64 {
        self.lines.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max)
    }

    pub fn slack_residual(&self) -> f64 {
        (self.slack - self.posterior_kl).abs()
    }
}

pub fn derivation_trace(inst: &TabularInstance) -> Result<DerivationTrace> {
    let d = induce(inst)?;
    let (nx, nz) = (inst.nx(), inst.nz());
    let pd = &inst.p_data;
    let qzx = |x: usize, z: usize| inst.q_z_given_x.get(x, z);
    let pxz_cond = |x: usize, z: usize| inst.p_x_given_z.get(z, x);
    // Σ_{x,z} q(x,z) f(x,z), skipping q(x,z) = 0.
    let sum_q = |f: &dyn Fn(usize, usize) -> f64| -> f64 {
        let mut t = 0.0;
        for x in 0..nx {
            for z in 0..nz {
                let w = d.q_xz.get(x, z);
                if w > 0.0 {
                    t += w * f(x, z);
                }
            }
        }
        t
    };
    let sum_qz = |f: &dyn Fn(usize) -> f64| -> f64 { (0..nz).filter(|&z| d.q_z[z] > 0.0).map(|z| d.q_z[z] * f(z)).sum() };
    let ent_term = (0..nx).filter(|&x| pd[x] > 0.0).map(|x| pd[x] * pd[x].ln()).sum::<f64>();
    let h_data = -ent_term;
    let positive = [pd.as_slice(), inst.p_z.as_slice(), inst.q_z_given_x.data(), inst.p_x_given_z.data()];
    if positive.iter().any(|v| v.iter().any(|&p| p <= 0.0)) {
        return Err(Error::InfiniteDivergence("derivation_trace"));
    }

    let mut line1 = 0.0;
    for x in 0..nx {
        let mut inner = 0.0;
        for z in 0..nz {
            inner += qzx(x, z) * (inst.p_z[z] * pxz_cond(x, z) / qzx(x, z)).ln();
        }
        line1 += pd[x] * inner;
    }
    let line2 = sum_q(&|x, z| (d.p_xz.get(x, z) / qzx(x, z)).ln());
    let recon_ratio = sum_q(&|x, z| (qzx(x, z) / pxz_cond(x, z)).ln());
    let cross_prior = sum_qz(&|z| inst.p_z[z].ln());
    let line3 = -recon_ratio + cross_prior;
    let line4 = -recon_ratio - ent_term + cross_prior + ent_term;
    let line5 = -sum_q(&|x, z| (pd[x] * qzx(x, z) / pxz_cond(x, z)).ln()) + cross_prior - h_data;
    let q_ratio = |x: usize, z: usize| d.q_xz.get(x, z) / pxz_cond(x, z);
    let line6 = -sum_q(&|x, z| q_ratio(x, z).ln()) + sum_qz(&|z| d.q_z[z].ln()) - sum_qz(&|z| (d.q_z[z] / inst.p_z[z]).ln()) - h_data;
    let reg = kl_finite(&d.q_z, &inst.p_z, "regularization")?;
    let line7 = -sum_q(&|x, z| (d.q_xz.get(x, z) / (d.q_z[z] * pxz_cond(x, z))).ln()) - reg - h_data;
    let line8 = -kl_finite(d.q_xz.data(), d.r_xz.data(), "iae_reconstruction")? - reg - h_data;

    let lhs = data_log_likelihood(inst, &d)?;
    let mut posterior_kl = 0.0;
    for x in 0..nx {
        let post: Vec<f64> = (0..nz).map(|z| d.p_xz.get(x, z) / d.p_x[x]).collect();
        posterior_kl += pd[x] * kl_finite(inst.q_z_given_x.row_slice(x), &post, "posterior_kl")?;
    }
    let lines = [line1, line2, line3, line4, line5, line6, line7, line8];
    Ok(DerivationTrace { lhs, lines, slack: lhs - line1, posterior_kl })
}

/// One row of an oracle sweep report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckRow {
    pub instance_seed: u64,
    pub check_name: &'static str,
    pub residual: f64,
    pub pass: bool,
}

/// Residuals of every identity on one instance.
pub fn instance_checks(seed: u64, inst: &TabularInstance, tolerance: f64) -> Result<Vec<CheckRow>> {
    let d = induce(inst)?;
    let joints = [&d.q_xz, &d.p_xz, &d.r_xz, &d.s_xz];
    let mut consistency = joints.iter().map(|j| (j.sum() - 1.0).abs()).fold(0.0, f64::max);
    for (marg, joint, by_row) in [(&d.r_x, &d.r_xz, true), (&d.s_z, &d.s_xz, false), (&d.q_z, &d.q_xz, false), (&d.p_x, &d.p_xz, true)] {
        let direct = if by_row { row_sums(joint) } else { col_sums(joint) };
        consistency = consistency.max(marg.iter().zip(&direct).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    let elbo = elbo_forms(inst)?;
    let fiae = fiae_forms(inst)?;
    let trace = derivation_trace(inst)?;
    let entries: [(&'static str, f64); 8] = [
        ("induce_consistency", consistency),
        ("elbo_forms", elbo.max_pairwise_diff()),
        ("elbo_bound", (elbo.form_iae - elbo.log_likelihood).max(0.0)),
        ("recon_identity", recon_identity_residual(inst)?),
        ("fiae_forms", fiae.max_pairwise_diff()),
        ("fiae_bounds", fiae.bound_violation()),
        ("derivation_trace", trace.max_consecutive_diff()),
        ("derivation_slack", trace.slack_residual().max(-trace.slack)),
    ];
    Ok(entries
        .into_iter()
        .map(|(name, residual)| CheckRow { instance_seed: seed, check_name: name, residual, pass: residual < tolerance })
        .collect())
}

/// Runs [`instance_checks`] on `trials` random instances with seeds
/// `seed, seed + 1, …`.
pub fn sweep(trials: u64, seed: u64, tolerance: f64) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    for i in 0..trials {
        let s = seed.wrapping_add(i);
        let inst = TabularInstance::random_sized(s)?;
        rows.extend(instance_checks(s, &inst, tolerance)?);
    }
    Ok(rows)
}

pub fn rows_to_csv(rows: &[CheckRow]) -> String {
    let mut out = String::from("instance_seed,check_name,residual,pass\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{:e},{}", r.instance_seed, r.check_name, r.residual, r.pass);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn perm_instance() -> TabularInstance {
        // q(z|x) maps x → (x + 1) mod 3.
        let q = Tensor::from_fn(3, 3, |x, z| if z == (x + 1) % 3 { 1.0 } else { 0.0 });
        let p_cond = Tensor::from_fn(3, 3, |z, x| if z == (x + 1) % 3 { 1.0 } else { 0.0 });
        TabularInstance::new(vec![1.0 / 3.0; 3], q, vec![1.0 / 3.0; 3], p_cond).unwrap()
    }

    #[test]
    fn permutation_encoder() {
        let d = induce(&perm_instance()).unwrap();
        for z in 0..3 {
            assert!((d.q_z[z] - 1.0 / 3.0).abs() < 1e-15);
            let x = (z + 2) % 3;
            assert_eq!(d.q_x_given(z).unwrap()[x], 1.0);
        }
        assert!(d.undefined_z.is_empty());
    }

    #[test]
    fn independent_encoder_has_zero_mi() {
        let mut inst = TabularInstance::random(5, 4, 3).unwrap();
        let pz = inst.p_z.clone();
        inst.q_z_given_x = Tensor::from_fn(4, 3, |_, z| pz[z]);
        let d = induce(&inst).unwrap();
        for x in 0..4 {
            for z in 0..3 {
                assert!((d.q_xz.get(x, z) - inst.p_data[x] * pz[z]).abs() < 1e-15);
            }
        }
        assert!(info_measures(&d.q_xz).unwrap().mi.abs() < 1e-12);
    }

    #[test]
    fn undefined_conditional_is_flagged() {
        let q = Tensor::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let p = Tensor::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let inst = TabularInstance::new(vec![0.5, 0.5], q, vec![0.5, 0.5], p).unwrap();
        let d = induce(&inst).unwrap();
        assert_eq!(d.undefined_z, vec![1]);
        assert!(matches!(d.q_x_given(1), Err(Error::UndefinedConditional(1))));
        assert!(d.q_x_given(0).is_ok());
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl(&[0.25; 4], &[0.25; 4]).unwrap(), 0.0);
        assert!((kl(&[1.0, 0.0], &[0.5, 0.5]).unwrap() - LN_2).abs() < 1e-15);
        let direct = 0.75 * (0.75f64 / 0.5).ln() + 0.25 * (0.25f64 / 0.5).ln();
        assert!((kl(&[0.75, 0.25], &[0.5, 0.5]).unwrap() - direct).abs() < 1e-15);
        assert!((direct - 0.130812).abs() < 1e-6);
        assert_eq!(kl(&[0.5, 0.5], &[1.0, 0.0]).unwrap(), f64::INFINITY);
        assert!(matches!(kl(&[1.0], &[0.5, 0.5]), Err(Error::SupportMismatch(1, 2))));
    }

    #[test]
    fn info_measure_examples() {
        let prod = Tensor::from_fn(2, 3, |x, z| [0.3, 0.7][x] * [0.2, 0.5, 0.3][z]);
        assert!(info_measures(&prod).unwrap().mi.abs() < 1e-12);
        let diag = Tensor::from_fn(4, 4, |x, z| if x == z { 0.25 } else { 0.0 });
        assert!((info_measures(&diag).unwrap().mi - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn tight_case_equals_negative_entropy() {
        let base = TabularInstance::random(7, 5, 3).unwrap();
        let inst = TabularInstance::model_consistent(base.p_z, base.p_x_given_z).unwrap();
        let forms = elbo_forms(&inst).unwrap();
        let h = entropy(&inst.p_data);
        for v in forms.values() {
            assert!((v + h).abs() < 1e-12, "{v} vs {}", -h);
        }
        let f = fiae_forms(&inst).unwrap();
        assert!(f.bound.abs() < 1e-12 && f.target.abs() < 1e-12);
        let t = derivation_trace(&inst).unwrap();
        assert!(t.slack.abs() < 1e-12);
        for l in t.lines {
            assert!((l - t.lhs).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_inversion_gives_zero_recon() {
        let id = Tensor::identity(3);
        let inst = TabularInstance::new(vec![0.2, 0.3, 0.5], id.clone(), vec![0.2, 0.3, 0.5], id).unwrap();
        let t = recon_identity_terms(&inst).unwrap();
        assert_eq!(t.iae_recon, 0.0);
        assert_eq!(t.ae_recon, 0.0);
        assert_eq!(t.h_x_given_z, 0.0);
    }

    #[test]
    fn mismatched_marginals_only() {
        // q(z|x) = p(z|x) but p_data ≠ p(x): the bound is the marginal KL.
        let base = TabularInstance::random(19, 4, 3).unwrap();
        let mut inst = TabularInstance::model_consistent(base.p_z, base.p_x_given_z).unwrap();
        inst.p_data = base.p_data;
        let f = fiae_forms(&inst).unwrap();
        assert!((f.bound - f.target).abs() < 1e-12);
        assert!(f.posterior_kl.abs() < 1e-12);
        assert!(f.target > 0.0);
    }

    #[test]
    fn zero_entries_surface_as_structured_errors() {
        let q = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let p = Tensor::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let inst = TabularInstance::new(vec![0.5, 0.5], q, vec![0.5, 0.5], p).unwrap();
        assert!(matches!(elbo_forms(&inst), Err(Error::InfiniteDivergence(_))));
        assert!(matches!(derivation_trace(&inst), Err(Error::InfiniteDivergence(_))));
    }

    #[test]
    fn random_instances_are_strictly_positive() {
        let inst = TabularInstance::random(3, 6, 4).unwrap();
        assert!(inst.q_z_given_x.data().iter().all(|&p| p >= RANDOM_FLOOR * 0.99));
        assert_eq!(inst, TabularInstance::random(3, 6, 4).unwrap());
        assert!(TabularInstance::new(vec![0.5, 0.6], Tensor::identity(2), vec![0.5, 0.5], Tensor::identity(2)).is_err());
        assert!(TabularInstance::random(1, 65, 2).is_err());
    }

    #[test]
    fn csv_report() {
        let rows = sweep(2, 100, 1e-9).unwrap();
        assert_eq!(rows.len(), 16);
        let csv = rows_to_csv(&rows);
        assert!(csv.starts_with("instance_seed,check_name,residual,pass\n100,induce_consistency,"));
        assert!(rows.iter().all(|r| r.pass), "{csv}");
    }
}
