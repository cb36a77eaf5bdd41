//! Two canonical structural causal models with Gaussian noise, binning into
//! finite tables, and machine checks of the redundancy claims about them.
//!
//! * FIIF: `Y = C`, `S = C + N`. The spurious feature carries no unique
//!   information about `Y` beyond `C`; whatever it knows is redundant.
//! * PIIF: `Y = sign(C + N_c)`, `S = Y + N_s`. Depending on the two noise
//!   levels either feature may carry more unique information.

mod quantize;

pub use quantize::{bin_continuous, quantize, Column};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::{mutual_information, Axis, DistError, JointDistribution};
use crate::pid::{compute_pid, PidError, PidResult, DEFAULT_TOL};

#[derive(Debug, Error)]
pub enum ScmError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Pid(#[from] PidError),
}

pub type Result<T> = std::result::Result<T, ScmError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Regime {
    Fiif,
    Piif,
}

/// Law of the discrete cause (and, for FIIF, of the label).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YLaw {
    /// Fair coin on `{-1, +1}`.
    BinarySigned,
    /// Uniform on `{-1, 0, +1}`.
    Ternary,
}

impl YLaw {
    fn support(self) -> &'static [i64] {
        match self {
            YLaw::BinarySigned => &[-1, 1],
            YLaw::Ternary => &[-1, 0, 1],
        }
    }

    fn draw(self, rng: &mut impl Rng) -> i64 {
        let s = self.support();
        s[rng.random_range(0..s.len())]
    }

    /// Nearest label to a real value; ties break toward the larger label.
    fn snap(self, x: f64) -> i64 {
        match self {
            YLaw::BinarySigned => {
                if x >= 0.0 {
                    1
                } else {
                    -1
                }
            }
            YLaw::Ternary => x.round().clamp(-1.0, 1.0) as i64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScmConfig {
    pub regime: Regime,
    /// Noise std of `S = C + N` (FIIF).
    pub sigma_n: f64,
    /// Noise std of `S = Y + N_s` (PIIF).
    pub sigma_ns: f64,
    /// Noise std of `Y = sign(C + N_c)` (PIIF).
    pub sigma_nc: f64,
    pub y_law: YLaw,
    pub n_samples: usize,
    pub seed: u64,
    pub n_bins: usize,
}

impl ScmConfig {
    pub fn fiif(sigma_n: f64) -> Self {
        Self { regime: Regime::Fiif, sigma_n, ..Self::default() }
    }

    pub fn piif(sigma_nc: f64, sigma_ns: f64) -> Self {
        Self { regime: Regime::Piif, sigma_nc, sigma_ns, ..Self::default() }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("sigma_n", self.sigma_n), ("sigma_ns", self.sigma_ns), ("sigma_nc", self.sigma_nc)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ScmError::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.n_bins < 2 {
            return Err(ScmError::Config(format!("n_bins must be at least 2, got {}", self.n_bins)));
        }
        if self.n_samples < 1000 {
            return Err(ScmError::Config(format!("n_samples must be at least 1000, got {}", self.n_samples)));
        }
        Ok(())
    }
}

impl Default for ScmConfig {
    fn default() -> Self {
        Self {
            regime: Regime::Fiif,
            sigma_n: 0.5,
            sigma_ns: 1.0,
            sigma_nc: 1.0,
            y_law: YLaw::BinarySigned,
            n_samples: 100_000,
            seed: 0,
            n_bins: 16,
        }
    }
}

/// Raw draws. `noise` is `N` (FIIF) or `N_s` (PIIF); `noise_c` is `N_c`
/// and stays empty for FIIF.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub y: Vec<i64>,
    pub c: Vec<i64>,
    pub s: Vec<f64>,
    pub noise: Vec<f64>,
    pub noise_c: Vec<f64>,
}

impl Samples {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Table with `A = S` (binned) and `B = C`.
    pub fn table_sc(&self, n_bins: usize) -> Result<JointDistribution> {
        quantize(Column::Discrete(&self.y), Column::Continuous(&self.s), Column::Discrete(&self.c), n_bins)
    }

    /// Permutes the labels across samples, destroying every dependence on `Y`.
    pub fn shuffle_labels(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.y.shuffle(&mut rng);
    }
}

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn gen_fiif(cfg: &ScmConfig) -> Result<Samples> {
    cfg.validate()?;
    if cfg.regime != Regime::Fiif {
        return Err(ScmError::Config("gen_fiif needs regime FIIF".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n_samples;
    let mut out = Samples {
        y: Vec::with_capacity(n),
        c: Vec::with_capacity(n),
        s: Vec::with_capacity(n),
        noise: Vec::with_capacity(n),
        noise_c: Vec::new(),
    };
    for _ in 0..n {
        let c = cfg.y_law.draw(&mut rng);
        let e = cfg.sigma_n * normal(&mut rng);
        out.c.push(c);
        out.y.push(c);
        out.noise.push(e);
        out.s.push(c as f64 + e);
    }
    Ok(out)
}

pub fn gen_piif(cfg: &ScmConfig) -> Result<Samples> {
    cfg.validate()?;
    if cfg.regime != Regime::Piif {
        return Err(ScmError::Config("gen_piif needs regime PIIF".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n_samples;
    let mut out = Samples {
        y: Vec::with_capacity(n),
        c: Vec::with_capacity(n),
        s: Vec::with_capacity(n),
        noise: Vec::with_capacity(n),
        noise_c: Vec::with_capacity(n),
    };
    for _ in 0..n {
        let c = cfg.y_law.draw(&mut rng);
        let ec = cfg.sigma_nc * normal(&mut rng);
        let es = cfg.sigma_ns * normal(&mut rng);
        let y = cfg.y_law.snap(c as f64 + ec);
        out.c.push(c);
        out.y.push(y);
        out.noise_c.push(ec);
        out.noise.push(es);
        out.s.push(y as f64 + es);
    }
    Ok(out)
}

/// Outcome of one lemma check. `pass` is recomputed from `measured` and
/// `thresholds` by [`LemmaReport::evaluate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub lemma_id: u8,
    pub measured: Vec<(String, f64)>,
    pub thresholds: Vec<(String, f64)>,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl LemmaReport {
    pub fn measured(&self, key: &str) -> Option<f64> {
        self.measured.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    pub fn threshold(&self, key: &str) -> Option<f64> {
        self.thresholds.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    /// Re-derives the pass flag from the recorded numbers.
    pub fn evaluate(&self) -> bool {
        let m = |k: &str| self.measured(k).unwrap_or(f64::NAN);
        let t = |k: &str| self.threshold(k).unwrap_or(f64::NAN);
        match self.lemma_id {
            1 => m("uni_s_given_c") <= t("eps_uni") && m("red") >= t("eps_red"),
            2 => {
                m("s_dominant.uni_s_given_c") - m("s_dominant.uni_c_given_s") >= t("margin")
                    && m("c_dominant.uni_c_given_s") - m("c_dominant.uni_s_given_c") >= t("margin")
            }
            3 => m("max_excess_over_bound") <= t("bound_slack") && m("max_increase") <= t("monotone_slack"),
            _ => false,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lemma1Thresholds {
    pub eps_uni: f64,
    pub eps_red: f64,
}

impl Default for Lemma1Thresholds {
    fn default() -> Self {
        Self { eps_uni: 0.02, eps_red: 0.2 }
    }
}

/// PID of `(Y; S, C)` for a FIIF draw. Optionally shuffles labels first, a
/// control under which every component should vanish.
pub fn fiif_pid(cfg: &ScmConfig, shuffle_labels: bool) -> Result<(PidResult, f64)> {
    let mut samples = gen_fiif(cfg)?;
    if shuffle_labels {
        samples.shuffle_labels(cfg.seed ^ 0x5eed);
    }
    let table = samples.table_sc(cfg.n_bins)?;
    let i_ys = mutual_information(&table, Axis::Y, Axis::A)?;
    Ok((compute_pid(&table, DEFAULT_TOL)?, i_ys))
}

pub fn verify_lemma1(cfg: &ScmConfig, th: Lemma1Thresholds) -> Result<LemmaReport> {
    verify_lemma1_with(cfg, th, false)
}

pub fn verify_lemma1_with(cfg: &ScmConfig, th: Lemma1Thresholds, shuffle_labels: bool) -> Result<LemmaReport> {
    if cfg.regime != Regime::Fiif {
        return Err(ScmError::Config("lemma 1 needs regime FIIF".into()));
    }
    let (pid, i_ys) = fiif_pid(cfg, shuffle_labels)?;
    let mut report = LemmaReport {
        lemma_id: 1,
        measured: vec![
            ("uni_s_given_c".into(), pid.unique_a),
            ("uni_c_given_s".into(), pid.unique_b),
            ("red".into(), pid.redundancy),
            ("syn".into(), pid.synergy),
            ("i_y_s".into(), i_ys),
            ("sigma_n".into(), cfg.sigma_n),
        ],
        thresholds: vec![("eps_uni".into(), th.eps_uni), ("eps_red".into(), th.eps_red)],
        pass: false,
        notes: Vec::new(),
    };
    if shuffle_labels {
        report.notes.push("labels shuffled across samples".into());
    }
    if i_ys < th.eps_red {
        report.notes.push(format!(
            "vacuous regime: I(Y;S) = {i_ys:.4} bits is below eps_red, so no redundancy can be shown"
        ));
    }
    report.pass = report.evaluate();
    Ok(report)
}

/// Runs one PIIF config and returns `(Uni(Y;S|C), Uni(Y;C|S), I(Y;S), I(Y;C))`.
pub fn piif_uniques(cfg: &ScmConfig) -> Result<[f64; 4]> {
    let table = gen_piif(cfg)?.table_sc(cfg.n_bins)?;
    let pid = compute_pid(&table, DEFAULT_TOL)?;
    Ok([
        pid.unique_a,
        pid.unique_b,
        mutual_information(&table, Axis::Y, Axis::A)?,
        mutual_information(&table, Axis::Y, Axis::B)?,
    ])
}

pub fn verify_lemma2(cfg_pair: (&ScmConfig, &ScmConfig), margin: f64) -> Result<LemmaReport> {
    let (first, second) = cfg_pair;
    for c in [first, second] {
        if c.regime != Regime::Piif {
            return Err(ScmError::Config("lemma 2 needs regime PIIF".into()));
        }
    }
    let (s_dom, c_dom) = match (first.sigma_nc > first.sigma_ns, second.sigma_nc > second.sigma_ns) {
        (true, false) => (first, second),
        (false, true) => (second, first),
        _ => return Err(ScmError::Config("lemma 2 needs two configs with opposite noise orderings".into())),
    };
    let mut measured = Vec::new();
    for (tag, cfg) in [("s_dominant", s_dom), ("c_dominant", c_dom)] {
        let [us, uc, is, ic] = piif_uniques(cfg)?;
        measured.push((format!("{tag}.uni_s_given_c"), us));
        measured.push((format!("{tag}.uni_c_given_s"), uc));
        measured.push((format!("{tag}.i_y_s"), is));
        measured.push((format!("{tag}.i_y_c"), ic));
        measured.push((format!("{tag}.sigma_nc"), cfg.sigma_nc));
        measured.push((format!("{tag}.sigma_ns"), cfg.sigma_ns));
    }
    let mut report = LemmaReport {
        lemma_id: 2,
        measured,
        thresholds: vec![("margin".into(), margin)],
        pass: false,
        notes: Vec::new(),
    };
    report.pass = report.evaluate();
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub sigma: f64,
    pub mi_bits: f64,
    pub bound_bits: f64,
}

/// Capacity of a Gaussian channel at unit signal power.
pub fn gaussian_bound(sigma: f64) -> f64 {
    0.5 * (1.0 + 1.0 / (sigma * sigma)).log2()
}

/// Empirical `I(Y; Y + N)` for `Y` a fair coin on `{-1, +1}`, one point per
/// noise level. All levels reuse the same base draws so the curve is smooth.
pub fn mi_noise_curve(sigmas: &[f64], cfg: &ScmConfig) -> Result<Vec<CurvePoint>> {
    if cfg.y_law != YLaw::BinarySigned {
        return Err(ScmError::Config("the noise curve needs y_law = binary_signed".into()));
    }
    sigmas
        .iter()
        .map(|&sigma| {
            let c = ScmConfig { regime: Regime::Fiif, sigma_n: sigma, ..cfg.clone() };
            let table = gen_fiif(&c)?.table_sc(c.n_bins)?;
            Ok(CurvePoint { sigma, mi_bits: mutual_information(&table, Axis::Y, Axis::A)?, bound_bits: gaussian_bound(sigma) })
        })
        .collect()
}

pub const BOUND_SLACK: f64 = 0.05;
pub const MONOTONE_SLACK: f64 = 0.02;

pub fn verify_lemma3(sigmas: &[f64], cfg: &ScmConfig) -> Result<(LemmaReport, Vec<CurvePoint>)> {
    let mut sorted = sigmas.to_vec();
    sorted.sort_by(f64::total_cmp);
    let curve = mi_noise_curve(&sorted, cfg)?;
    let excess = curve.iter().map(|p| p.mi_bits - p.bound_bits).fold(f64::NEG_INFINITY, f64::max);
    let increase = curve.windows(2).map(|w| w[1].mi_bits - w[0].mi_bits).fold(0.0, f64::max);
    let mut report = LemmaReport {
        lemma_id: 3,
        measured: vec![("max_excess_over_bound".into(), excess), ("max_increase".into(), increase)],
        thresholds: vec![("bound_slack".into(), BOUND_SLACK), ("monotone_slack".into(), MONOTONE_SLACK)],
        pass: false,
        notes: Vec::new(),
    };
    report.pass = report.evaluate();
    Ok((report, curve))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(cfg: ScmConfig) -> ScmConfig {
        ScmConfig { n_samples: 20_000, ..cfg }
    }

    #[test]
    fn config_validation() {
        assert!(ScmConfig::fiif(0.0).validate().is_err());
        assert!(ScmConfig { n_bins: 1, ..ScmConfig::default() }.validate().is_err());
        assert!(ScmConfig { n_samples: 999, ..ScmConfig::default() }.validate().is_err());
        assert!(gen_piif(&ScmConfig::fiif(1.0)).is_err());
        assert!(gen_fiif(&ScmConfig::piif(1.0, 1.0)).is_err());
    }

    #[test]
    fn fiif_structure() {
        let s = gen_fiif(&small(ScmConfig::fiif(0.7))).unwrap();
        assert_eq!(s.len(), 20_000);
        assert_eq!(s.y, s.c);
        for i in 0..s.len() {
            let scale = (s.c[i] as f64).abs() + s.noise[i].abs();
            assert!((s.s[i] - s.c[i] as f64 - s.noise[i]).abs() <= 2.0 * f64::EPSILON * scale);
        }
    }

    #[test]
    fn piif_labels_in_alphabet() {
        let cfg = ScmConfig { y_law: YLaw::Ternary, ..small(ScmConfig::piif(0.3, 0.3)) };
        let s = gen_piif(&cfg).unwrap();
        assert!(s.y.iter().all(|y| [-1, 0, 1].contains(y)));
        assert!(s.c.iter().all(|c| [-1, 0, 1].contains(c)));
    }

    #[test]
    fn bound_values() {
        assert_eq!(gaussian_bound(1.0), 0.5);
        assert!((gaussian_bound(0.01) - 6.643_928).abs() < 1e-5);
        assert!((gaussian_bound(10.0) - 0.007_177_6).abs() < 1e-6);
    }

    #[test]
    fn report_pass_is_consistent() {
        let r = verify_lemma1(&small(ScmConfig::fiif(0.5)), Lemma1Thresholds::default()).unwrap();
        assert_eq!(r.pass, r.evaluate());
        let parsed: LemmaReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(parsed, r);
    }
}
