//! Local vortex criteria built on the velocity gradient tensor.
//!
//! The gradient splits into a symmetric deformation part `A` and an
//! antisymmetric rotation part `B`. Their squared Frobenius norms `a` and `b`
//! drive both the Q-criterion `(b - a) / 2` and the normalized Omega ratio
//! `b / (a + b)`. The same scalars can be written as quadratic forms of the
//! flattened gradient `s`; both a half-weight matrix pair and a
//! corrected pair that reproduces the traces exactly are provided.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowgrid::{FlowGrid, LabelVolume, ScalarField};
use crate::numerics::{gradient_field, GradTensor, GradientField};

/// Default Omega threshold for labelling.
pub const OMEGA_THRESHOLD: f64 = 0.52;
/// Default Q threshold for labelling.
pub const Q_THRESHOLD: f64 = 0.0;

/// Flattened gradient `[du/dx, du/dy, du/dz, dv/dx, ..., dw/dz]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SVector(pub [f64; 9]);

pub fn s_from_gradient(g: &GradTensor) -> SVector {
    let mut s = [0.0; 9];
    for r in 0..3 {
        for c in 0..3 {
            s[3 * r + c] = g.0[r][c];
        }
    }
    SVector(s)
}

/// Symmetric/antisymmetric split of a gradient with the squared norms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TensorPair {
    /// Symmetric (deformation) part.
    pub sym: [[f64; 3]; 3],
    /// Antisymmetric (rotation) part.
    pub anti: [[f64; 3]; 3],
    /// `trace(A^T A)`
    pub a: f64,
    /// `trace(B^T B)`
    pub b: f64,
}

pub fn decompose(g: &GradTensor) -> TensorPair {
    let g = &g.0;
    let mut sym = [[0.0; 3]; 3];
    let mut anti = [[0.0; 3]; 3];
    let (mut a, mut b) = (0.0, 0.0);
    for r in 0..3 {
        for c in 0..3 {
            sym[r][c] = 0.5 * (g[r][c] + g[c][r]);
            anti[r][c] = 0.5 * (g[r][c] - g[c][r]);
            a += sym[r][c] * sym[r][c];
            b += anti[r][c] * anti[r][c];
        }
    }
    TensorPair { sym, anti, a, b }
}

/// Which 9x9 matrices to use for the quadratic-form route to `(a, b)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadForm {
    /// Half-weight matrices. Off-diagonal contributions come out at
    /// half their true weight.
    HalfWeight,
    /// Matrices that reproduce `trace(A^T A)` and `trace(B^T B)`.
    Corrected,
}

pub type Mat9 = [[f64; 9]; 9];

/// The four constant quadratic-form matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadFormMatrices {
    pub m1_half: Mat9,
    pub m2_half: Mat9,
    pub m1_corrected: Mat9,
    pub m2_corrected: Mat9,
}

// s-vector slots holding diagonal gradient entries.
const DIAG_SLOTS: [usize; 3] = [0, 4, 8];
// (upper, lower) slot pairs of mirrored off-diagonal entries: (du/dy, dv/dx), ...
const OFF_PAIRS: [(usize, usize); 3] = [(1, 3), (2, 6), (5, 7)];

impl QuadFormMatrices {
    pub fn new() -> Self {
        let mut m1 = [[0.0; 9]; 9];
        let mut m2 = [[0.0; 9]; 9];
        for d in DIAG_SLOTS {
            m1[d][d] = 1.0;
        }
        for (p, q) in OFF_PAIRS {
            for s in [p, q] {
                m1[s][s] = 0.25;
                m2[s][s] = 0.25;
            }
            m1[p][q] = 0.5;
            m2[p][q] = -0.5;
        }
        let double_off = |m: &Mat9| {
            let mut out = *m;
            for (r, row) in out.iter_mut().enumerate() {
                for (c, val) in row.iter_mut().enumerate() {
                    if !(DIAG_SLOTS.contains(&r) && DIAG_SLOTS.contains(&c)) {
                        *val *= 2.0;
                    }
                }
            }
            out
        };
        Self {
            m1_corrected: double_off(&m1),
            m2_corrected: double_off(&m2),
            m1_half: m1,
            m2_half: m2,
        }
    }

    pub fn pair(&self, form: QuadForm) -> (&Mat9, &Mat9) {
        match form {
            QuadForm::HalfWeight => (&self.m1_half, &self.m2_half),
            QuadForm::Corrected => (&self.m1_corrected, &self.m2_corrected),
        }
    }
}

impl Default for QuadFormMatrices {
    fn default() -> Self {
        Self::new()
    }
}

fn quad(s: &[f64; 9], m: &Mat9) -> f64 {
    let mut acc = 0.0;
    for r in 0..9 {
        if s[r] == 0.0 {
            continue;
        }
        let row: f64 = m[r].iter().zip(s).map(|(a, b)| a * b).sum();
        acc += s[r] * row;
    }
    acc
}

/// `(s M1 s^T, s M2 s^T)` for the chosen matrix pair.
pub fn quadform_ab(s: &SVector, which: QuadForm) -> (f64, f64) {
    let mats = QuadFormMatrices::new();
    let (m1, m2) = mats.pair(which);
    (quad(&s.0, m1), quad(&s.0, m2))
}

pub fn q_value(pair: &TensorPair) -> f64 {
    0.5 * (pair.b - pair.a)
}

pub fn omega_value(pair: &TensorPair, eps: f64) -> f64 {
    pair.b / (pair.a + pair.b + eps)
}

/// Omega guard: `1e-12` times the median of `a + b`, or `1e-20` when that
/// median is zero or there are no points.
pub fn omega_eps(sums: impl IntoIterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = sums.into_iter().collect();
    if v.is_empty() {
        return 1e-20;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    };
    if median > 0.0 {
        1e-12 * median
    } else {
        1e-20
    }
}

/// Criterion fields for one time level.
#[derive(Debug, Clone)]
pub struct CriterionFields {
    pub a: ScalarField,
    pub b: ScalarField,
    pub q: ScalarField,
    pub omega: ScalarField,
    pub eps: f64,
}

impl CriterionFields {
    pub fn from_gradients(grads: &GradientField) -> Self {
        let a = grads.map(|g| decompose(g).a);
        let b = grads.map(|g| decompose(g).b);
        let eps = omega_eps(a.valid_values().zip(b.valid_values()).map(|(a, b)| a + b));
        let q = grads.map(|g| q_value(&decompose(g)));
        let omega = grads.map(|g| omega_value(&decompose(g), eps));
        Self { a, b, q, omega, eps }
    }

    pub fn evaluate(grid: &FlowGrid, t: usize) -> Result<Self> {
        Ok(Self::from_gradients(&gradient_field(grid, t)?))
    }
}

/// `|w - mean(w)|` over the valid points of a scalar vorticity field.
pub fn ivd_field(vorticity: &ScalarField) -> ScalarField {
    let n = vorticity.valid_count();
    let mean = if n == 0 {
        0.0
    } else {
        vorticity.valid_values().sum::<f64>() / n as f64
    };
    let values = vorticity.values().iter().map(|w| (w - mean).abs()).collect();
    ScalarField::new(vorticity.dims(), values, vorticity.mask().to_vec()).expect("IVD of a finite field is finite")
}

/// Vector form: `|w - mean(w)|` with `w` the vorticity vector.
pub fn ivd_field_vector(vorticity: &[ScalarField; 3]) -> Result<ScalarField> {
    let dims = vorticity[0].dims();
    let mask = vorticity[0].mask();
    if vorticity.iter().any(|f| f.dims() != dims || f.mask() != mask) {
        return Err(Error::Validation("vorticity components disagree in shape or mask".into()));
    }
    let n = vorticity[0].valid_count();
    let means = vorticity.each_ref().map(|f| {
        if n == 0 {
            0.0
        } else {
            f.valid_values().sum::<f64>() / n as f64
        }
    });
    let values = (0..dims.len())
        .map(|idx| {
            (0..3)
                .map(|c| {
                    let d = vorticity[c].values()[idx] - means[c];
                    d * d
                })
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    ScalarField::new(dims, values, mask.to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    Greater,
    Less,
}

/// Labels every valid point whose value compares strictly against `thr`.
pub fn threshold_label(field: &ScalarField, thr: f64, mode: ThresholdMode) -> LabelVolume {
    let labels = field
        .values()
        .iter()
        .zip(field.mask())
        .map(|(&v, &m)| {
            m && match mode {
                ThresholdMode::Greater => v > thr,
                ThresholdMode::Less => v < thr,
            }
        })
        .collect();
    let op = match mode {
        ThresholdMode::Greater => ">",
        ThresholdMode::Less => "<",
    };
    LabelVolume::new(field.dims(), labels, field.mask().to_vec(), format!("value {op} {thr}"))
        .expect("field and labels share dims")
}

/// Named scalar criterion used for labelling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Q,
    Omega,
    Ivd,
}

impl Criterion {
    pub fn default_threshold(self) -> Option<f64> {
        match self {
            Criterion::Q => Some(Q_THRESHOLD),
            Criterion::Omega => Some(OMEGA_THRESHOLD),
            Criterion::Ivd => None,
        }
    }

    /// Evaluates the criterion over time level `t`.
    pub fn field(self, grid: &FlowGrid, t: usize) -> Result<ScalarField> {
        match self {
            Criterion::Q => Ok(CriterionFields::evaluate(grid, t)?.q),
            Criterion::Omega => Ok(CriterionFields::evaluate(grid, t)?.omega),
            Criterion::Ivd => ivd_field_vector(&crate::numerics::vorticity_field(grid, t)?),
        }
    }

    /// Thresholds the criterion field with the `>` comparison.
    pub fn label(self, grid: &FlowGrid, t: usize, thr: f64) -> Result<(ScalarField, LabelVolume)> {
        let field = self.field(grid, t)?;
        let labels = threshold_label(&field, thr, ThresholdMode::Greater);
        let source = format!("{self} > {thr} at t={t}");
        let labels = LabelVolume::new(labels.dims(), labels.labels().to_vec(), labels.valid().to_vec(), source)?;
        Ok((field, labels))
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Criterion::Q => "q",
            Criterion::Omega => "omega",
            Criterion::Ivd => "ivd",
        })
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "q" => Ok(Criterion::Q),
            "omega" => Ok(Criterion::Omega),
            "ivd" => Ok(Criterion::Ivd),
            other => Err(Error::Usage(format!("unknown criterion {other:?}, expected q, omega or ivd"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowgrid::Dims;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn solid_body() -> GradTensor {
        GradTensor([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0; 3]])
    }

    fn shear() -> GradTensor {
        GradTensor([[0.0, 1.0, 0.0], [0.0; 3], [0.0; 3]])
    }

    /// Sum of squares of the sym/antisym parts, written out by hand.
    fn direct_ab(g: &GradTensor) -> (f64, f64) {
        let g = &g.0;
        let (mut a, mut b) = (0.0, 0.0);
        for r in 0..3 {
            for c in 0..3 {
                let s = (g[r][c] + g[c][r]) / 2.0;
                let w = (g[r][c] - g[c][r]) / 2.0;
                a += s * s;
                b += w * w;
            }
        }
        (a, b)
    }

    #[test]
    fn s_vector_ordering() {
        assert_eq!(s_from_gradient(&GradTensor::ZERO).0, [0.0; 9]);
        assert_eq!(s_from_gradient(&solid_body()).0, [0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(s_from_gradient(&shear()).0, [0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn decompose_examples() {
        let z = decompose(&GradTensor::ZERO);
        assert_eq!((z.a, z.b), (0.0, 0.0));
        let sb = decompose(&solid_body());
        assert_eq!((sb.a, sb.b), (0.0, 2.0));
        let sh = decompose(&shear());
        assert_eq!((sh.a, sh.b), (0.5, 0.5));
    }

    #[test]
    fn quadform_examples() {
        let mut e1 = [0.0; 9];
        e1[0] = 1.0;
        assert_eq!(quadform_ab(&SVector(e1), QuadForm::HalfWeight), (1.0, 0.0));
        assert_eq!(quadform_ab(&SVector(e1), QuadForm::Corrected), (1.0, 0.0));

        let s = s_from_gradient(&solid_body());
        assert_eq!(quadform_ab(&s, QuadForm::HalfWeight), (0.0, 1.0));
        assert_eq!(quadform_ab(&s, QuadForm::Corrected), (0.0, 2.0));
    }

    #[test]
    fn half_weight_matrices_match_layout() {
        let m = QuadFormMatrices::new();
        assert_eq!(m.m1_half[1][3], 0.5);
        assert_eq!(m.m1_half[3][1], 0.0);
        assert_eq!(m.m2_half[5][7], -0.5);
        assert_eq!(m.m2_half[0][0], 0.0);
        assert_eq!(m.m1_half[8][8], 1.0);
        assert_eq!(m.m1_half[6][6], 0.25);
        assert_eq!(m.m1_corrected[6][6], 0.5);
        assert_eq!(m.m2_corrected[2][6], -1.0);
        assert_eq!(m.m1_corrected[4][4], 1.0);
    }

    #[test]
    fn corrected_quadform_matches_traces_on_random_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let mut g = [[0.0; 3]; 3];
            for row in &mut g {
                for val in row.iter_mut() {
                    *val = rng.gen_range(-10.0..10.0);
                }
            }
            let g = GradTensor(g);
            let (a, b) = direct_ab(&g);
            let (qa, qb) = quadform_ab(&s_from_gradient(&g), QuadForm::Corrected);
            assert!((qa - a).abs() <= 1e-12 * a.max(1.0));
            assert!((qb - b).abs() <= 1e-12 * b.max(1.0));
            let pair = decompose(&g);
            assert!((pair.a - a).abs() <= 1e-12 * a.max(1.0));
        }
    }

    #[test]
    fn q_and_omega_examples() {
        let sb = decompose(&solid_body());
        assert_eq!(q_value(&sb), 1.0);
        assert!((omega_value(&sb, 1e-12) - 1.0).abs() < 1e-11);
        let sh = decompose(&shear());
        assert_eq!(q_value(&sh), 0.0);
        assert!((omega_value(&sh, 1e-12) - 0.5).abs() < 1e-12);
        let z = decompose(&GradTensor::ZERO);
        assert_eq!(q_value(&z), 0.0);
        assert_eq!(omega_value(&z, 1e-20), 0.0);
    }

    #[test]
    fn eps_guard() {
        assert_eq!(omega_eps([0.0, 0.0, 0.0]), 1e-20);
        assert_eq!(omega_eps([]), 1e-20);
        assert_eq!(omega_eps([1.0, 3.0, 2.0]), 2e-12);
        assert_eq!(omega_eps([1.0, 3.0, 2.0, 4.0]), 2.5e-12);
    }

    fn field(values: Vec<f64>) -> ScalarField {
        let n = values.len();
        ScalarField::new(Dims::new(n, 1, 1), values, vec![true; n]).unwrap()
    }

    #[test]
    fn ivd_examples() {
        let c = ivd_field(&field(vec![3.5; 6]));
        assert!(c.values().iter().all(|&v| v == 0.0));
        let pm = ivd_field(&field(vec![1.0, -1.0, 1.0, -1.0]));
        assert!(pm.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn ivd_ignores_masked_points() {
        let f = ScalarField::new(Dims::new(3, 1, 1), vec![1.0, 3.0, 100.0], vec![true, true, false]).unwrap();
        let ivd = ivd_field(&f);
        assert_eq!(ivd.values(), &[1.0, 1.0, 0.0]);
    }

    #[test]
    fn threshold_examples() {
        let f = ScalarField::new(Dims::new(4, 1, 1), vec![0.1, 0.5, 0.9, 0.0], vec![true, true, true, false]).unwrap();
        let all = threshold_label(&f, -1.0, ThresholdMode::Greater);
        assert_eq!(all.labels(), &[true, true, true, false]);
        let none = threshold_label(&f, f64::INFINITY, ThresholdMode::Greater);
        assert_eq!(none.count(), 0);
        let low = threshold_label(&f, 0.5, ThresholdMode::Less);
        assert_eq!(low.labels(), &[true, false, false, false]);
    }

    #[test]
    fn criterion_names() {
        assert_eq!("omega".parse::<Criterion>().unwrap(), Criterion::Omega);
        assert!(matches!("lambda2".parse::<Criterion>(), Err(Error::Usage(_))));
    }

    proptest! {
        #[test]
        fn decomposition_invariants(entries in proptest::array::uniform9(-1e3f64..1e3)) {
            let g = GradTensor([
                [entries[0], entries[1], entries[2]],
                [entries[3], entries[4], entries[5]],
                [entries[6], entries[7], entries[8]],
            ]);
            let p = decompose(&g);
            for r in 0..3 {
                for c in 0..3 {
                    prop_assert_eq!(p.sym[r][c], p.sym[c][r]);
                    prop_assert_eq!(p.anti[r][c], -p.anti[c][r]);
                    let scale = g.0[r][c].abs().max(g.0[c][r].abs()).max(1.0);
                    prop_assert!((p.sym[r][c] + p.anti[r][c] - g.0[r][c]).abs() <= 1e-14 * scale);
                }
            }
            prop_assert!(p.a >= 0.0 && p.b >= 0.0);
        }

        #[test]
        fn omega_increases_with_b(a in 0.0f64..10.0, b in 0.0f64..10.0, db in 1e-3f64..10.0) {
            let lo = TensorPair { sym: [[0.0; 3]; 3], anti: [[0.0; 3]; 3], a, b };
            let hi = TensorPair { b: b + db, ..lo };
            prop_assert!(omega_value(&hi, 1e-12) > omega_value(&lo, 1e-12));
            prop_assert!(omega_value(&hi, 1e-12) < 1.0);
        }

        #[test]
        fn ivd_shift_invariant(vals in proptest::collection::vec(-5.0f64..5.0, 2..40), shift in -10.0f64..10.0) {
            let base = ivd_field(&field(vals.clone()));
            let moved = ivd_field(&field(vals.iter().map(|v| v + shift).collect()));
            for (x, y) in base.values().iter().zip(moved.values()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }
}
