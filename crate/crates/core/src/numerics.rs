//! Rounding error of the two similarity formulations against a 128-bit reference.

use astro_float::{BigFloat, Consts, RoundingMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::protopart::Formulation;

const PREC: usize = 128;
const RM: RoundingMode = RoundingMode::ToEven;

/// Default distance ranges, as `(lo, hi)`.
pub const DEFAULT_REGIONS: [(f64, f64); 5] = [(0.0, 1e-6), (1e-6, 1e-3), (1e-3, 1.0), (1.0, 10.0), (10.0, 1000.0)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dtype {
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionError {
    pub dtype: Dtype,
    pub lo: f64,
    pub hi: f64,
    pub samples: usize,
    pub mse_original: f64,
    pub mse_reformulated: f64,
    /// `100 * (original - reformulated) / original`
    pub improvement_pct: f64,
}

trait Real: Copy {
    fn from_f64(v: f64) -> Self;
    fn to_big(self) -> BigFloat;
    fn to_f64(self) -> f64;
    fn original(d: Self, eps: Self) -> Self;
    fn reformulated(d: Self, eps: Self) -> Self;
}

macro_rules! impl_real {
    ($t:ty, $from:ident) => {
        impl Real for $t {
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            fn to_big(self) -> BigFloat {
                BigFloat::$from(self, PREC)
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn original(d: Self, eps: Self) -> Self {
                ((d + 1.0) / (d + eps)).ln()
            }
            fn reformulated(d: Self, eps: Self) -> Self {
                (1.0 / (d + eps) + 1.0).ln()
            }
        }
    };
}

impl_real!(f32, from_f32);
impl_real!(f64, from_f64);

fn big_to_f64(v: &BigFloat, cc: &mut Consts) -> f64 {
    if v.is_zero() {
        return 0.0;
    }
    v.format(astro_float::Radix::Dec, RM, cc)
        .ok()
        .and_then(|s| s.parse().ok())
        .expect("finite reference value formats as a decimal")
}

/// One formulation evaluated at 128 bits.
///
/// The two forms are not the same function: the original equals
/// `ln(1 + (1 - eps) / (d + eps))`. Each is therefore checked against its own exact value.
pub fn reference_similarity(d: &BigFloat, eps: &BigFloat, form: Formulation, cc: &mut Consts) -> BigFloat {
    let one = BigFloat::from_u8(1, PREC);
    let den = d.add(eps, PREC, RM);
    let arg = match form {
        Formulation::Original => d.add(&one, PREC, RM).div(&den, PREC, RM),
        Formulation::Reformulated => one.div(&den, PREC, RM).add(&one, PREC, RM),
    };
    arg.ln(PREC, RM, cc)
}

fn region_error<T: Real>(dtype: Dtype, lo: f64, hi: f64, samples: usize, eps: f64, rng: &mut ChaCha8Rng, cc: &mut Consts) -> RegionError {
    let eps_t = T::from_f64(eps);
    let eps_big = eps_t.to_big();
    let (mut se_o, mut se_r) = (0.0, 0.0);
    let width = (hi - lo) / samples as f64;
    for k in 0..samples {
        // One jittered draw per equal-width stratum.
        let d = T::from_f64((lo + (k as f64 + rng.gen::<f64>()) * width).min(hi));
        let db = d.to_big();
        for (form, v, acc) in [
            (Formulation::Original, T::original(d, eps_t), &mut se_o),
            (Formulation::Reformulated, T::reformulated(d, eps_t), &mut se_r),
        ] {
            let exact = reference_similarity(&db, &eps_big, form, cc);
            let err = v.to_f64().to_big().sub(&exact, PREC, RM);
            let e = big_to_f64(&err, cc);
            *acc += e * e;
        }
    }
    let n = samples as f64;
    let (mse_original, mse_reformulated) = (se_o / n, se_r / n);
    let improvement_pct =
        if mse_original == 0.0 { 0.0 } else { 100.0 * (mse_original - mse_reformulated) / mse_original };
    RegionError { dtype, lo, hi, samples, mse_original, mse_reformulated, improvement_pct }
}

/// MSE of both formulations over stratified uniform samples of each region, for `f32`
/// then `f64`.
///
/// Each sample is rounded to the dtype first; the reference is evaluated on that
/// rounded distance and the dtype-rounded `eps`, so only the arithmetic error counts.
pub fn simcheck(regions: &[(f64, f64)], samples: usize, eps: f64, seed: u64) -> Vec<RegionError> {
    let mut cc = Consts::new().expect("constants cache");
    let mut out = Vec::with_capacity(regions.len() * 2);
    for (k, dtype) in [Dtype::F32, Dtype::F64].into_iter().enumerate() {
        for (r, &(lo, hi)) in regions.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((k as u64) << 32 | r as u64));
            out.push(match dtype {
                Dtype::F32 => region_error::<f32>(dtype, lo, hi, samples, eps, &mut rng, &mut cc),
                Dtype::F64 => region_error::<f64>(dtype, lo, hi, samples, eps, &mut rng, &mut cc),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_at_zero() {
        let mut cc = Consts::new().unwrap();
        let eps = BigFloat::from_f64(1e-6, PREC);
        let v = reference_similarity(&BigFloat::from_f64(0.0, PREC), &eps, Formulation::Reformulated, &mut cc);
        assert!((big_to_f64(&v, &mut cc) - 13.815511557963774).abs() < 1e-12);
    }

    #[test]
    fn both_forms_are_close_in_f64() {
        let rows = simcheck(&[(1.0, 10.0)], 200, 1e-6, 7);
        assert_eq!(rows.len(), 2);
        assert!(rows[1].mse_original < 1e-30);
        assert!(rows[1].mse_reformulated < 1e-30);
    }
}
