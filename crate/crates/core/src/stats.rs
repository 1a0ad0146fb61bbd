//! Standard normal distribution helpers used for Wald-type inference and
//! the Gaussian copula.

// Reference coefficients are written with their full published digits.
#![allow(clippy::excessive_precision)]

use crate::num::{cast, Scalar};

/// Standard normal CDF, double-precision rational approximation
/// (Graeme West's CND, accurate to ~1e-15 over the full range).
pub fn normal_cdf<F: Scalar>(x: F) -> F {
    let x = x.to_f64().unwrap();
    cast(normal_cdf_f64(x))
}

fn normal_cdf_f64(x: f64) -> f64 {
    let xabs = x.abs();
    let p = if xabs > 37.0 {
        0.0
    } else {
        let e = (-xabs * xabs / 2.0).exp();
        if xabs < 7.071_067_811_865_475 {
            let mut b = 3.52624965998911e-2 * xabs + 0.700383064443688;
            b = b * xabs + 6.37396220353165;
            b = b * xabs + 33.912866078383;
            b = b * xabs + 112.079291497871;
            b = b * xabs + 221.213596169931;
            b = b * xabs + 220.206867912376;
            let mut c = 8.83883476483184e-2 * xabs + 1.75566716318264;
            c = c * xabs + 16.064177579207;
            c = c * xabs + 86.7807322029461;
            c = c * xabs + 296.564248779674;
            c = c * xabs + 637.333633378831;
            c = c * xabs + 793.826512519948;
            c = c * xabs + 440.413735824752;
            e * b / c
        } else {
            let mut b = xabs + 0.65;
            b = xabs + 4.0 / b;
            b = xabs + 3.0 / b;
            b = xabs + 2.0 / b;
            b = xabs + 1.0 / b;
            e / b / 2.506628274631
        }
    };
    if x >= 0.0 {
        1.0 - p
    } else {
        p
    }
}

/// Standard normal quantile function (Wichura's PPND16 algorithm,
/// accurate to ~1e-15 for p in (0, 1)).
///
/// Returns `-inf` at `p = 0` and `+inf` at `p = 1`; NaN outside `[0, 1]`.
pub fn normal_quantile<F: Scalar>(p: F) -> F {
    let p = p.to_f64().unwrap();
    cast(normal_quantile_f64(p))
}

fn normal_quantile_f64(p: f64) -> f64 {
    if p.is_nan() || !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }

    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = poly(
            r,
            &[
                3.387_132_872_796_366_608,
                1.331_416_678_917_843_774_5e2,
                1.971_590_950_306_551_442_7e3,
                1.373_169_376_550_946_112_5e4,
                4.592_195_393_154_987_145_7e4,
                6.726_577_092_700_870_085_3e4,
                3.343_057_558_358_812_810_5e4,
                2.509_080_928_730_122_672_7e3,
            ],
        );
        let den = poly(
            r,
            &[
                1.0,
                4.231_333_070_160_091_125_2e1,
                6.871_870_074_920_579_083e2,
                5.394_196_021_424_751_107_7e3,
                2.121_379_430_158_659_586_7e4,
                3.930_789_580_009_271_061e4,
                2.872_908_573_572_194_267_4e4,
                5.226_495_278_852_854_561e3,
            ],
        );
        return q * num / den;
    }

    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        let r = r - 1.6;
        let num = poly(
            r,
            &[
                1.423_437_110_749_683_577_3,
                4.630_337_846_156_545_295_9,
                5.769_497_221_460_691_405_5,
                3.647_848_324_763_204_605,
                1.270_458_252_452_368_382_6,
                2.417_807_251_774_506_117_7e-1,
                2.272_384_498_926_918_458_3e-2,
                7.745_450_142_783_414_076_4e-4,
            ],
        );
        let den = poly(
            r,
            &[
                1.0,
                2.053_191_626_637_758_821_9,
                1.676_384_830_183_803_849_4,
                6.897_673_349_851_000_045_5e-1,
                1.481_039_764_274_800_745_9e-1,
                1.519_866_656_361_645_719_7e-2,
                5.475_938_084_995_344_946e-4,
                1.050_750_071_644_416_843_2e-9,
            ],
        );
        num / den
    } else {
        let r = r - 5.0;
        let num = poly(
            r,
            &[
                6.657_904_643_501_103_777_2,
                5.463_784_911_164_114_369_9,
                1.784_826_539_917_291_335_8,
                2.965_605_718_285_048_912_3e-1,
                2.653_218_952_657_612_309_3e-2,
                1.242_660_947_388_078_438_6e-3,
                2.711_555_568_743_487_578_15e-5,
                2.010_334_399_292_288_132_65e-7,
            ],
        );
        let den = poly(
            r,
            &[
                1.0,
                5.998_322_065_558_879_376_9e-1,
                1.369_298_809_227_358_053_1e-1,
                1.487_536_129_085_061_485_25e-2,
                7.868_691_311_456_132_591e-4,
                1.846_318_317_510_054_681_8e-5,
                1.421_511_758_316_445_888_7e-7,
                2.044_263_103_389_939_785_64e-15,
            ],
        );
        num / den
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

#[inline]
fn poly(x: f64, coeffs: &[f64]) -> f64 {
    // coeffs[0] + coeffs[1] x + coeffs[2] x^2 + ...
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

/// Mean of a slice; zero for empty input.
pub fn mean<F: Scalar>(xs: &[F]) -> F {
    if xs.is_empty() {
        return F::zero();
    }
    xs.iter().copied().sum::<F>() / cast(xs.len() as f64)
}

/// Two-sided empirical quantile via linear interpolation between order
/// statistics (type-7 definition). `p` in [0, 1]; input need not be sorted.
pub fn quantile<F: Scalar>(xs: &[F], p: F) -> F {
    assert!(!xs.is_empty(), "quantile of empty slice");
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-NaN values"));
    quantile_sorted(&sorted, p)
}

/// Type-7 quantile assuming `sorted` is ascending.
pub fn quantile_sorted<F: Scalar>(sorted: &[F], p: F) -> F {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p * cast_len::<F>(n - 1);
    let lo = h.floor();
    let idx = lo.to_usize().unwrap_or(0).min(n - 1);
    let hi = (idx + 1).min(n - 1);
    let frac = h - lo;
    sorted[idx] + frac * (sorted[hi] - sorted[idx])
}

#[inline]
fn cast_len<F: Scalar>(n: usize) -> F {
    cast(n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_function_matches_reference_values() {
        // Reference values from standard normal tables.
        assert!((normal_quantile_f64(0.975) - 1.959963984540054).abs() < 1e-12);
        assert!((normal_quantile_f64(0.999) - 3.090232306167813).abs() < 1e-12);
        assert!((normal_quantile_f64(0.95) - 1.6448536269514722).abs() < 1e-12);
        assert_eq!(normal_quantile_f64(0.5), 0.0);
        assert!((normal_quantile_f64(0.025) + 1.959963984540054).abs() < 1e-12);
    }

    #[test]
    fn cdf_matches_reference_values() {
        assert!((normal_cdf_f64(0.0) - 0.5).abs() < 1e-15);
        assert!((normal_cdf_f64(1.0) - 0.8413447460685429).abs() < 1e-12);
        assert!((normal_cdf_f64(2.0) - 0.9772498680518208).abs() < 1e-12);
        assert!((normal_cdf_f64(-1.0) - 0.15865525393145707).abs() < 1e-12);
        assert!((normal_cdf_f64(1.959963984540054) - 0.975).abs() < 1e-12);
    }

    #[test]
    fn cdf_quantile_round_trip() {
        for i in 1..999 {
            let p = i as f64 / 1000.0;
            let z = normal_quantile_f64(p);
            assert!((normal_cdf_f64(z) - p).abs() < 1e-12, "p = {p}");
        }
    }

    #[test]
    fn quantile_bounds() {
        assert_eq!(normal_quantile_f64(0.0), f64::NEG_INFINITY);
        assert_eq!(normal_quantile_f64(1.0), f64::INFINITY);
        assert!(normal_quantile_f64(-0.1).is_nan());
    }

    #[test]
    fn empirical_quantile_interpolates() {
        let xs = vec![1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&xs, 0.0), 1.0);
        assert_eq!(quantile(&xs, 1.0), 4.0);
        assert_eq!(quantile(&xs, 0.5), 2.5);
    }
}
