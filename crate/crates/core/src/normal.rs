//! Standard normal quantile function.
//!
//! Wichura's AS 241 (`PPND16`) rational approximations; relative accuracy
//! is about 1e-16 over the whole open unit interval, which comfortably covers
//! the 1e-9 absolute accuracy the Brownian sampler needs.

use crate::error::{Error, Result};

const SPLIT_CENTRAL: f64 = 0.425;
const SPLIT_TAIL: f64 = 5.0;
const CONST_CENTRAL: f64 = 0.180625;
const CONST_INTERMEDIATE: f64 = 1.6;

const A: [f64; 8] = [
    3.387_132_872_796_366_608,
    133.141_667_891_784_377_45,
    1_971.590_950_306_551_442_7,
    13_731.693_765_509_461_125,
    45_921.953_931_549_871_457,
    67_265.770_927_008_700_853,
    33_430.575_583_588_128_105,
    2_509.080_928_730_122_672_7,
];
const B: [f64; 8] = [
    1.0,
    42.313_330_701_600_911_252,
    687.187_007_492_057_908_3,
    5_394.196_021_424_751_107_7,
    21_213.794_301_586_595_867,
    39_307.895_800_092_710_61,
    28_729.085_735_721_942_674,
    5_226.495_278_852_545_925,
];
const C: [f64; 8] = [
    1.423_437_110_749_683_577_34,
    4.630_337_846_156_545_295_9,
    5.769_497_221_460_691_405_5,
    3.647_848_324_763_204_605_04,
    1.270_458_252_452_368_382_58,
    0.241_780_725_177_450_611_77,
    0.022_723_844_989_269_184_583_3,
    7.745_450_142_783_414_076_4e-4,
];
const D: [f64; 8] = [
    1.0,
    2.053_191_626_637_758_821_87,
    1.676_384_830_183_803_849_4,
    0.689_767_334_985_100_004_55,
    0.148_103_976_427_480_074_59,
    0.015_198_666_563_616_457_196_6,
    5.475_938_084_995_344_946e-4,
    1.050_750_071_644_416_843_24e-9,
];
const E: [f64; 8] = [
    6.657_904_643_501_103_777_2,
    5.463_784_911_164_114_369_9,
    1.784_826_539_917_291_335_8,
    0.296_560_571_828_504_891_23,
    0.026_532_189_526_576_123_093,
    0.001_242_660_947_388_078_438_6,
    2.711_555_568_743_487_578_15e-5,
    2.010_334_399_292_288_132_65e-7,
];
const F: [f64; 8] = [
    1.0,
    0.599_832_206_555_887_937_69,
    0.136_929_880_922_735_805_31,
    0.014_875_361_290_850_614_852_5,
    7.868_691_311_456_132_591e-4,
    1.846_318_317_510_054_681_8e-5,
    1.421_511_758_316_445_888_7e-7,
    2.044_263_103_389_939_785_64e-15,
];

#[inline]
fn horner(coef: &[f64; 8], x: f64) -> f64 {
    coef.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

/// Φ⁻¹(u) for `u` in the open interval (0, 1).
pub fn normal_inverse_cdf(u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::Domain(format!(
            "normal quantile needs 0 < u < 1, got {u}"
        )));
    }
    Ok(quantile_unchecked(u))
}

/// Same as [`normal_inverse_cdf`] without the domain check; the sampler
/// only feeds it values strictly inside (0, 1).
#[inline]
pub(crate) fn quantile_unchecked(u: f64) -> f64 {
    let q = u - 0.5;
    if q.abs() <= SPLIT_CENTRAL {
        let r = CONST_CENTRAL - q * q;
        return q * horner(&A, r) / horner(&B, r);
    }
    let tail = if q < 0.0 { u } else { 1.0 - u };
    let mut r = (-tail.ln()).sqrt();
    let val = if r <= SPLIT_TAIL {
        r -= CONST_INTERMEDIATE;
        horner(&C, r) / horner(&D, r)
    } else {
        r -= SPLIT_TAIL;
        horner(&E, r) / horner(&F, r)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Φ⁻¹ evaluated with mpmath at 60 significant digits.
    const ORACLE: [(f64, f64); 23] = [
        (1e-12, -7.034_483_825_301_131_929_8),
        (1e-10, -6.361_340_902_404_056_204_7),
        (1e-8, -5.612_001_244_174_788_731_5),
        (1e-6, -4.753_424_308_822_898_948_2),
        (1e-4, -3.719_016_485_455_680_564_4),
        (0.001, -3.090_232_306_167_813_541_5),
        (0.01, -2.326_347_874_040_841_100_9),
        (0.02425, -1.972_961_051_311_884_850_3),
        (0.05, -1.644_853_626_951_472_714_9),
        (0.1, -1.281_551_565_544_600_467),
        (0.2, -0.841_621_233_572_914_205_18),
        (0.3, -0.524_400_512_708_040_784_04),
        (0.4, -0.253_347_103_135_799_798_8),
        (0.45, -0.125_661_346_855_074_034_21),
        (0.5, 0.0),
        (0.6, 0.253_347_103_135_799_798_8),
        (0.75, 0.674_489_750_196_081_743_2),
        (0.9, 1.281_551_565_544_600_467),
        (0.975, 1.959_963_984_540_054_235_5),
        (0.99, 2.326_347_874_040_841_100_9),
        (0.999, 3.090_232_306_167_813_541_5),
        (0.999_999, 4.753_424_308_822_898_948_2),
        (0.999_999_999_999, 7.034_486_910_047_835_205_7),
    ];

    #[test]
    fn matches_high_precision_oracle() {
        for (u, want) in ORACLE {
            let got = normal_inverse_cdf(u).unwrap();
            assert!((got - want).abs() <= 1e-9, "u={u}: {got} vs {want}");
        }
    }

    #[test]
    fn median_is_zero() {
        assert_eq!(normal_inverse_cdf(0.5).unwrap(), 0.0);
    }

    #[test]
    fn symmetric() {
        for k in 1..1000 {
            let u = k as f64 / 1000.0 * 0.49 + 1e-6;
            let lo = normal_inverse_cdf(u).unwrap();
            let hi = normal_inverse_cdf(1.0 - u).unwrap();
            assert!((lo + hi).abs() < 1e-9, "u={u}");
        }
    }

    #[test]
    fn rejects_closed_endpoints() {
        assert!(matches!(normal_inverse_cdf(0.0), Err(Error::Domain(_))));
        assert!(matches!(normal_inverse_cdf(1.0), Err(Error::Domain(_))));
        assert!(normal_inverse_cdf(f64::NAN).is_err());
    }

    #[test]
    fn monotone_on_fine_grid() {
        let mut prev = f64::NEG_INFINITY;
        for k in 1..100_000 {
            let z = quantile_unchecked(k as f64 / 100_000.0);
            assert!(z > prev);
            prev = z;
        }
    }
}
