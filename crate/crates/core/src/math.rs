//! Thin wrappers over `libm` so results are identical with and without `std`,
//! plus a branch-free `tanh` that the compiler can vectorise.

const LN2_HI: f64 = 6.931_471_803_691_238_164_90e-1;
const LN2_LO: f64 = 1.908_214_929_270_587_700_02e-10;
const INV_LN2: f64 = 1.442_695_040_888_963_387_00;
/// `1.5 * 2^52`: adding it rounds to an integer held in the low mantissa bits.
const SHIFTER: f64 = 6_755_399_441_055_744.0;
/// `tanh(x)` rounds to 1 beyond this.
const SATURATE: f64 = 20.0;
const SIGN: u64 = 1 << 63;

/// `1/(n+1)!` for `n = 0..13`, the Taylor series of `exp(r) - 1` over `r`.
const EXPM1_COEF: [f64; 13] = [
    1.0,
    1.0 / 2.0,
    1.0 / 6.0,
    1.0 / 24.0,
    1.0 / 120.0,
    1.0 / 720.0,
    1.0 / 5040.0,
    1.0 / 40320.0,
    1.0 / 362_880.0,
    1.0 / 3_628_800.0,
    1.0 / 39_916_800.0,
    1.0 / 479_001_600.0,
    1.0 / 6_227_020_800.0,
];

/// `tanh(x) = -expm1(-2|x|) / (2 + expm1(-2|x|))` with the sign of `x`.
/// `expm1` reduces by `k ln 2` and sums a degree-13 Taylor series, so small
/// arguments keep full relative accuracy. NaN propagates.
#[inline]
pub(crate) fn tanh(x: f64) -> f64 {
    let bits = x.to_bits();
    let a = f64::from_bits(bits & !SIGN);
    let a = if a > SATURATE { SATURATE } else { a };
    let y = -2.0 * a;
    let t = y * INV_LN2 + SHIFTER;
    let kf = t - SHIFTER;
    let k = (t.to_bits() as i64).wrapping_sub(SHIFTER.to_bits() as i64);
    let r = y - kf * LN2_HI - kf * LN2_LO;
    let mut p = EXPM1_COEF[12];
    for &c in EXPM1_COEF[..12].iter().rev() {
        p = c + r * p;
    }
    let em1 = r * p;
    let scale = f64::from_bits((k.wrapping_add(1023) as u64) << 52);
    let e_minus_1 = scale * em1 + (scale - 1.0);
    let v = -e_minus_1 / (2.0 + e_minus_1);
    f64::from_bits(v.to_bits() | (bits & SIGN))
}

/// Defines a function whose body is also compiled for AVX2 and picked at
/// run time when the CPU has it. Only the vector width changes: there is no
/// FMA contraction, so both versions give bit-identical results.
macro_rules! wide_kernel {
    ($(#[$m:meta])* fn $name:ident($($arg:ident: $ty:ty),* $(,)?) $body:block) => {
        $(#[$m])*
        fn $name($($arg: $ty),*) {
            #[inline(always)]
            fn kernel($($arg: $ty),*) $body

            #[cfg(all(feature = "std", target_arch = "x86_64"))]
            #[allow(unsafe_code)]
            #[target_feature(enable = "avx2")]
            unsafe fn kernel_avx2($($arg: $ty),*) {
                kernel($($arg),*)
            }

            #[cfg(all(feature = "std", target_arch = "x86_64"))]
            if std::is_x86_feature_detected!("avx2") {
                // SAFETY: the feature was detected above.
                #[allow(unsafe_code)]
                unsafe {
                    return kernel_avx2($($arg),*);
                }
            }
            kernel($($arg),*)
        }
    };
}
pub(crate) use wide_kernel;

#[inline]
pub(crate) fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub(crate) fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub(crate) fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub(crate) fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub(crate) fn powi(x: f64, n: i32) -> f64 {
    libm::pow(x, n as f64)
}

#[inline]
pub(crate) fn round(x: f64) -> f64 {
    libm::round(x)
}
