//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use num_complex::Complex64;

// 15-point Kronrod nodes/weights with the embedded 7-point Gauss weights.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Adaptive Gauss-Kronrod on [a, b] with absolute tolerance `tol`.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64) -> f64 {
    fn rec<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let (v, err) = gk15(f, a, b);
        if err <= tol || depth >= 40 {
            return v;
        }
        let m = 0.5 * (a + b);
        rec(f, a, m, 0.5 * tol, depth + 1) + rec(f, m, b, 0.5 * tol, depth + 1)
    }
    rec(&mut f, a, b, tol, 0)
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

fn binomial(n: u32, k: u32) -> f64 {
    factorial(n) / (factorial(k) * factorial(n - k))
}

/// L_p^{(l)}(t) from its explicit finite sum.
pub fn laguerre_sum(p: u32, l: u32, t: f64) -> f64 {
    (0..=p)
        .map(|k| (-1f64).powi(k as i32) * binomial(p + l, p - k) * t.powi(k as i32) / factorial(k))
        .sum()
}

/// LG mode in Cartesian form: the vortex factor is ((x ± i y)·√2/w)^{|ℓ|}.
pub fn lg_cartesian(p: u32, ell: i32, w: f64, x: f64, y: f64) -> Complex64 {
    let l = ell.unsigned_abs();
    let c = (2.0 * factorial(p) / (std::f64::consts::PI * factorial(p + l))).sqrt() / w;
    let r2 = (x * x + y * y) / (w * w);
    let sign = if ell >= 0 { 1.0 } else { -1.0 };
    let vortex = (Complex64::new(x, sign * y) * (2f64.sqrt() / w)).powu(l);
    vortex * (c * laguerre_sum(p, l, 2.0 * r2) * (-r2).exp())
}

/// Composite 15-point Kronrod rule over `panels` equal panels.
pub fn integrate_fixed<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, panels: usize) -> f64 {
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|k| gk15(&mut f, a + k as f64 * h, a + (k + 1) as f64 * h).0)
        .sum()
}

/// ∫∫ u_p u_s* u_i* dx dy by a tensor-product rule over a square.
pub fn overlap_2d(pump: (u32, i32, f64), signal: (u32, i32, f64), idler: (u32, i32, f64)) -> Complex64 {
    let a = 1.0 / pump.2.powi(2) + 1.0 / signal.2.powi(2) + 1.0 / idler.2.powi(2);
    let r = (80.0 / a).sqrt();
    let f = |x: f64, y: f64| {
        lg_cartesian(pump.0, pump.1, pump.2, x, y)
            * lg_cartesian(signal.0, signal.1, signal.2, x, y).conj()
            * lg_cartesian(idler.0, idler.1, idler.2, x, y).conj()
    };
    let panels = 24;
    let re = integrate_fixed(|x| integrate_fixed(|y| f(x, y).re, -r, r, panels), -r, r, panels);
    let im = integrate_fixed(|x| integrate_fixed(|y| f(x, y).im, -r, r, panels), -r, r, panels);
    Complex64::new(re, im)
}

/// Greedy earliest-match pairing by exhaustive search.
pub fn brute_pairs(a: &[u64], b: &[u64], window: u64, offset: i64) -> Vec<(usize, usize)> {
    let half = (window / 2) as i128;
    let mut used = vec![false; b.len()];
    let mut out = Vec::new();
    for (i, &ta) in a.iter().enumerate() {
        let c = ta as i128 + offset as i128;
        let mut best: Option<usize> = None;
        for (j, &tb) in b.iter().enumerate() {
            let tb = tb as i128;
            if used[j] || tb < c - half || tb > c + half {
                continue;
            }
            if best.is_none_or(|k| tb < b[k] as i128) {
                best = Some(j);
            }
        }
        if let Some(j) = best {
            used[j] = true;
            out.push((i, j));
        }
    }
    out
}

pub fn brute_heralded(
    herald: &[u64],
    signal: &[u64],
    idler: &[u64],
    pair_window: u64,
    herald_window: u64,
    idler_offset: i64,
    herald_offset: i64,
) -> u64 {
    let pairs: Vec<u64> = brute_pairs(signal, idler, pair_window, idler_offset)
        .into_iter()
        .map(|(i, _)| signal[i])
        .collect();
    brute_pairs(&pairs, herald, herald_window, herald_offset).len() as u64
}

pub fn brute_histogram(a: &[u64], b: &[u64], bin: i64, range: (i64, i64)) -> Vec<u64> {
    let mut counts = vec![0u64; ((range.1 - range.0) / bin) as usize];
    for &ta in a {
        for &tb in b {
            let d = tb as i64 - ta as i64;
            if d >= range.0 && d < range.1 {
                counts[((d - range.0) / bin) as usize] += 1;
            }
        }
    }
    counts
}

/// Asymptotic Kolmogorov p-value of a one-sample KS test against U(0, 1).
pub fn ks_uniform_pvalue(mut samples: Vec<f64>) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    let d = samples
        .iter()
        .enumerate()
        .map(|(i, &x)| ((i as f64 + 1.0) / n - x).max(x - i as f64 / n))
        .fold(0.0, f64::max);
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        p += 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
    }
    p.clamp(0.0, 1.0)
}

/// Two-sample chi-square homogeneity test over paired category counts.
/// Categories empty in both samples are dropped. Returns (statistic, dof).
pub fn chi_square_homogeneity(a: &[u64], b: &[u64]) -> (f64, usize) {
    let na: f64 = a.iter().sum::<u64>() as f64;
    let nb: f64 = b.iter().sum::<u64>() as f64;
    let mut stat = 0.0;
    let mut k = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        let t = (x + y) as f64;
        if t == 0.0 {
            continue;
        }
        k += 1;
        let ea = t * na / (na + nb);
        let eb = t * nb / (na + nb);
        stat += (x as f64 - ea).powi(2) / ea + (y as f64 - eb).powi(2) / eb;
    }
    (stat, k.saturating_sub(1))
}
