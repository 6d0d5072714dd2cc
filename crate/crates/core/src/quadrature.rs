//! Gauss-Legendre rules, composite panels and adaptive integration.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock, RwLock};

use gauss_quad::GaussLegendre;

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    /// Integrates `f` over `[a, b]`.
    #[inline]
    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let (m, h) = (0.5 * (a + b), 0.5 * (b - a));
        let mut acc = 0.0;
        for (t, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(m + h * t);
        }
        acc * h
    }

    /// Mapped nodes and weights on `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let (m, h) = (0.5 * (a + b), 0.5 * (b - a));
        self.nodes.iter().zip(&self.weights).map(move |(t, w)| (m + h * t, w * h))
    }
}

/// Cached Gauss-Legendre rule with `n >= 2` points.
pub fn gauss(n: usize) -> Arc<GaussRule> {
    static CACHE: OnceLock<RwLock<HashMap<usize, Arc<GaussRule>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| RwLock::new(HashMap::new()));
    if let Some(rule) = cache.read().expect("rule cache poisoned").get(&n) {
        return rule.clone();
    }
    let gl = GaussLegendre::new(n).expect("Gauss-Legendre rule needs at least two points");
    let mut pairs = gl.into_node_weight_pairs();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let rule = Arc::new(GaussRule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    });
    cache.write().expect("rule cache poisoned").insert(n, rule.clone());
    rule
}

/// Integrates over consecutive segments of sorted `breaks`, each split into
/// `panels` equal panels with an `n`-point rule.
pub fn composite(f: impl Fn(f64) -> f64, breaks: &[f64], panels: usize, n: usize) -> f64 {
    let rule = gauss(n);
    let mut acc = 0.0;
    for seg in breaks.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        if b <= a {
            continue;
        }
        let step = (b - a) / panels as f64;
        for p in 0..panels {
            let lo = a + p as f64 * step;
            let hi = if p + 1 == panels { b } else { lo + step };
            acc += rule.integrate(lo, hi, &f);
        }
    }
    acc
}

/// Sorted, deduplicated breakpoints clipped to `[lo, hi]`, always including both ends.
pub fn breakpoints(lo: f64, hi: f64, interior: &[f64]) -> Vec<f64> {
    let mut pts = vec![lo, hi];
    pts.extend(interior.iter().copied().filter(|&p| p > lo && p < hi));
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * (1.0 + b.abs()));
    pts
}

const KRONROD_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const KRONROD_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728,
];
const GAUSS7_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Gauss-Kronrod 7/15 estimate and error bound on `[a, b]`.
fn kronrod(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let (m, h) = (0.5 * (a + b), 0.5 * (b - a));
    let center = f(m);
    let mut k = KRONROD_WEIGHTS[7] * center;
    let mut g = GAUSS7_WEIGHTS[3] * center;
    for j in 0..7 {
        let pair = f(m - h * KRONROD_NODES[j]) + f(m + h * KRONROD_NODES[j]);
        k += KRONROD_WEIGHTS[j] * pair;
        if j % 2 == 1 {
            g += GAUSS7_WEIGHTS[j / 2] * pair;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Adaptive Gauss-Kronrod integration to absolute tolerance `tol`.
pub fn adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn recurse(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let (value, err) = kronrod(f, a, b);
        if depth == 0 || (depth < 48 && (err <= tol || err <= 1e-15 * value.abs())) {
            return value;
        }
        let m = 0.5 * (a + b);
        recurse(f, a, m, 0.5 * tol, depth - 1) + recurse(f, m, b, 0.5 * tol, depth - 1)
    }
    if b <= a {
        return 0.0;
    }
    // Two forced levels guard against a lucky estimate on a kinked integrand.
    recurse(f, a, b, tol, 50)
}
