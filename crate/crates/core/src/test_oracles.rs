//! Independent reference rules on [-1, 1] from Legendre polynomial identities.

/// `(P_{n-1}(x), P_n(x))` by the three-term recurrence.
pub(crate) fn legendre_pair(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    (p0, p1)
}

fn p(n: usize, x: f64) -> f64 {
    legendre_pair(n, x).1
}

fn dp(n: usize, x: f64) -> f64 {
    let (pm, pn) = legendre_pair(n, x);
    n as f64 * (x * pn - pm) / (x * x - 1.0)
}

/// Sign changes of `f` on a fine grid of the open interval, refined by bisection.
fn roots(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> Vec<f64> {
    let steps = 20_000;
    let h = (hi - lo) / steps as f64;
    let mut out = Vec::new();
    let mut x0 = lo + 1e-3 * h;
    let mut f0 = f(x0);
    for i in 1..=steps {
        let x1 = if i == steps { hi - 1e-3 * h } else { lo + i as f64 * h };
        let f1 = f(x1);
        if f1 == 0.0 {
            out.push(x1);
        } else if f0 != 0.0 && f0.signum() != f1.signum() {
            let (mut a, mut b, mut fa) = (x0, x1, f0);
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                let fm = f(m);
                if fm == 0.0 || b - a < 1e-17 {
                    a = m;
                    b = m;
                    break;
                }
                if fm.signum() == fa.signum() {
                    a = m;
                    fa = fm;
                } else {
                    b = m;
                }
            }
            out.push(0.5 * (a + b));
        }
        x0 = x1;
        f0 = f1;
    }
    out
}

/// Gauss-Legendre: roots of `P_n`, weights `2 / ((1 - x^2) P_n'(x)^2)`.
pub(crate) fn legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let x = roots(|x| p(n, x), -1.0, 1.0);
    let w = x.iter().map(|&x| 2.0 / ((1.0 - x * x) * dp(n, x).powi(2))).collect();
    (x, w)
}

/// Radau with the node `-1`: the others are roots of `P_{n-1} + P_n`;
/// weights `2/n^2` and `(1 - x) / (n^2 P_{n-1}(x)^2)`.
pub(crate) fn radau_left(n: usize) -> (Vec<f64>, Vec<f64>) {
    let nn = (n * n) as f64;
    let mut x = vec![-1.0];
    x.extend(roots(|x| p(n - 1, x) + p(n, x), -1.0, 1.0));
    let w = x
        .iter()
        .map(|&x| if x == -1.0 { 2.0 / nn } else { (1.0 - x) / (nn * p(n - 1, x).powi(2)) })
        .collect();
    (x, w)
}

/// Lobatto: endpoints and the roots of `P_{n-1}'`; weights `2 / (n(n-1) P_{n-1}(x)^2)`.
pub(crate) fn lobatto(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![-1.0];
    x.extend(roots(|x| dp(n - 1, x), -1.0, 1.0));
    x.push(1.0);
    let c = (n * (n - 1)) as f64;
    let w = x.iter().map(|&x| 2.0 / (c * p(n - 1, x).powi(2))).collect();
    (x, w)
}

#[test]
fn oracles_integrate_polynomials() {
    for n in 2..8 {
        for (rule, exact) in [(legendre(n), 2 * n - 1), (radau_left(n), 2 * n - 2), (lobatto(n), 2 * n - 3)] {
            let (x, w) = rule;
            assert_eq!(x.len(), n);
            for d in 0..=exact {
                let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(d as i32)).sum();
                let want = if d % 2 == 0 { 2.0 / (d + 1) as f64 } else { 0.0 };
                assert!((q - want).abs() < 1e-12, "n={n} d={d}");
            }
        }
    }
}
