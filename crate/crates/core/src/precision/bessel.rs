//! Modified Bessel function of the second kind, order one.

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// `x·K₁(x)` for `x ≥ 0`, with the limit value 1 at `x = 0`.
///
/// Power series below 2, Steed's continued fraction (CF2) above.
pub fn x_k1(x: f64) -> f64 {
    assert!(x >= 0.0, "x·K₁(x) needs x ≥ 0, got {x}");
    if x == 0.0 {
        1.0
    } else if x <= 2.0 {
        x_k1_series(x)
    } else {
        x * k01_continued_fraction(x).1
    }
}

pub fn k1(x: f64) -> f64 {
    assert!(x > 0.0, "K₁(x) needs x > 0, got {x}");
    if x <= 2.0 {
        x_k1_series(x) / x
    } else {
        k01_continued_fraction(x).1
    }
}

/// `x K₁(x) = 1 + x ln(x/2) I₁(x) − (x²/4) Σ_k [ψ(k+1)+ψ(k+2)] (x²/4)^k / (k!(k+1)!)`
fn x_k1_series(x: f64) -> f64 {
    let y = 0.25 * x * x;
    // I₁(x) = (x/2) Σ y^k / (k!(k+1)!)
    let mut term = 1.0;
    let mut i1 = 0.0;
    let mut tail = 0.0;
    let mut psi_k1 = -EULER_GAMMA; // ψ(k+1)
    let mut psi_k2 = 1.0 - EULER_GAMMA; // ψ(k+2)
    for k in 0..60 {
        i1 += term;
        tail += (psi_k1 + psi_k2) * term;
        let kf = k as f64;
        term *= y / ((kf + 1.0) * (kf + 2.0));
        psi_k1 += 1.0 / (kf + 1.0);
        psi_k2 += 1.0 / (kf + 2.0);
        if term < 1e-18 * i1 {
            break;
        }
    }
    let i1 = 0.5 * x * i1;
    1.0 + x * (0.5 * x).ln() * i1 - y * tail
}

/// `(K₀(x), K₁(x))` by Steed's algorithm for the second continued fraction, `x ≥ 2`.
fn k01_continued_fraction(x: f64) -> (f64, f64) {
    let mut b = 2.0 * (1.0 + x);
    let mut d = 1.0 / b;
    let mut h = d;
    let mut delh = d;
    let (mut q1, mut q2) = (0.0, 1.0);
    let a1 = 0.25;
    let mut q = a1;
    let mut c = a1;
    let mut a = -a1;
    let mut s = 1.0 + q * delh;
    for i in 1..10_000 {
        let fi = i as f64;
        a -= 2.0 * fi;
        c = -a * c / (fi + 1.0);
        let qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += c * qnew;
        b += 2.0;
        d = 1.0 / (b + a * d);
        delh *= b * d - 1.0;
        h += delh;
        let dels = q * delh;
        s += dels;
        if (dels / s).abs() < 1e-17 {
            break;
        }
    }
    let h = a1 * h;
    let k0 = (std::f64::consts::PI / (2.0 * x)).sqrt() * (-x).exp() / s;
    let k1 = k0 * (x + 0.5 - h) / x;
    (k0, k1)
}
