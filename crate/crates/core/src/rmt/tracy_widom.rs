//! Quantiles of the GOE (beta = 1) Tracy-Widom law.
//!
//! The table in `data/tw1_table.csv` holds `t(p)` for `p = 0.001, 0.002, ..., 0.999`,
//! computed from the Fredholm determinant `F1(s) = det(I - K)` with kernel
//! `K(x, y) = Ai((x + y)/2 + s)/2` on `L2(0, inf)`, using Gauss-Legendre
//! discretisation and Brent root finding. `tools/gen_tw1_table.py` regenerates it.

use std::sync::OnceLock;

use crate::error::{Error, Result};

const TABLE_CSV: &str = include_str!("../../data/tw1_table.csv");

/// Table version tag, taken from the first line of the embedded file.
pub fn table_version() -> &'static str {
    TABLE_CSV.lines().next().unwrap_or("").trim_start_matches('#').trim()
}

struct Table {
    p: Vec<f64>,
    t: Vec<f64>,
    slope: Vec<f64>,
}

fn table() -> &'static Table {
    static TABLE: OnceLock<Table> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut p = Vec::new();
        let mut t = Vec::new();
        for line in TABLE_CSV.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with('p') {
                continue;
            }
            let (a, b) = line.split_once(',').expect("two columns in TW table");
            p.push(a.parse::<f64>().expect("numeric p"));
            t.push(b.parse::<f64>().expect("numeric t"));
        }
        let slope = pchip_slopes(&p, &t);
        Table { p, t, slope }
    })
}

/// Fritsch-Carlson derivative estimates for monotone cubic Hermite interpolation.
fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let d: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
    let mut m = vec![0.0; n];
    for i in 1..n - 1 {
        if d[i - 1] * d[i] <= 0.0 {
            m[i] = 0.0;
        } else {
            let w1 = 2.0 * h[i] + h[i - 1];
            let w2 = h[i] + 2.0 * h[i - 1];
            m[i] = (w1 + w2) / (w1 / d[i - 1] + w2 / d[i]);
        }
    }
    m[0] = end_slope(h[0], h[1], d[0], d[1]);
    m[n - 1] = end_slope(h[n - 2], h[n - 3], d[n - 2], d[n - 3]);
    m
}

fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let m = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if m * d0 <= 0.0 {
        0.0
    } else if d0 * d1 <= 0.0 && m.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        m
    }
}

/// Probability range covered by the table.
pub fn coverage() -> (f64, f64) {
    let tb = table();
    (tb.p[0], *tb.p.last().unwrap())
}

/// `t` with `P(TW1 <= t) = p`.
pub fn tracy_widom_quantile(p: f64) -> Result<f64> {
    let tb = table();
    let (lo, hi) = coverage();
    // tolerate representation error at the table ends
    let eps = 1e-12;
    if !(p >= lo - eps && p <= hi + eps) {
        return Err(Error::Domain(format!(
            "Tracy-Widom quantile requested at p = {p}; table covers [{lo}, {hi}]"
        )));
    }
    let p = p.clamp(lo, hi);
    let i = tb.p.partition_point(|x| *x <= p).clamp(1, tb.p.len() - 1) - 1;
    let h = tb.p[i + 1] - tb.p[i];
    let s = (p - tb.p[i]) / h;
    let (y0, y1, m0, m1) = (tb.t[i], tb.t[i + 1], tb.slope[i], tb.slope[i + 1]);
    let s2 = s * s;
    let s3 = s2 * s;
    Ok((2.0 * s3 - 3.0 * s2 + 1.0) * y0
        + (s3 - 2.0 * s2 + s) * h * m0
        + (-2.0 * s3 + 3.0 * s2) * y1
        + (s3 - s2) * h * m1)
}
