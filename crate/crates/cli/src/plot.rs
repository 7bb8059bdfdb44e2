//! Standalone SVG figures. Coordinates are printed with fixed precision so reruns give
//! the same files.

use std::fmt::Write as _;

use superliouville::geometry::TriMesh;

const W: f64 = 640.0;
const H: f64 = 420.0;
const PAD: f64 = 50.0;

fn header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\" text-anchor=\"middle\">{}</text>\n",
        W / 2.0,
        escape(title)
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn finite_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-300 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Eigenvalues in `[−cap, cap]` as horizontal rungs, with ρ marked.
pub fn spectrum_ladder(eigenvalues: &[f64], rho: Option<f64>, cap: f64) -> String {
    let mut s = header("weighted Dirac spectrum");
    let y = |v: f64| H - PAD - (v + cap) / (2.0 * cap) * (H - 2.0 * PAD);
    let _ = writeln!(s, "<line x1=\"{PAD}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#999\"/>", y(0.0), W - PAD, y(0.0));
    for l in eigenvalues.iter().filter(|l| l.abs() <= cap) {
        let color = if *l > 0.0 { "#1f5fa8" } else { "#b03a2e" };
        let _ = writeln!(
            s,
            "<line x1=\"{:.2}\" y1=\"{:.3}\" x2=\"{:.2}\" y2=\"{:.3}\" stroke=\"{color}\"/>",
            W / 2.0 - 60.0,
            y(*l),
            W / 2.0 + 60.0,
            y(*l)
        );
    }
    if let Some(r) = rho.filter(|r| r.abs() <= cap) {
        let _ = writeln!(
            s,
            "<line x1=\"{PAD}\" y1=\"{:.3}\" x2=\"{:.2}\" y2=\"{:.3}\" stroke=\"#2e8b57\" stroke-dasharray=\"6 4\"/>\n\
             <text x=\"{:.2}\" y=\"{:.3}\" font-family=\"sans-serif\" font-size=\"12\">ρ = {r:.6}</text>",
            y(r),
            W - PAD,
            y(r),
            W - PAD - 90.0,
            y(r) - 4.0
        );
    }
    for v in [-cap, 0.0, cap] {
        let _ = writeln!(s, "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\">{v:.2}</text>", PAD - 40.0, y(v) + 4.0);
    }
    s.push_str("</svg>\n");
    s
}

/// Polyline of `values` against their index, with an optional reference level.
pub fn series(title: &str, values: &[f64], reference: Option<f64>) -> String {
    let mut s = header(title);
    let (lo, hi) = finite_range(values.iter().copied().chain(reference));
    let n = values.len().max(2) - 1;
    let x = |i: usize| PAD + i as f64 / n as f64 * (W - 2.0 * PAD);
    let y = |v: f64| H - PAD - (v - lo) / (hi - lo) * (H - 2.0 * PAD);
    let _ = writeln!(
        s,
        "<rect x=\"{PAD}\" y=\"{PAD}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#999\"/>",
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    if let Some(r) = reference {
        let _ = writeln!(
            s,
            "<line x1=\"{PAD}\" y1=\"{:.3}\" x2=\"{:.2}\" y2=\"{:.3}\" stroke=\"#2e8b57\" stroke-dasharray=\"6 4\"/>",
            y(r),
            W - PAD,
            y(r)
        );
    }
    let pts: Vec<String> =
        values.iter().enumerate().filter(|(_, v)| v.is_finite()).map(|(i, v)| format!("{:.2},{:.3}", x(i), y(*v))).collect();
    let _ = writeln!(s, "<polyline fill=\"none\" stroke=\"#1f5fa8\" stroke-width=\"1.5\" points=\"{}\"/>", pts.join(" "));
    let _ = writeln!(
        s,
        "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\">{hi:.6}</text>\n\
         <text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\">{lo:.6}</text>",
        PAD,
        PAD - 4.0,
        PAD,
        H - PAD + 14.0
    );
    s.push_str("</svg>\n");
    s
}

/// Blue to yellow ramp for `t ∈ [0, 1]`.
fn color(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let (r, g, b) = (68.0 + t * (253.0 - 68.0), 1.0 + t * (231.0 - 1.0), 84.0 + t * (37.0 - 84.0));
    format!("#{:02x}{:02x}{:02x}", r.round() as u8, g.round() as u8, b.round() as u8)
}

/// Per-triangle average of a nodal field, drawn on the flat domain.
pub fn heat_map(title: &str, mesh: &TriMesh, values: &[f64]) -> String {
    let mut s = header(title);
    let (lo, hi) = finite_range(values.iter().copied());
    let (xl, xh) = finite_range(mesh.vertices().iter().map(|p| p[0]));
    let (yl, yh) = finite_range(mesh.vertices().iter().map(|p| p[1]));
    let scale = ((W - 2.0 * PAD - 80.0) / (xh - xl)).min((H - 2.0 * PAD) / (yh - yl));
    let px = |p: [f64; 2]| (PAD + (p[0] - xl) * scale, H - PAD - (p[1] - yl) * scale);
    for t in mesh.triangles() {
        let avg = (values[t[0]] + values[t[1]] + values[t[2]]) / 3.0;
        let c = color((avg - lo) / (hi - lo));
        let pts: Vec<String> = t.iter().map(|&v| px(mesh.vertices()[v])).map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(s, "<polygon points=\"{}\" fill=\"{c}\" stroke=\"{c}\" stroke-width=\"0.3\"/>", pts.join(" "));
    }
    let bx = W - PAD - 30.0;
    for i in 0..20 {
        let t = i as f64 / 19.0;
        let y = H - PAD - t * (H - 2.0 * PAD);
        let _ = writeln!(s, "<rect x=\"{bx:.2}\" y=\"{:.2}\" width=\"16\" height=\"{:.2}\" fill=\"{}\"/>", y - (H - 2.0 * PAD) / 20.0, (H - 2.0 * PAD) / 20.0 + 0.5, color(t));
    }
    let _ = writeln!(
        s,
        "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\">{hi:.4}</text>\n\
         <text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\">{lo:.4}</text>",
        bx - 10.0,
        PAD - 6.0,
        bx - 10.0,
        H - PAD + 14.0
    );
    s.push_str("</svg>\n");
    s
}
