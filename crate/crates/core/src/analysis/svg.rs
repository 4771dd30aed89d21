//! Hand-written SVG for the CD diagram and the sunburst. Coordinates are
//! printed with fixed precision so identical input gives identical bytes.

use std::f64::consts::PI;
use std::fmt::Write;

use super::rank::CdReport;
use super::sunburst::SunburstTree;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2",
];

pub(crate) fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

pub(crate) fn cd_diagram(r: &CdReport) -> String {
    let k = r.systems.len().max(2);
    let (left, right, width) = (80.0, 560.0, 640.0);
    let axis_y = 70.0;
    let x = |rank: f64| left + (rank - 1.0) / (k as f64 - 1.0) * (right - left);
    let bars = r.not_significant.len();
    let label_top = axis_y + 30.0 + 12.0 * bars as f64;
    let height = label_top + 22.0 * r.systems.len() as f64 + 20.0;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    // CD bracket
    let cd_x = x(1.0) + r.cd / (k as f64 - 1.0) * (right - left);
    let _ = writeln!(
        s,
        r#"<g class="cd"><line x1="{:.2}" y1="25.00" x2="{:.2}" y2="25.00" stroke="black" stroke-width="2"/><text x="{:.2}" y="18.00" text-anchor="middle">CD = {:.3}</text></g>"#,
        x(1.0),
        cd_x,
        (x(1.0) + cd_x) / 2.0,
        r.cd
    );
    let _ = writeln!(
        s,
        r#"<line class="axis" x1="{left:.2}" y1="{axis_y:.2}" x2="{right:.2}" y2="{axis_y:.2}" stroke="black"/>"#
    );
    for t in 1..=k {
        let tx = x(t as f64);
        let _ = writeln!(
            s,
            r#"<line x1="{tx:.2}" y1="{:.2}" x2="{tx:.2}" y2="{axis_y:.2}" stroke="black"/><text x="{tx:.2}" y="{:.2}" text-anchor="middle">{t}</text>"#,
            axis_y - 6.0,
            axis_y - 10.0
        );
    }
    let rank_of = |name: &str| {
        r.systems
            .iter()
            .find(|sys| sys.name == name)
            .map_or(1.0, |sys| sys.mean_rank)
    };
    for (i, [a, b]) in r.not_significant.iter().enumerate() {
        let y = axis_y + 14.0 + 12.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line class="nsd" data-a="{}" data-b="{}" x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{}" stroke-width="4" stroke-linecap="round"/>"#,
            escape(a),
            escape(b),
            x(rank_of(a)),
            x(rank_of(b)),
            PALETTE[i % PALETTE.len()]
        );
    }
    for (i, sys) in r.systems.iter().enumerate() {
        let sx = x(sys.mean_rank);
        let ly = label_top + 22.0 * i as f64;
        let (anchor, lx) = if sys.mean_rank <= (k as f64 + 1.0) / 2.0 {
            ("end", left - 10.0)
        } else {
            ("start", right + 10.0)
        };
        let _ = writeln!(
            s,
            r#"<g class="system" data-name="{}" data-rank="{:.4}"><circle cx="{sx:.2}" cy="{axis_y:.2}" r="3"/><polyline points="{sx:.2},{axis_y:.2} {sx:.2},{ly:.2} {lx:.2},{ly:.2}" fill="none" stroke="gray"/><text x="{:.2}" y="{:.2}" text-anchor="{anchor}">{} ({:.2})</text></g>"#,
            escape(&sys.name),
            sys.mean_rank,
            if anchor == "end" { lx - 4.0 } else { lx + 4.0 },
            ly + 4.0,
            escape(&sys.name),
            sys.mean_rank
        );
    }
    s.push_str("</svg>\n");
    s
}

fn point(cx: f64, cy: f64, r: f64, a: f64) -> (f64, f64) {
    (cx + r * a.sin(), cy - r * a.cos())
}

/// Annular sector from angle `a0` to `a1` (radians, clockwise from 12
/// o'clock).
fn sector(cx: f64, cy: f64, r0: f64, r1: f64, a0: f64, a1: f64) -> String {
    if a1 - a0 >= 2.0 * PI - 1e-9 {
        // A full ring: two half arcs each way.
        let (ox, oy) = point(cx, cy, r1, 0.0);
        let (px, py) = point(cx, cy, r1, PI);
        let (ix, iy) = point(cx, cy, r0, 0.0);
        let (jx, jy) = point(cx, cy, r0, PI);
        return format!(
            "M{ox:.2},{oy:.2}A{r1:.2},{r1:.2} 0 1 1 {px:.2},{py:.2}A{r1:.2},{r1:.2} 0 1 1 {ox:.2},{oy:.2}ZM{ix:.2},{iy:.2}A{r0:.2},{r0:.2} 0 1 0 {jx:.2},{jy:.2}A{r0:.2},{r0:.2} 0 1 0 {ix:.2},{iy:.2}Z"
        );
    }
    let large = u8::from(a1 - a0 > PI);
    let (x0, y0) = point(cx, cy, r1, a0);
    let (x1, y1) = point(cx, cy, r1, a1);
    let (x2, y2) = point(cx, cy, r0, a1);
    let (x3, y3) = point(cx, cy, r0, a0);
    format!(
        "M{x0:.2},{y0:.2}A{r1:.2},{r1:.2} 0 {large} 1 {x1:.2},{y1:.2}L{x2:.2},{y2:.2}A{r0:.2},{r0:.2} 0 {large} 0 {x3:.2},{y3:.2}Z"
    )
}

/// Children by count, largest first, then by word.
pub(crate) fn ordered(t: &SunburstTree) -> Vec<(&String, &SunburstTree)> {
    let mut v: Vec<_> = t.children.iter().collect();
    v.sort_by(|a, b| b.1.count.cmp(&a.1.count).then(a.0.cmp(b.0)));
    v
}

const CENTER: f64 = 320.0;
const HOLE: f64 = 50.0;
const RING: f64 = 52.0;

struct Ctx<'a> {
    out: &'a mut String,
    total: f64,
}

fn rings(ctx: &mut Ctx, node: &SunburstTree, path: &mut Vec<String>, depth: usize, start: f64, hue: f64) {
    let mut a = start;
    for (i, (word, child)) in ordered(node).into_iter().enumerate() {
        let span = child.count as f64 / ctx.total * 2.0 * PI;
        let hue = if depth == 0 { (i as f64 * 137.508) % 360.0 } else { hue };
        let (r0, r1) = (HOLE + RING * depth as f64, HOLE + RING * (depth + 1) as f64);
        path.push(word.clone());
        let joined = path.join(" ");
        let light = 45.0 + 10.0 * depth as f64;
        let _ = writeln!(
            ctx.out,
            r#"<path class="seg" data-path="{}" data-count="{}" d="{}" fill="hsl({hue:.1},60%,{light:.0}%)" stroke="white"><title>{}: {}</title></path>"#,
            escape(&joined),
            child.count,
            sector(CENTER, CENTER, r0, r1, a, a + span),
            escape(&joined),
            child.count
        );
        let mid_r = (r0 + r1) / 2.0;
        if span * mid_r > 8.0 * word.chars().count() as f64 + 6.0 {
            let (tx, ty) = point(CENTER, CENTER, mid_r, a + span / 2.0);
            let _ = writeln!(
                ctx.out,
                r#"<text x="{tx:.2}" y="{:.2}" text-anchor="middle" pointer-events="none">{}</text>"#,
                ty + 4.0,
                escape(word)
            );
        }
        rings(ctx, child, path, depth + 1, a, hue);
        path.pop();
        a += span;
    }
}

pub(crate) fn sunburst(t: &SunburstTree) -> String {
    let size = 2.0 * CENTER;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size:.0}" height="{size:.0}" viewBox="0 0 {size:.0} {size:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{CENTER:.0}" y="{:.0}" text-anchor="middle">{} questions</text>"#,
        CENTER + 4.0,
        t.count
    );
    if t.count > 0 {
        let mut ctx = Ctx {
            out: &mut s,
            total: t.count as f64,
        };
        rings(&mut ctx, t, &mut Vec::new(), 0, 0.0, 0.0);
    }
    s.push_str("</svg>\n");
    s
}
