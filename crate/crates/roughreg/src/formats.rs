//! CSV tables, preparation-map text files and static SVG plots.

use std::fmt::Write as _;

use roughreg_core::germ::Germ;
use roughreg_core::model::PreparationMap;
use roughreg_core::spectral::TorusField;
use roughreg_core::treealg::{Tree, TreeLin, Q};

use crate::error::CliError;

/// Shortest round-trip decimal; exponent form outside `[1e-4, 1e16)`.
pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e16).contains(&a) || !x.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// A CSV table built row by row.
#[derive(Clone, Debug, Default)]
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn row(&mut self, cells: Vec<String>) {
        assert_eq!(cells.len(), self.header.len(), "row width");
        self.rows.push(cells);
    }

    pub fn nums(&mut self, xs: &[f64]) {
        self.row(xs.iter().map(|x| fmt_f64(*x)).collect());
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for line in std::iter::once(&self.header).chain(&self.rows) {
            let cells: Vec<String> = line.iter().map(|c| quote(c)).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }
}

/// `index,value` in flat grid order.
pub fn field_csv(u: &TorusField) -> String {
    let mut t = Table::new(&["index", "value"]);
    for (i, v) in u.samples().iter().enumerate() {
        t.row(vec![i.to_string(), fmt_f64(*v)]);
    }
    t.render()
}

/// `kx,re,im` in 1-d or `kx,ky,re,im` in 2-d, in FFT order.
pub fn spectrum_csv(u: &TorusField) -> String {
    let g = u.grid();
    let two = g.dim() == 2;
    let mut t = if two { Table::new(&["kx", "ky", "re", "im"]) } else { Table::new(&["kx", "re", "im"]) };
    for (i, c) in u.spectrum().iter().enumerate() {
        let k = g.wavevector(i);
        let mut row = vec![k[0].to_string()];
        if two {
            row.push(k[1].to_string());
        }
        row.push(fmt_f64(c.re));
        row.push(fmt_f64(c.im));
        t.row(row);
    }
    t.render()
}

/// `x_index,y_index,value` for `Λ_x(y)`.
pub fn germ_csv(g: &Germ) -> String {
    let n = g.grid().len();
    let mut t = Table::new(&["x_index", "y_index", "value"]);
    for x in 0..n {
        for (y, v) in g.field(x).samples().iter().enumerate() {
            t.row(vec![x.to_string(), y.to_string(), fmt_f64(*v)]);
        }
    }
    t.render()
}

// ---------------------------------------------------------------- preparation maps

const PREP_HEADER: &str = "# preparation map R = Id + U, one term of U per line\n# tree -> coefficient, counterterm\n";

/// Writes the nonzero corrections `U(τ)` of `map` on those of `trees` that
/// can carry a rule: no root monomial, not planted, not polynomial. The
/// corrections of the remaining trees follow from these, so the file
/// reloads into the same map.
pub fn write_prep(map: &PreparationMap, trees: &[Tree]) -> Result<String, CliError> {
    let d = map.spec().dim;
    let roots: Vec<Tree> = trees
        .iter()
        .filter(|t| t.monomial().is_zero() && t.as_planted().is_none() && !t.is_polynomial())
        .cloned()
        .collect();
    let mut s = PREP_HEADER.to_string();
    for (t, u) in map.corrections(&roots).map_err(crate::error::num)? {
        for (c, coeff) in u.iter() {
            writeln!(s, "{} -> {}, {}", t.render(d), coeff, c.render(d)).expect("string write");
        }
    }
    Ok(s)
}

/// Reads `tree -> coefficient, counterterm` lines into explicit rules.
/// Coefficients are rationals `p/q` or decimals.
pub fn parse_prep(text: &str, d: usize) -> Result<Vec<(Tree, TreeLin)>, CliError> {
    let mut rules: Vec<(Tree, TreeLin)> = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |m: &str| CliError::Config(format!("preparation map line {}: {m}", no + 1));
        let (lhs, rhs) = line.split_once("->").ok_or_else(|| err("expected tree -> coefficient, counterterm"))?;
        let (c, term) = rhs.split_once(',').ok_or_else(|| err("expected coefficient, counterterm"))?;
        let tree = Tree::parse(lhs.trim(), d).map_err(|e| err(&e.to_string()))?;
        let term = Tree::parse(term.trim(), d).map_err(|e| err(&e.to_string()))?;
        let coeff = parse_q(c.trim()).ok_or_else(|| err("bad coefficient"))?;
        match rules.iter_mut().find(|(t, _)| *t == tree) {
            Some((_, u)) => u.add_term(term, coeff),
            None => rules.push((tree, TreeLin::term(term, coeff))),
        }
    }
    Ok(rules)
}

fn parse_q(s: &str) -> Option<Q> {
    if let Ok(q) = s.parse::<Q>() {
        return Some(q);
    }
    s.parse::<f64>().ok().filter(|x| x.is_finite()).map(roughreg_core::model::rational)
}

// ---------------------------------------------------------------- SVG

/// Static line plot.
#[derive(Clone, Debug, Default)]
pub struct Plot {
    pub title: String,
    pub xlabel: String,
    pub ylabel: String,
    pub series: Vec<(String, Vec<(f64, f64)>)>,
}

const COLORS: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

/// Short axis label.
fn tick(x: f64) -> String {
    if x == 0.0 || (1e-3..1e4).contains(&x.abs()) {
        let s = format!("{x:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{x:.3e}")
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Plot {
    pub fn new(title: &str, xlabel: &str, ylabel: &str) -> Self {
        Plot { title: title.into(), xlabel: xlabel.into(), ylabel: ylabel.into(), series: Vec::new() }
    }

    pub fn line(mut self, name: &str, pts: Vec<(f64, f64)>) -> Self {
        self.series.push((name.into(), pts));
        self
    }

    pub fn render(&self) -> String {
        let (w, h, ml, mr, mt, mb) = (640.0, 400.0, 70.0, 20.0, 40.0, 50.0);
        let pts = || self.series.iter().flat_map(|s| s.1.iter()).filter(|p| p.0.is_finite() && p.1.is_finite());
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in pts() {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if x1 <= x0 {
            x1 = x0 + 1.0;
        }
        if y1 <= y0 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        let px = |x: f64| ml + (x - x0) / (x1 - x0) * (w - ml - mr);
        let py = |y: f64| h - mb - (y - y0) / (y1 - y0) * (h - mt - mb);
        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
        let _ = writeln!(s, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, esc(&self.title));
        let _ = writeln!(
            s,
            r#"<rect x="{ml}" y="{mt}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            w - ml - mr,
            h - mt - mb
        );
        let _ = writeln!(s, r#"<text x="{ml}" y="{}" text-anchor="start">{}</text>"#, h - mb + 16.0, esc(&tick(x0)));
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, w - mr, h - mb + 16.0, esc(&tick(x1)));
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, ml - 4.0, h - mb, esc(&tick(y0)));
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, ml - 4.0, mt + 10.0, esc(&tick(y1)));
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, w / 2.0, h - 12.0, esc(&self.xlabel));
        let _ = writeln!(
            s,
            r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
            h / 2.0,
            h / 2.0,
            esc(&self.ylabel)
        );
        for (i, (name, series)) in self.series.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let coords: Vec<String> = series
                .iter()
                .filter(|p| p.0.is_finite() && p.1.is_finite())
                .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
                .collect();
            let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, coords.join(" "));
            let ly = mt + 16.0 + 16.0 * i as f64;
            let _ = writeln!(s, r#"<text x="{}" y="{ly}" fill="{color}">{}</text>"#, ml + 8.0, esc(name));
        }
        s.push_str("</svg>\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips() {
        for x in [0.0, 1.5, -2.25e-9, 3.0e20, 0.1, 123456.789] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_f64(1e-7), "1e-7");
    }

    #[test]
    fn csv_quotes_commas() {
        let mut t = Table::new(&["tree", "v"]);
        t.row(vec!["I_(1,0)[o]".into(), "1".into()]);
        assert_eq!(t.render(), "tree,v\n\"I_(1,0)[o]\",1\n");
    }

    #[test]
    fn prep_text_parses_rationals_and_decimals() {
        let r = parse_prep("# c\no I[o] -> -3/4, 1\no I[o] -> 0.5, 1\n", 1).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].1.coeff(&Tree::one()), roughreg_core::treealg::q(-1, 4));
        assert!(parse_prep("o I[o] -> x, 1", 1).is_err());
        assert!(parse_prep("o I[o] 1", 1).is_err());
    }
}
