//! Plain-text file formats: CSV reports, coordinate-triplet matrix export,
//! whitespace-separated dense instances and the mesh dump. All floats are
//! written with 17 significant digits so files round-trip losslessly.

use pvi_core::abstract_vi::{BoundReport, DenseVIInstance};
use pvi_core::assembly::DiscreteObstacleProblem;
use pvi_core::linalg::Mat;
use pvi_core::mesh::{MapKind, Mesh};
use pvi_core::study::{eoc, ConvergenceRecord, ErrorField};
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else {
        format!("{x:.16e}")
    }
}

/// One verification row: trial,lhs,rhs,margin,holds.
pub fn bound_reports_csv(reports: &[(usize, BoundReport)]) -> String {
    let mut out = String::from("trial,lhs,rhs,margin,holds\n");
    for (trial, r) in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            trial,
            fmt_f64(r.lhs),
            fmt_f64(r.rhs),
            fmt_f64(r.margin),
            r.holds
        );
    }
    out
}

/// Study table: level,N,h,err_total,err_quad,eoc_total,eoc_quad with the
/// windowed rates recomputed up to each row.
pub fn study_csv(records: &[ConvergenceRecord], window: usize) -> String {
    let mut out = String::from("level,N,h,err_total,err_quad,eoc_total,eoc_quad\n");
    for k in 0..records.len() {
        let upto = &records[..=k];
        let eoc_total = eoc(upto, ErrorField::Total, window).unwrap_or(f64::NAN);
        let eoc_quad = eoc(upto, ErrorField::Quad, window).unwrap_or(f64::NAN);
        let r = &records[k];
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.level,
            r.n_dof,
            fmt_f64(r.h),
            fmt_f64(r.err_total),
            fmt_f64(r.err_quad),
            fmt_f64(eoc_total),
            fmt_f64(eoc_quad)
        );
    }
    out
}

/// Log-log pairs for plotting: log10(N) against log10 of both errors.
pub fn study_loglog_csv(records: &[ConvergenceRecord]) -> String {
    let mut out = String::from("log10_N,log10_err_total,log10_err_quad\n");
    for r in records {
        let lg = |x: f64| {
            if x > 0.0 {
                fmt_f64(x.log10())
            } else {
                "nan".to_string()
            }
        };
        let _ = writeln!(
            out,
            "{},{},{}",
            fmt_f64((r.n_dof as f64).log10()),
            lg(r.err_total),
            lg(r.err_quad)
        );
    }
    out
}

/// Coordinate-triplet export of the assembled matrix: "row col value".
pub fn matrix_triplets(problem: &DiscreteObstacleProblem) -> String {
    let mut out = String::new();
    let k = &problem.k_mat;
    for r in 0..k.n {
        let (cols, vals) = k.row(r);
        for (c, v) in cols.iter().zip(vals) {
            let _ = writeln!(out, "{} {} {}", r, c, fmt_f64(*v));
        }
    }
    out
}

/// Dense instance in the plain-text matrix format: a "n m" header line, the
/// matrix rows, then the load, bounds and constrained flags.
pub fn write_dense_instance(instance: &DenseVIInstance) -> String {
    let n = instance.dim();
    let mut out = format!("{n} {n}\n");
    for i in 0..n {
        let row: Vec<String> = (0..n).map(|j| fmt_f64(instance.a[(i, j)])).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    let ell: Vec<String> = instance.ell.iter().map(|&x| fmt_f64(x)).collect();
    let _ = writeln!(out, "{}", ell.join(" "));
    let psi: Vec<String> = instance.psi.iter().map(|&x| fmt_f64(x)).collect();
    let _ = writeln!(out, "{}", psi.join(" "));
    let con: Vec<String> = instance
        .constrained
        .iter()
        .map(|&c| if c { "1" } else { "0" }.to_string())
        .collect();
    let _ = writeln!(out, "{}", con.join(" "));
    out
}

pub fn read_dense_instance(text: &str) -> io::Result<DenseVIInstance> {
    let mut tokens = text.split_whitespace();
    let mut next_f64 = |what: &str| -> io::Result<f64> {
        tokens
            .next()
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, format!("missing {what}")))?
            .parse::<f64>()
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    };
    let n = next_f64("rows")? as usize;
    let m = next_f64("cols")? as usize;
    if n != m {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            "instance matrix must be square",
        ));
    }
    let mut a = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = next_f64("matrix entry")?;
        }
    }
    let ell: Vec<f64> = (0..n)
        .map(|_| next_f64("load entry"))
        .collect::<io::Result<_>>()?;
    let psi: Vec<f64> = (0..n)
        .map(|_| next_f64("bound entry"))
        .collect::<io::Result<_>>()?;
    let constrained: Vec<bool> = (0..n)
        .map(|_| next_f64("constrained flag").map(|v| v != 0.0))
        .collect::<io::Result<_>>()?;
    Ok(DenseVIInstance {
        a,
        ell,
        psi,
        constrained,
    })
}

/// Mesh dump: "nv ne" header, vertex lines, then per element a
/// "kind v0 v1 v2 v3 level" line followed by the map coefficient grids.
pub fn mesh_dump(mesh: &Mesh) -> String {
    let mut out = format!("{} {}\n", mesh.n_vertices(), mesh.n_elements());
    for v in &mesh.vertices {
        let _ = writeln!(out, "{} {}", fmt_f64(v[0]), fmt_f64(v[1]));
    }
    for el in &mesh.elements {
        let kind = match el.map.kind {
            MapKind::Linear => "linear",
            MapKind::Bilinear => "bilinear",
            MapKind::Curved6 => "curved6",
        };
        let _ = writeln!(
            out,
            "{} {} {} {} {} {}",
            kind, el.verts[0], el.verts[1], el.verts[2], el.verts[3], el.level
        );
        for poly in [&el.map.x, &el.map.y] {
            let mut row = format!("{} {}", poly.nx, poly.ny);
            for c in &poly.c {
                let _ = write!(row, " {}", fmt_f64(*c));
            }
            let _ = writeln!(out, "{row}");
        }
    }
    out
}

/// Gauss rule table as CSV: node,weight.
pub fn rule_csv(rule: &pvi_core::quadrature::QuadRule1D) -> String {
    let mut out = String::from("node,weight\n");
    for (x, w) in rule.nodes.iter().zip(&rule.weights) {
        let _ = writeln!(out, "{},{}", fmt_f64(*x), fmt_f64(*w));
    }
    out
}

pub fn write_file(dir: &Path, name: &str, content: &str) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), content)
}
