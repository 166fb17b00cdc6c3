//! CSV and text output with fixed number formatting.

use std::io::{Read, Write};

use gcstiff::identification::{CalibrationSample, ParameterEstimate};
use gcstiff::workspace::{Stats, StrategyComparison};
use gcstiff::{Error, Map, Result, Wrench64};
use nalgebra::{DVector, Vector3, Vector6};

/// `%.9g`-style: 9 significant digits, trailing zeros dropped, exponent
/// form outside `[1e-5, 1e9)`.
pub fn fmt_g(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-5..9).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{mantissa}e{sign}{:02}", exp.abs());
    }
    let decimals = (8 - exp).max(0) as usize;
    trim_zeros(&format!("{x:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out)
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Parse(format!("{other:?}")),
    }
}

fn mm(x: f64) -> String {
    fmt_g(x * 1000.0)
}

/// One row per node, `v` outer. Flagged nodes leave the numeric columns
/// after the node position empty.
pub fn write_map<W: Write>(mut out: W, map: &Map) -> Result<()> {
    writeln!(out, "# u,v,x,y,z,dx,dy,dz,mag_comp,mag_classical,diff in mm; q in rad")?;
    let dof = map.valid().next().map_or(0, |n| n.q.len());
    let mut w = csv_writer(out);
    let mut header: Vec<String> = ["u", "v", "x", "y", "z"].map(String::from).to_vec();
    header.extend((1..=dof).map(|i| format!("q{i}")));
    header.extend(["dx", "dy", "dz", "mag_comp", "mag_classical", "diff", "flag"].map(String::from));
    w.write_record(&header).map_err(csv_err)?;
    for node in &map.nodes {
        let mut row = vec![mm(node.u), mm(node.v), mm(node.position.x), mm(node.position.y), mm(node.position.z)];
        match &node.result {
            Some(r) => {
                row.extend(r.q.iter().map(|q| fmt_g(*q)));
                row.extend(r.compensated.d_position.iter().map(|d| mm(*d)));
                row.extend([mm(r.mag_compensated()), mm(r.mag_classical()), mm(r.difference())]);
            }
            None => row.extend(std::iter::repeat_n(String::new(), dof + 6)),
        }
        row.push(node.flag.as_str().into());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_comparison<W: Write>(mut out: W, cmp: &StrategyComparison<f64>) -> Result<()> {
    writeln!(out, "# u,v,x,y,z,mag_comp,mag_classical,residual in mm")?;
    let mut w = csv_writer(out);
    w.write_record(["u", "v", "x", "y", "z", "mag_comp", "mag_classical", "residual", "flag"])
        .map_err(csv_err)?;
    for (node, residual) in cmp.map.nodes.iter().zip(&cmp.residuals) {
        let mut row = vec![mm(node.u), mm(node.v), mm(node.position.x), mm(node.position.y), mm(node.position.z)];
        match (&node.result, residual) {
            (Some(r), Some(res)) => row.extend([mm(r.mag_compensated()), mm(r.mag_classical()), mm(*res)]),
            _ => row.extend(std::iter::repeat_n(String::new(), 3)),
        }
        row.push(node.flag.as_str().into());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// `name: min .. max mm, mean .. mm (n nodes)` or a note when empty.
pub fn stats_line(name: &str, stats: Option<Stats<f64>>) -> String {
    match stats {
        Some(s) => format!(
            "{name}: min {} mm, max {} mm, mean {} mm over {} nodes",
            mm(s.min),
            mm(s.max),
            mm(s.mean),
            s.count
        ),
        None => format!("{name}: no valid nodes"),
    }
}

const WRENCH_COLUMNS: [&str; 6] = ["fx", "fy", "fz", "mx", "my", "mz"];

pub fn write_samples<W: Write>(mut out: W, samples: &[CalibrationSample]) -> Result<()> {
    writeln!(out, "# q in rad; fx,fy,fz in N; mx,my,mz in N*m; dx,dy,dz,s in mm")?;
    let dof = samples.first().map_or(0, |s| s.q.len());
    let with_s = samples.first().is_some_and(|s| s.spring_length.is_some());
    if samples.iter().any(|s| s.q.len() != dof || s.spring_length.is_some() != with_s) {
        return Err(Error::InvalidConfiguration("samples have mixed layouts".into()));
    }
    let mut w = csv_writer(out);
    let mut header: Vec<String> = (1..=dof).map(|i| format!("q{i}")).collect();
    header.extend(WRENCH_COLUMNS.map(String::from));
    header.extend(["dx", "dy", "dz"].map(String::from));
    if with_s {
        header.push("s".into());
    }
    w.write_record(&header).map_err(csv_err)?;
    for s in samples {
        let mut row: Vec<String> = s.q.iter().map(|q| fmt_g(*q)).collect();
        row.extend(s.wrench.to_vector().iter().map(|f| fmt_g(*f)));
        row.extend(s.measured_dp.iter().map(|d| mm(*d)));
        if let Some(len) = s.spring_length {
            row.push(mm(len));
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads samples written by [`write_samples`]; columns are located by name.
pub fn read_samples<R: Read>(input: R) -> Result<Vec<CalibrationSample>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(input);
    let headers = r.headers().map_err(csv_err)?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let q_cols: Vec<usize> = (1..).map_while(|i| col(&format!("q{i}"))).collect();
    let need = |name: &str| col(name).ok_or_else(|| Error::Parse(format!("samples: missing column {name}")));
    if q_cols.is_empty() {
        return Err(Error::Parse("samples: missing column q1".into()));
    }
    let f_cols = WRENCH_COLUMNS.iter().map(|n| need(n)).collect::<Result<Vec<_>>>()?;
    let d_cols = ["dx", "dy", "dz"].iter().map(|n| need(n)).collect::<Result<Vec<_>>>()?;
    let s_col = col("s");

    let mut samples = Vec::new();
    for (row, record) in r.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(row + 2, |p| p.line() as usize);
        let num = |c: usize| -> Result<f64> {
            let field = record.get(c).unwrap_or("");
            field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse(format!("samples line {line}, column {}: bad number {field:?}", &headers[c])))
        };
        let q = q_cols.iter().map(|&c| num(c)).collect::<Result<Vec<_>>>()?;
        let f = f_cols.iter().map(|&c| num(c)).collect::<Result<Vec<_>>>()?;
        let d = d_cols.iter().map(|&c| num(c)).collect::<Result<Vec<_>>>()?;
        samples.push(CalibrationSample {
            q: DVector::from_vec(q),
            wrench: Wrench64::from_vector(&Vector6::from_column_slice(&f)),
            measured_dp: Vector3::from_column_slice(&d) / 1000.0,
            spring_length: s_col.map(&num).transpose()?.map(|s| s / 1000.0),
        });
    }
    Ok(samples)
}

/// Table of estimates with confidence half-widths in display units.
pub fn write_estimate<W: Write>(mut out: W, est: &ParameterEstimate) -> Result<()> {
    let pct = fmt_g(est.confidence * 100.0);
    writeln!(out, "{:<10}{:<14}{:>16}{:>16}  identifiable", "parameter", "units", "value", format!("CI{pct} (±)"))?;
    let joints = est.layout.joints;
    for (i, name) in est.layout.names().iter().enumerate() {
        let (unit, scale) = match i {
            _ if i < joints => ("rad/(N*m)", 1.0),
            _ if i == joints => ("m/N", 1.0),
            _ => ("mm", 1000.0),
        };
        writeln!(
            out,
            "{:<10}{:<14}{:>16}{:>16}  {}",
            name,
            unit,
            fmt_g(est.values[i] * scale),
            fmt_g(est.ci[i] * scale),
            if est.identifiable[i] { "yes" } else { "no" }
        )?;
    }
    writeln!(
        out,
        "residual rms {} mm over {} equations, {} iterations",
        mm(est.residual_rms),
        est.residual_count,
        est.iterations
    )?;
    Ok(())
}
