//! Per-iteration progress records and their CSV form.

use std::io::Write;

use crate::error::Result;

pub const TRACE_HEADER: &str =
    "iter,f_mu,primal_obj_projected,constraint_residual,restarts,wall_ms";

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub f_mu: f64,
    pub primal_obj_projected: f64,
    pub constraint_residual: f64,
    pub restarts: usize,
    /// Absent when timing is disabled, which keeps traces reproducible.
    pub wall_ms: Option<f64>,
}

pub fn write_trace<W: Write>(rows: &[TraceRow], mut w: W) -> Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    for r in rows {
        let wall = r.wall_ms.map(|x| format!("{x:.3}")).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{:e},{},{}",
            r.iter, r.f_mu, r.primal_obj_projected, r.constraint_residual, r.restarts, wall
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let rows = vec![TraceRow {
            iter: 3,
            f_mu: 0.5,
            primal_obj_projected: 2.0,
            constraint_residual: 0.0,
            restarts: 1,
            wall_ms: None,
        }];
        let mut buf = Vec::new();
        write_trace(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], TRACE_HEADER);
        assert_eq!(lines[1], "3,0.5,2,0e0,1,");
    }
}
