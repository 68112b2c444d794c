//! Clustering SDP instances, partitions, feasible starting points and objectives.

use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use crate::certificate::DualCertificate;
use crate::error::{check_dim, Error, Result};
use crate::kv::KvMap;
use crate::matlin::{min_eigenvalue, trace_inner, SpectralShift, SymMatrix};

/// Default tolerance for [`FeasibilityReport::is_feasible`].
pub const FEASIBILITY_TOL: f64 = 1e-8;

/// A partition of `{0, .., d-1}` into nonempty disjoint groups.
///
/// Stored canonically: each group ascending, groups ordered by their smallest element.
/// Equality is therefore label-permutation invariant.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Partition {
    groups: Vec<Vec<usize>>,
    d: usize,
}

impl Partition {
    pub fn new(groups: Vec<Vec<usize>>, d: usize) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::InvalidInput(
                "partition needs at least one group".into(),
            ));
        }
        let mut seen = vec![false; d];
        for g in &groups {
            if g.is_empty() {
                return Err(Error::InvalidInput("partition has an empty group".into()));
            }
            for &i in g {
                if i >= d {
                    return Err(Error::InvalidInput(format!(
                        "index {i} out of range for d = {d}"
                    )));
                }
                if seen[i] {
                    return Err(Error::InvalidInput(format!("index {i} appears twice")));
                }
                seen[i] = true;
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidInput(format!("index {i} is not covered")));
        }
        let mut groups = groups;
        for g in &mut groups {
            g.sort_unstable();
        }
        groups.sort_by_key(|g| g[0]);
        Ok(Self { groups, d })
    }

    /// Builds a partition from cluster labels; label values need not be contiguous.
    pub fn from_labels(labels: &[usize]) -> Result<Self> {
        let mut map: Vec<(usize, Vec<usize>)> = Vec::new();
        for (i, &l) in labels.iter().enumerate() {
            match map.iter_mut().find(|(lab, _)| *lab == l) {
                Some((_, g)) => g.push(i),
                None => map.push((l, vec![i])),
            }
        }
        Self::new(map.into_iter().map(|(_, g)| g).collect(), labels.len())
    }

    /// Contiguous groups with the given sizes, in order.
    pub fn contiguous(sizes: &[usize]) -> Result<Self> {
        let mut groups = Vec::with_capacity(sizes.len());
        let mut start = 0;
        for &s in sizes {
            groups.push((start..start + s).collect());
            start += s;
        }
        Self::new(groups, start)
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn k(&self) -> usize {
        self.groups.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.groups.iter().map(Vec::len).collect()
    }

    /// Group index of every item.
    pub fn labels(&self) -> Vec<usize> {
        let mut labels = vec![0; self.d];
        for (gi, g) in self.groups.iter().enumerate() {
            for &i in g {
                labels[i] = gi;
            }
        }
        labels
    }

    /// One line per group, comma-separated 1-based indices.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        for g in &self.groups {
            let line: Vec<String> = g.iter().map(|i| (i + 1).to_string()).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("ascii output")
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut groups = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let g = line
                .split(',')
                .map(|t| match t.trim().parse::<usize>() {
                    Ok(v) if v >= 1 => Ok(v - 1),
                    _ => Err(Error::Parse(format!(
                        "line {}: bad index {t:?}",
                        lineno + 1
                    ))),
                })
                .collect::<Result<Vec<_>>>()?;
            groups.push(g);
        }
        let d = groups.iter().flatten().map(|&i| i + 1).max().unwrap_or(0);
        Self::new(groups, d)
    }
}

/// Which SDP variant an instance encodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SdpKind {
    /// Trace-constrained SDP with known number of groups.
    Fixed { k: usize },
    /// Trace-penalized SDP with penalty `kappa_hat`.
    Adaptive { kappa_hat: f64 },
}

/// A clustering SDP: maximize `<-D, U>` (fixed) or `<-D - kappa I, U>` (adaptive).
#[derive(Debug, Clone, PartialEq)]
pub struct SdpInstance {
    d: SymMatrix,
    kind: SdpKind,
}

impl SdpInstance {
    pub fn new(d: SymMatrix, kind: SdpKind) -> Result<Self> {
        let dim = d.dim();
        if !d.is_finite() {
            return Err(Error::InvalidInput("D has non-finite entries".into()));
        }
        match kind {
            SdpKind::Fixed { k } => {
                if k < 2 || k >= dim {
                    return Err(Error::InvalidInput(format!(
                        "fixed-K instance needs 2 <= K < d, got K = {k}, d = {dim}"
                    )));
                }
            }
            SdpKind::Adaptive { kappa_hat } => {
                if !kappa_hat.is_finite() {
                    return Err(Error::InvalidInput("kappa_hat must be finite".into()));
                }
                if dim < 2 {
                    return Err(Error::InvalidInput("adaptive instance needs d >= 2".into()));
                }
            }
        }
        Ok(Self { d, kind })
    }

    pub fn fixed(d: SymMatrix, k: usize) -> Result<Self> {
        Self::new(d, SdpKind::Fixed { k })
    }

    pub fn adaptive(d: SymMatrix, kappa_hat: f64) -> Result<Self> {
        Self::new(d, SdpKind::Adaptive { kappa_hat })
    }

    pub fn dim(&self) -> usize {
        self.d.dim()
    }

    pub fn d_matrix(&self) -> &SymMatrix {
        &self.d
    }

    pub fn kind(&self) -> SdpKind {
        self.kind
    }

    pub fn is_adaptive(&self) -> bool {
        matches!(self.kind, SdpKind::Adaptive { .. })
    }

    /// The matrix `C` with objective `<-C, U>`: `D`, or `D + kappa I` for the adaptive SDP.
    pub fn objective_matrix(&self) -> SymMatrix {
        match self.kind {
            SdpKind::Fixed { .. } => self.d.clone(),
            SdpKind::Adaptive { kappa_hat } => self.d.shifted(kappa_hat),
        }
    }

    /// Strictly feasible start matching the instance kind.
    pub fn feasible_start(&self) -> Result<SpectralShift> {
        match self.kind {
            SdpKind::Fixed { k } => feasible_start_fixed(self.dim(), k),
            SdpKind::Adaptive { .. } => Ok(feasible_start_adaptive(self.dim())),
        }
    }

    /// Reads an instance header (`kind`, `K` or `kappa_hat`, `d`, optional `matrix`).
    ///
    /// The matrix path is resolved relative to the header; it defaults to the header path
    /// with a `.csv` extension.
    pub fn read(header: &Path) -> Result<Self> {
        let kv = KvMap::parse(&fs::read_to_string(header)?)?;
        let matrix_path = match kv.get_str("matrix") {
            Some(m) => header.parent().unwrap_or(Path::new(".")).join(m),
            None => header.with_extension("csv"),
        };
        let d = SymMatrix::read_csv(std::io::BufReader::new(fs::File::open(&matrix_path)?))?;
        if let Some(dim) = kv.get::<usize>("d")? {
            check_dim(dim, d.dim())?;
        }
        let kind = match kv.get_str("kind").unwrap_or("fixed") {
            "fixed" => SdpKind::Fixed {
                k: kv.require("K")?,
            },
            "adaptive" => SdpKind::Adaptive {
                kappa_hat: kv.require("kappa_hat")?,
            },
            other => return Err(Error::Parse(format!("unknown instance kind {other:?}"))),
        };
        Self::new(d, kind)
    }

    /// Writes the header and the matrix CSV (`<header stem>.csv` next to the header).
    pub fn write(&self, header: &Path) -> Result<PathBuf> {
        let matrix_path = header.with_extension("csv");
        let mut kv = KvMap::new();
        kv.insert("d", self.dim());
        match self.kind {
            SdpKind::Fixed { k } => {
                kv.insert("kind", "fixed");
                kv.insert("K", k);
            }
            SdpKind::Adaptive { kappa_hat } => {
                kv.insert("kind", "adaptive");
                kv.insert("kappa_hat", kappa_hat);
            }
        }
        let name = matrix_path
            .file_name()
            .ok_or_else(|| Error::InvalidInput("header path has no file name".into()))?;
        kv.insert("matrix", name.to_string_lossy());
        fs::write(header, kv.to_text())?;
        self.d
            .write_csv(std::io::BufWriter::new(fs::File::create(&matrix_path)?))?;
        Ok(matrix_path)
    }
}

/// `B(G)`: `1/|G_a|` on co-clustered pairs, 0 elsewhere.
pub fn partnership_matrix(g: &Partition) -> SymMatrix {
    let labels = g.labels();
    let sizes = g.sizes();
    SymMatrix::from_fn(g.d(), |i, j| {
        if labels[i] == labels[j] {
            1.0 / sizes[labels[i]] as f64
        } else {
            0.0
        }
    })
}

/// `F_{d,K} = ((K-1)/(d-1)) I + ((d-K)/(d^2-d)) 11'`.
pub fn feasible_start_fixed(d: usize, k: usize) -> Result<SpectralShift> {
    if k < 2 || k >= d {
        return Err(Error::InvalidInput(format!(
            "strictly feasible start needs 2 <= K < d, got K = {k}, d = {d}"
        )));
    }
    let (df, kf) = (d as f64, k as f64);
    Ok(SpectralShift::new(
        (kf - 1.0) / (df - 1.0),
        (df - kf) / (df * df - df),
        d,
    ))
}

/// `F = I/2 + 11'/(2d)`, strictly feasible for the adaptive SDP.
pub fn feasible_start_adaptive(d: usize) -> SpectralShift {
    SpectralShift::new(0.5, 0.5 / d as f64, d)
}

/// Squared Euclidean distances between points.
pub fn distance_matrix_points(points: &[Vec<f64>]) -> Result<SymMatrix> {
    if points.len() < 2 {
        return Err(Error::InvalidInput("need at least two points".into()));
    }
    let p = points[0].len();
    for x in points {
        check_dim(p, x.len())?;
    }
    Ok(SymMatrix::from_fn(points.len(), |i, j| {
        points[i]
            .iter()
            .zip(&points[j])
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }))
}

/// `D = diag(Gamma_hat) - Sigma_hat`.
pub fn difference_matrix_variables(sigma_hat: &SymMatrix, gamma_hat: &[f64]) -> Result<SymMatrix> {
    check_dim(sigma_hat.dim(), gamma_hat.len())?;
    Ok(SymMatrix::from_fn(sigma_hat.dim(), |i, j| {
        let g = if i == j { gamma_hat[i] } else { 0.0 };
        g - sigma_hat.get(i, j)
    }))
}

/// `<-D, U>` for fixed instances, `<-D - kappa I, U>` for adaptive ones.
pub fn primal_objective(inst: &SdpInstance, u: &SymMatrix) -> Result<f64> {
    let base = -trace_inner(inst.d_matrix(), u)?;
    Ok(match inst.kind() {
        SdpKind::Fixed { .. } => base,
        SdpKind::Adaptive { kappa_hat } => base - kappa_hat * u.trace(),
    })
}

/// `2 sum y_a + K y_T` (fixed) or `2 sum y_a` (adaptive).
pub fn dual_objective(inst: &SdpInstance, cert: &DualCertificate) -> Result<f64> {
    check_dim(inst.dim(), cert.y_a.len())?;
    let s: f64 = cert.y_a.iter().sum();
    Ok(match inst.kind() {
        SdpKind::Fixed { k } => 2.0 * s + k as f64 * cert.y_t,
        SdpKind::Adaptive { .. } => 2.0 * s,
    })
}

/// Constraint residuals of a candidate primal point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeasibilityReport {
    pub min_entry: f64,
    /// `max_a |(U1)_a - 1|`.
    pub row_sum_residual: f64,
    /// `|tr U - K|`, absent for the adaptive SDP.
    pub trace_residual: Option<f64>,
    pub lambda_min: f64,
}

impl FeasibilityReport {
    pub fn is_feasible(&self, tol: f64) -> bool {
        self.min_entry >= -tol
            && self.row_sum_residual <= tol
            && self.trace_residual.is_none_or(|t| t <= tol)
            && self.lambda_min >= -tol
    }
}

pub fn check_feasibility(inst: &SdpInstance, u: &SymMatrix) -> Result<FeasibilityReport> {
    check_dim(inst.dim(), u.dim())?;
    let row_sum_residual = u
        .row_sums()
        .iter()
        .map(|r| (r - 1.0).abs())
        .fold(0.0, f64::max);
    let trace_residual = match inst.kind() {
        SdpKind::Fixed { k } => Some((u.trace() - k as f64).abs()),
        SdpKind::Adaptive { .. } => None,
    };
    Ok(FeasibilityReport {
        min_entry: u.min_entry(),
        row_sum_residual,
        trace_residual,
        lambda_min: min_eigenvalue(u)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn part(groups: &[&[usize]], d: usize) -> Partition {
        Partition::new(groups.iter().map(|g| g.to_vec()).collect(), d).unwrap()
    }

    #[test]
    fn partition_validation() {
        assert!(Partition::new(vec![vec![0], vec![0, 1]], 2).is_err());
        assert!(Partition::new(vec![vec![0]], 2).is_err());
        assert!(Partition::new(vec![vec![0, 1], vec![]], 2).is_err());
        assert!(Partition::new(vec![vec![0, 5]], 2).is_err());
        assert_eq!(part(&[&[2], &[1, 0]], 3), part(&[&[0, 1], &[2]], 3));
        assert_eq!(
            Partition::from_labels(&[7, 7, 3]).unwrap(),
            part(&[&[0, 1], &[2]], 3)
        );
    }

    #[test]
    fn partition_file_round_trip() {
        let p = part(&[&[0, 3], &[1, 2, 4]], 5);
        let text = p.to_text();
        assert_eq!(text, "1,4\n2,3,5\n");
        assert_eq!(Partition::read_from(text.as_bytes()).unwrap(), p);
        assert!(Partition::read_from("0,1\n".as_bytes()).is_err());
    }

    #[test]
    fn partnership_examples() {
        let b = partnership_matrix(&part(&[&[0, 1], &[2]], 3));
        let expected = [[0.5, 0.5, 0.0], [0.5, 0.5, 0.0], [0.0, 0.0, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(b.get(i, j), expected[i][j]);
            }
        }
        let singletons = Partition::from_labels(&[0, 1, 2, 3]).unwrap();
        assert_eq!(partnership_matrix(&singletons), SymMatrix::identity(4));
    }

    #[test]
    fn feasible_start_examples() {
        let f = feasible_start_fixed(5, 2).unwrap();
        assert!((f.a - 0.25).abs() < 1e-15 && (f.b - 0.15).abs() < 1e-15);
        let f = feasible_start_fixed(3, 2).unwrap();
        assert!((f.a - 0.5).abs() < 1e-15 && (f.b - 1.0 / 6.0).abs() < 1e-15);
        assert!((f.materialize().trace() - 2.0).abs() < 1e-15);
        let f = feasible_start_fixed(10, 4).unwrap();
        assert!((f.structured_forms().unwrap().inverse.norm2() - 3.0).abs() < 1e-12);
        assert!(feasible_start_fixed(5, 1).is_err());
        assert!(feasible_start_fixed(5, 5).is_err());
    }

    #[test]
    fn adaptive_start_examples() {
        let f = feasible_start_adaptive(2);
        assert_eq!((f.a, f.b), (0.5, 0.25));
        assert_eq!((f.eig_perp(), f.eig_ones()), (0.5, 1.0));
        let inv = feasible_start_adaptive(4)
            .structured_forms()
            .unwrap()
            .inverse;
        assert!((inv.a - 2.0).abs() < 1e-15 && (inv.b + 0.25).abs() < 1e-15);
    }

    #[test]
    fn distance_examples() {
        let d = distance_matrix_points(&[vec![0.0], vec![3.0]]).unwrap();
        assert_eq!((d.get(0, 1), d.get(0, 0)), (9.0, 0.0));
        let z = distance_matrix_points(&vec![vec![1.0, 2.0]; 3]).unwrap();
        assert_eq!(z, SymMatrix::zeros(3));
        assert!(distance_matrix_points(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn difference_examples() {
        let d = difference_matrix_variables(&SymMatrix::identity(3), &[0.0; 3]).unwrap();
        assert_eq!(d, SymMatrix::identity(3).scale(-1.0));
        let s = SymMatrix::from_fn(3, |i, j| (i + j) as f64 + 1.0);
        let d = difference_matrix_variables(&s, &s.diagonal()).unwrap();
        assert!(d.diagonal().iter().all(|&x| x == 0.0));
        assert!(difference_matrix_variables(&s, &[0.0; 2]).is_err());
    }

    #[test]
    fn objectives_and_feasibility() {
        let g = part(&[&[0, 1], &[2, 3], &[4]], 5);
        let b = partnership_matrix(&g);
        let inst = SdpInstance::fixed(b.scale(-1.0), 3).unwrap();
        assert!((primal_objective(&inst, &b).unwrap() - 3.0).abs() < 1e-14);
        assert_eq!(primal_objective(&inst, &SymMatrix::zeros(5)).unwrap(), 0.0);
        let rep = check_feasibility(&inst, &b).unwrap();
        assert_eq!(rep.row_sum_residual, 0.0);
        assert_eq!(rep.trace_residual, Some(0.0));
        assert!(rep.is_feasible(FEASIBILITY_TOL));
        let rep = check_feasibility(&inst, &SymMatrix::identity(5)).unwrap();
        assert_eq!(rep.trace_residual, Some(2.0));
        let adapt = SdpInstance::adaptive(b.scale(-1.0), 0.5).unwrap();
        assert!((primal_objective(&adapt, &b).unwrap() - (3.0 - 1.5)).abs() < 1e-14);
        assert!(SdpInstance::fixed(SymMatrix::zeros(4), 1).is_err());
        assert!(SdpInstance::fixed(SymMatrix::zeros(4), 4).is_err());
    }

    #[test]
    fn instance_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = SymMatrix::from_fn(4, |i, j| 0.1 * (i as f64) - 0.37 * j as f64);
        for inst in [
            SdpInstance::fixed(d.clone(), 2).unwrap(),
            SdpInstance::adaptive(d.clone(), 1.25).unwrap(),
        ] {
            let header = dir.path().join("inst.txt");
            inst.write(&header).unwrap();
            assert_eq!(SdpInstance::read(&header).unwrap(), inst);
        }
    }
}
