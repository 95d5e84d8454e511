//! CSV and JSON artifacts.
//!
//! Every real is written with `{:.16e}` (17 significant digits), so values
//! read back are bit-identical to the ones written.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{DensityMatrix, FockSpace};
use crate::krotov::IterationRecord;
use crate::observables::WignerGrid;
use crate::propagate::{ControlSet, TimeGrid};
use crate::scalar::{Real, C};

/// Full-precision decimal rendering used by every writer.
pub fn fmt_real<T: Real>(x: T) -> String {
    format!("{:.16e}", x)
}

fn parse_real<T: Real>(field: &str, what: &str) -> Result<T> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| Error::Format(format!("{what}: cannot parse {field:?} as a number")))?;
    T::from_f64(v).ok_or_else(|| Error::Format(format!("{what}: {v} not representable")))
}

fn write_table<I>(path: &Path, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Header and data rows of a CSV file, fields trimmed.
fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.iter().map(str::to_owned).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec.map_err(csv_err)?.iter().map(str::to_owned).collect());
    }
    Ok((header, rows))
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}

fn expect_header(found: &[String], expected: &[String], file: &str) -> Result<()> {
    if found != expected {
        return Err(Error::Format(format!(
            "{file} header: expected [{}], found [{}]",
            expected.join(", "),
            found.join(", ")
        )));
    }
    Ok(())
}

fn strings(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

pub fn controls_header(labels: &[String]) -> Vec<String> {
    std::iter::once("t".to_string()).chain(labels.iter().cloned()).collect()
}

/// One row per interval, stamped with its left endpoint.
pub fn write_controls<T: Real>(path: &Path, controls: &ControlSet<T>) -> Result<()> {
    let grid = controls.grid();
    let rows = (0..controls.n_steps()).map(|k| {
        std::iter::once(fmt_real(grid.time(k)))
            .chain(controls.interval(k).into_iter().map(fmt_real))
            .collect()
    });
    write_table(path, &controls_header(controls.labels()), rows)
}

/// Reads a controls file and checks it against the expected grid and labels.
pub fn read_controls<T: Real>(path: &Path, grid: TimeGrid<T>, labels: &[String]) -> Result<ControlSet<T>> {
    let (header, rows) = read_table(path)?;
    expect_header(&header, &controls_header(labels), "controls")?;
    if rows.len() != grid.n_steps() {
        return Err(Error::LengthMismatch {
            what: "controls rows (n_steps)",
            expected: grid.n_steps(),
            found: rows.len(),
        });
    }
    let tol = grid.dt() * crate::scalar::lit(1e-6);
    let mut values = vec![Vec::with_capacity(rows.len()); labels.len()];
    for (k, row) in rows.iter().enumerate() {
        let t: T = parse_real(&row[0], "controls t")?;
        if (t - grid.time(k)).abs() > tol {
            return Err(Error::Format(format!(
                "controls row {k}: t = {t} does not match grid time {}",
                grid.time(k)
            )));
        }
        for (l, field) in row[1..].iter().enumerate() {
            values[l].push(parse_real(field, &labels[l])?);
        }
    }
    ControlSet::new(grid, labels.to_vec(), values)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow<T> {
    pub iteration: usize,
    pub j_t: T,
    pub running_cost: T,
}

impl<T: Real> From<&IterationRecord<T>> for HistoryRow<T> {
    fn from(r: &IterationRecord<T>) -> Self {
        Self {
            iteration: r.iteration,
            j_t: r.j_t,
            running_cost: r.running_cost,
        }
    }
}

pub fn write_history<T: Real>(path: &Path, rows: &[HistoryRow<T>]) -> Result<()> {
    let rows = rows
        .iter()
        .map(|r| vec![r.iteration.to_string(), fmt_real(r.j_t), fmt_real(r.running_cost)]);
    write_table(path, &strings(&["iteration", "J_T", "running_cost"]), rows)
}

pub fn read_history<T: Real>(path: &Path) -> Result<Vec<HistoryRow<T>>> {
    let (header, rows) = read_table(path)?;
    expect_header(&header, &strings(&["iteration", "J_T", "running_cost"]), "history")?;
    rows.iter()
        .map(|row| {
            Ok(HistoryRow {
                iteration: row[0]
                    .parse()
                    .map_err(|_| Error::Format(format!("history: bad iteration {:?}", row[0])))?,
                j_t: parse_real(&row[1], "J_T")?,
                running_cost: parse_real(&row[2], "running_cost")?,
            })
        })
        .collect()
}

/// Generic numeric table: a header and equally long real columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Columns<T> {
    pub names: Vec<String>,
    pub columns: Vec<Vec<T>>,
}

impl<T: Real> Columns<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            columns: Vec::new(),
        }
    }

    pub fn with(mut self, name: impl Into<String>, column: Vec<T>) -> Self {
        self.names.push(name.into());
        self.columns.push(column);
        self
    }

    pub fn column(&self, name: &str) -> Option<&[T]> {
        self.names.iter().position(|n| n == name).map(|i| self.columns[i].as_slice())
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let n = self.n_rows();
        for (name, c) in self.names.iter().zip(&self.columns) {
            if c.len() != n {
                return Err(Error::Format(format!("column {name} has {} rows, expected {n}", c.len())));
            }
        }
        let rows = (0..n).map(|i| self.columns.iter().map(|c| fmt_real(c[i])).collect());
        write_table(path, &self.names, rows)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let (names, rows) = read_table(path)?;
        let mut columns = vec![Vec::with_capacity(rows.len()); names.len()];
        for row in &rows {
            for (c, (field, name)) in row.iter().zip(&names).enumerate() {
                columns[c].push(parse_real(field, name)?);
            }
        }
        Ok(Self { names, columns })
    }
}

impl<T: Real> Default for Columns<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// `t, fidelity_closed, fidelity_open`; either fidelity column may be absent.
pub fn fidelity_table<T: Real>(times: Vec<T>, closed: Option<Vec<T>>, open: Option<Vec<T>>) -> Columns<T> {
    let mut c = Columns::new().with("t", times);
    if let Some(v) = closed {
        c = c.with("fidelity_closed", v);
    }
    if let Some(v) = open {
        c = c.with("fidelity_open", v);
    }
    c
}

/// `t, n_1, .., n_N, norm`; `populations[k][j]` is site `j` at time `k`.
pub fn population_table<T: Real>(times: Vec<T>, populations: &[Vec<T>], norms: Vec<T>) -> Columns<T> {
    let n_sites = populations.first().map_or(0, Vec::len);
    let mut c = Columns::new().with("t", times);
    for j in 0..n_sites {
        c = c.with(format!("n_{}", j + 1), populations.iter().map(|p| p[j]).collect());
    }
    c.with("norm", norms)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint<T> {
    pub lambda: T,
    pub gamma: T,
    pub final_fidelity: T,
}

pub fn sweep_table<T: Real>(points: &[SweepPoint<T>]) -> Columns<T> {
    Columns::new()
        .with("lambda", points.iter().map(|p| p.lambda).collect())
        .with("gamma", points.iter().map(|p| p.gamma).collect())
        .with("final_fidelity", points.iter().map(|p| p.final_fidelity).collect())
}

pub fn read_sweep<T: Real>(path: &Path) -> Result<Vec<SweepPoint<T>>> {
    let c = Columns::<T>::read(path)?;
    expect_header(&c.names, &strings(&["lambda", "gamma", "final_fidelity"]), "sweep")?;
    Ok((0..c.n_rows())
        .map(|i| SweepPoint {
            lambda: c.columns[0][i],
            gamma: c.columns[1][i],
            final_fidelity: c.columns[2][i],
        })
        .collect())
}

/// Metadata written next to a Wigner CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WignerSidecar {
    pub mode: usize,
    pub time: Option<f64>,
    pub x_axis: Vec<f64>,
    pub p_axis: Vec<f64>,
    pub convention: String,
    pub max_imaginary_residue: f64,
}

pub const WIGNER_CONVENTION: &str = "x=(a+a^dag)/sqrt2, p=(a-a^dag)/(i sqrt2), int W dx dp = 1";

/// `x, p, W`, row-major (x outer), plus a JSON sidecar.
pub fn write_wigner<T: Real>(csv_path: &Path, json_path: &Path, grid: &WignerGrid<T>) -> Result<()> {
    let np = grid.p_axis.len();
    let rows = grid.values.iter().enumerate().map(|(i, w)| {
        vec![
            fmt_real(grid.x_axis[i / np]),
            fmt_real(grid.p_axis[i % np]),
            fmt_real(*w),
        ]
    });
    write_table(csv_path, &strings(&["x", "p", "W"]), rows)?;
    let f64s = |v: &[T]| v.iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).collect();
    let sidecar = WignerSidecar {
        mode: grid.mode,
        time: grid.time.and_then(|t| t.to_f64()),
        x_axis: f64s(&grid.x_axis),
        p_axis: f64s(&grid.p_axis),
        convention: WIGNER_CONVENTION.to_string(),
        max_imaginary_residue: grid.max_imaginary_residue.to_f64().unwrap_or(f64::NAN),
    };
    write_json(json_path, &sidecar)
}

/// Rebuilds a grid from its CSV and sidecar.
pub fn read_wigner<T: Real>(csv_path: &Path, json_path: &Path) -> Result<WignerGrid<T>> {
    let side: WignerSidecar = read_json(json_path)?;
    let c = Columns::<T>::read(csv_path)?;
    expect_header(&c.names, &strings(&["x", "p", "W"]), "wigner")?;
    let expected = side.x_axis.len() * side.p_axis.len();
    if c.n_rows() != expected {
        return Err(Error::LengthMismatch {
            what: "wigner rows",
            expected,
            found: c.n_rows(),
        });
    }
    let np = side.p_axis.len();
    let x_axis: Vec<T> = (0..side.x_axis.len()).map(|ix| c.columns[0][ix * np]).collect();
    let p_axis: Vec<T> = c.columns[1][..np].to_vec();
    Ok(WignerGrid {
        x_axis,
        p_axis,
        values: c.columns[2].clone(),
        mode: side.mode,
        time: side.time.map(crate::scalar::lit),
        max_imaginary_residue: crate::scalar::lit(side.max_imaginary_residue),
    })
}

/// Serialized density matrix: shape of the space plus row-major entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityFile {
    pub n_modes: usize,
    pub cutoff: usize,
    pub max_excitation: Option<usize>,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl DensityFile {
    pub fn from_density<T: Real>(rho: &DensityMatrix<T>) -> Self {
        let s = rho.space();
        Self {
            n_modes: s.n_modes(),
            cutoff: s.cutoff(),
            max_excitation: s.max_excitation(),
            re: rho.data().iter().map(|z| z.re.to_f64().unwrap_or(f64::NAN)).collect(),
            im: rho.data().iter().map(|z| z.im.to_f64().unwrap_or(f64::NAN)).collect(),
        }
    }

    pub fn to_density<T: Real>(&self) -> Result<DensityMatrix<T>> {
        let space: Arc<FockSpace> = match self.max_excitation {
            Some(cap) => FockSpace::excitation_capped(self.n_modes, self.cutoff, cap)?,
            None => FockSpace::new(self.n_modes, self.cutoff)?,
        };
        if self.re.len() != self.im.len() {
            return Err(Error::Format("density file: re/im lengths differ".into()));
        }
        let data = self
            .re
            .iter()
            .zip(&self.im)
            .map(|(&r, &i)| C::new(crate::scalar::lit(r), crate::scalar::lit(i)))
            .collect();
        DensityMatrix::new(space, data)
    }
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Format(e.to_string()))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<S: for<'de> Deserialize<'de>>(path: &Path) -> Result<S> {
    let f = File::open(path)?;
    serde_json::from_reader(std::io::BufReader::new(f)).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{coherent_amplitudes, product_state, vacuum_amplitudes};
    use crate::model::control_labels;
    use crate::observables::wigner;
    use proptest::prelude::*;

    fn sample_controls(seed: u64) -> ControlSet<f64> {
        let grid = TimeGrid::new(5.0, 40).unwrap();
        let labels = control_labels(3);
        let mut c = ControlSet::zeros(grid, labels);
        let mut x = seed as f64 * 0.37 + 0.1;
        for l in 0..c.n_controls() {
            for k in 0..c.n_steps() {
                x = (x * 7.123 + 0.31).sin() * 1e3;
                c.set(l, k, x / 3.0e2);
            }
        }
        c
    }

    #[test]
    fn controls_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("controls.csv");
        let c = sample_controls(1);
        write_controls(&path, &c).unwrap();
        let back = read_controls(&path, *c.grid(), c.labels()).unwrap();
        assert_eq!(back, c);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("t,omega_1,omega_2,omega_3,k_1,k_2\n"));
        assert_eq!(text.lines().count(), 41);
    }

    #[test]
    fn controls_reader_accepts_spaced_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        std::fs::write(&path, "t, a, b\n0.0, 1.0, 2.0\n0.5, 3.0, 4.0\n").unwrap();
        let grid = TimeGrid::new(1.0, 2).unwrap();
        let c = read_controls::<f64>(&path, grid, &strings(&["a", "b"])).unwrap();
        assert_eq!(c.row(1), &[2.0, 4.0]);
    }

    #[test]
    fn controls_reader_names_row_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("controls.csv");
        let c = sample_controls(2);
        write_controls(&path, &c).unwrap();
        let grid = TimeGrid::new(5.0, 50).unwrap();
        let err = read_controls(&path, grid, c.labels()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("50") && msg.contains("40"), "{msg}");
    }

    #[test]
    fn controls_reader_rejects_wrong_labels_and_times() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("controls.csv");
        let c = sample_controls(3);
        write_controls(&path, &c).unwrap();
        let wrong = control_labels(2);
        assert!(matches!(read_controls(&path, *c.grid(), &wrong), Err(Error::Format(_))));
        let stretched = TimeGrid::new(6.0, 40).unwrap();
        assert!(matches!(read_controls(&path, stretched, c.labels()), Err(Error::Format(_))));
    }

    #[test]
    fn history_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        let rows = vec![
            HistoryRow { iteration: 0, j_t: 0.93, running_cost: 0.0 },
            HistoryRow { iteration: 1, j_t: 0.1 / 3.0, running_cost: 1e-17 },
        ];
        write_history(&path, &rows).unwrap();
        assert_eq!(read_history::<f64>(&path).unwrap(), rows);
    }

    #[test]
    fn fidelity_table_omits_missing_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        fidelity_table(vec![0.0, 1.0], None, Some(vec![1.0, 0.9])).write(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("t,fidelity_open\n"));
        let c = Columns::<f64>::read(&path).unwrap();
        assert_eq!(c.column("fidelity_open").unwrap(), &[1.0, 0.9]);
        assert!(c.column("fidelity_closed").is_none());
    }

    #[test]
    fn population_header() {
        let t = population_table(vec![0.0], &[vec![1.0, 2.0, 3.0]], vec![1.0]);
        assert_eq!(t.names, strings(&["t", "n_1", "n_2", "n_3", "norm"]));
    }

    #[test]
    fn sweep_round_trip_keeps_nan() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let pts = vec![
            SweepPoint { lambda: 0.0, gamma: 0.2, final_fidelity: 1.0 - 1e-9 },
            SweepPoint { lambda: 0.025, gamma: 0.2, final_fidelity: f64::NAN },
        ];
        sweep_table(&pts).write(&path).unwrap();
        let back = read_sweep::<f64>(&path).unwrap();
        assert_eq!(back[0], pts[0]);
        assert!(back[1].final_fidelity.is_nan());
    }

    #[test]
    fn wigner_round_trip() {
        let space = FockSpace::new(1, 8).unwrap();
        let psi = product_state::<f64>(&space, &[coherent_amplitudes(C::new(0.5, 0.2), 8).amplitudes]).unwrap();
        let mut g = wigner(&psi.projector(), (-4.0, 4.0), 9).unwrap();
        g.time = Some(2.5);
        let dir = tempfile::tempdir().unwrap();
        let (c, j) = (dir.path().join("w.csv"), dir.path().join("w.json"));
        write_wigner(&c, &j, &g).unwrap();
        let back = read_wigner::<f64>(&c, &j).unwrap();
        assert_eq!(back, g);
        let side: WignerSidecar = read_json(&j).unwrap();
        assert_eq!(side.convention, WIGNER_CONVENTION);
    }

    #[test]
    fn density_round_trip() {
        let space = FockSpace::excitation_capped(2, 4, 3).unwrap();
        let psi = product_state::<f64>(
            &FockSpace::new(2, 4).unwrap(),
            &[coherent_amplitudes(C::new(0.3, 0.0), 4).amplitudes, vacuum_amplitudes(4)],
        )
        .unwrap()
        .transfer_to(&space)
        .unwrap()
        .normalized();
        let rho = psi.projector();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rho.json");
        write_json(&path, &DensityFile::from_density(&rho)).unwrap();
        let back: DensityMatrix<f64> = read_json::<DensityFile>(&path).unwrap().to_density().unwrap();
        assert_eq!(back.data(), rho.data());
        assert_eq!(back.dim(), 10);
    }

    proptest! {
        #[test]
        fn reals_round_trip_bitwise(x in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            let back: f64 = parse_real(&fmt_real(x), "x").unwrap();
            prop_assert_eq!(back.to_bits(), x.to_bits());
        }
    }
}
