//! Ensemble statistics and plot-ready exports.

pub mod kde;
pub mod reinit;
pub mod study;

use std::io::Write;

pub use kde::{kde_fit, ks_two_sample, KdeCurve};
pub use reinit::{
    county_initials, run_reinit_study, Density, InitialCondition, ReinitConfig, ReinitOutput,
};
pub use study::{derive_seed, run_error_study, ErrorEnsemble, StudyOutput, SummaryRow};

use crate::error::Result;

/// Long-format KDE export with columns `study,method,state,grid,density`.
pub struct KdeCsv<W: Write> {
    writer: csv::Writer<W>,
}

impl<W: Write> KdeCsv<W> {
    pub fn new(out: W) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(["study", "method", "state", "grid", "density"])?;
        Ok(KdeCsv { writer })
    }

    pub fn curve(
        &mut self,
        study: &str,
        method: &str,
        state: &str,
        curve: &KdeCurve,
    ) -> Result<()> {
        for (g, d) in curve.grid.iter().zip(&curve.density) {
            self.writer
                .write_record([study, method, state, &g.to_string(), &d.to_string()])?;
        }
        Ok(())
    }

    /// A point mass is written as a single row with infinite density.
    pub fn density(
        &mut self,
        study: &str,
        method: &str,
        state: &str,
        density: &Density,
    ) -> Result<()> {
        match density {
            Density::Kde(curve) => self.curve(study, method, state, curve),
            Density::PointMass(v) => {
                self.writer
                    .write_record([study, method, state, &v.to_string(), "inf"])?;
                Ok(())
            }
        }
    }

    pub fn finish(mut self) -> Result<()> {
        self.writer.flush()?;
        Ok(())
    }
}

pub fn write_study_kdes<W: Write>(out: W, study: &str, output: &StudyOutput) -> Result<()> {
    let mut csv = KdeCsv::new(out)?;
    for (ens, curve) in output.ensembles.iter().zip(&output.kdes) {
        if let Some(curve) = curve {
            csv.curve(study, ens.method.name(), ens.state.name(), curve)?;
        }
    }
    csv.finish()
}

pub fn write_reinit_kdes<W: Write>(out: W, study: &str, output: &ReinitOutput) -> Result<()> {
    let mut csv = KdeCsv::new(out)?;
    for e in &output.entries {
        csv.density(study, &e.label, e.state.name(), &e.density)?;
    }
    csv.finish()
}

/// Columns `method,state,mean_err,std_err,mae,n_failed`.
pub fn write_summary_csv<W: Write>(out: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "state", "mean_err", "std_err", "mae", "n_failed"])?;
    for r in rows {
        w.write_record([
            r.method.name().to_string(),
            r.state.name().to_string(),
            r.mean_err.to_string(),
            r.std_err.to_string(),
            r.mae.to_string(),
            r.n_failed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
