use std::io::Write;
use std::path::Path;

use crate::error::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Formats a float the same way on every run: shortest round-trip text,
/// `inf` and `NaN` spelled out.
pub fn num(x: f64) -> String {
    format!("{x}")
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// `[a b c]`, kept free of commas so the cell needs no quoting.
pub fn vector(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|&x| num(x)).collect();
    format!("[{}]", parts.join(" "))
}

/// Rows of one result file. The first two columns of every row are the
/// config digest and the toolkit version; the last is a row-level error.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
    digest: String,
    worst: Option<CliError>,
}

impl Table {
    pub fn new(digest: &str, axes: &[String], columns: &[&str]) -> Self {
        let mut header = vec!["digest".to_string(), "version".to_string()];
        header.extend(axes.iter().cloned());
        header.extend(columns.iter().map(|c| c.to_string()));
        header.push("error".into());
        Self {
            header,
            rows: Vec::new(),
            digest: digest.into(),
            worst: None,
        }
    }

    /// Appends a row; `cells` covers axes and columns, without the error.
    pub fn push(&mut self, cells: Vec<String>, error: Option<CliError>) {
        let mut row = vec![self.digest.clone(), VERSION.to_string()];
        row.extend(cells);
        let msg = error.as_ref().map(|e| e.to_string()).unwrap_or_default();
        row.push(msg);
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
        if let Some(e) = error {
            // a numeric failure outranks a config failure
            let replace = match (&self.worst, &e) {
                (None, _) => true,
                (Some(CliError::Config(_)), CliError::Numeric(_)) => true,
                _ => false,
            };
            if replace {
                self.worst = Some(e);
            }
        }
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn write(&self, out: impl Write) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(out);
        let to_io = |e: csv::Error| CliError::Io(std::io::Error::other(e));
        w.write_record(&self.header).map_err(to_io)?;
        for r in &self.rows {
            w.write_record(r).map_err(to_io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_to(&self, path: Option<&Path>) -> Result<(), CliError> {
        match path {
            Some(p) => {
                if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                    std::fs::create_dir_all(dir)?;
                }
                self.write(std::fs::File::create(p)?)
            }
            None => self.write(std::io::stdout().lock()),
        }
    }

    /// The first row-level failure, numeric ones first.
    pub fn into_outcome(self) -> Result<(), CliError> {
        match self.worst {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    /// A gnuplot script drawing `y` against `x` for the CSV at `data`, one
    /// line per distinct value of the `series` columns.
    pub fn gnuplot(&self, data: &str, x: &str, y: &str, series: &[&str]) -> Result<String, CliError> {
        let col = |name: &str| {
            self.column(name)
                .map(|i| i + 1)
                .ok_or_else(|| CliError::Config(format!("no `{name}` column to plot")))
        };
        let (xc, yc) = (col(x)?, col(y)?);
        let sc = series.iter().map(|s| col(s)).collect::<Result<Vec<_>, _>>()?;
        let key_of = |row: &Vec<String>| -> String {
            sc.iter().map(|&c| row[c - 1].as_str()).collect::<Vec<_>>().join(" ")
        };
        let mut keys: Vec<String> = Vec::new();
        for r in &self.rows {
            let k = key_of(r);
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        let key_expr = sc
            .iter()
            .map(|c| format!("strcol({c})"))
            .collect::<Vec<_>>()
            .join(".\" \".");
        let titles = keys
            .iter()
            .map(|k| format!("\"{}\"", k.replace('\\', "\\\\").replace('"', "\\\"")))
            .collect::<Vec<_>>()
            .join(", ");
        Ok(format!(
            "set datafile separator \",\"\n\
             set key outside\n\
             set xlabel \"{x}\"\n\
             set ylabel \"{y}\"\n\
             array S[{n}] = [{titles}]\n\
             plot for [i=1:{n}] \"{data}\" skip 1 using (({key_expr}) eq S[i] ? column({xc}) : NaN):(column({yc})) \\\n    \
             with linespoints title S[i]\n",
            n = keys.len(),
        ))
    }
}
