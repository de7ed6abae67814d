//! Run artifacts: summary rows as CSV and gnuplot scripts that read them.

use std::io::Write;

use serde::Serialize;

use crate::error::Result;
use crate::stats::GrowthEstimate;

pub const ROW_HEADER: &str = "label,quantity,value,stderr,n,reps,seed";

/// One estimated quantity. `stderr` is zero for exact values.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Row {
    pub label: String,
    pub quantity: String,
    pub value: f64,
    pub stderr: f64,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
}

impl Row {
    pub fn estimate(label: &str, quantity: impl Into<String>, e: &GrowthEstimate, seed: u64) -> Self {
        Row {
            label: label.to_owned(),
            quantity: quantity.into(),
            value: e.value,
            stderr: e.stderr,
            n: e.horizon,
            reps: e.repetitions,
            seed,
        }
    }

    pub fn exact(label: &str, quantity: impl Into<String>, value: f64, n: usize, seed: u64) -> Self {
        Row { label: label.to_owned(), quantity: quantity.into(), value, stderr: 0.0, n, reps: 1, seed }
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

pub fn write_rows(out: &mut impl Write, rows: &[Row]) -> Result<()> {
    writeln!(out, "{ROW_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            csv_field(&r.label),
            csv_field(&r.quantity),
            r.value,
            r.stderr,
            r.n,
            r.reps,
            r.seed
        )?;
    }
    Ok(())
}

/// A gnuplot line or point series read from a CSV with a header row.
#[derive(Clone, Debug)]
pub struct Series {
    pub file: String,
    pub x_col: usize,
    pub y_col: usize,
    pub title: String,
    pub style: &'static str,
}

#[derive(Clone, Debug)]
pub struct Plot {
    pub title: String,
    pub xlabel: String,
    pub ylabel: String,
    pub output: String,
    pub series: Vec<Series>,
}

impl Plot {
    pub fn script(&self) -> String {
        let mut s = String::new();
        s.push_str("set datafile separator ','\n");
        s.push_str("set terminal pngcairo size 900,600\n");
        s.push_str(&format!("set output '{}'\n", self.output));
        s.push_str(&format!("set title '{}'\n", self.title));
        s.push_str(&format!("set xlabel '{}'\n", self.xlabel));
        s.push_str(&format!("set ylabel '{}'\n", self.ylabel));
        let parts: Vec<String> = self
            .series
            .iter()
            .map(|p| format!("'{}' every ::1 using {}:{} with {} title '{}'", p.file, p.x_col, p.y_col, p.style, p.title))
            .collect();
        s.push_str(&format!("plot {}\n", parts.join(", \\\n     ")));
        s
    }
}

/// Plots of the summary rows, one script per file: values against their
/// row index with error bars.
pub fn rows_plot_script(rows_file: &str, title: &str, output: &str) -> String {
    format!(
        "set datafile separator ','\n\
         set terminal pngcairo size 900,600\n\
         set output '{output}'\n\
         set title '{title}'\n\
         set xlabel 'row'\n\
         set ylabel 'value'\n\
         plot '{rows_file}' every ::1 using 0:3:4 with yerrorbars title 'value ± stderr'\n"
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_csv() {
        let e = GrowthEstimate { value: 0.5, stderr: 0.01, horizon: 100, repetitions: 4 };
        let rows = vec![Row::estimate("a,b", "lambda_1", &e, 9), Row::exact("x", "q", 2.0, 10, 9)];
        let mut buf = Vec::new();
        write_rows(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "label,quantity,value,stderr,n,reps,seed\n\"a,b\",lambda_1,0.5,0.01,100,4,9\nx,q,2,0,10,1,9\n");
    }

    #[test]
    fn plot_script_lists_every_series() {
        let p = Plot {
            title: "drift".into(),
            xlabel: "step".into(),
            ylabel: "log(1+|t|)".into(),
            output: "drift.png".into(),
            series: vec![
                Series { file: "a.csv".into(), x_col: 1, y_col: 2, title: "a".into(), style: "lines" },
                Series { file: "b.csv".into(), x_col: 1, y_col: 3, title: "b".into(), style: "points" },
            ],
        };
        let s = p.script();
        assert!(s.contains("'a.csv' every ::1 using 1:2 with lines title 'a'"));
        assert!(s.contains("'b.csv' every ::1 using 1:3 with points title 'b'"));
        assert!(s.contains("set output 'drift.png'"));
    }
}
