use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::train::ExperimentRow;

const HEADER: [&str; 5] = ["cell", "task", "accuracy", "stderr", "seeds"];

pub fn write_rows_csv<W: Write>(w: W, rows: &[ExperimentRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(HEADER)?;
    for r in rows {
        out.write_record([
            r.cell.clone(),
            r.task.to_string(),
            r.accuracy.to_string(),
            r.stderr.to_string(),
            r.seeds.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_rows_csv<R: Read>(r: R) -> Result<Vec<ExperimentRow>> {
    let mut reader = csv::Reader::from_reader(r);
    if reader.headers()?.iter().ne(HEADER) {
        return Err(Error::Format(format!("expected columns {}", HEADER.join(","))));
    }
    let field = |rec: &csv::StringRecord, i: usize| -> Result<String> {
        rec.get(i).map(str::to_string).ok_or_else(|| Error::Format("short row".into()))
    };
    let num = |s: String| Error::Format(format!("bad number {s:?}"));
    reader
        .records()
        .map(|rec| {
            let rec = rec?;
            let task = field(&rec, 1)?;
            let accuracy = field(&rec, 2)?;
            let stderr = field(&rec, 3)?;
            let seeds = field(&rec, 4)?;
            Ok(ExperimentRow {
                cell: field(&rec, 0)?,
                task: task.parse().map_err(|_| num(task.clone()))?,
                accuracy: accuracy.parse().map_err(|_| num(accuracy.clone()))?,
                stderr: stderr.parse().map_err(|_| num(stderr.clone()))?,
                seeds: seeds.parse().map_err(|_| num(seeds.clone()))?,
            })
        })
        .collect()
}

/// The accuracy table as CSV text, one row per (cell, task).
pub fn emit_accuracy_plot_data(rows: &[ExperimentRow]) -> Result<String> {
    let mut buf = Vec::new();
    write_rows_csv(&mut buf, rows)?;
    String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_table_is_header_only() {
        assert_eq!(emit_accuracy_plot_data(&[]).unwrap(), "cell,task,accuracy,stderr,seeds\n");
    }

    #[test]
    fn one_cell_one_row() {
        let row = ExperimentRow { cell: "32".into(), task: 1, accuracy: 0.75, stderr: 0.0, seeds: 1 };
        let text = emit_accuracy_plot_data(&[row]).unwrap();
        assert_eq!(text.lines().collect::<Vec<_>>(), ["cell,task,accuracy,stderr,seeds", "32,1,0.75,0,1"]);
    }

    #[test]
    fn wrong_header_is_rejected() {
        assert!(read_rows_csv("a,b\n1,2\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn parse_back(rows in prop::collection::vec(("[a-z0-9,\" ]{1,8}", 0usize..4, 0.0f64..1.0, 0.0f64..0.2, 1usize..9), 0..6)) {
            let rows: Vec<ExperimentRow> = rows
                .into_iter()
                .map(|(cell, task, accuracy, stderr, seeds)| ExperimentRow { cell, task, accuracy, stderr, seeds })
                .collect();
            let text = emit_accuracy_plot_data(&rows).unwrap();
            prop_assert_eq!(read_rows_csv(text.as_bytes()).unwrap(), rows);
        }
    }
}
