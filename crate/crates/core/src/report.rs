//! Small CSV helper shared by the exporters.

use std::io::Write;

use serde::Serialize;

use crate::error::Result;

/// Writes `header` then one serialized record per row. The header is always
/// present, even for an empty table.
pub fn write_csv<W: Write, T: Serialize>(out: W, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
