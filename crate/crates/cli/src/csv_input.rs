//! The study CSV format: one row per study under the header
//! `study_id,label,intervention_events,intervention_nonevents,control_events,control_nonevents`.

use std::path::Path;

use medmeta_core::{validate_dataset, MetaDataset, StudyRecord};

use crate::error::CliError;

pub const HEADER: [&str; 6] = [
    "study_id",
    "label",
    "intervention_events",
    "intervention_nonevents",
    "control_events",
    "control_nonevents",
];

/// A validated dataset plus any warnings raised while reading it.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedCsv {
    pub dataset: MetaDataset,
    pub warnings: Vec<String>,
}

pub fn parse_csv(path: &Path) -> Result<ParsedCsv, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_csv_str(&text)
}

fn parse_count(field: &str, line: u64, column: &'static str) -> Result<u64, CliError> {
    let field = field.trim();
    if let Ok(v) = field.parse::<u64>() {
        return Ok(v);
    }
    match field.parse::<i64>() {
        Ok(value) => Err(CliError::NegativeCount { line, column, value }),
        Err(_) => Err(CliError::NonIntegerCount {
            line,
            column,
            value: field.to_string(),
        }),
    }
}

pub fn parse_csv_str(text: &str) -> Result<ParsedCsv, CliError> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(text.as_bytes());
    let csv_error = |e: csv::Error| CliError::Csv {
        line: e.position().map_or(0, |p| p.line()),
        message: e.to_string(),
    };
    let headers = reader.headers().map_err(csv_error)?.clone();
    let found: Vec<&str> = headers.iter().collect();
    if found.len() < HEADER.len() || found[..HEADER.len()] != HEADER {
        return Err(CliError::MalformedHeader {
            expected: HEADER.join(","),
            found: found.join(","),
        });
    }
    let mut warnings = Vec::new();
    if found.len() > HEADER.len() {
        warnings.push(format!(
            "ignoring extra columns: {}",
            found[HEADER.len()..].join(", ")
        ));
    }

    let mut studies = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() < HEADER.len() {
            return Err(CliError::Csv {
                line,
                message: format!("expected {} fields, found {}", HEADER.len(), record.len()),
            });
        }
        let count = |i: usize| parse_count(&record[i], line, HEADER[i]);
        let id = record[0].trim();
        let label = match record[1].trim() {
            "" => id,
            label => label,
        };
        let study = StudyRecord::new(id, count(2)?, count(3)?, count(4)?, count(5)?).with_label(label);
        studies.push(study);
    }
    let dataset = validate_dataset(MetaDataset::new(studies))?;
    Ok(ParsedCsv { dataset, warnings })
}

/// Writes `data` in the format read by [`parse_csv`].
pub fn write_csv(data: &MetaDataset) -> String {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let rows = data.studies.iter().map(|s| {
        [
            s.id.clone(),
            s.label.clone(),
            s.intervention_events.to_string(),
            s.intervention_nonevents.to_string(),
            s.control_events.to_string(),
            s.control_nonevents.to_string(),
        ]
    });
    let write = |w: &mut csv::Writer<Vec<u8>>| -> csv::Result<()> {
        w.write_record(HEADER)?;
        for row in rows {
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    };
    write(&mut writer).expect("writing to memory cannot fail");
    let bytes = writer.into_inner().expect("writing to memory cannot fail");
    String::from_utf8(bytes).expect("fields are UTF-8")
}
