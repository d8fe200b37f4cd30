//! Manifest ingestion: one `{"id","path","width","height"}` object per line.
//! Line order defines output order.

use std::collections::HashSet;
use std::io::BufRead;
use std::path::Path;

use crate::datamodel::ImageRecord;

use super::PipelineError;

pub fn load_manifest(path: &Path) -> Result<Vec<ImageRecord>, PipelineError> {
    let file = std::fs::File::open(path).map_err(|e| {
        PipelineError::Config(format!("cannot open manifest {}: {e}", path.display()))
    })?;
    let reader = std::io::BufReader::new(file);
    let mut records = Vec::new();
    let mut seen_ids = HashSet::new();
    for (number, line) in reader.lines().enumerate() {
        let line = line.map_err(PipelineError::Io)?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ImageRecord =
            serde_json::from_str(&line).map_err(|e| PipelineError::Manifest {
                line: number + 1,
                message: e.to_string(),
            })?;
        if record.id.is_empty() {
            return Err(PipelineError::Manifest {
                line: number + 1,
                message: "empty image id".into(),
            });
        }
        if record.width == 0 || record.height == 0 {
            return Err(PipelineError::Manifest {
                line: number + 1,
                message: format!("non-positive dimensions {}x{}", record.width, record.height),
            });
        }
        if !seen_ids.insert(record.id.clone()) {
            return Err(PipelineError::Manifest {
                line: number + 1,
                message: format!("duplicate image id {:?}", record.id),
            });
        }
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_valid_manifest_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        std::fs::write(
            &path,
            "{\"id\":\"a\",\"path\":\"a.png\",\"width\":10,\"height\":10}\n\
             {\"id\":\"b\",\"path\":\"b.png\",\"width\":20,\"height\":20}\n",
        )
        .unwrap();
        let records = load_manifest(&path).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].id, "a");
        assert_eq!(records[1].id, "b");
    }

    #[test]
    fn rejects_duplicates_and_bad_dimensions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        std::fs::write(
            &path,
            "{\"id\":\"a\",\"path\":\"a.png\",\"width\":10,\"height\":10}\n\
             {\"id\":\"a\",\"path\":\"b.png\",\"width\":20,\"height\":20}\n",
        )
        .unwrap();
        assert!(matches!(
            load_manifest(&path),
            Err(PipelineError::Manifest { line: 2, .. })
        ));

        std::fs::write(
            &path,
            "{\"id\":\"a\",\"path\":\"a.png\",\"width\":0,\"height\":10}\n",
        )
        .unwrap();
        assert!(matches!(
            load_manifest(&path),
            Err(PipelineError::Manifest { line: 1, .. })
        ));
    }
}
