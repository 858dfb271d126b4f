use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use super::{io_err, DataError, Dataset, DatasetStats, IdMap, Interaction, Sequence};

pub const CANONICAL_HEADER: [&str; 6] = [
    "student_id",
    "order",
    "question_id",
    "kc_id",
    "literacy_id",
    "correct",
];

fn row_err(line: u64, message: impl Into<String>) -> DataError {
    DataError::Row {
        line,
        message: message.into(),
    }
}

fn parse_id(field: &str, name: &str, line: u64) -> Result<usize, DataError> {
    match field.trim().parse::<usize>() {
        Ok(v) if v >= 1 => Ok(v),
        _ => Err(row_err(line, format!("{name} must be an integer >= 1, got `{field}`"))),
    }
}

/// Reads a canonical CSV, keeping original ids.
///
/// Rows are grouped by student in order of first appearance and sorted by
/// `order` (stable, so ties keep file order).
pub fn read_canonical(reader: impl Read) -> Result<Vec<Sequence>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut col = HashMap::new();
    for name in CANONICAL_HEADER {
        let idx = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))?;
        col.insert(name, idx);
    }

    let mut groups: Vec<Sequence> = Vec::new();
    let mut slot: HashMap<String, usize> = HashMap::new();
    let mut seen: HashSet<(String, i64)> = HashSet::new();
    let mut literacy_rows = 0usize;
    let mut rows = 0usize;
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let get = |name: &str| record.get(col[name]).unwrap_or("");
        let student_id = get("student_id").to_string();
        if student_id.is_empty() {
            return Err(row_err(line, "empty student_id"));
        }
        let order = get("order")
            .trim()
            .parse::<i64>()
            .map_err(|_| row_err(line, format!("order must be an integer, got `{}`", get("order"))))?;
        let question_id = parse_id(get("question_id"), "question_id", line)?;
        let kc_id = parse_id(get("kc_id"), "kc_id", line)?;
        let literacy_id = match get("literacy_id").trim() {
            "" => None,
            s => Some(parse_id(s, "literacy_id", line)?),
        };
        let correct = match get("correct").trim() {
            "0" => 0,
            "1" => 1,
            other => return Err(row_err(line, format!("correct must be 0 or 1, got `{other}`"))),
        };
        if !seen.insert((student_id.clone(), order)) {
            return Err(DataError::DuplicateOrder {
                line,
                student: student_id,
                order,
            });
        }
        rows += 1;
        if literacy_id.is_some() {
            literacy_rows += 1;
        }
        if literacy_rows > 0 && literacy_rows != rows {
            return Err(row_err(line, "literacy_id must be given on every row or on none"));
        }
        let idx = *slot.entry(student_id.clone()).or_insert_with(|| {
            groups.push(Sequence {
                student_id: student_id.clone(),
                interactions: Vec::new(),
            });
            groups.len() - 1
        });
        groups[idx].interactions.push(Interaction {
            student_id,
            order,
            question_id,
            kc_id,
            literacy_id,
            correct,
        });
    }
    if groups.is_empty() {
        return Err(DataError::Empty);
    }
    for g in &mut groups {
        g.interactions.sort_by_key(|it| it.order);
    }
    Ok(groups)
}

/// Re-indexes question, KC and literacy ids densely from 1 (ascending by
/// original id).
pub fn densify(sequences: Vec<Sequence>) -> Dataset {
    let mut q = BTreeSet::new();
    let mut k = BTreeSet::new();
    let mut l = BTreeSet::new();
    for it in sequences.iter().flat_map(|s| &s.interactions) {
        q.insert(it.question_id as u64);
        k.insert(it.kc_id as u64);
        if let Some(x) = it.literacy_id {
            l.insert(x as u64);
        }
    }
    let dense = |set: BTreeSet<u64>| -> BTreeMap<u64, usize> {
        set.into_iter().enumerate().map(|(i, o)| (o, i + 1)).collect()
    };
    let id_map = IdMap {
        question: dense(q),
        kc: dense(k),
        literacy: dense(l),
    };
    let sequences = apply_id_map(sequences, &id_map).expect("map built from the same data");
    let stats = DatasetStats::from_sequences(&sequences);
    Dataset {
        sequences,
        stats,
        id_map,
    }
}

/// Re-indexes through an existing id map, e.g. the one stored with a
/// checkpoint. Ids missing from the map are errors naming their table.
pub fn remap(sequences: Vec<Sequence>, map: &IdMap) -> Result<Dataset, DataError> {
    let sequences = apply_id_map(sequences, map).map_err(|(table, id)| DataError::UnknownId { table, id })?;
    let stats = DatasetStats::from_sequences(&sequences);
    Ok(Dataset {
        sequences,
        stats,
        id_map: map.clone(),
    })
}

/// Maps original ids through an existing id map; unknown ids are reported
/// with the kind of table they belong to.
fn apply_id_map(sequences: Vec<Sequence>, map: &IdMap) -> Result<Vec<Sequence>, (String, u64)> {
    let look = |m: &BTreeMap<u64, usize>, kind: &str, v: usize| {
        m.get(&(v as u64)).copied().ok_or((kind.to_string(), v as u64))
    };
    sequences
        .into_iter()
        .map(|mut s| {
            for it in &mut s.interactions {
                it.question_id = look(&map.question, "question", it.question_id)?;
                it.kc_id = look(&map.kc, "kc", it.kc_id)?;
                if let Some(l) = it.literacy_id {
                    it.literacy_id = Some(look(&map.literacy, "literacy", l)?);
                }
            }
            Ok(s)
        })
        .collect()
}

pub fn load_canonical(path: &Path) -> Result<Dataset, DataError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    Ok(densify(read_canonical(std::io::BufReader::new(file))?))
}

pub fn write_canonical(sequences: &[Sequence], writer: impl Write) -> Result<(), DataError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    w.write_record(CANONICAL_HEADER)?;
    for it in sequences.iter().flat_map(|s| &s.interactions) {
        let lit = it.literacy_id.map(|l| l.to_string()).unwrap_or_default();
        w.write_record([
            it.student_id.as_str(),
            &it.order.to_string(),
            &it.question_id.to_string(),
            &it.kc_id.to_string(),
            &lit,
            &it.correct.to_string(),
        ])?;
    }
    w.flush().map_err(io_err("<canonical writer>"))?;
    Ok(())
}

/// Sidecar with columns `original_id,dense_id,kind`.
pub fn write_id_map(map: &IdMap, writer: impl Write) -> Result<(), DataError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    w.write_record(["original_id", "dense_id", "kind"])?;
    for kind in ["question", "kc", "literacy"] {
        for (orig, dense) in map.kind(kind).expect("known kind") {
            w.write_record([orig.to_string(), dense.to_string(), kind.to_string()])?;
        }
    }
    w.flush().map_err(io_err("<id map writer>"))?;
    Ok(())
}

pub fn read_id_map(reader: impl Read) -> Result<IdMap, DataError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut map = IdMap::default();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let orig: u64 = record[0].parse().map_err(|_| row_err(line, "bad original_id"))?;
        let dense: usize = record[1].parse().map_err(|_| row_err(line, "bad dense_id"))?;
        let table = match &record[2] {
            "question" => &mut map.question,
            "kc" => &mut map.kc,
            "literacy" => &mut map.literacy,
            other => return Err(row_err(line, format!("unknown kind `{other}`"))),
        };
        table.insert(orig, dense);
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "student_id,order,question_id,kc_id,literacy_id,correct\n";

    fn load(text: &str) -> Result<Dataset, DataError> {
        read_canonical(text.as_bytes()).map(densify)
    }

    #[test]
    fn two_rows_one_student() {
        let d = load(&format!("{HEADER}a,1,10,3,,1\na,2,12,3,,0\n")).unwrap();
        assert_eq!(d.sequences.len(), 1);
        assert_eq!(d.sequences[0].len(), 2);
        assert_eq!(d.stats.n_literacy, None);
        assert!(!serde_json::to_string(&d.stats).unwrap().contains("n_literacy"));
        assert_eq!(d.sequences[0].interactions[1].question_id, 2);
    }

    #[test]
    fn sorts_by_order_with_stable_ties() {
        let seqs = read_canonical(format!("{HEADER}a,5,1,1,,1\nb,1,2,1,,0\na,3,2,1,,0\n").as_bytes()).unwrap();
        assert_eq!(seqs[0].student_id, "a");
        let orders: Vec<i64> = seqs[0].interactions.iter().map(|i| i.order).collect();
        assert_eq!(orders, vec![3, 5]);
    }

    #[test]
    fn rejects_bad_correct_with_row_number() {
        let err = load(&format!("{HEADER}a,1,1,1,,1\na,2,1,1,,2\n")).unwrap_err();
        match err {
            DataError::Row { line, message } => {
                assert_eq!(line, 3);
                assert!(message.contains("correct"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_duplicate_order_and_missing_column() {
        let err = load(&format!("{HEADER}a,1,1,1,,1\na,1,2,1,,0\n")).unwrap_err();
        assert!(matches!(err, DataError::DuplicateOrder { line: 3, .. }));
        let err = load("student_id,order,question_id,kc_id,correct\na,1,1,1,1\n").unwrap_err();
        assert!(matches!(err, DataError::MissingColumn(c) if c == "literacy_id"));
    }

    #[test]
    fn round_trip_through_emitted_file() {
        let d = load(&format!(
            "{HEADER}x,2,40,7,3,1\nx,1,20,9,5,0\ny,1,40,7,3,1\ny,4,30,8,5,1\n"
        ))
        .unwrap();
        let mut buf = Vec::new();
        write_canonical(&d.sequences, &mut buf).unwrap();
        let again = load(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(again.sequences, d.sequences);
        assert_eq!(again.stats.n_literacy, Some(2));

        let mut ids = Vec::new();
        write_id_map(&d.id_map, &mut ids).unwrap();
        assert_eq!(read_id_map(ids.as_slice()).unwrap(), d.id_map);
    }

    #[test]
    fn mixed_literacy_is_rejected() {
        assert!(load(&format!("{HEADER}a,1,1,1,2,1\na,2,1,1,,1\n")).is_err());
    }
}
