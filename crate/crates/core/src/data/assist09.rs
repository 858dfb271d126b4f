use std::collections::{HashMap, HashSet};
use std::io::Read;

use serde::Serialize;

use super::{DataError, Interaction, Sequence};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct AdaptReport {
    pub rows_read: usize,
    pub kept: usize,
    pub dropped_null_skill: usize,
    pub dropped_duplicate: usize,
    pub unparseable: usize,
}

const REQUIRED: [&str; 5] = ["user_id", "order_id", "problem_id", "skill_id", "correct"];

fn is_null(s: &str) -> bool {
    matches!(s, "" | "NA" | "NULL" | "null" | "nan" | "NaN")
}

/// Converts the raw ASSIST09 skill-builder export into canonical sequences.
///
/// Rows without a skill are dropped. Multi-skill problems appear as repeated
/// `(user_id, order_id)` rows, of which only the first is kept; a skill field
/// written as `a_b` keeps `a`. Literacy ids are left empty.
pub fn adapt_assist09(reader: impl Read) -> Result<(Vec<Sequence>, AdaptReport), DataError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.byte_headers()?.clone();
    let mut col = HashMap::new();
    for name in REQUIRED {
        let idx = headers
            .iter()
            .position(|h| String::from_utf8_lossy(h).trim().trim_start_matches('\u{feff}') == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))?;
        col.insert(name, idx);
    }

    let mut report = AdaptReport::default();
    let mut groups: Vec<Sequence> = Vec::new();
    let mut slot: HashMap<String, usize> = HashMap::new();
    let mut seen: HashSet<(String, i64)> = HashSet::new();
    let mut record = csv::ByteRecord::new();
    loop {
        match rdr.read_byte_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(_) => {
                report.rows_read += 1;
                report.unparseable += 1;
                continue;
            }
        }
        report.rows_read += 1;
        let field = |name: &str| {
            record
                .get(col[name])
                .map(|b| String::from_utf8_lossy(b).trim().to_string())
        };
        let (Some(user), Some(order), Some(problem), Some(skill), Some(correct)) = (
            field("user_id"),
            field("order_id"),
            field("problem_id"),
            field("skill_id"),
            field("correct"),
        ) else {
            report.unparseable += 1;
            continue;
        };
        if is_null(&skill) {
            report.dropped_null_skill += 1;
            continue;
        }
        let first_skill = skill.split('_').next().unwrap_or("");
        let parsed = (|| {
            let order: i64 = order.parse().ok()?;
            let question: usize = problem.parse().ok().filter(|&q| q >= 1)?;
            let kc: usize = first_skill
                .parse::<f64>()
                .ok()
                .filter(|v| v.fract() == 0.0 && *v >= 1.0)? as usize;
            let correct = match correct.parse::<f64>().ok()? {
                c if c == 0.0 => 0,
                c if c == 1.0 => 1,
                _ => return None,
            };
            (!user.is_empty()).then_some((order, question, kc, correct))
        })();
        let Some((order, question_id, kc_id, correct)) = parsed else {
            report.unparseable += 1;
            continue;
        };
        if !seen.insert((user.clone(), order)) {
            report.dropped_duplicate += 1;
            continue;
        }
        let idx = *slot.entry(user.clone()).or_insert_with(|| {
            groups.push(Sequence {
                student_id: user.clone(),
                interactions: Vec::new(),
            });
            groups.len() - 1
        });
        groups[idx].interactions.push(Interaction {
            student_id: user,
            order,
            question_id,
            kc_id,
            literacy_id: None,
            correct,
        });
        report.kept += 1;
    }
    if report.unparseable * 100 > report.rows_read {
        return Err(DataError::TooManyUnparseable {
            bad: report.unparseable,
            total: report.rows_read,
        });
    }
    if groups.is_empty() {
        return Err(DataError::Empty);
    }
    for g in &mut groups {
        g.interactions.sort_by_key(|it| it.order);
    }
    if report.unparseable > 0 {
        log::warn!("skipped {} unparseable ASSIST09 rows", report.unparseable);
    }
    Ok((groups, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "order_id,assignment_id,user_id,assistment_id,problem_id,original,correct,attempt_count,skill_id,skill_name\n";

    #[test]
    fn drops_null_skill_and_sorts() {
        let raw = format!(
            "{HEADER}5,1,70,9,101,1,1,1,12,Addition\n3,1,70,9,102,1,0,1,12,Addition\n4,1,70,9,103,1,1,1,,\n"
        );
        let (seqs, report) = adapt_assist09(raw.as_bytes()).unwrap();
        assert_eq!(report.dropped_null_skill, 1);
        assert_eq!(report.kept, 2);
        let orders: Vec<i64> = seqs[0].interactions.iter().map(|i| i.order).collect();
        assert_eq!(orders, vec![3, 5]);
        assert_eq!(seqs[0].interactions[0].question_id, 102);
        assert!(seqs[0].interactions.iter().all(|i| i.literacy_id.is_none()));
    }

    #[test]
    fn keeps_first_skill_of_multi_skill_rows() {
        let raw = format!("{HEADER}1,1,7,9,101,1,1,1,12,A\n1,1,7,9,101,1,1,1,15,B\n2,1,7,9,102,1,0,1,3_8,C\n");
        let (seqs, report) = adapt_assist09(raw.as_bytes()).unwrap();
        assert_eq!(report.dropped_duplicate, 1);
        let kcs: Vec<usize> = seqs[0].interactions.iter().map(|i| i.kc_id).collect();
        assert_eq!(kcs, vec![12, 3]);
    }

    #[test]
    fn too_many_unparseable_rows_is_an_error() {
        let mut raw = String::from(HEADER);
        for i in 0..50 {
            raw.push_str(&format!("{i},1,7,9,101,1,1,1,12,A\n"));
        }
        raw.push_str("x,1,7,9,101,1,1,1,12,A\n");
        assert!(matches!(
            adapt_assist09(raw.as_bytes()),
            Err(DataError::TooManyUnparseable { bad: 1, total: 51 })
        ));
        for i in 50..120 {
            raw.push_str(&format!("{i},1,7,9,101,1,1,1,12,A\n"));
        }
        let (_, report) = adapt_assist09(raw.as_bytes()).unwrap();
        assert_eq!(report.unparseable, 1);
    }
}
