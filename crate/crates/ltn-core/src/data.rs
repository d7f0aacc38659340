//! Text ingestion formats: proposal datasets, class lists, and part
//! ontologies.
//!
//! A dataset file is newline-delimited. Each image declares its extent once
//! with `@image id W H`; each proposal is one line
//! `id<TAB>x1,y1,x2,y2<TAB>label<TAB>v1,v2,...` whose embedding length must
//! agree across the whole file. `#` starts a comment in every format.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::detect::{BoundingBox, DetectError, PartOntology, ProposalEmbedding, BACKGROUND_LABEL};

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl DataError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        DataError::Parse {
            line,
            message: message.into(),
        }
    }
}

/// All proposals of one image plus its pixel extent.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    pub width: f64,
    pub height: f64,
    pub proposals: Vec<ProposalEmbedding>,
}

/// An ingested proposal dataset with a uniform embedding dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<ImageRecord>,
    pub embed_dim: usize,
}

impl Dataset {
    pub fn parse(text: &str) -> Result<Self, DataError> {
        let mut images: Vec<ImageRecord> = Vec::new();
        let mut index: BTreeMap<String, usize> = BTreeMap::new();
        let mut embed_dim: Option<usize> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let lineno = lineno + 1;
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("@image") {
                let fields: Vec<&str> = rest.split_whitespace().collect();
                if fields.len() != 3 {
                    return Err(DataError::at(lineno, "expected `@image id W H`"));
                }
                let id = fields[0].to_string();
                if index.contains_key(&id) {
                    return Err(DataError::at(lineno, format!("duplicate image `{id}`")));
                }
                let width = parse_float(fields[1], lineno, "image width")?;
                let height = parse_float(fields[2], lineno, "image height")?;
                if width <= 0.0 || height <= 0.0 {
                    return Err(DataError::at(lineno, "image extent must be positive"));
                }
                index.insert(id.clone(), images.len());
                images.push(ImageRecord {
                    id,
                    width,
                    height,
                    proposals: Vec::new(),
                });
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(DataError::at(
                    lineno,
                    format!(
                        "expected 4 tab-separated fields (id, box, label, embedding), got {}",
                        fields.len()
                    ),
                ));
            }
            let image = match index.get(fields[0]) {
                Some(&i) => i,
                None => {
                    return Err(DataError::at(
                        lineno,
                        format!("proposal references undeclared image `{}`", fields[0]),
                    ))
                }
            };
            let corners = parse_float_list(fields[1], lineno, "box")?;
            if corners.len() != 4 {
                return Err(DataError::at(lineno, "box needs 4 coordinates x1,y1,x2,y2"));
            }
            let bbox = BoundingBox::new(corners[0], corners[1], corners[2], corners[3])
                .map_err(|e: DetectError| DataError::at(lineno, e.to_string()))?;
            let label = fields[2].trim().to_string();
            if label.is_empty() {
                return Err(DataError::at(lineno, "empty label"));
            }
            let z = parse_float_list(fields[3], lineno, "embedding")?;
            if z.is_empty() {
                return Err(DataError::at(lineno, "empty embedding"));
            }
            match embed_dim {
                None => embed_dim = Some(z.len()),
                Some(d) if d != z.len() => {
                    return Err(DataError::at(
                        lineno,
                        format!("embedding dimension {} differs from {d}", z.len()),
                    ))
                }
                Some(_) => {}
            }
            images[image].proposals.push(ProposalEmbedding { bbox, z, label });
        }
        let embed_dim =
            embed_dim.ok_or_else(|| DataError::at(0, "dataset contains no proposals"))?;
        Ok(Self { images, embed_dim })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for image in &self.images {
            writeln!(out, "@image {} {} {}", image.id, image.width, image.height).unwrap();
            for p in &image.proposals {
                let b = &p.bbox;
                writeln!(
                    out,
                    "{}\t{},{},{},{}\t{}\t{}",
                    image.id,
                    b.x1,
                    b.y1,
                    b.x2,
                    b.y2,
                    p.label,
                    join_floats(&p.z)
                )
                .unwrap();
            }
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn proposal_count(&self) -> usize {
        self.images.iter().map(|i| i.proposals.len()).sum()
    }

    /// Foreground box counts per label; background boxes are not counted.
    pub fn class_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for image in &self.images {
            for p in &image.proposals {
                if !p.is_background() {
                    *counts.entry(p.label.clone()).or_insert(0) += 1;
                }
            }
        }
        counts
    }

    /// Labels used anywhere in the dataset, background included.
    pub fn labels_used(&self) -> Vec<String> {
        let mut labels: Vec<String> = self
            .images
            .iter()
            .flat_map(|i| i.proposals.iter().map(|p| p.label.clone()))
            .collect();
        labels.sort();
        labels.dedup();
        labels
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
}

fn parse_float(s: &str, line: usize, what: &str) -> Result<f64, DataError> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| DataError::at(line, format!("bad {what} value `{}`", s.trim())))?;
    if !v.is_finite() {
        return Err(DataError::at(line, format!("non-finite {what} value")));
    }
    Ok(v)
}

fn parse_float_list(s: &str, line: usize, what: &str) -> Result<Vec<f64>, DataError> {
    s.split(',')
        .filter(|piece| !piece.trim().is_empty())
        .map(|piece| parse_float(piece, line, what))
        .collect()
}

fn join_floats(v: &[f64]) -> String {
    let mut out = String::new();
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write!(out, "{x}").unwrap();
    }
    out
}

/// Names a class list may not use: the background marker, the part-of
/// predicate, and the axiom-file keywords.
const RESERVED_NAMES: [&str; 5] = [BACKGROUND_LABEL, "partOf", "pred", "axiom", "forall"];

fn valid_class_name(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Class list: one name per line, index given by order.
pub fn parse_classes(text: &str) -> Result<Vec<String>, DataError> {
    let mut classes = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let name = strip_comment(raw).trim();
        if name.is_empty() {
            continue;
        }
        if !valid_class_name(name) {
            return Err(DataError::at(
                lineno,
                format!("`{name}` is not a valid class name"),
            ));
        }
        if RESERVED_NAMES.contains(&name) {
            return Err(DataError::at(lineno, format!("`{name}` is a reserved name")));
        }
        if classes.iter().any(|c| c == name) {
            return Err(DataError::at(lineno, format!("duplicate class `{name}`")));
        }
        classes.push(name.to_string());
    }
    if classes.is_empty() {
        return Err(DataError::at(0, "class list is empty"));
    }
    Ok(classes)
}

pub fn write_classes(classes: &[String]) -> String {
    let mut out = String::new();
    for c in classes {
        writeln!(out, "{c}").unwrap();
    }
    out
}

pub fn load_classes(path: impl AsRef<Path>) -> Result<Vec<String>, DataError> {
    parse_classes(&fs::read_to_string(path)?)
}

/// Ontology file: one `whole: part1, part2, ...` line per whole class.
pub fn parse_ontology(text: &str) -> Result<PartOntology, DataError> {
    let mut wholes = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        let (whole, parts) = line
            .split_once(':')
            .ok_or_else(|| DataError::at(lineno, "expected `whole: part1, part2, ...`"))?;
        let whole = whole.trim();
        if !valid_class_name(whole) {
            return Err(DataError::at(
                lineno,
                format!("`{whole}` is not a valid class name"),
            ));
        }
        if wholes.contains_key(whole) {
            return Err(DataError::at(lineno, format!("duplicate whole `{whole}`")));
        }
        let parts: Vec<String> = parts
            .split(',')
            .map(|p| p.trim())
            .filter(|p| !p.is_empty())
            .map(|p| {
                if valid_class_name(p) {
                    Ok(p.to_string())
                } else {
                    Err(DataError::at(
                        lineno,
                        format!("`{p}` is not a valid class name"),
                    ))
                }
            })
            .collect::<Result<_, _>>()?;
        if parts.is_empty() {
            return Err(DataError::at(lineno, format!("whole `{whole}` lists no parts")));
        }
        wholes.insert(whole.to_string(), parts);
    }
    Ok(PartOntology { wholes })
}

pub fn write_ontology(ontology: &PartOntology) -> String {
    let mut out = String::new();
    for (whole, parts) in &ontology.wholes {
        writeln!(out, "{whole}: {}", parts.join(", ")).unwrap();
    }
    out
}

pub fn load_ontology(path: impl AsRef<Path>) -> Result<PartOntology, DataError> {
    parse_ontology(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# toy dataset
@image im0 100 80
im0\t10,10,30,30\tcat\t0.5,-1.25,3
im0\t12,12,20,20\ttail\t0.1,0.2,0.3
im0\t50,50,60,70\tbg\t-0.5,0.25,0
@image im1 100 80
im1\t5,5,25,40\tdog\t1,2,3
";

    #[test]
    fn parses_the_sample_dataset() {
        let d = Dataset::parse(SAMPLE).unwrap();
        assert_eq!(d.images.len(), 2);
        assert_eq!(d.embed_dim, 3);
        assert_eq!(d.images[0].id, "im0");
        assert_eq!(d.images[0].width, 100.0);
        assert_eq!(d.images[0].height, 80.0);
        assert_eq!(d.images[0].proposals.len(), 3);
        let p = &d.images[0].proposals[0];
        assert_eq!(p.label, "cat");
        assert_eq!(p.z, vec![0.5, -1.25, 3.0]);
        assert_eq!(p.bbox.x2, 30.0);
        assert_eq!(d.proposal_count(), 4);
    }

    #[test]
    fn round_trips_exactly() {
        let d = Dataset::parse(SAMPLE).unwrap();
        let text = d.to_text();
        let d2 = Dataset::parse(&text).unwrap();
        assert_eq!(d, d2);
        // A second print is byte-identical.
        assert_eq!(text, d2.to_text());
    }

    #[test]
    fn round_trips_awkward_floats() {
        let mut d = Dataset::parse(SAMPLE).unwrap();
        d.images[0].proposals[0].z = vec![0.1, 1.0 / 3.0, 1e-17];
        d.images[0].proposals[1].z = vec![f64::MIN_POSITIVE, 1.0 + f64::EPSILON, -2.5e10];
        d.images[0].proposals[2].z = vec![9.999999999999999e22, -0.07, 42.0];
        let d2 = Dataset::parse(&d.to_text()).unwrap();
        assert_eq!(d, d2);
    }

    #[test]
    fn counts_foreground_classes() {
        let d = Dataset::parse(SAMPLE).unwrap();
        let counts = d.class_counts();
        assert_eq!(counts.get("cat"), Some(&1));
        assert_eq!(counts.get("tail"), Some(&1));
        assert_eq!(counts.get("dog"), Some(&1));
        assert_eq!(counts.get("bg"), None);
        assert_eq!(d.labels_used(), vec!["bg", "cat", "dog", "tail"]);
    }

    fn expect_parse_error(text: &str, needle: &str, line: usize) {
        match Dataset::parse(text) {
            Err(DataError::Parse { line: l, message }) => {
                assert_eq!(l, line, "wrong line for: {message}");
                assert!(
                    message.contains(needle),
                    "message `{message}` misses `{needle}`"
                );
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_malformed_input_with_line_numbers() {
        expect_parse_error("@image a 100\n", "expected `@image id W H`", 1);
        expect_parse_error("@image a 100 80\n@image a 50 50\n", "duplicate image", 2);
        expect_parse_error("@image a 0 80\n", "positive", 1);
        expect_parse_error(
            "@image a 100 80\nb\t0,0,1,1\tcat\t1,2\n",
            "undeclared image",
            2,
        );
        expect_parse_error("@image a 100 80\na\t0,0,1,1\tcat\n", "4 tab-separated", 2);
        expect_parse_error(
            "@image a 100 80\na\t0,0,1\tcat\t1,2\n",
            "4 coordinates",
            2,
        );
        expect_parse_error(
            "@image a 100 80\na\t5,5,1,6\tcat\t1,2\n",
            "degenerate box",
            2,
        );
        expect_parse_error(
            "@image a 100 80\na\t0,0,1,1\tcat\tx,2\n",
            "bad embedding value",
            2,
        );
        expect_parse_error(
            "@image a 100 80\na\t0,0,1,1\tcat\t1,2\na\t0,0,1,1\tcat\t1,2,3\n",
            "dimension",
            3,
        );
        expect_parse_error("# nothing\n", "no proposals", 0);
    }

    #[test]
    fn class_list_parses_and_validates() {
        let classes = parse_classes("# comment\ncat\ndog\n\ntail\n").unwrap();
        assert_eq!(classes, vec!["cat", "dog", "tail"]);
        assert_eq!(write_classes(&classes), "cat\ndog\ntail\n");
        assert!(parse_classes("cat\ncat\n").is_err());
        assert!(parse_classes("2cool\n").is_err());
        assert!(parse_classes("bg\n").is_err());
        assert!(parse_classes("forall\n").is_err());
        assert!(parse_classes("").is_err());
    }

    #[test]
    fn ontology_parses_and_round_trips() {
        let text = "# pets\ncat: tail, head\ndog: snout\n";
        let ontology = parse_ontology(text).unwrap();
        assert_eq!(ontology.wholes["cat"], vec!["tail", "head"]);
        assert_eq!(ontology.wholes["dog"], vec!["snout"]);
        let printed = write_ontology(&ontology);
        assert_eq!(parse_ontology(&printed).unwrap(), ontology);
        assert_eq!(printed, "cat: tail, head\ndog: snout\n");
    }

    #[test]
    fn ontology_rejects_bad_lines() {
        assert!(parse_ontology("cat tail\n").is_err());
        assert!(parse_ontology("cat:\n").is_err());
        assert!(parse_ontology("cat: tail\ncat: head\n").is_err());
        assert!(parse_ontology("cat: 9lives\n").is_err());
    }

    #[test]
    fn empty_ontology_is_fine() {
        assert!(parse_ontology("# nothing here\n").unwrap().is_empty());
    }
}
