//! Scoring of OCR detections in generated images.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum share of the image a detected word box must exceed.
pub const MIN_AREA_FRACTION: f64 = 0.10;
/// Minimum number of letters shared with the prompt.
pub const MIN_SHARED_LETTERS: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct OcrDetection {
    pub predicted_word: String,
    pub box_area: f64,
    pub image_area: f64,
    pub target_word: String,
}

fn letter_counts(s: &str) -> HashMap<char, usize> {
    let mut m = HashMap::new();
    for c in s.chars().filter(|c| c.is_alphabetic()).flat_map(char::to_lowercase) {
        *m.entry(c).or_insert(0) += 1;
    }
    m
}

/// Size of the multiset intersection of letters, case-insensitive.
pub fn shared_letters(a: &str, b: &str) -> usize {
    let ca = letter_counts(a);
    let cb = letter_counts(b);
    ca.iter().map(|(c, n)| (*n).min(*cb.get(c).unwrap_or(&0))).sum()
}

/// A detection counts when its box covers more than 10% of the image and it
/// shares at least two letters with the prompt.
pub fn ocr_detection_criterion(det: &OcrDetection) -> bool {
    det.image_area > 0.0
        && det.box_area / det.image_area > MIN_AREA_FRACTION
        && shared_letters(&det.predicted_word, &det.target_word) >= MIN_SHARED_LETTERS
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WordType {
    Real,
    Fake,
}

impl WordType {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "real" => Some(WordType::Real),
            "fake" => Some(WordType::Fake),
            _ => None,
        }
    }
}

/// All detections reported for one generated image.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedImage {
    pub image_id: String,
    pub model_tag: String,
    pub word_type: WordType,
    pub target_word: String,
    pub detections: Vec<OcrDetection>,
}

impl GeneratedImage {
    pub fn has_text(&self) -> bool {
        self.detections.iter().any(ocr_detection_criterion)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrRateRow {
    pub model_tag: String,
    /// `real`, `fake`, or `all`.
    pub word_type: String,
    pub n_images: usize,
    pub n_detected: usize,
    /// `None` for an empty group.
    pub rate: Option<f64>,
}

/// Per model and word type, the percentage of images with at least one
/// recognized detection. Models keep their first-appearance order.
pub fn ocr_rate_report(images: &[GeneratedImage]) -> Vec<OcrRateRow> {
    let mut models: Vec<&str> = Vec::new();
    for im in images {
        if !models.contains(&im.model_tag.as_str()) {
            models.push(&im.model_tag);
        }
    }
    let mut rows = Vec::new();
    for model in models {
        for (label, filter) in [
            ("real", Some(WordType::Real)),
            ("fake", Some(WordType::Fake)),
            ("all", None),
        ] {
            let group: Vec<&GeneratedImage> = images
                .iter()
                .filter(|im| im.model_tag == model && filter.is_none_or(|w| im.word_type == w))
                .collect();
            let n_detected = group.iter().filter(|im| im.has_text()).count();
            rows.push(OcrRateRow {
                model_tag: model.to_string(),
                word_type: label.to_string(),
                n_images: group.len(),
                n_detected,
                rate: (!group.is_empty()).then(|| 100.0 * n_detected as f64 / group.len() as f64),
            });
        }
    }
    rows
}

/// `rate(a) - rate(b)` for one word type, when both groups exist.
pub fn rate_gap(rows: &[OcrRateRow], model_a: &str, model_b: &str, word_type: &str) -> Option<f64> {
    let find = |m: &str| {
        rows.iter()
            .find(|r| r.model_tag == m && r.word_type == word_type)
            .and_then(|r| r.rate)
    };
    Some(find(model_a)? - find(model_b)?)
}

fn parse_area(s: &str, line: usize, name: &str) -> Result<f64> {
    let v: f64 = s.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("{name} is not a number: {s:?}"),
    })?;
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::Parse {
            line,
            msg: format!("{name} must be positive, got {v}"),
        });
    }
    Ok(v)
}

/// Reads `image_id,model_tag,word_type,target_word,predicted_word,box_area,image_area`
/// rows, one per detection. A row with empty `predicted_word` and `box_area`
/// registers an image without detections.
pub fn read_detections<R: Read>(input: R) -> Result<Vec<GeneratedImage>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let expected = [
        "image_id",
        "model_tag",
        "word_type",
        "target_word",
        "predicted_word",
        "box_area",
        "image_area",
    ];
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header {}", expected.join(",")),
        });
    }
    let mut images: Vec<GeneratedImage> = Vec::new();
    let mut index: HashMap<(String, String), usize> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != expected.len() {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, found {}", expected.len(), rec.len()),
            });
        }
        let word_type = WordType::parse(&rec[2]).ok_or_else(|| Error::Parse {
            line,
            msg: format!("word_type must be real or fake, got {:?}", &rec[2]),
        })?;
        let key = (rec[0].to_string(), rec[1].to_string());
        let slot = *index.entry(key).or_insert_with(|| {
            images.push(GeneratedImage {
                image_id: rec[0].to_string(),
                model_tag: rec[1].to_string(),
                word_type,
                target_word: rec[3].to_string(),
                detections: Vec::new(),
            });
            images.len() - 1
        });
        let image = &mut images[slot];
        if image.word_type != word_type || image.target_word != rec[3] {
            return Err(Error::Parse {
                line,
                msg: format!("image {:?} has inconsistent target or word type", &rec[0]),
            });
        }
        if rec[4].is_empty() && rec[5].is_empty() {
            continue;
        }
        image.detections.push(OcrDetection {
            predicted_word: rec[4].to_string(),
            box_area: parse_area(&rec[5], line, "box_area")?,
            image_area: parse_area(&rec[6], line, "image_area")?,
            target_word: rec[3].to_string(),
        });
    }
    Ok(images)
}

pub fn write_rate_csv<W: Write>(out: W, rows: &[OcrRateRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["model_tag", "word_type", "n_images", "n_detected", "rate"])?;
    for r in rows {
        w.write_record([
            r.model_tag.clone(),
            r.word_type.clone(),
            r.n_images.to_string(),
            r.n_detected.to_string(),
            r.rate.map(|x| format!("{x:.2}")).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
