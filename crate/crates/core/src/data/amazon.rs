//! Amazon review dumps: one JSON object per line.
//!
//! Reviews carry `reviewerID`, `asin`, `overall`, `unixReviewTime`. Metadata
//! carries `asin`, `title` and `categories` (nested lists, or a flat
//! `category` list in newer dumps). Other scalar metadata fields are kept.

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::Value;

use super::{check_malformed, dedup_latest, read_lines, retain_known, Dataset, ParseOptions, ParseReport};
use crate::domain::{Catalog, Interaction, Item, ItemId, UserId};
use crate::Result;

/// Depth-first flattening of arbitrarily nested string lists.
pub fn flatten_categories(value: &Value, out: &mut Vec<String>) {
    match value {
        Value::String(s) if !s.trim().is_empty() => out.push(s.trim().to_string()),
        Value::Array(items) => {
            for item in items {
                flatten_categories(item, out);
            }
        }
        _ => {}
    }
}

fn scalar_text(value: &Value) -> Option<String> {
    match value {
        Value::String(s) if !s.trim().is_empty() => Some(s.trim().to_string()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

enum MetaRow {
    Item(Item),
    Untitled,
}

fn parse_meta_row(line: &str) -> Option<MetaRow> {
    let value: Value = serde_json::from_str(line).ok()?;
    let object = value.as_object()?;
    let id = ItemId::new(object.get("asin")?.as_str()?).ok()?;
    let Some(title) = object.get("title").and_then(scalar_text) else {
        return Some(MetaRow::Untitled);
    };
    let mut categories = Vec::new();
    for key in ["categories", "category"] {
        if let Some(v) = object.get(key) {
            flatten_categories(v, &mut categories);
        }
    }
    let metadata: BTreeMap<String, String> = object
        .iter()
        .filter(|(k, _)| !matches!(k.as_str(), "asin" | "title" | "categories" | "category"))
        .filter_map(|(k, v)| scalar_text(v).map(|v| (k.clone(), v)))
        .collect();
    Item::new(id, title, categories, metadata).ok().map(MetaRow::Item)
}

fn parse_review_row(line: &str) -> Option<Interaction> {
    let value: Value = serde_json::from_str(line).ok()?;
    let rating = match value.get("overall") {
        None | Some(Value::Null) => None,
        Some(v) => {
            let r = v.as_f64()?;
            if !(1.0..=5.0).contains(&r) {
                return None;
            }
            Some(r)
        }
    };
    Some(Interaction {
        user: UserId::new(value.get("reviewerID")?.as_str()?).ok()?,
        item: ItemId::new(value.get("asin")?.as_str()?).ok()?,
        rating,
        timestamp: value.get("unixReviewTime")?.as_i64()?,
    })
}

pub fn parse_amazon(reviews: &Path, metadata: &Path, options: &ParseOptions) -> Result<(Dataset, ParseReport)> {
    let mut report = ParseReport::default();

    let mut catalog = Catalog::new();
    for line in read_lines(metadata)?.iter().filter(|l| !l.trim().is_empty()) {
        report.catalog_rows += 1;
        match parse_meta_row(line) {
            Some(MetaRow::Item(item)) => catalog.insert(item),
            Some(MetaRow::Untitled) => report.untitled += 1,
            None => report.catalog_malformed += 1,
        }
    }
    check_malformed(metadata, report.catalog_malformed, report.catalog_rows, options)?;

    let mut interactions = Vec::new();
    for line in read_lines(reviews)?.iter().filter(|l| !l.trim().is_empty()) {
        report.rows += 1;
        match parse_review_row(line) {
            Some(row) => interactions.push(row),
            None => report.malformed += 1,
        }
    }
    if report.malformed > 0 {
        tracing::warn!(path = %reviews.display(), "skipped {} malformed rows of {}", report.malformed, report.rows);
    }
    check_malformed(reviews, report.malformed, report.rows, options)?;

    report.duplicates = dedup_latest(&mut interactions);
    report.missing_item = retain_known(&mut interactions, &catalog);
    Ok((Dataset { interactions, catalog }, report))
}
