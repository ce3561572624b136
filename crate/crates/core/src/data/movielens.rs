//! MovieLens ratings and movie metadata.
//!
//! Ratings rows are `user item rating timestamp`, separated by `::` (ml-1m
//! and later) or a tab (ml-100k). Movie rows are either `id::title::A|B`
//! or the ml-100k `u.item` layout with 19 trailing genre flags.

use std::collections::BTreeMap;
use std::path::Path;

use super::{check_malformed, dedup_latest, read_lines, retain_known, Dataset, ParseOptions, ParseReport};
use crate::domain::{Catalog, Interaction, Item, ItemId, UserId};
use crate::Result;

const ML100K_GENRES: [&str; 19] = [
    "unknown",
    "Action",
    "Adventure",
    "Animation",
    "Children's",
    "Comedy",
    "Crime",
    "Documentary",
    "Drama",
    "Fantasy",
    "Film-Noir",
    "Horror",
    "Musical",
    "Mystery",
    "Romance",
    "Sci-Fi",
    "Thriller",
    "War",
    "Western",
];

fn split_row<'a>(line: &'a str, delimiter: &str) -> Vec<&'a str> {
    line.split(delimiter).map(str::trim).collect()
}

fn rating_delimiter(lines: &[String]) -> &'static str {
    match lines.iter().find(|l| !l.trim().is_empty()) {
        Some(l) if l.contains("::") => "::",
        _ => "\t",
    }
}

fn parse_rating_row(line: &str, delimiter: &str) -> Option<Interaction> {
    let fields = split_row(line, delimiter);
    if fields.len() != 4 {
        return None;
    }
    let rating = match fields[2] {
        "" => None,
        r => {
            let r: f64 = r.parse().ok()?;
            if !(1.0..=5.0).contains(&r) {
                return None;
            }
            Some(r)
        }
    };
    Some(Interaction {
        user: UserId::new(fields[0]).ok()?,
        item: ItemId::new(fields[1]).ok()?,
        rating,
        timestamp: fields[3].parse().ok()?,
    })
}

fn parse_movie_row(line: &str) -> Option<Item> {
    if line.contains("::") {
        let fields = split_row(line, "::");
        if fields.len() != 3 {
            return None;
        }
        let genres = fields[2]
            .split('|')
            .map(str::trim)
            .filter(|g| !g.is_empty() && *g != "(no genres listed)")
            .map(String::from)
            .collect();
        return Item::new(ItemId::new(fields[0]).ok()?, fields[1], genres, BTreeMap::new()).ok();
    }
    let fields = split_row(line, "|");
    if fields.len() != 5 + ML100K_GENRES.len() {
        return None;
    }
    let mut genres = Vec::new();
    for (flag, name) in fields[5..].iter().zip(ML100K_GENRES) {
        match *flag {
            "1" => genres.push(name.to_string()),
            "0" => {}
            _ => return None,
        }
    }
    let mut metadata = BTreeMap::new();
    for (key, value) in [("release_date", fields[2]), ("imdb_url", fields[4])] {
        if !value.is_empty() {
            metadata.insert(key.to_string(), value.to_string());
        }
    }
    Item::new(ItemId::new(fields[0]).ok()?, fields[1], genres, metadata).ok()
}

pub fn parse_movielens(ratings: &Path, movies: &Path, options: &ParseOptions) -> Result<(Dataset, ParseReport)> {
    let mut report = ParseReport::default();

    let mut catalog = Catalog::new();
    for line in read_lines(movies)?.iter().filter(|l| !l.trim().is_empty()) {
        report.catalog_rows += 1;
        match parse_movie_row(line) {
            Some(item) => catalog.insert(item),
            None => report.catalog_malformed += 1,
        }
    }
    check_malformed(movies, report.catalog_malformed, report.catalog_rows, options)?;

    let lines = read_lines(ratings)?;
    let delimiter = rating_delimiter(&lines);
    let mut interactions = Vec::new();
    for line in lines.iter().filter(|l| !l.trim().is_empty()) {
        report.rows += 1;
        match parse_rating_row(line, delimiter) {
            Some(row) => interactions.push(row),
            None => report.malformed += 1,
        }
    }
    if report.malformed > 0 {
        tracing::warn!(path = %ratings.display(), "skipped {} malformed rows of {}", report.malformed, report.rows);
    }
    check_malformed(ratings, report.malformed, report.rows, options)?;

    report.duplicates = dedup_latest(&mut interactions);
    report.missing_item = retain_known(&mut interactions, &catalog);
    Ok((Dataset { interactions, catalog }, report))
}
