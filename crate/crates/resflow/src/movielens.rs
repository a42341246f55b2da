//! Loader for the MovieLens-1M `.dat` files (`ratings.dat`, `users.dat`,
//! `movies.dat`, `::`-separated).

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use resflow_core::data::{Dataset, Sample};
use resflow_core::embedding::{FieldSchema, FieldValue, Schema, TowerSide, VocabularyPolicy};

use crate::error::{CliError, CliResult};

pub const GENRES: [&str; 18] = [
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

pub fn schema() -> Schema {
    let q = |name: &str| FieldSchema::single(name).on_side(TowerSide::Query);
    let enumerated = |f: FieldSchema| f.with_policy(VocabularyPolicy::Enumerated);
    Schema::new(vec![
        q("user_id"),
        enumerated(q("gender")),
        enumerated(q("age")),
        enumerated(q("occupation")),
        q("zip"),
        FieldSchema::single("movie_id").on_side(TowerSide::Item),
        enumerated(FieldSchema::multi("genres").on_side(TowerSide::Item)),
        enumerated(FieldSchema::single("year").on_side(TowerSide::Item)),
    ])
    .expect("field names are distinct")
}

fn read_lines(path: &Path) -> CliResult<Vec<(usize, Vec<String>)>> {
    // movies.dat is Latin-1; titles are not used beyond the year.
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let text: String = bytes.iter().map(|&b| b as char).collect();
    Ok(text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.split("::").map(str::to_string).collect()))
        .collect())
}

fn bad(path: &Path, line: usize, what: &str) -> CliError {
    CliError::Data(format!("{}:{line}: malformed {what}", path.display()))
}

struct User {
    gender: u64,
    age: u64,
    occupation: u64,
    zip: u64,
}

struct Movie {
    genres: Vec<u64>,
    year: u64,
}

fn title_year(title: &str) -> u64 {
    let t = title.trim_end();
    t.strip_suffix(')').and_then(|t| t.rsplit_once('(')).and_then(|(_, y)| y.parse().ok()).unwrap_or(0)
}

/// Loads every rating as one sample with the star value as its target and
/// no binary labels.
pub fn load(dir: &Path) -> CliResult<Dataset> {
    let users_path = dir.join("users.dat");
    let mut zips = BTreeSet::new();
    let raw_users = read_lines(&users_path)?;
    for (_, f) in &raw_users {
        if let Some(z) = f.get(4) {
            zips.insert(z.trim().to_string());
        }
    }
    let zip_ids: HashMap<String, u64> = zips.into_iter().enumerate().map(|(i, z)| (z, i as u64 + 1)).collect();
    let mut users = HashMap::new();
    for (line, f) in &raw_users {
        if f.len() != 5 {
            return Err(bad(&users_path, *line, "user record"));
        }
        let num = |s: &str| s.trim().parse::<u64>().map_err(|_| bad(&users_path, *line, "user record"));
        let gender = match f[1].trim() {
            "M" => 1,
            "F" => 2,
            _ => return Err(bad(&users_path, *line, "gender")),
        };
        users
            .insert(num(&f[0])?, User { gender, age: num(&f[2])?, occupation: num(&f[3])?, zip: zip_ids[f[4].trim()] });
    }

    let movies_path = dir.join("movies.dat");
    let mut movies = HashMap::new();
    for (line, f) in read_lines(&movies_path)? {
        if f.len() != 3 {
            return Err(bad(&movies_path, line, "movie record"));
        }
        let id: u64 = f[0].trim().parse().map_err(|_| bad(&movies_path, line, "movie id"))?;
        let genres =
            f[2].trim().split('|').filter_map(|g| GENRES.iter().position(|x| *x == g).map(|p| p as u64 + 1)).collect();
        movies.insert(id, Movie { genres, year: title_year(&f[1]) });
    }

    let ratings_path = dir.join("ratings.dat");
    let mut samples = Vec::new();
    for (line, f) in read_lines(&ratings_path)? {
        if f.len() != 4 {
            return Err(bad(&ratings_path, line, "rating record"));
        }
        let num = |s: &str| s.trim().parse::<i64>().map_err(|_| bad(&ratings_path, line, "rating record"));
        let (uid, mid, rating, ts) = (num(&f[0])? as u64, num(&f[1])? as u64, num(&f[2])?, num(&f[3])?);
        let u = users.get(&uid).ok_or_else(|| bad(&ratings_path, line, "rating (unknown user)"))?;
        let m = movies.get(&mid).ok_or_else(|| bad(&ratings_path, line, "rating (unknown movie)"))?;
        samples.push(Sample {
            features: vec![
                FieldValue::Single(uid),
                FieldValue::Single(u.gender),
                FieldValue::Single(u.age),
                FieldValue::Single(u.occupation),
                FieldValue::Single(u.zip),
                FieldValue::Single(mid),
                FieldValue::Multi(m.genres.clone()),
                FieldValue::Single(m.year),
            ],
            labels: Vec::new(),
            target: Some(rating as f64),
            timestamp: ts,
            list: None,
        });
    }
    Ok(Dataset { schema: schema(), label_names: Vec::new(), samples })
}
