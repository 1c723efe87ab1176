//! Which tags dominate the top of a ranking: for each of the top-m songs,
//! take the strongest eligible tag activation and count occurrences.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::tags::TagVector;

use super::EvalError;

/// Tag-name → count over the top-m songs of one ranking. Counts sum to `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenreDistribution {
    pub counts: BTreeMap<String, usize>,
    pub m: usize,
}

/// Count dominant tags over the first `m` songs of `ranking` (best first).
///
/// `eligible` restricts the argmax to a tag subset (e.g. the genre tags);
/// pass all indices to consider every tag. Ties go to the lowest tag index.
pub fn genre_distribution(
    ranking: &[String],
    tags: &BTreeMap<String, TagVector>,
    tag_names: &[String],
    eligible: &[usize],
    m: usize,
) -> Result<GenreDistribution, EvalError> {
    if m > ranking.len() {
        return Err(EvalError::InvalidArgument(format!(
            "top-{m} requested from a ranking of {}",
            ranking.len()
        )));
    }
    if eligible.is_empty() {
        return Err(EvalError::InvalidArgument("no eligible tags".into()));
    }
    if let Some(&bad) = eligible.iter().find(|&&i| i >= tag_names.len()) {
        return Err(EvalError::InvalidArgument(format!(
            "eligible tag index {bad} out of range for {} names",
            tag_names.len()
        )));
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for song_id in &ranking[..m] {
        let vector = tags
            .get(song_id)
            .ok_or_else(|| EvalError::MissingTags(song_id.clone()))?;
        let idx = vector
            .argmax_among(eligible)
            .ok_or_else(|| EvalError::InvalidArgument("eligible index out of tag range".into()))?;
        *counts.entry(tag_names[idx].clone()).or_insert(0) += 1;
    }
    Ok(GenreDistribution { counts, m })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tags::{default_tag_names, TagVector, TAG_DIM};

    fn tag_with_peak(peak: usize) -> TagVector {
        let mut raw = vec![0.1; TAG_DIM];
        raw[peak] = 0.9;
        TagVector::from_scores(raw).unwrap().0
    }

    #[test]
    fn counts_sum_to_m_and_match_hand_count() {
        let names = default_tag_names();
        let mut tags = BTreeMap::new();
        tags.insert("s1".to_string(), tag_with_peak(0)); // pop
        tags.insert("s2".to_string(), tag_with_peak(0)); // pop
        tags.insert("s3".to_string(), tag_with_peak(1)); // rock
        let ranking = vec!["s1".to_string(), "s2".to_string(), "s3".to_string()];
        let eligible: Vec<usize> = (0..TAG_DIM).collect();
        let d = genre_distribution(&ranking, &tags, &names, &eligible, 3).unwrap();
        assert_eq!(d.counts.values().sum::<usize>(), 3);
        assert_eq!(d.counts["tag00"], 2);
        assert_eq!(d.counts["tag01"], 1);
    }

    #[test]
    fn single_dominant_tag() {
        let names = default_tag_names();
        let mut tags = BTreeMap::new();
        for i in 0..5 {
            tags.insert(format!("s{i}"), tag_with_peak(7));
        }
        let ranking: Vec<String> = (0..5).map(|i| format!("s{i}")).collect();
        let eligible: Vec<usize> = (0..TAG_DIM).collect();
        let d = genre_distribution(&ranking, &tags, &names, &eligible, 5).unwrap();
        assert_eq!(d.counts.len(), 1);
        assert_eq!(d.counts["tag07"], 5);
    }

    #[test]
    fn missing_tags_name_the_song() {
        let names = default_tag_names();
        let tags = BTreeMap::new();
        let ranking = vec!["ghost".to_string()];
        let eligible: Vec<usize> = (0..TAG_DIM).collect();
        match genre_distribution(&ranking, &tags, &names, &eligible, 1) {
            Err(EvalError::MissingTags(id)) => assert_eq!(id, "ghost"),
            other => panic!("expected MissingTags, got {other:?}"),
        }
    }

    #[test]
    fn eligible_subset_restricts_argmax() {
        let names = default_tag_names();
        let mut tags = BTreeMap::new();
        // Strongest overall is tag 30, strongest genre tag is 4.
        let mut raw = vec![0.0; TAG_DIM];
        raw[30] = 0.9;
        raw[4] = 0.5;
        tags.insert("s".to_string(), TagVector::from_scores(raw).unwrap().0);
        let ranking = vec!["s".to_string()];
        let genre: Vec<usize> = (0..10).collect();
        let d = genre_distribution(&ranking, &tags, &names, &genre, 1).unwrap();
        assert_eq!(d.counts["tag04"], 1);
    }
}
