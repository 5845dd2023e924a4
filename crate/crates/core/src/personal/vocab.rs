use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

/// Relation predicate meaning "no companion": no anonymous person is created.
pub const ALONE_MARKER: &str = "AloneMarker";

/// `where` answers that denote a residence.
pub const RESIDENCE_ANSWERS: &[&str] = &["Home", "Relatives Home", "House (friends, others)"];

const WHERE: &[(&str, &str)] = &[
    ("Home", "Home"),
    ("Relatives Home", "Home"),
    ("House (friends, others)", "House"),
    ("Classroom / Study hall", "Classroom"),
    ("Library", "Library"),
    ("Other university place", "University"),
    ("Workplace", "Workplace"),
    ("Bar / Pub", "Pub"),
    ("Restaurant / Canteen", "Restaurant"),
    ("Shop / Supermarket", "Shop"),
    ("Bank / Post office", "Bank"),
    ("Gym / Sport centre", "SportsCentre"),
    ("Outdoors", "Outdoors"),
    ("Street", "Street"),
    ("Public transport", "Transport"),
    ("Car / Motorbike", "Vehicle"),
    ("Other place", "Place"),
];

const WHAT: &[&str] = &[
    "Sleeping",
    "Eating",
    "Studying",
    "Lesson",
    "Personal care",
    "Work",
    "Social life",
    "Sport",
    "Shopping",
    "Travelling",
    "Cooking",
    "Housework",
    "Reading",
    "Watching TV",
    "Social media",
    "Listening to music",
    "Phone calls",
    "Hobbies",
    "Break",
    "Walking",
    "Voluntary work",
    "Religious activities",
    "Other",
];

const WITH_WHOM: &[(&str, &str)] = &[
    ("Alone", ALONE_MARKER),
    ("Friend(s)", "FriendOf"),
    ("Classmate(s)", "ClassmateOf"),
    ("Roommate(s)", "FriendOf"),
    ("Partner", "PartnerOf"),
    ("Relative(s)", "RelativeOf"),
    ("Colleague(s)", "ColleagueOf"),
    ("Stranger(s)", "StrangerTo"),
    ("Other", "OtherRelation"),
];

/// Closed answer sets of the diary questions and how they map to schema terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Vocabulary {
    /// `where` answer to personal place etype.
    #[serde(rename = "where")]
    pub where_: BTreeMap<String, String>,
    pub what: BTreeSet<String>,
    /// `withWhom` answer to relation predicate.
    #[serde(rename = "withWhom")]
    pub with_whom: BTreeMap<String, String>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Vocabulary {
            where_: WHERE.iter().map(|(a, e)| (a.to_string(), e.to_string())).collect(),
            what: WHAT.iter().map(|s| s.to_string()).collect(),
            with_whom: WITH_WHOM.iter().map(|(a, p)| (a.to_string(), p.to_string())).collect(),
        }
    }
}

impl Vocabulary {
    pub fn place_etype(&self, answer: &str) -> Option<&str> {
        self.where_.get(answer).map(String::as_str)
    }

    pub fn relation(&self, answer: &str) -> Option<&str> {
        self.with_whom.get(answer).map(String::as_str)
    }

    /// `where` answers mapped to `etype`, in answer order.
    pub fn answers_for_etype<'a>(&'a self, etype: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.where_.iter().filter(move |(_, e)| *e == etype).map(|(a, _)| a.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn answer_set_sizes() {
        let v = Vocabulary::default();
        assert_eq!(v.where_.len(), 17);
        assert_eq!(v.what.len(), 23);
        assert_eq!(v.with_whom.len(), 9);
        assert_eq!(v.place_etype("Classroom / Study hall"), Some("Classroom"));
        assert!(v.what.contains("Sleeping") && v.what.contains("Eating") && v.what.contains("Studying"));
        assert_eq!(v.relation("Friend(s)"), Some("FriendOf"));
        assert_eq!(v.relation("Classmate(s)"), Some("ClassmateOf"));
        for r in RESIDENCE_ANSWERS {
            assert!(v.place_etype(r).is_some());
        }
    }

    #[test]
    fn relation_vocabulary_is_closed() {
        let allowed = [
            "FriendOf",
            "ClassmateOf",
            "RelativeOf",
            "PartnerOf",
            "ColleagueOf",
            "StrangerTo",
            ALONE_MARKER,
            "OtherRelation",
        ];
        for p in Vocabulary::default().with_whom.values() {
            assert!(allowed.contains(&p.as_str()), "{p}");
        }
    }

    #[test]
    fn partial_config_keeps_defaults() {
        let v: Vocabulary = serde_json::from_str(r#"{"what": ["Napping"]}"#).unwrap();
        assert_eq!(v.what.len(), 1);
        assert_eq!(v.where_.len(), 17);
    }
}
