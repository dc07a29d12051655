use crate::error::{BackendError, Error, Result};
use crate::model::EditType;

/// Backend consulted when no keyword rule fires.
pub trait ClassifierFallback: Send + Sync {
    fn classify(&self, prompt: &str) -> Result<String, BackendError>;
}

const QUANTITY: &[&str] = &["how many", "how much", "number of", "count", "how often"];
const OBJECT_HEAD: &[&str] = &[
    "what object",
    "which object",
    "what kind of object",
    "what type of object",
    "what item",
    "what animal",
    "what kind of animal",
];
const ATTRIBUTE_HEAD: &[&str] = &[
    "what color",
    "what colour",
    "what size",
    "what material",
    "what shape",
    "what pattern",
    "what texture",
    "what is the color",
    "what is the colour",
    "what is the size",
    "what is the material",
    "what is the shape",
];
const SPATIAL_HEAD: &[&str] = &["where", "which side", "what side", "in which direction"];
const ATTRIBUTE_BODY: &[&str] = &[
    "color", "colour", "colored", "coloured", "size", "material", "made of", "shape", "texture", "pattern", "big",
    "small", "large", "tall", "short", "wooden", "metal", "plastic",
];
const SPATIAL_BODY: &[&str] = &[
    "left",
    "right",
    "behind",
    "in front of",
    "above",
    "below",
    "under",
    "underneath",
    "on top of",
    "next to",
    "beside",
    "between",
    "near",
    "inside",
    "outside",
    "top",
    "bottom",
    "position",
    "located",
];
const OBJECT_BODY: &[&str] = &[
    "is there",
    "are there",
    "what is the",
    "what is",
    "what are",
    "which",
    "holding",
    "wearing",
    "carrying",
    "object",
    "who is",
];

/// Lowercases and collapses everything but letters and digits into single
/// spaces, padded on both ends so phrase lookups respect word boundaries.
pub(crate) fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len() + 2);
    out.push(' ');
    let mut last_space = true;
    for c in text.chars() {
        if c.is_alphanumeric() {
            out.extend(c.to_lowercase());
            last_space = false;
        } else if !last_space {
            out.push(' ');
            last_space = true;
        }
    }
    if !last_space {
        out.push(' ');
    }
    out
}

fn has_any(norm: &str, phrases: &[&str]) -> bool {
    phrases.iter().any(|p| norm.contains(&format!(" {p} ")))
}

fn starts_with_any(norm: &str, phrases: &[&str]) -> bool {
    phrases.iter().any(|p| norm.starts_with(&format!(" {p} ")))
}

/// The pure rule path. `None` when no rule fires.
pub fn classify_rules(prompt: &str) -> Option<EditType> {
    let n = normalize(prompt);
    if has_any(&n, QUANTITY) {
        return Some(EditType::Quantity);
    }
    if starts_with_any(&n, OBJECT_HEAD) {
        return Some(EditType::Object);
    }
    if starts_with_any(&n, ATTRIBUTE_HEAD) {
        return Some(EditType::Attribute);
    }
    if starts_with_any(&n, SPATIAL_HEAD) {
        return Some(EditType::Spatial);
    }
    if has_any(&n, ATTRIBUTE_BODY) {
        return Some(EditType::Attribute);
    }
    if has_any(&n, SPATIAL_BODY) {
        return Some(EditType::Spatial);
    }
    if has_any(&n, OBJECT_BODY) {
        return Some(EditType::Object);
    }
    None
}

/// Reads an edit type name out of a free-text backend reply.
pub fn parse_edit_type(raw: &str) -> Option<EditType> {
    let n = normalize(raw);
    let mut found = EditType::ALL
        .iter()
        .filter(|t| n.contains(&format!(" {} ", t.as_str())));
    let first = *found.next()?;
    // an answer naming several types is not an answer
    found.next().is_none().then_some(first)
}

pub fn classify_edit_type(prompt: &str, fallback: Option<&dyn ClassifierFallback>) -> Result<EditType> {
    if prompt.trim().is_empty() {
        return Err(Error::Invalid("cannot classify an empty prompt".into()));
    }
    if let Some(t) = classify_rules(prompt) {
        return Ok(t);
    }
    let Some(fallback) = fallback else {
        return Ok(EditType::Other);
    };
    let raw = fallback
        .classify(prompt)
        .map_err(|e| Error::Classification { raw: e.to_string() })?;
    parse_edit_type(&raw).ok_or(Error::Classification { raw })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed(Result<String, BackendError>);

    impl ClassifierFallback for Fixed {
        fn classify(&self, _: &str) -> Result<String, BackendError> {
            self.0.clone()
        }
    }

    #[test]
    fn taxonomy_examples() {
        assert_eq!(
            classify_rules("How many cats are on the sofa?"),
            Some(EditType::Quantity)
        );
        assert_eq!(
            classify_rules("What object is the girl holding?"),
            Some(EditType::Object)
        );
        assert_eq!(classify_rules("Is there a car?"), Some(EditType::Object));
        assert_eq!(
            classify_rules("What color is the girl's hair?"),
            Some(EditType::Attribute)
        );
        assert_eq!(classify_rules("Where is the cup?"), Some(EditType::Spatial));
        assert_eq!(classify_rules("Is the cup left of the plate?"), Some(EditType::Spatial));
    }

    #[test]
    fn word_boundaries_are_respected() {
        // "count" must not fire inside "country", "left" not inside "leftover"
        assert_eq!(classify_rules("Which country is this?"), Some(EditType::Object));
        assert_eq!(classify_rules("Describe the leftover mood"), None);
    }

    #[test]
    fn fallback_is_used_only_when_rules_are_silent() {
        let fb = Fixed(Ok("Category: Spatial".into()));
        assert_eq!(
            classify_edit_type("How many cats?", Some(&fb)).unwrap(),
            EditType::Quantity
        );
        assert_eq!(
            classify_edit_type("Why is it sunny?", Some(&fb)).unwrap(),
            EditType::Spatial
        );
        assert_eq!(classify_edit_type("Why is it sunny?", None).unwrap(), EditType::Other);
    }

    #[test]
    fn unparseable_fallback_carries_raw_reply() {
        let fb = Fixed(Ok("no idea".into()));
        match classify_edit_type("Why is it sunny?", Some(&fb)) {
            Err(Error::Classification { raw }) => assert_eq!(raw, "no idea"),
            other => panic!("unexpected {other:?}"),
        }
        let fb = Fixed(Ok("object or attribute".into()));
        assert!(classify_edit_type("Why?", Some(&fb)).is_err());
    }
}
