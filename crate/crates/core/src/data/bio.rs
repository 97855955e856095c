use std::fmt;

use crate::error::{Error, Result};

/// One tag of the BIO scheme. Bare `B` and `I` carry an empty type.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum BioTag {
    Outside,
    Begin(String),
    Inside(String),
}

impl BioTag {
    pub fn parse(tag: &str) -> Result<Self> {
        match tag {
            "O" => Ok(BioTag::Outside),
            "B" => Ok(BioTag::Begin(String::new())),
            "I" => Ok(BioTag::Inside(String::new())),
            _ => match tag.split_once('-') {
                Some(("B", ty)) if !ty.is_empty() => Ok(BioTag::Begin(ty.to_string())),
                Some(("I", ty)) if !ty.is_empty() => Ok(BioTag::Inside(ty.to_string())),
                _ => Err(Error::BioSyntax(tag.to_string())),
            },
        }
    }

    pub fn entity_type(&self) -> Option<&str> {
        match self {
            BioTag::Outside => None,
            BioTag::Begin(t) | BioTag::Inside(t) => Some(t),
        }
    }
}

impl fmt::Display for BioTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BioTag::Outside => f.write_str("O"),
            BioTag::Begin(t) if t.is_empty() => f.write_str("B"),
            BioTag::Inside(t) if t.is_empty() => f.write_str("I"),
            BioTag::Begin(t) => write!(f, "B-{t}"),
            BioTag::Inside(t) => write!(f, "I-{t}"),
        }
    }
}

/// An `I-X` that does not continue a `B-X`/`I-X` run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BioViolation {
    pub index: usize,
    pub tag: String,
}

/// Lists every `I-X` not preceded by `B-X` or `I-X` of the same type.
/// An empty list means the sequence is well formed.
pub fn validate_bio<S: AsRef<str>>(tags: &[S]) -> Result<Vec<BioViolation>> {
    let mut violations = Vec::new();
    let mut prev = BioTag::Outside;
    for (index, raw) in tags.iter().enumerate() {
        let tag = BioTag::parse(raw.as_ref())?;
        if let BioTag::Inside(ty) = &tag {
            if prev.entity_type() != Some(ty.as_str()) {
                violations.push(BioViolation {
                    index,
                    tag: raw.as_ref().to_string(),
                });
            }
        }
        prev = tag;
    }
    Ok(violations)
}

/// Promotes every stray `I-X` to `B-X`; returns the number of repairs.
pub fn repair_bio(tags: &mut [String]) -> Result<usize> {
    let violations = validate_bio(tags)?;
    for v in &violations {
        let ty = v.tag.strip_prefix('I').unwrap_or("");
        tags[v.index] = format!("B{ty}");
    }
    Ok(violations.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validate_examples() {
        assert!(validate_bio(&["B-Chem", "I-Chem", "O"]).unwrap().is_empty());
        assert_eq!(
            validate_bio(&["O", "I-Chem"]).unwrap(),
            vec![BioViolation {
                index: 1,
                tag: "I-Chem".into()
            }]
        );
        let v = validate_bio(&["B-Chem", "I-Dis"]).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].index, 1);
        assert!(matches!(validate_bio(&["O", "X-Chem"]), Err(Error::BioSyntax(_))));
        assert!(matches!(validate_bio(&["B-"]), Err(Error::BioSyntax(_))));
    }

    #[test]
    fn typeless_tags() {
        assert!(validate_bio(&["B", "I", "O"]).unwrap().is_empty());
        assert_eq!(validate_bio(&["O", "I"]).unwrap().len(), 1);
        assert_eq!(BioTag::parse("I").unwrap().to_string(), "I");
    }

    #[test]
    fn repair_promotes_stray_inside() {
        let mut tags: Vec<String> = ["I-Chem", "I-Chem", "O", "I", "B-Dis", "I-Chem"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(repair_bio(&mut tags).unwrap(), 3);
        assert_eq!(tags, vec!["B-Chem", "I-Chem", "O", "B", "B-Dis", "B-Chem"]);
        assert!(validate_bio(&tags).unwrap().is_empty());
    }
}
