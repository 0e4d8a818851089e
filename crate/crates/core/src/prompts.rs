//! Versioned prompt templates for the caption writer, rater, entity
//! extractor and knowledge extractor.

pub const TEMPLATE_VERSION: &str = "1";

pub const CAPTION_TEMPLATE: &str = include_str!("../assets/prompts/caption.txt");
pub const RATER_TEMPLATE: &str = include_str!("../assets/prompts/rater.txt");
pub const ENTITY_TEMPLATE: &str = include_str!("../assets/prompts/entities.txt");
pub const KNOWLEDGE_TEMPLATE: &str = include_str!("../assets/prompts/knowledge.txt");

pub const BULLETS: &str = "<bullet_summaries>";
pub const SUMMARY: &str = "<summary>";
pub const ENTITIES: &str = "<entities>";

/// Sentence appended to the caption prompt when a reply still carries dates.
pub const DATE_REMINDER: &str = "Please don't include specific dates";

/// Substitutes placeholders in a single left-to-right pass, so substituted
/// values are never rescanned.
pub fn render(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + values.iter().map(|(_, v)| v.len()).sum::<usize>());
    let mut rest = template;
    'scan: while let Some(pos) = rest.find('<') {
        for (key, value) in values {
            if rest[pos..].starts_with(key) {
                out.push_str(&rest[..pos]);
                out.push_str(value);
                rest = &rest[pos + key.len()..];
                continue 'scan;
            }
        }
        out.push_str(&rest[..=pos]);
        rest = &rest[pos + 1..];
    }
    out.push_str(rest);
    out
}

pub fn caption_prompt(context: &str) -> String {
    render(CAPTION_TEMPLATE, &[(BULLETS, context)])
}

pub fn rater_prompt(context: &str, summary: &str) -> String {
    render(RATER_TEMPLATE, &[(BULLETS, context), (SUMMARY, summary)])
}

pub fn entity_prompt(text: &str) -> String {
    render(ENTITY_TEMPLATE, &[(BULLETS, text)])
}

pub fn knowledge_prompt(entities: &str) -> String {
    render(KNOWLEDGE_TEMPLATE, &[(ENTITIES, entities)])
}

/// Text following `label` up to the next blank line, if present.
pub(crate) fn section<'a>(prompt: &'a str, label: &str) -> Option<&'a str> {
    let start = prompt.find(label)? + label.len();
    let body = &prompt[start..];
    let end = body.find("\n\n").unwrap_or(body.len());
    Some(&body[..end])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn templates_hold_their_placeholders_once() {
        assert_eq!(CAPTION_TEMPLATE.matches(BULLETS).count(), 1);
        assert_eq!(RATER_TEMPLATE.matches(BULLETS).count(), 1);
        assert_eq!(RATER_TEMPLATE.matches(SUMMARY).count(), 1);
        assert_eq!(ENTITY_TEMPLATE.matches(BULLETS).count(), 1);
        assert_eq!(KNOWLEDGE_TEMPLATE.matches(ENTITIES).count(), 1);
    }

    #[test]
    fn values_are_not_rescanned() {
        let p = rater_prompt("says <summary>", "S");
        assert!(p.contains("Context: says <summary>\n"));
        assert!(p.contains("Summary: S\n"));
    }

    #[test]
    fn entity_format_hint_survives() {
        assert!(entity_prompt("x").contains("{<Entity_Type>: [<Entity_list>]}."));
    }

    #[test]
    fn section_extraction() {
        let p = knowledge_prompt("{PERSON: [A]}");
        assert_eq!(section(&p, "Entities: "), Some("{PERSON: [A]}"));
    }
}
