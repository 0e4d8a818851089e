use views_core::entities::EntitySet;
use views_core::knowledge::build_ke_prompt;
use views_core::prompts::{caption_prompt, entity_prompt, rater_prompt};

const CONTEXT: &str = "- President Ellen Johnson Sirleaf greets George Bush at the airport in Monrovia.\n- Crowds line the streets of the capital.";
const SUMMARY: &str =
    "Liberian President Ellen Johnson Sirleaf welcomed George Bush in Monrovia as crowds lined the streets.";

fn golden(name: &str) -> String {
    let path = format!("{}/tests/fixtures/prompts/{name}.golden", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

fn entities() -> EntitySet {
    EntitySet::new()
        .with("PERSON", &["Ellen Johnson Sirleaf", "George Bush"])
        .with("GPE", &["Monrovia"])
}

#[test]
fn caption_prompt_matches_golden() {
    assert_eq!(caption_prompt(CONTEXT), golden("caption"));
}

#[test]
fn rater_prompt_matches_golden() {
    assert_eq!(rater_prompt(CONTEXT, SUMMARY), golden("rater"));
}

#[test]
fn entity_prompt_matches_golden() {
    assert_eq!(entity_prompt(CONTEXT), golden("entities"));
}

#[test]
fn knowledge_prompts_match_golden() {
    assert_eq!(build_ke_prompt(&entities(), true).rendered_text, golden("knowledge_structured"));
    assert_eq!(build_ke_prompt(&entities(), false).rendered_text, golden("knowledge_flat"));
}

#[test]
fn placeholders_inside_values_are_not_expanded() {
    let p = rater_prompt("see <summary>", "s");
    assert!(p.contains("Context: see <summary>\n"));
}
