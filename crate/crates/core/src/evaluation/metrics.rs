/// Lowercase, drop ASCII punctuation, drop the articles `a`, `an`, `the`,
/// and collapse whitespace.
pub fn normalize_answer(text: &str) -> String {
    let stripped: String = text
        .to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    stripped
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// 1 when the normalized prediction equals some normalized gold answer.
pub fn exact_match(prediction: &str, answers: &[String]) -> u8 {
    let pred = normalize_answer(prediction);
    u8::from(answers.iter().any(|a| normalize_answer(a) == pred))
}
