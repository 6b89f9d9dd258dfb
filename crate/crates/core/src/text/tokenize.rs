/// Lowercases and splits text into words.
///
/// A word is a maximal run of alphanumeric characters; every other
/// non-whitespace character (punctuation, symbols, emoji) becomes a word of
/// its own.
pub fn split_words(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut words = Vec::new();
    let mut current = String::new();
    for ch in lower.chars() {
        if ch.is_alphanumeric() {
            current.push(ch);
            continue;
        }
        if !current.is_empty() {
            words.push(std::mem::take(&mut current));
        }
        if !ch.is_whitespace() {
            words.push(ch.to_string());
        }
    }
    if !current.is_empty() {
        words.push(current);
    }
    words
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_on_whitespace_and_punctuation() {
        assert_eq!(split_words("I hate  you!"), ["i", "hate", "you", "!"]);
        assert_eq!(split_words("@user #MeToo"), ["@", "user", "#", "metoo"]);
        assert_eq!(split_words("Ünïcode ÀB"), ["ünïcode", "àb"]);
        assert!(split_words("   ").is_empty());
    }
}
