/// Default cap on tokens per post.
pub const MAX_TOKENS: usize = 50;

pub const URL: &str = "<url>";
pub const MENTION: &str = "<mention>";
pub const EMPTY: &str = "<empty>";

/// Rule-based tokenizer.
///
/// Text is lowercased and split on whitespace. A chunk starting with
/// `http://`, `https://` or `www.` becomes `<url>`, one starting with `@`
/// becomes `<mention>`. Any other chunk splits into runs of alphanumerics
/// (plus `_`) and single punctuation characters. At most `max_tokens` are
/// kept; text with no tokens yields `["<empty>"]`.
pub fn tokenize(text: &str, max_tokens: usize) -> Vec<String> {
    let mut out = Vec::new();
    'chunks: for chunk in text.split_whitespace() {
        let chunk = chunk.to_lowercase();
        if chunk.starts_with("http://") || chunk.starts_with("https://") || chunk.starts_with("www.") {
            out.push(URL.to_string());
        } else if chunk.len() > 1 && chunk.starts_with('@') {
            out.push(MENTION.to_string());
        } else {
            let mut word = String::new();
            for ch in chunk.chars() {
                if ch.is_alphanumeric() || ch == '_' {
                    word.push(ch);
                    continue;
                }
                if !word.is_empty() {
                    out.push(std::mem::take(&mut word));
                }
                if out.len() >= max_tokens {
                    break 'chunks;
                }
                out.push(ch.to_string());
                if out.len() >= max_tokens {
                    break 'chunks;
                }
            }
            if !word.is_empty() {
                out.push(word);
            }
        }
        if out.len() >= max_tokens {
            break;
        }
    }
    out.truncate(max_tokens);
    if out.is_empty() {
        out.push(EMPTY.to_string());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_cases() {
        assert_eq!(tokenize("Really?!", MAX_TOKENS), ["really", "?", "!"]);
        assert_eq!(tokenize("", MAX_TOKENS), ["<empty>"]);
        assert_eq!(tokenize("   ", MAX_TOKENS), ["<empty>"]);
        assert_eq!(tokenize("see https://x.co", MAX_TOKENS), ["see", "<url>"]);
        assert_eq!(tokenize("@bob it's FAKE", MAX_TOKENS), ["<mention>", "it", "'", "s", "fake"]);
        assert_eq!(tokenize("#Breaking news", MAX_TOKENS), ["#", "breaking", "news"]);
    }

    #[test]
    fn cap_applies() {
        let long = "a ".repeat(80);
        assert_eq!(tokenize(&long, MAX_TOKENS).len(), 50);
        assert_eq!(tokenize("a!b!c!", 3), ["a", "!", "b"]);
        assert_eq!(tokenize("x y", 0), ["<empty>"]);
    }
}
