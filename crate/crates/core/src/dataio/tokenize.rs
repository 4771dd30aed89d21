/// Lowercases, splits on whitespace and breaks punctuation into its own
/// tokens. An apostrophe inside a word starts a clitic token (`man's` →
/// `man`, `'s`).
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let chars: Vec<char> = lower.chars().collect();
    let mut tokens = Vec::new();
    let mut word = String::new();
    let flush = |word: &mut String, tokens: &mut Vec<String>| {
        if !word.is_empty() {
            tokens.push(std::mem::take(word));
        }
    };
    for (i, &c) in chars.iter().enumerate() {
        if c.is_whitespace() {
            flush(&mut word, &mut tokens);
        } else if c == '\'' || c == '\u{2019}' {
            let next_alpha = chars.get(i + 1).is_some_and(|n| n.is_alphabetic());
            flush(&mut word, &mut tokens);
            if next_alpha && i > 0 && chars[i - 1].is_alphanumeric() {
                word.push('\'');
            } else {
                tokens.push("'".to_string());
            }
        } else if c.is_alphanumeric() {
            word.push(c);
        } else {
            flush(&mut word, &mut tokens);
            tokens.push(c.to_string());
        }
    }
    flush(&mut word, &mut tokens);
    tokens
}
