//! Tokenizers shared by the scorers.

fn fold_apostrophes(c: char) -> char {
    match c {
        '\u{2019}' | '\u{2018}' | '`' => '\'',
        _ => c,
    }
}

/// Tokens for slot matching: lower-cased, apostrophes removed ("isn't" →
/// "isnt"), every other non-alphanumeric character except `£` treated as a
/// separator.
pub fn match_tokens(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in text.chars().map(fold_apostrophes) {
        if c == '\'' {
            continue;
        }
        if c.is_alphanumeric() || c == '£' {
            current.extend(c.to_lowercase());
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Word/punctuation tokens. Words keep inner apostrophes; a run of dots is a
/// single token so "..." differs from "."; every other punctuation character
/// is its own token. Lower-cased.
pub fn word_tokens(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().map(fold_apostrophes).collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_alphanumeric() {
            let mut word = String::new();
            while i < chars.len() {
                let c = chars[i];
                let inner_apostrophe = c == '\''
                    && i + 1 < chars.len()
                    && chars[i + 1].is_alphanumeric()
                    && !word.is_empty();
                if c.is_alphanumeric() || inner_apostrophe {
                    word.extend(c.to_lowercase());
                    i += 1;
                } else {
                    break;
                }
            }
            tokens.push(word);
        } else if c == '.' {
            let start = i;
            while i < chars.len() && chars[i] == '.' {
                i += 1;
            }
            tokens.push(chars[start..i].iter().collect());
        } else {
            tokens.push(c.to_string());
            i += 1;
        }
    }
    tokens
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn match_tokens_strip_punctuation() {
        assert_eq!(
            match_tokens("It isn't kid-friendly, nameVariable!"),
            ["it", "isnt", "kid", "friendly", "namevariable"]
        );
        assert_eq!(match_tokens("less than £20"), ["less", "than", "£20"]);
        assert_eq!(match_tokens("it\u{2019}s"), ["its"]);
    }

    #[test]
    fn word_tokens_keep_punctuation() {
        assert_eq!(
            word_tokens("Oh gosh mmhm... I don't know, okay?"),
            ["oh", "gosh", "mmhm", "...", "i", "don't", "know", ",", "okay", "?"]
        );
        assert_eq!(word_tokens("pub!"), ["pub", "!"]);
        assert_eq!(word_tokens("'quoted'"), ["'", "quoted", "'"]);
    }
}
