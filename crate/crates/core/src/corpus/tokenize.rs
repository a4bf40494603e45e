/// Characters detached from the edges of whitespace-delimited words.
pub fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '„' | '“' | '”' | '‚' | '‘' | '’' | '«' | '»' | '–' | '—' | '…' | '¿' | '¡'
        )
}

/// Whitespace tokenization with leading and trailing punctuation split off
/// as one token per character. Word-internal punctuation ("don't", "3.5")
/// stays attached.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let chars: Vec<char> = word.chars().collect();
        let mut start = 0;
        while start < chars.len() && is_punct(chars[start]) {
            start += 1;
        }
        if start == chars.len() {
            out.extend(chars.iter().map(|c| c.to_string()));
            continue;
        }
        let mut end = chars.len();
        while end > start && is_punct(chars[end - 1]) {
            end -= 1;
        }
        out.extend(chars[..start].iter().map(|c| c.to_string()));
        out.push(chars[start..end].iter().collect());
        out.extend(chars[end..].iter().map(|c| c.to_string()));
    }
    out
}

/// Joins tokens back into surface text, attaching closing punctuation to the
/// preceding word and opening punctuation to the following one.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    let mut glue_next = false;
    for tok in tokens {
        let tok = tok.as_ref();
        let closing = matches!(
            tok,
            "." | "," | "!" | "?" | ";" | ":" | ")" | "]" | "}" | "…" | "“" | "»"
        );
        let opening = matches!(tok, "(" | "[" | "{" | "„" | "«" | "¿" | "¡");
        if !out.is_empty() && !closing && !glue_next {
            out.push(' ');
        }
        out.push_str(tok);
        glue_next = opening;
    }
    out
}
