/// Normalizes raw social-media text.
///
/// Rules, applied in order:
/// 1. whitespace characters become a plain space; other non-ASCII characters
///    are dropped;
/// 2. the text is split on ASCII whitespace; a token starting with `@`
///    becomes `<user>`, a token starting with `http://`, `https://` or `www.`
///    becomes `<url>` (prefix match is case-sensitive);
/// 3. tokens are re-joined with single spaces, so leading and trailing
///    whitespace disappears.
///
/// The function is idempotent.
pub fn preprocess_text(raw: &str) -> String {
    let ascii: String = raw
        .chars()
        .filter_map(|c| {
            if c.is_whitespace() {
                Some(' ')
            } else if c.is_ascii() {
                Some(c)
            } else {
                None
            }
        })
        .collect();

    let mut out = String::with_capacity(ascii.len());
    for token in ascii.split_ascii_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        if token.starts_with('@') {
            out.push_str("<user>");
        } else if token.starts_with("http://")
            || token.starts_with("https://")
            || token.starts_with("www.")
        {
            out.push_str("<url>");
        } else {
            out.push_str(token);
        }
    }
    out
}
