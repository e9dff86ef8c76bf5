//! Parser input: one sentence per line, tokens `word_POS` separated by
//! spaces. The tag is everything after the last `_`, so words may contain
//! underscores.

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TokenError {
    #[error("line {line}: token {token:?} is not of the form word_POS")]
    Malformed { line: usize, token: String },
    #[error("line {line}: empty sentence")]
    Empty { line: usize },
}

pub fn parse_tagged_line(text: &str, line: usize) -> Result<Vec<(String, String)>, TokenError> {
    let tokens = text
        .split_whitespace()
        .map(|tok| match tok.rsplit_once('_') {
            Some((w, p)) if !w.is_empty() && !p.is_empty() => Ok((w.to_string(), p.to_string())),
            _ => Err(TokenError::Malformed { line, token: tok.to_string() }),
        })
        .collect::<Result<Vec<_>, _>>()?;
    if tokens.is_empty() {
        return Err(TokenError::Empty { line });
    }
    Ok(tokens)
}

pub fn parse_tagged_text(text: &str) -> Result<Vec<Vec<(String, String)>>, TokenError> {
    text.lines().enumerate().map(|(k, l)| parse_tagged_line(l, k + 1)).collect()
}

/// Inverse of [`parse_tagged_line`].
pub fn format_tagged(tokens: &[(String, String)]) -> String {
    tokens.iter().map(|(w, p)| format!("{w}_{p}")).collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_at_last_underscore() {
        let t = parse_tagged_line("New_York_NNP is_VBZ  big_JJ", 1).unwrap();
        assert_eq!(t[0], ("New_York".to_string(), "NNP".to_string()));
        assert_eq!(t.len(), 3);
        assert_eq!(format_tagged(&t), "New_York_NNP is_VBZ big_JJ");
    }

    #[test]
    fn errors_name_the_line() {
        let e = parse_tagged_text("a_DT b_NN\nc_DT oops\n").unwrap_err();
        assert_eq!(e, TokenError::Malformed { line: 2, token: "oops".to_string() });
        assert!(e.to_string().starts_with("line 2:"));
        assert_eq!(parse_tagged_text("a_DT\n\n"), Err(TokenError::Empty { line: 2 }));
        assert!(parse_tagged_line("_NN", 1).is_err());
        assert!(parse_tagged_line("word_", 1).is_err());
    }
}
