//! Parsing model replies.

use super::GatewayError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub verdict: bool,
    pub explanation: String,
}

/// Reads a leading Yes/No; the rest of the reply is the explanation.
pub fn parse_yes_no(reply: &str) -> Result<Verdict, GatewayError> {
    let t = reply.trim_start_matches(|c: char| c.is_whitespace() || matches!(c, '*' | '"' | '\'' | '`' | '>'));
    let word: String = t.chars().take_while(|c| c.is_alphabetic()).collect();
    let verdict = match word.to_ascii_lowercase().as_str() {
        "yes" => true,
        "no" => false,
        _ => return Err(GatewayError::Unparseable(reply.chars().take(80).collect())),
    };
    let rest = &t[word.len()..];
    let explanation = rest
        .trim_start_matches(|c: char| c.is_whitespace() || matches!(c, '.' | ',' | ':' | ';' | '!' | '*' | '-' | '—' | '–'))
        .trim_end()
        .to_string();
    Ok(Verdict { verdict, explanation })
}

/// Contents of the first fenced code block, without its language tag.
pub fn extract_fenced(reply: &str) -> Option<&str> {
    let start = reply.find("```")?;
    let after = &reply[start + 3..];
    let body_start = after.find('\n')? + 1;
    let body = &after[body_start..];
    let end = body.find("```")?;
    Some(body[..end].trim_end())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn yes_and_no() {
        assert_eq!(
            parse_yes_no("Yes. Field populated.").unwrap(),
            Verdict { verdict: true, explanation: "Field populated.".into() }
        );
        assert_eq!(
            parse_yes_no("No — popup is covering the button").unwrap(),
            Verdict { verdict: false, explanation: "popup is covering the button".into() }
        );
        assert_eq!(parse_yes_no("**YES**").unwrap(), Verdict { verdict: true, explanation: String::new() });
    }

    #[test]
    fn only_yes_no_prefixes_parse() {
        let fixtures = [
            ("Maybe", None),
            ("Yesterday it worked", None),
            ("Nothing to see", None),
            ("I think yes", None),
            ("", None),
            ("yes", Some(true)),
            ("NO, the field is empty", Some(false)),
            ("  Yes: the overlay is gone", Some(true)),
        ];
        for (text, want) in fixtures {
            assert_eq!(parse_yes_no(text).ok().map(|v| v.verdict), want, "{text:?}");
        }
    }

    #[test]
    fn fenced() {
        let r = "Here:\n```json\n[1, 2]\n```\nand ```x\nignored\n```";
        assert_eq!(extract_fenced(r), Some("[1, 2]"));
        assert_eq!(extract_fenced("no block"), None);
    }
}
