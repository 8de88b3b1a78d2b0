use crate::error::{Error, Result};

/// What a response is allowed to say.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResponseContext<'a> {
    /// The two option labels, in prompt order.
    Triplet { options: [&'a str; 2] },
    Verification,
    Pairwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParsedResponse {
    /// Index into the triplet's options.
    Choice(usize),
    Verified(bool),
    Rating(u8),
}

/// Lowercase words with punctuation removed.
fn words(text: &str) -> Vec<String> {
    text.split(|c: char| c.is_whitespace() || (!c.is_alphanumeric() && c != '\''))
        .map(|w| {
            w.chars()
                .filter(|c| c.is_alphanumeric())
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

fn contains_run(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Interprets a raw completion for the given task context.
///
/// Matching is case-insensitive and ignores punctuation. A triplet response
/// must name exactly one of the two options; a verification response must
/// begin with yes or no; a pairwise response must begin with an integer 1-7.
pub fn parse_response(context: ResponseContext<'_>, text: &str) -> Result<ParsedResponse> {
    let unparseable = || Error::Unparseable {
        raw: text.to_string(),
    };
    let w = words(text);
    match context {
        ResponseContext::Triplet { options } => {
            let opts = [words(options[0]), words(options[1])];
            if let Some(i) = opts.iter().position(|o| *o == w) {
                return Ok(ParsedResponse::Choice(i));
            }
            let hits: Vec<usize> = (0..2).filter(|&i| contains_run(&w, &opts[i])).collect();
            match hits.as_slice() {
                [i] => Ok(ParsedResponse::Choice(*i)),
                // "Boa python" also contains the option "python"; prefer the longer match
                [0, 1] if contains_run(&opts[0], &opts[1]) => Ok(ParsedResponse::Choice(0)),
                [0, 1] if contains_run(&opts[1], &opts[0]) => Ok(ParsedResponse::Choice(1)),
                _ => Err(unparseable()),
            }
        }
        ResponseContext::Verification => match w.first().map(String::as_str) {
            Some("yes") => Ok(ParsedResponse::Verified(true)),
            Some("no") => Ok(ParsedResponse::Verified(false)),
            _ => Err(unparseable()),
        },
        ResponseContext::Pairwise => {
            let first = w.first().ok_or_else(unparseable)?;
            match first.parse::<u8>() {
                Ok(r) if (1..=7).contains(&r) => Ok(ParsedResponse::Rating(r)),
                _ => Err(unparseable()),
            }
        }
    }
}
