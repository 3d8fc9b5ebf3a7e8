use super::{Completion, LanguageModel, LmError, PromptRequest};
use crate::kernel::{match_choice, parse_decimal};

pub const DEFAULT_RETRIES: u32 = 3;

/// One request/answer pair, kept so callers can trace every attempt.
#[derive(Debug, Clone, PartialEq)]
pub struct LmCall {
    pub request: PromptRequest,
    pub outcome: Result<Completion, LmError>,
}

fn call(lm: &dyn LanguageModel, request: PromptRequest, log: &mut Vec<LmCall>) -> Result<Completion, LmError> {
    let outcome = request.validate().and_then(|_| lm.complete(&request));
    log.push(LmCall {
        request,
        outcome: outcome.clone(),
    });
    outcome
}

/// Free text. Empty answers are an error.
pub fn sample_text(lm: &dyn LanguageModel, request: PromptRequest, log: &mut Vec<LmCall>) -> Result<String, LmError> {
    let completion = call(lm, request, log)?;
    if completion.text.trim().is_empty() {
        return Err(LmError::EmptyResponse);
    }
    Ok(completion.text)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChoiceSample {
    pub index: usize,
    pub option: String,
    /// True when every attempt was invalid and index 0 was used.
    pub fallback: bool,
}

fn choice_prompt(text: &str, options: &[String]) -> String {
    let mut prompt = String::from(text);
    prompt.push_str("\nOptions:\n");
    for (i, option) in options.iter().enumerate() {
        prompt.push_str(&format!("{}. {}\n", i + 1, option));
    }
    prompt.push_str("Answer with exactly one option.");
    prompt
}

fn retry_request(base: &PromptRequest, text: &str, attempt: u32) -> PromptRequest {
    let mut request = base.clone();
    request.text = text.to_string();
    request.seed = base.seed.wrapping_add(u64::from(attempt));
    request
}

/// Asks for one of `options`, retrying up to `retries` times on invalid
/// answers. Total: after the retry budget the answer is option 0 with
/// `fallback` set. Only run-fatal provider errors escape.
pub fn sample_choice(
    lm: &dyn LanguageModel,
    request: PromptRequest,
    options: &[String],
    retries: u32,
    log: &mut Vec<LmCall>,
) -> Result<ChoiceSample, LmError> {
    assert!(!options.is_empty(), "sample_choice needs at least one option");
    let prompt = choice_prompt(&request.text, options);
    for attempt in 0..=retries {
        match call(lm, retry_request(&request, &prompt, attempt), log) {
            Ok(completion) => {
                if let Some(index) = match_choice(options, &completion.text) {
                    return Ok(ChoiceSample {
                        index,
                        option: options[index].clone(),
                        fallback: false,
                    });
                }
            }
            Err(e) if e.is_fatal() => return Err(e),
            Err(_) => {}
        }
    }
    Ok(ChoiceSample {
        index: 0,
        option: options[0].clone(),
        fallback: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FloatSample {
    pub value: f64,
    pub fallback: bool,
}

/// Asks for a number; the first decimal literal in the answer counts.
/// Falls back to 0.0 after the retry budget.
pub fn sample_float(
    lm: &dyn LanguageModel,
    request: PromptRequest,
    retries: u32,
    log: &mut Vec<LmCall>,
) -> Result<FloatSample, LmError> {
    let prompt = format!("{}\nAnswer with a number.", request.text);
    for attempt in 0..=retries {
        match call(lm, retry_request(&request, &prompt, attempt), log) {
            Ok(completion) => {
                if let Some(value) = parse_decimal(&completion.text) {
                    return Ok(FloatSample { value, fallback: false });
                }
            }
            Err(e) if e.is_fatal() => return Err(e),
            Err(_) => {}
        }
    }
    Ok(FloatSample {
        value: 0.0,
        fallback: true,
    })
}
