/// Anything that can put a number on the token cost of a prompt.
pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

pub const DEFAULT_INFLATION: f64 = 1.3;

/// Counts word pieces (alphanumeric runs and individual punctuation marks)
/// and scales them by an inflation factor, rounding up.
#[derive(Debug, Clone, Copy)]
pub struct HeuristicCounter {
    pub inflation: f64,
}

impl Default for HeuristicCounter {
    fn default() -> Self {
        HeuristicCounter {
            inflation: DEFAULT_INFLATION,
        }
    }
}

impl TokenCounter for HeuristicCounter {
    fn count(&self, text: &str) -> usize {
        let scaled = word_pieces(text) as f64 * self.inflation;
        // 10 * 1.3 is 13.000000000000002 in binary floating point.
        let nearest = scaled.round();
        if (scaled - nearest).abs() < 1e-9 {
            nearest as usize
        } else {
            scaled.ceil() as usize
        }
    }
}

pub fn word_pieces(text: &str) -> usize {
    let mut pieces = 0;
    let mut in_word = false;
    for c in text.chars() {
        if c.is_whitespace() {
            in_word = false;
        } else if c.is_alphanumeric() || c == '_' {
            if !in_word {
                pieces += 1;
                in_word = true;
            }
        } else {
            pieces += 1;
            in_word = false;
        }
    }
    pieces
}

pub fn estimate_tokens(text: &str) -> usize {
    HeuristicCounter::default().count(text)
}
