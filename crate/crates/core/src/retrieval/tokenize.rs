//! Tokenization shared by indexing, scoring and query generation.

/// Lowercases and splits on any non-alphanumeric character. No stemming,
/// stopwords are kept.
pub fn tokenize(text: &str) -> Vec<String> {
    token_spans(text).into_iter().map(|(_, _, t)| t).collect()
}

/// Tokens with their character offsets `[start, end)` in `text`.
pub fn token_spans(text: &str) -> Vec<(usize, usize, String)> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut start = 0;
    let mut n = 0;
    for (i, ch) in text.chars().enumerate() {
        n = i + 1;
        if ch.is_alphanumeric() {
            if current.is_empty() {
                start = i;
            }
            current.extend(ch.to_lowercase());
        } else if !current.is_empty() {
            out.push((start, i, std::mem::take(&mut current)));
        }
    }
    if !current.is_empty() {
        out.push((start, n, current));
    }
    out
}

const STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "also", "am", "an", "and", "any",
    "are", "as", "at", "be", "been", "before", "being", "below", "between", "both", "but", "by",
    "can", "could", "did", "do", "does", "doing", "down", "during", "each", "few", "for", "from",
    "further", "had", "has", "have", "having", "he", "her", "here", "hers", "herself", "him",
    "himself", "his", "how", "i", "if", "in", "into", "is", "it", "its", "itself", "just", "know",
    "me", "more", "most", "my", "myself", "no", "nor", "not", "now", "of", "off", "on", "once",
    "only", "or", "other", "our", "ours", "out", "over", "own", "please", "same", "she", "should",
    "show", "so", "some", "such", "tell", "than", "that", "the", "their", "theirs", "them",
    "themselves", "then", "there", "these", "they", "this", "those", "through", "to", "too",
    "under", "until", "up", "very", "was", "we", "were", "what", "when", "where", "which", "while",
    "who", "whom", "whose", "why", "will", "with", "would", "you", "your", "yours",
];

/// Fixed English stopword list used by coreference and query expansion.
/// Expects a lowercase word.
pub fn is_stopword(word: &str) -> bool {
    STOPWORDS.binary_search(&word).is_ok()
}
