// Corpus-level translation / transcription metrics.
#pragma once

#include <string>
#include <vector>

namespace waco::eval {

// 13a-style tokenization: punctuation split into its own tokens.
std::vector<std::string> tokenize_13a(const std::string& text);

// Corpus BLEU-4 in [0, 100]: clipped n-gram precisions with exponential
// smoothing for zero counts, geometric mean, brevity penalty.
double bleu(const std::vector<std::string>& hypotheses,
            const std::vector<std::string>& references);

// Levenshtein word edits divided by total reference words.
double wer(const std::vector<std::string>& hypotheses,
           const std::vector<std::string>& references);

}  // namespace waco::eval
