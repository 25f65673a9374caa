// Training objectives: word-aligned and sentence-level contrastive losses,
// CTC, label-smoothed cross-entropy, and the composite pre-training /
// fine-tuning objectives.
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "alignment/spans.hpp"
#include "core/autodiff.hpp"
#include "corpus/bpe.hpp"
#include "corpus/types.hpp"
#include "model/model.hpp"

namespace waco::losses {

using ad::Pooling;
using ad::Tape;
using ad::Var;

struct ContrastiveConfig {
  double tau = 0.2;
  Pooling pooling = Pooling::kMean;
  // Pool representations after the joint encoder instead of directly on the
  // speech-encoder output / raw embedding rows.
  bool after_joint_encoder = false;
  // Mask negatives that share the anchor's word string.
  bool dedup_negatives = false;
};

// Plain scalar cosine; errors on a zero vector.
double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

// Speech-anchored N-pair loss: positive is ft[i], negatives are all other
// ft[j] in the batch. `words`, when given, drives dedup_negatives masking.
Var n_pair_loss(Tape& t, const std::vector<Var>& fs, const std::vector<Var>& ft,
                const ContrastiveConfig& cfg,
                const std::vector<std::string>* words = nullptr);

struct PooledPairs {
  std::vector<Var> f_s;
  std::vector<Var> f_t;
  std::vector<std::string> words;
  std::vector<std::string> utterance_ids;
};

// Eq.-1/2 style pooled pairs for one utterance; nullopt when the utterance
// is skip-marked (no usable alignment).
std::optional<PooledPairs> pooled_pairs(Tape& t, const model::Model& m,
                                        const corpus::Utterance& utt,
                                        const corpus::BpeVocab& vocab,
                                        const ContrastiveConfig& cfg, bool train);

// Sentence-level pools: mean over all encoder frames / all token rows.
PooledPairs sentence_pair(Tape& t, const model::Model& m,
                          const corpus::Utterance& utt,
                          const corpus::BpeVocab& vocab,
                          const ContrastiveConfig& cfg, bool train);

Var waco_ctr(Tape& t, const PooledPairs& pairs, const ContrastiveConfig& cfg);
Var sent_ctr(Tape& t, const PooledPairs& pairs, const ContrastiveConfig& cfg);

// Batch composites.
Var loss_pt(Tape& t, const model::Model& m,
            const std::vector<const corpus::Utterance*>& batch,
            const corpus::BpeVocab& vocab, const ContrastiveConfig& cfg,
            bool train, int* n_pairs = nullptr);

Var loss_sent_pt(Tape& t, const model::Model& m,
                 const std::vector<const corpus::Utterance*>& batch,
                 const corpus::BpeVocab& vocab, const ContrastiveConfig& cfg,
                 bool train);

Var loss_ctc_pt(Tape& t, const model::Model& m,
                const std::vector<const corpus::Utterance*>& batch,
                const corpus::BpeVocab& vocab, bool train);

struct FtBreakdown {
  double total = 0.0;
  double ce_st = 0.0;
  double ce_mt = 0.0;
  double ce_asr = 0.0;
  double ctr = 0.0;
};

// L_CE (mean of the ST/MT/ASR token-mean CE terms) + lambda * contrastive.
// lambda == 0 computes no spans at all.
Var loss_ft(Tape& t, const model::Model& m,
            const std::vector<const corpus::Utterance*>& batch,
            const corpus::BpeVocab& vocab, double lambda, double label_smoothing,
            const ContrastiveConfig& cfg, bool train,
            FtBreakdown* breakdown = nullptr);

// Token-mean label-smoothed CE of one decoding task.
Var ce_task(Tape& t, const model::Model& m, Var memory_in,
            const std::vector<int>& target_tokens, double label_smoothing,
            bool train);

// BOS-prefixed decoder input / EOS-suffixed target for a token sequence.
std::vector<int> decoder_input(const std::vector<int>& target_tokens);
std::vector<int> decoder_target(const std::vector<int>& target_tokens);

}  // namespace waco::losses
