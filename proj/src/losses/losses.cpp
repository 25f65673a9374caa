#include "losses/losses.hpp"

#include <cmath>

namespace waco::losses {

using corpus::BpeVocab;

double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  double na = a.norm(), nb = b.norm();
  if (na <= 0.0 || nb <= 0.0) throw NumericError("cosine: zero vector");
  return a.dot(b) / (na * nb);
}

Var n_pair_loss(Tape& t, const std::vector<Var>& fs, const std::vector<Var>& ft,
                const ContrastiveConfig& cfg,
                const std::vector<std::string>* words) {
  if (fs.empty() || fs.size() != ft.size())
    throw DataError("n_pair_loss: empty or mismatched pair batch");
  if (cfg.tau <= 0.0) throw ConfigError("n_pair_loss: tau must be positive");
  Var s = t.row_normalize(t.vstack(fs));
  Var x = t.row_normalize(t.vstack(ft));
  Var scores = t.scale(t.matmul_nt(s, x), 1.0 / cfg.tau);
  if (cfg.dedup_negatives && words) {
    // Mask out negatives carrying the anchor's word string.
    Eigen::Index m = scores.rows();
    ad::Mat mask = ad::Mat::Zero(m, m);
    for (Eigen::Index i = 0; i < m; ++i)
      for (Eigen::Index j = 0; j < m; ++j)
        if (i != j && (*words)[static_cast<std::size_t>(i)] ==
                          (*words)[static_cast<std::size_t>(j)])
          mask(i, j) = -1e30;
    scores = t.add(scores, t.constant(mask));
  }
  return t.nce_diag_loss(scores);
}

namespace {

Var speech_repr(Tape& t, const model::Model& m, const corpus::Utterance& utt,
                const ContrastiveConfig& cfg, bool train) {
  if (cfg.after_joint_encoder)
    return m.joint_encode(t, m.s_enc_pos(t, utt.features.cast<double>(), train),
                          train);
  return m.s_enc(t, utt.features.cast<double>(), train);
}

Var text_repr(Tape& t, const model::Model& m, const std::vector<int>& tokens,
              const ContrastiveConfig& cfg, bool train) {
  if (cfg.after_joint_encoder)
    return m.joint_encode(t, m.t_emb_pos(t, tokens, train), train);
  return m.t_emb(t, tokens);
}

}  // namespace

std::optional<PooledPairs> pooled_pairs(Tape& t, const model::Model& m,
                                        const corpus::Utterance& utt,
                                        const BpeVocab& vocab,
                                        const ContrastiveConfig& cfg, bool train) {
  int enc_len = m.config().enc_len(static_cast<int>(utt.n_frames()));
  auto spans = alignment::build_spans(utt, vocab, enc_len);
  if (!spans) return std::nullopt;
  Var enc = speech_repr(t, m, utt, cfg, train);
  std::vector<int> tokens = corpus::encode(vocab, utt.transcript);
  Var emb = text_repr(t, m, tokens, cfg, train);
  PooledPairs out;
  for (const auto& s : *spans) {
    out.f_s.push_back(t.pool_range(enc, s.enc_lo - 1, s.enc_hi - 1, cfg.pooling));
    out.f_t.push_back(
        t.pool_range(emb, s.token_range.lo - 1, s.token_range.hi - 1, cfg.pooling));
    out.words.push_back(s.word);
    out.utterance_ids.push_back(utt.id);
  }
  return out;
}

PooledPairs sentence_pair(Tape& t, const model::Model& m,
                          const corpus::Utterance& utt, const BpeVocab& vocab,
                          const ContrastiveConfig& cfg, bool train) {
  Var enc = speech_repr(t, m, utt, cfg, train);
  std::vector<int> tokens = corpus::encode(vocab, utt.transcript);
  Var emb = text_repr(t, m, tokens, cfg, train);
  PooledPairs out;
  out.f_s.push_back(t.pool_range(enc, 0, enc.rows() - 1, Pooling::kMean));
  out.f_t.push_back(t.pool_range(emb, 0, emb.rows() - 1, Pooling::kMean));
  out.words.push_back("<sent>");
  out.utterance_ids.push_back(utt.id);
  return out;
}

Var waco_ctr(Tape& t, const PooledPairs& pairs, const ContrastiveConfig& cfg) {
  return n_pair_loss(t, pairs.f_s, pairs.f_t, cfg, &pairs.words);
}

Var sent_ctr(Tape& t, const PooledPairs& pairs, const ContrastiveConfig& cfg) {
  return n_pair_loss(t, pairs.f_s, pairs.f_t, cfg, nullptr);
}

Var loss_pt(Tape& t, const model::Model& m,
            const std::vector<const corpus::Utterance*>& batch,
            const BpeVocab& vocab, const ContrastiveConfig& cfg, bool train,
            int* n_pairs) {
  PooledPairs pool;
  for (const corpus::Utterance* u : batch) {
    auto pairs = pooled_pairs(t, m, *u, vocab, cfg, train);
    if (!pairs) continue;  // skip-marked utterance
    pool.f_s.insert(pool.f_s.end(), pairs->f_s.begin(), pairs->f_s.end());
    pool.f_t.insert(pool.f_t.end(), pairs->f_t.begin(), pairs->f_t.end());
    pool.words.insert(pool.words.end(), pairs->words.begin(), pairs->words.end());
  }
  if (pool.f_s.empty()) throw DataError("loss_pt: no alignable pairs in batch");
  if (n_pairs) *n_pairs = static_cast<int>(pool.f_s.size());
  return waco_ctr(t, pool, cfg);
}

Var loss_sent_pt(Tape& t, const model::Model& m,
                 const std::vector<const corpus::Utterance*>& batch,
                 const BpeVocab& vocab, const ContrastiveConfig& cfg, bool train) {
  PooledPairs pool;
  for (const corpus::Utterance* u : batch) {
    PooledPairs p = sentence_pair(t, m, *u, vocab, cfg, train);
    pool.f_s.push_back(p.f_s[0]);
    pool.f_t.push_back(p.f_t[0]);
  }
  if (pool.f_s.empty()) throw DataError("loss_sent_pt: empty batch");
  return sent_ctr(t, pool, cfg);
}

Var loss_ctc_pt(Tape& t, const model::Model& m,
                const std::vector<const corpus::Utterance*>& batch,
                const BpeVocab& vocab, bool train) {
  if (batch.empty()) throw DataError("loss_ctc_pt: empty batch");
  std::vector<Var> terms;
  for (const corpus::Utterance* u : batch) {
    std::vector<int> targets = corpus::encode(vocab, u->transcript);
    // CTC needs one frame per label plus one per repeated adjacent label;
    // utterances compressed below that by the conv stride are skipped.
    std::size_t min_len = targets.size();
    for (std::size_t i = 1; i < targets.size(); ++i)
      if (targets[i] == targets[i - 1]) ++min_len;
    if (static_cast<std::size_t>(m.config().enc_len(
            static_cast<int>(u->features.rows()))) < min_len)
      continue;
    Var enc = m.s_enc(t, u->features.cast<double>(), train);
    Var logits = m.ctc_logits(t, enc);
    terms.push_back(t.ctc_loss(logits, targets, m.config().vocab_size));
  }
  if (terms.empty())
    throw DataError("loss_ctc_pt: every target exceeds the encoder length");
  return t.mean_of(terms);
}

std::vector<int> decoder_input(const std::vector<int>& target_tokens) {
  std::vector<int> in = {BpeVocab::kBosId};
  in.insert(in.end(), target_tokens.begin(), target_tokens.end());
  return in;
}

std::vector<int> decoder_target(const std::vector<int>& target_tokens) {
  std::vector<int> out = target_tokens;
  out.push_back(BpeVocab::kEosId);
  return out;
}

Var ce_task(Tape& t, const model::Model& m, Var memory_in,
            const std::vector<int>& target_tokens, double label_smoothing,
            bool train) {
  Var logits = m.joint_forward(t, memory_in, decoder_input(target_tokens), train);
  return t.ce_label_smooth(logits, decoder_target(target_tokens), label_smoothing);
}

Var loss_ft(Tape& t, const model::Model& m,
            const std::vector<const corpus::Utterance*>& batch,
            const BpeVocab& vocab, double lambda, double label_smoothing,
            const ContrastiveConfig& cfg, bool train, FtBreakdown* breakdown) {
  if (batch.empty()) throw DataError("loss_ft: empty batch");
  std::vector<Var> st_terms, mt_terms, asr_terms;
  for (const corpus::Utterance* u : batch) {
    if (u->translation.empty())
      throw DataError("loss_ft: utterance '" + u->id + "' has no translation");
    std::vector<int> x = corpus::encode(vocab, u->transcript);
    std::vector<int> y = corpus::encode(vocab, u->translation);
    Var senc = m.s_enc_pos(t, u->features.cast<double>(), train);
    st_terms.push_back(ce_task(t, m, senc, y, label_smoothing, train));
    mt_terms.push_back(
        ce_task(t, m, m.t_emb_pos(t, x, train), y, label_smoothing, train));
    asr_terms.push_back(ce_task(t, m, senc, x, label_smoothing, train));
  }
  Var ce_st = t.mean_of(st_terms);
  Var ce_mt = t.mean_of(mt_terms);
  Var ce_asr = t.mean_of(asr_terms);
  Var ce = t.mean_of({ce_st, ce_mt, ce_asr});
  Var total = ce;
  double ctr_val = 0.0;
  if (lambda != 0.0) {
    Var ctr = loss_pt(t, m, batch, vocab, cfg, train);
    ctr_val = ctr.val()(0, 0);
    total = t.add(total, t.scale(ctr, lambda));
  }
  if (breakdown) {
    breakdown->ce_st = ce_st.val()(0, 0);
    breakdown->ce_mt = ce_mt.val()(0, 0);
    breakdown->ce_asr = ce_asr.val()(0, 0);
    breakdown->ctr = ctr_val;
    breakdown->total = total.val()(0, 0);
  }
  return total;
}

}  // namespace waco::losses
