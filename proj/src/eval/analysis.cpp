#include "eval/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <thread>

#include "eval/metrics.hpp"

namespace waco::eval {

using losses::ContrastiveConfig;
using model::Model;
using model::Params;

SimilarityReport similarity_report(Params& params, const corpus::BpeVocab& vocab,
                                   const std::vector<corpus::Utterance>& set,
                                   const ContrastiveConfig& cfg) {
  Model m(params);
  SimilarityReport rep;
  double word_sum = 0.0, sent_sum = 0.0;
  for (const auto& u : set) {
    ad::Tape t;
    auto pairs = losses::pooled_pairs(t, m, u, vocab, cfg, false);
    if (pairs) {
      for (std::size_t i = 0; i < pairs->f_s.size(); ++i) {
        word_sum += losses::cosine(pairs->f_s[i].val().row(0).transpose(),
                                   pairs->f_t[i].val().row(0).transpose());
        ++rep.n_words;
      }
    }
    auto sent = losses::sentence_pair(t, m, u, vocab, cfg, false);
    sent_sum += losses::cosine(sent.f_s[0].val().row(0).transpose(),
                               sent.f_t[0].val().row(0).transpose());
    ++rep.n_sentences;
  }
  if (rep.n_words) rep.word_level_mean_cosine = word_sum / rep.n_words;
  if (rep.n_sentences) rep.sentence_level_mean_cosine = sent_sum / rep.n_sentences;
  return rep;
}

AlignmentMatrices alignment_matrix(Params& params, const corpus::BpeVocab& vocab,
                                   const corpus::Utterance& utt,
                                   const ContrastiveConfig& cfg) {
  Model m(params);
  ad::Tape t;
  AlignmentMatrices out;
  auto pairs = losses::pooled_pairs(t, m, utt, vocab, cfg, false);
  if (!pairs) return out;
  std::size_t mm = pairs->f_s.size();
  ad::Var enc = cfg.after_joint_encoder
                    ? m.joint_encode(
                          t, m.s_enc_pos(t, utt.features.cast<double>(), false),
                          false)
                    : m.s_enc(t, utt.features.cast<double>(), false);
  Eigen::Index enc_len = enc.rows();

  out.words = pairs->words;
  out.token_to_frame.resize(static_cast<Eigen::Index>(mm), enc_len);
  out.word_level.resize(static_cast<Eigen::Index>(mm), static_cast<Eigen::Index>(mm));
  for (std::size_t i = 0; i < mm; ++i) {
    Eigen::VectorXd ft = pairs->f_t[i].val().row(0).transpose();
    for (Eigen::Index j = 0; j < enc_len; ++j)
      out.token_to_frame(static_cast<Eigen::Index>(i), j) =
          losses::cosine(ft, enc.val().row(j).transpose());
    Eigen::VectorXd fs = pairs->f_s[i].val().row(0).transpose();
    for (std::size_t j = 0; j < mm; ++j)
      out.word_level(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          losses::cosine(fs, pairs->f_t[j].val().row(0).transpose());
  }
  return out;
}

void write_matrix_tsv(const ad::Mat& m, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path.string());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) os << '\t';
      os << m(i, j);
    }
    os << '\n';
  }
}

double diag_margin(const ad::Mat& m) {
  if (m.rows() != m.cols() || m.rows() == 0)
    throw DataError("diag_margin: matrix must be square and non-empty");
  double diag = m.diagonal().mean();
  if (m.rows() == 1) return 0.0;
  double off = (m.sum() - m.diagonal().sum()) /
               static_cast<double>(m.rows() * (m.cols() - 1));
  return diag - off;
}

namespace {

std::vector<double> ranks(const std::vector<double>& xs) {
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> r(xs.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && xs[order[j + 1]] == xs[order[i]]) ++j;
    double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 2)
    throw DataError("spearman: need two same-length series");
  auto rx = ranks(xs), ry = ranks(ys);
  double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / rx.size();
  double my = std::accumulate(ry.begin(), ry.end(), 0.0) / ry.size();
  double num = 0.0, dx = 0.0, dy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    num += (rx[i] - mx) * (ry[i] - my);
    dx += (rx[i] - mx) * (rx[i] - mx);
    dy += (ry[i] - my) * (ry[i] - my);
  }
  if (dx == 0.0 || dy == 0.0) throw NumericError("spearman: constant series");
  return num / std::sqrt(dx * dy);
}

std::string detokenize(const corpus::BpeVocab& vocab, const std::vector<int>& ids) {
  std::vector<std::string> words;
  for (int id : ids) {
    if (id < 4 || id >= vocab.size()) continue;
    const std::string& tok = vocab.token(id);
    if (!tok.empty() && tok[0] == corpus::kBoundaryMarker)
      words.push_back(tok.substr(1));
    else if (!words.empty())
      words.back() += tok;
  }
  return corpus::join_words(words);
}

std::vector<std::string> translate_set(Params& params, const corpus::BpeVocab& vocab,
                                       const std::vector<corpus::Utterance>& set,
                                       const DecodeConfig& cfg, bool from_speech,
                                       int n_threads) {
  std::vector<std::string> out(set.size());
  n_threads = std::max(1, n_threads);
  auto worker = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t i = begin; i < set.size(); i += stride) {
      ad::Mat mem;
      if (from_speech) {
        mem = encode_memory_speech(params, set[i].features);
      } else {
        mem = encode_memory_text(params, corpus::encode(vocab, set[i].transcript));
      }
      out[i] = detokenize(vocab, beam_decode(params, mem, cfg));
    }
  };
  if (n_threads == 1) {
    worker(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (int k = 0; k < n_threads; ++k)
      pool.emplace_back(worker, static_cast<std::size_t>(k),
                        static_cast<std::size_t>(n_threads));
    for (auto& th : pool) th.join();
  }
  return out;
}

double cascade_eval(Params& asr_params, Params& mt_params,
                    const corpus::BpeVocab& vocab,
                    const std::vector<corpus::Utterance>& test_set,
                    const DecodeConfig& cfg, int n_threads) {
  std::vector<std::string> hyps(test_set.size()), refs(test_set.size());
  n_threads = std::max(1, n_threads);
  auto worker = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t i = begin; i < test_set.size(); i += stride) {
      ad::Mat asr_mem = encode_memory_speech(asr_params, test_set[i].features);
      std::vector<int> transcript_ids = beam_decode(asr_params, asr_mem, cfg);
      ad::Mat mt_mem = encode_memory_text(mt_params, transcript_ids);
      hyps[i] = detokenize(vocab, beam_decode(mt_params, mt_mem, cfg));
      refs[i] = corpus::join_words(test_set[i].translation);
    }
  };
  if (n_threads == 1) {
    worker(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (int k = 0; k < n_threads; ++k)
      pool.emplace_back(worker, static_cast<std::size_t>(k),
                        static_cast<std::size_t>(n_threads));
    for (auto& th : pool) th.join();
  }
  return bleu(hyps, refs);
}

std::vector<corpus::ManifestRow> seqkd_expand(
    Params& mt_params, const corpus::BpeVocab& vocab,
    const std::vector<corpus::ManifestRow>& asr_rows,
    const std::filesystem::path& manifest_dir, const DecodeConfig& cfg) {
  std::vector<corpus::ManifestRow> out;
  for (const auto& r : asr_rows) {
    corpus::ManifestRow row = r;
    try {
      std::vector<int> x = corpus::encode(vocab, r.transcript);
      ad::Mat mem = encode_memory_text(mt_params, x);
      std::string hyp = detokenize(vocab, beam_decode(mt_params, mem, cfg));
      row.translation = corpus::split_words(hyp);
    } catch (const std::exception& e) {
      throw DataError("seqkd: decode failed on utterance '" + r.id + "': " + e.what());
    }
    row.features =
        std::filesystem::absolute(manifest_dir / r.features).lexically_normal().string();
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace waco::eval
