#include "pipeline/pipeline.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "eval/metrics.hpp"

namespace waco::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Collects unknown keys so config errors report every offender at once.
struct KeyChecker {
  std::vector<std::string> unknown;

  void check(const json& j, const std::string& prefix,
             const std::set<std::string>& allowed) {
    if (!j.is_object()) return;
    for (const auto& [k, v] : j.items())
      if (!allowed.count(k))
        unknown.push_back(prefix.empty() ? k : prefix + "." + k);
  }

  void finish() const {
    if (unknown.empty()) return;
    std::string msg = "unknown config keys:";
    for (const auto& k : unknown) msg += " " + k;
    throw ConfigError(msg);
  }
};

template <typename T>
void get_to(const json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

corpus::IntRange range_from(const json& j, const char* key, corpus::IntRange def) {
  if (!j.contains(key)) return def;
  const json& r = j.at(key);
  if (!r.is_array() || r.size() != 2)
    throw ConfigError(std::string("config: ") + key + " must be a [lo, hi] pair");
  return {r.at(0).get<int>(), r.at(1).get<int>()};
}

ad::Pooling pooling_from(const std::string& s) {
  if (s == "mean") return ad::Pooling::kMean;
  if (s == "max") return ad::Pooling::kMax;
  if (s == "sum") return ad::Pooling::kSum;
  throw ConfigError("config: pooling must be mean, max or sum, got '" + s + "'");
}

std::string pooling_name(ad::Pooling p) {
  switch (p) {
    case ad::Pooling::kMean: return "mean";
    case ad::Pooling::kMax: return "max";
    case ad::Pooling::kSum: return "sum";
  }
  return "mean";
}

}  // namespace

RunConfig RunConfig::from_json(const json& j) {
  RunConfig cfg;
  KeyChecker kc;
  kc.check(j, "",
           {"corpus", "bpe", "model", "train", "contrastive", "decode", "budget",
            "translate", "analyze", "paths", "sweep"});

  if (j.contains("corpus")) {
    const json& c = j.at("corpus");
    kc.check(c, "corpus",
             {"n_source_words", "feat_dim", "frames_per_word", "silence_frames",
              "words_per_utt", "noise_sigma", "translation_rule", "sizes", "seed"});
    get_to(c, "n_source_words", cfg.corpus.n_source_words);
    get_to(c, "feat_dim", cfg.corpus.feat_dim);
    cfg.corpus.frames_per_word = range_from(c, "frames_per_word", cfg.corpus.frames_per_word);
    cfg.corpus.silence_frames = range_from(c, "silence_frames", cfg.corpus.silence_frames);
    cfg.corpus.words_per_utt = range_from(c, "words_per_utt", cfg.corpus.words_per_utt);
    get_to(c, "noise_sigma", cfg.corpus.noise_sigma);
    if (c.contains("translation_rule")) {
      std::string rule = c.at("translation_rule");
      if (rule == "identity_dictionary")
        cfg.corpus.translation_rule = corpus::TranslationRule::kIdentityDictionary;
      else if (rule == "adjacent_swap_dictionary")
        cfg.corpus.translation_rule = corpus::TranslationRule::kAdjacentSwapDictionary;
      else
        throw ConfigError("config: corpus.translation_rule must be "
                          "identity_dictionary or adjacent_swap_dictionary");
    }
    get_to(c, "seed", cfg.corpus.seed);
    if (c.contains("sizes")) {
      const json& s = c.at("sizes");
      kc.check(s, "corpus.sizes",
               {"train_asr", "dev_asr", "train_st", "dev_st", "test", "train_mt",
                "dev_mt"});
      get_to(s, "train_asr", cfg.corpus.sizes.train_asr);
      get_to(s, "dev_asr", cfg.corpus.sizes.dev_asr);
      get_to(s, "train_st", cfg.corpus.sizes.train_st);
      get_to(s, "dev_st", cfg.corpus.sizes.dev_st);
      get_to(s, "test", cfg.corpus.sizes.test);
      get_to(s, "train_mt", cfg.corpus.sizes.train_mt);
      get_to(s, "dev_mt", cfg.corpus.sizes.dev_mt);
    }
  }
  if (j.contains("bpe")) {
    kc.check(j.at("bpe"), "bpe", {"vocab_size"});
    get_to(j.at("bpe"), "vocab_size", cfg.bpe_vocab_size);
  }
  if (j.contains("model")) {
    const json& m = j.at("model");
    kc.check(m, "model",
             {"feat_dim", "d_model", "n_heads", "ffn_dim", "n_speech_layers",
              "n_joint_enc_layers", "n_dec_layers", "downsample", "dropout",
              "max_positions"});
    get_to(m, "feat_dim", cfg.model.feat_dim);
    get_to(m, "d_model", cfg.model.d_model);
    get_to(m, "n_heads", cfg.model.n_heads);
    get_to(m, "ffn_dim", cfg.model.ffn_dim);
    get_to(m, "n_speech_layers", cfg.model.n_speech_layers);
    get_to(m, "n_joint_enc_layers", cfg.model.n_joint_enc_layers);
    get_to(m, "n_dec_layers", cfg.model.n_dec_layers);
    get_to(m, "dropout", cfg.model.dropout);
    get_to(m, "max_positions", cfg.model.max_positions);
    if (m.contains("downsample")) {
      cfg.model.downsample.clear();
      for (const auto& d : m.at("downsample"))
        cfg.model.downsample.push_back({d.at(0).get<int>(), d.at(1).get<int>()});
    }
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    kc.check(t, "train",
             {"peak_lr", "warmup_steps", "beta1", "beta2", "weight_decay",
              "frame_budget_per_batch", "max_steps", "eval_interval",
              "keep_last_k", "label_smoothing", "tau", "lambda", "grad_clip",
              "seed"});
    get_to(t, "peak_lr", cfg.train.peak_lr);
    get_to(t, "warmup_steps", cfg.train.warmup_steps);
    get_to(t, "beta1", cfg.train.beta1);
    get_to(t, "beta2", cfg.train.beta2);
    get_to(t, "weight_decay", cfg.train.weight_decay);
    get_to(t, "frame_budget_per_batch", cfg.train.frame_budget_per_batch);
    get_to(t, "max_steps", cfg.train.max_steps);
    get_to(t, "eval_interval", cfg.train.eval_interval);
    get_to(t, "keep_last_k", cfg.train.keep_last_k);
    get_to(t, "label_smoothing", cfg.train.label_smoothing);
    get_to(t, "tau", cfg.train.tau);
    get_to(t, "lambda", cfg.train.lambda);
    get_to(t, "grad_clip", cfg.train.grad_clip);
    get_to(t, "seed", cfg.train.seed);
  }
  if (j.contains("contrastive")) {
    const json& c = j.at("contrastive");
    kc.check(c, "contrastive",
             {"pooling", "after_joint_encoder", "dedup_negatives"});
    if (c.contains("pooling")) cfg.contrastive.pooling = pooling_from(c.at("pooling"));
    get_to(c, "after_joint_encoder", cfg.contrastive.after_joint_encoder);
    get_to(c, "dedup_negatives", cfg.contrastive.dedup_negatives);
  }
  cfg.contrastive.tau = cfg.train.tau;
  if (j.contains("decode")) {
    const json& d = j.at("decode");
    kc.check(d, "decode", {"beam_size", "length_penalty_alpha", "max_len"});
    get_to(d, "beam_size", cfg.decode.beam_size);
    get_to(d, "length_penalty_alpha", cfg.decode.length_penalty_alpha);
    get_to(d, "max_len", cfg.decode.max_len);
  }
  if (j.contains("budget")) {
    const json& b = j.at("budget");
    kc.check(b, "budget", {"asr_frames", "st_frames"});
    get_to(b, "asr_frames", cfg.asr_budget_frames);
    get_to(b, "st_frames", cfg.st_budget_frames);
  }
  if (j.contains("translate")) {
    kc.check(j.at("translate"), "translate", {"source"});
    get_to(j.at("translate"), "source", cfg.translate_source);
    if (cfg.translate_source != "speech" && cfg.translate_source != "text")
      throw ConfigError("config: translate.source must be speech or text");
  }
  if (j.contains("analyze")) {
    kc.check(j.at("analyze"), "analyze", {"n_matrices"});
    get_to(j.at("analyze"), "n_matrices", cfg.analyze_n_matrices);
  }
  if (j.contains("paths")) {
    const json& p = j.at("paths");
    kc.check(p, "paths",
             {"data_dir", "out_dir", "bpe_model", "checkpoint", "init_checkpoint",
              "mt_checkpoint", "asr_checkpoint", "manifest", "merge_manifest",
              "hyp_file", "ref_file"});
    get_to(p, "data_dir", cfg.paths.data_dir);
    get_to(p, "out_dir", cfg.paths.out_dir);
    get_to(p, "bpe_model", cfg.paths.bpe_model);
    get_to(p, "checkpoint", cfg.paths.checkpoint);
    get_to(p, "init_checkpoint", cfg.paths.init_checkpoint);
    get_to(p, "mt_checkpoint", cfg.paths.mt_checkpoint);
    get_to(p, "asr_checkpoint", cfg.paths.asr_checkpoint);
    get_to(p, "manifest", cfg.paths.manifest);
    get_to(p, "merge_manifest", cfg.paths.merge_manifest);
    get_to(p, "hyp_file", cfg.paths.hyp_file);
    get_to(p, "ref_file", cfg.paths.ref_file);
  }
  if (j.contains("sweep")) {
    const json& s = j.at("sweep");
    kc.check(s, "sweep", {"methods", "st_budgets"});
    if (s.contains("methods"))
      cfg.sweep.methods = s.at("methods").get<std::vector<std::string>>();
    if (s.contains("st_budgets"))
      cfg.sweep.st_budgets = s.at("st_budgets").get<std::vector<std::int64_t>>();
  }
  kc.finish();
  return cfg;
}

json RunConfig::to_json() const {
  json ds = json::array();
  for (const auto& d : model.downsample) ds.push_back({d.kernel, d.stride});
  return {
      {"corpus",
       {{"n_source_words", corpus.n_source_words},
        {"feat_dim", corpus.feat_dim},
        {"frames_per_word", {corpus.frames_per_word.lo, corpus.frames_per_word.hi}},
        {"silence_frames", {corpus.silence_frames.lo, corpus.silence_frames.hi}},
        {"words_per_utt", {corpus.words_per_utt.lo, corpus.words_per_utt.hi}},
        {"noise_sigma", corpus.noise_sigma},
        {"translation_rule",
         corpus.translation_rule == corpus::TranslationRule::kIdentityDictionary
             ? "identity_dictionary"
             : "adjacent_swap_dictionary"},
        {"sizes",
         {{"train_asr", corpus.sizes.train_asr},
          {"dev_asr", corpus.sizes.dev_asr},
          {"train_st", corpus.sizes.train_st},
          {"dev_st", corpus.sizes.dev_st},
          {"test", corpus.sizes.test},
          {"train_mt", corpus.sizes.train_mt},
          {"dev_mt", corpus.sizes.dev_mt}}},
        {"seed", corpus.seed}}},
      {"bpe", {{"vocab_size", bpe_vocab_size}}},
      {"model",
       {{"feat_dim", model.feat_dim},
        {"d_model", model.d_model},
        {"n_heads", model.n_heads},
        {"ffn_dim", model.ffn_dim},
        {"n_speech_layers", model.n_speech_layers},
        {"n_joint_enc_layers", model.n_joint_enc_layers},
        {"n_dec_layers", model.n_dec_layers},
        {"downsample", ds},
        {"dropout", model.dropout},
        {"max_positions", model.max_positions}}},
      {"train",
       {{"peak_lr", train.peak_lr},
        {"warmup_steps", train.warmup_steps},
        {"beta1", train.beta1},
        {"beta2", train.beta2},
        {"weight_decay", train.weight_decay},
        {"frame_budget_per_batch", train.frame_budget_per_batch},
        {"max_steps", train.max_steps},
        {"eval_interval", train.eval_interval},
        {"keep_last_k", train.keep_last_k},
        {"label_smoothing", train.label_smoothing},
        {"tau", train.tau},
        {"lambda", train.lambda},
        {"grad_clip", train.grad_clip},
        {"seed", train.seed}}},
      {"contrastive",
       {{"pooling", pooling_name(contrastive.pooling)},
        {"after_joint_encoder", contrastive.after_joint_encoder},
        {"dedup_negatives", contrastive.dedup_negatives}}},
      {"decode",
       {{"beam_size", decode.beam_size},
        {"length_penalty_alpha", decode.length_penalty_alpha},
        {"max_len", decode.max_len}}},
      {"budget", {{"asr_frames", asr_budget_frames}, {"st_frames", st_budget_frames}}},
      {"translate", {{"source", translate_source}}},
      {"analyze", {{"n_matrices", analyze_n_matrices}}},
      {"paths",
       {{"data_dir", paths.data_dir},
        {"out_dir", paths.out_dir},
        {"bpe_model", paths.bpe_model},
        {"checkpoint", paths.checkpoint},
        {"init_checkpoint", paths.init_checkpoint},
        {"mt_checkpoint", paths.mt_checkpoint},
        {"asr_checkpoint", paths.asr_checkpoint},
        {"manifest", paths.manifest},
        {"merge_manifest", paths.merge_manifest},
        {"hyp_file", paths.hyp_file},
        {"ref_file", paths.ref_file}}},
      {"sweep", {{"methods", sweep.methods}, {"st_budgets", sweep.st_budgets}}}};
}

void apply_override(json& j, const std::string& key_eq_value) {
  auto eq = key_eq_value.find('=');
  if (eq == std::string::npos)
    throw ConfigError("--set expects key.path=value, got '" + key_eq_value + "'");
  std::string path = key_eq_value.substr(0, eq);
  std::string value = key_eq_value.substr(eq + 1);
  json* at = &j;
  std::string::size_type pos = 0;
  while (true) {
    auto dot = path.find('.', pos);
    std::string key = path.substr(pos, dot == std::string::npos ? dot : dot - pos);
    if (key.empty()) throw ConfigError("--set: empty key segment in '" + path + "'");
    if (dot == std::string::npos) {
      json parsed = json::parse(value, nullptr, false);
      (*at)[key] = parsed.is_discarded() ? json(value) : parsed;
      return;
    }
    at = &(*at)[key];
    pos = dot + 1;
  }
}

int env_threads() {
  const char* env = std::getenv("WACO_THREADS");
  if (!env) return 1;
  int n = std::atoi(env);
  return n > 0 ? n : 1;
}

namespace {

fs::path need_dir(const std::string& p, const char* what) {
  if (p.empty()) throw ConfigError(std::string("config: paths.") + what + " is required");
  return fs::path(p);
}

fs::path need_file(const std::string& p, const char* what) {
  if (p.empty()) throw ConfigError(std::string("config: paths.") + what + " is required");
  if (!fs::exists(p))
    throw DataError(std::string(what) + " does not exist: " + p);
  return fs::path(p);
}

fs::path out_dir(const RunConfig& cfg) {
  fs::path d = need_dir(cfg.paths.out_dir, "out_dir");
  fs::create_directories(d);
  return d;
}

fs::path bpe_path(const RunConfig& cfg) {
  if (!cfg.paths.bpe_model.empty()) return cfg.paths.bpe_model;
  return fs::path(need_dir(cfg.paths.data_dir, "data_dir")) / "bpe.model";
}

std::vector<corpus::Utterance> load_budgeted_split(const RunConfig& cfg,
                                                   const std::string& split,
                                                   std::int64_t budget,
                                                   std::uint64_t seed) {
  fs::path manifest =
      fs::path(need_dir(cfg.paths.data_dir, "data_dir")) / (split + ".tsv");
  if (budget <= 0) return corpus::load_split(manifest);
  auto rows = corpus::read_manifest(manifest);
  auto subset = corpus::subset_budget(rows, budget, seed);
  std::sort(subset.begin(), subset.end(),
            [](const corpus::ManifestRow& a, const corpus::ManifestRow& b) {
              return a.id < b.id;
            });
  fs::path tmp_manifest = manifest.parent_path() / ("." + split + ".subset.tsv");
  corpus::write_manifest(tmp_manifest, subset);
  auto utts = corpus::load_split(tmp_manifest);
  fs::remove(tmp_manifest);
  return utts;
}

model::Params load_init(const RunConfig& cfg) {
  return model::load_checkpoint(need_file(cfg.paths.init_checkpoint, "init_checkpoint"));
}

// hyp/ref files: either a manifest (translation column is the text) or a
// two-column `id<TAB>text` TSV.
std::vector<std::pair<std::string, std::string>> read_text_tsv(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open: " + path.string());
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  bool first = true;
  bool manifest = false;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (first) {
      first = false;
      if (line.rfind("id\tfeatures\t", 0) == 0) {
        manifest = true;
        continue;
      }
    }
    auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw DataError(path.string() + ": expected tab-separated id and text");
    if (manifest) {
      std::vector<std::string> cols;
      std::string::size_type at = 0;
      while (true) {
        auto t2 = line.find('\t', at);
        cols.push_back(line.substr(at, t2 == std::string::npos ? t2 : t2 - at));
        if (t2 == std::string::npos) break;
        at = t2 + 1;
      }
      if (cols.size() != 5) throw DataError(path.string() + ": malformed manifest row");
      out.emplace_back(cols[0], cols[4]);
    } else {
      out.emplace_back(line.substr(0, tab), line.substr(tab + 1));
    }
  }
  return out;
}

}  // namespace

json run_gen_data(const RunConfig& cfg) {
  fs::path dir = out_dir(cfg);
  corpus::generate_corpus(cfg.corpus, dir);
  std::ofstream spec_file(dir / "corpus_spec.json", std::ios::binary);
  spec_file << cfg.to_json().at("corpus").dump(2) << '\n';
  std::int64_t total = 0;
  for (const auto& split : corpus::split_names())
    for (const auto& r : corpus::read_manifest(dir / (split + ".tsv")))
      total += r.n_frames;
  return {{"stage", "gen-data"}, {"out_dir", dir.string()}, {"total_frames", total}};
}

json run_train_bpe(const RunConfig& cfg) {
  fs::path data = need_dir(cfg.paths.data_dir, "data_dir");
  std::vector<std::vector<std::string>> sentences;
  for (const char* split : {"train_asr", "train_st", "train_mt"}) {
    for (const auto& r : corpus::read_manifest(data / (std::string(split) + ".tsv"))) {
      sentences.push_back(r.transcript);
      if (!r.translation.empty()) sentences.push_back(r.translation);
    }
  }
  corpus::BpeVocab vocab = corpus::train_bpe(sentences, cfg.bpe_vocab_size);
  fs::path out = bpe_path(cfg);
  corpus::save_bpe(vocab, out);
  return {{"stage", "train-bpe"},
          {"bpe_model", out.string()},
          {"vocab_size", vocab.size()},
          {"n_merges", static_cast<int>(vocab.merges.size())}};
}

namespace {

model::Params fresh_params(const RunConfig& cfg, const corpus::BpeVocab& vocab) {
  model::ModelConfig mc = cfg.model;
  mc.vocab_size = vocab.size();
  mc.validate();
  return model::Params(mc, cfg.train.seed);
}

}  // namespace

json run_pretrain_mt(const RunConfig& cfg) {
  fs::path dir = out_dir(cfg);
  corpus::BpeVocab vocab = corpus::load_bpe(bpe_path(cfg));
  auto train_set = load_budgeted_split(cfg, "train_mt", 0, cfg.train.seed);
  auto dev_set = load_budgeted_split(cfg, "dev_mt", 0, cfg.train.seed);
  model::Params params = fresh_params(cfg, vocab);
  eval::DecodeConfig dev_decode{4, 0.6, cfg.decode.max_len};
  train::JsonlLogger logger(dir / "log_mt.jsonl");
  auto result = train::pretrain_mt(train_set, dev_set, vocab, params, cfg.train,
                                   dev_decode, &logger);
  fs::path ckpt = dir / "mt.waco";
  model::save_checkpoint(params, ckpt);
  return {{"stage", "pretrain-mt"},
          {"checkpoint", ckpt.string()},
          {"steps", result.steps_run},
          {"best_dev_bleu", result.best_metric},
          {"best_step", result.best_step}};
}

json run_pretrain(const RunConfig& cfg, const std::string& method) {
  fs::path dir = out_dir(cfg);
  fs::path ckpt = dir / ("pt_" + method + ".waco");
  if (method == "base") {
    // Base skips cross-modal pre-training: the MT initialization passes
    // through unchanged.
    model::Params params = load_init(cfg);
    model::save_checkpoint(params, ckpt);
    return {{"stage", "pretrain"}, {"method", "base"}, {"checkpoint", ckpt.string()}};
  }
  train::PretrainMethod pm = train::parse_method(method);
  corpus::BpeVocab vocab = corpus::load_bpe(bpe_path(cfg));
  auto train_set = load_budgeted_split(cfg, "train_asr", cfg.asr_budget_frames,
                                       cfg.train.seed);
  auto dev_set = load_budgeted_split(cfg, "dev_asr", 0, cfg.train.seed);
  model::Params params = load_init(cfg);
  train::JsonlLogger logger(dir / ("log_pt_" + method + ".jsonl"));
  auto result = train::pretrain_xmodal(pm, train_set, dev_set, vocab, params,
                                       cfg.train, cfg.contrastive, &logger);
  model::save_checkpoint(params, ckpt);
  return {{"stage", "pretrain"},
          {"method", method},
          {"checkpoint", ckpt.string()},
          {"steps", result.steps_run},
          {"best_dev_loss", result.best_metric},
          {"best_step", result.best_step}};
}

json run_finetune(const RunConfig& cfg) {
  fs::path dir = out_dir(cfg);
  corpus::BpeVocab vocab = corpus::load_bpe(bpe_path(cfg));
  auto train_set =
      load_budgeted_split(cfg, "train_st", cfg.st_budget_frames, cfg.train.seed);
  auto dev_set = load_budgeted_split(cfg, "dev_st", 0, cfg.train.seed);
  model::Params params = load_init(cfg);
  train::JsonlLogger logger(dir / "log_ft.jsonl");
  auto result = train::finetune(train_set, dev_set, vocab, params, cfg.train,
                                cfg.contrastive, cfg.decode, dir / "ring", &logger);
  fs::path ckpt = dir / "ft.waco";
  model::save_checkpoint(params, ckpt);
  return {{"stage", "finetune"},
          {"checkpoint", ckpt.string()},
          {"steps", result.steps_run},
          {"best_dev_bleu", result.best_metric},
          {"best_step", result.best_step}};
}

json run_translate(const RunConfig& cfg) {
  fs::path dir = out_dir(cfg);
  corpus::BpeVocab vocab = corpus::load_bpe(bpe_path(cfg));
  model::Params params =
      model::load_checkpoint(need_file(cfg.paths.checkpoint, "checkpoint"));
  auto set = corpus::load_split(need_file(cfg.paths.manifest, "manifest"));
  auto hyps = eval::translate_set(params, vocab, set, cfg.decode,
                                  cfg.translate_source == "speech", env_threads());
  fs::path out = dir / "hyps.tsv";
  std::ofstream os(out, std::ios::binary);
  for (std::size_t i = 0; i < set.size(); ++i)
    os << set[i].id << '\t' << hyps[i] << '\n';
  if (!os) throw DataError("write failed: " + out.string());
  return {{"stage", "translate"}, {"hyp_file", out.string()},
          {"n_sentences", static_cast<int>(set.size())}};
}

json run_evaluate(const RunConfig& cfg) {
  auto hyp = read_text_tsv(need_file(cfg.paths.hyp_file, "hyp_file"));
  auto ref = read_text_tsv(need_file(cfg.paths.ref_file, "ref_file"));
  std::map<std::string, std::string> ref_by_id(ref.begin(), ref.end());
  std::vector<std::string> hyps, refs;
  for (const auto& [id, text] : hyp) {
    auto it = ref_by_id.find(id);
    if (it == ref_by_id.end())
      throw DataError("evaluate: no reference for id '" + id + "'");
    hyps.push_back(text);
    refs.push_back(it->second);
  }
  double b = eval::bleu(hyps, refs);
  double w = eval::wer(hyps, refs);
  return {{"stage", "evaluate"}, {"bleu", b}, {"wer", w},
          {"n_sentences", static_cast<int>(hyps.size())}};
}

json run_analyze(const RunConfig& cfg) {
  fs::path dir = out_dir(cfg);
  corpus::BpeVocab vocab = corpus::load_bpe(bpe_path(cfg));
  model::Params params =
      model::load_checkpoint(need_file(cfg.paths.checkpoint, "checkpoint"));
  auto set = corpus::load_split(need_file(cfg.paths.manifest, "manifest"));
  auto report = eval::similarity_report(params, vocab, set, cfg.contrastive);
  json rep = {{"word_level_mean_cosine", report.word_level_mean_cosine},
              {"sentence_level_mean_cosine", report.sentence_level_mean_cosine},
              {"n_words", report.n_words},
              {"n_sentences", report.n_sentences}};
  {
    std::ofstream os(dir / "similarity.json", std::ios::binary);
    os << rep.dump(2) << '\n';
  }
  std::vector<double> margins;
  int emitted = 0;
  for (const auto& u : set) {
    if (emitted >= cfg.analyze_n_matrices) break;
    auto mats = eval::alignment_matrix(params, vocab, u, cfg.contrastive);
    if (mats.word_level.size() == 0) continue;
    eval::write_matrix_tsv(mats.token_to_frame, dir / (u.id + ".token_frame.tsv"));
    eval::write_matrix_tsv(mats.word_level, dir / (u.id + ".word_level.tsv"));
    if (mats.word_level.rows() > 1) margins.push_back(eval::diag_margin(mats.word_level));
    ++emitted;
  }
  json out = {{"stage", "analyze"}, {"similarity", rep},
              {"n_matrices", emitted}};
  if (!margins.empty()) {
    double mean = 0.0;
    for (double m : margins) mean += m;
    out["mean_diag_margin"] = mean / static_cast<double>(margins.size());
  }
  return out;
}

json run_sweep(const RunConfig& cfg) {
  fs::path dir = out_dir(cfg);
  if (cfg.sweep.st_budgets.empty())
    throw ConfigError("config: sweep.st_budgets is required for sweep");
  corpus::BpeVocab vocab = corpus::load_bpe(bpe_path(cfg));
  fs::path data = need_dir(cfg.paths.data_dir, "data_dir");
  auto test_set = corpus::load_split(data / "test.tsv");
  auto dev_st = corpus::load_split(data / "dev_st.tsv");

  std::ofstream csv(dir / "sweep.csv", std::ios::binary);
  csv << "method,asr_budget,st_budget,bleu,word_sim,sent_sim,seed\n";
  json rows = json::array();
  for (const std::string& method : cfg.sweep.methods) {
    // One cross-modal pre-training per method, shared across ST budgets.
    RunConfig pre = cfg;
    pre.paths.out_dir = (dir / ("pre_" + method)).string();
    json pre_result = run_pretrain(pre, method);
    for (std::int64_t st_budget : cfg.sweep.st_budgets) {
      RunConfig ft = cfg;
      ft.st_budget_frames = st_budget;
      ft.paths.init_checkpoint = pre_result.at("checkpoint");
      ft.paths.out_dir =
          (dir / ("ft_" + method + "_" + std::to_string(st_budget))).string();
      json ft_result = run_finetune(ft);
      model::Params params = model::load_checkpoint(
          ft_result.at("checkpoint").get<std::string>());
      auto hyps = eval::translate_set(params, vocab, test_set, cfg.decode, true,
                                      env_threads());
      std::vector<std::string> refs;
      for (const auto& u : test_set) refs.push_back(corpus::join_words(u.translation));
      double b = eval::bleu(hyps, refs);
      auto rep = eval::similarity_report(params, vocab, dev_st, cfg.contrastive);
      csv << method << ',' << cfg.asr_budget_frames << ',' << st_budget << ','
          << b << ',' << rep.word_level_mean_cosine << ','
          << rep.sentence_level_mean_cosine << ',' << cfg.train.seed << '\n';
      csv.flush();
      rows.push_back({{"method", method},
                      {"asr_budget", cfg.asr_budget_frames},
                      {"st_budget", st_budget},
                      {"bleu", b},
                      {"word_sim", rep.word_level_mean_cosine},
                      {"sent_sim", rep.sentence_level_mean_cosine},
                      {"seed", cfg.train.seed}});
    }
  }
  return {{"stage", "sweep"}, {"csv", (dir / "sweep.csv").string()}, {"rows", rows}};
}

json run_seqkd(const RunConfig& cfg) {
  fs::path dir = out_dir(cfg);
  corpus::BpeVocab vocab = corpus::load_bpe(bpe_path(cfg));
  model::Params mt_params =
      model::load_checkpoint(need_file(cfg.paths.mt_checkpoint, "mt_checkpoint"));
  fs::path manifest = need_file(cfg.paths.manifest, "manifest");
  auto rows = corpus::read_manifest(manifest);
  auto pseudo = eval::seqkd_expand(mt_params, vocab, rows, manifest.parent_path(),
                                   cfg.decode);
  int n_pseudo = static_cast<int>(pseudo.size());
  if (!cfg.paths.merge_manifest.empty()) {
    fs::path merge = need_file(cfg.paths.merge_manifest, "merge_manifest");
    for (auto r : corpus::read_manifest(merge)) {
      r.features = fs::absolute(merge.parent_path() / r.features)
                       .lexically_normal()
                       .string();
      pseudo.push_back(std::move(r));
    }
  }
  std::sort(pseudo.begin(), pseudo.end(),
            [](const corpus::ManifestRow& a, const corpus::ManifestRow& b) {
              return a.id < b.id;
            });
  fs::path out = dir / "seqkd_st.tsv";
  corpus::write_manifest(out, pseudo);
  return {{"stage", "seqkd"},
          {"manifest", out.string()},
          {"n_pseudo", n_pseudo},
          {"n_total", static_cast<int>(pseudo.size())}};
}

}  // namespace waco::pipeline
