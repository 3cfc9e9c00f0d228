#include "recurseq/run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>

#include "recurseq/attribution.hpp"

namespace recurseq {

std::string_view embedder_name(EmbedderKind k) {
  switch (k) {
    case EmbedderKind::kBow: return "bow";
    case EmbedderKind::kEncoder: return "encoder";
    case EmbedderKind::kEnsemble: return "ensemble";
    case EmbedderKind::kByte: return "byte";
  }
  return "?";
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename I>
I parse_int(const std::string& key, const std::string& v) {
  I out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw UsageError("config key '" + key + "': '" + v + "' is not a valid integer");
  }
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw UsageError("config key '" + key + "': '" + v + "' is not a number");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw UsageError("config key '" + key + "': '" + v + "' is not a boolean");
}

template <typename F>
auto parse_enum(const std::string& key, const std::string& v, F parse) {
  try {
    return parse(v);
  } catch (const std::invalid_argument& e) {
    throw UsageError("config key '" + key + "': " + e.what());
  }
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"N", [](RunConfig& c, auto& k, auto& v) { c.model.N = parse_int<int>(k, v); }},
      {"d", [](RunConfig& c, auto& k, auto& v) { c.model.d = parse_int<std::size_t>(k, v); }},
      {"K", [](RunConfig& c, auto& k, auto& v) { c.model.K = parse_int<int>(k, v); }},
      {"r", [](RunConfig& c, auto& k, auto& v) { c.model.r = parse_int<int>(k, v); }},
      {"norm_mode", [](RunConfig& c, auto& k, auto& v) { c.model.norm_mode = parse_enum(k, v, parse_norm_mode); }},
      {"padding_mode",
       [](RunConfig& c, auto& k, auto& v) { c.model.padding_mode = parse_enum(k, v, parse_padding_mode); }},
      {"norm_momentum", [](RunConfig& c, auto& k, auto& v) { c.model.norm_momentum = parse_real(k, v); }},
      {"lr", [](RunConfig& c, auto& k, auto& v) { c.train.lr = parse_real(k, v); }},
      {"momentum", [](RunConfig& c, auto& k, auto& v) { c.train.momentum = parse_real(k, v); }},
      {"clip_norm",
       [](RunConfig& c, auto& k, auto& v) {
         if (v == "none") {
           c.train.clip_norm.reset();
         } else {
           c.train.clip_norm = parse_real(k, v);
         }
       }},
      {"batch_size", [](RunConfig& c, auto& k, auto& v) { c.train.batch_size = parse_int<std::size_t>(k, v); }},
      {"epochs", [](RunConfig& c, auto& k, auto& v) { c.train.epochs = parse_int<int>(k, v); }},
      {"samples_per_epoch",
       [](RunConfig& c, auto& k, auto& v) { c.train.samples_per_epoch = parse_int<std::size_t>(k, v); }},
      {"lr_decay_factor", [](RunConfig& c, auto& k, auto& v) { c.train.lr_decay_factor = parse_real(k, v); }},
      {"lr_decay_after_epoch",
       [](RunConfig& c, auto& k, auto& v) { c.train.lr_decay_after_epoch = parse_int<int>(k, v); }},
      {"seed", [](RunConfig& c, auto& k, auto& v) { c.train.seed = parse_int<std::uint64_t>(k, v); }},
      {"min_len", [](RunConfig& c, auto& k, auto& v) { c.train.min_len = parse_int<std::size_t>(k, v); }},
      {"max_len", [](RunConfig& c, auto& k, auto& v) { c.train.max_len = parse_int<std::size_t>(k, v); }},
      {"task",
       [](RunConfig& c, auto& k, auto& v) {
         if (v == "autoencoder") {
           c.task = Task::kAutoencoder;
         } else if (v == "nli") {
           c.task = Task::kNli;
         } else {
           throw UsageError("config key '" + k + "': unknown task '" + v + "' (autoencoder|nli)");
         }
       }},
      {"train_corpus", [](RunConfig& c, auto&, auto& v) { c.train_corpus = v; }},
      {"eval_corpus", [](RunConfig& c, auto&, auto& v) { c.eval_corpus = v; }},
      {"eval_buckets", [](RunConfig& c, auto&, auto& v) { c.eval_buckets = v; }},
      {"eval_samples", [](RunConfig& c, auto& k, auto& v) { c.eval_samples = parse_int<std::size_t>(k, v); }},
      {"eval_batch_size", [](RunConfig& c, auto& k, auto& v) { c.eval_batch_size = parse_int<std::size_t>(k, v); }},
      {"calibrate_samples",
       [](RunConfig& c, auto& k, auto& v) { c.calibrate_samples = parse_int<std::size_t>(k, v); }},
      {"glove", [](RunConfig& c, auto&, auto& v) { c.glove = v; }},
      {"embedder",
       [](RunConfig& c, auto& k, auto& v) {
         if (v == "bow") {
           c.embedder = EmbedderKind::kBow;
         } else if (v == "encoder") {
           c.embedder = EmbedderKind::kEncoder;
         } else if (v == "ensemble") {
           c.embedder = EmbedderKind::kEnsemble;
         } else if (v == "byte") {
           c.embedder = EmbedderKind::kByte;
         } else {
           throw UsageError("config key '" + k + "': unknown embedder '" + v + "' (bow|encoder|ensemble|byte)");
         }
       }},
      {"word_N", [](RunConfig& c, auto& k, auto& v) { c.word.N = parse_int<int>(k, v); }},
      {"word_K", [](RunConfig& c, auto& k, auto& v) { c.word.K = parse_int<int>(k, v); }},
      {"word_norm_mode",
       [](RunConfig& c, auto& k, auto& v) { c.word.norm_mode = parse_enum(k, v, parse_norm_mode); }},
      {"max_words", [](RunConfig& c, auto& k, auto& v) { c.word.max_words = parse_int<std::size_t>(k, v); }},
      {"nli_hidden", [](RunConfig& c, auto& k, auto& v) { c.nli_hidden = parse_int<std::size_t>(k, v); }},
      {"quotes", [](RunConfig& c, auto&, auto& v) { c.quotes = v; }},
      {"paired", [](RunConfig& c, auto& k, auto& v) { c.paired = parse_bool(k, v); }},
      {"strategy", [](RunConfig& c, auto& k, auto& v) { c.strategy = parse_enum(k, v, parse_match_strategy); }},
      {"top_k", [](RunConfig& c, auto& k, auto& v) { c.top_k = parse_int<std::size_t>(k, v); }},
      {"ig_steps", [](RunConfig& c, auto& k, auto& v) { c.ig_steps = parse_int<int>(k, v); }},
      {"heatmap_format", [](RunConfig& c, auto&, auto& v) { c.heatmap_format = v; }},
  };
  return table;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto& table = setters();
  const auto it = table.find(key);
  if (it == table.end()) throw UsageError("unknown config key '" + key + "'");
  it->second(*this, key, value);
}

std::vector<std::pair<std::size_t, std::size_t>> RunConfig::buckets() const {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t start = 0;
  while (start <= eval_buckets.size()) {
    auto end = eval_buckets.find(',', start);
    if (end == std::string::npos) end = eval_buckets.size();
    const std::string item = trim(std::string_view(eval_buckets).substr(start, end - start));
    const auto dash = item.find('-');
    if (item.empty() || dash == std::string::npos) {
      throw UsageError("config key 'eval_buckets': expected lo-hi pairs, got '" + eval_buckets + "'");
    }
    const auto lo = parse_int<std::size_t>("eval_buckets", item.substr(0, dash));
    const auto hi = parse_int<std::size_t>("eval_buckets", item.substr(dash + 1));
    if (lo < 1 || lo > hi) throw UsageError("config key 'eval_buckets': bad range '" + item + "'");
    out.emplace_back(lo, hi);
    start = end + 1;
  }
  return out;
}

void RunConfig::validate() const {
  try {
    model.validate();
    train.validate(model);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  buckets();
  if (ig_steps < 1) throw UsageError("config key 'ig_steps' must be >= 1");
  if (top_k < 1) throw UsageError("config key 'top_k' must be >= 1");
  if (eval_batch_size < 1) throw UsageError("config key 'eval_batch_size' must be >= 1");
  parse_enum("heatmap_format", heatmap_format, parse_heatmap_format);
}

RunConfig parse_run_config(std::istream& in, const std::string& source) {
  RunConfig cfg;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw UsageError(source + ":" + std::to_string(line_no) + ": expected key=value");
    }
    cfg.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config " + path.string());
  return parse_run_config(in, path.string());
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + assignment + "'");
  cfg.set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

std::vector<std::string> run_config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, _] : setters()) keys.push_back(k);
  return keys;
}

}  // namespace recurseq
