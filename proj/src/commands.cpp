#include "recurseq/commands.hpp"

#include <Eigen/Core>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "recurseq/attribution.hpp"
#include "recurseq/checkpoint.hpp"
#include "recurseq/io.hpp"

namespace recurseq {

namespace {

constexpr std::uint64_t kSamplerSalt = 0x9E3779B97F4A7C15ULL;
constexpr std::uint64_t kCalibrationSalt = 0xC2B2AE3D27D4EB4FULL;
constexpr std::uint64_t kEvalSalt = 0x165667B19E3779F9ULL;

std::vector<std::string> read_text_lines(const std::string& path, bool keep_empty) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (keep_empty || !line.empty()) lines.push_back(line);
  }
  return lines;
}

void require(const std::string& value, const std::string& what) {
  if (value.empty()) throw UsageError(what + " is required");
}

// Lines that cannot be padded into 2^K slots are dropped with a warning.
std::vector<std::string> fitting_lines(std::vector<std::string> lines, const ModelConfig& config, std::ostream& err) {
  std::vector<std::string> kept;
  for (auto& l : lines)
    if (!l.empty() && l.size() + 1 <= config.padded_length()) kept.push_back(std::move(l));
  if (kept.size() != lines.size()) {
    err << "warning: " << lines.size() - kept.size() << " line(s) empty or longer than " << config.padded_length() - 1
        << " bytes skipped\n";
  }
  if (kept.empty()) throw DataError("no usable lines in corpus");
  return kept;
}

// Legacy padding needs one padded length per batch; fixed modes take any mix.
std::vector<SequenceBatch> batches_for(const std::vector<std::string>& texts, const ModelConfig& config) {
  std::map<std::size_t, std::vector<std::string>> groups;
  for (const auto& t : texts) groups[config.legacy() ? std::size_t(nearest_pow2(t.size() + 1)) : 0].push_back(t);
  std::vector<SequenceBatch> out;
  for (const auto& [_, g] : groups) out.push_back(make_batch(g, config));
  return out;
}

void emit_metrics(const std::string& csv, const CommandArgs& args) {
  if (!args.output.empty()) write_file_atomic(args.output, csv);
}

void train_autoencoder(const CommandArgs& args, CommandStreams io) {
  const RunConfig& cfg = args.config;
  const std::uint64_t seed = cfg.train.seed;
  Autoencoder<float> model(cfg.model, seed);
  std::unique_ptr<TextSampler> sampler;
  if (cfg.train_corpus.empty()) {
    sampler = std::make_unique<RandomStringSampler>(seed ^ kSamplerSalt, cfg.train.min_len, cfg.train.max_len);
  } else {
    sampler = std::make_unique<CorpusSampler>(
        fitting_lines(read_text_lines(cfg.train_corpus, false), cfg.model, io.err), seed ^ kSamplerSalt);
  }
  io.err << "training " << model.parameter_count() << " parameters\n";
  MomentumState<float> state;
  std::string csv = epoch_csv_header() + "\n";
  io.out << epoch_csv_header() << '\n';
  for (int epoch = 1; epoch <= cfg.train.epochs; ++epoch) {
    const EpochStats st = train_epoch(model, *sampler, cfg.train, epoch, state);
    csv += epoch_csv_line(st) + "\n";
    io.out << epoch_csv_line(st) << std::endl;
    emit_metrics(csv, args);
  }
  if (cfg.calibrate_samples > 0 && cfg.model.norm_mode == NormMode::kBatch) {
    std::vector<std::string> texts;
    if (cfg.train_corpus.empty()) {
      RandomStringSampler cal(seed ^ kCalibrationSalt, cfg.train.min_len, cfg.train.max_len);
      for (std::size_t i = 0; i < cfg.calibrate_samples; ++i) texts.push_back(cal.next());
    } else {
      CorpusSampler cal(fitting_lines(read_text_lines(cfg.train_corpus, false), cfg.model, io.err),
                        seed ^ kCalibrationSalt);
      for (std::size_t i = 0; i < cfg.calibrate_samples; ++i) texts.push_back(cal.next());
    }
    calibrate_bn(model, batches_for(texts, cfg.model));
  }
  save_autoencoder(args.checkpoint, model, &cfg.train, &state, cfg.train.epochs);
}

void train_nli(const CommandArgs& args, CommandStreams io) {
  const RunConfig& cfg = args.config;
  require(cfg.glove, "config key 'glove'");
  require(cfg.train_corpus, "config key 'train_corpus'");
  const GloveTable glove = load_glove(cfg.glove);
  std::ifstream in(cfg.train_corpus);
  if (!in) throw DataError("cannot open " + cfg.train_corpus);
  const auto data = read_nli_corpus(in);
  Rng head_rng(cfg.train.seed ^ kSamplerSalt);
  WordModel model{WordEncoder<float>(cfg.word, glove, cfg.train.seed), NliHead<float>(glove.dim, cfg.nli_hidden, head_rng),
                  cfg.nli_hidden};
  Rng shuffle(cfg.train.seed ^ kCalibrationSalt);
  MomentumState<float> state;
  std::string csv = epoch_csv_header() + "\n";
  io.out << epoch_csv_header() << '\n';
  for (int epoch = 1; epoch <= cfg.train.epochs; ++epoch) {
    const EpochStats st = train_nli_epoch(model.encoder, *model.head, data, cfg.train, epoch, state, shuffle);
    csv += epoch_csv_line(st) + "\n";
    io.out << epoch_csv_line(st) << std::endl;
    emit_metrics(csv, args);
  }
  if (cfg.word.norm_mode == NormMode::kBatch) {
    std::vector<std::vector<std::string>> sentences;
    for (const auto& ex : data) {
      sentences.push_back(ex.premise);
      sentences.push_back(ex.hypothesis);
    }
    calibrate_bn(model.encoder, sentences);
  }
  save_word_model(args.checkpoint, model, &cfg.train);
}

QuoteIndex index_from_config(const RunConfig& cfg, const Embedder& embedder) {
  require(cfg.quotes, "config key 'quotes'");
  std::ifstream in(cfg.quotes);
  if (!in) throw DataError("cannot open " + cfg.quotes);
  if (cfg.paired) return build_paired_index(read_paired_corpus(in), embedder.embed);
  return build_index(read_lines(in), embedder.embed);
}

}  // namespace

Embedder make_embedder(const RunConfig& cfg, const std::string& checkpoint) {
  if (cfg.embedder == EmbedderKind::kByte) {
    require(checkpoint, "--checkpoint (auto-encoder)");
    auto model = std::make_shared<Autoencoder<float>>(load_autoencoder(checkpoint, &cfg.model).model);
    Embedder e;
    e.dim = cfg.model.latent_size();
    e.embed = [model](const std::string& text) {
      Tape<float> tape(false);
      const Var<float> z = model->encode(tape, make_batch({text}, model->config()), NormPhase::kInfer);
      const auto& d = z.value().data();
      return std::vector<float>(d.begin(), d.end());
    };
    return e;
  }
  require(cfg.glove, "config key 'glove'");
  auto glove = std::make_shared<GloveTable>(load_glove(cfg.glove));
  auto vocab = std::make_shared<WordVocab>(glove->vocab());
  Embedder e;
  e.dim = glove->dim;
  const std::size_t dim = glove->dim;
  auto bow = [glove, vocab](const std::vector<std::string>& tokens) { return bow_embed<float>(tokens, *glove, *vocab); };
  if (cfg.embedder == EmbedderKind::kBow) {
    e.embed = [bow, dim](const std::string& text) {
      const auto tokens = tokenize_words(text);
      if (tokens.empty()) return std::vector<float>(dim, 0.0f);
      const Tensor<float> u = bow(tokens);
      return std::vector<float>(u.data().begin(), u.data().end());
    };
    return e;
  }
  require(checkpoint, "--checkpoint (word encoder)");
  auto word = std::make_shared<WordModel>(load_word_model(checkpoint, *glove));
  const bool ensemble = cfg.embedder == EmbedderKind::kEnsemble;
  e.embed = [word, bow, dim, ensemble](const std::string& text) {
    const auto tokens = tokenize_words(text);
    if (tokens.empty()) return std::vector<float>(dim, 0.0f);
    Tape<float> tape(false);
    Tensor<float> v = word->encoder.forward(tape, {tokens}, NormPhase::kInfer).value().reshaped({dim});
    if (ensemble) v = ensemble_embed(v, bow(tokens));
    return std::vector<float>(v.data().begin(), v.data().end());
  };
  return e;
}

void cmd_train(const CommandArgs& args, CommandStreams io) {
  require(args.checkpoint, "--checkpoint");
  if (args.config.task == Task::kNli) {
    train_nli(args, io);
  } else {
    train_autoencoder(args, io);
  }
}

void cmd_eval(const CommandArgs& args, CommandStreams io) {
  require(args.checkpoint, "--checkpoint");
  const RunConfig& cfg = args.config;
  LoadedAutoencoder loaded = load_autoencoder(args.checkpoint, &cfg.model);
  const auto buckets = cfg.buckets();
  std::vector<std::string> corpus;
  const std::string source = !args.input.empty() ? args.input : cfg.eval_corpus;
  if (!source.empty()) {
    corpus = fitting_lines(read_text_lines(source, false), cfg.model, io.err);
  } else {
    std::size_t lo = buckets.front().first, hi = buckets.front().second;
    for (const auto& [a, b] : buckets) {
      lo = std::min(lo, a);
      hi = std::max(hi, b);
    }
    hi = std::min(hi, cfg.model.padded_length());
    lo = std::max<std::size_t>(lo, 2);
    if (lo > hi) throw UsageError("eval_buckets do not overlap lengths 2.." + std::to_string(cfg.model.padded_length()));
    RandomStringSampler sampler(cfg.train.seed ^ kEvalSalt, lo, hi);
    for (std::size_t i = 0; i < cfg.eval_samples; ++i) corpus.push_back(sampler.next());
  }
  const LengthBucketReport report = eval_byte_error_by_bucket(loaded.model, corpus, buckets, cfg.eval_batch_size);
  if (args.output.empty()) {
    io.out << report.csv();
  } else {
    write_file_atomic(args.output, report.csv());
  }
}

void cmd_embed(const CommandArgs& args, CommandStreams io) {
  require(args.input, "--input");
  const Embedder embedder = make_embedder(args.config, args.checkpoint);
  std::ostringstream os;
  os.precision(9);
  for (const auto& line : read_text_lines(args.input, true)) {
    const auto v = embedder.embed(line);
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
    os << '\n';
  }
  if (args.output.empty()) {
    io.out << os.str();
  } else {
    write_file_atomic(args.output, os.str());
  }
}

void cmd_attribute(const CommandArgs& args, CommandStreams io) {
  require(args.checkpoint, "--checkpoint");
  require(args.input, "--input");
  require(args.output, "--output");
  const RunConfig& cfg = args.config;
  LoadedAutoencoder loaded = load_autoencoder(args.checkpoint, &cfg.model);
  const auto lines = read_text_lines(args.input, false);
  if (lines.empty()) throw DataError(args.input + " has no text");
  const AttributionMatrix m = attribution_matrix(loaded.model, lines.front(), cfg.ig_steps);
  export_heatmap(m, args.output, parse_heatmap_format(cfg.heatmap_format));
  io.err << "wrote " << m.values.dim(0) << "x" << m.values.dim(1) << " heatmap to " << args.output << '\n';
}

void cmd_retrieve(const CommandArgs& args, CommandStreams io) {
  require(args.input, "--input");
  const RunConfig& cfg = args.config;
  const Embedder embedder = make_embedder(cfg, args.checkpoint);
  const QuoteIndex index = index_from_config(cfg, embedder);
  std::ostringstream os;
  os.precision(9);
  const auto queries = read_text_lines(args.input, true);
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const auto vec = embedder.embed(queries[q]);
    std::vector<Neighbor> hits;
    try {
      hits = knn(index, vec, cfg.top_k, cfg.strategy);
    } catch (const DataError& e) {
      io.err << "warning: query " << q << " skipped: " << e.what() << '\n';
      continue;
    }
    for (std::size_t r = 0; r < hits.size(); ++r) {
      os << q << '\t' << r + 1 << '\t' << hits[r].similarity << '\t' << index.entries()[hits[r].index].response
         << '\n';
    }
  }
  if (args.output.empty()) {
    io.out << os.str();
  } else {
    write_file_atomic(args.output, os.str());
  }
}

void cmd_repl(const CommandArgs& args, CommandStreams io) {
  const RunConfig& cfg = args.config;
  const Embedder embedder = make_embedder(cfg, args.checkpoint);
  const QuoteIndex index = index_from_config(cfg, embedder);
  std::string line;
  while (std::getline(io.in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    try {
      io.out << respond(line, index, embedder.embed, cfg.strategy) << std::endl;
    } catch (const DataError& e) {
      io.out << "(no match: " << e.what() << ")" << std::endl;
    }
  }
}

int run_command(const std::string& name, const CommandArgs& args, CommandStreams io) {
  static const std::map<std::string, void (*)(const CommandArgs&, CommandStreams)> commands = {
      {"train", cmd_train},   {"eval", cmd_eval},         {"embed", cmd_embed},
      {"attribute", cmd_attribute}, {"retrieve", cmd_retrieve}, {"repl", cmd_repl},
  };
  try {
    const auto it = commands.find(name);
    if (it == commands.end()) throw UsageError("unknown command '" + name + "'");
    args.config.validate();
    it->second(args, io);
    return kExitOk;
  } catch (const NumericalError& e) {
    io.err << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const DataError& e) {
    io.err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::invalid_argument& e) {
    io.err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    io.err << "error: " << e.what() << '\n';
    return kExitData;
  }
}

int run_cli(int argc, const char* const* argv, CommandStreams io) {
  CLI::App app{"Recursive convolutional sequence auto-encoder tools", "recurseq"};
  std::string command, config_path;
  std::vector<std::string> overrides;
  CommandArgs args;
  std::optional<std::uint64_t> seed;
  app.add_option("command", command, "train|eval|embed|attribute|retrieve|repl")
      ->required()
      ->check(CLI::IsMember({"train", "eval", "embed", "attribute", "retrieve", "repl"}));
  app.add_option("--config", config_path, "key=value run configuration")->required();
  app.add_option("--set", overrides, "override one config key (key=value), repeatable");
  app.add_option("--checkpoint", args.checkpoint, "checkpoint to write (train) or read");
  app.add_option("--input", args.input, "input text file");
  app.add_option("--output", args.output, "output file (default: stdout where applicable)");
  app.add_option("--seed", seed, "overrides the config seed");
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    io.out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    io.err << "usage error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }
  try {
    if (const char* env = std::getenv("RECURSEQ_THREADS")) {
      char* end = nullptr;
      const long n = std::strtol(env, &end, 10);
      if (end == env || *end != '\0' || n < 1) throw UsageError("RECURSEQ_THREADS must be a positive integer");
      Eigen::setNbThreads(static_cast<int>(n));
    } else {
      Eigen::setNbThreads(1);
    }
    args.config = load_run_config(config_path);
    for (const auto& o : overrides) apply_override(args.config, o);
    if (seed) args.config.train.seed = *seed;
  } catch (const std::invalid_argument& e) {
    io.err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  }
  return run_command(command, args, io);
}

}  // namespace recurseq
