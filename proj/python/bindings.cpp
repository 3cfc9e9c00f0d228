#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "recurseq/attribution.hpp"
#include "recurseq/checkpoint.hpp"
#include "recurseq/commands.hpp"
#include "recurseq/retrieval.hpp"
#include "recurseq/train.hpp"

namespace py = pybind11;
using namespace recurseq;

namespace {

NormPhase parse_phase(const std::string& name) {
  if (name == "infer") return NormPhase::kInfer;
  if (name == "train") return NormPhase::kTrain;
  if (name == "batch") return NormPhase::kBatchCalibrated;
  throw std::invalid_argument("unknown phase '" + name + "' (infer, train, batch)");
}

std::vector<std::string> reconstruct(Autoencoder<float>& model, const std::vector<std::string>& texts,
                                     const std::string& phase) {
  if (texts.empty()) return {};
  const SequenceBatch batch = make_batch(texts, model.config());
  Tape<float> tape(false);
  const auto result = model.autoencode(tape, batch, parse_phase(phase));
  std::vector<std::string> out;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    std::span<const std::int32_t> row(result.predicted.data() + b * batch.length, batch.length);
    out.push_back(decode_output(row, batch.seqs[b].positions, DecodeMode::kDisplay));
  }
  return out;
}

std::vector<std::vector<float>> encode(Autoencoder<float>& model, const std::vector<std::string>& texts,
                                       const std::string& phase) {
  std::vector<std::vector<float>> out;
  if (texts.empty()) return out;
  Tape<float> tape(false);
  const Tensor<float> latent = model.encode(tape, make_batch(texts, model.config()), parse_phase(phase)).value();
  const std::size_t width = model.config().latent_size();
  for (std::size_t b = 0; b < texts.size(); ++b)
    out.emplace_back(latent.ptr() + b * width, latent.ptr() + (b + 1) * width);
  return out;
}

py::list train_random(Autoencoder<float>& model, const TrainConfig& cfg) {
  cfg.validate(model.config());
  RandomStringSampler sampler(cfg.seed ^ 0x9E3779B97F4A7C15ULL, cfg.min_len, cfg.max_len);
  MomentumState<float> state;
  py::list history;
  for (int e = 1; e <= cfg.epochs; ++e) {
    const EpochStats s = train_epoch(model, sampler, cfg, e, state);
    py::dict row;
    row["epoch"] = s.epoch;
    row["loss"] = s.loss;
    row["byte_error"] = s.byte_error;
    row["lr"] = s.lr;
    row["clip_events"] = s.clip_events;
    history.append(row);
  }
  return history;
}

void calibrate(Autoencoder<float>& model, const std::vector<std::string>& texts, std::size_t batch_size) {
  std::vector<SequenceBatch> batches;
  for (std::size_t i = 0; i < texts.size(); i += batch_size) {
    const auto end = texts.begin() + static_cast<std::ptrdiff_t>(std::min(texts.size(), i + batch_size));
    batches.push_back(make_batch({texts.begin() + static_cast<std::ptrdiff_t>(i), end}, model.config()));
  }
  calibrate_bn(model, batches);
}

}  // namespace

PYBIND11_MODULE(_recurseq, m) {
  m.doc() = "Recursive convolutional sequence auto-encoders";

  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("N", &ModelConfig::N)
      .def_readwrite("d", &ModelConfig::d)
      .def_readwrite("K", &ModelConfig::K)
      .def_readwrite("r", &ModelConfig::r)
      .def_property(
          "norm_mode", [](const ModelConfig& c) { return std::string(norm_mode_name(c.norm_mode)); },
          [](ModelConfig& c, const std::string& s) { c.norm_mode = parse_norm_mode(s); })
      .def_property(
          "padding_mode", [](const ModelConfig& c) { return std::string(padding_mode_name(c.padding_mode)); },
          [](ModelConfig& c, const std::string& s) { c.padding_mode = parse_padding_mode(s); })
      .def_readwrite("norm_momentum", &ModelConfig::norm_momentum)
      .def("validate", &ModelConfig::validate);

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("lr", &TrainConfig::lr)
      .def_readwrite("momentum", &TrainConfig::momentum)
      .def_readwrite("clip_norm", &TrainConfig::clip_norm)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("samples_per_epoch", &TrainConfig::samples_per_epoch)
      .def_readwrite("lr_decay_factor", &TrainConfig::lr_decay_factor)
      .def_readwrite("lr_decay_after_epoch", &TrainConfig::lr_decay_after_epoch)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("min_len", &TrainConfig::min_len)
      .def_readwrite("max_len", &TrainConfig::max_len);

  py::class_<Autoencoder<float>>(m, "Autoencoder")
      .def(py::init<const ModelConfig&, std::uint64_t>(), py::arg("config"), py::arg("seed") = 1)
      .def_property_readonly("config", &Autoencoder<float>::config)
      .def("parameter_count", &Autoencoder<float>::parameter_count)
      .def("reconstruct", &reconstruct, py::arg("texts"), py::arg("phase") = "infer",
           "Decoded reconstruction of each text.")
      .def("encode", &encode, py::arg("texts"), py::arg("phase") = "infer", "Flattened latent of each text.")
      .def(
          "byte_error",
          [](Autoencoder<float>& m, const std::vector<std::string>& texts, const std::string& phase) {
            return evaluate(m, texts, 64, parse_phase(phase)).byte_error();
          },
          py::arg("texts"), py::arg("phase") = "infer")
      .def("train_random", &train_random, py::arg("train_config"),
           "Trains on random alphanumeric strings; returns per-epoch metrics.")
      .def("calibrate", &calibrate, py::arg("texts"), py::arg("batch_size") = 32,
           "Sets batch-norm running statistics to the exact statistics of texts.")
      .def(
          "attribution_matrix",
          [](Autoencoder<float>& m, const std::string& text, int steps) {
            const AttributionMatrix a = attribution_matrix(m, text, steps);
            std::vector<std::vector<double>> rows(a.values.dim(0), std::vector<double>(a.values.dim(1)));
            for (std::size_t i = 0; i < rows.size(); ++i)
              for (std::size_t j = 0; j < rows[i].size(); ++j) rows[i][j] = a.values[i * a.values.dim(1) + j];
            return rows;
          },
          py::arg("text"), py::arg("steps") = 50)
      .def(
          "save",
          [](Autoencoder<float>& m, const std::filesystem::path& path) { save_autoencoder(path, m); },
          py::arg("path"));

  m.def(
      "load_autoencoder",
      [](const std::filesystem::path& path) { return std::move(load_autoencoder(path).model); }, py::arg("path"));

  m.def("param_count", &param_count, py::arg("config"));
  m.def(
      "tokenize_bytes", [](const std::string& s) { return tokenize_bytes(s); }, py::arg("text"));
  m.def(
      "tokenize_words", [](const std::string& s) { return tokenize_words(s); }, py::arg("text"));
  m.def("nearest_pow2", &nearest_pow2, py::arg("length"));
  m.def(
      "balanced_pad",
      [](const std::vector<std::int32_t>& ids, int K) {
        const PaddedSequence p = pad_balanced(ids, K);
        return py::make_tuple(p.ids, p.positions);
      },
      py::arg("ids"), py::arg("K"), "Returns (slots, positions of the real tokens).");
  m.def(
      "unpad",
      [](const std::vector<std::int32_t>& slots, const std::vector<std::size_t>& positions) {
        PaddedSequence p;
        p.ids = slots;
        p.positions = positions;
        p.original_length = positions.size();
        p.K = nearest_pow2(slots.size());
        p.k = positions.empty() ? 0 : nearest_pow2(positions.size());
        return unpad(p);
      },
      py::arg("slots"), py::arg("positions"));
  m.def(
      "decode_output",
      [](const std::vector<std::int32_t>& predicted, const std::vector<std::size_t>& positions) {
        return decode_output(predicted, positions, DecodeMode::kDisplay);
      },
      py::arg("predicted"), py::arg("positions"));
  m.def(
      "cosine", [](const std::vector<float>& a, const std::vector<float>& b) { return cosine(a, b); }, py::arg("a"),
      py::arg("b"));

  py::class_<QuoteIndex>(m, "QuoteIndex")
      .def(py::init([](const std::vector<std::string>& quotes, const SentenceEmbedder& embed) {
             return build_index(quotes, embed);
           }),
           py::arg("quotes"), py::arg("embed"))
      .def("__len__", &QuoteIndex::size)
      .def_property_readonly("dropped", &QuoteIndex::dropped)
      .def(
          "knn",
          [](const QuoteIndex& index, const std::vector<float>& query, std::size_t k) {
            std::vector<std::tuple<std::size_t, double, std::string>> out;
            for (const auto& n : knn(index, query, k))
              out.emplace_back(n.index, n.similarity, index.entries()[n.index].response);
            return out;
          },
          py::arg("query"), py::arg("k") = 1, "(index, similarity, response) triples, best first.");

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args, const std::string& stdin_text) {
        std::vector<const char*> argv = {"recurseq"};
        for (const auto& a : args) argv.push_back(a.c_str());
        std::istringstream in(stdin_text);
        std::ostringstream out, err;
        const int code = run_cli(static_cast<int>(argv.size()), argv.data(), {in, out, err});
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), py::arg("stdin") = "", "Runs one command line; returns (exit code, stdout, stderr).");
}
