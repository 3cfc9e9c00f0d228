#pragma once

#include <iosfwd>
#include <optional>
#include <string>

#include "recurseq/retrieval.hpp"
#include "recurseq/run_config.hpp"

namespace recurseq {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumerical = 3 };

struct CommandArgs {
  RunConfig config;
  std::string checkpoint;
  std::string input;
  std::string output;
};

struct CommandStreams {
  std::istream& in;
  std::ostream& out;
  std::ostream& err;
};

/// Trains the configured task and writes a checkpoint (required) plus the
/// per-epoch metrics CSV to --output when given.
void cmd_train(const CommandArgs& args, CommandStreams io);
/// Byte error per length bucket for an auto-encoder checkpoint.
void cmd_eval(const CommandArgs& args, CommandStreams io);
/// One CSV row of floats per input line.
void cmd_embed(const CommandArgs& args, CommandStreams io);
/// Attribution heatmap for the first line of --input.
void cmd_attribute(const CommandArgs& args, CommandStreams io);
/// top_k responses per query line: query_index, rank, similarity, response.
void cmd_retrieve(const CommandArgs& args, CommandStreams io);
/// Best response per line read from the input stream until end of input.
void cmd_repl(const CommandArgs& args, CommandStreams io);

/// Dispatches by name and maps exceptions to exit codes, printing the
/// message to io.err.
int run_command(const std::string& name, const CommandArgs& args, CommandStreams io);

/// Full command line: recurseq <command> --config PATH [--set k=v]...
/// [--checkpoint PATH] [--input PATH] [--output PATH] [--seed N].
int run_cli(int argc, const char* const* argv, CommandStreams io);

/// Embedder selected by the config (BoW, word encoder, ensemble or byte
/// latent), with any model it needs loaded from `checkpoint`.
struct Embedder {
  SentenceEmbedder embed;
  std::size_t dim = 0;
};
Embedder make_embedder(const RunConfig& cfg, const std::string& checkpoint);

}  // namespace recurseq
