#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "streamkit/identity/hmac.hpp"
#include "streamkit/pipeline/pipeline.hpp"
#include "streamkit/wire/config.hpp"

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw streamkit::Error("cannot read " + path);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"config-driven event reduction pipeline worker"};
  app.require_subcommand(1);

  std::string config_path, trace_path;
  std::uint32_t worker_index = 0, worker_count = 1;
  double skip_abort = 0.10;
  auto* run = app.add_subcommand("run", "run the pipeline described by a config file");
  run->add_option("-c,--config", config_path, "pipeline config (YAML or JSON)")->required();
  run->add_option("--worker-index", worker_index, "this worker's index");
  run->add_option("--worker-count", worker_count, "total parallel workers");
  run->add_option("--trace", trace_path, "write per-blob trace JSONL here");
  run->add_option("--skip-abort-fraction", skip_abort, "abort when skips exceed this share");

  CLI11_PARSE(app, argc, argv);

  try {
    auto result = streamkit::wire::validate_config(read_file(config_path));
    if (!result.ok()) {
      std::cerr << "configuration invalid:\n" << result.error_summary();
      return 2;
    }

    streamkit::pipeline::PipelineOptions options;
    options.worker_index = worker_index;
    options.worker_count = worker_count;
    options.skip_abort_fraction = skip_abort;

    std::ofstream trace;
    if (!trace_path.empty()) {
      trace.open(trace_path, std::ios::trunc);
      options.blob_observer = [&trace](const streamkit::pipeline::BlobTrace& t) {
        nlohmann::json line = {{"batch", t.batch_index},
                               {"first_event_ns", t.first_event_wall_ns},
                               {"emit_ns", t.emit_wall_ns},
                               {"sha256", streamkit::identity::sha256_hex(*t.blob)}};
        trace << line.dump() << "\n";
        trace.flush();
      };
    }

    auto pipeline = streamkit::pipeline::Pipeline::load(*result.config, std::move(options));
    const auto summary = pipeline.run();

    nlohmann::json out = {{"events_read", summary.events_read},
                          {"events_skipped", summary.events_skipped},
                          {"batches", summary.batches},
                          {"blobs_handled", summary.blobs_handled},
                          {"duration_seconds", summary.duration_seconds},
                          {"aborted", summary.aborted}};
    if (summary.aborted) out["abort_reason"] = summary.abort_reason;
    std::cout << out.dump() << "\n";
    return summary.aborted ? 1 : 0;
  } catch (const streamkit::Error& e) {
    std::cerr << "streamer: " << e.what() << "\n";
    return 1;
  }
}
