#include <iostream>

#include <CLI11.hpp>

#include "streamkit/bench/bench.hpp"

using namespace streamkit;

int main(int argc, char** argv) {
  CLI::App app{"relay benchmark and scaled-deployment harness"};
  app.require_subcommand(1);

  bench::Scenario scenario;
  auto* throughput = app.add_subcommand("throughput", "measure relay throughput");
  throughput->add_option("--producers", scenario.producers);
  throughput->add_option("--consumers", scenario.consumers);
  throughput->add_option("--relays", scenario.relays);
  throughput->add_option("--size", scenario.message_size, "payload bytes per message");
  throughput->add_option("--count", scenario.message_count, "total messages");
  throughput->add_option("--policy", scenario.policy, "block or drop-oldest");
  throughput->add_option("--capacity", scenario.relay_capacity_frames, "ring capacity (frames)");
  throughput->add_option("--duration-limit", scenario.duration_limit_s, "hard cap in seconds");
  throughput->add_option("--relay-bin", scenario.relay_bin);

  bench::TmoScenario tmo;
  auto* tmo_cmd = app.add_subcommand("tmo-scaled",
                                     "scaled replica: workers -> relay -> file consumers");
  tmo_cmd->add_option("--workers", tmo.workers);
  tmo_cmd->add_option("--consumers", tmo.consumers);
  tmo_cmd->add_option("--events", tmo.events_per_worker, "events per worker");
  tmo_cmd->add_option("--batch", tmo.batch_size);
  tmo_cmd->add_option("--duration-limit", tmo.duration_limit_s);
  tmo_cmd->add_option("--relay-bin", tmo.relay_bin);
  tmo_cmd->add_option("--streamer-bin", tmo.streamer_bin);

  // Internal worker modes used by the harness itself.
  std::string endpoint, receipts, mode = "tagged", save_dir;
  std::uint32_t producer_id = 0;
  std::uint64_t count = 0;
  std::size_t size = 0;
  auto* produce = app.add_subcommand("produce", "internal: tagged frame producer");
  produce->add_option("--endpoint", endpoint)->required();
  produce->add_option("--id", producer_id)->required();
  produce->add_option("--count", count)->required();
  produce->add_option("--size", size)->required();

  auto* consume = app.add_subcommand("consume", "internal: recording consumer");
  consume->add_option("--endpoint", endpoint)->required();
  consume->add_option("--receipts", receipts)->required();
  consume->add_option("--mode", mode, "tagged or blob");
  consume->add_option("--save-dir", save_dir);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*throughput) {
      const auto report = bench::run_throughput(scenario);
      std::cout << report.to_json().dump(2) << "\n";
      return 0;
    }
    if (*tmo_cmd) {
      const auto report = bench::run_scaled_tmo(tmo);
      std::cout << report.to_json().dump(2) << "\n";
      return 0;
    }
    if (*produce) return bench::produce_main(endpoint, producer_id, count, size);
    if (*consume) return bench::consume_main(endpoint, receipts, mode, save_dir);
  } catch (const Error& e) {
    std::cerr << "bench: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
