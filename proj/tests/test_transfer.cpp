#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <thread>

#include "streamkit/http.hpp"
#include "streamkit/identity/hmac.hpp"
#include "streamkit/net/net.hpp"
#include "streamkit/transfer/fsm.hpp"
#include "streamkit/transfer/service.hpp"
#include "streamkit/wire/frame.hpp"

using namespace streamkit;
using namespace streamkit::transfer;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path temp_dir(const std::string& tag) {
  auto dir = fs::temp_directory_path() / ("sk_tx_" + tag + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Independent model of the transition table, written from the design notes
// rather than by calling step().
TransferState model(TransferState s, TransferEvent e, bool& changed) {
  changed = true;
  using S = TransferState;
  using E = TransferEvent;
  if (s == S::created && e == E::relay_ready) return S::starting;
  if (s == S::created && e == E::start_failed) return S::failed;
  if (s == S::created && e == E::user_cancel) return S::canceled;
  if (s == S::starting && e == E::job_active) return S::running;
  if (s == S::starting && e == E::job_failed) return S::failed;
  if (s == S::starting && e == E::user_cancel) return S::canceled;
  if (s == S::running && e == E::job_completed) return S::draining;
  if (s == S::running && e == E::job_failed) return S::failed;
  if (s == S::running && e == E::user_cancel) return S::canceled;
  if (s == S::draining && e == E::drain_done) return S::completed;
  changed = false;
  return s;
}

// A stand-in worker binary: ignores its pipeline arguments, optionally
// streams some frames at the relay, exits per the mode baked into it.
fs::path write_fake_streamer(const fs::path& dir, const std::string& body) {
  const fs::path path = dir / "fake-streamer";
  std::ofstream out(path);
  out << "#!/bin/sh\n" << body << "\n";
  out.close();
  fs::permissions(path, fs::perms::owner_all);
  return path;
}

json simple_request() {
  return json{
      {"config",
       {{"lclstreamer",
         {{"event_source", "SyntheticEventSource"},
          {"processing_pipeline", "BatchProcessingPipeline"},
          {"data_serializer", "Lsc1Serializer"},
          {"data_handlers", {"BinaryDataStreamingDataHandler"}}}},
        {"event_source", {{"SyntheticEventSource", {{"max_events", 20}}}}},
        {"processing_pipeline", {{"BatchProcessingPipeline", {{"batch_size", 5}}}}},
        {"data_serializer",
         {{"Lsc1Serializer", {{"fields", {{"timestamp", "/data/timestamp"}}}}}}},
        {"data_sources", {{"timestamp", {{"type", "SyntheticTimestamp"}}}}}}},
      {"worker_count", 1},
  };
}

void wait_state(TransferService& svc, const std::string& id, const std::string& want,
                int timeout_ms = 20000) {
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
  while (std::chrono::steady_clock::now() < deadline) {
    if (svc.get(id).at("state") == want) return;
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
}

bool port_open(std::uint16_t port) {
  try {
    net::dial({"127.0.0.1", port}, 200);
    return true;
  } catch (const Error&) {
    return false;
  }
}

}  // namespace

TEST_CASE("fsm: exhaustive state x event equivalence with the model") {
  for (int si = 0; si < 7; ++si) {
    for (int ei = 0; ei < 8; ++ei) {
      const auto s = static_cast<TransferState>(si);
      const auto e = static_cast<TransferEvent>(ei);
      bool want_changed = false;
      const TransferState want = model(s, e, want_changed);
      const StepResult got = step(s, e);
      CAPTURE(state_name(s));
      CAPTURE(event_name(e));
      CHECK(got.changed == want_changed);
      CHECK(got.next == want);
    }
  }
}

TEST_CASE("fsm: terminal states accept nothing") {
  for (TransferState s : {TransferState::completed, TransferState::failed,
                          TransferState::canceled}) {
    for (int ei = 0; ei < 8; ++ei) {
      const StepResult r = step(s, static_cast<TransferEvent>(ei));
      CHECK_FALSE(r.changed);
      CHECK(r.next == s);
    }
  }
}

TEST_CASE("fsm: named sequences from the table") {
  CHECK(step(TransferState::created, TransferEvent::relay_ready).next ==
        TransferState::starting);
  auto r = step(TransferState::running, TransferEvent::job_completed);
  CHECK(r.next == TransferState::draining);
  CHECK(step(TransferState::draining, TransferEvent::drain_done).next ==
        TransferState::completed);
}

TEST_CASE("service: invalid config -> 422-shaped errors, no relay started") {
  const auto dir = temp_dir("invalid");
  TransferServiceConfig cfg;
  cfg.work_dir = dir;
  TransferService svc(cfg);
  svc.start();

  json req = simple_request();
  req["config"]["lclstreamer"]["event_source"] = "Psana1EventSource";
  try {
    svc.create(req);
    FAIL("expected RequestInvalid");
  } catch (const RequestInvalid& e) {
    bool found = false;
    for (const auto& err : e.errors()) {
      if (err.at("message").get<std::string>().find("unknown component") != std::string::npos) {
        found = true;
      }
    }
    CHECK(found);
  }
  CHECK(svc.idle());
  svc.stop();
  fs::remove_all(dir);
}

TEST_CASE("service: full lifecycle to COMPLETED with no orphaned relay") {
  const auto dir = temp_dir("complete");
  // Worker exits cleanly; the drain has nothing to wait for. The real
  // streamer binary exercises this path end to end in the acceptance suite.
  const auto streamer = write_fake_streamer(dir, "exit 0");

  TransferServiceConfig cfg;
  cfg.work_dir = dir;
  cfg.streamer_path = streamer.string();
  cfg.drain_timeout = std::chrono::milliseconds(3000);
  TransferService svc(cfg);
  svc.start();

  const std::string id = svc.create(simple_request());
  const json fresh = svc.get(id);
  CHECK((fresh.at("state") == "CREATED" || fresh.at("state") == "STARTING" ||
         fresh.at("state") == "RUNNING"));

  wait_state(svc, id, "COMPLETED");
  const json done = svc.get(id);
  REQUIRE(done.at("state") == "COMPLETED");
  CHECK(done.at("jobid").get<std::string>() != "");

  // Transition timestamps are monotone.
  double last_t = 0;
  for (const auto& tr : done.at("transitions")) {
    CHECK(tr.at("t").get<double>() >= last_t);
    last_t = tr.at("t").get<double>();
  }

  // The relay's ports are released: nothing is listening any more.
  const std::string egress = done.at("egress_endpoint");
  const std::uint16_t egress_port =
      static_cast<std::uint16_t>(std::stoi(egress.substr(egress.rfind(':') + 1)));
  CHECK(svc.idle());
  CHECK_FALSE(port_open(egress_port));

  svc.stop();
  fs::remove_all(dir);
}

TEST_CASE("service: cancel during RUNNING lands in CANCELED and tears the relay down") {
  const auto dir = temp_dir("cancel");
  const auto streamer = write_fake_streamer(dir, "sleep 60");

  TransferServiceConfig cfg;
  cfg.work_dir = dir;
  cfg.streamer_path = streamer.string();
  cfg.drain_timeout = std::chrono::milliseconds(500);
  TransferService svc(cfg);
  svc.start();

  const std::string id = svc.create(simple_request());
  wait_state(svc, id, "RUNNING");
  REQUIRE(svc.get(id).at("state") == "RUNNING");

  svc.cancel(id);
  CHECK(svc.get(id).at("state") == "CANCELED");

  // Second cancel conflicts.
  CHECK_THROWS_AS(svc.cancel(id), CancelConflict);

  // The job was canceled too, and the relay goes away.
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(10);
  while (!svc.idle() && std::chrono::steady_clock::now() < deadline) {
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  CHECK(svc.idle());
  svc.stop();
  fs::remove_all(dir);
}

TEST_CASE("service: cancel during CREATED works without a job") {
  const auto dir = temp_dir("cancel_created");
  TransferServiceConfig cfg;
  cfg.work_dir = dir;
  cfg.streamer_path = "/bin/true";
  TransferService svc(cfg);
  svc.start();

  // No relay binding contention; cancel quickly after create.
  const std::string id = svc.create(simple_request());
  try {
    svc.cancel(id);
  } catch (const CancelConflict&) {
    // Raced past CREATED into a terminal/draining state; acceptable here.
  }
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(10);
  while (!svc.idle() && std::chrono::steady_clock::now() < deadline) {
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  CHECK(svc.idle());
  svc.stop();
  fs::remove_all(dir);
}

TEST_CASE("service: duplicate and tampered callbacks") {
  const auto dir = temp_dir("cb");
  const auto streamer = write_fake_streamer(dir, "sleep 60");
  TransferServiceConfig cfg;
  cfg.work_dir = dir;
  cfg.streamer_path = streamer.string();
  TransferService svc(cfg);
  svc.start();

  const std::string id = svc.create(simple_request());
  wait_state(svc, id, "RUNNING");
  const std::string jobid = svc.get(id).at("jobid");

  // Tampered body: the signature no longer matches.
  const std::string body =
      json({{"jobid", jobid}, {"jobndx", 0}, {"state", "completed"}, {"info", 0}}).dump();
  CHECK_THROWS_AS(svc.handle_callback(body, "00deadbeef"), BadSignature);
  CHECK(svc.get(id).at("state") == "RUNNING");

  // Unknown job.
  const std::string other =
      json({{"jobid", "9.9"}, {"jobndx", 0}, {"state", "completed"}, {"info", 0}}).dump();
  CHECK_THROWS_AS(svc.handle_callback(other, "00"), UnknownTransfer);

  svc.cancel(id);
  svc.stop();
  fs::remove_all(dir);
}

TEST_CASE("service: REST surface returns 404/409/422 and JSON records") {
  const auto dir = temp_dir("rest");
  const auto streamer = write_fake_streamer(dir, "exit 0");
  TransferServiceConfig cfg;
  cfg.work_dir = dir;
  cfg.streamer_path = streamer.string();
  cfg.drain_timeout = std::chrono::milliseconds(1000);
  TransferService svc(cfg);
  svc.start();

  httplib::Client cli("127.0.0.1", svc.api_port());
  auto bad = cli.Post("/transfers", json({{"worker_count", 0}}).dump(), "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 422);

  auto res = cli.Post("/transfers", simple_request().dump(), "application/json");
  REQUIRE(res);
  REQUIRE(res->status == 200);
  const std::string id = json::parse(res->body).at("id");

  auto missing = cli.Get("/transfers/0.0");
  CHECK(missing->status == 404);

  wait_state(svc, id, "COMPLETED");
  auto rec = cli.Get(("/transfers/" + id).c_str());
  REQUIRE(rec->status == 200);
  CHECK(json::parse(rec->body).at("state") == "COMPLETED");

  auto conflict = cli.Delete(("/transfers/" + id).c_str());
  CHECK(conflict->status == 409);

  svc.stop();
  fs::remove_all(dir);
}
