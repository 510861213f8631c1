#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "streamkit/wire/container.hpp"

namespace streamkit::wire {

// Typed parameter blocks for every registered pipeline component. The
// validator produces these; the pipeline engine consumes them.

struct SyntheticEventSourceParams {
  std::uint64_t seed = 1;
  std::uint64_t max_events = 0;  // 0 = unbounded
  double rate_limit = 0.0;       // events/second, 0 = unlimited
};

struct FileReplayEventSourceParams {
  std::string path;  // one .lsc1 file or a directory of them
};

struct BatchProcessingPipelineParams {
  std::uint64_t batch_size = 1;
};

struct Lsc1SerializerParams {
  Compression compression = Compression::none;
  int compression_level = 6;
  std::map<std::string, std::string> fields;  // data-source name -> container path
};

struct BinaryFileWritingParams {
  std::string directory;
  std::string filename_pattern = "batch_{seq:05}.lsc1";
  std::string run_id = "run";
};

struct BinaryDataStreamingParams {
  std::string endpoint;  // relay ingest host:port
  int reconnect_base_ms = 100;
  int reconnect_cap_ms = 10000;
  int max_attempts = 0;  // 0 = unlimited
  bool drop_when_disconnected = false;
};

struct SyntheticTimestampParams {};

struct SyntheticAreaDetectorParams {
  std::vector<std::uint64_t> shape;  // per-event array shape
  Dtype dtype = Dtype::f32;
  bool calibration = false;
  std::uint64_t seed = 0;
  double gain = 1.0;
  double offset = 0.0;
};

struct FileReplayParams {
  std::string path;   // .lsc1 file or directory
  std::string field;  // container path to pull rows from
};

using EventSourceParams =
    std::variant<SyntheticEventSourceParams, FileReplayEventSourceParams>;
using DataHandlerParams = std::variant<BinaryFileWritingParams, BinaryDataStreamingParams>;
using DataSourceParams =
    std::variant<SyntheticTimestampParams, SyntheticAreaDetectorParams, FileReplayParams>;

struct DataSourceSpec {
  std::string name;
  std::string type;
  DataSourceParams params;
};

struct DataHandlerSpec {
  std::string name;
  DataHandlerParams params;
};

struct PipelineConfig {
  std::string event_source;
  std::string processing_pipeline;
  std::string data_serializer;
  std::vector<std::string> data_handlers;

  EventSourceParams source_params;
  BatchProcessingPipelineParams batch;
  Lsc1SerializerParams serializer;
  std::vector<DataHandlerSpec> handlers;     // parallel to data_handlers
  std::vector<DataSourceSpec> data_sources;  // sorted by name
};

struct ConfigError {
  std::string path;  // slash path into the document, e.g. "/lclstreamer/event_source"
  std::string message;
};

struct ConfigResult {
  std::optional<PipelineConfig> config;
  std::vector<ConfigError> errors;
  bool ok() const { return config.has_value(); }
  std::string error_summary() const;
};

struct ComponentRegistry {
  std::vector<std::string> event_sources;
  std::vector<std::string> processing_pipelines;
  std::vector<std::string> data_serializers;
  std::vector<std::string> data_handlers;
  std::vector<std::string> data_source_types;
};

const ComponentRegistry& default_registry();

// Parses a YAML or JSON document into a json tree. Throws Error when the
// text is neither.
nlohmann::json parse_config_document(std::string_view text);

// Full schema validation. Errors accumulate; config is set only when the
// document is completely clean.
ConfigResult validate_config(std::string_view text);
ConfigResult validate_config_json(const nlohmann::json& doc);

}  // namespace streamkit::wire
