#include "streamkit/wire/config.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <charconv>
#include <regex>
#include <sstream>

namespace streamkit::wire {

using nlohmann::json;

namespace {

json yaml_scalar_to_json(const YAML::Node& node) {
  const std::string& s = node.Scalar();
  // Quoted scalars carry the "!" non-specific tag: always strings.
  if (node.Tag() == "!") return s;
  if (s == "null" || s == "~" || s.empty()) return nullptr;
  if (s == "true") return true;
  if (s == "false") return false;

  static const std::regex int_re(R"(^[-+]?[0-9]+$)");
  static const std::regex float_re(R"(^[-+]?([0-9]+\.[0-9]*|\.[0-9]+|[0-9]+)([eE][-+]?[0-9]+)?$)");
  if (std::regex_match(s, int_re)) {
    if (s[0] == '-') {
      std::int64_t v{};
      auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec == std::errc() && p == s.data() + s.size()) return v;
    } else {
      std::uint64_t v{};
      const char* begin = s.data() + (s[0] == '+' ? 1 : 0);
      auto [p, ec] = std::from_chars(begin, s.data() + s.size(), v);
      if (ec == std::errc() && p == s.data() + s.size()) return v;
    }
    return s;  // out of range for 64-bit: keep the text
  }
  if ((s.find('.') != std::string::npos || s.find('e') != std::string::npos ||
       s.find('E') != std::string::npos) &&
      std::regex_match(s, float_re)) {
    try {
      return std::stod(s);
    } catch (...) {
      return s;
    }
  }
  return s;
}

json yaml_to_json(const YAML::Node& node) {
  switch (node.Type()) {
    case YAML::NodeType::Null:
      return nullptr;
    case YAML::NodeType::Scalar:
      return yaml_scalar_to_json(node);
    case YAML::NodeType::Sequence: {
      json arr = json::array();
      for (const auto& item : node) arr.push_back(yaml_to_json(item));
      return arr;
    }
    case YAML::NodeType::Map: {
      json obj = json::object();
      for (const auto& kv : node) obj[kv.first.as<std::string>()] = yaml_to_json(kv.second);
      return obj;
    }
    default:
      return nullptr;
  }
}

std::string join(const std::vector<std::string>& names) {
  std::string out;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (i) out += ", ";
    out += names[i];
  }
  return out;
}

bool contains(const std::vector<std::string>& names, const std::string& name) {
  return std::find(names.begin(), names.end(), name) != names.end();
}

// Collects errors with document paths while the walk descends.
class Check {
 public:
  std::vector<ConfigError> errors;

  void fail(const std::string& path, const std::string& message) {
    errors.push_back({path, message});
  }

  const json* object(const json& doc, const std::string& path, const std::string& key,
                     bool required) {
    if (!doc.contains(key)) {
      if (required) fail(path + "/" + key, "missing required section");
      return nullptr;
    }
    const json& v = doc.at(key);
    if (!v.is_object()) {
      fail(path + "/" + key, "expected a mapping");
      return nullptr;
    }
    return &v;
  }

  std::optional<std::string> string(const json& obj, const std::string& path,
                                    const std::string& key, bool required) {
    if (!obj.contains(key)) {
      if (required) fail(path + "/" + key, "missing required field");
      return std::nullopt;
    }
    if (!obj.at(key).is_string()) {
      fail(path + "/" + key, "expected a string");
      return std::nullopt;
    }
    return obj.at(key).get<std::string>();
  }

  std::optional<std::uint64_t> uint(const json& obj, const std::string& path,
                                    const std::string& key) {
    if (!obj.contains(key)) return std::nullopt;
    const json& v = obj.at(key);
    const bool ok = v.is_number_unsigned() ||
                    (v.is_number_integer() && v.get<std::int64_t>() >= 0);
    if (!ok) {
      fail(path + "/" + key, "expected a non-negative integer");
      return std::nullopt;
    }
    return v.get<std::uint64_t>();
  }

  std::optional<double> number(const json& obj, const std::string& path,
                               const std::string& key) {
    if (!obj.contains(key)) return std::nullopt;
    const json& v = obj.at(key);
    if (!v.is_number()) {
      fail(path + "/" + key, "expected a number");
      return std::nullopt;
    }
    return v.get<double>();
  }

  std::optional<bool> boolean(const json& obj, const std::string& path,
                              const std::string& key) {
    if (!obj.contains(key)) return std::nullopt;
    const json& v = obj.at(key);
    if (!v.is_boolean()) {
      fail(path + "/" + key, "expected a boolean");
      return std::nullopt;
    }
    return v.get<bool>();
  }

  void only_keys(const json& obj, const std::string& path,
                 std::initializer_list<std::string_view> allowed) {
    for (const auto& [key, value] : obj.items()) {
      (void)value;
      bool ok = false;
      for (auto a : allowed) {
        if (key == a) {
          ok = true;
          break;
        }
      }
      if (!ok) fail(path + "/" + key, "unknown field");
    }
  }
};

bool valid_endpoint(const std::string& ep) {
  const auto colon = ep.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 >= ep.size()) return false;
  int port = 0;
  auto [p, ec] = std::from_chars(ep.data() + colon + 1, ep.data() + ep.size(), port);
  return ec == std::errc() && p == ep.data() + ep.size() && port > 0 && port <= 65535;
}

bool valid_container_path(const std::string& p) {
  return !p.empty() && p[0] == '/' && p.find('\0') == std::string::npos;
}

SyntheticEventSourceParams parse_synthetic_source(Check& c, const json& obj,
                                                  const std::string& path) {
  SyntheticEventSourceParams p;
  c.only_keys(obj, path, {"seed", "max_events", "rate_limit"});
  if (auto v = c.uint(obj, path, "seed")) p.seed = *v;
  if (auto v = c.uint(obj, path, "max_events")) p.max_events = *v;
  if (auto v = c.number(obj, path, "rate_limit")) {
    if (*v < 0) c.fail(path + "/rate_limit", "must be >= 0");
    p.rate_limit = *v;
  }
  return p;
}

FileReplayEventSourceParams parse_replay_source(Check& c, const json& obj,
                                                const std::string& path) {
  FileReplayEventSourceParams p;
  c.only_keys(obj, path, {"path"});
  if (auto v = c.string(obj, path, "path", true)) {
    if (v->empty()) c.fail(path + "/path", "must not be empty");
    p.path = *v;
  }
  return p;
}

Lsc1SerializerParams parse_serializer(Check& c, const json& obj, const std::string& path,
                                      const std::vector<std::string>& source_names) {
  Lsc1SerializerParams p;
  c.only_keys(obj, path, {"compression", "compression_level", "fields"});
  if (auto v = c.string(obj, path, "compression", false)) {
    if (*v == "none") {
      p.compression = Compression::none;
    } else if (*v == "deflate") {
      p.compression = Compression::deflate;
    } else {
      c.fail(path + "/compression", "unknown compression \"" + *v + "\" (none, deflate)");
    }
  }
  if (auto v = c.uint(obj, path, "compression_level")) {
    if (*v < 1 || *v > 9) c.fail(path + "/compression_level", "must be in 1..9");
    p.compression_level = static_cast<int>(*v);
  }
  if (const json* fields = c.object(obj, path, "fields", true)) {
    std::map<std::string, std::string> seen_paths;
    for (const auto& [name, value] : fields->items()) {
      const std::string fpath = path + "/fields/" + name;
      if (!value.is_string()) {
        c.fail(fpath, "expected a container path string");
        continue;
      }
      const std::string target = value.get<std::string>();
      if (!valid_container_path(target)) {
        c.fail(fpath, "container path must begin with '/'");
        continue;
      }
      if (!contains(source_names, name)) {
        c.fail(fpath, "references data source \"" + name + "\" which is not in data_sources");
      }
      auto [it, inserted] = seen_paths.emplace(target, name);
      if (!inserted) {
        c.fail(fpath, "container path \"" + target + "\" already used by field \"" +
                          it->second + "\"");
      }
      p.fields[name] = target;
    }
  }
  return p;
}

BinaryFileWritingParams parse_file_handler(Check& c, const json& obj, const std::string& path) {
  BinaryFileWritingParams p;
  c.only_keys(obj, path, {"directory", "filename_pattern", "run_id"});
  if (auto v = c.string(obj, path, "directory", true)) {
    if (v->empty()) c.fail(path + "/directory", "must not be empty");
    p.directory = *v;
  }
  if (auto v = c.string(obj, path, "filename_pattern", false)) {
    if (v->find("{seq") == std::string::npos) {
      c.fail(path + "/filename_pattern", "must contain a {seq} substitution");
    }
    p.filename_pattern = *v;
  }
  if (auto v = c.string(obj, path, "run_id", false)) p.run_id = *v;
  return p;
}

BinaryDataStreamingParams parse_stream_handler(Check& c, const json& obj,
                                               const std::string& path) {
  BinaryDataStreamingParams p;
  c.only_keys(obj, path,
              {"endpoint", "reconnect_base_ms", "reconnect_cap_ms", "max_attempts",
               "on_disconnect"});
  if (auto v = c.string(obj, path, "endpoint", true)) {
    if (!valid_endpoint(*v)) c.fail(path + "/endpoint", "expected host:port");
    p.endpoint = *v;
  }
  if (auto v = c.uint(obj, path, "reconnect_base_ms")) {
    if (*v < 1) c.fail(path + "/reconnect_base_ms", "must be >= 1");
    p.reconnect_base_ms = static_cast<int>(*v);
  }
  if (auto v = c.uint(obj, path, "reconnect_cap_ms")) p.reconnect_cap_ms = static_cast<int>(*v);
  if (auto v = c.uint(obj, path, "max_attempts")) p.max_attempts = static_cast<int>(*v);
  if (auto v = c.string(obj, path, "on_disconnect", false)) {
    if (*v == "block") {
      p.drop_when_disconnected = false;
    } else if (*v == "drop") {
      p.drop_when_disconnected = true;
    } else {
      c.fail(path + "/on_disconnect", "expected \"block\" or \"drop\"");
    }
  }
  return p;
}

SyntheticAreaDetectorParams parse_area_detector(Check& c, const json& obj,
                                                const std::string& path) {
  SyntheticAreaDetectorParams p;
  c.only_keys(obj, path, {"type", "shape", "dtype", "calibration", "seed", "gain", "offset"});
  if (!obj.contains("shape")) {
    c.fail(path + "/shape", "missing required field");
  } else if (!obj.at("shape").is_array() || obj.at("shape").empty()) {
    c.fail(path + "/shape", "expected a non-empty array of dims");
  } else {
    for (const auto& d : obj.at("shape")) {
      const bool is_uint = d.is_number_unsigned() ||
                           (d.is_number_integer() && d.get<std::int64_t>() >= 0);
      if (!is_uint || d.get<std::uint64_t>() < 1) {
        c.fail(path + "/shape", "dims must be integers >= 1");
        p.shape.clear();
        break;
      }
      p.shape.push_back(d.get<std::uint64_t>());
    }
  }
  if (auto v = c.string(obj, path, "dtype", false)) {
    if (auto d = dtype_from_name(*v)) {
      p.dtype = *d;
    } else {
      c.fail(path + "/dtype", "unknown dtype \"" + *v + "\"");
    }
  }
  if (auto v = c.boolean(obj, path, "calibration")) p.calibration = *v;
  if (auto v = c.uint(obj, path, "seed")) p.seed = *v;
  if (auto v = c.number(obj, path, "gain")) p.gain = *v;
  if (auto v = c.number(obj, path, "offset")) p.offset = *v;
  return p;
}

FileReplayParams parse_file_replay(Check& c, const json& obj, const std::string& path) {
  FileReplayParams p;
  c.only_keys(obj, path, {"type", "path", "field"});
  if (auto v = c.string(obj, path, "path", true)) p.path = *v;
  if (auto v = c.string(obj, path, "field", true)) {
    if (!valid_container_path(*v)) c.fail(path + "/field", "container path must begin with '/'");
    p.field = *v;
  }
  return p;
}

}  // namespace

const ComponentRegistry& default_registry() {
  static const ComponentRegistry registry{
      {"SyntheticEventSource", "FileReplayEventSource"},
      {"BatchProcessingPipeline"},
      {"Lsc1Serializer"},
      {"BinaryFileWritingDataHandler", "BinaryDataStreamingDataHandler"},
      {"SyntheticTimestamp", "SyntheticAreaDetector", "FileReplay"},
  };
  return registry;
}

std::string ConfigResult::error_summary() const {
  std::ostringstream out;
  for (const auto& e : errors) out << e.path << ": " << e.message << "\n";
  return out.str();
}

nlohmann::json parse_config_document(std::string_view text) {
  std::string json_err;
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    json_err = e.what();
  }
  try {
    YAML::Node node = YAML::Load(std::string(text));
    return yaml_to_json(node);
  } catch (const YAML::Exception& e) {
    throw Error(std::string("document is neither valid JSON nor YAML: ") + e.what());
  }
}

ConfigResult validate_config(std::string_view text) {
  try {
    return validate_config_json(parse_config_document(text));
  } catch (const Error& e) {
    return {std::nullopt, {{"/", e.what()}}};
  }
}

ConfigResult validate_config_json(const json& doc) {
  const ComponentRegistry& reg = default_registry();
  Check c;
  PipelineConfig cfg;

  if (!doc.is_object()) {
    return {std::nullopt, {{"/", "top level must be a mapping"}}};
  }
  c.only_keys(doc, "",
              {"lclstreamer", "event_source", "processing_pipeline", "data_serializer",
               "data_handlers", "data_sources"});

  // --- data_sources first: serializer fields reference them ---
  std::vector<std::string> source_names;
  if (const json* sources = c.object(doc, "", "data_sources", true)) {
    for (const auto& [name, value] : sources->items()) {
      const std::string spath = "/data_sources/" + name;
      if (!value.is_object()) {
        c.fail(spath, "expected a mapping with a \"type\" entry");
        continue;
      }
      source_names.push_back(name);
      auto type = c.string(value, spath, "type", true);
      if (!type) continue;
      DataSourceSpec spec;
      spec.name = name;
      spec.type = *type;
      if (*type == "SyntheticTimestamp") {
        c.only_keys(value, spath, {"type"});
        spec.params = SyntheticTimestampParams{};
      } else if (*type == "SyntheticAreaDetector") {
        spec.params = parse_area_detector(c, value, spath);
      } else if (*type == "FileReplay") {
        spec.params = parse_file_replay(c, value, spath);
      } else {
        c.fail(spath + "/type", "unknown component \"" + *type + "\" (registered: " +
                                    join(reg.data_source_types) + ")");
        continue;
      }
      cfg.data_sources.push_back(std::move(spec));
    }
  }
  std::sort(cfg.data_sources.begin(), cfg.data_sources.end(),
            [](const auto& a, const auto& b) { return a.name < b.name; });

  // --- component selection ---
  const json* sel = c.object(doc, "", "lclstreamer", true);
  if (sel) {
    c.only_keys(*sel, "/lclstreamer",
                {"event_source", "processing_pipeline", "data_serializer", "data_handlers"});

    if (auto v = c.string(*sel, "/lclstreamer", "event_source", true)) {
      cfg.event_source = *v;
      if (!contains(reg.event_sources, *v)) {
        c.fail("/lclstreamer/event_source", "unknown component \"" + *v + "\" (registered: " +
                                                join(reg.event_sources) + ")");
      }
    }
    if (auto v = c.string(*sel, "/lclstreamer", "processing_pipeline", true)) {
      cfg.processing_pipeline = *v;
      if (!contains(reg.processing_pipelines, *v)) {
        c.fail("/lclstreamer/processing_pipeline",
               "unknown component \"" + *v + "\" (registered: " +
                   join(reg.processing_pipelines) + ")");
      }
    }
    if (auto v = c.string(*sel, "/lclstreamer", "data_serializer", true)) {
      cfg.data_serializer = *v;
      if (!contains(reg.data_serializers, *v)) {
        c.fail("/lclstreamer/data_serializer",
               "unknown component \"" + *v + "\" (registered: " +
                   join(reg.data_serializers) + ")");
      }
    }
    if (!sel->contains("data_handlers")) {
      c.fail("/lclstreamer/data_handlers", "missing required field");
    } else if (!sel->at("data_handlers").is_array() || sel->at("data_handlers").empty()) {
      c.fail("/lclstreamer/data_handlers", "at least one data handler is required");
    } else {
      for (const auto& h : sel->at("data_handlers")) {
        if (!h.is_string()) {
          c.fail("/lclstreamer/data_handlers", "handler names must be strings");
          continue;
        }
        const std::string name = h.get<std::string>();
        if (!contains(reg.data_handlers, name)) {
          c.fail("/lclstreamer/data_handlers", "unknown component \"" + name +
                                                   "\" (registered: " +
                                                   join(reg.data_handlers) + ")");
          continue;
        }
        if (contains(cfg.data_handlers, name)) {
          c.fail("/lclstreamer/data_handlers", "duplicate handler \"" + name + "\"");
          continue;
        }
        cfg.data_handlers.push_back(name);
      }
    }
  }

  auto params_for = [&](const std::string& section, const std::string& component) -> json {
    if (!doc.contains(section)) return json::object();
    const json& s = doc.at(section);
    if (!s.is_object()) {
      c.fail("/" + section, "expected a mapping keyed by component name");
      return json::object();
    }
    if (!s.contains(component)) return json::object();
    if (!s.at(component).is_object()) {
      c.fail("/" + section + "/" + component, "expected a mapping");
      return json::object();
    }
    return s.at(component);
  };

  // --- per-component parameters (only for the selected, known components) ---
  if (cfg.event_source == "SyntheticEventSource") {
    cfg.source_params = parse_synthetic_source(
        c, params_for("event_source", cfg.event_source), "/event_source/" + cfg.event_source);
  } else if (cfg.event_source == "FileReplayEventSource") {
    cfg.source_params = parse_replay_source(
        c, params_for("event_source", cfg.event_source), "/event_source/" + cfg.event_source);
  }

  if (cfg.processing_pipeline == "BatchProcessingPipeline") {
    const json obj = params_for("processing_pipeline", cfg.processing_pipeline);
    const std::string ppath = "/processing_pipeline/" + cfg.processing_pipeline;
    c.only_keys(obj, ppath, {"batch_size"});
    if (auto v = c.uint(obj, ppath, "batch_size")) {
      if (*v < 1) {
        c.fail(ppath + "/batch_size", "batch size must be >= 1");
      } else {
        cfg.batch.batch_size = *v;
      }
    }
  }

  if (cfg.data_serializer == "Lsc1Serializer") {
    cfg.serializer = parse_serializer(c, params_for("data_serializer", cfg.data_serializer),
                                      "/data_serializer/" + cfg.data_serializer, source_names);
  }

  for (const std::string& name : cfg.data_handlers) {
    const json obj = params_for("data_handlers", name);
    const std::string hpath = "/data_handlers/" + name;
    if (name == "BinaryFileWritingDataHandler") {
      cfg.handlers.push_back({name, parse_file_handler(c, obj, hpath)});
    } else if (name == "BinaryDataStreamingDataHandler") {
      cfg.handlers.push_back({name, parse_stream_handler(c, obj, hpath)});
    }
  }

  if (!c.errors.empty()) return {std::nullopt, std::move(c.errors)};
  return {std::move(cfg), {}};
}

}  // namespace streamkit::wire
