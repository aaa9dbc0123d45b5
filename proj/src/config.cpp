#include "crl/config.hpp"

#include <filesystem>

#include "crl/checkpoint.hpp"
#include "crl/json_util.hpp"

namespace crl {

namespace {

nlohmann::json optional_json(const std::optional<std::string>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::optional<std::string> optional_path(const nlohmann::json& j, const char* key, const std::string& ctx) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return read_required<std::string>(j, key, ctx);
}

std::string resolve(const std::string& path, const std::filesystem::path& base) {
  const std::filesystem::path p(path);
  if (p.is_absolute() || base.empty()) return path;
  return (base / p).lexically_normal().string();
}

}  // namespace

void RunConfig::validate() const {
  train.validate();
  if (num_classes && *num_classes <= 0) throw Error(ErrorCategory::config, "run config: num_classes must be positive");
  if (out_dir.empty()) throw Error(ErrorCategory::config, "run config: out_dir must not be empty");
}

nlohmann::json to_json(const RunConfig& c) {
  return {{"train", to_json(c.train)},
          {"data",
           {{"train", c.train_data},
            {"validation", optional_json(c.validation_data)},
            {"test", optional_json(c.test_data)},
            {"num_classes", c.num_classes ? nlohmann::json(*c.num_classes) : nlohmann::json(nullptr)}}},
          {"out_dir", c.out_dir}};
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  const std::string ctx = "run config";
  reject_unknown_keys(j, {"train", "data", "out_dir"}, ctx);
  RunConfig c;
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
  if (j.contains("data")) {
    const auto& d = j.at("data");
    const std::string dctx = ctx + ".data";
    reject_unknown_keys(d, {"train", "validation", "test", "num_classes"}, dctx);
    read_optional(d, "train", c.train_data, dctx);
    c.validation_data = optional_path(d, "validation", dctx);
    c.test_data = optional_path(d, "test", dctx);
    if (d.contains("num_classes") && !d.at("num_classes").is_null()) {
      c.num_classes = read_required<int>(d, "num_classes", dctx);
    }
  }
  read_optional(j, "out_dir", c.out_dir, ctx);
  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  RunConfig c = run_config_from_json(read_json_file(path));
  const auto base = std::filesystem::path(path).parent_path();
  if (!c.train_data.empty()) c.train_data = resolve(c.train_data, base);
  if (c.validation_data) c.validation_data = resolve(*c.validation_data, base);
  if (c.test_data) c.test_data = resolve(*c.test_data, base);
  c.out_dir = resolve(c.out_dir, base);
  return c;
}

}  // namespace crl
