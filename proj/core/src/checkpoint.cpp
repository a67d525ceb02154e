#include "gaf/checkpoint.hpp"

#include <nlohmann/json.hpp>

#include "gaf/errors.hpp"
#include "gaf/io.hpp"

namespace gaf {

using ojson = nlohmann::ordered_json;

std::string checkpoint_to_json(const GafModels& models) {
  const ModelConfig& c = models.config;
  ojson j;
  j["version"] = kCheckpointVersion;
  j["config"] = {{"input_dim", c.input_dim},
                 {"num_classes", c.num_classes},
                 {"reduced_dim", c.reduced_dim},
                 {"hidden_dim", c.hidden_dim},
                 {"latent_dim", c.latent_dim},
                 {"attention_hidden", c.attention_hidden},
                 {"attention_kernel", c.attention_kernel},
                 {"offset_scale", c.offset_scale}};
  ojson params = ojson::object();
  for (const auto& p : models.parameters()) {
    auto values = p.tensor.data();
    params[p.path] = {{"shape", p.tensor.shape()},
                      {"values", std::vector<double>(values.begin(), values.end())}};
  }
  j["params"] = std::move(params);
  return j.dump();
}

GafModels checkpoint_from_json(const std::string& text) {
  ojson j;
  try {
    j = ojson::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint: ") + e.what(), 1);
  }
  if (!j.is_object() || !j.contains("version")) throw ContractError("checkpoint has no version");
  const auto version = j["version"].get<std::string>();
  if (version != kCheckpointVersion) {
    throw VersionError("checkpoint version '" + version + "', expected '" + kCheckpointVersion +
                       "'");
  }
  try {
    const auto& jc = j.at("config");
    ModelConfig c;
    c.input_dim = jc.at("input_dim").get<std::size_t>();
    c.num_classes = jc.at("num_classes").get<int>();
    c.reduced_dim = jc.at("reduced_dim").get<std::size_t>();
    c.hidden_dim = jc.at("hidden_dim").get<std::size_t>();
    c.latent_dim = jc.at("latent_dim").get<std::size_t>();
    c.attention_hidden = jc.at("attention_hidden").get<std::size_t>();
    c.attention_kernel = jc.at("attention_kernel").get<std::size_t>();
    c.offset_scale = jc.at("offset_scale").get<double>();
    GafModels models = GafModels::create(c, 0);
    const auto& jp = j.at("params");
    ParamList params = models.parameters();
    if (jp.size() != params.size()) {
      throw ContractError("checkpoint has " + std::to_string(jp.size()) + " parameters, expected " +
                          std::to_string(params.size()));
    }
    for (auto& p : params) {
      if (!jp.contains(p.path)) throw ContractError("checkpoint is missing " + p.path);
      const auto& entry = jp[p.path];
      const auto shape = entry.at("shape").get<Shape>();
      if (shape != p.tensor.shape()) {
        throw ContractError(p.path + ": shape " + to_string(shape) + " does not match " +
                            to_string(p.tensor.shape()));
      }
      const auto values = entry.at("values").get<std::vector<double>>();
      auto dst = p.tensor.mutable_data();
      if (values.size() != dst.size()) throw ContractError(p.path + ": wrong value count");
      std::copy(values.begin(), values.end(), dst.begin());
    }
    return models;
  } catch (const nlohmann::json::exception& e) {
    throw ContractError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const GafModels& models) {
  atomic_write(path, checkpoint_to_json(models));
}

GafModels load_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_json(read_file(path));
}

}  // namespace gaf
