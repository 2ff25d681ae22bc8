#include "latentadv/checkpoint.hpp"

#include <fstream>

#include "json.hpp"

#include "latentadv/errors.hpp"

namespace latentadv {

namespace {

using nlohmann::json;

constexpr int kFormatVersion = 1;

json tensor_json(const Tensor& t) { return {{"shape", t.shape()}, {"data", t.values()}}; }

Tensor tensor_from(const json& j) {
  return Tensor(j.at("shape").get<Tensor::Shape>(), j.at("data").get<std::vector<double>>());
}

json stack_json(const LayerStack& stack) {
  json layers = json::array();
  for (const auto& layer : stack.layers())
    layers.push_back({{"activation", to_string(layer.activation)},
                      {"weight", tensor_json(layer.weight)},
                      {"bias", tensor_json(layer.bias)}});
  return layers;
}

LayerStack stack_from(const json& j) {
  std::vector<DenseLayer> layers;
  for (const auto& l : j)
    layers.push_back(DenseLayer{tensor_from(l.at("weight")), tensor_from(l.at("bias")),
                                activation_from_string(l.at("activation").get<std::string>())});
  return LayerStack(std::move(layers));
}

}  // namespace

void save_checkpoint(const ModelBundle& bundle, const std::filesystem::path& path) {
  json j;
  j["format"] = "latentadv-checkpoint";
  j["version"] = kFormatVersion;
  j["seed"] = bundle.seed;
  j["split_index"] = bundle.split_index;
  j["data_provenance"] = bundle.data_provenance;
  j["encoder"] = stack_json(bundle.encoder.stack());
  j["decoder"] = stack_json(bundle.decoder);
  j["latent_mean"] = tensor_json(bundle.latent_mean);
  j["latent_std"] = tensor_json(bundle.latent_std);
  j["classifier"] = stack_json(bundle.classifier.stack());
  if (bundle.robust_classifier) j["robust_classifier"] = stack_json(bundle.robust_classifier->stack());
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::io, "cannot write checkpoint " + path.string());
  out << j.dump() << '\n';
  require(static_cast<bool>(out), ErrorCode::io, "failed writing checkpoint " + path.string());
}

ModelBundle load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::io, "cannot open checkpoint " + path.string());
  try {
    const json j = json::parse(in);
    require(j.value("format", "") == "latentadv-checkpoint", ErrorCode::bad_magic,
            path.string() + " is not a latentadv checkpoint");
    require(j.at("version").get<int>() == kFormatVersion, ErrorCode::invalid_argument,
            "unsupported checkpoint version in " + path.string());
    ModelBundle b;
    b.seed = j.at("seed").get<std::uint64_t>();
    b.split_index = j.value("split_index", std::size_t{2});
    b.data_provenance = j.value("data_provenance", "");
    b.encoder = Encoder(stack_from(j.at("encoder")));
    b.decoder = stack_from(j.at("decoder"));
    b.latent_mean = tensor_from(j.at("latent_mean"));
    b.latent_std = tensor_from(j.at("latent_std"));
    b.classifier = Classifier(stack_from(j.at("classifier")));
    if (j.contains("robust_classifier")) b.robust_classifier = Classifier(stack_from(j.at("robust_classifier")));
    return b;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::invalid_argument, "malformed checkpoint " + path.string() + ": " + e.what());
  }
}

}  // namespace latentadv
