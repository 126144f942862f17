#pragma once

#include <fstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "mda/config.hpp"
#include "mda/network.hpp"

namespace mda {

namespace detail {

inline json tensor_to_json(const Tensor& t) { return {{"shape", t.shape()}, {"values", t.values()}}; }

inline void tensor_from_json(const json& j, Tensor& into, const std::string& what) {
    const auto shape = j.at("shape").get<Tensor::Shape>();
    if (shape != into.shape()) {
        throw std::runtime_error("checkpoint: " + what + " has shape " + Tensor::describe(shape) + ", model expects " +
                                 Tensor::describe(into.shape()));
    }
    const auto values = j.at("values").get<std::vector<double>>();
    if (values.size() != into.size()) throw std::runtime_error("checkpoint: " + what + " value count mismatch");
    std::copy(values.begin(), values.end(), into.values().begin());
}

}  // namespace detail

/// Model configuration, every parameter (with its momentum buffer) and the running statistics.
inline json checkpoint_to_json(Model& model) {
    json params = json::object();
    for (const auto& p : model.params()) {
        params[p.name] = {{"value", detail::tensor_to_json(p.param->value)},
                          {"momentum", detail::tensor_to_json(p.param->momentum)}};
    }
    json running = json::array();
    for (const MdaLayer* l : model.mda_layers()) {
        running.push_back({{"mean", detail::tensor_to_json(l->running.mean)},
                           {"var", detail::tensor_to_json(l->running.var)},
                           {"updates", l->running.updates}});
    }
    return {{"model", to_json(model.config())}, {"params", params}, {"running", running}};
}

inline Model checkpoint_from_json(const json& j) {
    Model m(parse_model_config(j.at("model")));
    const json& params = j.at("params");
    for (auto& p : m.params()) {
        if (!params.contains(p.name)) throw std::runtime_error("checkpoint: missing parameter " + p.name);
        detail::tensor_from_json(params.at(p.name).at("value"), p.param->value, p.name);
        detail::tensor_from_json(params.at(p.name).at("momentum"), p.param->momentum, p.name + ".momentum");
    }
    const json& running = j.at("running");
    auto layers = m.mda_layers();
    if (running.size() != layers.size()) throw std::runtime_error("checkpoint: running statistics count mismatch");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        detail::tensor_from_json(running[i].at("mean"), layers[i]->running.mean, "running.mean");
        detail::tensor_from_json(running[i].at("var"), layers[i]->running.var, "running.var");
        auto updates = running[i].at("updates").get<std::vector<std::size_t>>();
        if (updates.size() != layers[i]->running.updates.size()) {
            throw std::runtime_error("checkpoint: running update counts mismatch");
        }
        layers[i]->running.updates = std::move(updates);
    }
    return m;
}

inline void save_checkpoint(const std::string& path, Model& model) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path);
    out << checkpoint_to_json(model).dump(1) << '\n';
}

inline Model load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read checkpoint " + path);
    return checkpoint_from_json(json::parse(in));
}

}  // namespace mda
