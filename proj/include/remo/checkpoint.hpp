#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "remo/errors.hpp"
#include "remo/params.hpp"

namespace remo {

// Checkpoint file: one JSON document, parameter name -> {shape, data}.
template <class T>
void save_checkpoint(const ParamStoreT<T>& store, const std::string& path) {
    nlohmann::ordered_json doc;
    for (const auto& [name, e] : store.entries()) {
        doc[name] = {{"shape", e.value.shape}, {"data", e.value.data}};
    }
    std::ofstream f(path);
    if (!f) throw DataError("cannot write checkpoint '" + path + "'");
    f << doc.dump();
    f << "\n";
}

// Rejects unknown names, missing names and shape mismatches: a silently
// partial load is the failure mode this guards against.
template <class T>
void load_checkpoint(ParamStoreT<T>& store, const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot read checkpoint '" + path + "'");
    nlohmann::json doc;
    try {
        f >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint '" + path + "': " + e.what());
    }
    if (!doc.is_object()) throw DataError("checkpoint '" + path + "': not a JSON object");
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        if (!store.has(it.key()))
            throw DataError("checkpoint '" + path + "': unknown parameter '" + it.key() + "'");
        auto& e = store.at(it.key());
        std::vector<int> shape = it.value().at("shape").get<std::vector<int>>();
        if (shape != e.value.shape)
            throw DataError("checkpoint '" + path + "': parameter '" + it.key() + "' shape " +
                            TensorT<T>::shape_str(shape) + " does not match " + e.value.shape_str());
        std::vector<T> data = it.value().at("data").get<std::vector<T>>();
        if (data.size() != e.value.data.size())
            throw DataError("checkpoint '" + path + "': parameter '" + it.key() + "' data length mismatch");
        e.value.data = std::move(data);
    }
    for (const auto& [name, e] : store.entries())
        if (!doc.contains(name))
            throw DataError("checkpoint '" + path + "': missing parameter '" + name + "'");
}

}  // namespace remo
