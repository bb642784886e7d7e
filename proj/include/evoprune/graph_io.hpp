#pragma once

#include <string>

#include "evoprune/graph.hpp"

namespace evoprune {

// Binary weight file, little-endian: magic "EAPW", version u32=1, entry
// count u32; per entry: name length u16, UTF-8 name ("layer/tensor"),
// rank u8, dims rank x u32, payload product(dims) x f32. No padding.
void save_weights(const WeightStore& store, const std::string& path);
WeightStore load_weights(const std::string& path);

// Model-spec JSON: {layers: [{name, kind, hyperparams, inputs}], groups:
// [{id, members: [{layer, axis}], original_size}], input_shape, class_count}.
std::string graph_to_json(const NetworkGraph& graph);
NetworkGraph graph_from_json(const std::string& text);
void save_graph(const NetworkGraph& graph, const std::string& path);
NetworkGraph load_graph(const std::string& path);

}  // namespace evoprune
