#include <fstream>
#include <json.hpp>

#include "evoprune/graph_io.hpp"

namespace evoprune {

using nlohmann::json;

namespace {

std::string axis_name(Axis a) {
    return a == Axis::out_channels ? "out-channels" : "in-channels";
}

Axis axis_from_name(const std::string& s) {
    if (s == "out-channels") return Axis::out_channels;
    if (s == "in-channels") return Axis::in_channels;
    throw DataError("unknown axis '" + s + "' in model spec");
}

}  // namespace

std::string graph_to_json(const NetworkGraph& graph) {
    json j;
    j["layers"] = json::array();
    for (const auto& l : graph.layers) {
        json jl;
        jl["name"] = l.name;
        jl["kind"] = kind_name(l.kind);
        jl["hyperparams"] = json::object();
        for (const auto& [k, v] : l.hyperparams) jl["hyperparams"][k] = v;
        jl["inputs"] = l.inputs;
        j["layers"].push_back(std::move(jl));
    }
    j["groups"] = json::array();
    for (const auto& g : graph.groups) {
        json jg;
        jg["id"] = g.id;
        jg["original_size"] = g.original_size;
        jg["members"] = json::array();
        for (const auto& m : g.members)
            jg["members"].push_back({{"layer", m.layer}, {"axis", axis_name(m.axis)}});
        j["groups"].push_back(std::move(jg));
    }
    j["input_shape"] = graph.input_shape;
    j["class_count"] = graph.class_count;
    return j.dump(2);
}

NetworkGraph graph_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw DataError(std::string("model spec is not valid JSON: ") + e.what());
    }
    try {
        NetworkGraph graph;
        for (const auto& jl : j.at("layers")) {
            LayerSpec l;
            l.name = jl.at("name").get<std::string>();
            const std::string kind = jl.at("kind").get<std::string>();
            auto k = kind_from_name(kind);
            if (!k) throw DataError("unknown layer kind '" + kind + "'");
            l.kind = *k;
            if (jl.contains("hyperparams"))
                for (const auto& [key, value] : jl.at("hyperparams").items())
                    l.hyperparams[key] = value.get<int>();
            l.inputs = jl.at("inputs").get<std::vector<std::string>>();
            graph.layers.push_back(std::move(l));
        }
        if (j.contains("groups"))
            for (const auto& jg : j.at("groups")) {
                DependencyGroup g;
                g.id = jg.at("id").get<int>();
                g.original_size = jg.at("original_size").get<int>();
                for (const auto& jm : jg.at("members"))
                    g.members.push_back({jm.at("layer").get<std::string>(),
                                         axis_from_name(jm.at("axis").get<std::string>())});
                graph.groups.push_back(std::move(g));
            }
        graph.input_shape = j.at("input_shape").get<std::vector<int>>();
        graph.class_count = j.at("class_count").get<int>();
        return graph;
    } catch (const json::exception& e) {
        throw DataError(std::string("model spec missing or mistyped field: ") + e.what());
    }
}

void save_graph(const NetworkGraph& graph, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("cannot open '" + path + "' for writing");
    f << graph_to_json(graph) << "\n";
}

NetworkGraph load_graph(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open model spec '" + path + "'");
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return graph_from_json(text);
}

}  // namespace evoprune
