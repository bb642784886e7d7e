#include <doctest.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "evoprune/graph_io.hpp"
#include "evoprune/models.hpp"
#include "evoprune/rng.hpp"

using namespace evoprune;

namespace {

std::string temp_path(const std::string& stem) {
    return (std::filesystem::temp_directory_path() / stem).string();
}

WeightStore random_store(RngStream& rng) {
    WeightStore s;
    const int layers = 1 + static_cast<int>(rng.next_below(4));
    for (int l = 0; l < layers; ++l) {
        const int tensors = 1 + static_cast<int>(rng.next_below(3));
        for (int t = 0; t < tensors; ++t) {
            const int rank = 1 + static_cast<int>(rng.next_below(4));
            std::vector<int> shape;
            for (int d = 0; d < rank; ++d) shape.push_back(1 + static_cast<int>(rng.next_below(6)));
            Tensor tensor(shape);
            for (std::int64_t i = 0; i < tensor.numel(); ++i) tensor[i] = rng.normal();
            s.put("layer" + std::to_string(l), "t" + std::to_string(t), std::move(tensor));
        }
    }
    return s;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    return std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.numel()) * 4) == 0;
}

}  // namespace

TEST_CASE("weight store round-trips bitwise") {
    RngStream rng(2024, 0);
    const std::string path = temp_path("evoprune_io_test.eapw");
    for (int trial = 0; trial < 10; ++trial) {
        WeightStore s = random_store(rng);
        save_weights(s, path);
        WeightStore r = load_weights(path);
        REQUIRE(r.entries.size() == s.entries.size());
        for (const auto& [layer, tensors] : s.entries)
            for (const auto& [name, tensor] : tensors) {
                REQUIRE(r.has(layer, name));
                CHECK(bitwise_equal(tensor, r.get(layer, name)));
            }
    }
    std::remove(path.c_str());
}

TEST_CASE("weight file with wrong magic fails at offset 0") {
    const std::string path = temp_path("evoprune_badmagic.eapw");
    std::ofstream(path, std::ios::binary) << "NOPE\x01\x00\x00\x00\x00\x00\x00\x00";
    try {
        load_weights(path);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(e.byte_offset == 0);
    }
    std::remove(path.c_str());
}

TEST_CASE("truncated weight payload reports the failing offset") {
    const std::string path = temp_path("evoprune_trunc.eapw");
    // Declare 2 entries but provide only one.
    WeightStore s;
    s.put("a", "k", Tensor({2, 2}, {1, 2, 3, 4}));
    save_weights(s, path);
    std::string buf;
    {
        std::ifstream f(path, std::ios::binary);
        buf.assign((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    }
    buf[8] = 2;  // entry count LSB
    std::ofstream(path, std::ios::binary | std::ios::trunc).write(buf.data(),
                                                                  static_cast<long>(buf.size()));
    try {
        load_weights(path);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(e.byte_offset == buf.size());
    }
    std::remove(path.c_str());
}

TEST_CASE("duplicate entry names are rejected") {
    const std::string path = temp_path("evoprune_dup.eapw");
    WeightStore s;
    s.put("a", "k", Tensor({1}, {1.0f}));
    save_weights(s, path);
    // Append a second copy of the same entry and bump the count.
    std::string buf;
    {
        std::ifstream f(path, std::ios::binary);
        buf.assign((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    }
    const std::string entry = buf.substr(12);
    buf[8] = 2;
    buf += entry;
    std::ofstream(path, std::ios::binary | std::ios::trunc).write(buf.data(),
                                                                  static_cast<long>(buf.size()));
    CHECK_THROWS_AS(load_weights(path), FormatError);
    std::remove(path.c_str());
}

TEST_CASE("model specs survive a json round trip") {
    for (const std::string name : {"toy-cnn", "toy-transformer", "resnet50"}) {
        NetworkGraph g = models::builtin(name);
        NetworkGraph r = graph_from_json(graph_to_json(g));
        REQUIRE(r.layers.size() == g.layers.size());
        for (std::size_t i = 0; i < g.layers.size(); ++i) {
            CHECK(r.layers[i].name == g.layers[i].name);
            CHECK(r.layers[i].kind == g.layers[i].kind);
            CHECK(r.layers[i].hyperparams == g.layers[i].hyperparams);
            CHECK(r.layers[i].inputs == g.layers[i].inputs);
        }
        REQUIRE(r.groups.size() == g.groups.size());
        for (std::size_t i = 0; i < g.groups.size(); ++i) {
            CHECK(r.groups[i].id == g.groups[i].id);
            CHECK(r.groups[i].original_size == g.groups[i].original_size);
            CHECK(r.groups[i].members.size() == g.groups[i].members.size());
        }
        CHECK(r.input_shape == g.input_shape);
        CHECK(r.class_count == g.class_count);
        CHECK(count_flops(r) == count_flops(g));
    }
}

TEST_CASE("malformed model spec raises a data error") {
    CHECK_THROWS_AS(graph_from_json("{not json"), DataError);
    CHECK_THROWS_AS(graph_from_json("{\"layers\": []}"), DataError);
}
