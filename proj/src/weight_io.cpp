#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "evoprune/graph_io.hpp"

namespace evoprune {

namespace {

constexpr char kMagic[4] = {'E', 'A', 'P', 'W'};
constexpr std::uint32_t kVersion = 1;

// All multi-byte fields are little-endian regardless of host order.
template <typename T>
void put_le(std::string& out, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i)
        out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff));
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n, const char* what) const {
        if (pos + n > buf.size())
            throw FormatError(std::string("truncated weight file while reading ") + what, pos);
    }
    template <typename T>
    T get_le(const char* what) {
        need(sizeof(T), what);
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += sizeof(T);
        return static_cast<T>(v);
    }
};

}  // namespace

void save_weights(const WeightStore& store, const std::string& path) {
    std::string out;
    out.append(kMagic, 4);
    put_le<std::uint32_t>(out, kVersion);
    std::uint32_t count = 0;
    for (const auto& [layer, tensors] : store.entries) count += tensors.size();
    put_le<std::uint32_t>(out, count);

    for (const auto& [layer, tensors] : store.entries) {
        for (const auto& [tname, tensor] : tensors) {
            const std::string name = layer + "/" + tname;
            put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
            out.append(name);
            out.push_back(static_cast<char>(tensor.rank()));
            for (int d : tensor.shape()) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
            for (std::int64_t i = 0; i < tensor.numel(); ++i) {
                std::uint32_t bits;
                const float v = tensor[i];
                std::memcpy(&bits, &v, 4);
                put_le<std::uint32_t>(out, bits);
            }
        }
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open '" + path + "' for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw DataError("failed writing '" + path + "'");
}

WeightStore load_weights(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open weight file '" + path + "'");
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    Reader r{buf};
    r.need(4, "magic");
    if (std::memcmp(buf.data(), kMagic, 4) != 0)
        throw FormatError("bad magic, expected \"EAPW\"", 0);
    r.pos = 4;
    const auto version = r.get_le<std::uint32_t>("version");
    if (version != kVersion)
        throw FormatError("unsupported weight file version " + std::to_string(version), 4);
    const auto count = r.get_le<std::uint32_t>("entry count");

    WeightStore store;
    for (std::uint32_t e = 0; e < count; ++e) {
        const std::size_t entry_start = r.pos;
        const auto name_len = r.get_le<std::uint16_t>("name length");
        r.need(name_len, "entry name");
        const std::string name = buf.substr(r.pos, name_len);
        r.pos += name_len;
        const auto rank = r.get_le<std::uint8_t>("rank");
        if (rank < 1) throw FormatError("entry '" + name + "' has rank 0", entry_start);
        std::vector<int> shape(rank);
        std::int64_t numel = 1;
        for (int i = 0; i < rank; ++i) {
            shape[static_cast<std::size_t>(i)] =
                static_cast<int>(r.get_le<std::uint32_t>("dimension"));
            numel *= shape[static_cast<std::size_t>(i)];
        }
        std::vector<float> data(static_cast<std::size_t>(numel));
        r.need(static_cast<std::size_t>(numel) * 4, "payload");
        for (std::int64_t i = 0; i < numel; ++i) {
            std::uint32_t bits = 0;
            for (int b = 0; b < 4; ++b)
                bits |= static_cast<std::uint32_t>(
                            static_cast<unsigned char>(buf[r.pos + static_cast<std::size_t>(i) * 4 +
                                                           static_cast<std::size_t>(b)]))
                        << (8 * b);
            std::memcpy(&data[static_cast<std::size_t>(i)], &bits, 4);
        }
        r.pos += static_cast<std::size_t>(numel) * 4;

        const auto slash = name.find('/');
        if (slash == std::string::npos)
            throw FormatError("entry name '" + name + "' lacks layer/tensor separator",
                              entry_start);
        const std::string layer = name.substr(0, slash);
        const std::string tname = name.substr(slash + 1);
        if (store.has(layer, tname))
            throw FormatError("duplicate entry name '" + name + "'", entry_start);
        store.put(layer, tname, Tensor(std::move(shape), std::move(data)));
    }
    if (r.pos != buf.size())
        throw FormatError("trailing bytes after last entry", r.pos);
    return store;
}

}  // namespace evoprune
