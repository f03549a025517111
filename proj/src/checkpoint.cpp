#include "binary_io.hpp"
#include "cmwno/nn.hpp"

#include <fstream>
#include <iterator>

namespace cmwno {

namespace detail {

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path + " for reading");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path);
}

}  // namespace detail

namespace nn {

namespace {
constexpr char kMagic[6] = {'C', 'M', 'W', 'N', 'O', '1'};
}

void write_checkpoint(const std::string& path, std::span<const NamedTensor> tensors) {
    detail::ByteWriter w;
    w.bytes(kMagic, sizeof kMagic);
    w.le(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        w.str(t.id);
        w.le(static_cast<std::uint32_t>(t.value.rank()));
        for (std::size_t d : t.value.shape()) w.le(static_cast<std::uint64_t>(d));
        for (double x : t.value.data()) w.f64(x);
    }
    detail::write_file(path, w.buffer());
}

std::vector<NamedTensor> read_checkpoint(const std::string& path) {
    const auto bytes = detail::read_file(path);
    detail::ByteReader r(bytes.data(), bytes.size(), "checkpoint " + path);
    char magic[6];
    r.bytes(magic, sizeof magic);
    if (std::memcmp(magic, kMagic, 5) != 0) throw IoError("checkpoint " + path + ": bad magic");
    if (magic[5] != kMagic[5]) throw IoError("checkpoint " + path + ": unsupported version " + std::string(1, magic[5]));
    const auto count = r.le<std::uint32_t>();
    std::vector<NamedTensor> out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor t;
        t.id = r.str();
        const auto rank = r.le<std::uint32_t>();
        if (rank > 8) throw IoError("checkpoint " + path + ": implausible rank for " + t.id);
        std::vector<std::size_t> shape(rank);
        std::size_t total = 1;
        for (auto& d : shape) {
            d = static_cast<std::size_t>(r.le<std::uint64_t>());
            total *= d;
        }
        if (total * 8 > r.remaining()) throw detail::Truncated("checkpoint " + path + ": truncated tensor " + t.id);
        std::vector<double> data(total);
        for (auto& x : data) x = r.f64();
        t.value = Tensor(std::move(shape), std::move(data));
        out.push_back(std::move(t));
    }
    if (r.remaining() != 0) throw IoError("checkpoint " + path + ": trailing bytes");
    return out;
}

}  // namespace nn
}  // namespace cmwno
