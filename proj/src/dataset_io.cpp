#include "cmwno/dataset.hpp"

#include "binary_io.hpp"

#include <zlib.h>

#include <cstring>

namespace cmwno::datagen {

namespace {

constexpr char kMagic[6] = {'C', 'M', 'W', 'D', 'S', '1'};

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t size) {
    uLong crc = crc32(0L, Z_NULL, 0);
    while (size > 0) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
        crc = crc32(crc, data, chunk);
        data += chunk;
        size -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

void encode_body(const FieldDataset& ds, detail::ByteWriter& w) {
    for (const auto& sample : ds.samples)
        for (const auto& var : sample)
            for (const auto& f : var)
                for (double x : f) w.f64(x);
}

}  // namespace

std::size_t FieldDataset::variable_index(const std::string& name) const {
    for (std::size_t i = 0; i < variables.size(); ++i)
        if (variables[i] == name) return i;
    throw ConfigError("dataset has no variable '" + name + "'");
}

std::size_t FieldDataset::time_index(double t) const {
    for (std::size_t i = 0; i < times.size(); ++i)
        if (std::abs(times[i] - t) <= 1e-9 * std::max(1.0, std::abs(t))) return i;
    throw ConfigError("dataset has no timestamp " + std::to_string(t));
}

void FieldDataset::validate() const {
    if (resolution == 0) throw ConfigError("dataset: zero resolution");
    if (variables.empty() || variables.size() > 255) throw ConfigError("dataset: variable count must be 1..255");
    if (times.empty()) throw ConfigError("dataset: no timestamps");
    if (!(domain_hi > domain_lo)) throw ConfigError("dataset: empty domain");
    for (std::size_t s = 0; s < samples.size(); ++s) {
        if (samples[s].size() != variables.size())
            throw ConfigError("dataset: sample " + std::to_string(s) + " has wrong variable count");
        for (const auto& var : samples[s]) {
            if (var.size() != times.size())
                throw ConfigError("dataset: sample " + std::to_string(s) + " has wrong timestamp count");
            for (const auto& f : var) {
                if (f.size() != resolution)
                    throw ConfigError("dataset: sample " + std::to_string(s) + " has wrong resolution");
                for (double x : f)
                    if (!std::isfinite(x)) throw ConfigError("dataset: sample " + std::to_string(s) + " is not finite");
            }
        }
    }
}

std::vector<std::uint8_t> encode_dataset(const FieldDataset& ds) {
    ds.validate();
    detail::ByteWriter w;
    w.bytes(kMagic, sizeof kMagic);
    w.str(ds.system);
    w.le(static_cast<std::uint32_t>(ds.resolution));
    w.f64(ds.domain_lo);
    w.f64(ds.domain_hi);
    w.le(static_cast<std::uint8_t>(ds.variables.size()));
    for (const auto& v : ds.variables) w.str(v);
    w.le(static_cast<std::uint32_t>(ds.times.size()));
    for (double t : ds.times) w.f64(t);
    w.le(static_cast<std::uint32_t>(ds.samples.size()));
    w.f64(ds.lambda);
    w.le(ds.master_seed);
    const std::size_t body_start = w.buffer().size();
    encode_body(ds, w);
    const auto& buf = w.buffer();
    const std::uint32_t crc = crc32_of(buf.data() + body_start, buf.size() - body_start);
    w.le(crc);
    return w.buffer();
}

FieldDataset decode_dataset(const std::vector<std::uint8_t>& bytes, const std::string& context) {
    using R = DatasetFormatError::Reason;
    detail::ByteReader r(bytes.data(), bytes.size(), context);
    FieldDataset ds;
    std::size_t body_start = 0;
    std::size_t body_len = 0;
    try {
        char magic[6];
        r.bytes(magic, sizeof magic);
        if (std::memcmp(magic, kMagic, 5) != 0) throw DatasetFormatError(R::bad_magic, context + ": bad magic");
        if (magic[5] != kMagic[5])
            throw DatasetFormatError(R::version_mismatch,
                                     context + ": unsupported format version '" + std::string(1, magic[5]) + "'");
        ds.system = r.str(4096);
        ds.resolution = r.le<std::uint32_t>();
        ds.domain_lo = r.f64();
        ds.domain_hi = r.f64();
        const auto nv = r.le<std::uint8_t>();
        for (unsigned i = 0; i < nv; ++i) ds.variables.push_back(r.str(4096));
        const auto nt = r.le<std::uint32_t>();
        if (nt > r.remaining() / 8) throw detail::Truncated(context + ": truncated timestamp list");
        for (std::uint32_t i = 0; i < nt; ++i) ds.times.push_back(r.f64());
        const auto ns = r.le<std::uint32_t>();
        ds.lambda = r.f64();
        ds.master_seed = r.le<std::uint64_t>();

        body_start = r.position();
        body_len = static_cast<std::size_t>(ns) * nv * nt * ds.resolution * 8;
        if (r.remaining() < body_len + 4)
            throw detail::Truncated(context + ": truncated body (" + std::to_string(r.remaining()) + " bytes left, " +
                                    std::to_string(body_len + 4) + " expected)");
        ds.samples.assign(ns, std::vector<std::vector<Field>>(nv, std::vector<Field>(nt, Field(ds.resolution))));
        for (auto& sample : ds.samples)
            for (auto& var : sample)
                for (auto& f : var)
                    for (double& x : f) x = r.f64();
    } catch (const detail::Truncated& e) {
        throw DatasetFormatError(R::truncated, e.what());
    }
    const auto stored = r.le<std::uint32_t>();
    if (r.remaining() != 0) throw DatasetFormatError(R::malformed, context + ": trailing bytes after checksum");
    const std::uint32_t actual = crc32_of(bytes.data() + body_start, body_len);
    if (stored != actual) throw DatasetFormatError(R::checksum, context + ": checksum mismatch");
    try {
        ds.validate();
    } catch (const ConfigError& e) {
        throw DatasetFormatError(R::malformed, context + ": " + e.what());
    }
    return ds;
}

void write_dataset(const std::string& path, const FieldDataset& ds) { detail::write_file(path, encode_dataset(ds)); }

FieldDataset read_dataset(const std::string& path) { return decode_dataset(detail::read_file(path), path); }

std::uint32_t fingerprint(const FieldDataset& ds) {
    detail::ByteWriter w;
    encode_body(ds, w);
    return crc32_of(w.buffer().data(), w.buffer().size());
}

FieldDataset subsample(const FieldDataset& ds, std::size_t target) {
    FieldDataset out = ds;
    out.resolution = target;
    for (auto& sample : out.samples)
        for (auto& var : sample)
            for (auto& f : var) f = subsample(f, target);
    return out;
}

FieldDataset slice(const FieldDataset& ds, std::size_t first, std::size_t count) {
    if (first + count > ds.samples.size())
        throw ConfigError("dataset slice [" + std::to_string(first) + ", " + std::to_string(first + count) +
                          ") exceeds " + std::to_string(ds.samples.size()) + " samples");
    FieldDataset out = ds;
    out.samples.assign(ds.samples.begin() + static_cast<std::ptrdiff_t>(first),
                       ds.samples.begin() + static_cast<std::ptrdiff_t>(first + count));
    return out;
}

}  // namespace cmwno::datagen
