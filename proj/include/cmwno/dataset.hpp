#pragma once

// Paired initial-condition / solution samples and the "CMWDS1" container.
//
// Layout (little-endian): magic "CMWDS1"; system tag (u32 length + bytes);
// resolution u32; domain lo, hi f64; variable count u8; names (u32 length +
// bytes each); timestamp count u32 then f64 each; sample count u32; lambda
// f64 (NaN when not applicable); master seed u64. Body: per sample, per
// variable, per timestamp, `resolution` f64 values. Trailer: CRC-32 of the body.

#include "cmwno/datagen.hpp"
#include "cmwno/error.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

namespace cmwno::datagen {

struct FieldDataset {
    std::string system;
    std::size_t resolution = 0;
    double domain_lo = 0.0;
    double domain_hi = 1.0;
    std::vector<std::string> variables;
    std::vector<double> times;
    double lambda = std::numeric_limits<double>::quiet_NaN();
    std::uint64_t master_seed = 0;
    /// samples[s][var][t]
    std::vector<std::vector<std::vector<Field>>> samples;

    std::size_t sample_count() const { return samples.size(); }
    const Field& field(std::size_t sample, std::size_t var, std::size_t t) const {
        return samples.at(sample).at(var).at(t);
    }
    std::size_t variable_index(const std::string& name) const;
    std::size_t time_index(double t) const;
    /// Throws ConfigError if shapes are inconsistent or values non-finite.
    void validate() const;
};

class DatasetFormatError : public IoError {
public:
    enum class Reason { bad_magic, version_mismatch, truncated, checksum, malformed };
    DatasetFormatError(Reason reason, const std::string& what) : IoError(what), reason_(reason) {}
    Reason reason() const { return reason_; }

private:
    Reason reason_;
};

std::vector<std::uint8_t> encode_dataset(const FieldDataset& ds);
FieldDataset decode_dataset(const std::vector<std::uint8_t>& bytes, const std::string& context = "dataset");

void write_dataset(const std::string& path, const FieldDataset& ds);
FieldDataset read_dataset(const std::string& path);

/// CRC-32 of the encoded body; identifies a dataset's contents.
std::uint32_t fingerprint(const FieldDataset& ds);

/// Every field subsampled to `target` points.
FieldDataset subsample(const FieldDataset& ds, std::size_t target);

/// Samples [first, first + count).
FieldDataset slice(const FieldDataset& ds, std::size_t first, std::size_t count);

}  // namespace cmwno::datagen
