#include "cmwno/dataset.hpp"
#include "cmwno/error.hpp"

#include <gtest/gtest.h>
#include <zlib.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

using namespace cmwno;
using namespace cmwno::datagen;
namespace fs = std::filesystem;

namespace {

FieldDataset make_ds(std::size_t samples = 3, std::size_t n = 16) {
    FieldDataset ds;
    ds.system = "gs";
    ds.resolution = n;
    ds.domain_lo = 0.0;
    ds.domain_hi = 10.0;
    ds.variables = {"u", "v"};
    ds.times = {0.0, 1.0};
    ds.lambda = 0.4;
    ds.master_seed = 99;
    std::mt19937_64 rng(1);
    std::normal_distribution<double> normal;
    ds.samples.resize(samples);
    for (auto& s : ds.samples) {
        s.resize(2);
        for (auto& v : s) {
            v.resize(2);
            for (auto& f : v) {
                f.resize(n);
                for (auto& x : f) x = normal(rng);
            }
        }
    }
    return ds;
}

std::string temp_path(const std::string& name) {
    return (fs::temp_directory_path() / ("cmwno_ds_" + name)).string();
}

DatasetFormatError::Reason reason_of(const std::vector<std::uint8_t>& bytes) {
    try {
        decode_dataset(bytes);
    } catch (const DatasetFormatError& e) {
        return e.reason();
    }
    ADD_FAILURE() << "decode succeeded";
    return DatasetFormatError::Reason::malformed;
}

void expect_same(const FieldDataset& a, const FieldDataset& b) {
    EXPECT_EQ(a.system, b.system);
    EXPECT_EQ(a.resolution, b.resolution);
    EXPECT_EQ(a.domain_lo, b.domain_lo);
    EXPECT_EQ(a.domain_hi, b.domain_hi);
    EXPECT_EQ(a.variables, b.variables);
    EXPECT_EQ(a.times, b.times);
    EXPECT_EQ(std::isnan(a.lambda), std::isnan(b.lambda));
    if (!std::isnan(a.lambda)) EXPECT_EQ(a.lambda, b.lambda);
    EXPECT_EQ(a.master_seed, b.master_seed);
    EXPECT_EQ(a.samples, b.samples);
}

}  // namespace

TEST(DatasetIo, RoundTripBitExact) {
    const auto ds = make_ds();
    const auto path = temp_path("rt.cmwds");
    write_dataset(path, ds);
    expect_same(ds, read_dataset(path));

    std::ifstream in(path, std::ios::binary);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), {});
    EXPECT_EQ(bytes, encode_dataset(ds));
    fs::remove(path);
}

TEST(DatasetIo, NanLambdaSurvives) {
    auto ds = make_ds();
    ds.lambda = std::nan("");
    expect_same(ds, decode_dataset(encode_dataset(ds)));
}

TEST(DatasetIo, LayoutMatchesContract) {
    // walk the header by hand, then check body placement and the CRC trailer
    const auto ds = make_ds(2, 8);
    const auto b = encode_dataset(ds);
    std::size_t o = 0;
    auto u32 = [&] {
        std::uint32_t v;
        std::memcpy(&v, b.data() + o, 4);
        o += 4;
        return v;
    };
    auto f64 = [&] {
        double v;
        std::memcpy(&v, b.data() + o, 8);
        o += 8;
        return v;
    };
    EXPECT_EQ(std::string(b.begin(), b.begin() + 6), "CMWDS1");
    o = 6;
    const auto sl = u32();
    EXPECT_EQ(std::string(b.begin() + o, b.begin() + o + sl), "gs");
    o += sl;
    EXPECT_EQ(u32(), 8u);
    EXPECT_EQ(f64(), 0.0);
    EXPECT_EQ(f64(), 10.0);
    EXPECT_EQ(b[o++], 2);
    for (const char* name : {"u", "v"}) {
        const auto l = u32();
        EXPECT_EQ(std::string(b.begin() + o, b.begin() + o + l), name);
        o += l;
    }
    EXPECT_EQ(u32(), 2u);
    EXPECT_EQ(f64(), 0.0);
    EXPECT_EQ(f64(), 1.0);
    EXPECT_EQ(u32(), 2u);
    EXPECT_EQ(f64(), 0.4);
    std::uint64_t seed;
    std::memcpy(&seed, b.data() + o, 8);
    o += 8;
    EXPECT_EQ(seed, 99u);
    const std::size_t body = 2 * 2 * 2 * 8 * 8;
    ASSERT_EQ(b.size(), o + body + 4);
    EXPECT_EQ(f64(), ds.samples[0][0][0][0]);
    o = b.size() - 8 - 4;
    EXPECT_EQ(f64(), ds.samples[1][1][1][7]);
    const std::size_t body_start = b.size() - 4 - body;
    const auto crc = crc32(0L, b.data() + body_start, static_cast<uInt>(body));
    EXPECT_EQ(u32(), static_cast<std::uint32_t>(crc));
    EXPECT_EQ(fingerprint(ds), static_cast<std::uint32_t>(crc));
}

TEST(DatasetIo, DistinctFailureReasons) {
    const auto good = encode_dataset(make_ds());
    using R = DatasetFormatError::Reason;

    auto bad_magic = good;
    bad_magic[0] = 'X';
    EXPECT_EQ(reason_of(bad_magic), R::bad_magic);

    auto version = good;
    version[5] = '2';
    EXPECT_EQ(reason_of(version), R::version_mismatch);

    auto truncated = good;
    truncated.resize(good.size() - 20);
    EXPECT_EQ(reason_of(truncated), R::truncated);

    auto last_byte = good;
    last_byte.back() ^= 0x01;
    EXPECT_EQ(reason_of(last_byte), R::checksum);

    auto body_flip = good;
    body_flip[good.size() - 10] ^= 0x40;
    EXPECT_EQ(reason_of(body_flip), R::checksum);

    auto trailing = good;
    trailing.push_back(0);
    EXPECT_EQ(reason_of(trailing), R::malformed);
}

TEST(DatasetIo, MissingFileIsIoError) {
    EXPECT_THROW(read_dataset(temp_path("nope.cmwds")), IoError);
}

TEST(DatasetOps, SubsampleAndSlice) {
    const auto ds = make_ds(5, 16);
    const auto sub = subsample(ds, 4);
    EXPECT_EQ(sub.resolution, 4u);
    EXPECT_EQ(sub.field(2, 1, 1)[3], ds.field(2, 1, 1)[12]);
    EXPECT_THROW(subsample(ds, 6), ConfigError);

    const auto sl = slice(ds, 3, 2);
    EXPECT_EQ(sl.sample_count(), 2u);
    EXPECT_EQ(sl.field(0, 0, 0), ds.field(3, 0, 0));
    EXPECT_THROW(slice(ds, 4, 2), ConfigError);
}

TEST(DatasetOps, Lookup) {
    const auto ds = make_ds();
    EXPECT_EQ(ds.variable_index("v"), 1u);
    EXPECT_EQ(ds.time_index(1.0), 1u);
    EXPECT_THROW(ds.variable_index("w"), ConfigError);
    EXPECT_THROW(ds.time_index(0.5), ConfigError);
}

TEST(DatasetOps, ValidateCatchesInconsistency) {
    auto ds = make_ds();
    ds.samples[1][0][1].pop_back();
    EXPECT_THROW(ds.validate(), ConfigError);
    ds = make_ds();
    ds.samples[0][1][0][2] = INFINITY;
    EXPECT_THROW(ds.validate(), ConfigError);
}

TEST(Mfg, FixtureLoadsIntoSameShape) {
    const std::string path = CMWNO_MFG_FIXTURE;
    const auto ds = read_dataset(path);
    EXPECT_EQ(ds.system, "mfg");
    EXPECT_EQ(ds.variables, (std::vector<std::string>{"rho", "phi"}));
    EXPECT_EQ(ds.times, (std::vector<double>{0.0, 0.2, 0.4, 0.6, 0.8}));
    EXPECT_TRUE(std::isnan(ds.lambda));
    ds.validate();
    EXPECT_EQ(ds.field(0, 1, 4).size(), ds.resolution);
}
