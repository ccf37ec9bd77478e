#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>

#include "plsprune/data.hpp"
#include "plsprune/error.hpp"

using namespace plsprune;

namespace {

namespace fs = std::filesystem;

fs::path temp_file(const std::string& name) {
    return fs::temp_directory_path() / ("plsprune_test_" + name);
}

void write_be32(std::ofstream& out, std::uint32_t v) {
    const unsigned char bytes[4] = {
        static_cast<unsigned char>(v >> 24),
        static_cast<unsigned char>(v >> 16),
        static_cast<unsigned char>(v >> 8),
        static_cast<unsigned char>(v),
    };
    out.write(reinterpret_cast<const char*>(bytes), 4);
}

void write_idx_images(const fs::path& path, std::uint32_t count,
                      std::uint32_t h, std::uint32_t w,
                      const std::vector<unsigned char>& pixels,
                      std::uint32_t magic = 0x00000803) {
    std::ofstream out(path, std::ios::binary);
    write_be32(out, magic);
    write_be32(out, count);
    write_be32(out, h);
    write_be32(out, w);
    out.write(reinterpret_cast<const char*>(pixels.data()),
              static_cast<std::streamsize>(pixels.size()));
}

void write_idx_labels(const fs::path& path,
                      const std::vector<unsigned char>& labels,
                      std::uint32_t magic = 0x00000801) {
    std::ofstream out(path, std::ios::binary);
    write_be32(out, magic);
    write_be32(out, static_cast<std::uint32_t>(labels.size()));
    out.write(reinterpret_cast<const char*>(labels.data()),
              static_cast<std::streamsize>(labels.size()));
}

}  // namespace

TEST_CASE("load_idx parses a 2-image file") {
    const auto img = temp_file("idx_img");
    const auto lbl = temp_file("idx_lbl");
    std::vector<unsigned char> pixels(2 * 4 * 4, 0);
    pixels[0] = 255;
    pixels[17] = 128;
    write_idx_images(img, 2, 4, 4, pixels);
    write_idx_labels(lbl, {1, 0});

    const Dataset ds = load_idx(img, lbl);
    CHECK(ds.count == 2);
    CHECK(ds.shape == Shape3{1, 4, 4});
    CHECK(ds.images[0] == 1.0);
    CHECK(ds.images[1] == 0.0);
    CHECK(ds.images[17] == doctest::Approx(128.0 / 255.0));
    CHECK(ds.labels == std::vector<int>{1, 0});
    CHECK(ds.class_count == 2);
    fs::remove(img);
    fs::remove(lbl);
}

TEST_CASE("load_idx rejects bad magic, count mismatch, truncation") {
    const auto img = temp_file("idx_img2");
    const auto lbl = temp_file("idx_lbl2");
    std::vector<unsigned char> pixels(2 * 2 * 2, 7);

    write_idx_images(img, 2, 2, 2, pixels, 0x00000802);
    write_idx_labels(lbl, {0, 1});
    CHECK_THROWS_AS(load_idx(img, lbl), ParseError);

    write_idx_images(img, 2, 2, 2, pixels);
    write_idx_labels(lbl, {0, 1, 1});  // 3 labels vs 2 images
    CHECK_THROWS_AS(load_idx(img, lbl), IntegrityError);

    // Truncated image payload: header claims 5 images.
    write_idx_images(img, 5, 2, 2, pixels);
    write_idx_labels(lbl, {0, 1, 1, 0, 1});
    try {
        load_idx(img, lbl);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("offset") != std::string::npos);
    }
    fs::remove(img);
    fs::remove(lbl);
}

TEST_CASE("load_csv basics") {
    const auto path = temp_file("data.csv");
    {
        std::ofstream out(path);
        out << "label,p0,p1,p2,p3\n";  // header, auto-skipped
        out << "1,0,255,128,0\n";
        out << "0,255,0,0,255\n";
    }
    const Dataset ds = load_csv(path, Shape3{1, 2, 2}, PixelRange::Byte);
    CHECK(ds.count == 2);
    CHECK(ds.labels == std::vector<int>{1, 0});
    CHECK(ds.images[1] == 1.0);
    CHECK(ds.images[2] == doctest::Approx(128.0 / 255.0));
    fs::remove(path);
}

TEST_CASE("load_csv error reporting") {
    const auto path = temp_file("bad.csv");
    {
        std::ofstream out(path);
        out << "1,0,0,0,0\n";
        out << "0,12,9\n";  // ragged
    }
    try {
        load_csv(path, Shape3{1, 2, 2});
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
    {
        std::ofstream out(path);
        out << "1,0,xyz,0,0\n";
    }
    try {
        load_csv(path, Shape3{1, 2, 2});
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("line 1") != std::string::npos);
        CHECK(msg.find("column 3") != std::string::npos);
    }
    fs::remove(path);
}

TEST_CASE("fuzzed malformed IDX files error instead of crashing") {
    const auto img = temp_file("idx_fuzz_img");
    const auto lbl = temp_file("idx_fuzz_lbl");
    std::vector<unsigned char> pixels(3 * 4 * 4, 9);
    write_idx_labels(lbl, {0, 1, 2});

    std::string valid;
    {
        write_idx_images(img, 3, 4, 4, pixels);
        std::ifstream in(img, std::ios::binary);
        valid.assign((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    }
    std::mt19937_64 rng(4242);
    for (int trial = 0; trial < 60; ++trial) {
        std::string mutated = valid;
        if (trial % 2 == 0) {
            mutated.resize(rng() % valid.size());  // truncate
        } else {
            mutated[rng() % mutated.size()] =
                static_cast<char>(rng() & 0xff);  // corrupt a byte
        }
        {
            std::ofstream out(img, std::ios::binary);
            out.write(mutated.data(),
                      static_cast<std::streamsize>(mutated.size()));
        }
        try {
            const Dataset ds = load_idx(img, lbl);
            CHECK(ds.count <= 3);  // a mutation may still parse cleanly
        } catch (const Error&) {
            // expected for most mutations
        }
    }
    fs::remove(img);
    fs::remove(lbl);
}

TEST_CASE("synthetic dataset is deterministic and balanced") {
    const Shape3 shape{1, 12, 12};
    const Dataset a = synthetic(100, 3, shape, 9);
    const Dataset b = synthetic(100, 3, shape, 9);
    CHECK(a.images == b.images);
    CHECK(a.labels == b.labels);

    std::map<int, int> counts;
    for (int l : a.labels) counts[l]++;
    int lo = 100, hi = 0;
    for (const auto& [cls, n] : counts) {
        lo = std::min(lo, n);
        hi = std::max(hi, n);
    }
    CHECK(counts.size() == 3);
    CHECK(hi - lo <= 1);

    for (double v : a.images) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    CHECK_THROWS_AS(synthetic(10, 1, shape, 0), ParamError);
}

TEST_CASE("subsample is seeded, order-preserving, sized by floor") {
    const Dataset ds = synthetic(100, 2, Shape3{1, 6, 6}, 3);
    const Dataset s1 = subsample(ds, 0.1, 42);
    const Dataset s2 = subsample(ds, 0.1, 42);
    CHECK(s1.count == 10);
    CHECK(s1.images == s2.images);
    CHECK(s1.labels == s2.labels);

    // Rows are a subset of the original rows, in original relative order.
    std::size_t cursor = 0;
    for (std::size_t i = 0; i < s1.count; ++i) {
        bool found = false;
        for (; cursor < ds.count; ++cursor) {
            const auto orig = ds.sample(cursor);
            const auto got = s1.sample(i);
            if (std::equal(got.begin(), got.end(), orig.begin())) {
                found = true;
                ++cursor;
                break;
            }
        }
        CHECK(found);
    }

    const Dataset all = subsample(ds, 1.0, 7);
    CHECK(all.images == ds.images);
    CHECK(all.labels == ds.labels);

    CHECK_THROWS_AS(subsample(ds, 0.001, 0), ParamError);
    CHECK_THROWS_AS(subsample(ds, 1.5, 0), ParamError);
}

TEST_CASE("split is disjoint, exhaustive, deterministic") {
    const Dataset ds = synthetic(60, 2, Shape3{1, 5, 5}, 21);
    const Split s = split(ds, 0.75, 5);
    CHECK(s.train.count + s.heldout.count == 60);
    CHECK(s.train.count == 45);

    const Split again = split(ds, 0.75, 5);
    CHECK(s.train.images == again.train.images);
    CHECK(s.heldout.labels == again.heldout.labels);

    CHECK_THROWS_AS(split(ds, 0.0, 1), ParamError);
    CHECK_THROWS_AS(split(ds, 1.0, 1), ParamError);
}
