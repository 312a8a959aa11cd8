#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "ppx/image.hpp"
#include "ppx/image_io.hpp"
#include "ppx/rng.hpp"
#include "oracles.hpp"

using namespace ppx;
namespace fs = std::filesystem;

namespace {
fs::path temp_dir() {
    const fs::path d = fs::temp_directory_path() / "ppx_test_image";
    fs::create_directories(d);
    return d;
}
} // namespace

TEST_CASE("PGM load maps 8-bit codes to c/255 exactly") {
    const fs::path p = temp_dir() / "codes.pgm";
    {
        std::ofstream out(p, std::ios::binary);
        out << "P5\n2 2\n255\n";
        const unsigned char codes[4] = {0, 128, 255, 64};
        out.write(reinterpret_cast<const char*>(codes), 4);
    }
    const ImageBuffer img = load_image(p);
    REQUIRE(img.width == 2);
    REQUIRE(img.height == 2);
    REQUIRE(img.channels == 1);
    REQUIRE(img.at(0, 0) == 0.0);
    REQUIRE(img.at(0, 1) == 128.0 / 255.0);
    REQUIRE(img.at(1, 0) == 1.0);
    REQUIRE(img.at(1, 1) == 64.0 / 255.0);
}

TEST_CASE("quantization rounds half away from zero") {
    REQUIRE(quantize8(1.0) == 255);
    REQUIRE(quantize8(0.5) == 128); // round(127.5) away from zero
    REQUIRE(quantize8(1.0 / 255.0) == 1);
    REQUIRE(quantize8(0.0) == 0);
}

TEST_CASE("quantize then dequantize is the identity on 8-bit codes") {
    for (int c = 0; c <= 255; ++c) REQUIRE(quantize8(dequantize8(std::uint8_t(c))) == c);
}

TEST_CASE("save then load round-trips quantized buffers (PGM and PNG)") {
    Rng rng(7);
    ImageBuffer img = oracle::random_image(13, 9, rng);
    for (double& v : img.data) v = dequantize8(quantize8(v)); // already 8-bit representable
    for (const char* name : {"rt.pgm", "rt.png"}) {
        const fs::path p = temp_dir() / name;
        save_image(img, p);
        const ImageBuffer back = load_image(p);
        REQUIRE(back.same_shape(img));
        REQUIRE(back.data == img.data);
    }
}

TEST_CASE("3-channel PNG round-trip keeps shape contract") {
    ImageBuffer img = make_image(5, 4, 3);
    Rng rng(11);
    for (double& v : img.data) v = dequantize8(quantize8(rng.uniform()));
    const fs::path p = temp_dir() / "rgb.png";
    save_image(img, p);
    const ImageBuffer back = load_image(p);
    REQUIRE(back.channels == 3);
    REQUIRE(back.data.size() == std::size_t(3) * 5 * 4);
    REQUIRE(back.data == img.data);
}

TEST_CASE("load errors are distinct") {
    REQUIRE_THROWS_AS(load_image(temp_dir() / "nope.png"), FileNotFound);

    const fs::path bad = temp_dir() / "bad.dat";
    {
        std::ofstream out(bad, std::ios::binary);
        out << "not an image at all";
    }
    REQUIRE_THROWS_AS(load_image(bad), UnsupportedFormat);

    const fs::path trunc = temp_dir() / "trunc.pgm";
    {
        std::ofstream out(trunc, std::ios::binary);
        out << "P5\n4 4\n255\n";
        out << "xy"; // 2 of 16 bytes
    }
    REQUIRE_THROWS_AS(load_image(trunc), CorruptStream);

    const fs::path hi = temp_dir() / "16bit.pgm";
    {
        std::ofstream out(hi, std::ios::binary);
        out << "P5\n1 1\n65535\n";
        out << "ab";
    }
    REQUIRE_THROWS_AS(load_image(hi), UnsupportedFormat);
}

TEST_CASE("to_grayscale applies the 0.299/0.587/0.114 weights") {
    ImageBuffer gray = make_image(3, 3, 1, 0.25);
    REQUIRE(to_grayscale(gray).data == gray.data); // unchanged, idempotent

    ImageBuffer rgb = make_image(1, 1, 3);
    rgb.data = {1.0, 1.0, 1.0};
    REQUIRE(to_grayscale(rgb).at(0, 0) == Catch::Approx(1.0).margin(1e-15));
    rgb.data = {1.0, 0.0, 0.0};
    REQUIRE(to_grayscale(rgb).at(0, 0) == Catch::Approx(0.299).margin(1e-15));
}

TEST_CASE("resize_bilinear identity and constants") {
    Rng rng(3);
    const ImageBuffer img = oracle::random_image(8, 6, rng);
    const ImageBuffer same = resize_bilinear(img, 8, 6);
    REQUIRE(same.data == img.data);

    const ImageBuffer c = make_image(5, 5, 1, 0.37);
    const ImageBuffer up = resize_bilinear(c, 11, 3);
    for (double v : up.data) REQUIRE(v == Catch::Approx(0.37).margin(1e-15));
}

TEST_CASE("resize_bilinear follows the align-corners convention") {
    ImageBuffer row = make_image(2, 1, 1);
    row.data = {0.0, 1.0};
    const ImageBuffer out = resize_bilinear(row, 3, 1);
    REQUIRE(out.data[0] == 0.0);
    REQUIRE(out.data[1] == Catch::Approx(0.5).margin(1e-12));
    REQUIRE(out.data[2] == 1.0);
}

TEST_CASE("resize_bilinear preserves the intensity range") {
    Rng rng(17);
    for (int trial = 0; trial < 10; ++trial) {
        const ImageBuffer img = oracle::random_image(9, 7, rng, 0.2, 0.8);
        const auto [mn_it, mx_it] = std::minmax_element(img.data.begin(), img.data.end());
        const ImageBuffer out = resize_bilinear(img, 5 + int(rng.index(20)), 5 + int(rng.index(20)));
        for (double v : out.data) {
            REQUIRE(v >= *mn_it - 1e-12);
            REQUIRE(v <= *mx_it + 1e-12);
        }
    }
}

TEST_CASE("extract_patches counts and reassembly") {
    Rng rng(23);
    const ImageBuffer i64 = oracle::random_image(64, 64, rng);
    REQUIRE(extract_patches(i64, 64, 1).size() == 1);
    REQUIRE(extract_patches(i64, 64, 1)[0].data == i64.data);

    const ImageBuffer i65 = oracle::random_image(65, 64, rng);
    REQUIRE(extract_patches(i65, 64, 1).size() == 2);

    const ImageBuffer big = oracle::random_image(128, 128, rng);
    const auto tiles = extract_patches(big, 32, 32);
    REQUIRE(tiles.size() == 16);
    ImageBuffer rebuilt = make_image(128, 128, 1);
    for (int ty = 0; ty < 4; ++ty)
        for (int tx = 0; tx < 4; ++tx) {
            const ImageBuffer& t = tiles[std::size_t(ty) * 4 + tx];
            for (int y = 0; y < 32; ++y)
                for (int x = 0; x < 32; ++x) rebuilt.at(ty * 32 + y, tx * 32 + x) = t.at(y, x);
        }
    REQUIRE(rebuilt.data == big.data);
}
