#include <gtest/gtest.h>

#include <filesystem>
#include <limits>
#include <random>

#include "vaf/io.hpp"

using namespace vaf;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() {
    const fs::path p = fs::temp_directory_path() / ("vaf_io_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                                    "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(p);
    return p;
}

AudioClip pcm_clip(std::size_t n, unsigned seed) {
    std::mt19937 gen(seed);
    std::uniform_int_distribution<int> d(-32768, 32767);
    AudioClip c;
    c.samples.resize(n);
    for (auto& s : c.samples) s = d(gen) / 32768.0;
    c.samples[0] = -1.0;
    c.samples[1] = 32767 / 32768.0;
    return c;
}

} // namespace

TEST(Wav, RoundTripIsBitExact) {
    const AudioClip clip = pcm_clip(8000, 1);
    const auto path = scratch_dir() / "a.wav";
    io::write_wav(path, clip);
    const AudioClip back = io::read_wav(path);
    EXPECT_EQ(back.sample_rate, 16000);
    EXPECT_EQ(back.samples, clip.samples);
    EXPECT_EQ(io::encode_wav(back), io::read_bytes(path));
    EXPECT_EQ(fs::file_size(path), 44u + 16000u);
}

TEST(Wav, QuantizesAndClamps) {
    AudioClip c;
    c.samples = {0.0, 1.0, -1.0, 2.0, -3.0, 0.5 / 32768.0, 1.4 / 32768.0};
    const AudioClip back = io::decode_wav(io::encode_wav(c));
    EXPECT_EQ(back.samples[0], 0.0);
    EXPECT_EQ(back.samples[1], 32767 / 32768.0);
    EXPECT_EQ(back.samples[2], -1.0);
    EXPECT_EQ(back.samples[3], 32767 / 32768.0);
    EXPECT_EQ(back.samples[4], -1.0);
    EXPECT_EQ(back.samples[6], 1 / 32768.0);
}

TEST(Wav, TruncatedFileReportsOffset) {
    const auto bytes = io::encode_wav(pcm_clip(100, 2));
    const std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + 120);
    try {
        io::decode_wav(cut);
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.offset(), 120u);
    }
    const std::vector<std::uint8_t> header_only(bytes.begin(), bytes.begin() + 10);
    EXPECT_THROW(io::decode_wav(header_only), ParseError);
}

TEST(Wav, BadMagicReportsOffset) {
    auto bytes = io::encode_wav(pcm_clip(10, 3));
    bytes[8] = 'X';
    try {
        io::decode_wav(bytes);
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.offset(), 8u);
    }
}

TEST(FloatBinary, RoundTripExact) {
    io::FloatArray a;
    a.shape = {3, 4, 2};
    std::mt19937 gen(4);
    std::normal_distribution<float> d(0.0f, 1e3f);
    for (int i = 0; i < 24; ++i) a.data.push_back(d(gen));
    a.data[0] = std::numeric_limits<float>::max();
    a.data[1] = std::numeric_limits<float>::denorm_min();
    a.data[2] = -0.0f;
    a.data[3] = std::numeric_limits<float>::lowest();
    const auto path = scratch_dir() / "x.vafb";
    io::write_float_array(path, a);
    const io::FloatArray b = io::read_float_array(path);
    EXPECT_EQ(b.shape, a.shape);
    ASSERT_EQ(b.data.size(), a.data.size());
    for (std::size_t i = 0; i < a.data.size(); ++i)
        EXPECT_EQ(std::memcmp(&a.data[i], &b.data[i], sizeof(float)), 0) << i;
}

TEST(FloatBinary, MalformedInput) {
    io::FloatArray a{{2, 2}, {1, 2, 3, 4}};
    auto bytes = io::encode_float_array(a);
    const std::vector<std::uint8_t> cut(bytes.begin(), bytes.end() - 3);
    EXPECT_THROW(io::decode_float_array(cut), ParseError);
    bytes[0] = 'Z';
    try {
        io::decode_float_array(bytes);
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.offset(), 0u);
    }
    io::FloatArray wrong{{3}, {1, 2}};
    EXPECT_THROW(io::encode_float_array(wrong), ArgumentError);
}

TEST(Png, RoundTripsEightBitValues) {
    Image img(5, 3, 3);
    for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<double>((i * 37) % 256) / 255.0;
    const auto path = scratch_dir() / "i.png";
    io::write_png(path, img);
    const Image back = io::read_png(path);
    ASSERT_EQ(back.width, 5);
    ASSERT_EQ(back.height, 3);
    for (std::size_t i = 0; i < img.data.size(); ++i) EXPECT_NEAR(back.data[i], img.data[i], 1e-12);
    EXPECT_THROW(io::write_png(path, Image(2, 2, 1)), ArgumentError);
}

TEST(JsonLines, RoundTripAndErrors) {
    const std::vector<nlohmann::json> records{{{"a", 1}}, {{"b", "x\ny"}}, {{"c", {1, 2}}}};
    const auto path = scratch_dir() / "m.jsonl";
    io::write_jsonl(path, records);
    EXPECT_EQ(io::read_jsonl(path), records);
    const std::string text = io::read_text(path);
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 3);
    try {
        io::parse_jsonl("{\"a\":1}\n{bad}\n");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_GE(e.offset(), 8u);
    }
}

TEST(Hash, KnownSha256Vector) {
    EXPECT_EQ(io::sha256_hex(std::string("abc")), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
