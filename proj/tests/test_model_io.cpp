#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "subact/model_io.hpp"
#include "support/temp_dir.hpp"

using namespace subact;
using subact::testing::TempDir;

namespace {

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void spit(const std::filesystem::path& p, const std::string& bytes) {
    std::ofstream(p, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST(ModelIo, RoundTripIsBitExact) {
    TempDir dir;
    std::mt19937_64 rng(1);
    for (int arity : {2, 3, 4, 10}) {
        auto net = init_network<float>(arity, rng());
        std::uniform_real_distribution<float> u(-1e3f, 1e3f);
        for (auto& t : net.params)
            for (auto& v : t.data)
                if (rng() % 7 == 0) v = u(rng);
        net[nn::fc1_b].data[0] = -0.0f;
        net[nn::fc1_b].data[1] = std::numeric_limits<float>::denorm_min();
        auto path = dir / ("m" + std::to_string(arity) + ".bin");
        save_model(net, path);
        auto back = load_model(path);
        EXPECT_EQ(back.arity, arity);
        for (int p = 0; p < nn::kParamCount; ++p) {
            ASSERT_EQ(back[p].dims, net[p].dims);
            ASSERT_EQ(std::memcmp(back[p].data.data(), net[p].data.data(), net[p].size() * sizeof(float)), 0);
        }
    }
}

TEST(ModelIo, HeaderLayout) {
    auto net = init_network<float>(3, 1);
    std::string bytes = encode_model(net);
    ASSERT_GE(bytes.size(), 11u);
    EXPECT_EQ(bytes.substr(0, 7), std::string("SACNN1\0", 7));
    EXPECT_EQ(static_cast<unsigned char>(bytes[7]), 3);
    EXPECT_EQ(bytes[8], 0);
    std::size_t expected = 11;
    for (const auto& t : net.params) expected += 4 + 4 * t.dims.size() + 4 * t.size();
    EXPECT_EQ(bytes.size(), expected);
    EXPECT_EQ(decode_model(bytes)[nn::fc3_w].dims[0], 3);
}

TEST(ModelIo, CorruptedMagic) {
    TempDir dir;
    save_model(init_network<float>(2, 1), dir / "m.bin");
    std::string bytes = slurp(dir / "m.bin");
    bytes[0] = 'X';
    spit(dir / "bad.bin", bytes);
    try {
        load_model(dir / "bad.bin");
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("magic"), std::string::npos);
    }
}

TEST(ModelIo, Truncated) {
    TempDir dir;
    save_model(init_network<float>(2, 1), dir / "m.bin");
    std::string bytes = slurp(dir / "m.bin");
    for (std::size_t cut : {std::size_t{3}, std::size_t{9}, bytes.size() / 2, bytes.size() - 1}) {
        spit(dir / "t.bin", bytes.substr(0, cut));
        EXPECT_THROW(load_model(dir / "t.bin"), FormatError) << "cut at " << cut;
    }
}

TEST(ModelIo, ArityMismatch) {
    auto net = init_network<float>(3, 1);
    std::string bytes = encode_model(net);
    bytes[7] = 4;  // header says 4, final layer holds 3
    EXPECT_THROW(decode_model(bytes), FormatError);
}

TEST(ModelIo, ShapeMismatch) {
    TensorFile file;
    file.arity = 2;
    file.tensors.push_back(Tensor<float>({3}, 1.0f));
    EXPECT_THROW(decode_model(encode_tensors(file)), FormatError);
    auto net = init_network<float>(2, 1);
    net[nn::conv1_w] = Tensor<float>({4, 1, 5, 4});
    EXPECT_THROW(decode_model(encode_model(net)), FormatError);
}

TEST(ModelIo, MissingFile) {
    TempDir dir;
    EXPECT_THROW(load_model(dir / "nope.bin"), DataError);
}

TEST(TensorFile, GenericRoundTrip) {
    TensorFile file;
    file.arity = 1;
    file.tensors.push_back(Tensor<float>({5}, 0.25f));
    file.tensors.push_back(Tensor<float>({1}, -3.0f));
    auto back = decode_tensors(encode_tensors(file));
    EXPECT_EQ(back.arity, 1u);
    ASSERT_EQ(back.tensors.size(), 2u);
    EXPECT_EQ(back.tensors[0], file.tensors[0]);
    EXPECT_EQ(back.tensors[1], file.tensors[1]);
}
