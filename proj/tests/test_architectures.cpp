#include <doctest.h>

#include <string>
#include <vector>

#include "dgpose/nn/architectures.hpp"
#include "dgpose/nn/network.hpp"
#include "layer_tables.hpp"

using namespace dgpose;
using namespace dgpose::nn;

namespace {

using dgpose::testing::Table;

void check_table(const NetworkSpec& spec, const Table& expected) {
    const Table got = testing::rendered(spec);
    REQUIRE(got.size() == expected.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
        INFO(spec.name << " row " << expected[i].first);
        CHECK(got[i].first == expected[i].first);
        CHECK(got[i].second == expected[i].second);
    }
}

}  // namespace

TEST_CASE("conditional networks reproduce the published tables") {
    check_table(build_conditional_encoder(), testing::kConditionalEncoder);
    check_table(build_prior(), testing::kPrior);
    check_table(build_conditional_decoder(), testing::kConditionalDecoder);
    check_table(build_discriminator(), testing::kDiscriminator);
}

TEST_CASE("semi-supervised networks reproduce the published tables") {
    check_table(build_semi_encoder(), testing::kSemiEncoder);
    check_table(build_mapper(), testing::kMapper);
    check_table(build_semi_decoder(), testing::kSemiDecoder);
    check_table(build_residual_block(), testing::kResidual);
}

TEST_CASE("reduced widths keep the table structure and interface sizes") {
    const double w = 1.0 / 16;
    auto enc = build_semi_encoder(w);
    for (const auto& h : enc.heads) {
        if (h.name.ends_with("_z")) CHECK(h.units == kLatentDim);
        if (h.name.ends_with("_y")) CHECK(h.units == kPoseDim);
    }
    CHECK(render_rows(build_conditional_decoder(w)).back().text == "CONV-(N3, K5, S1, P2), TANH");
    CHECK(render_rows(build_mapper(w)).back().text == "DECONV-(N24, K4, S2, P1), SIGMOID");
    CHECK(render_rows(build_discriminator(w)).back().text == "CONV-(N1, K4, S1, P0), SIGMOID");
    CHECK(render_rows(build_conditional_encoder(w))[1].text == "CONV-(N4, K7, S2, P1), LeakyReLU(0.01)");
}

TEST_CASE("head sizes: 100 for z, 48 for y_v") {
    for (const auto& spec : {build_conditional_encoder(), build_prior(), build_semi_encoder()}) {
        for (const auto& h : spec.heads) {
            INFO(spec.name << "." << h.name);
            if (h.name.find("_y") != std::string::npos) {
                CHECK(h.units == 48);
            } else {
                CHECK(h.units == 100);
            }
        }
    }
}

TEST_CASE("network outputs have the documented shapes") {
    CHECK(trunk_shape(build_conditional_decoder()) == Shape{1, 3, 64, 64});
    CHECK(trunk_shape(build_semi_decoder()) == Shape{1, 3, 64, 64});
    CHECK(trunk_shape(build_mapper()) == Shape{1, 24, 64, 64});
    CHECK(trunk_shape(build_discriminator()) == Shape{1, 1, 1, 1});
    CHECK(trunk_shape(build_prior()) == Shape{1, 100, 1, 1});
    CHECK(trunk_shape(build_conditional_encoder()) == Shape{1, 512, 1, 1});
    CHECK(trunk_shape(build_semi_encoder()) == Shape{1, 512, 1, 1});
}

TEST_CASE("parameter counts agree with an independent tally") {
    for (double w : {1.0 / 16, 1.0 / 8, 1.0}) {
        for (const auto& spec : {build_conditional_encoder(w), build_prior(w), build_conditional_decoder(w),
                                 build_discriminator(w), build_semi_encoder(w), build_mapper(w),
                                 build_semi_decoder(w)}) {
            INFO(spec.name << " width " << w);
            Network<float> net(spec);
            CHECK(net.parameter_count() == testing::count_parameters(spec));
        }
    }
}

TEST_CASE("parameter count regression") {
    // full-size discriminator, by hand: 3*64*16+64, 64*128*16+256, 128*256*16+512,
    // 256*512*16+1024, 512*16+1
    CHECK(Network<float>(build_discriminator()).parameter_count() == 2765633);

    const double w = 1.0 / 16;
    CHECK(Network<float>(build_conditional_encoder(w)).parameter_count() == 110856);
    CHECK(Network<float>(build_prior(w)).parameter_count() == 169012);
    CHECK(Network<float>(build_conditional_decoder(w)).parameter_count() == 106531);
    CHECK(Network<float>(build_discriminator(w)).parameter_count() == 11573);
    CHECK(Network<float>(build_semi_encoder(w)).parameter_count() == 109320);
    CHECK(Network<float>(build_mapper(w)).parameter_count() == 37008);
    CHECK(Network<float>(build_semi_decoder(w)).parameter_count() == 131107);
}

TEST_CASE("the residual block only composes on 1x1 maps") {
    CHECK_NOTHROW(propagate_shapes(build_residual_block(1, 1)));
    CHECK_THROWS_AS(propagate_shapes(build_residual_block(2, 2)), BuildError);
}

TEST_CASE("spec hashes are stable and width-sensitive") {
    CHECK(spec_hash(build_mapper()) == spec_hash(build_mapper()));
    CHECK(spec_hash(build_mapper()) != spec_hash(build_mapper(0.5)));
    CHECK(spec_hash(build_conditional_decoder()) != spec_hash(build_semi_decoder()));
    CHECK(spec_hash(build_prior()).size() == 64);
}

TEST_CASE("sha256 known answer") {
    CHECK(sha256_hex("abc", 3) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
