// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include "osketch/errors.hpp"
#include "osketch/toy_backend.hpp"

#include <doctest.h>

#include <cstdlib>

using namespace osketch;
using namespace osketch::testing;

TEST_CASE("encode of a black image is the codec bias") {
    const ToyBackend b;
    const LatentImage z = b.encode_image(Image(8, 8, 3, 0.0));
    CHECK(bitwise_equal(z.data, b.parameters().codec_bias));
    CHECK(z.shape == LatentShape{12, 4, 4});
}

TEST_CASE("codec round trip") {
    const ToyBackend b;
    const Image x = random_image(8, 8, 1);
    const DecodedImage back = b.decode_latent(b.encode_image(x));
    double worst = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) worst = std::max(worst, std::abs(back.image.pixels[i] - x.pixels[i]));
    CHECK(worst < 1e-6);
    CHECK(back.clamped == 0);
}

TEST_CASE("distinct images give distinct latents") {
    const ToyBackend b;
    const auto z1 = b.encode_image(random_image(8, 8, 10));
    const auto z2 = b.encode_image(random_image(8, 8, 11));
    CHECK((z1.data - z2.data).norm() > 0.0);
}

TEST_CASE("decode of the zero latent is the codec offset image") {
    const ToyBackend b;
    const auto& P = b.parameters();
    const Eigen::VectorXd offset = -(P.codec.transpose() * P.codec_bias);
    const DecodedImage out = b.decode_latent(LatentImage::zeros(b.descriptor().latent_shape));
    std::size_t clamped = 0;
    for (Eigen::Index i = 0; i < offset.size(); ++i) {
        const double expect = std::clamp(offset[i], 0.0, 1.0);
        if (expect != offset[i]) ++clamped;
        CHECK(out.image.pixels[static_cast<std::size_t>(i)] == doctest::Approx(expect).epsilon(1e-12));
    }
    CHECK(out.clamped == clamped);
}

TEST_CASE("out-of-range latents are clamped and counted") {
    const ToyBackend b;
    const DecodedImage out = b.decode_latent(LatentImage::constant(b.descriptor().latent_shape, 50.0));
    CHECK(out.clamped > 0);
    for (double p : out.image.pixels) CHECK((p >= 0.0 && p <= 1.0));
}

TEST_CASE("image shape is enforced") {
    const ToyBackend b;
    CHECK_THROWS_AS(b.encode_image(Image(6, 8, 3)), ShapeError);
    CHECK_THROWS_AS(b.encode_image(Image(8, 8, 1)), ShapeError);
    Image bad(8, 8, 3, 0.5);
    bad.pixels[3] = std::nan("");
    CHECK_THROWS_AS(b.encode_image(bad), NonFiniteError);
}

TEST_CASE("predict_noise on zero inputs with text dropped is the timestep bias") {
    const ToyBackend b;
    const auto shape = b.descriptor().latent_shape;
    const InstructionEmbedding c = b.init_instruction(random_image(8, 8, 2), InitMode::random, 4, 1);
    for (int t : {0, 1, 500, 1000}) {
        const LatentImage eps = b.predict_noise(LatentImage::zeros(shape), t, c, LatentImage::zeros(shape), true, false);
        CHECK(bitwise_equal(eps.data, b.parameters().timestep_bias.row(t).transpose()));
    }
    CHECK_THROWS_AS(b.predict_noise(LatentImage::zeros(shape), 1001, c, LatentImage::zeros(shape), true, false),
                    TimestepError);
    CHECK_THROWS_AS(b.predict_noise(LatentImage::zeros(shape), -1, c, LatentImage::zeros(shape), true, false),
                    TimestepError);
}

TEST_CASE("predict_noise is deterministic") {
    const ToyBackend b1, b2;
    const auto shape = b1.descriptor().latent_shape;
    const InstructionEmbedding c = b1.init_instruction(random_image(8, 8, 2), InitMode::random, 4, 1);
    const auto z = random_latent(shape, 3);
    const auto zp = random_latent(shape, 4);
    CHECK(bitwise_equal(b1.predict_noise(z, 17, c, zp, false, false).data,
                        b2.predict_noise(z, 17, c, zp, false, false).data));
}

TEST_CASE("token Jacobian matches finite differences") {
    const ToyBackend b;
    const auto shape = b.descriptor().latent_shape;
    const InstructionEmbedding c = b.init_instruction(random_image(8, 8, 2), InitMode::random, 6, 1);
    const auto z = random_latent(shape, 3);
    const auto zp = random_latent(shape, 4);
    const Eigen::VectorXd g = random_latent(shape, 5).data;
    const TokenMatrix analytic = b.predict_noise_token_vjp(z, 250, c, zp, g);
    TokenMatrix numeric(c.tokens.rows(), c.tokens.cols());
    const double h = 1e-5;
    for (Eigen::Index r = 0; r < c.tokens.rows(); ++r) {
        for (Eigen::Index j = 0; j < c.tokens.cols(); ++j) {
            InstructionEmbedding p = c, m = c;
            p.tokens(r, j) += h;
            m.tokens(r, j) -= h;
            numeric(r, j) = g.dot(b.predict_noise(z, 250, p, zp, false, false).data -
                                  b.predict_noise(z, 250, m, zp, false, false).data) /
                            (2 * h);
        }
    }
    CHECK(relative_error(analytic, numeric) < 1e-6);
}

TEST_CASE("image embedding") {
    const ToyBackend b;
    const Image x = random_image(8, 8, 21);
    const JointVector e = b.embed_image(x);
    CHECK(std::abs(e.data.norm() - 1.0) < 1e-9);
    CHECK(bitwise_equal(e.data, b.embed_image(x).data));
    Image flipped = x;
    flipped.at(3, 4, 1) = 1.0 - flipped.at(3, 4, 1);
    CHECK(e.data.dot(b.embed_image(flipped).data) < 1.0);
    CHECK(e.data.size() == b.descriptor().joint_dim);
}

TEST_CASE("instruction embedding of zero tokens is the normalized bias") {
    const ToyBackend b;
    InstructionEmbedding c = b.init_instruction(random_image(8, 8, 2), InitMode::random, 5, 1);
    c.tokens.setZero();
    const Eigen::VectorXd w = b.parameters().instruction_bias;
    const JointVector e = b.embed_instruction(c);
    CHECK((e.data - w / w.norm()).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("instruction embedding pools only learnable rows") {
    const ToyBackend b;
    InstructionEmbedding c = b.init_instruction(random_image(8, 8, 2), InitMode::random, 3, 1);
    const JointVector before = b.embed_instruction(c);
    const TokenMatrix extra = b.embed_text("white background");
    TokenMatrix all(c.n_tokens() + extra.rows(), c.token_dim());
    all << c.tokens, extra;
    c.tokens = all;
    c.learnable_mask.resize(static_cast<std::size_t>(all.rows()), false);
    CHECK(bitwise_equal(b.embed_instruction(c).data, before.data));
}

TEST_CASE("instruction VJP matches finite differences") {
    const ToyBackend b;
    const InstructionEmbedding c = b.init_instruction(random_image(8, 8, 2), InitMode::random, 4, 3);
    Eigen::VectorXd g(b.descriptor().joint_dim);
    Rng rng(9);
    for (Eigen::Index i = 0; i < g.size(); ++i) g[i] = rng.normal();
    const TokenMatrix analytic = b.embed_instruction_vjp(c, g);
    TokenMatrix numeric(c.tokens.rows(), c.tokens.cols());
    const double h = 1e-6;
    for (Eigen::Index r = 0; r < c.tokens.rows(); ++r) {
        for (Eigen::Index j = 0; j < c.tokens.cols(); ++j) {
            InstructionEmbedding p = c, m = c;
            p.tokens(r, j) += h;
            m.tokens(r, j) -= h;
            numeric(r, j) = g.dot(b.embed_instruction(p).data - b.embed_instruction(m).data) / (2 * h);
        }
    }
    CHECK(relative_error(analytic, numeric) < 1e-6);
}

TEST_CASE("init_instruction modes") {
    const ToyBackend b;
    const Image sketch = random_image(8, 8, 2);
    const auto r = b.init_instruction(sketch, InitMode::random, 5, 42);
    CHECK(r.tokens.rows() == 5);
    CHECK(r.tokens.cols() == 16);
    CHECK(r.n_learnable() == 5);
    CHECK(r.provenance == Provenance::random_init);
    CHECK(bitwise_equal(r.tokens, b.init_instruction(sketch, InitMode::random, 5, 42).tokens));
    CHECK_FALSE(bitwise_equal(r.tokens, b.init_instruction(sketch, InitMode::random, 5, 43).tokens));

    const auto f1 = b.init_instruction(sketch, InitMode::fixed, 10, 1);
    const auto f2 = b.init_instruction(sketch, InitMode::fixed, 10, 1);
    CHECK(bitwise_equal(f1.tokens, f2.tokens));
    CHECK(f1.n_learnable() == 10);

    CHECK_THROWS_AS(b.init_instruction(sketch, InitMode::caption, 10, 1), UnsupportedError);
    CHECK_THROWS_AS(b.init_instruction(sketch, InitMode::random, 0, 1), ValidationError);
    CHECK_THROWS_AS(b.init_instruction(sketch, InitMode::random, 78, 1), TokenOverflowError);
    CHECK(parse_init_mode("fixed") == InitMode::fixed);
    CHECK_THROWS_AS(parse_init_mode("bogus"), ValidationError);
}

TEST_CASE("embed_text") {
    const ToyBackend b;
    const TokenMatrix t = b.embed_text("Covert the image, color!");
    CHECK(t.rows() == 4);
    CHECK(bitwise_equal(t.row(0), b.word_embedding("covert")));
    CHECK(b.embed_text("").rows() == 0);
    CHECK(b.embed_text("covert the image color to black and white with a white background").rows() == 12);
    CHECK(tokenize_words("It's  a TEST.") == std::vector<std::string>{"it's", "a", "test"});
}

TEST_CASE("perceptual features have three halving layers") {
    const ToyBackend b;
    const auto layers = b.perceptual_features(random_image(8, 8, 3));
    REQUIRE(layers.size() == 3);
    CHECK(layers[0].rows() == 64);
    CHECK(layers[1].rows() == 16);
    CHECK(layers[2].rows() == 4);
    CHECK(layers[0].cols() == 8);
    CHECK(b.distribution_features(random_image(8, 8, 3)).size() == 24);
    CHECK(b.perceptual_features(random_image(5, 7, 3, 1)).size() == 3);
}

TEST_CASE("toy descriptor") {
    const ToyBackend b;
    const auto& d = b.descriptor();
    CHECK(d.name == "toy");
    CHECK(d.deterministic);
    CHECK(d.token_dim == 16);
    CHECK(d.joint_dim == 8);
    CHECK(d.max_tokens == 77);
    CHECK(d.num_timesteps == 1000);
    CHECK_NOTHROW(d.validate());
    ToyBackendOptions odd;
    odd.image_size = 7;
    CHECK_THROWS_AS(ToyBackend{odd}, ValidationError);
}

TEST_CASE("backend factory") {
    BackendSpec spec;
    spec.seed = 4;
    const auto toy = make_backend(spec);
    CHECK(toy->descriptor().name == "toy");

    BackendSpec pre;
    pre.name = "pretrained";
    pre.checkpoint = "definitely-missing-checkpoint-id";
    ::unsetenv("OSS_CACHE");
    CHECK_THROWS_AS(make_backend(pre), IoError);

    TempDir cache("cache");
    std::filesystem::create_directories(cache.path() / "sd-ckpt");
    ::setenv("OSS_CACHE", cache.path().c_str(), 1);
    pre.checkpoint = "sd-ckpt";
    CHECK(resolve_checkpoint("sd-ckpt") == (cache.path() / "sd-ckpt").string());
    CHECK_THROWS_AS(make_backend(pre), UnsupportedError);

    register_backend_factory("pretrained", [](const BackendSpec& s) {
        ToyBackendOptions o;
        o.seed = s.seed;
        return std::make_shared<const ToyBackend>(o);
    });
    CHECK(make_backend(pre)->descriptor().name == "toy");
    ::unsetenv("OSS_CACHE");

    BackendSpec unknown;
    unknown.name = "nope";
    CHECK_THROWS_AS(make_backend(unknown), UnsupportedError);

    const BackendDescriptor real = pretrained_descriptor_defaults();
    CHECK(real.latent_shape == LatentShape{4, 64, 64});
    CHECK(real.max_tokens == 77);
}
