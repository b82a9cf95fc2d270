#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <limits>

#include "progdit/codec.hpp"
#include "progdit/dataio.hpp"
#include "progdit/errors.hpp"
#include "progdit/rng.hpp"

using namespace progdit;

namespace {

Tensor random_image(Rng& rng, int64_t n, DType dt = DType::kF64) {
  Tensor t = Tensor::zeros({1, n, n}, dt);
  for (int64_t i = 0; i < t.numel(); ++i) t.set_value(i, rng.uniform());
  return t;
}

std::vector<Tensor> phantom_images(int count, uint64_t seed, DType dt) {
  std::vector<Tensor> out;
  Rng rng(seed);
  const double dts[5] = {0, 6, 12, 24, 36};
  for (int i = 0; i < count; ++i) {
    const auto params = PhantomParams::for_subject(rng.next_u64(), 64, 0.004);
    const Image img = phantom_generate(params, Diagnosis::kMCI, dts[i % 5], 64);
    out.push_back(image_to_tensor(img, dt));
  }
  return out;
}

}  // namespace

TEST_CASE("latent shapes follow the factor-8 contract") {
  Rng rng(1);
  const auto codec = FixedCodec::factor8();
  CHECK(codec.spatial_factor() == 8);
  Latent z256 = codec.encode(random_image(rng, 256));
  CHECK(z256.data.shape() == std::vector<int64_t>{4, 32, 32});
  CHECK(z256.scaled);
  Latent z64 = codec.encode(random_image(rng, 64));
  CHECK(z64.data.shape() == std::vector<int64_t>{4, 8, 8});
  CHECK_THROWS_AS(codec.encode(Tensor::zeros({1, 60, 64})), ConfigError);
}

TEST_CASE("trainable codec also reduces by exactly 8") {
  TrainableCodec codec(8, 12, DType::kF64, 3);
  Rng rng(2);
  Latent z = codec.encode(random_image(rng, 64));
  CHECK(z.data.shape() == std::vector<int64_t>{4, 8, 8});
  CHECK(z.scaled);
}

TEST_CASE("invertible configuration: structural transform is bit-exact") {
  Rng rng(3);
  const auto codec = FixedCodec::invertible2();
  Tensor img = random_image(rng, 16);
  Tensor z = codec.forward_transform(img);
  CHECK(z.shape() == std::vector<int64_t>{4, 8, 8});
  Tensor back = codec.inverse_transform(z);
  CHECK(std::memcmp(back.data<double>().data(), img.data<double>().data(),
                    sizeof(double) * img.numel()) == 0);
}

TEST_CASE("invertible roundtrip through the latent scale is within one ulp") {
  // multiplying by 0.13025 and dividing back cannot be bit-exact for every
  // double (the contraction merges neighboring values); the structural
  // transform is exact, the scale pair is correct to <= 1 ulp
  Rng rng(4);
  const auto codec = FixedCodec::invertible2();
  Tensor img = random_image(rng, 16);
  Tensor back = codec.decode(codec.encode(img));
  int64_t exact = 0;
  for (int64_t i = 0; i < img.numel(); ++i) {
    const double a = img.value_at(i), b = back.value_at(i);
    CHECK(std::abs(a - b) <= std::abs(std::nexttoward(a, 2.0) - a));  // <= 1 ulp
    if (a == b) ++exact;
  }
  CHECK(exact > img.numel() * 9 / 10);  // the overwhelming majority is exact
}

TEST_CASE("scale applied exactly once and decode demands it") {
  Rng rng(5);
  const auto codec = FixedCodec::invertible2();
  Tensor img = random_image(rng, 16);
  Latent z = codec.encode(img);
  CHECK(z.scaled);
  // structural transform output times the constant equals the encode output
  Tensor raw = codec.forward_transform(img);
  for (int64_t i = 0; i < raw.numel(); ++i)
    CHECK(z.data.value_at(i) == raw.value_at(i) * LatentCodec::kLatentScale);
  Latent unscaled{z.data, false};
  CHECK_THROWS_AS(codec.decode(unscaled), NumericError);
}

TEST_CASE("fixed codec decode of the zero latent is the zero image") {
  const auto codec = FixedCodec::factor8();
  Latent z{Tensor::zeros({4, 8, 8}), true};
  Tensor img = codec.decode(z);
  for (int64_t i = 0; i < img.numel(); ++i) CHECK(img.value_at(i) == 0.0);
}

TEST_CASE("fixed codec is deterministic") {
  Rng rng(6);
  Tensor img = random_image(rng, 64);
  const auto c1 = FixedCodec::factor8();
  const auto c2 = FixedCodec::factor8();
  Latent z1 = c1.encode(img);
  Latent z2 = c2.encode(img);
  CHECK(std::memcmp(z1.data.data<double>().data(), z2.data.data<double>().data(),
                    sizeof(double) * z1.data.numel()) == 0);
}

TEST_CASE("trainable codec training reduces reconstruction error") {
  const auto images = phantom_images(40, 77, DType::kF64);
  TrainableCodec codec(16, 24, DType::kF64, 9);
  const double before = codec_reconstruction_mse(codec, images);
  CodecTrainConfig cfg;
  cfg.steps = 120;
  cfg.batch = 8;
  cfg.lr = 2e-3;
  cfg.seed = 5;
  const auto res = codec.train(images, cfg);
  codec.calibrate(images);
  const double after = codec_reconstruction_mse(codec, images);
  CHECK(after < before);
  CHECK(res.final_mse < 0.05);
}

TEST_CASE("calibrated latents land near unit scale") {
  const auto images = phantom_images(30, 99, DType::kF64);
  TrainableCodec codec(16, 24, DType::kF64, 21);
  CodecTrainConfig cfg;
  cfg.steps = 150;
  cfg.batch = 8;
  cfg.seed = 6;
  codec.train(images, cfg);
  codec.calibrate(images);
  double sum = 0, sumsq = 0;
  int64_t n = 0;
  for (const auto& img : images) {
    Latent z = codec.encode(img);
    for (int64_t i = 0; i < z.data.numel(); ++i) {
      sum += z.data.value_at(i);
      sumsq += z.data.value_at(i) * z.data.value_at(i);
      ++n;
    }
  }
  const double mean = sum / n;
  const double sd = std::sqrt(sumsq / n - mean * mean);
  CHECK(std::abs(mean) < 0.1);
  CHECK(sd > 0.5);
  CHECK(sd < 2.0);
  // recorded stats reproduce the applied normalization
  const auto [mu, sigma] = codec.latent_stats();
  CHECK(mu.size() == 4);
  for (double s : sigma) CHECK(s > 0.0);
}

TEST_CASE("trainable codec save/load roundtrip is exact") {
  const auto images = phantom_images(10, 33, DType::kF32);
  TrainableCodec codec(8, 12, DType::kF32, 31);
  CodecTrainConfig cfg;
  cfg.steps = 30;
  cfg.batch = 4;
  cfg.seed = 7;
  codec.train(images, cfg);
  codec.calibrate(images);
  codec.save("/tmp/progdit_codec_test.bin");
  const auto back = TrainableCodec::load("/tmp/progdit_codec_test.bin");
  Latent z1 = codec.encode(images[0]);
  Latent z2 = back.encode(images[0]);
  CHECK(std::memcmp(z1.data.data<float>().data(), z2.data.data<float>().data(),
                    sizeof(float) * z1.data.numel()) == 0);
}

TEST_CASE("codec training aborts on non-finite loss with state retained") {
  auto images = phantom_images(10, 55, DType::kF64);
  images[0].set_value(5, std::numeric_limits<double>::quiet_NaN());
  TrainableCodec codec(8, 12, DType::kF64, 41);
  CodecTrainConfig cfg;
  cfg.steps = 200;
  cfg.batch = 10;  // every batch touches the poisoned image
  cfg.seed = 8;
  CHECK_THROWS_AS(codec.train(images, cfg), NumericError);
  // parameters restored to the last finite snapshot: encode stays finite
  Latent z = codec.encode(images[1]);
  for (int64_t i = 0; i < z.data.numel(); ++i) CHECK(std::isfinite(z.data.value_at(i)));
}
