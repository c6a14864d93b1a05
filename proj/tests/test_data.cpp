#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dr/data.hpp"
#include "dr/models.hpp"

using namespace dr;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("dr_data_test_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const {
    return (path / name).string();
  }
};

bool same_dataset(const Dataset& a, const Dataset& b) {
  return a.images == b.images && a.labels == b.labels &&
         a.num_classes == b.num_classes;
}

}  // namespace

TEST_CASE("idx round-trip, plain and gzip variants identical") {
  TempDir tmp;
  Dataset src = make_synth_digits(3, 12, 5, "t");
  save_idx(src, tmp.file("img"), tmp.file("lbl"), false);
  Dataset a = load_idx(tmp.file("img"), tmp.file("lbl"), false);
  CHECK(a.size() == 30);
  CHECK(a.images.shape() == Shape{30, 12, 12});
  CHECK(a.labels == src.labels);
  for (std::size_t i = 0; i < a.images.size(); ++i) {
    CHECK(a.images[i] >= 0.0f);
    CHECK(a.images[i] <= 1.0f);
    // u8 quantization bound
    CHECK(std::abs(a.images[i] - src.images[i]) <= 0.5f / 255.0f + 1e-6f);
  }

  // once on the u8 grid, the round trip is exact
  save_idx(a, tmp.file("img2"), tmp.file("lbl2"), false);
  Dataset b = load_idx(tmp.file("img2"), tmp.file("lbl2"), false);
  CHECK(same_dataset(a, b));

  save_idx(a, tmp.file("img3.gz"), tmp.file("lbl3.gz"), true);
  Dataset c = load_idx(tmp.file("img3.gz"), tmp.file("lbl3.gz"), true);
  CHECK(same_dataset(a, c));
  // the reader is codec-transparent
  Dataset d = load_idx(tmp.file("img3.gz"), tmp.file("lbl3.gz"), false);
  CHECK(same_dataset(a, d));
}

TEST_CASE("idx error contracts: magic, count mismatch, truncation") {
  TempDir tmp;
  Dataset ten = make_synth_digits(1, 10, 5, "t10");
  Dataset nine = take(ten, {0, 1, 2, 3, 4, 5, 6, 7, 8});
  save_idx(ten, tmp.file("i10"), tmp.file("l10"), false);
  save_idx(nine, tmp.file("i9"), tmp.file("l9"), false);

  // swapped roles: a labels file carries magic 0x00000801, not 0x00000803
  CHECK_THROWS_AS(load_idx(tmp.file("l10"), tmp.file("l10"), false),
                  FormatError);
  CHECK_THROWS_AS(load_idx(tmp.file("i10"), tmp.file("i10"), false),
                  FormatError);
  CHECK_THROWS_AS(load_idx(tmp.file("i10"), tmp.file("l9"), false),
                  FormatError);

  auto bytes = [&](const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  std::string img = bytes(tmp.file("i10"));
  std::ofstream(tmp.file("trunc"), std::ios::binary)
      << img.substr(0, img.size() / 2);
  CHECK_THROWS_AS(load_idx(tmp.file("trunc"), tmp.file("l10"), false),
                  IoError);
  CHECK_THROWS_AS(load_idx(tmp.file("missing"), tmp.file("l10"), false),
                  IoError);
}

TEST_CASE("blobs are deterministic with fixed per-class centers") {
  Dataset a = make_blobs(4, 25, 2, 0.3, 9);
  Dataset b = make_blobs(4, 25, 2, 0.3, 9);
  CHECK(same_dataset(a, b));
  CHECK(a.size() == 100);
  CHECK(a.num_classes == 4);

  Dataset c = make_blobs(4, 25, 2, 0.3, 10);
  CHECK(a.images == a.images);
  CHECK(!(a.images == c.images));
  CHECK_THROWS_AS(make_blobs(0, 5, 2, 0.3, 1), ContractError);
  CHECK_THROWS_AS(make_blobs(3, 5, 2, 0.0, 1), ContractError);
}

TEST_CASE("near-zero spread blobs are solved by nearest center") {
  Dataset ds = make_blobs(5, 20, 3, 1e-6, 4);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const float* p = ds.images.data() + i * 3;
    int best = -1;
    double bestd = 1e18;
    for (int c = 0; c < 5; ++c) {
      const double ang = 2.0 * M_PI * c / 5;
      const double dx = p[0] - std::cos(ang), dy = p[1] - std::sin(ang),
                   dz = p[2];
      const double d2 = dx * dx + dy * dy + dz * dz;
      if (d2 < bestd) {
        bestd = d2;
        best = c;
      }
    }
    hits += best == ds.labels[i];
  }
  CHECK(hits == ds.size());
}

TEST_CASE("4-class blobs are linearly learnable to 0.95") {
  Dataset train = make_blobs(4, 100, 2, 0.3, 11);
  ModelSpec spec{ModelKind::mlp, {2}, {}, 4};
  Params<double> p = init_params<double>(spec, {}, 1);
  Tensor<double> x = gather_images<double>(train, [&] {
    std::vector<std::size_t> all(train.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return all;
  }());
  Tensor<double> y = one_hot<double>(train.labels, 4);
  for (int step = 0; step < 300; ++step) {
    Graph<double> g;
    auto pv = param_leaves(g, p, true);
    Var l = loss(spec, g, pv, g.constant(x), g.constant(y));
    auto gs = grad(g, l, std::span<const Var>(pv));
    for (std::size_t i = 0; i < p.tensors.size(); ++i)
      for (std::size_t k = 0; k < p.tensors[i].size(); ++k)
        p.tensors[i][k] -= 0.5 * gs[i][k];
  }
  CHECK(accuracy(spec, p, train) >= 0.95);
}

TEST_CASE("downscale averages 2x2 windows and preserves the mean") {
  Dataset src = make_synth_digits(2, 28, 3, "s");
  Dataset half = downscale(src, 2);
  CHECK(half.images.shape() == Shape{20, 14, 14});
  CHECK(half.labels == src.labels);
  double m0 = 0, m1 = 0;
  for (std::size_t i = 0; i < src.images.size(); ++i) m0 += src.images[i];
  for (std::size_t i = 0; i < half.images.size(); ++i) m1 += half.images[i];
  CHECK(m0 / double(src.images.size()) ==
        doctest::Approx(m1 / double(half.images.size())).epsilon(1e-9));

  Dataset flat;
  flat.name = "const";
  flat.num_classes = 1;
  flat.images = Tensor<float>::full({1, 4, 4}, 0.37f);
  flat.labels = {0};
  Dataset down = downscale(flat, 2);
  for (std::size_t i = 0; i < down.images.size(); ++i)
    CHECK(down.images[i] == doctest::Approx(0.37f));

  Dataset odd;
  odd.num_classes = 1;
  odd.images = Tensor<float>({1, 5, 4});
  odd.labels = {0};
  CHECK_THROWS_AS(downscale(odd, 2), ShapeError);
}

TEST_CASE("synth digits: range, determinism, classes, learnability") {
  Dataset a = make_synth_digits(20, 28, 77, "synth");
  Dataset b = make_synth_digits(20, 28, 77, "synth");
  CHECK(same_dataset(a, b));
  CHECK(a.size() == 200);
  CHECK(a.num_classes == 10);
  for (std::size_t i = 0; i < a.images.size(); ++i) {
    CHECK(a.images[i] >= 0.0f);
    CHECK(a.images[i] <= 1.0f);
  }
  // per-class variation: two samples of the same digit differ
  const std::size_t d = a.example_numel();
  double diff = 0;
  for (std::size_t j = 0; j < d; ++j)
    diff += std::abs(a.images[j] - a.images[d + j]);
  CHECK(diff / d > 0.01);
}

TEST_CASE("subsample_per_class caps class counts deterministically") {
  Dataset src = make_synth_digits(50, 12, 13, "s");
  Dataset sub = subsample_per_class(src, 7, 99);
  CHECK(sub.size() == 70);
  std::vector<int> counts(10, 0);
  for (int l : sub.labels) counts[std::size_t(l)]++;
  for (int c : counts) CHECK(c == 7);
  Dataset sub2 = subsample_per_class(src, 7, 99);
  CHECK(same_dataset(sub, sub2));
  Dataset all = subsample_per_class(src, 1000, 99);
  CHECK(all.size() == src.size());
}

TEST_CASE("split_fraction partitions without overlap") {
  Dataset src = make_synth_digits(30, 12, 21, "s");
  auto [rest, held] = split_fraction(src, 0.1, 5);
  CHECK(rest.size() + held.size() == src.size());
  CHECK(held.size() == 30);
  Dataset joined = concat(rest, held);
  std::vector<int> c0(10, 0), c1(10, 0);
  for (int l : src.labels) c0[std::size_t(l)]++;
  for (int l : joined.labels) c1[std::size_t(l)]++;
  CHECK(c0 == c1);
}
