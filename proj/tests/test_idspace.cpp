#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "doctest.h"
#include "piu/errors.hpp"
#include "piu/idspace.hpp"
#include "piu/rng.hpp"
#include "test_support.hpp"

using namespace piu::idspace;
using piu::Rng;
using piu::Vec;

namespace {

// One embedding per identity with a chosen cosine against identity 0.
IdentityDataset dataset_with_cosines(const std::vector<double>& cosines) {
  IdentityDataset ds;
  ds.dim = 3;
  ds.num_identities = static_cast<int>(cosines.size()) + 1;
  ds.samples.push_back({Vec{1.0, 0.0, 0.0}, 0, Split::RetainTrain});
  int label = 1;
  for (double s : cosines) {
    ds.samples.push_back(
        {Vec{s, std::sqrt(1.0 - s * s), 0.0}, label++, Split::RetainTrain});
  }
  ds.rebuild_index();
  return ds;
}

}  // namespace

TEST_CASE("split names round-trip") {
  for (Split s : {Split::ForgetTrain, Split::ForgetVal, Split::RetainTrain,
                  Split::RetainVal}) {
    CHECK(split_from_name(split_name(s)) == s);
  }
  CHECK_THROWS(split_from_name("bogus"));
}

TEST_CASE("generated identities have the declared shape") {
  auto ds = generate_identities(5, 7, 0.03, 16, 2);
  CHECK(ds.dim == 16);
  CHECK(ds.num_identities == 5);
  REQUIRE(ds.samples.size() == 35);
  REQUIRE(ds.by_identity.size() == 5);
  REQUIRE(ds.centroids.size() == 5);
  CHECK(ds.forget_identity == -1);
  for (const auto& idx : ds.by_identity) CHECK(idx.size() == 7);
  for (const auto& s : ds.samples) {
    double n2 = 0.0;
    for (double x : s.values) n2 += x * x;
    CHECK(n2 == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("generation is deterministic in the seed") {
  auto a = generate_identities(4, 3, 0.05, 8, 11);
  auto b = generate_identities(4, 3, 0.05, 8, 11);
  auto c = generate_identities(4, 3, 0.05, 8, 12);
  bool equal = true, differs = false;
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    equal &= a.samples[i].values == b.samples[i].values;
    differs |= a.samples[i].values != c.samples[i].values;
  }
  CHECK(equal);
  CHECK(differs);
}

TEST_CASE("samples concentrate around their identity centroid") {
  auto ds = generate_identities(6, 10, 0.03, 16, 3);
  for (int id = 0; id < 6; ++id) {
    for (int i : ds.by_identity[id]) {
      CHECK(testsup::raw_cosine(ds.samples[i].values, ds.centroids[id]) > 0.98);
    }
  }
  // distinct identities point in well-separated directions
  for (int a = 0; a < 6; ++a) {
    for (int b = a + 1; b < 6; ++b) {
      CHECK(std::fabs(testsup::raw_cosine(ds.centroids[a], ds.centroids[b])) <
            0.9);
    }
  }
}

TEST_CASE("default splits are 90/10 retain with the tail as validation") {
  auto ds = generate_identities(3, 10, 0.05, 8, 4);
  for (int id = 0; id < 3; ++id) {
    CHECK(ds.split_indices(id, Split::RetainTrain).size() == 9);
    const auto val = ds.split_indices(id, Split::RetainVal);
    REQUIRE(val.size() == 1);
    CHECK(val[0] == ds.by_identity[id].back());
  }
}

TEST_CASE("assign_splits repartitions around the forget identity") {
  auto ds = generate_identities(4, 7, 0.05, 8, 5);
  assign_splits(ds, 2);
  CHECK(ds.forget_identity == 2);
  // 7 samples: forget split 5/2 (val = round(0.35 * 7) = 2, taken last)
  CHECK(ds.split_indices(2, Split::ForgetTrain).size() == 5);
  const auto fval = ds.split_indices(2, Split::ForgetVal);
  REQUIRE(fval.size() == 2);
  CHECK(fval[0] == ds.by_identity[2][5]);
  CHECK(fval[1] == ds.by_identity[2][6]);
  for (int id : {0, 1, 3}) {
    CHECK(ds.split_indices(id, Split::RetainTrain).size() == 6);
    CHECK(ds.split_indices(id, Split::RetainVal).size() == 1);
    CHECK(ds.split_indices(id, Split::ForgetTrain).empty());
  }
}

TEST_CASE("centroid is the plain mean, not renormalized") {
  const Vec c = centroid({Vec{1.0, 0.0}, Vec{0.0, 1.0}});
  CHECK(c[0] == doctest::Approx(0.5));
  CHECK(c[1] == doctest::Approx(0.5));
}

TEST_CASE("cosine_sim hand values") {
  CHECK(cosine_sim(Vec{1, 0}, Vec{0, 2}) == doctest::Approx(0.0));
  CHECK(cosine_sim(Vec{1, 1}, Vec{2, 2}) == doctest::Approx(1.0));
  CHECK(cosine_sim(Vec{1, 0}, Vec{-3, 0}) == doctest::Approx(-1.0));
}

TEST_CASE("clustering groups nearby directions and flags isolates") {
  auto dir = [](double deg) {
    const double r = deg * 3.14159265358979323846 / 180.0;
    return Vec{std::cos(r), std::sin(r)};
  };
  const std::vector<Vec> pts = {dir(0),  dir(5),  dir(10),
                                dir(90), dir(95), dir(180)};
  const auto labels = cluster_identities(pts, 0.35, 2);
  REQUIRE(labels.size() == 6);
  CHECK(labels[0] == 0);
  CHECK(labels[1] == 0);
  CHECK(labels[2] == 0);
  CHECK(labels[3] == 1);
  CHECK(labels[4] == 1);
  CHECK(labels[5] == -1);
}

TEST_CASE("clustering matches the reference implementation on random data") {
  Rng rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    const int n_centers = 2 + static_cast<int>(rng.uniform_below(3));
    std::vector<Vec> pts;
    std::vector<Vec> centers;
    for (int c = 0; c < n_centers; ++c) centers.push_back(rng.normal_vec(4));
    const int n = 10 + static_cast<int>(rng.uniform_below(30));
    for (int i = 0; i < n; ++i) {
      if (rng.uniform01() < 0.15) {
        pts.push_back(rng.normal_vec(4));  // scatter
      } else {
        const auto& c = centers[rng.uniform_below(n_centers)];
        Vec p = c;
        for (auto& x : p) x += 0.1 * rng.normal();
        pts.push_back(p);
      }
    }
    const auto got = cluster_identities(pts, 0.35, 2);
    const auto want = testsup::reference_dbscan(pts, 0.35, 2);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == want[i]);
  }
}

TEST_CASE("anchor candidates are exactly the tolerance band") {
  auto ds = dataset_with_cosines({0.195, 0.205, 0.30, -0.5});
  AnchorQuery q;
  q.forget_identity = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    q.rng_seed = seed;
    const int a = select_anchor(ds, q);
    CHECK((a == 1 || a == 2));
  }
}

TEST_CASE("anchor draw is uniform over the candidates") {
  auto ds = dataset_with_cosines({0.195, 0.205, 0.30, -0.5});
  AnchorQuery q;
  q.forget_identity = 0;
  int count1 = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    q.rng_seed = seed;
    if (select_anchor(ds, q) == 1) ++count1;
  }
  // binomial(1000, 1/2): 5 sigma is ~79
  CHECK(std::abs(count1 - 500) < 79);
  q.rng_seed = 77;
  CHECK(select_anchor(ds, q) == select_anchor(ds, q));
}

TEST_CASE("an empty candidate band raises NoAnchorFound with the gap") {
  auto ds = dataset_with_cosines({0.5, 0.6});
  AnchorQuery q;
  q.forget_identity = 0;
  try {
    select_anchor(ds, q);
    FAIL("expected NoAnchorFound");
  } catch (const piu::NoAnchorFound& e) {
    CHECK(e.nearest_gap == doctest::Approx(0.3).epsilon(1e-9));
  }
}

TEST_CASE("mixing identical sources returns the source") {
  const std::vector<Vec> sources(5, Vec{0.3, -0.7, 0.2});
  Rng rng(21);
  const Vec mix = mix_forget_conditions(sources, 3, 1.0, rng);
  REQUIRE(mix.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(mix[i] == doctest::Approx(sources[0][i]).epsilon(1e-12));
  }
}

TEST_CASE("mixing one source copies it exactly") {
  const std::vector<Vec> sources = {Vec{1, 2}, Vec{3, 4}, Vec{5, 6}};
  Rng rng(22);
  const Vec mix = mix_forget_conditions(sources, 1, 1.0, rng);
  bool found = false;
  for (const auto& s : sources) found |= (mix == s);
  CHECK(found);
}

TEST_CASE("mixes stay inside the coordinate envelope of the sources") {
  Rng data_rng(23);
  std::vector<Vec> sources;
  for (int i = 0; i < 6; ++i) sources.push_back(data_rng.normal_vec(4));
  Vec lo(4, 1e300), hi(4, -1e300);
  for (const auto& s : sources) {
    for (int d = 0; d < 4; ++d) {
      lo[d] = std::min(lo[d], s[d]);
      hi[d] = std::max(hi[d], s[d]);
    }
  }
  Rng rng(24);
  for (int trial = 0; trial < 100; ++trial) {
    const Vec mix = mix_forget_conditions(sources, 2, 1.0, rng);
    for (int d = 0; d < 4; ++d) {
      CHECK(mix[d] >= lo[d] - 1e-12);
      CHECK(mix[d] <= hi[d] + 1e-12);
    }
  }
}

TEST_CASE("the MixSpec overload replays the seeded draw") {
  std::vector<Vec> sources;
  Rng data_rng(25);
  for (int i = 0; i < 5; ++i) sources.push_back(data_rng.normal_vec(3));
  MixSpec spec;
  spec.K = 2;
  spec.alpha = 1.5;
  spec.rng_seed = 99;
  const Vec a = mix_forget_conditions(sources, spec);
  Rng rng(99);
  const Vec b = mix_forget_conditions(sources, 2, 1.5, rng);
  CHECK(a == b);
}

TEST_CASE("idset files round-trip every sample bit for bit") {
  auto ds = generate_identities(4, 6, 0.05, 8, 31);
  assign_splits(ds, 1);
  const std::string path = "/tmp/piu_test_roundtrip.idset";
  save_idset(ds, path);
  auto back = load_idset(path);
  CHECK(back.dim == ds.dim);
  CHECK(back.num_identities == ds.num_identities);
  REQUIRE(back.samples.size() == ds.samples.size());
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    CHECK(back.samples[i].values == ds.samples[i].values);
    CHECK(back.samples[i].identity == ds.samples[i].identity);
    CHECK(back.samples[i].split == ds.samples[i].split);
  }
  REQUIRE(back.centroids.size() == ds.centroids.size());
  for (std::size_t i = 0; i < ds.centroids.size(); ++i) {
    for (int d = 0; d < ds.dim; ++d) {
      CHECK(back.centroids[i][d] == doctest::Approx(ds.centroids[i][d]));
    }
  }
  std::remove(path.c_str());
}

TEST_CASE("loading a missing idset raises IoError") {
  CHECK_THROWS_AS(load_idset("/tmp/piu_no_such_file.idset"), piu::IoError);
}
