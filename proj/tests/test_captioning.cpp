#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <set>
#include <sstream>

#include "mlc/captioning.hpp"
#include "mlc/errors.hpp"
#include "mlc/io.hpp"
#include "mlc/synthetic.hpp"
#include "support.hpp"

using namespace mlc;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

std::vector<std::string> names(Index m) {
  std::vector<std::string> out;
  for (Index i = 0; i < m; ++i) out.push_back("caption " + std::to_string(i));
  return out;
}

// Recomputes V with a full sort per image.
VectorXd brute_force_votes(const MatrixXd& images, const MatrixXd& texts, int top_m) {
  const MatrixXd sims = images.rowwise().normalized() * texts.rowwise().normalized().transpose();
  VectorXd v = VectorXd::Zero(texts.rows());
  for (Index i = 0; i < sims.rows(); ++i) {
    std::vector<Index> idx(static_cast<std::size_t>(sims.cols()));
    std::iota(idx.begin(), idx.end(), Index{0});
    std::stable_sort(idx.begin(), idx.end(), [&](Index a, Index b) { return sims(i, a) > sims(i, b); });
    for (int t = 0; t < top_m; ++t) v(idx[static_cast<std::size_t>(t)]) += sims(i, idx[static_cast<std::size_t>(t)]);
  }
  return v;
}

std::vector<SearchHit> brute_force_search(const VectorXd& q, const MatrixXd& repo, int top) {
  std::vector<SearchHit> all;
  for (Index i = 0; i < repo.rows(); ++i) all.push_back({i, (repo.row(i).transpose() - q).norm()});
  std::sort(all.begin(), all.end(), [](const SearchHit& a, const SearchHit& b) {
    return a.distance != b.distance ? a.distance < b.distance : a.index < b.index;
  });
  all.resize(static_cast<std::size_t>(top));
  return all;
}

}  // namespace

TEST_CASE("hand-computed two-image vote") {
  MatrixXd scores(2, 3);
  scores << 0.9, 0.5, 0.1,
            0.8, 0.2, 0.6;
  const auto vote = vote_similarities(scores, {"a", "b", "c"}, 2);
  CHECK(vote.votes(0) == doctest::Approx(1.7).epsilon(1e-15));
  CHECK(vote.votes(1) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(vote.votes(2) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(vote.winner == 0);
  CHECK(vote.caption == "a");
}

TEST_CASE("an image equal to a candidate picks it") {
  const MatrixXd texts = MatrixXd::Identity(8, 8);
  const MatrixXd image = texts.row(5);
  const auto vote = vote_caption(image, texts, names(8));
  CHECK(vote.winner == 5);
  CHECK(vote.caption == "caption 5");
}

TEST_CASE("ties go to the lowest candidate index") {
  MatrixXd scores(1, 4);
  scores << 0.2, 0.7, 0.7, 0.1;
  CHECK(vote_similarities(scores, names(4), 2).winner == 1);
  CHECK(top_votes(VectorXd::Constant(3, 1.0), 2) == std::vector<Index>{0, 1});
}

TEST_CASE("votes match a brute-force re-accumulation") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const MatrixXd images = mlc::test::gaussian(12, 6, seed);
    const MatrixXd texts = mlc::test::gaussian(9, 6, seed + 100);
    const auto vote = vote_caption(images, texts, names(9), 5);
    const VectorXd oracle = brute_force_votes(images, texts, 5);
    CHECK((vote.votes - oracle).cwiseAbs().maxCoeff() < 1e-12);
    Index best = 0;
    oracle.maxCoeff(&best);
    CHECK(vote.winner == best);
  }
}

TEST_CASE("vote is scale and order invariant") {
  const MatrixXd images = mlc::test::gaussian(10, 5, 7);
  const MatrixXd texts = mlc::test::gaussian(6, 5, 8);
  const auto base = vote_caption(images, texts, names(6));
  CHECK(vote_caption(3.0 * images, texts, names(6)).winner == base.winner);
  const MatrixXd reversed = images.colwise().reverse();
  const auto flipped = vote_caption(reversed, texts, names(6));
  CHECK(flipped.winner == base.winner);
  CHECK((flipped.votes - base.votes).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("vote errors") {
  const MatrixXd texts = mlc::test::gaussian(3, 4, 9);
  CHECK_THROWS_AS(vote_caption(mlc::test::gaussian(2, 4, 10), texts, names(3), 5), ValidationError);
  CHECK_THROWS_AS(vote_caption(MatrixXd(0, 4), texts, names(3), 2), ValidationError);
  CHECK_THROWS_AS(vote_caption(mlc::test::gaussian(2, 4, 10), texts, names(2), 2), ValidationError);
  CHECK_THROWS_AS(vote_caption(MatrixXd::Zero(1, 4), texts, names(3), 2), ValidationError);
}

TEST_CASE("search finds the query itself") {
  const MatrixXd repo = mlc::test::gaussian(30, 8, 11);
  const auto r = image_search(repo.row(7).transpose(), repo, 5);
  CHECK(r.hits.front().index == 7);
  CHECK(r.hits.front().distance == 0.0);
  CHECK_FALSE(r.clamped);
}

TEST_CASE("top = n returns a full permutation") {
  const MatrixXd repo = mlc::test::gaussian(25, 4, 12);
  const auto r = image_search(mlc::test::gaussian(4, 1, 13).col(0), repo, 25);
  std::set<Index> seen;
  for (const auto& h : r.hits) seen.insert(h.index);
  CHECK(seen.size() == 25);
  CHECK(*seen.rbegin() == 24);
  CHECK(std::is_sorted(r.hits.begin(), r.hits.end(),
                       [](const SearchHit& a, const SearchHit& b) { return a.distance < b.distance; }));
}

TEST_CASE("top-k selection agrees with a full sort") {
  const MatrixXd repo = mlc::test::gaussian(1000, 16, 14);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const VectorXd q = mlc::test::gaussian(16, 1, 200 + seed).col(0);
    const auto got = image_search(q, repo, 64);
    const auto want = brute_force_search(q, repo, 64);
    REQUIRE(got.hits.size() == 64);
    for (std::size_t i = 0; i < 64; ++i) {
      CHECK(got.hits[i].index == want[i].index);
      CHECK(got.hits[i].distance == doctest::Approx(want[i].distance).epsilon(1e-12));
    }
  }
}

TEST_CASE("Euclidean and cosine rankings coincide on unit rows") {
  const MatrixXd repo = random_unit_columns(12, 200, 15).transpose();
  const VectorXd q = random_unit_columns(12, 1, 16).col(0);
  const auto e = image_search(q, repo, 50, SearchMetric::Euclidean);
  const auto c = image_search(q, repo, 50, SearchMetric::Cosine);
  for (std::size_t i = 0; i < 50; ++i) {
    CHECK(e.hits[i].index == c.hits[i].index);
    CHECK(e.hits[i].distance * e.hits[i].distance ==
          doctest::Approx(2.0 * c.hits[i].distance).epsilon(1e-9));
  }
}

TEST_CASE("oversized top is clamped") {
  const MatrixXd repo = mlc::test::gaussian(6, 3, 17);
  const auto r = image_search(VectorXd::Zero(3), repo, 64);
  CHECK(r.clamped);
  CHECK(r.hits.size() == 6);
  CHECK_THROWS_AS(image_search(VectorXd::Zero(3), repo, 0), ConfigError);
  CHECK_THROWS_AS(image_search(VectorXd::Zero(3), MatrixXd(0, 3), 1), ValidationError);
  CHECK_THROWS_AS(search_metric_from_string("manhattan"), ConfigError);
}

TEST_CASE("spectrum of a repeated column") {
  const MatrixXd z = random_unit_columns(6, 1, 18).replicate(1, 5);
  const auto s = spectrum_by_cluster(z, std::vector<int>(5, 0));
  REQUIRE(s.size() == 1);
  CHECK(s[0](0) == 1.0);
  CHECK(s[0].tail(s[0].size() - 1).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("orthonormal columns have a flat spectrum") {
  const MatrixXd q = mlc::test::random_orthogonal(6, 19).leftCols(4);
  const auto s = spectrum_by_cluster(q, std::vector<int>(4, 0));
  CHECK((s[0].array() - 1.0).abs().maxCoeff() < 1e-12);
}

TEST_CASE("spectra agree with a direct SVD per cluster") {
  const MatrixXd z = mlc::test::gaussian(8, 40, 20);
  std::vector<int> labels(40);
  for (std::size_t i = 0; i < 40; ++i) labels[i] = i < 20 ? 1 : 0;
  const auto s = spectrum_by_cluster(z, labels);
  REQUIRE(s.size() == 2);
  for (int c = 0; c < 2; ++c) {
    const MatrixXd block = c == 1 ? z.leftCols(20) : z.rightCols(20);
    const VectorXd sv = Eigen::JacobiSVD<MatrixXd>(block).singularValues();
    CHECK((s[static_cast<std::size_t>(c)] - sv / sv(0)).cwiseAbs().maxCoeff() < 1e-12);
  }
  const auto dir = mlc::test::scratch_dir("spectra");
  write_spectra_csv(s, dir / "s.csv");
  std::istringstream in(read_text(dir / "s.csv"));
  std::string line;
  std::getline(in, line);
  CHECK(line == "cluster,index,normalized_singular_value");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 16);
  CHECK_THROWS_AS(spectrum_by_cluster(z, std::vector<int>(40, 1)), ValidationError);
}

TEST_CASE("heatmap of orthonormal codes is the identity") {
  const MatrixXd q = mlc::test::random_orthogonal(5, 21);
  const auto h = similarity_heatmap(q, std::vector<int>{4, 3, 2, 1, 0});
  CHECK((h.abs_cos - MatrixXd::Identity(5, 5)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(h.order == std::vector<Index>{4, 3, 2, 1, 0});
}

TEST_CASE("heatmap PGM layout and symmetry") {
  const MatrixXd z = random_unit_columns(4, 9, 22);
  std::vector<int> labels{2, 0, 1, 0, 2, 1, 1, 0, 2};
  const auto h = similarity_heatmap(z, labels);
  for (std::size_t i = 1; i < h.order.size(); ++i)
    CHECK(labels[static_cast<std::size_t>(h.order[i - 1])] <= labels[static_cast<std::size_t>(h.order[i])]);
  const auto pgm = heatmap_pgm(h.abs_cos);
  const std::string header = "P5\n9 9\n255\n";
  REQUIRE(pgm.size() == header.size() + 81);
  CHECK(std::string(pgm.begin(), pgm.begin() + static_cast<std::ptrdiff_t>(header.size())) == header);
  const auto* px = pgm.data() + header.size();
  for (int i = 0; i < 9; ++i) {
    CHECK(px[i * 9 + i] == 255);
    for (int j = 0; j < 9; ++j) CHECK(px[i * 9 + j] == px[j * 9 + i]);
  }
  const auto dir = mlc::test::scratch_dir("heatmap");
  write_heatmap(h, dir / "h.csv", dir / "h.pgm");
  CHECK(std::filesystem::file_size(dir / "h.pgm") == pgm.size());
  CHECK_THROWS_AS(similarity_heatmap(z, labels, 8), ConfigError);
}
