// Copyright 2026 The MPrompt Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "mprompt/domain_cluster.h"

#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <numbers>
#include <set>

#include "mprompt/errors.h"
#include "mprompt/rng.h"
#include "mprompt/synth_corpus.h"

namespace mprompt {
namespace {

// Adjusted Rand index from the contingency table.
double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> ra, rb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[{a[i], b[i]}] += 1;
    ra[a[i]] += 1;
    rb[b[i]] += 1;
  }
  auto c2 = [](double x) { return x * (x - 1) / 2; };
  double sum_joint = 0, sum_a = 0, sum_b = 0;
  for (const auto& [k, v] : joint) sum_joint += c2(v);
  for (const auto& [k, v] : ra) sum_a += c2(v);
  for (const auto& [k, v] : rb) sum_b += c2(v);
  const double expected = sum_a * sum_b / c2(static_cast<double>(a.size()));
  const double max_index = (sum_a + sum_b) / 2;
  return (sum_joint - expected) / (max_index - expected);
}

// Straight-line copy of the hashing pipeline: FNV-1a 64, splitmix64 stream,
// Box-Muller normals, unit direction per token, normalized mean.
Eigen::VectorXd oracle_embed(const std::string& text, int dim) {
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(dim);
  std::size_t count = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
    std::size_t end = pos;
    while (end < text.size() && !std::isspace(static_cast<unsigned char>(text[end]))) ++end;
    if (end == pos) break;
    const std::string tok = text.substr(pos, end - pos);
    pos = end;
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : tok) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    std::uint64_t state = h;
    Eigen::VectorXd v(dim);
    for (int i = 0; i < dim; ++i) {
      double u1 = static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53;
      double u2 = static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53;
      if (u1 < 1e-300) u1 = 1e-300;
      v(i) = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }
    acc += v / v.norm();
    ++count;
  }
  if (count == 0) return acc;
  acc /= static_cast<double>(count);
  return acc / acc.norm();
}

TEST(EmbedContext, DeterministicAndEmpty) {
  EXPECT_EQ(embed_context("k1 = 4 k2 = 9"), embed_context("k1 = 4 k2 = 9"));
  const Embedding z = embed_context("");
  EXPECT_EQ(z.size(), kDefaultEmbeddingDim);
  EXPECT_EQ(z.norm(), 0.0);
}

TEST(EmbedContext, MatchesIndependentImplementation) {
  for (const std::string& s : {std::string("a b"), std::string("c d"), std::string("a a b zoo has cat")}) {
    EXPECT_LE((embed_context(s) - oracle_embed(s, kDefaultEmbeddingDim)).cwiseAbs().maxCoeff(), 1e-12) << s;
  }
  const double cos = embed_context("a b").dot(embed_context("c d"));
  EXPECT_NEAR(cos, oracle_embed("a b", 64).dot(oracle_embed("c d", 64)), 1e-12);
}

std::vector<Embedding> blobs(std::vector<int>& labels, Rng& rng) {
  std::vector<Embedding> pts;
  for (int c = 0; c < 3; ++c) {
    Embedding center = Embedding::Zero(8);
    center(c) = 100.0;
    for (int i = 0; i < 30; ++i) {
      Embedding p(8);
      for (int k = 0; k < 8; ++k) p(k) = center(k) + normal01(rng);
      pts.push_back(p);
      labels.push_back(c);
    }
  }
  return pts;
}

TEST(KMeans, PlantedBlobsAriOne) {
  Rng rng(11);
  std::vector<int> planted;
  const auto pts = blobs(planted, rng);
  const KMeansResult r = kmeans(pts, 3, 5);
  EXPECT_DOUBLE_EQ(adjusted_rand_index(r.labels, planted), 1.0);
}

TEST(KMeans, ObjectiveNonIncreasingAndDeterministic) {
  Rng rng(12);
  std::vector<Embedding> pts;
  for (int i = 0; i < 200; ++i) {
    Embedding p(4);
    for (int k = 0; k < 4; ++k) p(k) = normal01(rng);
    pts.push_back(p);
  }
  const KMeansResult a = kmeans(pts, 5, 9);
  const KMeansResult b = kmeans(pts, 5, 9);
  EXPECT_EQ(a.labels, b.labels);
  for (std::size_t i = 1; i < a.objective.size(); ++i) EXPECT_LE(a.objective[i], a.objective[i - 1] + 1e-12);
}

TEST(KMeans, SingleClusterAndErrors) {
  std::vector<Embedding> pts = {Embedding::Constant(2, 1.0), Embedding::Constant(2, 3.0)};
  const KMeansResult r = kmeans(pts, 1, 0);
  EXPECT_EQ(r.labels, (std::vector<int>{0, 0}));
  EXPECT_NEAR(r.centroids[0](0), 2.0, 1e-12);
  EXPECT_THROW(kmeans(pts, 3, 0), ConfigError);
}

TEST(AssignDomain, NearestAndTies) {
  DomainModel m;
  m.n = 3;
  m.dim = 2;
  m.centroids = {Embedding::Constant(2, 0.0), Embedding::Constant(2, 2.0), Embedding::Constant(2, 5.0)};
  EXPECT_EQ(assign_domain(m.centroids[2], m), 2);
  EXPECT_EQ(assign_domain(Embedding::Constant(2, 1.0), m), 0);
}

TEST(ClusterContexts, TrainingPointsKeepAssignmentsAndSyntheticAri) {
  CorpusSpec spec;
  spec.examples_per_domain = 60;
  const Corpus corpus = generate_corpus(spec, 3);
  const DomainModel dm = cluster_contexts(corpus.train, 4, 1);
  std::vector<int> got, planted;
  for (const auto& ex : corpus.train) {
    EXPECT_EQ(dm.assign(embed_context(ex.context)), dm.assignments.at(ex.id));
    got.push_back(dm.assignments.at(ex.id));
    planted.push_back(corpus.labels.at(ex.id));
  }
  EXPECT_DOUBLE_EQ(adjusted_rand_index(got, planted), 1.0);
  for (const auto& ex : corpus.val) {
    const int d = dm.domain_of(ex);
    EXPECT_GE(d, 0);
    EXPECT_LT(d, 4);
  }
}

TEST(RandomDomains, SeededAndInRange) {
  CorpusSpec spec;
  spec.examples_per_domain = 30;
  const Corpus corpus = generate_corpus(spec, 3);
  const DomainModel a = random_domains(corpus.train, 3, 8);
  const DomainModel b = random_domains(corpus.train, 3, 8);
  EXPECT_EQ(a.assignments, b.assignments);
  std::set<int> used;
  for (const auto& [id, d] : a.assignments) used.insert(d);
  EXPECT_EQ(used.size(), 3u);
}

TEST(DomainModel, SaveLoad) {
  CorpusSpec spec;
  spec.examples_per_domain = 20;
  const Corpus corpus = generate_corpus(spec, 3);
  const DomainModel dm = cluster_contexts(corpus.train, 2, 1);
  const auto path = std::filesystem::temp_directory_path() / "mprompt_domains_test.json";
  dm.save(path);
  const DomainModel back = DomainModel::load(path);
  EXPECT_EQ(back.assignments, dm.assignments);
  EXPECT_EQ(back.n, 2);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace mprompt
