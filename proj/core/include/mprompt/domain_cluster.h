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

// Unsupervised domain discovery: hashed bag-of-token context embeddings,
// seeded k-means, and nearest-centroid assignment for unseen contexts.

#ifndef MPROMPT_DOMAIN_CLUSTER_H_
#define MPROMPT_DOMAIN_CLUSTER_H_

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "mprompt/qa_data.h"

namespace mprompt {

using Embedding = Eigen::VectorXd;

inline constexpr int kDefaultEmbeddingDim = 64;

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view s);

/// Unit vector in R^dim drawn deterministically from the token's hash.
Embedding token_direction(std::string_view token, int dim = kDefaultEmbeddingDim);

/// L2-normalized mean of token directions; the zero vector for empty text.
Embedding embed_context(std::string_view context, int dim = kDefaultEmbeddingDim);

struct KMeansResult {
  std::vector<Embedding> centroids;
  std::vector<int> labels;
  /// Sum of squared distances after every assignment step.
  std::vector<double> objective;
  int iterations = 0;
};

/// Lloyd's algorithm with k-means++ seeding; stops when assignments are
/// stable or after `max_iters`. Runs `restarts` seedings drawn from one
/// seeded stream and keeps the lowest final objective (first wins on ties).
/// Throws ConfigError if points.size() < n or restarts < 1.
KMeansResult kmeans(std::span<const Embedding> points, int n, std::uint64_t seed,
                    int max_iters = 100, int restarts = 10);

/// Nearest centroid by Euclidean distance; ties go to the smaller index.
int nearest_centroid(const Embedding& x, std::span<const Embedding> centroids);

struct DomainModel {
  int n = 1;
  std::uint64_t seed = 0;
  int dim = kDefaultEmbeddingDim;
  std::vector<Embedding> centroids;
  std::map<std::string, int> assignments;  // example id -> domain

  int assign(const Embedding& e) const { return nearest_centroid(e, centroids); }
  /// Stored assignment for known ids, nearest centroid otherwise.
  int domain_of(const QAExample& ex) const;

  void save(const std::filesystem::path& path) const;
  static DomainModel load(const std::filesystem::path& path);
};

int assign_domain(const Embedding& e, const DomainModel& model);

/// Embeds every context and clusters into n domains.
DomainModel cluster_contexts(std::span<const QAExample> examples, int n, std::uint64_t seed,
                             int dim = kDefaultEmbeddingDim);

/// Uniform seeded labels; centroids are the means of the random groups so
/// unseen contexts can still be assigned.
DomainModel random_domains(std::span<const QAExample> examples, int n, std::uint64_t seed,
                           int dim = kDefaultEmbeddingDim);

/// Writes domain_id into each example from the model.
void apply_domains(std::span<QAExample> examples, const DomainModel& model);

}  // namespace mprompt

#endif  // MPROMPT_DOMAIN_CLUSTER_H_
