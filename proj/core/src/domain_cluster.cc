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

#include <fstream>
#include <limits>

#include "json.hpp"

#include "mprompt/errors.h"
#include "mprompt/rng.h"

namespace mprompt {

std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Embedding token_direction(std::string_view token, int dim) {
  std::uint64_t state = fnv1a64(token);
  Embedding v(dim);
  for (int i = 0; i < dim; ++i) {
    double u1 = static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53;
    double u2 = static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53;
    if (u1 < 1e-300) u1 = 1e-300;
    v(i) = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }
  return v / v.norm();
}

Embedding embed_context(std::string_view context, int dim) {
  Embedding acc = Embedding::Zero(dim);
  auto tokens = split_whitespace(context);
  if (tokens.empty()) return acc;
  for (const auto& tok : tokens) acc += token_direction(tok, dim);
  acc /= static_cast<double>(tokens.size());
  double norm = acc.norm();
  if (norm == 0.0) return acc;
  return acc / norm;
}

int nearest_centroid(const Embedding& x, std::span<const Embedding> centroids) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < centroids.size(); ++j) {
    double d = (x - centroids[j]).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(j);
    }
  }
  return best;
}

namespace {

KMeansResult lloyd(std::span<const Embedding> points, int n, Rng& rng, int max_iters) {
  const std::size_t np = points.size();
  KMeansResult res;

  // k-means++ seeding.
  res.centroids.push_back(points[uniform_index(rng, np)]);
  std::vector<double> d2(np);
  while (res.centroids.size() < static_cast<std::size_t>(n)) {
    double total = 0.0;
    for (std::size_t i = 0; i < np; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : res.centroids) best = std::min(best, (points[i] - c).squaredNorm());
      d2[i] = best;
      total += best;
    }
    std::size_t pick = 0;
    if (total <= 0.0) {
      pick = uniform_index(rng, np);
    } else {
      double r = uniform01(rng) * total;
      double cum = 0.0;
      pick = np - 1;
      for (std::size_t i = 0; i < np; ++i) {
        cum += d2[i];
        if (r < cum) {
          pick = i;
          break;
        }
      }
    }
    res.centroids.push_back(points[pick]);
  }

  res.labels.assign(np, -1);
  std::vector<int> prev;
  for (int it = 0; it < max_iters; ++it) {
    prev = res.labels;
    double obj = 0.0;
    for (std::size_t i = 0; i < np; ++i) {
      res.labels[i] = nearest_centroid(points[i], res.centroids);
      obj += (points[i] - res.centroids[static_cast<std::size_t>(res.labels[i])]).squaredNorm();
    }
    res.objective.push_back(obj);
    res.iterations = it + 1;
    if (res.labels == prev) break;

    const Eigen::Index dim = points[0].size();
    std::vector<Embedding> sums(static_cast<std::size_t>(n), Embedding::Zero(dim));
    std::vector<int> counts(static_cast<std::size_t>(n), 0);
    for (std::size_t i = 0; i < np; ++i) {
      sums[static_cast<std::size_t>(res.labels[i])] += points[i];
      ++counts[static_cast<std::size_t>(res.labels[i])];
    }
    std::vector<bool> taken(np, false);
    for (int j = 0; j < n; ++j) {
      auto ju = static_cast<std::size_t>(j);
      if (counts[ju] > 0) {
        res.centroids[ju] = sums[ju] / counts[ju];
        continue;
      }
      // Empty cluster: move it onto the point farthest from its centroid.
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < np; ++i) {
        if (taken[i]) continue;
        double d = (points[i] - res.centroids[static_cast<std::size_t>(res.labels[i])]).squaredNorm();
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      taken[far] = true;
      res.centroids[ju] = points[far];
    }
  }
  return res;
}

}  // namespace

KMeansResult kmeans(std::span<const Embedding> points, int n, std::uint64_t seed, int max_iters,
                    int restarts) {
  if (n < 1) throw ConfigError("kmeans: cluster count must be >= 1");
  if (restarts < 1) throw ConfigError("kmeans: restarts must be >= 1");
  if (points.size() < static_cast<std::size_t>(n)) {
    throw ConfigError("kmeans: " + std::to_string(points.size()) + " points for " +
                      std::to_string(n) + " clusters");
  }
  Rng rng(seed);
  KMeansResult best;
  for (int r = 0; r < restarts; ++r) {
    KMeansResult run = lloyd(points, n, rng, max_iters);
    if (r == 0 || run.objective.back() < best.objective.back()) best = std::move(run);
  }
  return best;
}

int assign_domain(const Embedding& e, const DomainModel& model) { return model.assign(e); }

int DomainModel::domain_of(const QAExample& ex) const {
  if (auto it = assignments.find(ex.id); it != assignments.end()) return it->second;
  return assign(embed_context(ex.context, dim));
}

DomainModel cluster_contexts(std::span<const QAExample> examples, int n, std::uint64_t seed,
                             int dim) {
  std::vector<Embedding> points;
  points.reserve(examples.size());
  for (const auto& ex : examples) points.push_back(embed_context(ex.context, dim));
  KMeansResult km = kmeans(points, n, seed);
  DomainModel model;
  model.n = n;
  model.seed = seed;
  model.dim = dim;
  model.centroids = std::move(km.centroids);
  for (std::size_t i = 0; i < examples.size(); ++i) {
    model.assignments[examples[i].id] = km.labels[i];
  }
  return model;
}

DomainModel random_domains(std::span<const QAExample> examples, int n, std::uint64_t seed,
                           int dim) {
  if (n < 1) throw ConfigError("random_domains: cluster count must be >= 1");
  Rng rng(seed);
  DomainModel model;
  model.n = n;
  model.seed = seed;
  model.dim = dim;
  std::vector<Embedding> sums(static_cast<std::size_t>(n), Embedding::Zero(dim));
  std::vector<int> counts(static_cast<std::size_t>(n), 0);
  for (const auto& ex : examples) {
    int label = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(n)));
    model.assignments[ex.id] = label;
    sums[static_cast<std::size_t>(label)] += embed_context(ex.context, dim);
    ++counts[static_cast<std::size_t>(label)];
  }
  for (int j = 0; j < n; ++j) {
    auto ju = static_cast<std::size_t>(j);
    model.centroids.push_back(counts[ju] > 0 ? Embedding(sums[ju] / counts[ju]) : sums[ju]);
  }
  return model;
}

void apply_domains(std::span<QAExample> examples, const DomainModel& model) {
  for (auto& ex : examples) ex.domain_id = model.domain_of(ex);
}

void DomainModel::save(const std::filesystem::path& path) const {
  nlohmann::ordered_json j;
  j["n"] = n;
  j["seed"] = seed;
  j["e"] = dim;
  auto cs = nlohmann::ordered_json::array();
  for (const auto& c : centroids) cs.push_back(std::vector<double>(c.data(), c.data() + c.size()));
  j["centroids"] = cs;
  j["assignments"] = assignments;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write domain model to " + path.string());
  out << j.dump() << '\n';
}

DomainModel DomainModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read domain model from " + path.string());
  DomainModel m;
  try {
    nlohmann::json j;
    in >> j;
    m.n = j.at("n").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.dim = j.at("e").get<int>();
    for (const auto& c : j.at("centroids")) {
      auto v = c.get<std::vector<double>>();
      if (static_cast<int>(v.size()) != m.dim) throw DataError("centroid width != e");
      m.centroids.push_back(Eigen::Map<const Embedding>(v.data(), static_cast<Eigen::Index>(v.size())));
    }
    m.assignments = j.at("assignments").get<std::map<std::string, int>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed domain model " + path.string() + ": " + e.what());
  }
  if (static_cast<int>(m.centroids.size()) != m.n) throw DataError("centroid count != n");
  for (const auto& [id, d] : m.assignments) {
    if (d < 0 || d >= m.n) throw DataError("assignment for '" + id + "' out of range");
  }
  return m;
}

}  // namespace mprompt
