#include "ordergap/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "ordergap/errors.hpp"

namespace ordergap {

using nlohmann::json;

namespace {

struct Node {
  std::vector<int> members;  // leaf indices, ascending
  Feature centroid;
  int first_id = 0;  // smallest chain id
  bool alive = true;
};

double sq_distance(const Feature& a, const Feature& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

double ward_cost(const Node& x, const Node& y) {
  const double nx = static_cast<double>(x.members.size());
  const double ny = static_cast<double>(y.members.size());
  return nx * ny / (nx + ny) * sq_distance(x.centroid, y.centroid);
}

Feature mean_of(const std::vector<int>& leaves, const std::vector<const Feature*>& points) {
  Feature m(points.front()->size(), 0.0);
  for (int leaf : leaves) {
    const Feature& p = *points[static_cast<std::size_t>(leaf)];
    for (std::size_t i = 0; i < m.size(); ++i) m[i] += p[i];
  }
  for (double& v : m) v /= static_cast<double>(leaves.size());
  return m;
}

// Leaf order: ascending chain id.
std::vector<std::size_t> sorted_order(const FeatureSet& features) {
  std::vector<std::size_t> order(features.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return features[a].first < features[b].first; });
  return order;
}

std::map<int, Feature> centroids_for(const std::vector<int>& labels, const std::vector<const Feature*>& points,
                                     int k) {
  std::map<int, Feature> out;
  for (int label = 0; label < k; ++label) {
    std::vector<int> leaves;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == label) leaves.push_back(static_cast<int>(i));
    out.emplace(label, mean_of(leaves, points));
  }
  return out;
}

}  // namespace

ClusterModel ward_cluster(const FeatureSet& features, int k) {
  if (k < 1) throw ValidationError("k must be positive");
  const int n = static_cast<int>(features.size());
  if (n < k) throw ValidationError("cannot form " + std::to_string(k) + " clusters from " + std::to_string(n) + " points");
  const std::size_t dim = features.front().second.size();
  if (dim == 0) throw ValidationError("feature vectors have zero dimension");
  std::set<int> ids;
  for (const auto& [id, f] : features) {
    if (f.size() != dim) throw ValidationError("feature for chain " + std::to_string(id) + " has the wrong dimension");
    if (!ids.insert(id).second) throw ValidationError("duplicate chain id " + std::to_string(id) + " in features");
  }

  const auto order = sorted_order(features);
  std::vector<const Feature*> points;
  ClusterModel model;
  model.k = k;
  for (std::size_t idx : order) {
    points.push_back(&features[idx].second);
    model.member_ids.push_back(features[idx].first);
  }

  std::vector<Node> nodes;
  nodes.reserve(static_cast<std::size_t>(2 * n));
  for (int i = 0; i < n; ++i) nodes.push_back({{i}, *points[static_cast<std::size_t>(i)], model.member_ids[static_cast<std::size_t>(i)], true});

  // cost[i][j] for live clusters, i < j, by node index.
  const std::size_t cap = static_cast<std::size_t>(2 * n);
  std::vector<std::vector<double>> cost(cap, std::vector<double>(cap, 0.0));
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) cost[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = ward_cost(nodes[static_cast<std::size_t>(i)], nodes[static_cast<std::size_t>(j)]);

  auto cost_of = [&](int a, int b) {
    return a < b ? cost[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)]
                 : cost[static_cast<std::size_t>(b)][static_cast<std::size_t>(a)];
  };

  for (int step = 0; step < n - 1; ++step) {
    int best_a = -1;
    int best_b = -1;
    double best = std::numeric_limits<double>::infinity();
    std::pair<int, int> best_key{};
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (!nodes[i].alive) continue;
      for (std::size_t j = i + 1; j < nodes.size(); ++j) {
        if (!nodes[j].alive) continue;
        const double c = cost_of(static_cast<int>(i), static_cast<int>(j));
        const std::pair<int, int> key = std::minmax(nodes[i].first_id, nodes[j].first_id);
        if (c < best || (c == best && key < best_key)) {
          best = c;
          best_key = key;
          best_a = static_cast<int>(i);
          best_b = static_cast<int>(j);
        }
      }
    }
    Node merged;
    auto& na = nodes[static_cast<std::size_t>(best_a)];
    auto& nb = nodes[static_cast<std::size_t>(best_b)];
    merged.members = na.members;
    merged.members.insert(merged.members.end(), nb.members.begin(), nb.members.end());
    std::sort(merged.members.begin(), merged.members.end());
    merged.centroid = mean_of(merged.members, points);
    merged.first_id = std::min(na.first_id, nb.first_id);
    na.alive = false;
    nb.alive = false;
    model.linkage.push_back({best_a, best_b, best, std::sqrt(2.0 * best), static_cast<int>(merged.members.size())});
    const int m = static_cast<int>(nodes.size());
    nodes.push_back(std::move(merged));
    for (int i = 0; i < m; ++i) {
      if (nodes[static_cast<std::size_t>(i)].alive) {
        cost[static_cast<std::size_t>(i)][static_cast<std::size_t>(m)] =
            ward_cost(nodes[static_cast<std::size_t>(i)], nodes[static_cast<std::size_t>(m)]);
      }
    }
  }

  const auto labels = cut_linkage(model.linkage, n, k);
  for (int i = 0; i < n; ++i) model.assignments.emplace(model.member_ids[static_cast<std::size_t>(i)], labels[static_cast<std::size_t>(i)]);
  model.centroids = centroids_for(labels, points, k);
  return model;
}

std::vector<int> cut_linkage(std::span<const Merge> linkage, int n, int k) {
  if (k < 1 || k > n) throw ValidationError("cut at k=" + std::to_string(k) + " impossible for " + std::to_string(n) + " points");
  if (static_cast<int>(linkage.size()) != n - 1) throw ValidationError("linkage does not match the member count");
  // Union-find over leaves, applying the first n - k merges.
  std::vector<int> parent(static_cast<std::size_t>(2 * n));
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[static_cast<std::size_t>(x)] != x) x = parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
    return x;
  };
  for (int step = 0; step < n - k; ++step) {
    const auto& m = linkage[static_cast<std::size_t>(step)];
    if (m.a < 0 || m.b < 0 || m.a >= n + step || m.b >= n + step) throw ValidationError("malformed linkage step");
    parent[static_cast<std::size_t>(find(m.a))] = n + step;
    parent[static_cast<std::size_t>(find(m.b))] = n + step;
  }
  // Leaves are in ascending chain-id order, so first-seen order of roots is
  // the canonical label order.
  std::map<int, int> root_label;
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int r = find(i);
    auto [it, inserted] = root_label.emplace(r, static_cast<int>(root_label.size()));
    labels[static_cast<std::size_t>(i)] = it->second;
  }
  return labels;
}

ClusterModel recut(const ClusterModel& model, const FeatureSet& features, int k) {
  const int n = static_cast<int>(model.member_ids.size());
  std::map<int, const Feature*> by_id;
  for (const auto& [id, f] : features) by_id.emplace(id, &f);
  std::vector<const Feature*> points;
  for (int id : model.member_ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw ValidationError("no feature for member chain " + std::to_string(id));
    points.push_back(it->second);
  }
  ClusterModel out = model;
  out.k = k;
  const auto labels = cut_linkage(model.linkage, n, k);
  out.assignments.clear();
  for (int i = 0; i < n; ++i) out.assignments.emplace(model.member_ids[static_cast<std::size_t>(i)], labels[static_cast<std::size_t>(i)]);
  out.centroids = centroids_for(labels, points, k);
  return out;
}

int assign(std::span<const double> feature, const ClusterModel& model) {
  if (model.centroids.empty()) throw ValidationError("cluster model has no centroids");
  int best = -1;
  double best_d = 0.0;
  for (const auto& [label, c] : model.centroids) {
    if (c.size() != feature.size()) {
      throw ValidationError("feature dimension " + std::to_string(feature.size()) + " does not match centroid dimension " +
                            std::to_string(c.size()));
    }
    double d = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) d += (feature[i] - c[i]) * (feature[i] - c[i]);
    if (best < 0 || d < best_d) {
      best = label;
      best_d = d;
    }
  }
  return best;
}

double within_cluster_ss(const FeatureSet& features, const std::map<int, int>& labels) {
  std::map<int, std::vector<const Feature*>> groups;
  for (const auto& [id, f] : features) groups[labels.at(id)].push_back(&f);
  double total = 0.0;
  for (const auto& [label, members] : groups) {
    Feature mean(members.front()->size(), 0.0);
    for (const auto* f : members)
      for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += (*f)[i];
    for (double& v : mean) v /= static_cast<double>(members.size());
    for (const auto* f : members) total += sq_distance(*f, mean);
  }
  return total;
}

Feature flatten_feature(const LayerVectors& vectors) {
  Feature out;
  for (const auto& [layer, v] : vectors) out.insert(out.end(), v.begin(), v.end());
  return out;
}

RoutingTable routing_from_clusters(const ClusterModel& model, const std::map<int, std::string>& label_cores,
                                   std::string default_core) {
  RoutingTable table;
  table.default_core = std::move(default_core);
  for (const auto& [chain, label] : model.assignments) {
    if (auto it = label_cores.find(label); it != label_cores.end()) table.entries.emplace(chain, it->second);
  }
  return table;
}

json to_json(const ClusterModel& m) {
  json assignments = json::object();
  for (const auto& [id, label] : m.assignments) assignments[std::to_string(id)] = label;
  json centroids = json::object();
  for (const auto& [label, c] : m.centroids) centroids[std::to_string(label)] = c;
  json linkage = json::array();
  for (const auto& s : m.linkage) {
    linkage.push_back({{"a", s.a}, {"b", s.b}, {"cost", s.cost}, {"height", s.height}, {"size", s.size}});
  }
  return {{"method", m.method}, {"k", m.k}, {"member_ids", m.member_ids}, {"assignments", assignments},
          {"centroids", centroids}, {"linkage", linkage}};
}

ClusterModel cluster_model_from_json(const json& j) {
  try {
    ClusterModel m;
    m.method = j.at("method").get<std::string>();
    if (m.method != "ward_linkage") throw ValidationError("unsupported cluster method '" + m.method + "'");
    m.k = j.at("k").get<int>();
    m.member_ids = j.at("member_ids").get<std::vector<int>>();
    for (const auto& [key, value] : j.at("assignments").items()) m.assignments.emplace(std::stoi(key), value.get<int>());
    for (const auto& [key, value] : j.at("centroids").items()) m.centroids.emplace(std::stoi(key), value.get<Feature>());
    for (const auto& s : j.at("linkage")) {
      m.linkage.push_back({s.at("a").get<int>(), s.at("b").get<int>(), s.at("cost").get<double>(),
                           s.at("height").get<double>(), s.at("size").get<int>()});
    }
    return m;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad cluster model: ") + e.what());
  }
}

std::vector<CrossCell> cross_matrix(std::span<const std::string> core_ids, const Populations& populations,
                                    std::span<const RunRecord> records) {
  std::vector<CrossCell> cells;
  std::vector<std::string> pending;
  for (const auto& core : core_ids) {
    for (const auto& [name, chains] : populations) {
      if (chains.empty()) throw ValidationError("population '" + name + "' is empty");
      try {
        const auto report = release_rate(records, chains, baseline_arm(), patched_arm(core));
        cells.push_back({core, name, report.population, report.released, report.excluded_failed});
      } catch (const IncompleteGradingError& e) {
        pending.insert(pending.end(), e.pending().begin(), e.pending().end());
      }
    }
  }
  if (!pending.empty()) {
    std::sort(pending.begin(), pending.end());
    pending.erase(std::unique(pending.begin(), pending.end()), pending.end());
    throw IncompleteGradingError(std::move(pending));
  }
  return cells;
}

json to_json(const std::vector<CrossCell>& cells) {
  json out = json::array();
  for (const auto& c : cells) {
    out.push_back({{"core_id", c.core_id}, {"population", c.population}, {"n", c.size}, {"released", c.released},
                   {"rate_percent", c.rate_percent()}, {"excluded_failed", c.excluded_failed}});
  }
  return out;
}

std::string format_cross_matrix(const std::vector<CrossCell>& cells) {
  std::ostringstream os;
  os << "core                 population            n   released\n";
  for (const auto& c : cells) {
    char line[160];
    std::snprintf(line, sizeof line, "%-20s %-18s %5d   %d (%s)\n", c.core_id.c_str(), c.population.c_str(), c.size,
                  c.released, format_percent(c.rate_percent(), false).c_str());
    os << line;
  }
  return os.str();
}

}  // namespace ordergap
