#pragma once

#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ordergap/activation_core.hpp"
#include "ordergap/metrics.hpp"
#include "ordergap/patch.hpp"
#include "ordergap/run_record.hpp"

namespace ordergap {

using Feature = std::vector<double>;
using FeatureSet = std::vector<std::pair<int, Feature>>;  // chain id -> feature

// One agglomeration step. Clusters 0..n-1 are the members in ascending
// chain-id order; step i creates cluster n+i.
struct Merge {
  int a = 0;            // smaller cluster index
  int b = 0;
  double cost = 0.0;    // increase in total within-cluster sum of squares
  double height = 0.0;  // Ward distance sqrt(2 * cost)
  int size = 0;         // members in the merged cluster

  bool operator==(const Merge&) const = default;
};

struct ClusterModel {
  std::string method = "ward_linkage";
  int k = 0;
  std::vector<int> member_ids;        // ascending
  std::map<int, int> assignments;     // chain id -> label in [0, k)
  std::map<int, Feature> centroids;   // label -> member mean
  std::vector<Merge> linkage;         // n - 1 merges

  bool operator==(const ClusterModel&) const = default;
};

// Agglomerative Ward clustering, cut at k clusters. Each step merges the
// pair with the smallest increase in within-cluster sum of squares; ties go
// to the pair with the lexicographically smallest (min member id) pair.
// Labels are canonical: clusters ordered by their smallest member id. The
// result does not depend on the order of `features`.
ClusterModel ward_cluster(const FeatureSet& features, int k);

// Labels for the n leaves of a linkage cut at k clusters, canonical order.
std::vector<int> cut_linkage(std::span<const Merge> linkage, int n, int k);

// Same model recut at another k. `features` supplies the centroids.
ClusterModel recut(const ClusterModel& model, const FeatureSet& features, int k);

// Nearest centroid by Euclidean distance, ties to the lowest label.
int assign(std::span<const double> feature, const ClusterModel& model);

// Sum over clusters of squared distances to the cluster mean.
double within_cluster_ss(const FeatureSet& features, const std::map<int, int>& labels);

// Body-window residuals flattened in ascending layer order.
Feature flatten_feature(const LayerVectors& vectors);

RoutingTable routing_from_clusters(const ClusterModel& model, const std::map<int, std::string>& label_cores,
                                   std::string default_core);

nlohmann::json to_json(const ClusterModel& model);
ClusterModel cluster_model_from_json(const nlohmann::json& j);

// ---- cross-core specificity -------------------------------------------------

struct CrossCell {
  std::string core_id;
  std::string population;
  int size = 0;
  int released = 0;
  int excluded_failed = 0;

  double rate_percent() const { return size == 0 ? 0.0 : 100.0 * released / size; }
};

using Populations = std::vector<std::pair<std::string, std::vector<int>>>;

// Release counts for every (core, population) pair over graded records.
// Pending grades anywhere in scope raise IncompleteGradingError with every
// pending run id.
std::vector<CrossCell> cross_matrix(std::span<const std::string> core_ids, const Populations& populations,
                                    std::span<const RunRecord> records);

nlohmann::json to_json(const std::vector<CrossCell>& cells);
std::string format_cross_matrix(const std::vector<CrossCell>& cells);

}  // namespace ordergap
