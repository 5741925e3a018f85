#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "protoner/pipeline.hpp"
#include "protoner/tensor.hpp"

namespace protoner {

// Self-describing tab-separated dump: role, label, f0..f{d-1}.
void write_feature_dump(const FeatureDump& dump, const std::filesystem::path& path);
FeatureDump read_feature_dump(const std::filesystem::path& path);

// Deterministic principal-component projection to 2D. Inputs that are
// already 2D pass through unchanged.
Matrix project_2d(const std::vector<Vec>& features);

struct HistogramPair {
  std::vector<double> edges;  // bins+1 values, shared by both batches
  std::vector<long> counts_a;
  std::vector<long> counts_b;
  double l1_normalized = 0.0;  // sum |share_a - share_b| over bins
};

// Bins both batches on shared edges. Multi-dimensional features are reduced
// to their first principal component (computed on the pooled batches).
HistogramPair histogram_pair(const std::vector<Vec>& a, const std::vector<Vec>& b,
                             int bins);

void write_projection(const Matrix& coords, const std::vector<std::string>& labels,
                      const std::filesystem::path& path);
void write_histogram(const HistogramPair& hist, const std::filesystem::path& path);

}  // namespace protoner
