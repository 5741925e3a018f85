#include "protoner/plots.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "protoner/errors.hpp"

namespace protoner {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return std::string(buf);
}

Vec mean_vec(const std::vector<Vec>& xs) {
  Vec m(xs.front().size(), 0.0);
  for (const Vec& x : xs) {
    for (std::size_t i = 0; i < m.size(); ++i) m[i] += x[i];
  }
  for (double& v : m) v /= static_cast<double>(xs.size());
  return m;
}

// Cyclic Jacobi eigendecomposition of a symmetric matrix; returns
// eigenvectors as columns of V with eigenvalues in `evals`.
void jacobi_eigen(Matrix& a, Matrix& v, std::vector<double>& evals) {
  const int n = a.rows;
  v = Matrix(n, n);
  for (int i = 0; i < n; ++i) v.at(i, i) = 1.0;

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) off += a.at(p, q) * a.at(p, q);
    }
    if (off < 1e-24) break;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        double apq = a.at(p, q);
        if (std::abs(apq) < 1e-300) continue;
        double app = a.at(p, p);
        double aqq = a.at(q, q);
        double theta = (aqq - app) / (2.0 * apq);
        double t = (theta >= 0.0 ? 1.0 : -1.0) /
                   (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        for (int k = 0; k < n; ++k) {
          double akp = a.at(k, p);
          double akq = a.at(k, q);
          a.at(k, p) = c * akp - s * akq;
          a.at(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          double apk = a.at(p, k);
          double aqk = a.at(q, k);
          a.at(p, k) = c * apk - s * aqk;
          a.at(q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          double vkp = v.at(k, p);
          double vkq = v.at(k, q);
          v.at(k, p) = c * vkp - s * vkq;
          v.at(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  evals.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) evals[static_cast<std::size_t>(i)] = a.at(i, i);
}

// Top-k principal axes of the feature set, deterministic sign convention.
std::vector<Vec> principal_axes(const std::vector<Vec>& features, int k) {
  const int dim = static_cast<int>(features.front().size());
  Vec mean = mean_vec(features);
  Matrix cov(dim, dim);
  for (const Vec& x : features) {
    for (int i = 0; i < dim; ++i) {
      double di = x[static_cast<std::size_t>(i)] - mean[static_cast<std::size_t>(i)];
      for (int j = i; j < dim; ++j) {
        double dj = x[static_cast<std::size_t>(j)] - mean[static_cast<std::size_t>(j)];
        cov.at(i, j) += di * dj;
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(features.size());
  for (int i = 0; i < dim; ++i) {
    for (int j = i; j < dim; ++j) {
      cov.at(i, j) *= inv;
      cov.at(j, i) = cov.at(i, j);
    }
  }

  Matrix vecs;
  std::vector<double> evals;
  jacobi_eigen(cov, vecs, evals);

  std::vector<int> order(static_cast<std::size_t>(dim));
  for (int i = 0; i < dim; ++i) order[static_cast<std::size_t>(i)] = i;
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (evals[static_cast<std::size_t>(a)] != evals[static_cast<std::size_t>(b)]) {
      return evals[static_cast<std::size_t>(a)] > evals[static_cast<std::size_t>(b)];
    }
    return a < b;
  });

  std::vector<Vec> axes;
  for (int r = 0; r < k && r < dim; ++r) {
    int col = order[static_cast<std::size_t>(r)];
    Vec axis(static_cast<std::size_t>(dim));
    int arg = 0;
    for (int i = 0; i < dim; ++i) {
      axis[static_cast<std::size_t>(i)] = vecs.at(i, col);
      if (std::abs(axis[static_cast<std::size_t>(i)]) >
          std::abs(axis[static_cast<std::size_t>(arg)])) {
        arg = i;
      }
    }
    if (axis[static_cast<std::size_t>(arg)] < 0.0) {
      for (double& v : axis) v = -v;
    }
    axes.push_back(std::move(axis));
  }
  return axes;
}

std::vector<double> scalarize(const std::vector<Vec>& pooled,
                              const std::vector<Vec>& batch) {
  const std::size_t dim = pooled.front().size();
  if (dim == 1) {
    std::vector<double> out;
    for (const Vec& v : batch) out.push_back(v[0]);
    return out;
  }
  Vec mean = mean_vec(pooled);
  Vec axis = principal_axes(pooled, 1).front();
  std::vector<double> out;
  out.reserve(batch.size());
  for (const Vec& v : batch) {
    double s = 0.0;
    for (std::size_t i = 0; i < dim; ++i) s += (v[i] - mean[i]) * axis[i];
    out.push_back(s);
  }
  return out;
}

}  // namespace

void write_feature_dump(const FeatureDump& dump, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  std::size_t dim = dump.features.empty() ? 0 : dump.features.front().size();
  out << "role\tlabel";
  for (std::size_t i = 0; i < dim; ++i) out << "\tf" << i;
  out << '\n';
  for (std::size_t r = 0; r < dump.features.size(); ++r) {
    out << dump.roles[r] << '\t' << dump.labels[r];
    for (double v : dump.features[r]) out << '\t' << fmt(v);
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

FeatureDump read_feature_dump(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open feature dump: " + path.string());
  FeatureDump dump;
  std::string line;
  if (!std::getline(in, line)) throw ParseError("feature dump is empty");
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string role, label, field;
    if (!std::getline(ss, role, '\t') || !std::getline(ss, label, '\t')) {
      throw ParseError("feature dump line " + std::to_string(line_no) + ": malformed");
    }
    Vec v;
    while (std::getline(ss, field, '\t')) v.push_back(std::stod(field));
    if (v.empty()) {
      throw ParseError("feature dump line " + std::to_string(line_no) + ": no features");
    }
    dump.roles.push_back(std::move(role));
    dump.labels.push_back(std::move(label));
    dump.features.push_back(std::move(v));
  }
  return dump;
}

Matrix project_2d(const std::vector<Vec>& features) {
  if (features.size() < 2) throw ConfigError("projection needs at least 2 features");
  const int dim = static_cast<int>(features.front().size());
  if (dim < 2) throw ConfigError("projection needs dimension >= 2");

  Matrix out(static_cast<int>(features.size()), 2);
  if (dim == 2) {
    for (std::size_t r = 0; r < features.size(); ++r) {
      out.at(static_cast<int>(r), 0) = features[r][0];
      out.at(static_cast<int>(r), 1) = features[r][1];
    }
    return out;
  }

  Vec mean = mean_vec(features);
  std::vector<Vec> axes = principal_axes(features, 2);
  for (std::size_t r = 0; r < features.size(); ++r) {
    for (int c = 0; c < 2; ++c) {
      double s = 0.0;
      for (int i = 0; i < dim; ++i) {
        s += (features[r][static_cast<std::size_t>(i)] - mean[static_cast<std::size_t>(i)]) *
             axes[static_cast<std::size_t>(c)][static_cast<std::size_t>(i)];
      }
      out.at(static_cast<int>(r), c) = s;
    }
  }
  return out;
}

HistogramPair histogram_pair(const std::vector<Vec>& a, const std::vector<Vec>& b,
                             int bins) {
  if (bins < 1) throw ConfigError("histogram needs at least one bin");
  if (a.empty() || b.empty()) throw ConfigError("histogram needs non-empty batches");

  std::vector<Vec> pooled = a;
  pooled.insert(pooled.end(), b.begin(), b.end());
  std::vector<double> sa = scalarize(pooled, a);
  std::vector<double> sb = scalarize(pooled, b);

  double lo = sa.front(), hi = sa.front();
  for (double v : sa) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  for (double v : sb) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi <= lo) hi = lo + 1.0;

  HistogramPair out;
  out.edges.resize(static_cast<std::size_t>(bins) + 1);
  for (int i = 0; i <= bins; ++i) {
    out.edges[static_cast<std::size_t>(i)] =
        lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins);
  }
  out.counts_a.assign(static_cast<std::size_t>(bins), 0);
  out.counts_b.assign(static_cast<std::size_t>(bins), 0);
  auto bin_of = [&](double v) {
    int idx = static_cast<int>(static_cast<double>(bins) * (v - lo) / (hi - lo));
    return std::clamp(idx, 0, bins - 1);
  };
  for (double v : sa) ++out.counts_a[static_cast<std::size_t>(bin_of(v))];
  for (double v : sb) ++out.counts_b[static_cast<std::size_t>(bin_of(v))];

  double l1 = 0.0;
  for (int i = 0; i < bins; ++i) {
    double pa = static_cast<double>(out.counts_a[static_cast<std::size_t>(i)]) /
                static_cast<double>(sa.size());
    double pb = static_cast<double>(out.counts_b[static_cast<std::size_t>(i)]) /
                static_cast<double>(sb.size());
    l1 += std::abs(pa - pb);
  }
  out.l1_normalized = l1;
  return out;
}

void write_projection(const Matrix& coords, const std::vector<std::string>& labels,
                      const std::filesystem::path& path) {
  if (static_cast<std::size_t>(coords.rows) != labels.size()) {
    throw ConfigError("projection rows and labels differ");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << "x\ty\tlabel\n";
  for (int r = 0; r < coords.rows; ++r) {
    out << fmt(coords.at(r, 0)) << '\t' << fmt(coords.at(r, 1)) << '\t'
        << labels[static_cast<std::size_t>(r)] << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

void write_histogram(const HistogramPair& hist, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << "bin_lo\tbin_hi\tcount_source\tcount_target\n";
  for (std::size_t i = 0; i + 1 < hist.edges.size(); ++i) {
    out << fmt(hist.edges[i]) << '\t' << fmt(hist.edges[i + 1]) << '\t'
        << hist.counts_a[i] << '\t' << hist.counts_b[i] << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace protoner
