#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <stdexcept>
#include <utility>
#include <vector>

#include "mda/tensor.hpp"

namespace mda {

/// Index of the row maximum; ties resolve to the lowest index.
inline std::size_t argmax_row(std::span<const double> row) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < row.size(); ++j) {
        if (row[j] > row[best]) best = j;
    }
    return best;
}

inline std::vector<int> argmax_rows(const Tensor& probs) {
    std::vector<int> out(probs.rows());
    for (std::size_t i = 0; i < probs.rows(); ++i) out[i] = static_cast<int>(argmax_row(probs.row(i)));
    return out;
}

/// Fraction of rows whose argmax equals the label. Rows with a negative label are skipped.
inline double accuracy(const Tensor& probs, std::span<const int> labels) {
    if (labels.size() != probs.rows()) throw std::invalid_argument("accuracy: label count mismatch");
    std::size_t hit = 0, n = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0) continue;
        ++n;
        hit += static_cast<int>(argmax_row(probs.row(i))) == labels[i];
    }
    if (n == 0) throw std::invalid_argument("accuracy: no labelled rows");
    return static_cast<double>(hit) / static_cast<double>(n);
}

struct DiscoveryMetrics {
    double nmi = 0.0;
    double purity = 0.0;
};

/// NMI = I(P;T) / sqrt(H(P) H(T)) and purity = (1/n) sum over predicted clusters of the majority count.
inline DiscoveryMetrics domain_discovery_metrics(std::span<const int> predicted, std::span<const int> truth) {
    if (predicted.size() != truth.size() || predicted.empty()) {
        throw std::invalid_argument("domain_discovery_metrics: need equal, nonempty partitions");
    }
    const double n = static_cast<double>(predicted.size());
    std::map<std::pair<int, int>, double> joint;
    std::map<int, double> pc, tc;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        joint[{predicted[i], truth[i]}] += 1.0;
        pc[predicted[i]] += 1.0;
        tc[truth[i]] += 1.0;
    }

    DiscoveryMetrics m;
    std::map<int, double> majority;
    for (const auto& [key, count] : joint) majority[key.first] = std::max(majority[key.first], count);
    for (const auto& [cluster, count] : majority) m.purity += count;
    m.purity /= n;

    auto entropy = [n](const std::map<int, double>& counts) {
        double h = 0.0;
        for (const auto& [_, c] : counts) h -= (c / n) * std::log(c / n);
        return h;
    };
    const double hp = entropy(pc), ht = entropy(tc);
    if (hp == 0.0 || ht == 0.0) {
        // Single-cluster partitions: identical only when both are single clusters.
        m.nmi = (hp == 0.0 && ht == 0.0) ? 1.0 : 0.0;
        return m;
    }
    double mi = 0.0;
    for (const auto& [key, c] : joint) {
        const double pij = c / n;
        mi += pij * std::log(pij / ((pc[key.first] / n) * (tc[key.second] / n)));
    }
    m.nmi = std::clamp(mi / std::sqrt(hp * ht), 0.0, 1.0);
    return m;
}

inline double median(std::vector<double> v) {
    if (v.empty()) throw std::invalid_argument("median of empty set");
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

inline double mean(const std::vector<double>& v) {
    if (v.empty()) throw std::invalid_argument("mean of empty set");
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

}  // namespace mda
