#include "xfl/learner.hpp"

#include <cmath>

namespace xfl {

double SparseLinear::margin(std::span<const double> x) const
{
    double z = bias;
    for (std::size_t i = 0; i < index.size(); ++i)
        z += weight[i] * x[index[i]];
    return z;
}

namespace {

// d/dz of log(1 + exp(-y z)) is -y / (1 + exp(y z)).
double loss_slope(signed char y, double z)
{
    return y > 0 ? -1.0 / (1.0 + std::exp(z)) : 1.0 / (1.0 + std::exp(-z));
}

double soft_threshold(double u, double t)
{
    if (u > t)
        return u - t;
    if (u < -t)
        return u + t;
    return 0.0;
}

} // namespace

SparseLinear fit_l1_logistic(const std::vector<std::vector<double>>& columns, std::span<const signed char> labels,
                             std::span<const double> costs, const LinearFitOptions& options)
{
    const std::size_t n = labels.size();
    const std::size_t d = columns.size();
    if (costs.size() != n)
        throw Error("fit_l1_logistic: costs and labels differ in length");
    for (const auto& col : columns)
        if (col.size() != n)
            throw Error("fit_l1_logistic: column length does not match labels");

    // Coordinate-wise majorization: the logistic curvature is at most 1/4.
    std::vector<double> curvature(d, 0.0);
    double bias_curvature = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        bias_curvature += 0.25 * costs[i];
    for (std::size_t j = 0; j < d; ++j)
        for (std::size_t i = 0; i < n; ++i)
            curvature[j] += 0.25 * costs[i] * columns[j][i] * columns[j][i];

    std::vector<double> w(d, 0.0);
    double b = 0.0;
    std::vector<double> z(n, 0.0);
    std::vector<double> slope(n);
    auto refresh = [&] {
        for (std::size_t i = 0; i < n; ++i)
            slope[i] = costs[i] * loss_slope(labels[i], z[i]);
    };

    for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
        double max_change = 0.0;
        if (bias_curvature > 0.0) {
            refresh();
            double g = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                g += slope[i];
            double step = -g / bias_curvature;
            b += step;
            for (auto& zi : z)
                zi += step;
            max_change = std::abs(step);
        }
        refresh();
        for (std::size_t j = 0; j < d; ++j) {
            if (curvature[j] <= 0.0)
                continue;
            const auto& col = columns[j];
            double g = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                g += slope[i] * col[i];
            double next = soft_threshold(w[j] - g / curvature[j], options.l1 / curvature[j]);
            double delta = next - w[j];
            if (delta == 0.0)
                continue;
            w[j] = next;
            for (std::size_t i = 0; i < n; ++i) {
                z[i] += delta * col[i];
                slope[i] = costs[i] * loss_slope(labels[i], z[i]);
            }
            max_change = std::max(max_change, std::abs(delta));
        }
        if (max_change < options.tol)
            break;
    }

    SparseLinear out;
    out.bias = b;
    for (std::size_t j = 0; j < d; ++j) {
        if (w[j] != 0.0) {
            out.index.push_back(static_cast<std::uint32_t>(j));
            out.weight.push_back(w[j]);
        }
    }
    return out;
}

} // namespace xfl
