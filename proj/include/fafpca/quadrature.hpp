#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace fafpca {

/// Gauss-Legendre nodes and weights on [-1, 1], computed by Newton iteration
/// on the Legendre recurrence.
inline void gauss_legendre(int n, std::vector<double>& nodes, std::vector<double>& weights) {
    if (n < 1) throw std::invalid_argument("gauss_legendre: need n >= 1 points");
    nodes.assign(n, 0.0);
    weights.assign(n, 0.0);
    const int m = (n + 1) / 2;
    for (int i = 0; i < m; ++i) {
        // Chebyshev initial guess for the i-th root.
        double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = 0.0;
            for (int j = 0; j < n; ++j) {
                const double p2 = p1;
                p1 = p0;
                p0 = ((2.0 * j + 1.0) * x * p1 - j * p2) / (j + 1.0);
            }
            dp = n * (x * p0 - p1) / (x * x - 1.0);
            const double dx = p0 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-15) break;
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[n - 1 - i] = weights[i];
    }
}

/// Composite quadrature on [0, 1]: n_cells uniform cells, each cell split at
/// the supplied breakpoints (spline knots), with a fixed-order Gauss rule per
/// piece. Splitting keeps the integrand polynomial inside every piece, so
/// piecewise-polynomial integrands of degree <= 2*pts_per_piece - 1 are
/// integrated exactly.
class QuadratureRule {
  public:
    QuadratureRule() = default;

    static QuadratureRule composite(int n_cells, int pts_per_piece,
                                    const std::vector<double>& breakpoints = {}) {
        if (n_cells < 1) throw std::invalid_argument("QuadratureRule: n_cells must be >= 1");
        if (pts_per_piece < 1) throw std::invalid_argument("QuadratureRule: need >= 1 point per piece");

        std::vector<double> edges;
        edges.reserve(static_cast<std::size_t>(n_cells) + breakpoints.size() + 1);
        for (int c = 0; c <= n_cells; ++c) edges.push_back(static_cast<double>(c) / n_cells);
        for (double b : breakpoints)
            if (b > 0.0 && b < 1.0) edges.push_back(b);
        std::sort(edges.begin(), edges.end());
        edges.erase(std::unique(edges.begin(), edges.end(),
                                [](double a, double b) { return std::abs(a - b) < 1e-14; }),
                    edges.end());

        std::vector<double> gx, gw;
        gauss_legendre(pts_per_piece, gx, gw);

        QuadratureRule rule;
        rule.nodes_.reserve((edges.size() - 1) * gx.size());
        rule.weights_.reserve((edges.size() - 1) * gx.size());
        for (std::size_t e = 0; e + 1 < edges.size(); ++e) {
            const double a = edges[e], b = edges[e + 1];
            const double half = 0.5 * (b - a), mid = 0.5 * (a + b);
            for (std::size_t g = 0; g < gx.size(); ++g) {
                rule.nodes_.push_back(mid + half * gx[g]);
                rule.weights_.push_back(half * gw[g]);
            }
        }
        return rule;
    }

    const std::vector<double>& nodes() const { return nodes_; }
    const std::vector<double>& weights() const { return weights_; }
    std::size_t size() const { return nodes_.size(); }

    template <typename F>
    double integrate(F&& f) const {
        double acc = 0.0;
        for (std::size_t i = 0; i < nodes_.size(); ++i) acc += weights_[i] * f(nodes_[i]);
        return acc;
    }

  private:
    std::vector<double> nodes_;
    std::vector<double> weights_;
};

}  // namespace fafpca
