#pragma once

#include <Eigen/Dense>

#include <complex>
#include <cstdint>
#include <functional>
#include <string>
#include <thread>
#include <vector>

namespace koop {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using ComplexVector = Eigen::VectorXcd;
using ComplexMatrix = Eigen::MatrixXcd;
using Complex = std::complex<double>;

/// Axis-aligned box, used for system domains and action-grid cells.
struct Box {
    Vector lo;
    Vector hi;

    int dim() const { return static_cast<int>(lo.size()); }

    bool contains(const Vector& p) const {
        if (p.size() != lo.size()) return false;
        for (Eigen::Index i = 0; i < p.size(); ++i)
            if (p[i] < lo[i] || p[i] > hi[i]) return false;
        return true;
    }

    Vector widths() const { return hi - lo; }

    double diagonal() const { return (hi - lo).norm(); }

    static Box make(std::initializer_list<double> lows, std::initializer_list<double> highs) {
        Box b;
        b.lo = Eigen::Map<const Vector>(std::vector<double>(lows).data(),
                                        static_cast<Eigen::Index>(lows.size()));
        b.hi = Eigen::Map<const Vector>(std::vector<double>(highs).data(),
                                        static_cast<Eigen::Index>(highs.size()));
        return b;
    }
};

inline bool all_finite(const Matrix& m) { return m.allFinite(); }
inline bool all_finite(const Vector& v) { return v.allFinite(); }

/// Runs fn(begin, end) over [0, n) in contiguous blocks. Thread count comes
/// from the KOOP_THREADS environment variable (default 1, i.e. serial).
/// Blocks are disjoint, so results are identical for any thread count.
void parallel_for_rows(Eigen::Index n, const std::function<void(Eigen::Index, Eigen::Index)>& fn);

int thread_cap();

}  // namespace koop
