#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "koop/common.hpp"
#include "koop/dictionary.hpp"
#include "koop/sde.hpp"

namespace koop {

/// Knobs for the operator estimation. Thresholds are pinned here so results
/// are reproducible; all scale-dependent ones are relative to the Gram size.
struct KoopmanOptions {
    bool allow_pinv = true;          // fall back to a cutoff pseudo-inverse
    double cond_limit = 1e12;        // condition number treated as singular
    double pinv_cutoff = 1e-12;      // eigenvalue cutoff relative to the largest
    double support_rel_threshold = 1e-8;  // vs trace(g)/N, flags data support
    double degenerate_mu = 1e-12;    // |mu| below this has no log
};

/// Finite-dimensional semigroup estimate K = I + dt * inv(G + ridge I) * H
/// together with its eigendecomposition. Modes are sorted by |mu| descending.
struct KoopmanEstimate {
    Matrix g;             // (1/m) Psi_X^T Psi_X
    Matrix h;             // (1/m) Psi_X^T Psi'_X
    Matrix k;             // operator matrix
    double dt = 0.0;
    double ridge = 0.0;   // Tikhonov term actually applied
    bool used_pinv = false;

    ComplexVector mu;      // discrete eigenvalues
    ComplexVector lambda;  // log(mu)/dt, principal branch; NaN when degenerate
    ComplexMatrix xi;      // right eigenvectors, one column per mode

    std::vector<char> degenerate;        // |mu| < degenerate_mu, lambda excluded
    std::vector<char> branch_ambiguous;  // mu on the negative real axis
    std::vector<char> supported;         // data-support norm above threshold
    std::vector<double> support_norm;    // Re(xi* G xi) / (xi* xi) per mode

    int size() const { return static_cast<int>(mu.size()); }

    /// Indices (into mu/lambda/xi) of the leading n_r supported,
    /// non-degenerate modes; n_r <= 0 selects min(5, N).
    std::vector<int> retained(int n_r = -1) const;
};

struct SpectralConsistencyReport {
    double total = 0.0;                // sum over retained modes
    std::vector<double> per_mode;      // one entry per retained mode
    std::vector<int> mode_indices;     // positions in the estimate's ordering
    int modes_used = 0;
};

/// G = (1/m) psi_x^T psi_x  and  H = (1/m) psi_x^T psi_prime_x.
void build_gram(const Matrix& psi_x, const Matrix& psi_prime_x, Matrix& g, Matrix& h);

double default_ridge(const Matrix& g);

/// ridge < 0 selects default_ridge(g). Throws SingularGram when the shifted
/// Gram is numerically singular and the pseudo-inverse fallback is disabled.
KoopmanEstimate estimate_koopman(const Matrix& g, const Matrix& h, double dt,
                                 double ridge = -1.0, const KoopmanOptions& opts = {});

/// How generator evaluations Psi' are produced from data.
enum class GeneratorMode { Analytic, FiniteDiff };
std::string generator_mode_name(GeneratorMode mode);
GeneratorMode generator_mode_from_name(const std::string& name);

/// Convenience pipeline: evaluate the dictionary on the snapshots, form the
/// generator images per `mode` (Analytic needs the system), and estimate.
KoopmanEstimate estimate_from_snapshots(const Dictionary& dict, const SdeSystem* system,
                                        const SnapshotData& data, GeneratorMode mode,
                                        double ridge = -1.0, const KoopmanOptions& opts = {});

/// phi = psi_at_points * Xi with each column scaled so its largest-modulus
/// entry becomes exactly 1 (real positive). Idempotent.
ComplexMatrix eigenfunction_values(const KoopmanEstimate& est, const Matrix& psi_at_points);

/// Mean squared residual |phi_i(y) - mu_i phi_i(x)|^2 per retained mode, with
/// eigenfunctions normalized on the x points. Optional row weights are
/// normalized to a probability vector; default is uniform 1/m.
SpectralConsistencyReport spectral_consistency(const KoopmanEstimate& est, const Matrix& psi_x,
                                               const Matrix& psi_y, int n_modes = -1,
                                               const Vector* weights = nullptr);

struct DictionaryTrainReport {
    double initial_loss = 0.0;
    double final_loss = 0.0;
    std::vector<double> loss_per_epoch;
    double k_frobenius = 0.0;  // of the last training-stage operator
};

/// Alternating optimization of a trainable dictionary: (a) hold the network
/// fixed and solve the ridge problem for K, (b) hold K fixed and descend
///   J = |Psi_Y - Psi_X K|_F^2 + gamma |K|_F^2
/// by minibatch Adam on the network. The constant channel never changes.
/// Returns the post-training operator estimate (finite-difference mode).
KoopmanEstimate train_dictionary(const SnapshotData& data, Dictionary& dict, double gamma_reg,
                                 int epochs, int batch, double lr = 1e-3,
                                 std::uint64_t seed = 0, DictionaryTrainReport* report = nullptr);

/// JSON document with matrices row-major and complex entries as [re, im].
std::string koopman_to_json(const KoopmanEstimate& est);

/// CSV rows "step,index,re_mu,im_mu,re_lambda,im_lambda" for the retained
/// modes; `header` prepends the column line.
std::string eigenvalue_csv_rows(const KoopmanEstimate& est, long step, int n_modes = -1,
                                bool header = false);

}  // namespace koop
