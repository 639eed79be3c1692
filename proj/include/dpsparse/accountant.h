// Copyright 2026 The dpsparse Authors.
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

#ifndef DPSPARSE_ACCOUNTANT_H_
#define DPSPARSE_ACCOUNTANT_H_

// Renyi-DP accounting for compositions of Poisson-subsampled Gaussian
// mechanisms (SGMs) under the add/remove-one neighbouring relation.
//
// RDP of one SGM at order alpha, sampling rate q and noise multiplier sigma:
//   q == 1:           alpha / (2 sigma^2)
//   integer alpha:    log(sum_k C(alpha,k) (1-q)^(alpha-k) q^k
//                         exp((k^2 - k) / (2 sigma^2))) / (alpha - 1)
//   fractional alpha: the two-sided erfc series of Mironov, Talwar & Zhang.
//
// Conversion to (epsilon, delta):
//   eps = min_alpha [ rdp(alpha) + log((alpha-1)/alpha)
//                     - (log(delta) + log(alpha)) / (alpha - 1) ]
// clamped below at 0. These bounds are conservative relative to PRV or
// numerical privacy-loss-distribution accountants.

#include <cstdint>
#include <functional>
#include <vector>

#include "absl/status/statusor.h"
#include "json.hpp"

namespace dpsparse {

struct SgmEvent {
  double sample_rate = 1.0;       // q in (0, 1]
  double noise_multiplier = 1.0;  // sigma; noise stddev is sigma * C
  uint64_t count = 1;

  bool operator==(const SgmEvent&) const = default;
};

// Append-only record of SGM releases. Consecutive releases with identical
// (q, sigma) are stored as a single event with a count.
class PrivacyLedger {
 public:
  PrivacyLedger() = default;

  // Throws std::invalid_argument if q is outside (0, 1], sigma < 0 or
  // count == 0. sigma == 0 is accepted and yields epsilon = +inf.
  void Record(double sample_rate, double noise_multiplier, uint64_t count = 1);
  void Append(const PrivacyLedger& other);

  const std::vector<SgmEvent>& events() const { return events_; }
  uint64_t total_steps() const { return total_steps_; }
  bool empty() const { return events_.empty(); }

  bool operator==(const PrivacyLedger& other) const {
    return events_ == other.events_;
  }

 private:
  std::vector<SgmEvent> events_;
  uint64_t total_steps_ = 0;
};

// Integers 2..256 plus {1.25, 1.5, 1.75}.
std::vector<double> DefaultAlphaGrid();

struct AccountantOptions {
  std::vector<double> alphas = DefaultAlphaGrid();
};

// RDP epsilon of one SGM at order alpha > 1.
absl::StatusOr<double> RdpOfSgm(double sample_rate, double noise_multiplier,
                                double alpha);

// Single-order RDP -> (eps, delta) conversion, not clamped.
double RdpToEpsilon(double rdp, double alpha, double delta);

struct EpsilonReport {
  double epsilon = 0.0;
  double best_alpha = 0.0;
};

absl::StatusOr<EpsilonReport> ComputeEpsilon(
    const PrivacyLedger& ledger, double delta,
    const AccountantOptions& options = {});

// Convenience wrapper returning only epsilon.
absl::StatusOr<double> Epsilon(const PrivacyLedger& ledger, double delta,
                               const AccountantOptions& options = {});

struct CalibrationOptions {
  double sigma_min = 0.05;
  double sigma_max = 500.0;
  double tolerance = 1e-3;
  AccountantOptions accountant;
};

// Smallest noise multiplier (to relative tolerance) for which the ledger
// built by `ledger_for_sigma` meets `target_epsilon` at `delta`. Bisection on
// a geometric scale; the returned sigma satisfies eps(sigma) <= target and
// eps(sigma * (1 - tol)) > target unless it sits on sigma_min.
absl::StatusOr<double> CalibrateNoise(
    const std::function<PrivacyLedger(double)>& ledger_for_sigma,
    double target_epsilon, double delta, const CalibrationOptions& options = {});

// `total_steps` SGM releases at rate q.
absl::StatusOr<double> CalibrateSigma(double sample_rate, uint64_t total_steps,
                                      double target_epsilon, double delta,
                                      const CalibrationOptions& options = {});

// {"delta", "epsilon", "best_alpha", "total_steps", "events": [...]}.
nlohmann::json LedgerToJson(const PrivacyLedger& ledger, double delta,
                            const AccountantOptions& options = {});
absl::StatusOr<PrivacyLedger> LedgerFromJson(const nlohmann::json& j);

}  // namespace dpsparse

#endif  // DPSPARSE_ACCOUNTANT_H_
